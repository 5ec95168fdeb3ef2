//! Canonical source rendering.
//!
//! `parse(pretty_print(p))` yields a tree equal to `p`'s. Parentheses are
//! inserted only where precedence or associativity requires them, and
//! numbers use the shortest representation that round-trips exactly.

use std::fmt::Write;

use super::{BinOp, CmpOp, Expr, HeuristicProgram};

/// Canonical text of a program: `def heuristic(...)` header, one line per
/// assignment with two-space indent, then the return line. A program with
/// no assignments normalizes to the single-line form.
pub fn pretty_print(program: &HeuristicProgram) -> String {
    let params = program.params().join(", ");
    let ret = print_expr(program.return_expr());
    if program.bindings().is_empty() {
        return format!("def heuristic({params}): return {ret}");
    }
    let mut out = format!("def heuristic({params}):\n");
    for (name, expr) in program.bindings() {
        let _ = writeln!(out, "  {name} = {}", print_expr(expr));
    }
    let _ = write!(out, "  return {ret}");
    out
}

/// Render one expression.
pub fn print_expr(expr: &Expr) -> String {
    render(expr, 0)
}

// Precedence levels, matching the parser:
// 0 ternary, 1 comparison, 2 additive, 3 multiplicative, 4 unary minus,
// 5 power, 6 postfix/atoms.
fn precedence(expr: &Expr) -> u8 {
    match expr {
        Expr::If { .. } => 0,
        Expr::Compare { .. } => 1,
        Expr::Binary { op: BinOp::Add | BinOp::Sub, .. } => 2,
        Expr::Binary { op: BinOp::Mul | BinOp::Div, .. } => 3,
        Expr::Neg(_) => 4,
        Expr::Binary { op: BinOp::Pow, .. } => 5,
        Expr::Num(x) if x.is_sign_negative() => 4, // prints with a leading minus
        _ => 6,
    }
}

fn render(expr: &Expr, min_prec: u8) -> String {
    let text = match expr {
        Expr::Num(x) => format_number(*x),
        Expr::Var(name) => name.clone(),
        Expr::VecLit(items) => {
            let inner: Vec<String> = items.iter().map(|e| render(e, 0)).collect();
            format!("[{}]", inner.join(", "))
        }
        Expr::Index { base, index } => {
            format!("{}[{}]", render(base, 6), render(index, 0))
        }
        Expr::Binary { op, lhs, rhs } => {
            let symbol = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                BinOp::Pow => "**",
            };
            match op {
                // Left associative: the right operand needs strictly
                // higher precedence to preserve grouping.
                BinOp::Add | BinOp::Sub => {
                    format!("{} {symbol} {}", render(lhs, 2), render(rhs, 3))
                }
                BinOp::Mul | BinOp::Div => {
                    format!("{} {symbol} {}", render(lhs, 3), render(rhs, 4))
                }
                // Right associative, and `-x ** y` parses as `-(x ** y)`,
                // so a negation (or negative literal) base needs parens.
                BinOp::Pow => format!("{} {symbol} {}", render(lhs, 6), render(rhs, 4)),
            }
        }
        Expr::Neg(inner) => format!("-{}", render(inner, if is_negative_literal(inner) { 7 } else { 4 })),
        Expr::Compare { op, lhs, rhs } => {
            let symbol = match op {
                CmpOp::Lt => "<",
                CmpOp::Le => "<=",
                CmpOp::Gt => ">",
                CmpOp::Ge => ">=",
                CmpOp::Eq => "==",
                CmpOp::Ne => "!=",
            };
            format!("{} {symbol} {}", render(lhs, 2), render(rhs, 2))
        }
        Expr::If { cond, then_val, else_val } => {
            format!(
                "{} if {} else {}",
                render(then_val, 1),
                render(cond, 1),
                render(else_val, 0)
            )
        }
        Expr::Call { builtin, args } => {
            let inner: Vec<String> = args.iter().map(|e| render(e, 0)).collect();
            format!("{}({})", builtin.name(), inner.join(", "))
        }
    };
    if precedence(expr) < min_prec {
        format!("({text})")
    } else {
        text
    }
}

/// A literal that prints with a leading minus; `Neg` around one must
/// parenthesize so the folded form does not reappear on re-parse.
fn is_negative_literal(expr: &Expr) -> bool {
    matches!(expr, Expr::Num(x) if *x < 0.0 || x.is_sign_negative())
}

fn format_number(x: f64) -> String {
    // `{}` for f64 is the shortest string that parses back to the same
    // bits, so canonical text round-trips literal values exactly.
    if x == f64::INFINITY {
        // Unreachable for parsed programs; defensive for hand-built trees.
        "1e400".to_string()
    } else {
        format!("{x}")
    }
}
