//! Recursive-descent parser for the heuristic language.
//!
//! Accepts both the single-line form `def heuristic(v): return v` and a
//! block body of assignments followed by one `return`. Precedence follows
//! Python: ternary < comparison < add/sub < mul/div < unary minus < power
//! (right associative) < postfix call/index.

use super::lexer::{tokenize, Spanned, Tok};
use super::{BinOp, Builtin, CmpOp, Expr, HeuristicProgram, HeuristicSignature, ParseError, SignatureKind};

/// Qualified-name alias table: `prefix.name` is rewritten to a builtin
/// before whitelist checking, so common LLM output like `np.min(bids)`
/// parses. Anything not in this table is a forbidden construct.
const ALIAS_PREFIXES: &[&str] = &["np", "numpy", "math", "torch"];

fn alias_builtin(name: &str) -> Option<Builtin> {
    match name {
        "sort" => Some(Builtin::Sorted),
        "size" => Some(Builtin::Len),
        "power" => None, // needs two args; `**` covers it
        other => Builtin::from_name(other),
    }
}

/// Parse `source` against `signature`.
///
/// On success the program's declared parameter list matches the
/// signature, every variable reference is bound, every call is a
/// whitelisted builtin with a legal argument count, and the return shape
/// does not statically contradict the signature.
pub fn parse(source: &str, signature: HeuristicSignature) -> Result<HeuristicProgram, ParseError> {
    let toks = tokenize(source)?;
    let mut parser = Parser { toks, pos: 0 };
    let (params, bindings, ret) = parser.program()?;

    if params.len() != signature.arity {
        return Err(ParseError::SignatureMismatch(format!(
            "expected {} parameter(s), found {}",
            signature.arity,
            params.len()
        )));
    }

    check_scope(&params, &bindings, &ret)?;
    check_return_shape(signature, &params, &bindings, &ret)?;

    let mut bindings = bindings;
    let mut ret = ret;
    for (_, expr) in bindings.iter_mut() {
        super::normalize_expr(expr);
    }
    super::normalize_expr(&mut ret);

    Ok(HeuristicProgram::new(source.to_string(), params, bindings, ret, signature))
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type Body = (Vec<String>, Vec<(String, Expr)>, Expr);

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn advance(&mut self) -> Spanned {
        let t = self.toks[self.pos.min(self.toks.len() - 1)].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Spanned, ParseError> {
        let t = self.advance();
        if t.tok == tok {
            Ok(t)
        } else {
            Err(self.err_at(&t, format!("expected {what}")))
        }
    }

    fn err_at(&self, t: &Spanned, message: String) -> ParseError {
        ParseError::Syntax { line: t.line, col: t.col, message }
    }

    fn skip_newlines(&mut self) {
        while self.peek().tok == Tok::Newline {
            self.advance();
        }
    }

    fn program(&mut self) -> Result<Body, ParseError> {
        self.skip_newlines();
        self.expect(Tok::KwDef, "`def`")?;
        let name_tok = self.advance();
        if !matches!(name_tok.tok, Tok::Ident(_)) {
            return Err(self.err_at(&name_tok, "expected function name".into()));
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let t = self.advance();
                match t.tok {
                    Tok::Ident(name) => params.push(name),
                    _ => return Err(self.err_at(&t, "expected parameter name".into())),
                }
                if self.peek().tok == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::Colon, "`:` after parameter list")?;

        let mut bindings = Vec::new();
        let ret;
        if self.peek().tok == Tok::Newline {
            // Block body: assignment lines, then the return line.
            loop {
                self.skip_newlines();
                let t = self.peek().clone();
                match t.tok {
                    Tok::KwReturn => {
                        self.advance();
                        ret = self.expr()?;
                        break;
                    }
                    Tok::Ident(name) => {
                        self.advance();
                        self.expect(Tok::Assign, "`=` in assignment")?;
                        let value = self.expr()?;
                        bindings.push((name, value));
                        self.expect(Tok::Newline, "end of line after assignment")?;
                    }
                    Tok::KwDef => {
                        return Err(ParseError::Forbidden {
                            line: t.line,
                            col: t.col,
                            construct: "nested function definition".into(),
                        })
                    }
                    Tok::Eof => {
                        return Err(self.err_at(&t, "missing `return` statement".into()))
                    }
                    _ => return Err(self.err_at(&t, "expected assignment or `return`".into())),
                }
            }
        } else {
            // Inline body: `def heuristic(v): return expr`.
            self.expect(Tok::KwReturn, "`return`")?;
            ret = self.expr()?;
        }

        self.skip_newlines();
        let t = self.peek().clone();
        if t.tok != Tok::Eof {
            return Err(self.err_at(&t, "unexpected content after `return` statement".into()));
        }
        Ok((params, bindings, ret))
    }

    /// Ternary: `a if cond else b` (lowest precedence, right associative).
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let value = self.comparison()?;
        if self.peek().tok == Tok::KwIf {
            self.advance();
            let cond = self.comparison()?;
            self.expect(Tok::KwElse, "`else` in conditional expression")?;
            let else_val = self.expr()?;
            return Ok(Expr::If {
                cond: Box::new(cond),
                then_val: Box::new(value),
                else_val: Box::new(else_val),
            });
        }
        Ok(value)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let op = match self.peek().tok {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            Tok::EqEq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            _ => return Ok(lhs),
        };
        self.advance();
        let rhs = self.additive()?;
        // Chained comparisons (a < b < c) have no boolean connectives to
        // combine under, so reject them outright.
        match self.peek().tok {
            Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::EqEq | Tok::Ne => {
                let t = self.peek().clone();
                Err(self.err_at(&t, "chained comparisons are not supported".into()))
            }
            _ => Ok(Expr::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }),
        }
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.advance();
                let inner = self.unary()?;
                Ok(Expr::Neg(Box::new(inner)))
            }
            Tok::Plus => {
                self.advance();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if self.peek().tok == Tok::DoubleStar {
            self.advance();
            // Right associative; the exponent may carry a unary sign.
            let exponent = self.unary()?;
            return Ok(Expr::Binary {
                op: BinOp::Pow,
                lhs: Box::new(base),
                rhs: Box::new(exponent),
            });
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut value = self.atom()?;
        loop {
            match self.peek().tok {
                Tok::LBracket => {
                    self.advance();
                    let index = self.expr()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    value = Expr::Index { base: Box::new(value), index: Box::new(index) };
                }
                _ => return Ok(value),
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.advance();
        match t.tok.clone() {
            Tok::Num(value) => Ok(Expr::Num(value)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::LBracket => {
                let mut items = Vec::new();
                if self.peek().tok != Tok::RBracket {
                    loop {
                        items.push(self.expr()?);
                        if self.peek().tok == Tok::Comma {
                            self.advance();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "`]`")?;
                Ok(Expr::VecLit(items))
            }
            Tok::Ident(name) => {
                // Qualified name: rewrite via the alias table or reject.
                if self.peek().tok == Tok::Dot {
                    self.advance();
                    let member = self.advance();
                    let member_name = match member.tok {
                        Tok::Ident(m) => m,
                        _ => return Err(self.err_at(&member, "expected name after `.`".into())),
                    };
                    if !ALIAS_PREFIXES.contains(&name.as_str()) {
                        return Err(ParseError::Forbidden {
                            line: t.line,
                            col: t.col,
                            construct: format!("attribute access `{name}.{member_name}`"),
                        });
                    }
                    let builtin = alias_builtin(&member_name).ok_or(ParseError::Forbidden {
                        line: t.line,
                        col: t.col,
                        construct: format!("call to `{name}.{member_name}`"),
                    })?;
                    return self.call(builtin, &t);
                }
                if self.peek().tok == Tok::LParen {
                    let builtin = Builtin::from_name(&name).ok_or(ParseError::Forbidden {
                        line: t.line,
                        col: t.col,
                        construct: format!("call to `{name}`"),
                    })?;
                    return self.call(builtin, &t);
                }
                Ok(Expr::Var(name))
            }
            other => Err(self.err_at(&t, format!("unexpected token {other:?}"))),
        }
    }

    fn call(&mut self, builtin: Builtin, at: &Spanned) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                args.push(self.expr()?);
                if self.peek().tok == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        check_call_arity(builtin, args.len(), at)?;
        Ok(Expr::Call { builtin, args })
    }
}

fn check_call_arity(builtin: Builtin, n_args: usize, at: &Spanned) -> Result<(), ParseError> {
    let ok = match builtin {
        Builtin::Min | Builtin::Max => n_args >= 1,
        _ => n_args == 1,
    };
    if ok {
        Ok(())
    } else {
        Err(ParseError::Forbidden {
            line: at.line,
            col: at.col,
            construct: format!("`{}` with {} argument(s)", builtin.name(), n_args),
        })
    }
}

/// Every variable reference must resolve to a parameter or an earlier
/// assignment.
fn check_scope(
    params: &[String],
    bindings: &[(String, Expr)],
    ret: &Expr,
) -> Result<(), ParseError> {
    let mut known: Vec<&str> = params.iter().map(String::as_str).collect();
    for (name, expr) in bindings {
        check_vars(expr, &known)?;
        known.push(name);
    }
    check_vars(ret, &known)
}

fn check_vars(expr: &Expr, known: &[&str]) -> Result<(), ParseError> {
    match expr {
        Expr::Var(name) => {
            if known.contains(&name.as_str()) {
                Ok(())
            } else {
                Err(ParseError::Syntax {
                    line: 0,
                    col: 0,
                    message: format!("unbound variable `{name}`"),
                })
            }
        }
        Expr::Num(_) => Ok(()),
        Expr::VecLit(items) => items.iter().try_for_each(|e| check_vars(e, known)),
        Expr::Index { base, index } => {
            check_vars(base, known)?;
            check_vars(index, known)
        }
        Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
            check_vars(lhs, known)?;
            check_vars(rhs, known)
        }
        Expr::Neg(inner) => check_vars(inner, known),
        Expr::If { cond, then_val, else_val } => {
            check_vars(cond, known)?;
            check_vars(then_val, known)?;
            check_vars(else_val, known)
        }
        Expr::Call { args, .. } => args.iter().try_for_each(|e| check_vars(e, known)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Scalar,
    Vector,
    Bool,
    Unknown,
}

/// Best-effort static shape of an expression; `Unknown` when it depends
/// on runtime values. Used only to reject programs whose return shape
/// definitely contradicts the signature.
fn infer_shape(expr: &Expr, env: &[(String, Shape)]) -> Shape {
    match expr {
        Expr::Num(_) => Shape::Scalar,
        Expr::Var(name) => env
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
            .unwrap_or(Shape::Unknown),
        Expr::VecLit(_) => Shape::Vector,
        Expr::Index { .. } => Shape::Scalar,
        Expr::Binary { lhs, rhs, .. } => {
            let (l, r) = (infer_shape(lhs, env), infer_shape(rhs, env));
            if l == Shape::Vector || r == Shape::Vector {
                Shape::Vector
            } else if l == Shape::Scalar && r == Shape::Scalar {
                Shape::Scalar
            } else {
                Shape::Unknown
            }
        }
        Expr::Neg(inner) => infer_shape(inner, env),
        Expr::Compare { .. } => Shape::Bool,
        Expr::If { then_val, else_val, .. } => {
            let (t, e) = (infer_shape(then_val, env), infer_shape(else_val, env));
            if t == e {
                t
            } else {
                Shape::Unknown
            }
        }
        Expr::Call { builtin, .. } => match builtin {
            Builtin::Sorted => Shape::Vector,
            _ => Shape::Scalar,
        },
    }
}

fn check_return_shape(
    signature: HeuristicSignature,
    params: &[String],
    bindings: &[(String, Expr)],
    ret: &Expr,
) -> Result<(), ParseError> {
    let param_shape = match signature.kind {
        SignatureKind::PerBidderScore => Shape::Scalar,
        SignatureKind::JointAllocation | SignatureKind::Redistribution => Shape::Vector,
    };
    let mut env: Vec<(String, Shape)> =
        params.iter().map(|p| (p.clone(), param_shape)).collect();
    for (name, expr) in bindings {
        let shape = infer_shape(expr, &env);
        env.push((name.clone(), shape));
    }
    let ret_shape = infer_shape(ret, &env);
    match (signature.kind, ret_shape) {
        (_, Shape::Bool) => Err(ParseError::SignatureMismatch(
            "heuristic must return a number, not a comparison".into(),
        )),
        (SignatureKind::PerBidderScore | SignatureKind::Redistribution, Shape::Vector) => {
            Err(ParseError::SignatureMismatch(
                "heuristic must return a scalar, but the return expression is a vector".into(),
            ))
        }
        (SignatureKind::JointAllocation, Shape::Scalar) => Err(ParseError::SignatureMismatch(
            "heuristic must return an allocation vector, but the return expression is a scalar"
                .into(),
        )),
        _ => Ok(()),
    }
}

