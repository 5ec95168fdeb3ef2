//! The sandboxed heuristic language.
//!
//! Every candidate mechanism component is written in a restricted
//! single-function scripting form:
//!
//! ```text
//! def heuristic(others_bids):
//!   scale = 0.5
//!   return scale * min(others_bids)
//! ```
//!
//! A program is a sequence of assignments followed by one `return`
//! expression. Expressions cover arithmetic, comparisons (only usable as
//! ternary conditions), `a if c else b` conditionals, vector literals,
//! indexing, and a fixed builtin whitelist. There are no loops, no
//! recursion, no randomness and no I/O: generated code is parsed and
//! interpreted, never executed natively, so nothing outside the whitelist
//! is representable. See `docs/grammar.md` for the full grammar and the
//! alias table applied to qualified names such as `np.min`.

mod eval;
mod lexer;
mod parser;
mod print;

pub use eval::{evaluate, DistributionHooks, EvalContext, EvalError, Value, DEFAULT_STEP_BUDGET};
pub use parser::parse;
pub use print::pretty_print;

use serde::{Deserialize, Serialize};

/// Input/output shape contract of a heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignatureKind {
    /// One scalar bid in, one scalar score out; the setting applies it to
    /// each bidder independently.
    PerBidderScore,
    /// Bid vector of length n in, allocation score vector of length n+1
    /// out (last slot means "do not allocate").
    JointAllocation,
    /// Ascending-sorted other-bids vector of length n-1 in, one scalar
    /// redistribution amount out.
    Redistribution,
}

/// Shape contract a source text must satisfy to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicSignature {
    pub kind: SignatureKind,
    /// Number of formal parameters the function must declare.
    pub arity: usize,
}

impl HeuristicSignature {
    pub fn per_bidder_score() -> Self {
        Self { kind: SignatureKind::PerBidderScore, arity: 1 }
    }

    pub fn joint_allocation() -> Self {
        Self { kind: SignatureKind::JointAllocation, arity: 1 }
    }

    pub fn redistribution() -> Self {
        Self { kind: SignatureKind::Redistribution, arity: 1 }
    }

    /// Conventional name of the single formal parameter.
    pub fn canonical_param(&self) -> &'static str {
        match self.kind {
            SignatureKind::PerBidderScore => "v",
            SignatureKind::JointAllocation => "bids",
            SignatureKind::Redistribution => "others_bids",
        }
    }
}

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Comparison operators; results are booleans usable only as ternary
/// conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// The builtin whitelist. `Pdf`, `Cdf` and `Survival` are bound at
/// evaluation time to the setting's marginal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Min,
    Max,
    Abs,
    Sum,
    Mean,
    Median,
    Sorted,
    Len,
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Pdf,
    Cdf,
    Survival,
}

impl Builtin {
    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Abs => "abs",
            Builtin::Sum => "sum",
            Builtin::Mean => "mean",
            Builtin::Median => "median",
            Builtin::Sorted => "sorted",
            Builtin::Len => "len",
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Sqrt => "sqrt",
            Builtin::Sigmoid => "sigmoid",
            Builtin::Pdf => "pdf",
            Builtin::Cdf => "cdf",
            Builtin::Survival => "survival",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            "abs" => Builtin::Abs,
            "sum" => Builtin::Sum,
            "mean" => Builtin::Mean,
            "median" => Builtin::Median,
            "sorted" => Builtin::Sorted,
            "len" => Builtin::Len,
            "exp" => Builtin::Exp,
            "log" => Builtin::Log,
            "sqrt" => Builtin::Sqrt,
            "sigmoid" => Builtin::Sigmoid,
            "pdf" => Builtin::Pdf,
            "cdf" => Builtin::Cdf,
            "survival" => Builtin::Survival,
            _ => return None,
        })
    }
}

/// Expression tree. One variant per grammar node; nothing outside this
/// enum is representable, which is what makes the language a sandbox.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    VecLit(Vec<Expr>),
    Index { base: Box<Expr>, index: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Neg(Box<Expr>),
    Compare { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    /// `then_val if cond else else_val`; exactly one branch is evaluated.
    If { cond: Box<Expr>, then_val: Box<Expr>, else_val: Box<Expr> },
    Call { builtin: Builtin, args: Vec<Expr> },
}

impl Expr {
    /// Number of nodes in this subtree.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::VecLit(items) => 1 + items.iter().map(Expr::node_count).sum::<usize>(),
            Expr::Index { base, index } => 1 + base.node_count() + index.node_count(),
            Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
                1 + lhs.node_count() + rhs.node_count()
            }
            Expr::Neg(inner) => 1 + inner.node_count(),
            Expr::If { cond, then_val, else_val } => {
                1 + cond.node_count() + then_val.node_count() + else_val.node_count()
            }
            Expr::Call { args, .. } => 1 + args.iter().map(Expr::node_count).sum::<usize>(),
        }
    }
}

/// A parsed heuristic: original source, expression tree, and the
/// signature it was checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicProgram {
    source: String,
    params: Vec<String>,
    bindings: Vec<(String, Expr)>,
    ret: Expr,
    signature: HeuristicSignature,
}

impl HeuristicProgram {
    pub(crate) fn new(
        source: String,
        params: Vec<String>,
        bindings: Vec<(String, Expr)>,
        ret: Expr,
        signature: HeuristicSignature,
    ) -> Self {
        Self { source, params, bindings, ret, signature }
    }

    /// Build a program directly from AST parts, as the symbolic proposer
    /// does. The tree is normalized the same way parsed trees are and the
    /// stored source is the canonical pretty-printed text.
    pub fn from_parts(
        params: Vec<String>,
        mut bindings: Vec<(String, Expr)>,
        mut ret: Expr,
        signature: HeuristicSignature,
    ) -> Self {
        for (_, expr) in bindings.iter_mut() {
            normalize_expr(expr);
        }
        normalize_expr(&mut ret);
        let mut program = Self { source: String::new(), params, bindings, ret, signature };
        program.source = pretty_print(&program);
        program
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn bindings(&self) -> &[(String, Expr)] {
        &self.bindings
    }

    pub fn return_expr(&self) -> &Expr {
        &self.ret
    }

    pub fn signature(&self) -> HeuristicSignature {
        self.signature
    }

    /// Structural equality of the expression trees, ignoring source text.
    pub fn ast_eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.bindings == other.bindings
            && self.ret == other.ret
    }
}

/// Node count of the whole program: one node for the function wrapper,
/// one per assignment plus its expression, plus the return expression.
/// Renaming variables does not change the count.
pub fn structural_size(program: &HeuristicProgram) -> usize {
    1 + program
        .bindings
        .iter()
        .map(|(_, expr)| 1 + expr.node_count())
        .sum::<usize>()
        + program.ret.node_count()
}

/// Replace `Neg(Num(x))` with `Num(-x)` everywhere. Both the parser and
/// `from_parts` apply this, so no program in the system carries a
/// negation applied directly to a literal and `-0.5` round-trips to the
/// same tree it prints from.
pub(crate) fn normalize_expr(expr: &mut Expr) {
    match expr {
        Expr::Neg(inner) => {
            normalize_expr(inner);
            if let Expr::Num(x) = **inner {
                *expr = Expr::Num(-x);
            }
        }
        Expr::Num(_) | Expr::Var(_) => {}
        Expr::VecLit(items) => items.iter_mut().for_each(normalize_expr),
        Expr::Index { base, index } => {
            normalize_expr(base);
            normalize_expr(index);
        }
        Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
            normalize_expr(lhs);
            normalize_expr(rhs);
        }
        Expr::If { cond, then_val, else_val } => {
            normalize_expr(cond);
            normalize_expr(then_val);
            normalize_expr(else_val);
        }
        Expr::Call { args, .. } => args.iter_mut().for_each(normalize_expr),
    }
}

/// Parse failure, with position information where meaningful.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("forbidden construct at line {line}, column {col}: {construct}")]
    Forbidden { line: usize, col: usize, construct: String },
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
}
