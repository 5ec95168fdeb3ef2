//! Tree-walking interpreter.
//!
//! Evaluation is deterministic given an identical context, evaluates
//! exactly one branch of each conditional, and never panics on malformed
//! arithmetic: every failure is a typed [`EvalError`]. A step budget
//! bounds the work a single call may do.

use smallvec::SmallVec;

use super::{BinOp, Builtin, CmpOp, Expr, HeuristicProgram};

/// Default interpreter step budget per evaluation.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000;

/// Runtime value. Vectors up to 8 elements stay inline, which keeps the
/// hot mechanism loops allocation-free.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(SmallVec<[f64; 8]>),
    Bool(bool),
}

impl Value {
    pub fn vector(values: &[f64]) -> Self {
        Value::Vector(SmallVec::from_slice(values))
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }
}

/// Evaluation failure. `evaluate` is total: these variants are the only
/// ways it reports trouble.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("step budget exceeded")]
    BudgetExceeded,
}

/// Distribution quantities the `pdf`/`cdf`/`survival` builtins bind to.
/// Implementations must be total on all reals (zero density outside the
/// support) so heuristics cannot crash the interpreter. `Sync` so rules
/// holding hooks can be shared across scoring workers.
pub trait DistributionHooks: Sync {
    fn pdf(&self, v: f64) -> f64;
    fn cdf(&self, v: f64) -> f64;
    fn survival(&self, v: f64) -> f64 {
        1.0 - self.cdf(v)
    }
}

/// Per-call evaluation context: variable bindings, the optional
/// distribution behind the distribution builtins, and the step budget.
#[derive(Clone)]
pub struct EvalContext<'a> {
    vars: SmallVec<[(&'a str, Value); 4]>,
    dist: Option<&'a dyn DistributionHooks>,
    step_budget: u64,
}

impl<'a> Default for EvalContext<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> EvalContext<'a> {
    pub fn new() -> Self {
        Self { vars: SmallVec::new(), dist: None, step_budget: DEFAULT_STEP_BUDGET }
    }

    pub fn bind(mut self, name: &'a str, value: Value) -> Self {
        self.vars.push((name, value));
        self
    }

    pub fn with_distribution(mut self, dist: &'a dyn DistributionHooks) -> Self {
        self.dist = Some(dist);
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.step_budget = budget;
        self
    }
}

/// Evaluate `program` under `ctx`. The context must bind every formal
/// parameter of the program.
pub fn evaluate(program: &HeuristicProgram, ctx: &EvalContext) -> Result<Value, EvalError> {
    let mut scope: SmallVec<[(&str, Value); 8]> = SmallVec::new();
    for param in program.params() {
        let bound = ctx
            .vars
            .iter()
            .find(|(name, _)| *name == param.as_str())
            .ok_or_else(|| EvalError::Shape(format!("parameter `{param}` is not bound")))?;
        scope.push((param.as_str(), bound.1.clone()));
    }
    let mut steps = ctx.step_budget;
    for (name, expr) in program.bindings() {
        let value = eval_expr(expr, &scope, ctx.dist, &mut steps)?;
        // Sequential scope: a rebinding shadows the earlier entry.
        scope.push((name.as_str(), value));
    }
    eval_expr(program.return_expr(), &scope, ctx.dist, &mut steps)
}

fn eval_expr(
    expr: &Expr,
    scope: &[(&str, Value)],
    dist: Option<&dyn DistributionHooks>,
    steps: &mut u64,
) -> Result<Value, EvalError> {
    if *steps == 0 {
        return Err(EvalError::BudgetExceeded);
    }
    *steps -= 1;
    match expr {
        Expr::Num(x) => Ok(Value::Scalar(*x)),
        Expr::Var(name) => scope
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| EvalError::Shape(format!("unbound variable `{name}`"))),
        Expr::VecLit(items) => {
            let mut out: SmallVec<[f64; 8]> = SmallVec::with_capacity(items.len());
            for item in items {
                match eval_expr(item, scope, dist, steps)? {
                    Value::Scalar(x) => out.push(x),
                    _ => {
                        return Err(EvalError::Shape(
                            "vector literals must contain scalars".into(),
                        ))
                    }
                }
            }
            Ok(Value::Vector(out))
        }
        Expr::Index { base, index } => {
            let base = eval_expr(base, scope, dist, steps)?;
            let index = eval_expr(index, scope, dist, steps)?;
            let items = base
                .as_vector()
                .ok_or_else(|| EvalError::Shape("indexing a non-vector".into()))?;
            let raw = index
                .as_scalar()
                .ok_or_else(|| EvalError::Shape("index must be a scalar".into()))?;
            if raw.fract() != 0.0 || !raw.is_finite() {
                return Err(EvalError::Domain(format!("index `{raw}` is not an integer")));
            }
            let len = items.len() as i64;
            let mut idx = raw as i64;
            if idx < 0 {
                idx += len; // Python-style negative indexing
            }
            if idx < 0 || idx >= len {
                return Err(EvalError::Shape(format!(
                    "index {raw} out of bounds for vector of length {len}"
                )));
            }
            Ok(Value::Scalar(items[idx as usize]))
        }
        Expr::Binary { op, lhs, rhs } => {
            let lhs = eval_expr(lhs, scope, dist, steps)?;
            let rhs = eval_expr(rhs, scope, dist, steps)?;
            eval_binary(*op, lhs, rhs, steps)
        }
        Expr::Neg(inner) => match eval_expr(inner, scope, dist, steps)? {
            Value::Scalar(x) => Ok(Value::Scalar(-x)),
            Value::Vector(v) => Ok(Value::Vector(v.iter().map(|x| -x).collect())),
            Value::Bool(_) => Err(EvalError::Shape("cannot negate a boolean".into())),
        },
        Expr::Compare { op, lhs, rhs } => {
            let lhs = eval_expr(lhs, scope, dist, steps)?;
            let rhs = eval_expr(rhs, scope, dist, steps)?;
            let (a, b) = match (lhs.as_scalar(), rhs.as_scalar()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(EvalError::Shape("comparisons require scalars".into())),
            };
            let result = match op {
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
            };
            Ok(Value::Bool(result))
        }
        Expr::If { cond, then_val, else_val } => {
            match eval_expr(cond, scope, dist, steps)? {
                Value::Bool(true) => eval_expr(then_val, scope, dist, steps),
                Value::Bool(false) => eval_expr(else_val, scope, dist, steps),
                _ => Err(EvalError::Shape(
                    "conditional expressions require a comparison condition".into(),
                )),
            }
        }
        Expr::Call { builtin, args } => {
            let mut values: SmallVec<[Value; 4]> = SmallVec::with_capacity(args.len());
            for arg in args {
                values.push(eval_expr(arg, scope, dist, steps)?);
            }
            eval_builtin(*builtin, &values, dist, steps)
        }
    }
}

fn finite(x: f64, what: &str) -> Result<f64, EvalError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EvalError::Domain(format!("{what} produced a non-finite value")))
    }
}

fn eval_binary(op: BinOp, lhs: Value, rhs: Value, steps: &mut u64) -> Result<Value, EvalError> {
    match (lhs, rhs) {
        (Value::Scalar(a), Value::Scalar(b)) => scalar_binary(op, a, b).map(Value::Scalar),
        (Value::Vector(a), Value::Vector(b)) => {
            if a.len() != b.len() {
                return Err(EvalError::Shape(format!(
                    "vector length mismatch: {} vs {}",
                    a.len(),
                    b.len()
                )));
            }
            charge(steps, a.len())?;
            let mut out: SmallVec<[f64; 8]> = SmallVec::with_capacity(a.len());
            for (x, y) in a.iter().zip(b.iter()) {
                out.push(scalar_binary(op, *x, *y)?);
            }
            Ok(Value::Vector(out))
        }
        (Value::Vector(a), Value::Scalar(b)) => {
            charge(steps, a.len())?;
            let mut out: SmallVec<[f64; 8]> = SmallVec::with_capacity(a.len());
            for x in a.iter() {
                out.push(scalar_binary(op, *x, b)?);
            }
            Ok(Value::Vector(out))
        }
        (Value::Scalar(a), Value::Vector(b)) => {
            charge(steps, b.len())?;
            let mut out: SmallVec<[f64; 8]> = SmallVec::with_capacity(b.len());
            for y in b.iter() {
                out.push(scalar_binary(op, a, *y)?);
            }
            Ok(Value::Vector(out))
        }
        _ => Err(EvalError::Shape("arithmetic on a boolean".into())),
    }
}

fn scalar_binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    match op {
        BinOp::Add => finite(a + b, "addition"),
        BinOp::Sub => finite(a - b, "subtraction"),
        BinOp::Mul => finite(a * b, "multiplication"),
        BinOp::Div => {
            if b == 0.0 {
                Err(EvalError::Domain("division by zero".into()))
            } else {
                finite(a / b, "division")
            }
        }
        BinOp::Pow => {
            if a < 0.0 && b.fract() != 0.0 {
                return Err(EvalError::Domain(
                    "fractional power of a negative base".into(),
                ));
            }
            if a == 0.0 && b < 0.0 {
                return Err(EvalError::Domain("zero raised to a negative power".into()));
            }
            finite(a.powf(b), "power")
        }
    }
}

fn charge(steps: &mut u64, amount: usize) -> Result<(), EvalError> {
    let amount = amount as u64;
    if *steps < amount {
        *steps = 0;
        Err(EvalError::BudgetExceeded)
    } else {
        *steps -= amount;
        Ok(())
    }
}

fn eval_builtin(
    builtin: Builtin,
    args: &[Value],
    dist: Option<&dyn DistributionHooks>,
    steps: &mut u64,
) -> Result<Value, EvalError> {
    use Builtin::*;
    match builtin {
        Min | Max => {
            let reduce = |acc: f64, x: f64| match builtin {
                Min => acc.min(x),
                _ => acc.max(x),
            };
            if args.len() == 1 {
                match &args[0] {
                    Value::Vector(v) => {
                        if v.is_empty() {
                            return Err(EvalError::Domain(format!(
                                "{}() of an empty vector",
                                builtin.name()
                            )));
                        }
                        charge(steps, v.len())?;
                        Ok(Value::Scalar(v.iter().copied().fold(v[0], reduce)))
                    }
                    Value::Scalar(x) => Ok(Value::Scalar(*x)),
                    Value::Bool(_) => Err(EvalError::Shape(
                        format!("{}() of a boolean", builtin.name()),
                    )),
                }
            } else {
                let mut acc: Option<f64> = None;
                for arg in args {
                    let x = arg.as_scalar().ok_or_else(|| {
                        EvalError::Shape(format!(
                            "{}() with several arguments requires scalars",
                            builtin.name()
                        ))
                    })?;
                    acc = Some(match acc {
                        None => x,
                        Some(a) => reduce(a, x),
                    });
                }
                Ok(Value::Scalar(acc.expect("arity checked at parse time")))
            }
        }
        Sum | Mean | Median | Sorted | Len => {
            let v = args[0].as_vector().ok_or_else(|| {
                EvalError::Shape(format!("{}() requires a vector", builtin.name()))
            })?;
            charge(steps, v.len())?;
            match builtin {
                Sum => finite(v.iter().sum(), "sum").map(Value::Scalar),
                Len => Ok(Value::Scalar(v.len() as f64)),
                Mean => {
                    if v.is_empty() {
                        return Err(EvalError::Domain("mean() of an empty vector".into()));
                    }
                    finite(v.iter().sum::<f64>() / v.len() as f64, "mean").map(Value::Scalar)
                }
                Median => {
                    if v.is_empty() {
                        return Err(EvalError::Domain("median() of an empty vector".into()));
                    }
                    let mut sorted: SmallVec<[f64; 8]> = SmallVec::from_slice(v);
                    sorted.sort_by(|a, b| a.total_cmp(b));
                    let mid = sorted.len() / 2;
                    let median = if sorted.len() % 2 == 1 {
                        sorted[mid]
                    } else {
                        (sorted[mid - 1] + sorted[mid]) / 2.0
                    };
                    Ok(Value::Scalar(median))
                }
                Sorted => {
                    let mut sorted: SmallVec<[f64; 8]> = SmallVec::from_slice(v);
                    sorted.sort_by(|a, b| a.total_cmp(b));
                    Ok(Value::Vector(sorted))
                }
                _ => unreachable!(),
            }
        }
        Abs | Exp | Log | Sqrt | Sigmoid | Pdf | Cdf | Survival => {
            let x = args[0].as_scalar().ok_or_else(|| {
                EvalError::Shape(format!("{}() requires a scalar", builtin.name()))
            })?;
            let result = match builtin {
                Abs => x.abs(),
                Exp => finite(x.exp(), "exp")?,
                Log => {
                    if x <= 0.0 {
                        return Err(EvalError::Domain(format!("log of non-positive `{x}`")));
                    }
                    x.ln()
                }
                Sqrt => {
                    if x < 0.0 {
                        return Err(EvalError::Domain(format!("sqrt of negative `{x}`")));
                    }
                    x.sqrt()
                }
                Sigmoid => sigmoid(x),
                Pdf | Cdf | Survival => {
                    let dist = dist.ok_or_else(|| {
                        EvalError::Domain(format!(
                            "{}() requires a distribution-bound context",
                            builtin.name()
                        ))
                    })?;
                    let value = match builtin {
                        Pdf => dist.pdf(x),
                        Cdf => dist.cdf(x),
                        _ => dist.survival(x),
                    };
                    finite(value, builtin.name())?
                }
                _ => unreachable!(),
            };
            Ok(Value::Scalar(result))
        }
    }
}

/// Numerically stable logistic function; total on all reals.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
