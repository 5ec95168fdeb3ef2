//! The local symbolic mutator.
//!
//! A deterministic stand-in for the LLM: each strategy index maps onto a
//! classic genetic operator over expression trees.
//!
//! | strategy | operator |
//! |----------|----------|
//! | 1 | fresh random expression from the grammar |
//! | 2 | subtree crossover between two parents |
//! | 3 | algebraic simplification / shrink |
//! | 4 | point mutation: constant jitter (±10% log-uniform) or operator swap |
//! | 5 | subtree deletion, favoring smaller trees |
//!
//! Candidates are built from grammar nodes and printed canonically, so
//! every proposal parses by construction. Equal seeds and inputs give
//! bit-identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ProposalRequest, ProposeError, Proposer};
use crate::dsl::{
    parse, BinOp, Builtin, CmpOp, Expr, HeuristicProgram, HeuristicSignature, SignatureKind,
};
use crate::mechanisms::SettingSpec;

/// Constants the generator draws from before jitter diversifies them.
const CONSTANT_POOL: &[f64] = &[0.0, 0.1, 0.25, 0.5, 1.0, 2.0];

/// Cap on inlined-tree size before mutation falls back to fresh
/// generation.
const MAX_INLINED_NODES: usize = 500;

pub struct SymbolicProposer {
    signature: HeuristicSignature,
    /// Length of the vector input (0 for scalar signatures).
    input_len: usize,
    n_strategies: u8,
}

impl SymbolicProposer {
    pub fn for_setting(setting: &SettingSpec) -> Self {
        let signature = setting.signature();
        let input_len = match signature.kind {
            SignatureKind::PerBidderScore => 0,
            SignatureKind::JointAllocation => setting.n_bidders(),
            SignatureKind::Redistribution => setting.n_bidders() - 1,
        };
        Self { signature, input_len, n_strategies: 5 }
    }

    fn param(&self) -> &'static str {
        self.signature.canonical_param()
    }
}

impl Proposer for SymbolicProposer {
    fn propose(&mut self, request: &ProposalRequest) -> Result<String, ProposeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(request.rng_seed);
        let strategy = match request.strategy_id {
            Some(s) if s >= 1 && s <= self.n_strategies => s,
            Some(other) => {
                return Err(ProposeError::Rejected(format!("unknown strategy {other}")))
            }
            None => rng.gen_range(1..=self.n_strategies),
        };
        let parents: Vec<HeuristicProgram> = request
            .parents
            .iter()
            .map(|(source, _)| {
                parse(source, self.signature).map_err(|e| {
                    ProposeError::Rejected(format!("parent failed to parse: {e}"))
                })
            })
            .collect::<Result<_, _>>()?;

        let expr = match strategy {
            1 => self.fresh(&mut rng),
            2 => match parents.len() {
                0 => self.fresh(&mut rng),
                1 => self.crossover(&parents[0], &parents[0], &mut rng),
                _ => self.crossover(&parents[0], &parents[1], &mut rng),
            },
            3 => match parents.first() {
                Some(p) => self.simplify(p, &mut rng),
                None => self.fresh(&mut rng),
            },
            4 => match parents.first() {
                Some(p) => self.point_mutate(p, &mut rng),
                None => self.fresh(&mut rng),
            },
            _ => match parents.first() {
                Some(p) => self.shrink(p, &mut rng),
                None => self.fresh(&mut rng),
            },
        };
        let program = HeuristicProgram::from_parts(
            vec![self.param().to_string()],
            Vec::new(),
            expr,
            self.signature,
        );
        Ok(program.source().to_string())
    }

    fn name(&self) -> &'static str {
        "symbolic"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Scalar,
    Vector,
}

impl SymbolicProposer {
    /// Inline assignments so mutation works on one expression; falls back
    /// to `None` when substitution would blow the tree up.
    fn inlined(&self, program: &HeuristicProgram) -> Option<Expr> {
        let mut expr = program.return_expr().clone();
        for (name, value) in program.bindings().iter().rev() {
            substitute(&mut expr, name, value);
            if expr.node_count() > MAX_INLINED_NODES {
                return None;
            }
        }
        // The mutation grammar uses the canonical parameter name.
        if program.params()[0] != self.param() {
            substitute(&mut expr, &program.params()[0], &Expr::Var(self.param().to_string()));
        }
        Some(expr)
    }

    fn fresh(&self, rng: &mut ChaCha8Rng) -> Expr {
        match self.signature.kind {
            SignatureKind::JointAllocation => {
                let items = (0..=self.input_len)
                    .map(|_| self.scalar_expr(rng, 3))
                    .collect();
                Expr::VecLit(items)
            }
            _ => self.scalar_expr(rng, 4),
        }
    }

    /// Random scalar expression of bounded depth over the signature's
    /// inputs.
    fn scalar_expr(&self, rng: &mut ChaCha8Rng, depth: u32) -> Expr {
        if depth == 0 {
            return self.scalar_leaf(rng);
        }
        match rng.gen_range(0u32..100) {
            0..=29 => self.scalar_leaf(rng),
            30..=64 => {
                let op = match rng.gen_range(0u32..10) {
                    0..=2 => BinOp::Add,
                    3..=5 => BinOp::Sub,
                    6..=7 => BinOp::Mul,
                    8 => BinOp::Div,
                    _ => BinOp::Pow,
                };
                Expr::Binary {
                    op,
                    lhs: Box::new(self.scalar_expr(rng, depth - 1)),
                    rhs: Box::new(self.scalar_expr(rng, depth - 1)),
                }
            }
            65..=89 => {
                let builtin = self.unary_builtin(rng);
                Expr::Call { builtin, args: vec![self.scalar_expr(rng, depth - 1)] }
            }
            90..=94 => Expr::Neg(Box::new(self.scalar_expr(rng, depth - 1))),
            _ => {
                let op = match rng.gen_range(0u32..4) {
                    0 => CmpOp::Lt,
                    1 => CmpOp::Le,
                    2 => CmpOp::Gt,
                    _ => CmpOp::Ge,
                };
                Expr::If {
                    cond: Box::new(Expr::Compare {
                        op,
                        lhs: Box::new(self.scalar_expr(rng, 1)),
                        rhs: Box::new(self.scalar_expr(rng, 1)),
                    }),
                    then_val: Box::new(self.scalar_expr(rng, depth - 1)),
                    else_val: Box::new(self.scalar_expr(rng, depth - 1)),
                }
            }
        }
    }

    fn unary_builtin(&self, rng: &mut ChaCha8Rng) -> Builtin {
        // Distribution builtins carry most of the signal in the
        // rediscovery setting; elsewhere they are rarely useful.
        let dist_weight = match self.signature.kind {
            SignatureKind::PerBidderScore => 50,
            _ => 10,
        };
        if rng.gen_range(0u32..100) < dist_weight {
            match rng.gen_range(0u32..3) {
                0 => Builtin::Pdf,
                1 => Builtin::Cdf,
                _ => Builtin::Survival,
            }
        } else {
            match rng.gen_range(0u32..5) {
                0 => Builtin::Abs,
                1 => Builtin::Exp,
                2 => Builtin::Log,
                3 => Builtin::Sqrt,
                _ => Builtin::Sigmoid,
            }
        }
    }

    fn scalar_leaf(&self, rng: &mut ChaCha8Rng) -> Expr {
        match self.signature.kind {
            SignatureKind::PerBidderScore => {
                if rng.gen_bool(0.55) {
                    Expr::Var(self.param().into())
                } else {
                    Expr::Num(self.constant(rng))
                }
            }
            _ => match rng.gen_range(0u32..10) {
                0..=3 => {
                    // A reducer over the input vector.
                    let builtin = match rng.gen_range(0u32..5) {
                        0 => Builtin::Min,
                        1 => Builtin::Max,
                        2 => Builtin::Sum,
                        3 => Builtin::Mean,
                        _ => Builtin::Median,
                    };
                    Expr::Call { builtin, args: vec![Expr::Var(self.param().into())] }
                }
                4..=6 => {
                    let idx = rng.gen_range(0..self.input_len.max(1));
                    Expr::Index {
                        base: Box::new(Expr::Var(self.param().into())),
                        index: Box::new(Expr::Num(idx as f64)),
                    }
                }
                _ => Expr::Num(self.constant(rng)),
            },
        }
    }

    fn constant(&self, rng: &mut ChaCha8Rng) -> f64 {
        if rng.gen_bool(0.7) {
            CONSTANT_POOL[rng.gen_range(0..CONSTANT_POOL.len())]
        } else {
            // Two decimals keep canonical sources short.
            (rng.gen_range(-100i32..=100) as f64) / 100.0
        }
    }

    fn crossover(&self, a: &HeuristicProgram, b: &HeuristicProgram, rng: &mut ChaCha8Rng) -> Expr {
        let (Some(mut host), Some(donor)) = (self.inlined(a), self.inlined(b)) else {
            return self.fresh(rng);
        };
        let host_slots = collect_scalar_slots(&host, self.param());
        // Donor subtrees of scalar shape; scalar slots exist in every
        // signature's trees.
        let donor_slots = collect_subtrees(&donor, Shape::Scalar, self.param());
        if host_slots.is_empty() || donor_slots.is_empty() {
            return self.fresh(rng);
        }
        let slot = host_slots[rng.gen_range(0..host_slots.len())].clone();
        let graft = donor_slots[rng.gen_range(0..donor_slots.len())].clone();
        replace_at(&mut host, &slot, graft);
        host
    }

    fn simplify(&self, parent: &HeuristicProgram, rng: &mut ChaCha8Rng) -> Expr {
        let Some(mut expr) = self.inlined(parent) else {
            return self.fresh(rng);
        };
        let folded = fold_identities(&mut expr);
        if !folded {
            return self.shrink_expr(expr, rng);
        }
        expr
    }

    /// Constant jitter, operator swap, or parameter introduction: a tree
    /// with no constants gets one by wrapping a scalar node in `c * _`
    /// or `_ - c`.
    fn point_mutate(&self, parent: &HeuristicProgram, rng: &mut ChaCha8Rng) -> Expr {
        let Some(mut expr) = self.inlined(parent) else {
            return self.fresh(rng);
        };
        let constants = collect_constant_paths(&expr);
        let operators = collect_operator_paths(&expr);
        let choice = match (constants.is_empty(), operators.is_empty()) {
            (false, false) => rng.gen_range(0u32..10),
            (false, true) => {
                if rng.gen_bool(0.75) {
                    0
                } else {
                    8
                }
            }
            (true, false) => {
                if rng.gen_bool(0.5) {
                    5
                } else {
                    8
                }
            }
            (true, true) => 8,
        };
        match choice {
            // Jitter one constant: ±10% log-uniform multiplicative; zero
            // has no scale, so it steps to a small constant instead.
            0..=4 => {
                let path = &constants[rng.gen_range(0..constants.len())];
                if let Some(Expr::Num(c)) = node_at_mut(&mut expr, path) {
                    let factor = (rng.gen_range(0.9f64.ln()..=1.1f64.ln())).exp();
                    *c = if *c == 0.0 { 0.1 } else { *c * factor };
                }
                expr
            }
            // Swap one operator for its counterpart.
            5..=7 => {
                let path = &operators[rng.gen_range(0..operators.len())];
                if let Some(Expr::Binary { op, .. }) = node_at_mut(&mut expr, path) {
                    *op = match op {
                        BinOp::Add => BinOp::Sub,
                        BinOp::Sub => BinOp::Add,
                        BinOp::Mul => BinOp::Div,
                        BinOp::Div => BinOp::Mul,
                        BinOp::Pow => BinOp::Mul,
                    };
                }
                expr
            }
            // Introduce a parameter around a scalar node.
            _ => {
                let slots = collect_scalar_slots(&expr, self.param());
                if slots.is_empty() {
                    return self.fresh(rng);
                }
                let path = slots[rng.gen_range(0..slots.len())].clone();
                let constant = Expr::Num(self.constant(rng));
                if let Some(node) = node_at_mut(&mut expr, &path) {
                    let inner = Box::new(node.clone());
                    *node = if rng.gen_bool(0.7) {
                        Expr::Binary { op: BinOp::Mul, lhs: Box::new(constant), rhs: inner }
                    } else {
                        Expr::Binary { op: BinOp::Sub, lhs: inner, rhs: Box::new(constant) }
                    };
                }
                expr
            }
        }
    }

    fn shrink(&self, parent: &HeuristicProgram, rng: &mut ChaCha8Rng) -> Expr {
        let Some(expr) = self.inlined(parent) else {
            return self.fresh(rng);
        };
        self.shrink_expr(expr, rng)
    }

    /// Replace a random internal node with one of its same-shape
    /// children, preferring large subtrees so the result gets smaller.
    fn shrink_expr(&self, mut expr: Expr, rng: &mut ChaCha8Rng) -> Expr {
        let shrinkable = collect_shrinkable(&expr, self.param());
        if shrinkable.is_empty() {
            // Nothing to delete; nudge a leaf instead of returning the
            // parent verbatim.
            return match self.signature.kind {
                SignatureKind::JointAllocation => expr,
                _ => self.scalar_leaf(rng),
            };
        }
        // Weight by subtree size.
        let total: usize = shrinkable.iter().map(|(_, size)| size).sum();
        let mut pick = rng.gen_range(0..total.max(1));
        let mut chosen = &shrinkable[0].0;
        for (path, size) in &shrinkable {
            if pick < *size {
                chosen = path;
                break;
            }
            pick -= size;
        }
        let path = chosen.clone();
        if let Some(node) = node_at_mut(&mut expr, &path) {
            let children = same_shape_children(node, self.param());
            if !children.is_empty() {
                let replacement = children[rng.gen_range(0..children.len())].clone();
                *node = replacement;
            }
        }
        expr
    }
}

fn substitute(expr: &mut Expr, name: &str, value: &Expr) {
    match expr {
        Expr::Var(v) if v == name => *expr = value.clone(),
        Expr::Var(_) | Expr::Num(_) => {}
        Expr::VecLit(items) => items.iter_mut().for_each(|e| substitute(e, name, value)),
        Expr::Index { base, index } => {
            substitute(base, name, value);
            substitute(index, name, value);
        }
        Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
            substitute(lhs, name, value);
            substitute(rhs, name, value);
        }
        Expr::Neg(inner) => substitute(inner, name, value),
        Expr::If { cond, then_val, else_val } => {
            substitute(cond, name, value);
            substitute(then_val, name, value);
            substitute(else_val, name, value);
        }
        Expr::Call { args, .. } => args.iter_mut().for_each(|e| substitute(e, name, value)),
    }
}

/// Static shape of a subtree given that the canonical parameter may be a
/// vector. Conservative: anything ambiguous is treated as scalar-ish and
/// only exact matches are used for grafting.
fn shape_of(expr: &Expr, vector_param: &str) -> Shape {
    match expr {
        Expr::Var(name) if name == vector_param => Shape::Vector,
        Expr::VecLit(_) => Shape::Vector,
        Expr::Call { builtin: Builtin::Sorted, .. } => Shape::Vector,
        Expr::Binary { lhs, rhs, .. } => {
            if shape_of(lhs, vector_param) == Shape::Vector
                || shape_of(rhs, vector_param) == Shape::Vector
            {
                Shape::Vector
            } else {
                Shape::Scalar
            }
        }
        Expr::Neg(inner) => shape_of(inner, vector_param),
        Expr::If { then_val, .. } => shape_of(then_val, vector_param),
        _ => Shape::Scalar,
    }
}

type Path = Vec<usize>;

fn children_mut(expr: &mut Expr) -> Vec<&mut Expr> {
    match expr {
        Expr::Num(_) | Expr::Var(_) => Vec::new(),
        Expr::VecLit(items) => items.iter_mut().collect(),
        Expr::Index { base, index } => vec![base, index],
        Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => vec![lhs, rhs],
        Expr::Neg(inner) => vec![inner],
        Expr::If { cond, then_val, else_val } => vec![cond, then_val, else_val],
        Expr::Call { args, .. } => args.iter_mut().collect(),
    }
}

fn children(expr: &Expr) -> Vec<&Expr> {
    match expr {
        Expr::Num(_) | Expr::Var(_) => Vec::new(),
        Expr::VecLit(items) => items.iter().collect(),
        Expr::Index { base, index } => vec![base, index],
        Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => vec![lhs, rhs],
        Expr::Neg(inner) => vec![inner],
        Expr::If { cond, then_val, else_val } => vec![cond, then_val, else_val],
        Expr::Call { args, .. } => args.iter().collect(),
    }
}

fn node_at_mut<'a>(expr: &'a mut Expr, path: &[usize]) -> Option<&'a mut Expr> {
    let mut node = expr;
    for &step in path {
        node = children_mut(node).into_iter().nth(step)?;
    }
    Some(node)
}

fn replace_at(expr: &mut Expr, path: &[usize], replacement: Expr) {
    if let Some(node) = node_at_mut(expr, path) {
        *node = replacement;
    }
}

/// Paths of scalar-valued slots a graft may replace. Comparisons are
/// excluded (they sit in condition positions and produce booleans), and
/// vector-shaped positions are excluded by the shape check.
fn collect_scalar_slots(expr: &Expr, vector_param: &str) -> Vec<Path> {
    let mut out = Vec::new();
    walk(expr, &mut Vec::new(), &mut |node, path| {
        if shape_of(node, vector_param) == Shape::Scalar && !matches!(node, Expr::Compare { .. })
        {
            out.push(path.to_vec());
        }
    });
    out
}

/// Subtrees of the requested shape, cloned for grafting.
fn collect_subtrees(expr: &Expr, shape: Shape, vector_param: &str) -> Vec<Expr> {
    let mut out = Vec::new();
    walk(expr, &mut Vec::new(), &mut |node, _| {
        if shape_of(node, vector_param) == shape && !matches!(node, Expr::Compare { .. }) {
            out.push(node.clone());
        }
    });
    out
}

fn collect_constant_paths(expr: &Expr) -> Vec<Path> {
    let mut out = Vec::new();
    walk(expr, &mut Vec::new(), &mut |node, path| {
        if matches!(node, Expr::Num(_)) {
            out.push(path.to_vec());
        }
    });
    out
}

fn collect_operator_paths(expr: &Expr) -> Vec<Path> {
    let mut out = Vec::new();
    walk(expr, &mut Vec::new(), &mut |node, path| {
        if matches!(node, Expr::Binary { .. }) {
            out.push(path.to_vec());
        }
    });
    out
}

/// Internal nodes that can be replaced by a same-shape child, with the
/// subtree size as the sampling weight.
fn collect_shrinkable(expr: &Expr, vector_param: &str) -> Vec<(Path, usize)> {
    let mut out = Vec::new();
    walk(expr, &mut Vec::new(), &mut |node, path| {
        if !same_shape_children(node, vector_param).is_empty() {
            out.push((path.to_vec(), node.node_count()));
        }
    });
    out
}

fn same_shape_children<'a>(node: &'a Expr, vector_param: &str) -> Vec<&'a Expr> {
    let own = shape_of(node, vector_param);
    children(node)
        .into_iter()
        .filter(|c| shape_of(c, vector_param) == own && !matches!(c, Expr::Compare { .. }))
        .collect()
}

fn walk<'a>(expr: &'a Expr, path: &mut Path, visit: &mut impl FnMut(&'a Expr, &Path)) {
    visit(expr, path);
    for (i, child) in children(expr).into_iter().enumerate() {
        path.push(i);
        walk(child, path, visit);
        path.pop();
    }
}

/// One pass of algebraic identity folding; true when anything changed.
fn fold_identities(expr: &mut Expr) -> bool {
    let mut changed = false;
    for child in children_mut(expr) {
        changed |= fold_identities(child);
    }
    let replacement = match expr {
        Expr::Binary { op, lhs, rhs } => match (op, lhs.as_ref(), rhs.as_ref()) {
            (BinOp::Add, Expr::Num(a), Expr::Num(b)) => Some(Expr::Num(a + b)),
            (BinOp::Sub, Expr::Num(a), Expr::Num(b)) => Some(Expr::Num(a - b)),
            (BinOp::Mul, Expr::Num(a), Expr::Num(b)) => Some(Expr::Num(a * b)),
            (BinOp::Add, other, Expr::Num(z)) | (BinOp::Sub, other, Expr::Num(z))
                if *z == 0.0 =>
            {
                Some(other.clone())
            }
            (BinOp::Add, Expr::Num(z), other) if *z == 0.0 => Some(other.clone()),
            (BinOp::Mul, other, Expr::Num(one)) | (BinOp::Div, other, Expr::Num(one))
                if *one == 1.0 =>
            {
                Some(other.clone())
            }
            (BinOp::Mul, Expr::Num(one), other) if *one == 1.0 => Some(other.clone()),
            (BinOp::Mul, _, Expr::Num(z)) | (BinOp::Mul, Expr::Num(z), _) if *z == 0.0 => {
                Some(Expr::Num(0.0))
            }
            (BinOp::Pow, other, Expr::Num(one)) if *one == 1.0 => Some(other.clone()),
            _ => None,
        },
        _ => None,
    };
    if let Some(new_expr) = replacement {
        *expr = new_expr;
        changed = true;
    }
    changed
}
