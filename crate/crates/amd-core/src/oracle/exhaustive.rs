//! Exhaustive search over a restricted program space.
//!
//! Enumerates every scalar expression up to a depth bound over a finite
//! constant set, scores each with the standard evaluator (fixed seed),
//! and returns the best. Used as an independent optimum the evolutionary
//! engine must approach on the same evaluator.
//!
//! Depth counts nested nodes: leaves (the input variable, constants)
//! have depth 1, a call or operator is one more than its deepest child.
//! The space covers arithmetic, negation, the scalar builtins (with the
//! distribution builtins included only for per-bidder settings, where
//! they carry the signal), and for redistribution settings the vector
//! reducers and constant indexing as depth-2 atoms. Conditionals are
//! excluded to keep the space enumerable.

use rayon::prelude::*;

use crate::dsl::{BinOp, Builtin, Expr, HeuristicProgram, SignatureKind};
use crate::evaluation::Evaluator;
use crate::mechanisms::SettingSpec;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ExhaustiveError {
    #[error("search space holds at least {0} programs, above the cap of {1}")]
    SpaceTooLarge(usize, usize),
    #[error("setting evolves {0:?} heuristics, which the enumerator does not cover")]
    UnsupportedSignature(SignatureKind),
    #[error("every enumerated program was rejected by the evaluator")]
    NothingScored,
}

/// The restricted grammar: depth bound, constants, and enumeration cap.
#[derive(Debug, Clone)]
pub struct RestrictedSpace {
    pub depth: usize,
    pub constants: Vec<f64>,
    pub cap: usize,
}

impl RestrictedSpace {
    pub fn new(depth: usize, constants: Vec<f64>) -> Self {
        Self { depth, constants, cap: 100_000 }
    }
}

const UNARY_COMMON: &[Builtin] =
    &[Builtin::Abs, Builtin::Exp, Builtin::Log, Builtin::Sqrt, Builtin::Sigmoid];
const UNARY_DISTRIBUTION: &[Builtin] = &[Builtin::Pdf, Builtin::Cdf, Builtin::Survival];
const REDUCERS: &[Builtin] =
    &[Builtin::Min, Builtin::Max, Builtin::Sum, Builtin::Mean, Builtin::Median];
const BINOPS: &[BinOp] = &[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow];

/// Enumerate the restricted space and return the best program with its
/// score and the number of programs enumerated.
pub fn exhaustive_small_search(
    setting: &SettingSpec,
    evaluator: &Evaluator,
    space: &RestrictedSpace,
) -> Result<(HeuristicProgram, f64, usize), ExhaustiveError> {
    let signature = setting.signature();
    let (param, input_len) = match signature.kind {
        SignatureKind::PerBidderScore => ("v", 0),
        SignatureKind::Redistribution => ("others_bids", setting.n_bidders() - 1),
        SignatureKind::JointAllocation => {
            return Err(ExhaustiveError::UnsupportedSignature(signature.kind))
        }
    };

    // Atoms by exact depth.
    let mut atoms_depth1: Vec<Expr> =
        space.constants.iter().map(|c| Expr::Num(*c)).collect();
    let mut atoms_depth2: Vec<Expr> = Vec::new();
    match signature.kind {
        SignatureKind::PerBidderScore => atoms_depth1.push(Expr::Var(param.into())),
        SignatureKind::Redistribution => {
            for builtin in REDUCERS {
                atoms_depth2.push(Expr::Call {
                    builtin: *builtin,
                    args: vec![Expr::Var(param.into())],
                });
            }
            for k in 0..input_len {
                atoms_depth2.push(Expr::Index {
                    base: Box::new(Expr::Var(param.into())),
                    index: Box::new(Expr::Num(k as f64)),
                });
            }
        }
        SignatureKind::JointAllocation => unreachable!(),
    }
    let unaries: Vec<Builtin> = match signature.kind {
        SignatureKind::PerBidderScore => {
            UNARY_COMMON.iter().chain(UNARY_DISTRIBUTION).copied().collect()
        }
        _ => UNARY_COMMON.to_vec(),
    };

    // by_depth[d] holds expressions of exact depth d+1.
    let mut by_depth: Vec<Vec<Expr>> = vec![atoms_depth1];
    let mut total = by_depth[0].len();
    for d in 2..=space.depth {
        let mut level: Vec<Expr> = Vec::new();
        if d == 2 {
            level.extend(atoms_depth2.iter().cloned());
        }
        let strictly_shallower: Vec<Expr> =
            by_depth[..d - 2].iter().flatten().cloned().collect();
        let exactly_previous = by_depth[d - 2].clone();
        // Unary nodes over expressions of exact depth d-1.
        for expr in &exactly_previous {
            level.push(Expr::Neg(Box::new(expr.clone())));
            for builtin in &unaries {
                level.push(Expr::Call { builtin: *builtin, args: vec![expr.clone()] });
            }
        }
        // Binary nodes whose deeper child has exact depth d-1: either the
        // left child is at d-1 (right anywhere shallower or equal), or
        // the left is strictly shallower and the right is at d-1.
        for op in BINOPS {
            for lhs in &exactly_previous {
                for rhs in strictly_shallower.iter().chain(&exactly_previous) {
                    level.push(Expr::Binary {
                        op: *op,
                        lhs: Box::new(lhs.clone()),
                        rhs: Box::new(rhs.clone()),
                    });
                }
            }
            for lhs in &strictly_shallower {
                for rhs in &exactly_previous {
                    level.push(Expr::Binary {
                        op: *op,
                        lhs: Box::new(lhs.clone()),
                        rhs: Box::new(rhs.clone()),
                    });
                }
            }
        }
        total += level.len();
        if total > space.cap {
            return Err(ExhaustiveError::SpaceTooLarge(total, space.cap));
        }
        by_depth.push(level);
    }

    let programs: Vec<HeuristicProgram> = by_depth
        .into_iter()
        .flatten()
        .map(|expr| {
            HeuristicProgram::from_parts(vec![param.to_string()], Vec::new(), expr, signature)
        })
        .collect();
    let enumerated = programs.len();

    // Score in parallel; ties resolve to the earliest program in
    // enumeration order so the result is deterministic.
    let scored: Vec<(usize, f64)> = programs
        .par_iter()
        .enumerate()
        .filter_map(|(i, program)| {
            let report = evaluator.score(program);
            (!report.rejected).then_some((i, report.score))
        })
        .collect();
    let best = scored
        .into_iter()
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        })
        .ok_or(ExhaustiveError::NothingScored)?;
    Ok((programs[best.0].clone(), best.1, enumerated))
}
