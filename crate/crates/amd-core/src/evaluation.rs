//! Monte Carlo scoring of heuristics under a setting.
//!
//! The score is the fitness driving evolution: expected revenue for
//! single-item settings, expected total redistribution for VCG
//! settings, and the negated distance to the goal function in
//! distillation mode. A heuristic whose evaluation fails anywhere in the
//! batch is rejected outright — no DSL error ever surfaces as a numeric
//! score. Per-sample work may run on several threads, but samples are
//! collected in batch order and reduced sequentially, so a report is
//! bitwise identical regardless of worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::BidDistribution;
use crate::dsl::{EvalError, HeuristicProgram};
use crate::mechanisms::{
    solve_single_item, DslJointRule, DslPerBidderRule, RedistributionFixer,
    ReverseAggregation, ReverseFixMode, SettingSpec,
};

/// Score assigned to rejected candidates: ordered below every finite
/// score and never stored in the program database.
pub const REJECTION_SCORE: f64 = f64::NEG_INFINITY;

/// Outcome of scoring one heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub score: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub rejected: bool,
    pub rejection_reason: Option<String>,
    /// Per-sample score components, in batch order, when requested.
    pub trace: Option<Vec<f64>>,
}

impl EvaluationReport {
    fn rejected(n_samples: usize, seed: u64, reason: &EvalError) -> Self {
        Self {
            score: REJECTION_SCORE,
            n_samples,
            seed,
            rejected: true,
            rejection_reason: Some(reason.to_string()),
            trace: None,
        }
    }

    fn from_samples(values: Vec<f64>, n_samples: usize, seed: u64, keep_trace: bool) -> Self {
        let score = mean_ordered(&values);
        Self {
            score,
            n_samples,
            seed,
            rejected: false,
            rejection_reason: None,
            trace: keep_trace.then_some(values),
        }
    }

    /// Write the per-sample trace as `sample_index,score_component` CSV.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sample_index,score_component")?;
        if let Some(trace) = &self.trace {
            for (i, v) in trace.iter().enumerate() {
                writeln!(out, "{i},{v}")?;
            }
        }
        Ok(())
    }
}

/// Fixed reduction order: plain left-to-right sum over the batch.
fn mean_ordered(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Evaluate every sample, keeping batch order, and reject on the first
/// error in that order (deterministic under any parallel schedule).
fn collect_samples<F>(n: usize, per_sample: F) -> Result<Vec<f64>, EvalError>
where
    F: Fn(usize) -> Result<f64, EvalError> + Sync + Send,
{
    let results: Vec<Result<f64, EvalError>> = (0..n).into_par_iter().map(per_sample).collect();
    let mut values = Vec::with_capacity(n);
    for r in results {
        values.push(r?);
    }
    Ok(values)
}

/// Scoring configuration: the setting plus sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluator {
    pub setting: SettingSpec,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub keep_trace: bool,
}

impl Evaluator {
    pub fn new(setting: SettingSpec, n_samples: usize, seed: u64) -> Self {
        Self { setting, n_samples, seed, keep_trace: false }
    }

    /// Default batch sizes: 3000 for redistribution, 10000 for
    /// single-item revenue settings.
    pub fn default_samples(setting: &SettingSpec) -> usize {
        match setting {
            SettingSpec::VcgRedistribution { .. } => 3000,
            SettingSpec::Distillation { inner, .. } => Self::default_samples(inner),
            _ => 10_000,
        }
    }

    pub fn score(&self, program: &HeuristicProgram) -> EvaluationReport {
        match &self.setting {
            SettingSpec::SingleItemRevenue { .. } | SettingSpec::RediscoveryPerBidder { .. } => {
                score_revenue(program, &self.setting, self.n_samples, self.seed, self.keep_trace)
            }
            SettingSpec::VcgRedistribution { .. } => score_redistribution(
                program,
                &self.setting,
                self.n_samples,
                self.seed,
                self.keep_trace,
            ),
            SettingSpec::Distillation { .. } => score_distillation(
                program,
                &self.setting,
                self.n_samples,
                self.seed,
                self.keep_trace,
            ),
        }
    }
}

/// Mean revenue of the fixed single-item mechanism over a seeded batch.
/// Rediscovery settings with several distributions score each separately
/// (distribution k uses seed + k) and combine by unweighted mean.
pub fn score_revenue(
    program: &HeuristicProgram,
    setting: &SettingSpec,
    n_samples: usize,
    seed: u64,
    keep_trace: bool,
) -> EvaluationReport {
    match setting {
        SettingSpec::SingleItemRevenue { n_bidders, distribution, epsilon } => {
            let batch = distribution.sample(*n_bidders, n_samples, seed);
            let hooks = distribution
                .shared_marginal()
                .map(|m| m as &dyn crate::dsl::DistributionHooks);
            let rule = DslJointRule::new(program, hooks, *n_bidders);
            let samples = collect_samples(batch.profiles.len(), |i| {
                solve_single_item(&rule, &batch.profiles[i], *epsilon)
                    .map(|outcome| outcome.total_payment())
            });
            match samples {
                Ok(values) => EvaluationReport::from_samples(values, n_samples, seed, keep_trace),
                Err(e) => EvaluationReport::rejected(n_samples, seed, &e),
            }
        }
        SettingSpec::RediscoveryPerBidder { n_bidders, distributions, epsilon } => {
            let mut all = Vec::with_capacity(n_samples * distributions.len());
            let mut per_dist_means = Vec::with_capacity(distributions.len());
            for (k, marginal) in distributions.iter().enumerate() {
                let dist_seed = seed.wrapping_add(k as u64);
                let batch = BidDistribution::Iid(marginal.clone())
                    .sample(*n_bidders, n_samples, dist_seed);
                let rule = DslPerBidderRule::new(program, Some(marginal), *n_bidders, *epsilon);
                let samples = collect_samples(batch.profiles.len(), |i| {
                    solve_single_item(&rule, &batch.profiles[i], *epsilon)
                        .map(|outcome| outcome.total_payment())
                });
                match samples {
                    Ok(values) => {
                        per_dist_means.push(mean_ordered(&values));
                        all.extend(values);
                    }
                    Err(e) => return EvaluationReport::rejected(n_samples, seed, &e),
                }
            }
            let score = mean_ordered(&per_dist_means);
            EvaluationReport {
                score,
                n_samples,
                seed,
                rejected: false,
                rejection_reason: None,
                trace: keep_trace.then_some(all),
            }
        }
        _ => panic!("score_revenue requires a revenue setting"),
    }
}

/// Mean total fixed redistribution over a seeded batch.
pub fn score_redistribution(
    program: &HeuristicProgram,
    setting: &SettingSpec,
    n_samples: usize,
    seed: u64,
    keep_trace: bool,
) -> EvaluationReport {
    let SettingSpec::VcgRedistribution {
        n_bidders,
        n_items,
        distribution,
        fix_grid_resolution,
        reverse_fix,
    } = setting
    else {
        panic!("score_redistribution requires a redistribution setting");
    };
    let batch = BidDistribution::Iid(distribution.clone()).sample(*n_bidders, n_samples, seed);
    let fixer = RedistributionFixer::new(
        program,
        Some(distribution),
        *n_bidders,
        *n_items,
        *fix_grid_resolution,
    );
    let samples = collect_samples(batch.profiles.len(), |i| {
        let bids = &batch.profiles[i];
        let mut outcome = fixer.corrected(bids)?;
        let aggregation = match reverse_fix {
            ReverseFixMode::Off => None,
            ReverseFixMode::Max => Some(ReverseAggregation::Max),
            ReverseFixMode::Min => Some(ReverseAggregation::Min),
        };
        if let Some(aggregation) = aggregation {
            let addback = fixer.reverse_addback(bids, aggregation)?;
            for (r, a) in outcome.redistribution.iter_mut().zip(addback) {
                *r += a;
            }
        }
        Ok(outcome.total_redistribution())
    });
    match samples {
        Ok(values) => EvaluationReport::from_samples(values, n_samples, seed, keep_trace),
        Err(e) => EvaluationReport::rejected(n_samples, seed, &e),
    }
}

/// Negated mean distance between the heuristic and the tabulated goal on
/// inputs generated exactly as the inner setting would feed them.
pub fn score_distillation(
    program: &HeuristicProgram,
    setting: &SettingSpec,
    n_samples: usize,
    seed: u64,
    keep_trace: bool,
) -> EvaluationReport {
    let SettingSpec::Distillation { inner, goal, metric } = setting else {
        panic!("score_distillation requires a distillation setting");
    };
    match inner.as_ref() {
        SettingSpec::VcgRedistribution { n_bidders, distribution, .. } => {
            let batch =
                BidDistribution::Iid(distribution.clone()).sample(*n_bidders, n_samples, seed);
            let n = *n_bidders;
            let samples = collect_samples(batch.profiles.len(), |i| {
                let bids = &batch.profiles[i];
                // One interpolation query per bidder: the sorted others.
                let mut acc = 0.0;
                for bidder in 0..n {
                    let mut others: Vec<f64> = bids
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != bidder)
                        .map(|(_, b)| *b)
                        .collect();
                    others.sort_by(|a, b| a.total_cmp(b));
                    let got = eval_scalar_on(program, &others, Some(distribution))?;
                    acc += metric.distance(got, goal.eval(&others));
                }
                Ok(acc / n as f64)
            });
            negate_report(samples, n_samples, seed, keep_trace)
        }
        SettingSpec::RediscoveryPerBidder { n_bidders, distributions, .. } => {
            let marginal = &distributions[0];
            let batch =
                BidDistribution::Iid(marginal.clone()).sample(*n_bidders, n_samples, seed);
            let samples = collect_samples(batch.profiles.len(), |i| {
                let bids = &batch.profiles[i];
                let mut acc = 0.0;
                for &v in bids {
                    let got = eval_scalar_on_scalar(program, v, Some(marginal))?;
                    acc += metric.distance(got, goal.eval(&[v]));
                }
                Ok(acc / bids.len() as f64)
            });
            negate_report(samples, n_samples, seed, keep_trace)
        }
        _ => panic!("distillation supports scalar-output inner settings"),
    }
}

fn negate_report(
    samples: Result<Vec<f64>, EvalError>,
    n_samples: usize,
    seed: u64,
    keep_trace: bool,
) -> EvaluationReport {
    match samples {
        Ok(mut values) => {
            for v in values.iter_mut() {
                *v = -*v;
            }
            EvaluationReport::from_samples(values, n_samples, seed, keep_trace)
        }
        Err(e) => EvaluationReport::rejected(n_samples, seed, &e),
    }
}

fn eval_scalar_on(
    program: &HeuristicProgram,
    input: &[f64],
    hooks: Option<&crate::distributions::MarginalDistribution>,
) -> Result<f64, EvalError> {
    use crate::dsl::{evaluate, EvalContext, Value, DEFAULT_STEP_BUDGET};
    let mut ctx = EvalContext::new()
        .bind(&program.params()[0], Value::vector(input))
        .with_budget(DEFAULT_STEP_BUDGET);
    if let Some(hooks) = hooks {
        ctx = ctx.with_distribution(hooks);
    }
    evaluate(program, &ctx)?
        .as_scalar()
        .ok_or_else(|| EvalError::Shape("distillation target must return a scalar".into()))
}

fn eval_scalar_on_scalar(
    program: &HeuristicProgram,
    input: f64,
    hooks: Option<&crate::distributions::MarginalDistribution>,
) -> Result<f64, EvalError> {
    use crate::dsl::{evaluate, EvalContext, Value, DEFAULT_STEP_BUDGET};
    let mut ctx = EvalContext::new()
        .bind(&program.params()[0], Value::Scalar(input))
        .with_budget(DEFAULT_STEP_BUDGET);
    if let Some(hooks) = hooks {
        ctx = ctx.with_distribution(hooks);
    }
    evaluate(program, &ctx)?
        .as_scalar()
        .ok_or_else(|| EvalError::Shape("distillation target must return a scalar".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::MarginalDistribution;
    use crate::dsl::{parse, HeuristicSignature};
    use crate::mechanisms::{GoalFunction, Metric};

    fn uniform_rediscovery(n_bidders: usize) -> SettingSpec {
        SettingSpec::RediscoveryPerBidder {
            n_bidders,
            distributions: vec![MarginalDistribution::uniform01()],
            epsilon: 0.001,
        }
    }

    fn cavallo_setting() -> SettingSpec {
        SettingSpec::VcgRedistribution {
            n_bidders: 4,
            n_items: 2,
            distribution: MarginalDistribution::uniform01(),
            fix_grid_resolution: 101,
            reverse_fix: ReverseFixMode::Off,
        }
    }

    #[test]
    fn virtual_valuation_scores_near_myerson_revenue() {
        let program = parse(
            "def heuristic(v): return v - (1 - cdf(v)) / pdf(v)",
            HeuristicSignature::per_bidder_score(),
        )
        .unwrap();
        // Closed form for two uniform bidders: 5/12.
        let report = score_revenue(&program, &uniform_rediscovery(2), 100_000, 11, false);
        assert!(!report.rejected);
        assert!((report.score - 5.0 / 12.0).abs() < 0.01, "score {}", report.score);
    }

    #[test]
    fn never_selling_scores_zero() {
        let program =
            parse("def heuristic(v): return -1", HeuristicSignature::per_bidder_score()).unwrap();
        let report = score_revenue(&program, &uniform_rediscovery(2), 2000, 3, false);
        assert_eq!(report.score, 0.0);
    }

    #[test]
    fn cavallo_redistribution_score_near_half() {
        let program = parse(
            "def heuristic(others_bids): return 0.5 * min(others_bids)",
            HeuristicSignature::redistribution(),
        )
        .unwrap();
        let report = score_redistribution(&program, &cavallo_setting(), 3000, 5, false);
        assert!(!report.rejected);
        assert!((report.score - 0.5).abs() < 0.02, "score {}", report.score);
    }

    #[test]
    fn zero_program_scores_zero_redistribution() {
        let program = parse(
            "def heuristic(others_bids): return 0",
            HeuristicSignature::redistribution(),
        )
        .unwrap();
        let report = score_redistribution(&program, &cavallo_setting(), 500, 5, false);
        assert_eq!(report.score, 0.0);
    }

    #[test]
    fn grossly_infeasible_program_is_capped_by_payments() {
        let program = parse(
            "def heuristic(others_bids): return 10",
            HeuristicSignature::redistribution(),
        )
        .unwrap();
        let report = score_redistribution(&program, &cavallo_setting(), 2000, 5, false);
        assert!(!report.rejected);
        // Mean total payment is 2 E[third order statistic of 4] = 0.8.
        assert!(report.score <= 0.8 + 0.03, "score {}", report.score);
    }

    #[test]
    fn rejection_never_surfaces_as_a_number() {
        let program = parse(
            "def heuristic(v): return 1 / (v - v)",
            HeuristicSignature::per_bidder_score(),
        )
        .unwrap();
        let report = score_revenue(&program, &uniform_rediscovery(2), 100, 5, false);
        assert!(report.rejected);
        assert_eq!(report.score, REJECTION_SCORE);
        assert!(report.rejection_reason.is_some());
    }

    #[test]
    fn reports_are_bitwise_deterministic() {
        let program = parse(
            "def heuristic(others_bids): return 0.5 * min(others_bids)",
            HeuristicSignature::redistribution(),
        )
        .unwrap();
        let a = score_redistribution(&program, &cavallo_setting(), 400, 77, true);
        let b = score_redistribution(&program, &cavallo_setting(), 400, 77, true);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn multi_distribution_score_is_the_unweighted_mean() {
        let program = parse(
            "def heuristic(v): return v - (1 - cdf(v)) / pdf(v)",
            HeuristicSignature::per_bidder_score(),
        )
        .unwrap();
        // Distributions with positive density at the top of the support:
        // the critical-price scan starts its probes at 1.0, and a
        // division-by-pdf heuristic must stay evaluable there.
        let dists = vec![
            MarginalDistribution::uniform01(),
            MarginalDistribution::Beta { alpha: 2.0, beta: 1.0 },
        ];
        let combined = SettingSpec::RediscoveryPerBidder {
            n_bidders: 2,
            distributions: dists.clone(),
            epsilon: 0.01,
        };
        let seed = 42;
        let report = score_revenue(&program, &combined, 500, seed, false);
        let mut singles = Vec::new();
        for (k, d) in dists.into_iter().enumerate() {
            let single = SettingSpec::RediscoveryPerBidder {
                n_bidders: 2,
                distributions: vec![d],
                epsilon: 0.01,
            };
            singles.push(
                score_revenue(&program, &single, 500, seed.wrapping_add(k as u64), false).score,
            );
        }
        let expected = (singles[0] + singles[1]) / 2.0;
        assert!((report.score - expected).abs() < 1e-15);
    }

    #[test]
    fn batch_stability_for_cavallo() {
        let program = parse(
            "def heuristic(others_bids): return 0.5 * min(others_bids)",
            HeuristicSignature::redistribution(),
        )
        .unwrap();
        let small = score_redistribution(&program, &cavallo_setting(), 1500, 9, true);
        let large = score_redistribution(&program, &cavallo_setting(), 3000, 9, true);
        let trace = small.trace.as_ref().unwrap();
        let var = trace.iter().map(|v| (v - small.score).powi(2)).sum::<f64>()
            / (trace.len() - 1) as f64;
        let se = (var / trace.len() as f64).sqrt();
        assert!(
            (large.score - small.score).abs() < 2.0 * se + 1e-9,
            "doubling the batch moved the score by {} (se {se})",
            (large.score - small.score).abs()
        );
    }

    #[test]
    fn distillation_exact_match_scores_zero() {
        let grids = vec![
            (0..=20).map(|k| k as f64 / 20.0).collect::<Vec<_>>(),
            (0..=20).map(|k| k as f64 / 20.0).collect::<Vec<_>>(),
            (0..=20).map(|k| k as f64 / 20.0).collect::<Vec<_>>(),
        ];
        let goal = GoalFunction::tabulate(grids, Metric::L2, |p| {
            0.5 * p.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .unwrap();
        let setting = SettingSpec::Distillation {
            inner: Box::new(cavallo_setting()),
            goal,
            metric: Metric::L2,
        };
        let program = parse(
            "def heuristic(others_bids): return 0.5 * min(others_bids)",
            HeuristicSignature::redistribution(),
        )
        .unwrap();
        let report = score_distillation(&program, &setting, 2000, 13, false);
        assert!(!report.rejected);
        // Off-grid sampling leaves only the multilinear interpolation
        // error on cells straddling order boundaries.
        assert!(report.score <= 0.0);
        assert!(report.score > -1e-4, "score {}", report.score);
    }

    #[test]
    fn distillation_constant_gap_is_squared_distance() {
        let grids = vec![vec![0.0, 0.5, 1.0]];
        let goal = GoalFunction::tabulate(grids, Metric::L2, |_| 0.75).unwrap();
        let setting = SettingSpec::Distillation {
            inner: Box::new(uniform_rediscovery(2)),
            goal,
            metric: Metric::L2,
        };
        let program =
            parse("def heuristic(v): return 0", HeuristicSignature::per_bidder_score()).unwrap();
        let report = score_distillation(&program, &setting, 500, 3, false);
        assert!((report.score + 0.75 * 0.75).abs() < 1e-12, "score {}", report.score);
    }
}
