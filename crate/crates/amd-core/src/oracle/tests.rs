use super::*;
use crate::distributions::MarginalDistribution;
use crate::dsl::{parse, HeuristicSignature};
use crate::evaluation::{score_revenue, Evaluator};
use crate::mechanisms::{vcg_unit_demand, DslPerBidderRule, SettingSpec};

/// Truthful multi-unit VCG with no redistribution: the canonical
/// strategy-proof reference.
struct PlainVcg {
    n: usize,
    m: usize,
}

impl Mechanism for PlainVcg {
    fn n_bidders(&self) -> usize {
        self.n
    }

    fn max_winners(&self) -> usize {
        self.m
    }

    fn outcome(&self, bids: &[f64]) -> Result<MechanismOutcome, crate::dsl::EvalError> {
        let (winners, payments) = vcg_unit_demand(bids, self.m);
        Ok(MechanismOutcome {
            winners: winners.to_vec(),
            payments: payments.to_vec(),
            redistribution: vec![0.0; self.n],
        })
    }
}

/// First-price single-item auction: manipulable, so the regret check
/// must find a profitable shading deviation.
struct PayYourBid {
    n: usize,
}

impl Mechanism for PayYourBid {
    fn n_bidders(&self) -> usize {
        self.n
    }

    fn max_winners(&self) -> usize {
        1
    }

    fn outcome(&self, bids: &[f64]) -> Result<MechanismOutcome, crate::dsl::EvalError> {
        let winner = crate::mechanisms::vcg_unit_demand(bids, 1).0[0];
        let mut outcome = MechanismOutcome::no_sale(self.n);
        outcome.winners.push(winner);
        outcome.payments[winner] = bids[winner];
        Ok(outcome)
    }
}

/// A rebate function applied with no fix at all: violates WBB.
struct UnfixedConstantRebate {
    n: usize,
    m: usize,
    rebate: f64,
}

impl Mechanism for UnfixedConstantRebate {
    fn n_bidders(&self) -> usize {
        self.n
    }

    fn max_winners(&self) -> usize {
        self.m
    }

    fn outcome(&self, bids: &[f64]) -> Result<MechanismOutcome, crate::dsl::EvalError> {
        let (winners, payments) = vcg_unit_demand(bids, self.m);
        Ok(MechanismOutcome {
            winners: winners.to_vec(),
            payments: payments.to_vec(),
            redistribution: vec![self.rebate; self.n],
        })
    }
}

#[test]
fn second_price_has_no_regret() {
    let mech = PlainVcg { n: 2, m: 1 };
    let regret = regret_grid(&mech, 0.1, 0.1).unwrap();
    assert!(regret <= 1e-9, "regret {regret}");
}

#[test]
fn multi_unit_vcg_has_no_regret() {
    let mech = PlainVcg { n: 4, m: 2 };
    let regret = regret_grid(&mech, 0.1, 0.1).unwrap();
    assert!(regret <= 1e-9, "regret {regret}");
}

#[test]
fn pay_your_bid_has_positive_regret() {
    let mech = PayYourBid { n: 2 };
    let regret = regret_grid(&mech, 0.1, 0.1).unwrap();
    assert!(regret > 0.05, "shading should be profitable, regret {regret}");
}

#[test]
fn unfixed_over_redistribution_violates_wbb() {
    let mech = UnfixedConstantRebate { n: 4, m: 2, rebate: 1.0 };
    let violation = wbb_check(&mech, 0.25).unwrap();
    assert!(violation > 1.0, "violation {violation}");
}

#[test]
fn corrected_cavallo_passes_every_criterion() {
    let program = parse(
        "def heuristic(others_bids): return 0.5 * min(others_bids)",
        HeuristicSignature::redistribution(),
    )
    .unwrap();
    let mech = FixedRedistribution::new(&program, None, 4, 2, 21, None);
    let report = verify_mechanism(&mech, 0.1, 0.1).unwrap();
    assert!(report.max_regret <= 1e-9, "{report:?}");
    assert!(report.max_wbb_violation <= 1e-6, "{report:?}");
    assert!(report.min_redistribution >= 0.0, "{report:?}");
    assert!(report.feasibility_ok);
}

#[test]
fn fixed_single_item_is_strategy_proof_on_grid() {
    let u = MarginalDistribution::uniform01();
    // Deliberately non-monotone score.
    let program = parse(
        "def heuristic(v): return v * (1 - v) - 0.1",
        HeuristicSignature::per_bidder_score(),
    )
    .unwrap();
    let rule = DslPerBidderRule::new(&program, Some(&u), 2, 0.05);
    let mech = FixedSingleItem { rule: &rule, n_bidders: 2, epsilon: 0.05 };
    let report = verify_mechanism(&mech, 0.05, 0.05).unwrap();
    assert!(report.max_regret <= 1e-9, "{report:?}");
    assert!(report.feasibility_ok);
}

#[test]
fn criteria_report_serializes() {
    let mech = PlainVcg { n: 2, m: 1 };
    let report = verify_mechanism(&mech, 0.2, 0.2).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    let back: CriteriaReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report, back);
}

#[test]
fn exhaustive_depth_one_and_two_behave() {
    let setting = SettingSpec::RediscoveryPerBidder {
        n_bidders: 2,
        distributions: vec![MarginalDistribution::uniform01()],
        epsilon: 0.01,
    };
    let evaluator = Evaluator::new(setting.clone(), 2000, 17);

    // Atoms only: {v, 0, 1}. The identity yields second-price revenue,
    // E[min of two uniforms] = 1/3; the constants never beat it.
    let space = RestrictedSpace::new(1, vec![0.0, 1.0]);
    let (best, score, enumerated) =
        exhaustive_small_search(&setting, &evaluator, &space).unwrap();
    assert_eq!(enumerated, 3);
    assert_eq!(best.source(), "def heuristic(v): return v");
    let direct = score_revenue(
        &parse("def heuristic(v): return v", HeuristicSignature::per_bidder_score()).unwrap(),
        &setting,
        2000,
        17,
        false,
    );
    assert_eq!(score.to_bits(), direct.score.to_bits());
    assert!((score - 1.0 / 3.0).abs() < 0.03, "identity scored {score}");

    // A deeper space can only improve on the shallower optimum (same
    // evaluator seed).
    let space2 = RestrictedSpace::new(2, vec![0.0, 1.0]);
    let (_, score2, enumerated2) =
        exhaustive_small_search(&setting, &evaluator, &space2).unwrap();
    assert!(enumerated2 > enumerated);
    assert!(score2 >= score - 1e-12, "depth-2 best {score2} under depth-1 {score}");
}

#[test]
fn exhaustive_space_cap_is_enforced() {
    let setting = SettingSpec::RediscoveryPerBidder {
        n_bidders: 2,
        distributions: vec![MarginalDistribution::uniform01()],
        epsilon: 0.01,
    };
    let evaluator = Evaluator::new(setting.clone(), 100, 17);
    let mut space = RestrictedSpace::new(3, vec![0.0, 0.5, 1.0]);
    space.cap = 500;
    match exhaustive_small_search(&setting, &evaluator, &space) {
        Err(ExhaustiveError::SpaceTooLarge(n, cap)) => {
            assert!(n > cap);
        }
        other => panic!("expected SpaceTooLarge, got {other:?}"),
    }
}

#[test]
fn single_item_feasibility_at_most_one_winner() {
    let u = MarginalDistribution::uniform01();
    let program =
        parse("def heuristic(v): return v - 0.3", HeuristicSignature::per_bidder_score())
            .unwrap();
    let rule = DslPerBidderRule::new(&program, Some(&u), 3, 0.1);
    let mech = FixedSingleItem { rule: &rule, n_bidders: 3, epsilon: 0.1 };
    let (_, feasible) = ir_feasibility_check(&mech, 0.1).unwrap();
    assert!(feasible);
}
