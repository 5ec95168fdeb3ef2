use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::distributions::MarginalDistribution;
use crate::dsl::{parse, HeuristicProgram, HeuristicSignature};

fn joint(source: &str) -> HeuristicProgram {
    parse(source, HeuristicSignature::joint_allocation()).expect("joint heuristic parses")
}

fn per_bidder(source: &str) -> HeuristicProgram {
    parse(source, HeuristicSignature::per_bidder_score()).expect("per-bidder heuristic parses")
}

fn rebate(source: &str) -> HeuristicProgram {
    parse(source, HeuristicSignature::redistribution()).expect("rebate heuristic parses")
}

const SIGMOID_JOINT: &str = "def heuristic(bids):\n  a = sigmoid(10 * (bids[0] - 0.5))\n  b = sigmoid(10 * (bids[1] - 0.5))\n  return [a, b, 1 - max(a, b)]";

const CAVALLO: &str = "def heuristic(others_bids): return 0.5 * min(others_bids)";

// --- critical price and the monotonicity fix ---------------------------

#[test]
fn critical_price_second_price_shape() {
    let program = joint("def heuristic(bids): return [bids[0], bids[1], 0]");
    let rule = DslJointRule::new(&program, None, 2);
    let bids = [0.6, 0.3];
    let price = critical_price(&rule, &bids, 0, 0.001).unwrap();
    assert!((price - 0.300).abs() < 1e-12, "price {price}");
}

#[test]
fn critical_price_clamps_to_zero_for_constant_winner() {
    let program = joint("def heuristic(bids): return [1, 0, 0]");
    let rule = DslJointRule::new(&program, None, 2);
    let price = critical_price(&rule, &[0.6, 0.3], 0, 0.001).unwrap();
    assert_eq!(price, 0.0);
}

#[test]
fn critical_price_sigmoid_threshold() {
    let program = joint(SIGMOID_JOINT);
    let rule = DslJointRule::new(&program, None, 2);
    let price = critical_price(&rule, &[0.7, 0.4], 0, 0.001).unwrap();
    assert!((price - 0.5).abs() < 1e-12, "price {price}");
}

#[test]
fn critical_price_is_epsilon_stable_on_monotone_heuristics() {
    let program = joint("def heuristic(bids): return [bids[0], bids[1], 0]");
    let rule = DslJointRule::new(&program, None, 2);
    let bids = [0.8, 0.437];
    let coarse = critical_price(&rule, &bids, 0, 0.01).unwrap();
    let fine = critical_price(&rule, &bids, 0, 0.001).unwrap();
    assert!((coarse - fine).abs() <= 10.0 * 0.001 + 1e-12, "{coarse} vs {fine}");
}

#[test]
fn solve_single_item_second_price_agrees_with_vcg() {
    let program = joint("def heuristic(bids): return [bids[0], bids[1], 0]");
    let rule = DslJointRule::new(&program, None, 2);
    let outcome = solve_single_item(&rule, &[0.6, 0.3], 0.001).unwrap();
    assert_eq!(outcome.winners, vec![0]);
    assert!((outcome.payments[0] - 0.3).abs() < 1e-9);

    let (winners, payments) = vcg_unit_demand(&[0.6, 0.3], 1);
    assert_eq!(outcome.winners, winners.to_vec());
    assert!((outcome.payments[0] - payments[0]).abs() < 1e-9);
}

#[test]
fn solve_single_item_no_sale_when_all_scores_negative() {
    let u = MarginalDistribution::uniform01();
    let program = per_bidder("def heuristic(v): return v - (1 - cdf(v)) / pdf(v)");
    let rule = DslPerBidderRule::new(&program, Some(&u), 2, 0.001);
    let outcome = solve_single_item(&rule, &[0.4, 0.3], 0.001).unwrap();
    assert!(outcome.winners.is_empty());
    assert_eq!(outcome.total_payment(), 0.0);
}

#[test]
fn solve_single_item_sigmoid_below_threshold_is_no_sale() {
    let program = joint(SIGMOID_JOINT);
    let rule = DslJointRule::new(&program, None, 2);
    let outcome = solve_single_item(&rule, &[0.45, 0.40], 0.001).unwrap();
    assert!(outcome.winners.is_empty());
}

#[test]
fn adapt_per_bidder_reproduces_the_no_sale_rule() {
    let u = MarginalDistribution::uniform01();
    let program = per_bidder("def heuristic(v): return v - (1 - cdf(v)) / pdf(v)");
    let scores = adapt_per_bidder(&program, &[0.8, 0.6], Some(&u)).unwrap();
    assert!((scores[0] - 0.6).abs() < 1e-12);
    assert!((scores[1] - 0.2).abs() < 1e-12);
    assert_eq!(scores[2], 0.0);
    assert_eq!(argmax_lowest(&scores), 0);

    let scores = adapt_per_bidder(&program, &[0.4, 0.3], Some(&u)).unwrap();
    assert!(scores[0] < 0.0 && scores[1] < 0.0);
    assert_eq!(argmax_lowest(&scores), 2);
}

#[test]
fn per_bidder_tie_at_zero_beats_the_no_sale_slot() {
    let program = per_bidder("def heuristic(v): return 0");
    let rule = DslPerBidderRule::new(&program, None, 2, 0.01);
    let outcome = solve_single_item(&rule, &[0.5, 0.2], 0.01).unwrap();
    // Scores are [0, 0, 0]: strict negativity is required for no-sale.
    assert_eq!(outcome.winners, vec![0]);
    assert_eq!(outcome.payments[0], 0.0);
}

#[test]
fn monotonicity_holds_on_the_grid_after_the_fix() {
    // A deliberately non-monotone heuristic: prefers mid-range bids.
    let program = joint(
        "def heuristic(bids):\n  a = bids[0] * (1 - bids[0])\n  b = bids[1] * (1 - bids[1])\n  return [a, b, 0.1]",
    );
    let rule = DslJointRule::new(&program, None, 2);
    let eps = 0.01;
    for other in [0.1, 0.35, 0.6] {
        let mut prev_won = false;
        for k in 0..=100 {
            let bid = k as f64 / 100.0;
            let outcome = solve_single_item(&rule, &[bid, other], eps).unwrap();
            let won = outcome.is_winner(0);
            assert!(
                !prev_won || won,
                "raising the bid to {bid} (other {other}) turned a win into a loss"
            );
            prev_won = won;
        }
    }
}

// --- VCG ----------------------------------------------------------------

/// Independent Clarke oracle: payment is the welfare others would get
/// without bidder i minus the welfare others get with i present.
fn clarke_payment_oracle(bids: &[f64], n_items: usize, bidder: usize) -> f64 {
    let top_sum = |values: &mut Vec<f64>, k: usize| -> f64 {
        values.sort_by(|a, b| b.total_cmp(a));
        values.iter().take(k).sum()
    };
    let mut without: Vec<f64> = bids
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != bidder)
        .map(|(_, b)| *b)
        .collect();
    let others_without_i = top_sum(&mut without, n_items);

    let (winners, _) = vcg_unit_demand(bids, n_items);
    if !winners.contains(&bidder) {
        return 0.0;
    }
    let others_with_i: f64 = winners.iter().filter(|&&w| w != bidder).map(|&w| bids[w]).sum();
    others_without_i - others_with_i
}

#[test]
fn vcg_examples() {
    let (winners, payments) = vcg_unit_demand(&[0.9, 0.7, 0.5, 0.2], 2);
    assert_eq!(winners.to_vec(), vec![0, 1]);
    assert!((payments[0] - 0.5).abs() < 1e-12);
    assert!((payments[1] - 0.5).abs() < 1e-12);
    assert_eq!(payments[2], 0.0);

    let (winners, payments) = vcg_unit_demand(&[0.6, 0.3], 1);
    assert_eq!(winners.to_vec(), vec![0]);
    assert!((payments[0] - 0.3).abs() < 1e-12);

    // All-equal bids: the documented tie-break picks the lowest indices
    // and everyone pays the common bid.
    let (winners, payments) = vcg_unit_demand(&[0.4, 0.4, 0.4, 0.4], 2);
    assert_eq!(winners.to_vec(), vec![0, 1]);
    assert!((payments[0] - 0.4).abs() < 1e-12);
    assert!((payments[1] - 0.4).abs() < 1e-12);
}

#[test]
fn vcg_matches_externality_oracle_by_brute_force() {
    // Full 0.1-grid enumeration for small n, thinned grids above to keep
    // the test quick.
    for (n, step) in [(2usize, 1usize), (3, 1), (4, 2), (5, 2), (6, 5)] {
        let levels: Vec<f64> = (0..=10).step_by(step).map(|k| k as f64 / 10.0).collect();
        let mut profile = vec![0.0; n];
        let mut index = vec![0usize; n];
        'profiles: loop {
            for (d, &i) in index.iter().enumerate() {
                profile[d] = levels[i];
            }
            for n_items in 1..=3.min(n - 1) {
                let (_, payments) = vcg_unit_demand(&profile, n_items);
                for bidder in 0..n {
                    let oracle = clarke_payment_oracle(&profile, n_items, bidder);
                    assert!(
                        (payments[bidder] - oracle).abs() < 1e-9,
                        "n={n} m={n_items} profile={profile:?} bidder={bidder}: {} vs {oracle}",
                        payments[bidder]
                    );
                }
            }
            for d in (0..n).rev() {
                index[d] += 1;
                if index[d] < levels.len() {
                    continue 'profiles;
                }
                index[d] = 0;
            }
            break;
        }
    }
}

// --- waterfilling -------------------------------------------------------

#[test]
fn waterfill_hand_traced_vector() {
    // Real-arithmetic trace: zero the 0.1, subtract 0.1 from the rest.
    // The input sits exactly on the branch tie sorted[0]*(n-j) == overflow,
    // where binary floating point cannot hit the decimal answer bit-for-bit,
    // so the check is at machine-accumulation tolerance.
    let fixed = waterfill(&[0.4, 0.3, 0.2, 0.1], 0.6);
    let expected = [0.3, 0.2, 0.1, 0.0];
    for (got, want) in fixed.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{:?}", fixed.to_vec());
    }
    let total: f64 = fixed.iter().sum();
    assert!((total - 0.6).abs() < 1e-12);
}

#[test]
fn waterfill_passthrough_when_underbudget() {
    let input = [0.2, 0.2, 0.2, 0.2];
    assert_eq!(waterfill(&input, 1.0).to_vec(), input.to_vec());
    let zeros = [0.0, 0.0, 0.0];
    assert_eq!(waterfill(&zeros, 0.5).to_vec(), zeros.to_vec());
}

#[test]
fn waterfill_random_cases_sum_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let input: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let payment: f64 = rng.gen::<f64>() * 2.0;
        let out = waterfill(&input, payment);
        let in_sum: f64 = input.iter().sum();
        let out_sum: f64 = out.iter().sum();
        assert!((out_sum - in_sum.min(payment)).abs() < 1e-9, "{out_sum} vs min({in_sum}, {payment})");
        for (o, i) in out.iter().zip(&input) {
            assert!(*o >= 0.0 && *o <= i + 1e-12);
        }
    }
}

// --- redistribution fixes ----------------------------------------------

#[test]
fn redistribution_vector_cavallo() {
    let program = rebate(CAVALLO);
    let vec = redistribution_vector(&program, &[0.9, 0.7, 0.5, 0.2], None).unwrap();
    let expected = [0.1, 0.1, 0.1, 0.25];
    for (got, want) in vec.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{vec:?}");
    }

    let zero = rebate("def heuristic(others_bids): return 0");
    let vec = redistribution_vector(&zero, &[0.9, 0.7, 0.5, 0.2], None).unwrap();
    assert!(vec.iter().all(|v| *v == 0.0));
}

#[test]
fn redistribution_component_ignores_own_bid() {
    let program = rebate("def heuristic(others_bids): return 0.3 * mean(others_bids)");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let bids: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
        let base = redistribution_vector(&program, &bids, None).unwrap();
        for i in 0..4 {
            let mut perturbed = bids.clone();
            perturbed[i] = rng.gen();
            let out = redistribution_vector(&program, &perturbed, None).unwrap();
            assert_eq!(out[i], base[i], "component {i} moved with its own bid");
        }
    }
}

#[test]
fn corrected_fix_is_identity_for_cavallo() {
    let program = rebate(CAVALLO);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let bids: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
        let raw = redistribution_vector(&program, &bids, None).unwrap();
        let outcome = corrected_fix(&program, &bids, 2, 101, None).unwrap();
        for (fixed, r) in outcome.redistribution.iter().zip(&raw) {
            assert!((fixed - r).abs() < 1e-12, "Cavallo needed no fix but got a deduction");
        }
    }
}

#[test]
fn corrected_fix_restores_wbb_for_constant_over_redistribution() {
    let program = rebate("def heuristic(others_bids): return 1.0");
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for _ in 0..1000 {
        let bids: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
        let outcome = corrected_fix(&program, &bids, 2, 101, None).unwrap();
        assert!(
            outcome.total_redistribution() <= outcome.total_payment() + 1e-9,
            "WBB violated at {bids:?}"
        );
        assert!(outcome.redistribution.iter().all(|r| *r >= 0.0));
    }
}

#[test]
fn corrected_fix_of_constant_one_recovers_cavallo_form() {
    // Deduction for `return 1` is 1 - min(others)/2 (the waterfilling at
    // the zero probe), so the fixed rebate is exactly Cavallo's.
    let program = rebate("def heuristic(others_bids): return 1.0");
    let bids = [0.9, 0.7, 0.5, 0.2];
    let outcome = corrected_fix(&program, &bids, 2, 101, None).unwrap();
    let cavallo = [0.1, 0.1, 0.1, 0.25];
    for (got, want) in outcome.redistribution.iter().zip(cavallo) {
        assert!((got - want).abs() < 1e-9, "{:?}", outcome.redistribution);
    }
}

#[test]
fn corrected_fix_zero_program_zero_outcome() {
    let program = rebate("def heuristic(others_bids): return 0");
    let outcome = corrected_fix(&program, &[0.9, 0.7, 0.5, 0.2], 2, 101, None).unwrap();
    assert!(outcome.redistribution.iter().all(|r| *r == 0.0));
    assert!((outcome.total_payment() - 1.0).abs() < 1e-12);
}

#[test]
fn corrected_fix_deduction_is_own_bid_independent() {
    let program = rebate("def heuristic(others_bids): return 0.4 * max(others_bids)");
    let bids = [0.85, 0.6, 0.35, 0.1];
    let base = corrected_fix(&program, &bids, 2, 51, None).unwrap();
    for i in 0..4 {
        for replacement in [0.0, 0.42, 1.0] {
            let mut moved = bids;
            moved[i] = replacement;
            let outcome = corrected_fix(&program, &moved, 2, 51, None).unwrap();
            assert_eq!(
                outcome.redistribution[i], base.redistribution[i],
                "bidder {i} deduction changed with own bid"
            );
        }
    }
}

#[test]
fn reverse_waterfill_zero_surplus_is_identity() {
    let program = rebate(CAVALLO);
    let bids = [0.0, 0.0, 0.0, 0.0];
    let outcome = corrected_fix(&program, &bids, 2, 101, None).unwrap();
    let reversed =
        reverse_waterfill(&outcome, &program, &bids, 2, 101, ReverseAggregation::Max, None)
            .unwrap();
    assert_eq!(outcome, reversed);
}

#[test]
fn reverse_waterfill_cavallo_addback_bounds() {
    let program = rebate(CAVALLO);
    let bids = [0.9, 0.7, 0.5, 0.2];
    let outcome = corrected_fix(&program, &bids, 2, 101, None).unwrap();
    assert!((outcome.total_payment() - 1.0).abs() < 1e-12);
    assert!((outcome.total_redistribution() - 0.55).abs() < 1e-12);

    let reversed =
        reverse_waterfill(&outcome, &program, &bids, 2, 101, ReverseAggregation::Min, None)
            .unwrap();
    let surplus = outcome.total_payment() - outcome.total_redistribution();
    for i in 0..4 {
        let addback = reversed.redistribution[i] - outcome.redistribution[i];
        assert!(addback >= 0.0);
        assert!(
            addback <= surplus / 4.0 + 1e-12,
            "min-aggregated add-back {addback} exceeds the realized share"
        );
    }
}

#[test]
fn reverse_waterfill_min_aggregation_keeps_wbb_on_grid_profiles() {
    let program = rebate("def heuristic(others_bids): return 0.6 * median(others_bids)");
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    for _ in 0..60 {
        // Profiles on the fix grid so the realized bid is among the probes.
        let bids: Vec<f64> = (0..4).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
        let outcome = corrected_fix(&program, &bids, 2, 101, None).unwrap();
        let reversed =
            reverse_waterfill(&outcome, &program, &bids, 2, 101, ReverseAggregation::Min, None)
                .unwrap();
        assert!(
            reversed.total_redistribution() <= reversed.total_payment() + 1e-9,
            "WBB violated at {bids:?}"
        );
    }
}

// --- Myerson baselines --------------------------------------------------

#[test]
fn myerson_uniform_examples() {
    let u = [MarginalDistribution::uniform01()];
    let outcome = myerson_optimal(&u, &[0.8, 0.6], false, 0.001).unwrap();
    assert_eq!(outcome.winners, vec![0]);
    assert!((outcome.payments[0] - 0.6).abs() < 1e-9, "{}", outcome.payments[0]);

    let outcome = myerson_optimal(&u, &[0.4, 0.3], false, 0.001).unwrap();
    assert!(outcome.winners.is_empty());

    // Reserve price binds when the opponent is below it.
    let outcome = myerson_optimal(&u, &[0.8, 0.2], false, 0.001).unwrap();
    assert_eq!(outcome.winners, vec![0]);
    assert!((outcome.payments[0] - 0.5).abs() < 1e-9);
}

#[test]
fn virtual_valuation_heuristic_equals_myerson_on_profile_grid() {
    let u = MarginalDistribution::uniform01();
    let marginals = [u.clone()];
    let program = per_bidder("def heuristic(v): return v - (1 - cdf(v)) / pdf(v)");
    let eps = 0.001;
    let rule = DslPerBidderRule::new(&program, Some(&u), 2, eps);
    for i in 0..=20 {
        for j in 0..=20 {
            let bids = [i as f64 / 20.0, j as f64 / 20.0];
            let ours = solve_single_item(&rule, &bids, eps).unwrap();
            let myerson = myerson_optimal(&marginals, &bids, false, eps).unwrap();
            assert_eq!(ours.winners, myerson.winners, "winners differ at {bids:?}");
            for b in 0..2 {
                assert!(
                    (ours.payments[b] - myerson.payments[b]).abs() <= eps + 1e-12,
                    "payment differs at {bids:?}: {} vs {}",
                    ours.payments[b],
                    myerson.payments[b]
                );
            }
        }
    }
}

#[test]
fn setting_spec_validation() {
    let ok = SettingSpec::VcgRedistribution {
        n_bidders: 4,
        n_items: 2,
        distribution: MarginalDistribution::uniform01(),
        fix_grid_resolution: 101,
        reverse_fix: ReverseFixMode::Off,
    };
    assert!(ok.validate().is_ok());
    assert_eq!(ok.signature(), HeuristicSignature::redistribution());

    let bad = SettingSpec::VcgRedistribution {
        n_bidders: 2,
        n_items: 2,
        distribution: MarginalDistribution::uniform01(),
        fix_grid_resolution: 101,
        reverse_fix: ReverseFixMode::Off,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn goal_function_interpolation() {
    // Tabulate f(x, y) = x + 2y on a coarse grid; multilinear
    // interpolation is exact for multilinear functions.
    let grids = vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 0.5, 1.0]];
    let goal = GoalFunction::tabulate(grids, Metric::L2, |p| p[0] + 2.0 * p[1]).unwrap();
    assert_eq!(goal.input_dim(), 2);
    for (x, y) in [(0.1, 0.9), (0.77, 0.33), (0.0, 1.0), (1.0, 0.0)] {
        let got = goal.eval(&[x, y]);
        assert!((got - (x + 2.0 * y)).abs() < 1e-12, "at ({x},{y}): {got}");
    }
    // Clamping outside the grid range.
    assert!((goal.eval(&[-0.5, 2.0]) - 2.0).abs() < 1e-12);

    // JSON round trip.
    let text = goal.to_json();
    let back = GoalFunction::from_json(&text).unwrap();
    assert_eq!(goal, back);
}
