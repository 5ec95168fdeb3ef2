use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::distributions::MarginalDistribution;
use crate::dsl::HeuristicSignature;
use crate::evaluation::Evaluator;
use crate::mechanisms::SettingSpec;
use crate::proposers::SymbolicProposer;

fn test_config(max_iterations: u64) -> EvolutionConfig {
    EvolutionConfig {
        num_islands: 4,
        reset_period: ResetPeriod::Iterations(40),
        max_iterations,
        ..EvolutionConfig::default()
    }
}

fn rediscovery_setting() -> SettingSpec {
    SettingSpec::RediscoveryPerBidder {
        n_bidders: 2,
        distributions: vec![MarginalDistribution::uniform01()],
        epsilon: 0.01,
    }
}

fn candidate(source: &str, score: f64, island: Option<usize>) -> Candidate {
    Candidate {
        source: source.to_string(),
        score,
        iteration: 0,
        parents: Vec::new(),
        strategy: None,
        island,
    }
}

#[test]
fn temperature_schedule_matches_the_decay_rule() {
    assert!((temperature(0) - 0.1).abs() < 1e-12);
    assert!((temperature(15_000) - 0.05).abs() < 1e-12);
    assert_eq!(temperature(45_000), 0.0);
}

#[test]
fn cluster_key_rounds_to_three_decimals() {
    assert_eq!(cluster_key(0.5834), cluster_key(0.5835));
    assert_ne!(cluster_key(0.583), cluster_key(0.585));
    assert_eq!(cluster_key(0.4999), 499);
}

#[test]
fn register_round_robin_and_dedup() {
    let mut db = ProgramDatabase::new(test_config(10), HeuristicSignature::per_bidder_score());
    let a = db.register(candidate("def heuristic(v): return v", 0.3, None)).unwrap();
    assert_eq!(a.island, 0);
    let b = db.register(candidate("def heuristic(v): return 0", 0.0, None)).unwrap();
    assert_eq!(b.island, 1);

    // Identical canonical text in the same island deduplicates.
    let dup = db.register(candidate("def heuristic(v): return v", 0.3, Some(0)));
    assert!(matches!(dup, Err(RegisterError::DuplicateSource { island: 0 })));
    // The same text in another island is fine (islands are isolated).
    assert!(db.register(candidate("def heuristic(v): return v", 0.3, Some(2))).is_ok());
    assert_eq!(db.total_registered(), 3);

    // Rejected scores never reach the database.
    let bad = db.register(candidate("def heuristic(v): return v", f64::NEG_INFINITY, None));
    assert!(matches!(bad, Err(RegisterError::NonFiniteScore)));
}

#[test]
fn near_equal_scores_share_a_cluster() {
    let mut db = ProgramDatabase::new(test_config(10), HeuristicSignature::per_bidder_score());
    db.register(candidate("def heuristic(v): return v", 0.5834, Some(0))).unwrap();
    db.register(candidate("def heuristic(v): return v + 0", 0.5835, Some(0))).unwrap();
    let programs = db.programs();
    assert_eq!(programs[0].cluster, programs[1].cluster);
}

#[test]
fn sample_parents_prefers_best_cluster_at_zero_temperature() {
    let mut config = test_config(10);
    config.temperature_init = 0.0;
    let mut db = ProgramDatabase::new(config, HeuristicSignature::per_bidder_score());
    db.register(candidate("def heuristic(v): return 0", 0.0, Some(0))).unwrap();
    db.register(candidate("def heuristic(v): return v", 0.9, Some(0))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (parents, _) = db.sample_parents(0, 1, 0, &mut rng).unwrap();
        assert_eq!(parents[0].score, 0.9);
    }
}

#[test]
fn sample_parents_cycles_strategies_with_iteration() {
    let db = {
        let mut db =
            ProgramDatabase::new(test_config(10), HeuristicSignature::per_bidder_score());
        db.register(candidate("def heuristic(v): return v", 0.5, Some(0))).unwrap();
        db
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..10u64 {
        let (_, strategy) = db.sample_parents(0, 1, t, &mut rng).unwrap();
        assert_eq!(strategy, Some(((t % 5) + 1) as u8));
    }
}

#[test]
fn empty_island_is_an_error() {
    let db = ProgramDatabase::new(test_config(10), HeuristicSignature::per_bidder_score());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(db.sample_parents(0, 1, 0, &mut rng).is_err());
}

#[test]
fn reset_clears_worse_half_and_keeps_the_best() {
    let mut db = ProgramDatabase::new(test_config(100), HeuristicSignature::per_bidder_score());
    for (island, score) in [(0, 0.9), (1, 0.2), (2, 0.7), (3, 0.1)] {
        db.register(candidate(
            &format!("def heuristic(v): return v * {score}"),
            score,
            Some(island),
        ))
        .unwrap();
    }
    let best_before = db.best().unwrap().score;
    let report = db.reset_islands(50);
    // Worse half by best score: islands 1 and 3.
    assert_eq!(report.cleared, vec![1, 3]);
    assert_eq!(db.best().unwrap().score, best_before);
    // Cleared islands are reseeded with survivors' best copies; the old
    // population is retired, not resurrected.
    assert_eq!(report.reseeded_from.len(), 2);
    for island in [1usize, 3] {
        let members: Vec<_> = db
            .programs()
            .iter()
            .filter(|p| p.island == island && !p.retired)
            .collect();
        assert_eq!(members.len(), 1, "island {island} should hold exactly the reseed");
        assert!(members[0].iteration == 50);
    }

    // Persist/restore keeps retirement: cleared programs stay out.
    let mut buffer = Vec::new();
    db.save_jsonl(&mut buffer).unwrap();
    let restored = ProgramDatabase::load_jsonl(
        buffer.as_slice(),
        test_config(100),
        HeuristicSignature::per_bidder_score(),
    )
    .unwrap();
    assert_eq!(restored.programs(), db.programs());
}

#[test]
fn reset_handles_ties_by_island_index() {
    let mut db = ProgramDatabase::new(test_config(100), HeuristicSignature::per_bidder_score());
    for island in 0..4 {
        db.register(candidate("def heuristic(v): return v", 0.5, Some(island))).unwrap();
    }
    let report = db.reset_islands(10);
    // All tied: the lower-indexed islands survive.
    assert_eq!(report.cleared, vec![2, 3]);
    assert_eq!(db.best().unwrap().score, 0.5);
}

#[test]
fn database_jsonl_round_trip() {
    let mut db = ProgramDatabase::new(test_config(10), HeuristicSignature::per_bidder_score());
    db.register(candidate("def heuristic(v): return v", 0.4, None)).unwrap();
    db.register(Candidate {
        source: "def heuristic(v): return v - 0.5".into(),
        score: 0.41,
        iteration: 3,
        parents: vec![0],
        strategy: Some(2),
        island: Some(0),
    })
    .unwrap();
    let mut buffer = Vec::new();
    db.save_jsonl(&mut buffer).unwrap();
    let text = String::from_utf8(buffer.clone()).unwrap();
    assert!(text.lines().count() == 2);
    assert!(text.contains("\"parents\":[0]"));

    let restored = ProgramDatabase::load_jsonl(
        buffer.as_slice(),
        test_config(10),
        HeuristicSignature::per_bidder_score(),
    )
    .unwrap();
    assert_eq!(restored.programs(), db.programs());
    assert_eq!(restored.total_registered(), 2);
    assert_eq!(restored.best().unwrap().score, 0.41);
}

fn run_to_completion(max_iterations: u64, seed: u64) -> (RunReport, RunState) {
    let setting = rediscovery_setting();
    let evaluator = Evaluator::new(setting.clone(), 400, 2024);
    let db = ProgramDatabase::new(test_config(max_iterations), setting.signature());
    let mut state = RunState::new(db, seed);
    state.seed_program("def heuristic(v): return 0", &evaluator).unwrap();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let report = run(&mut state, &evaluator, &mut proposer, &|| false).unwrap();
    (report, state)
}

#[test]
fn run_trace_best_so_far_is_monotone() {
    let (report, _) = run_to_completion(80, 7);
    assert_eq!(report.trace.len(), 80);
    let mut prev = f64::NEG_INFINITY;
    for row in &report.trace {
        assert!(row.best_so_far >= prev);
        prev = row.best_so_far;
    }
    // The naive seed scores 0; something better always turns up.
    assert!(report.best.score >= 0.0);
}

#[test]
fn run_is_bit_reproducible() {
    let (a, _) = run_to_completion(60, 99);
    let (b, _) = run_to_completion(60, 99);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.best.source, b.best.source);
    assert_eq!(a.rejections, b.rejections);
}

#[test]
fn interrupt_then_resume_reproduces_the_uninterrupted_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let setting = rediscovery_setting();
    let evaluator = Evaluator::new(setting.clone(), 400, 2024);

    let (full, _) = run_to_completion(60, 31);

    // Interrupted run: stop after 30 iterations, save, reload, continue.
    let db = ProgramDatabase::new(test_config(60), setting.signature());
    let mut state = RunState::new(db, 31);
    state.seed_program("def heuristic(v): return 0", &evaluator).unwrap();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let count = std::cell::Cell::new(0u32);
    let first = run(&mut state, &evaluator, &mut proposer, &|| {
        count.set(count.get() + 1);
        count.get() > 30
    });
    // The closure counts calls, so the first half stops at 30 rows.
    let first = first.unwrap();
    assert_eq!(first.stop, StopCause::Interrupted);
    state.save(tmp.path()).unwrap();

    let mut resumed_state =
        RunState::load(tmp.path(), test_config(60), setting.signature()).unwrap();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let rest = run(&mut resumed_state, &evaluator, &mut proposer, &|| false).unwrap();

    let mut combined = first.trace.clone();
    combined.extend(rest.trace.clone());
    assert_eq!(combined, full.trace);
    assert_eq!(rest.best.source, full.best.source);
}

#[test]
fn run_without_seed_program_is_an_error() {
    let setting = rediscovery_setting();
    let evaluator = Evaluator::new(setting.clone(), 100, 1);
    let db = ProgramDatabase::new(test_config(10), setting.signature());
    let mut state = RunState::new(db, 1);
    let mut proposer = SymbolicProposer::for_setting(&setting);
    assert!(matches!(
        run(&mut state, &evaluator, &mut proposer, &|| false),
        Err(RunError::NoSeedProgram)
    ));
}

#[test]
fn islands_only_mix_at_reset() {
    let (_, state) = run_to_completion(120, 5);
    // Every program's parents live on the same island, unless the
    // program is a reset reseed (strategy None with exactly one parent
    // at a reset iteration).
    for program in state.db.programs() {
        for &parent in &program.parents {
            let parent_island = state.db.get(parent).unwrap().island;
            if parent_island != program.island {
                assert!(
                    program.strategy.is_none(),
                    "cross-island lineage outside a reset: {program:?}"
                );
            }
        }
    }
}
