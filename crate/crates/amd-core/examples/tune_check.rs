use amd_core::distributions::MarginalDistribution;
use amd_core::evaluation::Evaluator;
use amd_core::evolution::{run, EvolutionConfig, ProgramDatabase, ResetPeriod, RunState};
use amd_core::mechanisms::{GoalFunction, Metric, ReverseFixMode, SettingSpec};
use amd_core::oracle::{exhaustive_small_search, RestrictedSpace};
use amd_core::proposers::SymbolicProposer;

fn main() {
    let t0 = std::time::Instant::now();
    // Criterion 6 shape: rediscovery under U[0,1], symbolic, 500 iterations.
    let setting = SettingSpec::RediscoveryPerBidder {
        n_bidders: 2,
        distributions: vec![MarginalDistribution::uniform01()],
        epsilon: 0.01,
    };
    let evaluator = Evaluator::new(setting.clone(), 2000, 777);
    let space = RestrictedSpace::new(3, vec![0.0, 1.0]);
    let (best, opt, n) = exhaustive_small_search(&setting, &evaluator, &space).unwrap();
    println!("enumerated {n} programs in {:?}; optimum {:.4} = {}", t0.elapsed(), opt, best.source());

    for seed in [42u64, 7, 123, 2024, 31337] {
        let config = EvolutionConfig {
            num_islands: 10,
            reset_period: ResetPeriod::Iterations(150),
            max_iterations: 500,
            ..EvolutionConfig::default()
        };
        let db = ProgramDatabase::new(config, setting.signature());
        let mut state = RunState::new(db, seed);
        state.seed_program("def heuristic(v): return 0", &evaluator).unwrap();
        let mut proposer = SymbolicProposer::for_setting(&setting);
        let t1 = std::time::Instant::now();
        let report = run(&mut state, &evaluator, &mut proposer, &|| false).unwrap();
        println!(
            "seed {seed}: best {:.4} ({:.1}% of opt) in {:?}  [{}]",
            report.best.score,
            100.0 * report.best.score / opt,
            t1.elapsed(),
            report.best.source
        );
    }

    // Criterion 7 shape: distillation against a Cavallo goal table, 300 iters.
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let goal = GoalFunction::tabulate(
        vec![grid.clone(), grid.clone(), grid],
        Metric::L2,
        |p| 0.5 * p.iter().copied().fold(f64::INFINITY, f64::min),
    )
    .unwrap();
    let inner = SettingSpec::VcgRedistribution {
        n_bidders: 4,
        n_items: 2,
        distribution: MarginalDistribution::uniform01(),
        fix_grid_resolution: 101,
        reverse_fix: ReverseFixMode::Off,
    };
    let setting = SettingSpec::Distillation { inner: Box::new(inner), goal, metric: Metric::L2 };
    let evaluator = Evaluator::new(setting.clone(), 1000, 555);
    for seed in [42u64, 7, 123, 2024, 31337] {
        let config = EvolutionConfig {
            num_islands: 10,
            reset_period: ResetPeriod::Iterations(150),
            max_iterations: 300,
            target_score: Some(-1e-3),
            ..EvolutionConfig::default()
        };
        let db = ProgramDatabase::new(config, setting.signature());
        let mut state = RunState::new(db, seed);
        state.seed_program("def heuristic(others_bids): return 0", &evaluator).unwrap();
        let mut proposer = SymbolicProposer::for_setting(&setting);
        let t1 = std::time::Instant::now();
        let report = run(&mut state, &evaluator, &mut proposer, &|| false).unwrap();
        println!(
            "distill seed {seed}: best {:.6} after {} iters in {:?} [{}]",
            report.best.score,
            report.iterations_run,
            t1.elapsed(),
            report.best.source
        );
    }
}
