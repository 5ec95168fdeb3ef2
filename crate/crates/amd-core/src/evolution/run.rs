//! The main evolution loop and its resumable state.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::database::{Candidate, ProgramDatabase, ScoredProgram};
use super::{EvolutionConfig, ResetPeriod};
use crate::dsl::parse;
use crate::evaluation::Evaluator;
use crate::proposers::{ProposalRequest, ProposeError, Proposer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub best_so_far: f64,
    /// Best score among the last five iterations' evaluations, when any
    /// succeeded in the window.
    pub best_last5: Option<f64>,
    /// This iteration's score; `None` when the proposal was rejected.
    pub score: Option<f64>,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "iteration,best_so_far,best_last5,score";

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{}",
            self.iteration,
            self.best_so_far,
            fmt(self.best_last5),
            fmt(self.score)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopCause {
    BudgetExhausted,
    TargetReached,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub best: ScoredProgram,
    pub iterations_run: u64,
    pub stop: StopCause,
    pub rejections: BTreeMap<String, u64>,
    pub dedup_events: u64,
    pub resets: u64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("proposer unavailable: {0}")]
    ProposerUnavailable(String),
    #[error("the database holds no seed program")]
    NoSeedProgram,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    State(String),
}

/// Serialized loop counters (`state.json`), next to the database JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    next_iteration: u64,
    base_seed: u64,
    last_reset_iteration: u64,
    window: Vec<(u64, Option<f64>)>,
    rejections: BTreeMap<String, u64>,
    dedup_events: u64,
    resets: u64,
}

/// Resumable run state: the database plus the loop counters. Equal state
/// and seed reproduce the remaining iterations bit for bit (with an
/// iteration-based reset period).
pub struct RunState {
    pub db: ProgramDatabase,
    pub base_seed: u64,
    pub next_iteration: u64,
    last_reset_iteration: u64,
    last_reset_wall: Instant,
    window: VecDeque<(u64, Option<f64>)>,
    rejections: BTreeMap<String, u64>,
    dedup_events: u64,
    resets: u64,
}

impl RunState {
    pub fn new(db: ProgramDatabase, base_seed: u64) -> Self {
        Self {
            db,
            base_seed,
            next_iteration: 0,
            last_reset_iteration: 0,
            last_reset_wall: Instant::now(),
            window: VecDeque::with_capacity(6),
            rejections: BTreeMap::new(),
            dedup_events: 0,
            resets: 0,
        }
    }

    /// Evaluate and register a seed program (round-robin island). The
    /// paper-style naive seed is "return 0".
    pub fn seed_program(&mut self, source: &str, evaluator: &Evaluator) -> Result<f64, String> {
        let program = parse(source, self.db.signature()).map_err(|e| e.to_string())?;
        let report = evaluator.score(&program);
        if report.rejected {
            return Err(format!(
                "seed program rejected: {}",
                report.rejection_reason.unwrap_or_default()
            ));
        }
        self.db
            .register(Candidate {
                source: program.source().to_string(),
                score: report.score,
                iteration: 0,
                parents: Vec::new(),
                strategy: None,
                island: None,
            })
            .map_err(|e| e.to_string())?;
        Ok(report.score)
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let db_file = std::fs::File::create(dir.join("database.jsonl"))?;
        self.db.save_jsonl(BufWriter::new(db_file))?;
        let meta = CheckpointMeta {
            next_iteration: self.next_iteration,
            base_seed: self.base_seed,
            last_reset_iteration: self.last_reset_iteration,
            window: self.window.iter().copied().collect(),
            rejections: self.rejections.clone(),
            dedup_events: self.dedup_events,
            resets: self.resets,
        };
        std::fs::write(dir.join("state.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Restore from `database.jsonl` + `state.json` in `dir`.
    pub fn load(
        dir: &Path,
        config: EvolutionConfig,
        signature: crate::dsl::HeuristicSignature,
    ) -> Result<Self, RunError> {
        let db_file = std::fs::File::open(dir.join("database.jsonl"))?;
        let db = ProgramDatabase::load_jsonl(BufReader::new(db_file), config, signature)
            .map_err(RunError::State)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("state.json"))?)
                .map_err(|e| RunError::State(e.to_string()))?;
        Ok(Self {
            db,
            base_seed: meta.base_seed,
            next_iteration: meta.next_iteration,
            last_reset_iteration: meta.last_reset_iteration,
            last_reset_wall: Instant::now(),
            window: meta.window.into_iter().collect(),
            rejections: meta.rejections,
            dedup_events: meta.dedup_events,
            resets: meta.resets,
        })
    }

    fn record_rejection(&mut self, kind: &str) {
        *self.rejections.entry(kind.to_string()).or_insert(0) += 1;
    }

    fn push_window(&mut self, iteration: u64, score: Option<f64>) {
        self.window.push_back((iteration, score));
        while self.window.len() > 5 {
            self.window.pop_front();
        }
    }

    fn best_last5(&self) -> Option<f64> {
        self.window
            .iter()
            .filter_map(|(_, s)| *s)
            .fold(None, |acc, s| Some(acc.map_or(s, |a: f64| a.max(s))))
    }
}

/// Run the evolution loop until the iteration budget, the target score,
/// or the `interrupted` flag stops it. Every iteration is seeded from
/// (base_seed, iteration) via a dedicated ChaCha stream, so a resumed
/// run continues exactly where the interrupted one left off.
pub fn run(
    state: &mut RunState,
    evaluator: &Evaluator,
    proposer: &mut dyn Proposer,
    interrupted: &dyn Fn() -> bool,
) -> Result<RunReport, RunError> {
    if state.db.best().is_none() {
        return Err(RunError::NoSeedProgram);
    }
    let config = state.db.config().clone();
    let signature = state.db.signature();
    let mut trace = Vec::new();
    let mut stop = StopCause::BudgetExhausted;

    while state.next_iteration < config.max_iterations {
        if interrupted() {
            stop = StopCause::Interrupted;
            break;
        }
        let iteration = state.next_iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(state.base_seed);
        rng.set_stream(iteration.wrapping_add(1));

        let due = match config.reset_period {
            ResetPeriod::Iterations(period) => {
                period > 0 && iteration - state.last_reset_iteration >= period
            }
            ResetPeriod::WallSeconds(secs) => {
                state.last_reset_wall.elapsed().as_secs() >= secs
            }
        };
        if due {
            state.db.reset_islands(iteration);
            state.last_reset_iteration = iteration;
            state.last_reset_wall = Instant::now();
            state.resets += 1;
        }

        let nonempty = state.db.islands_nonempty();
        let island = nonempty[rng.gen_range(0..nonempty.len())];
        let (parents, strategy_id) = state
            .db
            .sample_parents(island, config.functions_per_prompt, iteration, &mut rng)
            .expect("sampled island is non-empty");
        let parent_ids: Vec<u64> = parents.iter().map(|p| p.id).collect();
        let parent_island = parents[0].island;
        let request = ProposalRequest {
            parents: parents.iter().map(|p| (p.source.clone(), p.score)).collect(),
            strategy_id,
            version: iteration,
            rng_seed: rng.gen(),
        };

        let outcome = match proposer.propose(&request) {
            Ok(source) => match parse(&source, signature) {
                Ok(program) => {
                    let report = evaluator.score(&program);
                    if report.rejected {
                        state.record_rejection("evaluation");
                        None
                    } else {
                        let score = report.score;
                        match state.db.register(Candidate {
                            source: program.source().to_string(),
                            score,
                            iteration,
                            parents: parent_ids,
                            strategy: strategy_id,
                            island: Some(parent_island),
                        }) {
                            Ok(_) => Some(score),
                            Err(_) => {
                                // Dedup: the score still counts for the
                                // trace window, the entry is dropped.
                                state.dedup_events += 1;
                                Some(score)
                            }
                        }
                    }
                }
                Err(e) => {
                    let kind = match e {
                        crate::dsl::ParseError::Syntax { .. } => "parse_syntax",
                        crate::dsl::ParseError::Forbidden { .. } => "parse_forbidden",
                        crate::dsl::ParseError::SignatureMismatch(_) => "parse_signature",
                    };
                    state.record_rejection(kind);
                    None
                }
            },
            Err(ProposeError::Rejected(_)) => {
                state.record_rejection("proposer");
                None
            }
            Err(ProposeError::Unavailable(reason)) => {
                return Err(RunError::ProposerUnavailable(reason));
            }
        };

        state.push_window(iteration, outcome);
        let best_so_far = state.db.best().expect("database is seeded").score;
        trace.push(TraceRow {
            iteration,
            best_so_far,
            best_last5: state.best_last5(),
            score: outcome,
        });
        state.next_iteration += 1;

        if let Some(target) = config.target_score {
            if best_so_far >= target {
                stop = StopCause::TargetReached;
                break;
            }
        }
    }

    let best = state.db.best().expect("database is seeded").clone();
    Ok(RunReport {
        best,
        iterations_run: state.next_iteration,
        stop,
        rejections: state.rejections.clone(),
        dedup_events: state.dedup_events,
        resets: state.resets,
        trace,
    })
}
