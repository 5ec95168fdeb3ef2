//! The program database: islands of clustered scored programs.

use std::collections::{BTreeMap, HashSet};
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cluster_key, EvolutionConfig};
use crate::dsl::{parse, structural_size, HeuristicSignature};

/// A stored program with its evaluation score and lineage. Persisted as
/// one JSONL line; the id is the line index and is not serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredProgram {
    #[serde(skip)]
    pub id: u64,
    pub source: String,
    pub score: f64,
    pub island: usize,
    /// Rounded score identifying the cluster, kept in the record for
    /// readability.
    pub cluster: f64,
    pub iteration: u64,
    pub parents: Vec<u64>,
    pub strategy: Option<u8>,
    /// Set when the program's island was cleared by a reset. Retired
    /// entries stay in the record (ids must remain stable for lineage)
    /// but are not sampled, and a restore keeps them retired.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub retired: bool,
    #[serde(skip)]
    pub structural_size: usize,
}

/// A candidate for registration.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub source: String,
    pub score: f64,
    pub iteration: u64,
    pub parents: Vec<u64>,
    pub strategy: Option<u8>,
    /// Target island; `None` means round-robin (used for initial seeds).
    pub island: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegisterError {
    /// Identical canonical text already stored in the target island.
    #[error("duplicate source in island {island}")]
    DuplicateSource { island: usize },
    #[error("score must be finite")]
    NonFiniteScore,
    #[error("invalid island index {0}")]
    InvalidIsland(usize),
}

#[derive(Debug, Clone, Default)]
struct Island {
    /// Cluster key → indices into the program arena, insertion-ordered.
    clusters: BTreeMap<i64, Vec<usize>>,
    dedup: HashSet<u64>,
    /// Best (score, program index), ties keeping the earliest.
    best: Option<(f64, usize)>,
}

impl Island {
    fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    fn insert(&mut self, key: i64, idx: usize, score: f64) {
        self.clusters.entry(key).or_default().push(idx);
        if self.best.map_or(true, |(best, _)| score > best) {
            self.best = Some((score, idx));
        }
    }
}

/// Report of one island reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetReport {
    pub at_iteration: u64,
    pub cleared: Vec<usize>,
    /// (cleared island, surviving island whose best seeded it).
    pub reseeded_from: Vec<(usize, usize)>,
}

pub struct ProgramDatabase {
    config: EvolutionConfig,
    islands: Vec<Island>,
    programs: Vec<ScoredProgram>,
    signature: HeuristicSignature,
    round_robin: usize,
}

impl ProgramDatabase {
    pub fn new(config: EvolutionConfig, signature: HeuristicSignature) -> Self {
        let islands = (0..config.num_islands).map(|_| Island::default()).collect();
        Self { config, islands, programs: Vec::new(), signature, round_robin: 0 }
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn signature(&self) -> HeuristicSignature {
        self.signature
    }

    /// Number of registrations so far; drives the temperature decay.
    pub fn total_registered(&self) -> u64 {
        self.programs.len() as u64
    }

    pub fn programs(&self) -> &[ScoredProgram] {
        &self.programs
    }

    pub fn get(&self, id: u64) -> Option<&ScoredProgram> {
        self.programs.get(id as usize)
    }

    /// Best program overall; ties keep the earliest registration.
    pub fn best(&self) -> Option<&ScoredProgram> {
        self.islands
            .iter()
            .filter_map(|island| island.best)
            .max_by(|(a, ai), (b, bi)| a.total_cmp(b).then(bi.cmp(ai)))
            .map(|(_, idx)| &self.programs[idx])
    }

    pub fn islands_nonempty(&self) -> Vec<usize> {
        (0..self.islands.len()).filter(|&i| !self.islands[i].is_empty()).collect()
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature(self.total_registered())
    }

    /// Store a scored program. The island is the candidate's hint (the
    /// island of its first parent, keeping lineages local) or round-robin
    /// for unparented seeds. Identical canonical text in the same island
    /// is deduplicated: recorded as an event, not stored again.
    pub fn register(&mut self, candidate: Candidate) -> Result<&ScoredProgram, RegisterError> {
        if !candidate.score.is_finite() {
            return Err(RegisterError::NonFiniteScore);
        }
        let island_idx = match candidate.island {
            Some(island) => {
                if island >= self.islands.len() {
                    return Err(RegisterError::InvalidIsland(island));
                }
                island
            }
            None => {
                let island = self.round_robin % self.islands.len();
                self.round_robin += 1;
                island
            }
        };
        let dedup_key = source_hash(&candidate.source);
        if !self.islands[island_idx].dedup.insert(dedup_key) {
            return Err(RegisterError::DuplicateSource { island: island_idx });
        }
        let size = parse(&candidate.source, self.signature)
            .map(|p| structural_size(&p))
            .unwrap_or(usize::MAX);
        let key = cluster_key(candidate.score);
        let idx = self.programs.len();
        let record = ScoredProgram {
            id: idx as u64,
            source: candidate.source,
            score: candidate.score,
            island: island_idx,
            cluster: key as f64 / 1000.0,
            iteration: candidate.iteration,
            parents: candidate.parents,
            strategy: candidate.strategy,
            retired: false,
            structural_size: size,
        };
        self.programs.push(record);
        self.islands[island_idx].insert(key, idx, candidate.score);
        Ok(&self.programs[idx])
    }

    /// Sample up to `k` parents from one island: a cluster by softmax
    /// over cluster best scores at the current temperature, then
    /// programs within the cluster weighted by 1/structural_size
    /// (shorter programs preferred), without replacement. The strategy
    /// index cycles with the iteration when strategies are enabled.
    pub fn sample_parents(
        &self,
        island: usize,
        k: usize,
        iteration: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<&ScoredProgram>, Option<u8>), EmptyIsland> {
        let isl = self.islands.get(island).ok_or(EmptyIsland(island))?;
        if isl.is_empty() {
            return Err(EmptyIsland(island));
        }
        let temperature = self.temperature();
        let entries: Vec<(i64, f64)> = isl
            .clusters
            .iter()
            .map(|(key, members)| {
                let best = members
                    .iter()
                    .map(|&idx| self.programs[idx].score)
                    .fold(f64::NEG_INFINITY, f64::max);
                (*key, best)
            })
            .collect();
        let cluster_pos = softmax_pick(&entries, temperature, rng);
        let members = &isl.clusters[&entries[cluster_pos].0];

        let mut pool: Vec<usize> = members.clone();
        let mut picked = Vec::new();
        while picked.len() < k && !pool.is_empty() {
            let weights: Vec<f64> =
                pool.iter().map(|&idx| 1.0 / self.programs[idx].structural_size.max(1) as f64).collect();
            let total: f64 = weights.iter().sum();
            let mut ball = rng.gen::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (pos, w) in weights.iter().enumerate() {
                if ball < *w {
                    chosen = pos;
                    break;
                }
                ball -= w;
            }
            picked.push(pool.swap_remove(chosen));
        }
        let strategy = self.config.strategies.as_ref().map(|strategies| {
            ((iteration % strategies.len() as u64) + 1) as u8
        });
        Ok((picked.into_iter().map(|idx| &self.programs[idx]).collect(), strategy))
    }

    /// Clear the worse half of the islands (by best score, ties by
    /// island index) and reseed each cleared island with a copy of a
    /// surviving island's best program, assigned round-robin over the
    /// survivors ordered best-first. The overall best always survives.
    pub fn reset_islands(&mut self, at_iteration: u64) -> ResetReport {
        let mut ranked: Vec<usize> = (0..self.islands.len()).collect();
        // Best score descending; empty islands rank last.
        ranked.sort_by(|&a, &b| {
            let score = |i: usize| {
                self.islands[i].best.map(|(s, _)| s).unwrap_or(f64::NEG_INFINITY)
            };
            score(b).total_cmp(&score(a)).then(a.cmp(&b))
        });
        let n_clear = self.islands.len() / 2;
        let survivors: Vec<usize> = ranked[..self.islands.len() - n_clear].to_vec();
        let mut cleared: Vec<usize> = ranked[self.islands.len() - n_clear..].to_vec();
        cleared.sort_unstable();

        let mut reseeded_from = Vec::new();
        for (j, &island) in cleared.iter().enumerate() {
            self.islands[island] = Island::default();
            for program in self.programs.iter_mut() {
                if program.island == island && !program.retired {
                    program.retired = true;
                }
            }
            let donor = survivors[j % survivors.len()];
            if let Some((score, best_idx)) = self.islands[donor].best {
                let source = self.programs[best_idx].source.clone();
                let candidate = Candidate {
                    source,
                    score,
                    iteration: at_iteration,
                    parents: vec![best_idx as u64],
                    strategy: None,
                    island: Some(island),
                };
                // A copy of an existing program can only fail dedup if the
                // island already holds it, which it cannot: it was just
                // cleared.
                let _ = self.register(candidate);
                reseeded_from.push((island, donor));
            }
        }
        ResetReport { at_iteration, cleared, reseeded_from }
    }

    /// Write the database as JSONL, one program per line in id order.
    pub fn save_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for program in &self.programs {
            serde_json::to_writer(&mut out, program)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuild a database from JSONL. Ids are line indices; island and
    /// cluster placement are taken from the records.
    pub fn load_jsonl<R: BufRead>(
        reader: R,
        config: EvolutionConfig,
        signature: HeuristicSignature,
    ) -> Result<Self, String> {
        let mut db = Self::new(config, signature);
        for (line_no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| format!("line {}: {e}", line_no + 1))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut record: ScoredProgram =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", line_no + 1))?;
            if record.island >= db.islands.len() {
                return Err(format!(
                    "line {}: island {} out of range",
                    line_no + 1,
                    record.island
                ));
            }
            record.id = db.programs.len() as u64;
            record.structural_size = parse(&record.source, signature)
                .map(|p| structural_size(&p))
                .unwrap_or(usize::MAX);
            let key = cluster_key(record.score);
            let idx = db.programs.len();
            // Retired entries keep their id slot for lineage but stay out
            // of the live clusters.
            if !record.retired {
                db.islands[record.island].dedup.insert(source_hash(&record.source));
                db.islands[record.island].insert(key, idx, record.score);
            }
            db.programs.push(record);
        }
        Ok(db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("island {0} is empty")]
pub struct EmptyIsland(pub usize);

fn source_hash(source: &str) -> u64 {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    source.hash(&mut hasher);
    hasher.finish()
}

/// Pick an index into `entries` with probability softmax(score / T);
/// at zero temperature the best entry wins outright (ties to the higher
/// cluster key, the later entry).
fn softmax_pick(entries: &[(i64, f64)], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(!entries.is_empty());
    if entries.len() == 1 {
        return 0;
    }
    let max_score = entries.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    if temperature <= 1e-12 {
        let mut best = 0;
        for (pos, (_, score)) in entries.iter().enumerate() {
            if *score >= entries[best].1 {
                best = pos;
            }
        }
        return best;
    }
    let weights: Vec<f64> =
        entries.iter().map(|(_, s)| ((s - max_score) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut ball = rng.gen::<f64>() * total;
    for (pos, w) in weights.iter().enumerate() {
        if ball < *w {
            return pos;
        }
        ball -= w;
    }
    entries.len() - 1
}
