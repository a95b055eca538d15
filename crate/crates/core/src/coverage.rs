//! Coverage of a universe by a subset, and rankings that extend a subset.
//!
//! `coverage(S) = (1/|U|) Σ_{u∈U} max_{s∈S} sim(s, u)`
//!
//! The objective is monotone and submodular in `S`, so [`greedy_extend`]
//! reaches at least `(1 - 1/e)` of the best achievable coverage for any
//! budget `k`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::digest::format_g17;
use crate::simdist::{MatrixKind, SimError, SymmetricMatrix};
use crate::stats::{percentile_interval, replica_rng, RNG_ALGORITHM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoverageError {
    #[error("subset is empty")]
    EmptySubset,
    #[error("universe is empty")]
    EmptyUniverse,
    #[error("base set is empty")]
    EmptyBase,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("coverage needs a similarity matrix, got {0}")]
    NotSimilarity(MatrixKind),
    #[error("expected a {expected} matrix, got {found}")]
    WrongKind { expected: MatrixKind, found: MatrixKind },
    #[error("k = {k} is out of range for {available} candidates")]
    KOutOfRange { k: usize, available: usize },
    #[error("base and candidates overlap: {}", .0.join(", "))]
    Overlap(Vec<String>),
    #[error("invalid bootstrap parameters: {0}")]
    InvalidBootstrap(String),
}

fn require_similarity(sim: &SymmetricMatrix) -> Result<(), CoverageError> {
    if sim.kind().is_similarity() {
        Ok(())
    } else {
        Err(CoverageError::NotSimilarity(sim.kind()))
    }
}

/// Per-universe-element best similarity to the subset.
fn best_matches(sim: &SymmetricMatrix, universe: &[usize], subset: &[usize]) -> Vec<f64> {
    universe.iter().map(|&u| subset.iter().map(|&s| sim.get(s, u)).fold(f64::NEG_INFINITY, f64::max)).collect()
}

fn mean_of(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    total / values.len() as f64
}

pub fn coverage(sim: &SymmetricMatrix, universe: &[String], subset: &[String]) -> Result<f64, CoverageError> {
    require_similarity(sim)?;
    if subset.is_empty() {
        return Err(CoverageError::EmptySubset);
    }
    if universe.is_empty() {
        return Err(CoverageError::EmptyUniverse);
    }
    let u = sim.indices(universe)?;
    let s = sim.indices(subset)?;
    Ok(mean_of(&best_matches(sim, &u, &s)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub n: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    fn validate(&self) -> Result<(), CoverageError> {
        if self.n == 0 {
            return Err(CoverageError::InvalidBootstrap("n must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CoverageError::InvalidBootstrap(format!("level {} must lie in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Coverage of each bootstrap replicate, in replica order. The universe is
/// resampled with replacement at its own size; the subset stays fixed.
pub fn bootstrap_coverage_samples(
    sim: &SymmetricMatrix,
    subset: &[String],
    universe: &[String],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, CoverageError> {
    require_similarity(sim)?;
    if subset.is_empty() {
        return Err(CoverageError::EmptySubset);
    }
    if universe.is_empty() {
        return Err(CoverageError::EmptyUniverse);
    }
    let best = best_matches(sim, &sim.indices(universe)?, &sim.indices(subset)?);
    let m = u32::try_from(best.len()).map_err(|_| CoverageError::InvalidBootstrap("universe too large".into()))?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, replica);
            let mut total = 0.0;
            for _ in 0..m {
                total += best[rng.random_range(0..m) as usize];
            }
            total / best.len() as f64
        })
        .collect())
}

/// Percentile interval of bootstrap coverage scores (type-7 quantiles at
/// `(1-level)/2` and `1-(1-level)/2`).
pub fn bootstrap_coverage_ci(
    sim: &SymmetricMatrix,
    subset: &[String],
    universe: &[String],
    n: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), CoverageError> {
    BootstrapConfig { n, level, seed }.validate()?;
    let mut samples = bootstrap_coverage_samples(sim, subset, universe, n, seed)?;
    Ok(percentile_interval(&mut samples, level))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub label: Option<String>,
    pub universe: Vec<String>,
    pub subset: Vec<String>,
    pub score: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub level: Option<f64>,
    pub n_bootstrap: usize,
    pub seed: Option<u64>,
    pub rng: Option<&'static str>,
    pub sim_matrix_digest: String,
}

pub fn coverage_report(
    sim: &SymmetricMatrix,
    universe: &[String],
    subset: &[String],
    bootstrap: Option<BootstrapConfig>,
) -> Result<CoverageReport, CoverageError> {
    let score = coverage(sim, universe, subset)?;
    let (ci, n_bootstrap) = match bootstrap {
        Some(cfg) => (Some(bootstrap_coverage_ci(sim, subset, universe, cfg.n, cfg.level, cfg.seed)?), cfg.n),
        None => (None, 0),
    };
    Ok(CoverageReport {
        label: None,
        universe: universe.to_vec(),
        subset: subset.to_vec(),
        score,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        level: bootstrap.map(|b| b.level),
        n_bootstrap,
        seed: bootstrap.map(|b| b.seed),
        rng: bootstrap.map(|_| RNG_ALGORITHM),
        sim_matrix_digest: sim.digest(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RankMode {
    GreedyGain,
    Novelty,
    LangNnDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub id: String,
    /// Marginal gain, novelty, or nearest-neighbour distance depending on mode.
    pub value: f64,
    /// Coverage after adding this entry (greedy mode only).
    pub cumulative_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidates {
    pub mode: RankMode,
    pub base: Vec<String>,
    pub entries: Vec<RankedEntry>,
}

impl RankedCandidates {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn to_csv_bytes(&self, comments: &[String]) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(&format!("# mode: {}\n", serde_json::to_value(self.mode).expect("enum").as_str().unwrap_or("")));
        out.push_str(&format!("# base: {}\n", self.base.join(" ")));
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        let greedy = self.mode == RankMode::GreedyGain;
        let value_name = match self.mode {
            RankMode::GreedyGain => "gain",
            RankMode::Novelty => "novelty",
            RankMode::LangNnDistance => "nn_distance",
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rank", "id", value_name];
        if greedy {
            header.push("cumulative_coverage");
        }
        w.write_record(&header).expect("vec write");
        for (i, e) in self.entries.iter().enumerate() {
            let mut row = vec![(i + 1).to_string(), e.id.clone(), format_g17(e.value)];
            if greedy {
                row.push(e.cumulative_coverage.map(format_g17).unwrap_or_default());
            }
            w.write_record(&row).expect("vec write");
        }
        let mut bytes = out.into_bytes();
        bytes.extend(w.into_inner().expect("vec write"));
        bytes
    }
}

fn sort_descending(entries: &mut [RankedEntry]) {
    entries.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.id.cmp(&b.id)));
}

fn check_disjoint(base: &[String], candidates: &[String]) -> Result<(), CoverageError> {
    let base_set: std::collections::HashSet<&String> = base.iter().collect();
    let overlap: Vec<String> = candidates.iter().filter(|c| base_set.contains(c)).cloned().collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(CoverageError::Overlap(overlap))
    }
}

/// Greedily adds `k` candidates to `base`, each step taking the candidate
/// with the largest coverage gain over `universe` (ties by id).
///
/// An empty base starts from coverage 0.
pub fn greedy_extend(
    sim: &SymmetricMatrix,
    universe: &[String],
    base: &[String],
    candidates: &[String],
    k: usize,
) -> Result<RankedCandidates, CoverageError> {
    require_similarity(sim)?;
    if universe.is_empty() {
        return Err(CoverageError::EmptyUniverse);
    }
    if base.is_empty() && candidates.is_empty() {
        return Err(CoverageError::EmptyCandidates);
    }
    if k > candidates.len() {
        return Err(CoverageError::KOutOfRange { k, available: candidates.len() });
    }
    let u = sim.indices(universe)?;
    let b = sim.indices(base)?;
    sim.indices(candidates)?;

    let mut best = if b.is_empty() { vec![0.0; u.len()] } else { best_matches(sim, &u, &b) };
    let mut remaining: Vec<(String, usize)> =
        candidates.iter().map(|c| (c.clone(), sim.index_of(c).expect("checked above"))).collect();
    remaining.sort();
    remaining.dedup();

    let n_u = u.len() as f64;
    let mut entries = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pick: Option<(usize, f64)> = None;
        for (pos, (_, c)) in remaining.iter().enumerate() {
            let mut gain = 0.0;
            for (slot, &ui) in u.iter().enumerate() {
                let d = sim.get(*c, ui) - best[slot];
                if d > 0.0 {
                    gain += d;
                }
            }
            let gain = gain / n_u;
            // `remaining` is id-sorted, so strict > keeps the smallest id on ties
            if pick.is_none_or(|(_, g)| gain > g) {
                pick = Some((pos, gain));
            }
        }
        let (pos, gain) = pick.expect("k <= |candidates|");
        let (id, c) = remaining.remove(pos);
        for (slot, &ui) in u.iter().enumerate() {
            best[slot] = best[slot].max(sim.get(c, ui));
        }
        entries.push(RankedEntry { id, value: gain, cumulative_coverage: Some(mean_of(&best)) });
    }
    Ok(RankedCandidates { mode: RankMode::GreedyGain, base: base.to_vec(), entries })
}

/// Scores each candidate scene by `1 - max_{b∈base} sim(candidate, b)`, most
/// novel first.
pub fn novelty_ranking(
    sim: &SymmetricMatrix,
    base: &[String],
    candidates: &[String],
) -> Result<RankedCandidates, CoverageError> {
    require_similarity(sim)?;
    if base.is_empty() {
        return Err(CoverageError::EmptyBase);
    }
    if candidates.is_empty() {
        return Err(CoverageError::EmptyCandidates);
    }
    check_disjoint(base, candidates)?;
    let b = sim.indices(base)?;
    let c = sim.indices(candidates)?;
    let mut entries: Vec<RankedEntry> = candidates
        .iter()
        .zip(&c)
        .map(|(id, &ci)| {
            let closest = b.iter().map(|&bi| sim.get(ci, bi)).fold(f64::NEG_INFINITY, f64::max);
            RankedEntry { id: id.clone(), value: 1.0 - closest, cumulative_coverage: None }
        })
        .collect();
    sort_descending(&mut entries);
    Ok(RankedCandidates { mode: RankMode::Novelty, base: base.to_vec(), entries })
}

fn nearest_distances(dist: &SymmetricMatrix, base: &[String], targets: &[String]) -> Result<Vec<f64>, CoverageError> {
    if dist.kind() != MatrixKind::LangDist {
        return Err(CoverageError::WrongKind { expected: MatrixKind::LangDist, found: dist.kind() });
    }
    if base.is_empty() {
        return Err(CoverageError::EmptyBase);
    }
    if targets.is_empty() {
        return Err(CoverageError::EmptyCandidates);
    }
    check_disjoint(base, targets)?;
    let b = dist.indices(base).map_err(unknown_language)?;
    let t = dist.indices(targets).map_err(unknown_language)?;
    Ok(t.iter().map(|&ti| b.iter().map(|&bi| dist.get(ti, bi)).fold(f64::INFINITY, f64::min)).collect())
}

fn unknown_language(e: SimError) -> SimError {
    match e {
        SimError::UnknownId(id) => SimError::UnknownLanguage(id),
        other => other,
    }
}

/// Distance from each target language to its nearest base language, in target order.
pub fn nn_distance_vector(
    dist: &SymmetricMatrix,
    base: &[String],
    targets: &[String],
) -> Result<Vec<f64>, CoverageError> {
    nearest_distances(dist, base, targets)
}

/// Candidates ordered by distance to their nearest base language, most distant first.
pub fn rank_languages(
    dist: &SymmetricMatrix,
    base: &[String],
    candidates: &[String],
) -> Result<RankedCandidates, CoverageError> {
    let d = nearest_distances(dist, base, candidates)?;
    let mut entries: Vec<RankedEntry> = candidates
        .iter()
        .zip(d)
        .map(|(id, value)| RankedEntry { id: id.clone(), value, cumulative_coverage: None })
        .collect();
    sort_descending(&mut entries);
    Ok(RankedCandidates { mode: RankMode::LangNnDistance, base: base.to_vec(), entries })
}
