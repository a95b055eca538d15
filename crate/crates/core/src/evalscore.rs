//! Scoring model labels against human annotators.
//!
//! A model label scores 1 on the binary measure when at least one human gave
//! the same normalized label for that scene, and on the graded measure it
//! scores the fraction of humans who did. The modal human label bounds the
//! graded score from above.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coverage::CoverageError;
use crate::digest::format_g17;
use crate::label_store::{modal_label, LabelMatrix, LabelTable};
use crate::simdist::SymmetricMatrix;
use crate::stats::{pearson, percentile_interval, quantile_sorted, replica_rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("language `{0}` is not in the model matrix")]
    UnknownLanguage(String),
    #[error("scene sets differ: {} only in model ({}), {} only in human data ({})",
        .model_only.len(), .model_only.join(", "), .human_only.len(), .human_only.join(", "))]
    SceneMismatch { model_only: Vec<String>, human_only: Vec<String> },
    #[error("scene `{0}` has no human annotators")]
    NoAnnotators(String),
    #[error("scene `{0}` has more than one model label")]
    MultipleModelLabels(String),
    #[error("need at least 2 annotators, found {0}")]
    TooFewAnnotators(usize),
    #[error("annotators `{0}` and `{1}` share no labeled scenes")]
    NoCommonScenes(String, String),
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired observations, got {0}")]
    TooFewObservations(usize),
    #[error("input vector `{0}` is constant")]
    ConstantInput(&'static str),
    #[error("invalid bootstrap parameters: {0}")]
    InvalidBootstrap(String),
    #[error("every bootstrap resample was constant")]
    AllResamplesConstant,
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

/// One language's model labels, keyed by scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub language: String,
    pub labels: BTreeMap<String, String>,
}

impl ModelRow {
    pub fn from_matrix(matrix: &LabelMatrix, language: &str) -> Result<Self, EvalError> {
        let l = matrix.language_index(language).ok_or_else(|| EvalError::UnknownLanguage(language.into()))?;
        Ok(ModelRow {
            language: language.into(),
            labels: matrix.scenes().iter().cloned().zip(matrix.row(l).iter().cloned()).collect(),
        })
    }
}

impl ModelRow {
    /// From a table with exactly one annotator per scene in `language`.
    pub fn from_table(table: &LabelTable, language: &str) -> Result<Self, EvalError> {
        let by_scene = table.annotations_by_scene(language);
        if by_scene.is_empty() {
            return Err(EvalError::UnknownLanguage(language.into()));
        }
        let mut labels = BTreeMap::new();
        for (scene, annotators) in by_scene {
            if annotators.len() != 1 {
                return Err(EvalError::MultipleModelLabels(scene));
            }
            labels.insert(scene, annotators.into_values().next().expect("one"));
        }
        Ok(ModelRow { language: language.into(), labels })
    }
}

/// scene -> normalized labels of every annotator (one per annotator).
type HumanCells = BTreeMap<String, Vec<String>>;

fn human_cells(humans: &LabelTable, language: &str) -> HumanCells {
    humans
        .annotations_by_scene(language)
        .into_iter()
        .map(|(scene, by_annotator)| (scene, by_annotator.into_values().collect()))
        .collect()
}

type AlignedScene<'a> = (&'a str, &'a [String], String);

fn aligned<'a>(model: &ModelRow, cells: &'a HumanCells) -> Result<Vec<AlignedScene<'a>>, EvalError> {
    let model_scenes: BTreeSet<&String> = model.labels.keys().collect();
    let human_scenes: BTreeSet<&String> = cells.keys().collect();
    if model_scenes != human_scenes {
        return Err(EvalError::SceneMismatch {
            model_only: model_scenes.difference(&human_scenes).map(|s| s.to_string()).collect(),
            human_only: human_scenes.difference(&model_scenes).map(|s| s.to_string()).collect(),
        });
    }
    cells
        .iter()
        .map(|(scene, labels)| {
            if labels.is_empty() {
                return Err(EvalError::NoAnnotators(scene.clone()));
            }
            Ok((scene.as_str(), labels.as_slice(), model.labels[scene].clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneScores {
    pub per_scene: Vec<(String, f64)>,
    pub mean: f64,
}

fn scores<F: Fn(&[String], &str) -> f64>(
    model: &ModelRow,
    humans: &LabelTable,
    f: F,
) -> Result<SceneScores, EvalError> {
    let cells = human_cells(humans, &model.language);
    let per_scene: Vec<(String, f64)> =
        aligned(model, &cells)?.into_iter().map(|(scene, labels, m)| (scene.to_string(), f(labels, &m))).collect();
    let mean = per_scene.iter().map(|(_, s)| s).sum::<f64>() / per_scene.len() as f64;
    Ok(SceneScores { per_scene, mean })
}

fn binary(labels: &[String], model: &str) -> f64 {
    if labels.iter().any(|l| l == model) {
        1.0
    } else {
        0.0
    }
}

fn graded(labels: &[String], model: &str) -> f64 {
    labels.iter().filter(|l| *l == model).count() as f64 / labels.len() as f64
}

/// 1 per scene iff some annotator gave the model's label.
pub fn binary_score(model: &ModelRow, humans: &LabelTable) -> Result<SceneScores, EvalError> {
    scores(model, humans, binary)
}

/// Fraction of annotators per scene who gave the model's label.
pub fn graded_score(model: &ModelRow, humans: &LabelTable) -> Result<SceneScores, EvalError> {
    scores(model, humans, graded)
}

/// Modal-label proportion of a scene: the best graded score any model could get.
pub fn max_graded(humans: &LabelTable, language: &str, scene: &str) -> Result<f64, EvalError> {
    let cells = human_cells(humans, language);
    let labels = cells.get(scene).filter(|l| !l.is_empty()).ok_or_else(|| EvalError::NoAnnotators(scene.into()))?;
    Ok(modal_label(labels).expect("non-empty").proportion)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneEval {
    pub scene_id: String,
    pub binary: u8,
    pub graded: f64,
    pub max_graded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub language: String,
    pub scenes: Vec<SceneEval>,
    pub mean_binary: f64,
    pub mean_graded: f64,
    pub max_graded_mean: f64,
    pub n_scenes: usize,
}

impl EvalReport {
    pub fn to_csv_bytes(&self, comments: &[String]) -> Vec<u8> {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("scene_id,binary,graded,max_graded\n");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for s in &self.scenes {
            w.write_record([s.scene_id.clone(), s.binary.to_string(), format_g17(s.graded), format_g17(s.max_graded)])
                .expect("vec write");
        }
        let mut bytes = out.into_bytes();
        bytes.extend(w.into_inner().expect("vec write"));
        bytes
    }
}

pub fn evaluate_language(model: &ModelRow, humans: &LabelTable) -> Result<EvalReport, EvalError> {
    let cells = human_cells(humans, &model.language);
    let rows = aligned(model, &cells)?;
    let scenes: Vec<SceneEval> = rows
        .into_iter()
        .map(|(scene, labels, m)| SceneEval {
            scene_id: scene.to_string(),
            binary: binary(labels, &m) as u8,
            graded: graded(labels, &m),
            max_graded: modal_label(labels).expect("non-empty").proportion,
        })
        .collect();
    let n = scenes.len() as f64;
    Ok(EvalReport {
        language: model.language.clone(),
        mean_binary: scenes.iter().map(|s| s.binary as f64).sum::<f64>() / n,
        mean_graded: scenes.iter().map(|s| s.graded).sum::<f64>() / n,
        max_graded_mean: scenes.iter().map(|s| s.max_graded).sum::<f64>() / n,
        n_scenes: scenes.len(),
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanAlignment {
    pub mean: f64,
    pub q_low: f64,
    pub q_high: f64,
    pub n_pairs: usize,
}

/// Each annotator scored against each other annotator (all ordered pairs),
/// over the scenes both labeled. Reports the mean over pairs and the 2.5% /
/// 97.5% quantiles of the per-pair scores.
pub fn human_human_alignment(humans: &LabelTable, language: &str) -> Result<HumanAlignment, EvalError> {
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, &str>> = BTreeMap::new();
    for e in humans.entries().iter().filter(|e| e.language == language) {
        by_annotator
            .entry(e.annotator_id.as_str())
            .or_default()
            .insert(e.scene_id.as_str(), e.normalized_label.as_str());
    }
    if by_annotator.len() < 2 {
        return Err(EvalError::TooFewAnnotators(by_annotator.len()));
    }
    let mut pair_scores = Vec::new();
    for (a, labels_a) in &by_annotator {
        for (b, labels_b) in &by_annotator {
            if a == b {
                continue;
            }
            let (mut hits, mut total) = (0usize, 0usize);
            for (scene, la) in labels_a {
                if let Some(lb) = labels_b.get(scene) {
                    total += 1;
                    hits += (la == lb) as usize;
                }
            }
            if total == 0 {
                return Err(EvalError::NoCommonScenes(a.to_string(), b.to_string()));
            }
            pair_scores.push(hits as f64 / total as f64);
        }
    }
    let mean = pair_scores.iter().sum::<f64>() / pair_scores.len() as f64;
    let n_pairs = pair_scores.len();
    pair_scores.sort_by(|x, y| x.total_cmp(y));
    Ok(HumanAlignment {
        mean,
        q_low: quantile_sorted(&pair_scores, 0.025),
        q_high: quantile_sorted(&pair_scores, 0.975),
        n_pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PearsonReport {
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Resamples where x or y came out constant; excluded from the interval.
    pub n_skipped_constant: usize,
}

/// Sample Pearson r with a percentile interval from `n` resamples of the
/// (x_i, y_i) pairs, drawn jointly with replacement.
pub fn pearson_with_bootstrap(
    x: &[f64],
    y: &[f64],
    n: usize,
    level: f64,
    seed: u64,
) -> Result<PearsonReport, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(EvalError::TooFewObservations(x.len()));
    }
    if n == 0 || !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidBootstrap(format!("n = {n}, level = {level}")));
    }
    let r = match pearson(x, y) {
        Some(r) => r,
        None if x.iter().all(|v| *v == x[0]) => return Err(EvalError::ConstantInput("x")),
        None => return Err(EvalError::ConstantInput("y")),
    };
    let m = x.len() as u32;
    let resampled: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, replica);
            let (mut xs, mut ys) = (Vec::with_capacity(m as usize), Vec::with_capacity(m as usize));
            for _ in 0..m {
                let i = rng.random_range(0..m) as usize;
                xs.push(x[i]);
                ys.push(y[i]);
            }
            pearson(&xs, &ys)
        })
        .collect();
    let mut kept: Vec<f64> = resampled.iter().flatten().copied().collect();
    let n_skipped_constant = n - kept.len();
    if kept.is_empty() {
        return Err(EvalError::AllResamplesConstant);
    }
    let (ci_low, ci_high) = percentile_interval(&mut kept, level);
    Ok(PearsonReport { r, ci_low, ci_high, level, n_bootstrap: n, seed, n_skipped_constant })
}

/// Distance from each target language to its nearest base language.
pub fn nn_distance_vector(dist: &SymmetricMatrix, base: &[String], targets: &[String]) -> Result<Vec<f64>, EvalError> {
    Ok(crate::coverage::nn_distance_vector(dist, base, targets)?)
}
