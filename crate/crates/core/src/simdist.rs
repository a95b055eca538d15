//! Scene similarity and language distance derived from a [`LabelMatrix`].
//!
//! Two scenes are similar in one language when they receive the same label;
//! overall similarity averages that indicator over languages. Two languages are
//! compared by the variation of information between the scene partitions their
//! labels induce.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{format_g17, sha256_hex};
use crate::label_store::LabelMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("matrix is not symmetric at ({0}, {1})")]
    Asymmetric(String, String),
    #[error("diagonal entry for `{id}` is {value}, expected {expected}")]
    BadDiagonal { id: String, value: f64, expected: f64 },
    #[error("value {value} at ({row}, {col}) is outside the valid range for {kind}")]
    OutOfRange { row: String, col: String, value: f64, kind: MatrixKind },
    #[error("expected a {expected} matrix, got {found}")]
    WrongKind { expected: &'static str, found: MatrixKind },
    #[error("need at least 2 scenes to normalize by log2(n), got {0}")]
    TooFewScenes(usize),
    #[error("need at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("partitions are over different element sets")]
    MismatchedElements,
    #[error("partition: {0}")]
    InvalidPartition(String),
    #[error("matrix CSV: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatrixKind {
    SceneSim,
    SceneDissim,
    LangDist,
    LangSim,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::SceneSim => "SCENE_SIM",
            MatrixKind::SceneDissim => "SCENE_DISSIM",
            MatrixKind::LangDist => "LANG_DIST",
            MatrixKind::LangSim => "LANG_SIM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [MatrixKind::SceneSim, MatrixKind::SceneDissim, MatrixKind::LangDist, MatrixKind::LangSim]
            .into_iter()
            .find(|k| k.as_str() == s)
    }

    pub fn is_similarity(self) -> bool {
        matches!(self, MatrixKind::SceneSim | MatrixKind::LangSim)
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense symmetric matrix over scene or language ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
    kind: MatrixKind,
}

impl SymmetricMatrix {
    /// `values` is row-major `n x n`. Symmetry is checked exactly.
    pub fn new(ids: Vec<String>, values: Vec<f64>, kind: MatrixKind) -> Result<Self, SimError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(SimError::Malformed(format!("{} values for {n} ids", values.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(SimError::Malformed(format!("duplicate id `{id}`")));
            }
        }
        let m = SymmetricMatrix { ids, values, kind };
        let diag = if kind.is_similarity() { 1.0 } else { 0.0 };
        for i in 0..n {
            if m.get(i, i) != diag {
                return Err(SimError::BadDiagonal { id: m.ids[i].clone(), value: m.get(i, i), expected: diag });
            }
            for j in 0..n {
                let v = m.get(i, j);
                if v != m.get(j, i) {
                    return Err(SimError::Asymmetric(m.ids[i].clone(), m.ids[j].clone()));
                }
                let ok = match kind {
                    MatrixKind::SceneSim | MatrixKind::SceneDissim | MatrixKind::LangSim => (0.0..=1.0).contains(&v),
                    MatrixKind::LangDist => v >= 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(SimError::OutOfRange { row: m.ids[i].clone(), col: m.ids[j].clone(), value: v, kind });
                }
            }
        }
        Ok(m)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Resolves ids to indices, failing on the first unknown one.
    pub fn indices(&self, ids: &[String]) -> Result<Vec<usize>, SimError> {
        let lookup: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        ids.iter().map(|id| lookup.get(id.as_str()).copied().ok_or_else(|| SimError::UnknownId(id.clone()))).collect()
    }

    pub fn value(&self, a: &str, b: &str) -> Result<f64, SimError> {
        let i = self.index_of(a).ok_or_else(|| SimError::UnknownId(a.into()))?;
        let j = self.index_of(b).ok_or_else(|| SimError::UnknownId(b.into()))?;
        Ok(self.get(i, j))
    }

    /// Reorders or subsets rows and columns together.
    pub fn select(&self, ids: &[String]) -> Result<SymmetricMatrix, SimError> {
        let idx = self.indices(ids)?;
        let mut values = Vec::with_capacity(idx.len() * idx.len());
        for &i in &idx {
            for &j in &idx {
                values.push(self.get(i, j));
            }
        }
        SymmetricMatrix::new(ids.to_vec(), values, self.kind)
    }

    /// CSV body: `id,<ids...>` header then one row per id, values at 17
    /// significant digits. `comments` become leading `# ` lines.
    pub fn to_csv_bytes(&self, comments: &[String]) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(&format!("# kind: {}\n", self.kind));
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).expect("vec write");
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend((0..self.len()).map(|j| format_g17(self.get(i, j))));
            w.write_record(&row).expect("vec write");
        }
        let body = w.into_inner().expect("vec write");
        let mut bytes = out.into_bytes();
        bytes.extend(body);
        bytes
    }

    /// Parses [`SymmetricMatrix::to_csv_bytes`] output. A `# kind:` comment, when
    /// present, must agree with `expected` if one is given.
    pub fn from_csv(bytes: &[u8], expected: Option<MatrixKind>) -> Result<SymmetricMatrix, SimError> {
        let text = std::str::from_utf8(bytes).map_err(|e| SimError::Malformed(e.to_string()))?;
        let mut kind = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(k) = line.trim_start_matches('#').trim().strip_prefix("kind:") {
                kind = Some(
                    MatrixKind::parse(k.trim())
                        .ok_or_else(|| SimError::Malformed(format!("unknown kind `{}`", k.trim())))?,
                );
            }
        }
        let kind = match (kind, expected) {
            (Some(k), Some(e)) if k != e => return Err(SimError::WrongKind { expected: e.as_str(), found: k }),
            (Some(k), _) => k,
            (None, Some(e)) => e,
            (None, None) => return Err(SimError::Malformed("no `# kind:` line and no kind supplied".into())),
        };
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let header = reader.headers().map_err(|e| SimError::Malformed(e.to_string()))?.clone();
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::with_capacity(ids.len() * ids.len());
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| SimError::Malformed(e.to_string()))?;
            if record.get(0) != ids.get(r).map(String::as_str) {
                return Err(SimError::Malformed(format!("row {} id does not match column order", r + 1)));
            }
            for field in record.iter().skip(1) {
                values.push(field.trim().parse::<f64>().map_err(|e| SimError::Malformed(format!("`{field}`: {e}")))?);
            }
        }
        SymmetricMatrix::new(ids, values, kind)
    }

    /// SHA-256 over ids, kind, and the little-endian bits of every value.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend(self.kind.as_str().as_bytes());
        for id in &self.ids {
            bytes.push(0);
            bytes.extend(id.as_bytes());
        }
        for v in &self.values {
            bytes.extend(v.to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// Per-language label ids, so equality tests are integer comparisons.
fn interned_rows(matrix: &LabelMatrix) -> Vec<Vec<u32>> {
    (0..matrix.languages().len())
        .map(|l| {
            let mut ids: HashMap<&str, u32> = HashMap::new();
            matrix
                .row(l)
                .iter()
                .map(|label| {
                    let next = ids.len() as u32;
                    *ids.entry(label.as_str()).or_insert(next)
                })
                .collect()
        })
        .collect()
}

fn similarity_from_rows(rows: &[Vec<u32>], i: usize, j: usize) -> f64 {
    if i == j {
        return 1.0;
    }
    let matches = rows.iter().filter(|r| r[i] == r[j]).count();
    matches as f64 / rows.len() as f64
}

/// Fraction of languages that give scenes `i` and `j` the same label.
pub fn scene_similarity(matrix: &LabelMatrix, i: &str, j: &str) -> Result<f64, SimError> {
    let a = matrix.scene_index(i).ok_or_else(|| SimError::UnknownScene(i.into()))?;
    let b = matrix.scene_index(j).ok_or_else(|| SimError::UnknownScene(j.into()))?;
    if a == b {
        return Ok(1.0);
    }
    let n_lang = matrix.languages().len();
    let matches = (0..n_lang).filter(|&l| matrix.label_at(l, a) == matrix.label_at(l, b)).count();
    Ok(matches as f64 / n_lang as f64)
}

pub fn scene_similarity_matrix(matrix: &LabelMatrix) -> Result<SymmetricMatrix, SimError> {
    if matrix.languages().is_empty() {
        return Err(SimError::TooFewLanguages(0));
    }
    let rows = interned_rows(matrix);
    let n = matrix.scenes().len();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (0..n).map(move |j| similarity_from_rows(rows, i.min(j), i.max(j)))
        })
        .collect();
    SymmetricMatrix::new(matrix.scenes().to_vec(), values, MatrixKind::SceneSim)
}

/// `1 - x` elementwise, swapping similarity and dissimilarity kinds.
pub fn to_dissimilarity(sim: &SymmetricMatrix) -> Result<SymmetricMatrix, SimError> {
    let kind = match sim.kind() {
        MatrixKind::SceneSim => MatrixKind::SceneDissim,
        MatrixKind::SceneDissim => MatrixKind::SceneSim,
        other => return Err(SimError::WrongKind { expected: "SCENE_SIM", found: other }),
    };
    let n = sim.len();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let v = sim.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::OutOfRange {
                    row: sim.ids[i].clone(),
                    col: sim.ids[j].clone(),
                    value: v,
                    kind: sim.kind,
                });
            }
            values.push(if i == j {
                if kind.is_similarity() {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - v
            });
        }
    }
    SymmetricMatrix::new(sim.ids.clone(), values, kind)
}

/// A grouping of elements into disjoint blocks. Block numbers are assigned in
/// order of first appearance, so structurally equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    ids: Vec<String>,
    assignment: Vec<usize>,
    block_sizes: Vec<usize>,
}

impl Partition {
    pub fn from_labels<L: Eq + std::hash::Hash>(ids: Vec<String>, labels: &[L]) -> Result<Self, SimError> {
        if ids.len() != labels.len() {
            return Err(SimError::InvalidPartition(format!("{} ids but {} labels", ids.len(), labels.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(SimError::InvalidPartition(format!("duplicate element `{id}`")));
            }
        }
        let mut blocks: HashMap<&L, usize> = HashMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        let mut block_sizes = Vec::new();
        for label in labels {
            let next = blocks.len();
            let b = *blocks.entry(label).or_insert(next);
            if b == block_sizes.len() {
                block_sizes.push(0);
            }
            block_sizes[b] += 1;
            assignment.push(b);
        }
        Ok(Partition { ids, assignment, block_sizes })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn n_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn blocks(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.n_blocks()];
        for (id, &b) in self.ids.iter().zip(&self.assignment) {
            out[b].push(id.clone());
        }
        out
    }

    /// Entropy of the block-size distribution, in bits.
    pub fn entropy(&self) -> f64 {
        let n = self.ids.len() as f64;
        self.block_sizes
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                if p > 0.0 {
                    -p * p.log2()
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Block assignment of `other` re-expressed in this partition's element order.
    fn aligned_assignment<'a>(&self, other: &'a Partition) -> Result<std::borrow::Cow<'a, [usize]>, SimError> {
        if self.ids == other.ids {
            return Ok(std::borrow::Cow::Borrowed(&other.assignment));
        }
        if self.ids.len() != other.ids.len() {
            return Err(SimError::MismatchedElements);
        }
        let pos: HashMap<&str, usize> = other.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        self.ids
            .iter()
            .map(|id| pos.get(id.as_str()).map(|&k| other.assignment[k]).ok_or(SimError::MismatchedElements))
            .collect::<Result<Vec<_>, _>>()
            .map(std::borrow::Cow::Owned)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyBase {
    #[default]
    Bits,
}

/// Partition by shared label in one language.
pub fn language_partition(matrix: &LabelMatrix, language: &str) -> Result<Partition, SimError> {
    let l = matrix.language_index(language).ok_or_else(|| SimError::UnknownLanguage(language.into()))?;
    Partition::from_labels(matrix.scenes().to_vec(), matrix.row(l))
}

/// Variation of information `H(P) + H(Q) - 2 I(P;Q)`.
///
/// Evaluated as `-Σ r_ij [log(r_ij/p_i) + log(r_ij/q_j)]` over the non-empty
/// cells of the contingency table, which is exactly zero for equal partitions
/// and a sum of non-negative terms otherwise.
///
/// The element sets must match; element order may differ.
pub fn variation_of_information(p: &Partition, q: &Partition, _base: EntropyBase) -> Result<f64, SimError> {
    let q_assign = p.aligned_assignment(q)?;
    let n = p.ids.len();
    if n == 0 {
        return Ok(0.0);
    }
    let kq = q.n_blocks();
    let mut joint = vec![0usize; p.n_blocks() * kq];
    for (&a, &b) in p.assignment.iter().zip(q_assign.iter()) {
        joint[a * kq + b] += 1;
    }
    // Terms are keyed by (count, smaller block, larger block) and summed in sorted
    // order, so the result is bit-identical under element reordering and under
    // swapping P and Q.
    let mut terms: Vec<(usize, usize, usize)> = joint
        .iter()
        .enumerate()
        .filter(|(_, &count)| count > 0)
        .map(|(cell, &count)| {
            let (a, b) = (p.block_sizes[cell / kq], q.block_sizes[cell % kq]);
            (count, a.min(b), a.max(b))
        })
        .collect();
    terms.sort_unstable();
    let mut acc = 0.0;
    for (count, small, large) in terms {
        let c = count as f64;
        acc -= c * ((c / small as f64).log2() + (c / large as f64).log2());
    }
    Ok(acc / n as f64)
}

pub fn mutual_information(p: &Partition, q: &Partition) -> Result<f64, SimError> {
    let vi = variation_of_information(p, q, EntropyBase::Bits)?;
    Ok((p.entropy() + q.entropy() - vi) / 2.0)
}

/// Pairwise VI between language partitions; with `normalize`, divided by
/// `log2(n_scenes)` so values fall in `[0, 1]`.
pub fn language_distance_matrix(matrix: &LabelMatrix, normalize: bool) -> Result<SymmetricMatrix, SimError> {
    let n_scenes = matrix.scenes().len();
    if n_scenes < 2 {
        return Err(SimError::TooFewScenes(n_scenes));
    }
    let langs = matrix.languages();
    if langs.len() < 2 {
        return Err(SimError::TooFewLanguages(langs.len()));
    }
    let parts = langs.iter().map(|l| language_partition(matrix, l)).collect::<Result<Vec<_>, _>>()?;
    let scale = if normalize { (n_scenes as f64).log2() } else { 1.0 };
    let n = langs.len();
    let upper: Vec<((usize, usize), f64)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, j)| {
            let vi = variation_of_information(&parts[i], &parts[j], EntropyBase::Bits)?;
            let d = if normalize { (vi / scale).clamp(0.0, 1.0) } else { vi };
            Ok(((i, j), d))
        })
        .collect::<Result<_, SimError>>()?;
    let mut values = vec![0.0; n * n];
    for ((i, j), d) in upper {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    SymmetricMatrix::new(langs.to_vec(), values, MatrixKind::LangDist)
}

/// `1 - D` for a normalized language distance matrix.
pub fn language_similarity_matrix(dist: &SymmetricMatrix) -> Result<SymmetricMatrix, SimError> {
    if dist.kind() != MatrixKind::LangDist {
        return Err(SimError::WrongKind { expected: "LANG_DIST", found: dist.kind() });
    }
    let n = dist.len();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = dist.get(i, j);
            if d > 1.0 {
                return Err(SimError::OutOfRange {
                    row: dist.ids[i].clone(),
                    col: dist.ids[j].clone(),
                    value: d,
                    kind: dist.kind,
                });
            }
            values.push(1.0 - d);
        }
    }
    SymmetricMatrix::new(dist.ids.clone(), values, MatrixKind::LangSim)
}
