//! Classical (Torgerson) multidimensional scaling and Kruskal stress.

use serde::Serialize;
use thiserror::Error;

use crate::digest::format_g17;
use crate::eigen::{symmetric_eigen, EigenError, SymmetricEigen};
use crate::simdist::SymmetricMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("dissimilarity matrix is not symmetric at ({0}, {1})")]
    Asymmetric(String, String),
    #[error("dissimilarity matrix has nonzero diagonal at `{0}`")]
    NonzeroDiagonal(String),
    #[error("dissimilarity matrix has a negative or non-finite entry at ({0}, {1})")]
    InvalidEntry(String, String),
    #[error("expected a dissimilarity matrix, got a similarity matrix")]
    NotDissimilarity,
    #[error("dimension {k} out of range 1..={max}")]
    DimensionOutOfRange { k: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stress undefined: every input dissimilarity is zero")]
    DegenerateStress,
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding {
    pub ids: Vec<String>,
    /// One row per id, `k` columns.
    pub coordinates: Vec<Vec<f64>>,
    pub k: usize,
    pub stress: f64,
    /// All eigenvalues of the double-centered matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues below `-1e-9 * max|λ|`; clamped to zero, never used as scales.
    pub negative_eigenvalues: Vec<f64>,
}

impl Embedding {
    pub fn to_csv_bytes(&self, comments: &[String]) -> Vec<u8> {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.k).map(|d| format!("dim{d}")));
        w.write_record(&header).expect("vec write");
        for (id, row) in self.ids.iter().zip(&self.coordinates) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|&x| format_g17(x)));
            w.write_record(&rec).expect("vec write");
        }
        let mut bytes = out.into_bytes();
        bytes.extend(w.into_inner().expect("vec write"));
        bytes
    }
}

pub fn stress_profile_csv(profile: &[(usize, f64)], comments: &[String]) -> Vec<u8> {
    let mut out = String::new();
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("k,stress\n");
    for (k, s) in profile {
        out.push_str(&format!("{k},{}\n", format_g17(*s)));
    }
    out.into_bytes()
}

/// Validated dissimilarities in row-major order.
struct Dissimilarities<'a> {
    ids: &'a [String],
    values: &'a [f64],
}

impl<'a> Dissimilarities<'a> {
    fn new(ids: &'a [String], values: &'a [f64]) -> Result<Self, EmbedError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(EmbedError::Shape(format!("{} values for {n} ids", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(EmbedError::NonzeroDiagonal(ids[i].clone()));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(EmbedError::InvalidEntry(ids[i].clone(), ids[j].clone()));
                }
                if v != values[j * n + i] {
                    return Err(EmbedError::Asymmetric(ids[i].clone(), ids[j].clone()));
                }
            }
        }
        Ok(Dissimilarities { ids, values })
    }

    fn n(&self) -> usize {
        self.ids.len()
    }
}

/// `B = -1/2 J D² J` with `J = I - 11ᵀ/n`, filled from the upper triangle so
/// it is exactly symmetric.
pub fn double_center(values: &[f64], n: usize) -> Vec<f64> {
    let sq: Vec<f64> = values.iter().map(|d| d * d).collect();
    let row_mean: Vec<f64> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = -0.5 * (sq[i * n + j] - row_mean[i] - row_mean[j] + grand);
            b[i * n + j] = v;
            b[j * n + i] = v;
        }
    }
    b
}

fn decompose(d: &Dissimilarities<'_>) -> Result<SymmetricEigen, EmbedError> {
    Ok(symmetric_eigen(&double_center(d.values, d.n()), d.n())?)
}

/// Top-`k` coordinates: eigenvectors scaled by `sqrt(max(λ, 0))`, re-centered,
/// and sign-fixed so each dimension's largest-magnitude coordinate is positive.
fn coordinates(eig: &SymmetricEigen, k: usize) -> Vec<Vec<f64>> {
    let n = eig.order();
    let mut coords = vec![vec![0.0; k]; n];
    for dim in 0..k {
        let scale = eig.values[dim].max(0.0).sqrt();
        let mut col: Vec<f64> = (0..n).map(|i| eig.vector_component(i, dim) * scale).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|x| *x -= mean);
        let pivot = col.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (row, x) in coords.iter_mut().zip(col) {
            row[dim] = x;
        }
    }
    coords
}

fn negative_eigenvalues(values: &[f64]) -> Vec<f64> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values.iter().copied().filter(|&v| v < -1e-9 * scale).collect()
}

fn stress_raw(values: &[f64], n: usize, coords: &[Vec<f64>]) -> Result<f64, EmbedError> {
    if coords.len() != n {
        return Err(EmbedError::Shape(format!("{} coordinate rows for {n} points", coords.len())));
    }
    let k = coords.first().map_or(0, Vec::len);
    if coords.iter().any(|r| r.len() != k) {
        return Err(EmbedError::Shape("ragged coordinate rows".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = values[i * n + j];
            let d = coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            num += (d - delta) * (d - delta);
            den += delta * delta;
        }
    }
    if den == 0.0 {
        return Err(EmbedError::DegenerateStress);
    }
    Ok((num / den).sqrt())
}

/// Kruskal stress-1: `sqrt(Σ_{i<j} (d_ij - δ_ij)² / Σ_{i<j} δ_ij²)`.
pub fn stress(dissim: &SymmetricMatrix, coordinates: &[Vec<f64>]) -> Result<f64, EmbedError> {
    if dissim.kind().is_similarity() {
        return Err(EmbedError::NotDissimilarity);
    }
    stress_raw(dissim.values(), dissim.len(), coordinates)
}

pub fn classical_mds(dissim: &SymmetricMatrix, k: usize) -> Result<Embedding, EmbedError> {
    if dissim.kind().is_similarity() {
        return Err(EmbedError::NotDissimilarity);
    }
    classical_mds_from_values(dissim.ids(), dissim.values(), k)
}

/// Classical MDS over an arbitrary non-negative, symmetric, zero-diagonal
/// row-major matrix (e.g. Euclidean distances that exceed 1).
pub fn classical_mds_from_values(ids: &[String], values: &[f64], k: usize) -> Result<Embedding, EmbedError> {
    let d = Dissimilarities::new(ids, values)?;
    let max = d.n().saturating_sub(1);
    if k < 1 || k > max {
        return Err(EmbedError::DimensionOutOfRange { k, max });
    }
    let eig = decompose(&d)?;
    let coordinates = coordinates(&eig, k);
    let stress = stress_raw(values, d.n(), &coordinates)?;
    Ok(Embedding {
        ids: ids.to_vec(),
        coordinates,
        k,
        stress,
        negative_eigenvalues: negative_eigenvalues(&eig.values),
        eigenvalues: eig.values,
    })
}

/// Stress of the classical solution at each `k` in `1..=k_max`, from a single
/// eigendecomposition.
pub fn stress_profile(dissim: &SymmetricMatrix, k_max: usize) -> Result<Vec<(usize, f64)>, EmbedError> {
    if dissim.kind().is_similarity() {
        return Err(EmbedError::NotDissimilarity);
    }
    stress_profile_from_values(dissim.ids(), dissim.values(), k_max)
}

pub fn stress_profile_from_values(
    ids: &[String],
    values: &[f64],
    k_max: usize,
) -> Result<Vec<(usize, f64)>, EmbedError> {
    let d = Dissimilarities::new(ids, values)?;
    let max = d.n().saturating_sub(1);
    if k_max < 1 || k_max > max {
        return Err(EmbedError::DimensionOutOfRange { k: k_max, max });
    }
    let eig = decompose(&d)?;
    (1..=k_max).map(|k| Ok((k, stress_raw(values, d.n(), &coordinates(&eig, k))?))).collect()
}
