//! End-to-end batch run: labels and manifest in, a fixed set of report files out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_report, novelty_ranking, rank_languages, BootstrapConfig, CoverageReport};
use crate::digest::sha256_hex;
use crate::embed::{classical_mds, stress_profile};
use crate::label_store::{
    build_matrix, parse_label_table, validate_manifest, LabelFormat, MatrixPolicy, SceneManifest, SetTag,
};
use crate::simdist::{language_distance_matrix, scene_similarity_matrix, to_dissimilarity};
use crate::stats::RNG_ALGORITHM;

pub const BUNDLE_FILES: [&str; 7] = [
    "run.json",
    "scene_similarity.csv",
    "coverage.json",
    "novelty.csv",
    "language_distances.csv",
    "language_ranking.csv",
    "mds_coordinates.csv",
];

pub const DEFAULT_BASE_LANGUAGES: [&str; 7] = ["en", "zh", "fr", "ja", "nl", "es", "ko"];

/// Fully resolved settings of a run. The output directory is not part of it:
/// a bundle's bytes do not depend on where it is written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    /// Role (`labels`, `manifest`, ...) to path as given on the command line.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub n_bootstrap: usize,
    pub level: f64,
    pub mds_dims: usize,
    pub stress_k_max: usize,
    pub normalize_vi: bool,
    pub policy: MatrixPolicy,
    pub base_set: SetTag,
    /// Novelty candidates; `None` ranks every scene outside the base set.
    pub novelty_set: Option<SetTag>,
    pub base_languages: Vec<String>,
    pub provider_profile: Option<String>,
}

impl RunConfig {
    pub fn pipeline(labels_path: &str, manifest_path: &str, seed: u64) -> Self {
        RunConfig {
            command: "pipeline".into(),
            inputs: BTreeMap::from([
                ("labels".to_string(), labels_path.to_string()),
                ("manifest".to_string(), manifest_path.to_string()),
            ]),
            seed,
            n_bootstrap: 1000,
            level: 0.95,
            mds_dims: 2,
            stress_k_max: 5,
            normalize_vi: true,
            policy: MatrixPolicy::Modal,
            base_set: SetTag::Trps,
            novelty_set: None,
            base_languages: DEFAULT_BASE_LANGUAGES.iter().map(|s| s.to_string()).collect(),
            provider_profile: None,
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

fn at<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError { stage, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub files: Vec<(&'static str, Vec<u8>)>,
}

impl Bundle {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| *n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct InputDigest<'a> {
    role: &'a str,
    path: &'a str,
    sha256: String,
}

#[derive(Serialize)]
struct StressPoint {
    k: usize,
    stress: f64,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    inputs: Vec<InputDigest<'a>>,
    label_matrix_sha256: String,
    languages: &'a [String],
    n_scenes: usize,
    provenance: crate::label_store::CellProvenance,
    modal_ties: usize,
    manifest_diagnostics: Vec<String>,
    scene_similarity_sha256: String,
    language_distance_sha256: String,
    rng: &'static str,
    mds_stress: f64,
    mds_negative_eigenvalues: &'a [f64],
    stress_profile: Vec<StressPoint>,
    files: [&'static str; 7],
}

#[derive(Serialize)]
struct CoverageTable<'a> {
    inputs: &'a [String],
    rows: Vec<CoverageReport>,
}

pub fn run_pipeline(config: &RunConfig, labels: &[u8], manifest: &[u8]) -> Result<Bundle, PipelineError> {
    let table = parse_label_table(labels, LabelFormat::Csv).map_err(at("ingest"))?;
    let manifest_parsed = SceneManifest::from_json(manifest).map_err(at("ingest"))?;
    let diagnostics = validate_manifest(&manifest_parsed, &table);
    let matrix = build_matrix(&table, &manifest_parsed, config.policy).map_err(at("matrix"))?;

    let input_digests = vec![
        InputDigest {
            role: "labels",
            path: config.inputs.get("labels").map(String::as_str).unwrap_or(""),
            sha256: sha256_hex(labels),
        },
        InputDigest {
            role: "manifest",
            path: config.inputs.get("manifest").map(String::as_str).unwrap_or(""),
            sha256: sha256_hex(manifest),
        },
    ];
    let mut comments: Vec<String> =
        input_digests.iter().map(|d| format!("input {} sha256={}", d.role, d.sha256)).collect();
    comments.push(format!("label_matrix sha256={}", matrix.digest()));

    let sim = scene_similarity_matrix(&matrix).map_err(at("similarity"))?;
    let universe = manifest_parsed.scene_ids();

    let base = manifest_parsed.ids_in_set(config.base_set);
    if base.is_empty() {
        return Err(PipelineError {
            stage: "coverage",
            message: format!("base set {} has no scenes", config.base_set.as_str()),
        });
    }
    let bootstrap = BootstrapConfig { n: config.n_bootstrap, level: config.level, seed: config.seed };
    let mut rows = Vec::new();
    let mut report = coverage_report(&sim, &universe, &base, Some(bootstrap)).map_err(at("coverage"))?;
    report.label = Some(config.base_set.as_str().to_string());
    rows.push(report);
    for tag in SetTag::ALL.into_iter().filter(|t| *t != config.base_set) {
        let extra = manifest_parsed.ids_in_set(tag);
        if extra.is_empty() {
            continue;
        }
        let subset: Vec<String> = base.iter().chain(&extra).cloned().collect();
        let mut report = coverage_report(&sim, &universe, &subset, Some(bootstrap)).map_err(at("coverage"))?;
        report.label = Some(format!("{}+{}", config.base_set.as_str(), tag.as_str()));
        rows.push(report);
    }

    let candidates: Vec<String> = match config.novelty_set {
        Some(tag) => manifest_parsed.ids_in_set(tag),
        None => universe.iter().filter(|id| !base.contains(id)).cloned().collect(),
    };
    let novelty = novelty_ranking(&sim, &base, &candidates).map_err(at("novelty"))?;

    let lang_dist = language_distance_matrix(&matrix, config.normalize_vi).map_err(at("language distances"))?;
    let lang_candidates: Vec<String> =
        matrix.languages().iter().filter(|l| !config.base_languages.contains(l)).cloned().collect();
    let ranking =
        rank_languages(&lang_dist, &config.base_languages, &lang_candidates).map_err(at("language ranking"))?;

    let dissim = to_dissimilarity(&sim).map_err(at("embedding"))?;
    let embedding = classical_mds(&dissim, config.mds_dims).map_err(at("embedding"))?;
    let profile = stress_profile(&dissim, config.stress_k_max).map_err(at("embedding"))?;

    let record = RunRecord {
        config,
        inputs: input_digests,
        label_matrix_sha256: matrix.digest(),
        languages: matrix.languages(),
        n_scenes: matrix.scenes().len(),
        provenance: matrix.provenance(),
        modal_ties: matrix.modal_ties().len(),
        manifest_diagnostics: diagnostics.iter().map(|d| d.to_string()).collect(),
        scene_similarity_sha256: sim.digest(),
        language_distance_sha256: lang_dist.digest(),
        rng: RNG_ALGORITHM,
        mds_stress: embedding.stress,
        mds_negative_eigenvalues: &embedding.negative_eigenvalues,
        stress_profile: profile.iter().map(|&(k, stress)| StressPoint { k, stress }).collect(),
        files: BUNDLE_FILES,
    };

    let mut lang_comments = comments.clone();
    lang_comments.push(format!("normalized={}", config.normalize_vi));
    let mut mds_comments = comments.clone();
    mds_comments.push(format!("stress={}", crate::digest::format_g17(embedding.stress)));

    Ok(Bundle {
        files: vec![
            (BUNDLE_FILES[0], json(&record)),
            (BUNDLE_FILES[1], sim.to_csv_bytes(&comments)),
            (BUNDLE_FILES[2], json(&CoverageTable { inputs: &comments, rows })),
            (BUNDLE_FILES[3], novelty.to_csv_bytes(&comments)),
            (BUNDLE_FILES[4], lang_dist.to_csv_bytes(&lang_comments)),
            (BUNDLE_FILES[5], ranking.to_csv_bytes(&comments)),
            (BUNDLE_FILES[6], embedding.to_csv_bytes(&mds_comments)),
        ],
    })
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::small_fixture;

    fn small_inputs() -> (Vec<u8>, Vec<u8>, RunConfig) {
        let (m, t) = small_fixture(3);
        let mut cfg = RunConfig::pipeline("labels.csv", "manifest.json", 7);
        cfg.n_bootstrap = 50;
        cfg.base_languages = vec!["en".into(), "zh".into()];
        (t.to_csv_bytes(), m.to_json().into_bytes(), cfg)
    }

    #[test]
    fn bundle_has_seven_files() {
        let (labels, manifest, cfg) = small_inputs();
        let b = run_pipeline(&cfg, &labels, &manifest).unwrap();
        let names: Vec<&str> = b.files.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, BUNDLE_FILES);
        let digest = sha256_hex(&labels);
        for (name, bytes) in &b.files {
            assert!(String::from_utf8_lossy(bytes).contains(&digest), "{name} lacks the labels digest");
        }
    }

    #[test]
    fn coverage_rows_in_set_order() {
        let (labels, manifest, cfg) = small_inputs();
        let b = run_pipeline(&cfg, &labels, &manifest).unwrap();
        let v: serde_json::Value = serde_json::from_slice(b.get("coverage.json").unwrap()).unwrap();
        let labels: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
        assert_eq!(labels, ["TRPS", "TRPS+ZHANG", "TRPS+LJSP", "TRPS+LCXRK"]);
    }

    #[test]
    fn errors_name_the_stage() {
        let (labels, manifest, mut cfg) = small_inputs();
        cfg.base_languages = vec!["xx".into()];
        let e = run_pipeline(&cfg, &labels, &manifest).unwrap_err();
        assert_eq!(e.stage, "language ranking");
        let e = run_pipeline(&cfg, b"bad", &manifest).unwrap_err();
        assert_eq!(e.stage, "ingest");
        assert!(e.to_string().starts_with("ingest stage failed"));
    }
}
