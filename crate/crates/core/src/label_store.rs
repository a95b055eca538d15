//! Ingestion and canonicalization of spatial-relation labels.
//!
//! Human and model labels both arrive as long-format CSV rows
//! (`scene_id,language,annotator_id,label`). They are validated into a
//! [`LabelTable`], and then collapsed into a [`LabelMatrix`] holding exactly one
//! canonical label per (language, scene) cell. Everything downstream compares
//! labels by exact equality of their normalized form.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::digest::sha256_hex;

pub const LABEL_CSV_HEADER: [&str; 4] = ["scene_id", "language", "annotator_id", "label"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("row {row}: malformed CSV: {message}")]
    MalformedCsv { row: u64, message: String },
    #[error("row {row}: invalid UTF-8 in field `{field}`")]
    InvalidUtf8 { row: u64, field: &'static str },
    #[error("row 1: header must be `scene_id,language,annotator_id,label`, found `{found}`")]
    BadHeader { found: String },
    #[error("row {row}: empty `{field}` field")]
    EmptyField { row: u64, field: &'static str },
    #[error("row {row}: empty label")]
    EmptyLabel { row: u64 },
    #[error(
        "row {row}: duplicate (scene_id, language, annotator_id) = ({scene_id}, {language}, {annotator_id}); first seen at row {first_row}"
    )]
    DuplicateTriple { row: u64, first_row: u64, scene_id: String, language: String, annotator_id: String },
    #[error("label is empty after trimming")]
    EmptyAfterTrim,
    #[error("cannot take the mode of an empty label multiset")]
    EmptyMultiset,
    #[error("{} missing (language, scene) cell(s): {}", .0.len(), format_pairs(.0))]
    MissingCells(Vec<(String, String)>),
    #[error("{} cell(s) have more than one annotator under REQUIRE_SINGLE: {}", .0.len(), format_pairs(.0))]
    MultiAnnotatorCells(Vec<(String, String)>),
    #[error("label matrix: {0}")]
    MalformedMatrix(String),
    #[error("scene manifest: {0}")]
    Manifest(String),
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    const SHOWN: usize = 20;
    let mut s = pairs.iter().take(SHOWN).map(|(l, sc)| format!("({l}, {sc})")).collect::<Vec<_>>().join(", ");
    if pairs.len() > SHOWN {
        s.push_str(&format!(", ... and {} more", pairs.len() - SHOWN));
    }
    s
}

/// Canonical comparison form of a label.
///
/// NFC, trim, internal whitespace collapsed to single spaces, then Unicode
/// default case folding. The result is re-composed to NFC because folding can
/// emit decomposed sequences.
pub fn normalize_label(raw: &str) -> Result<String, LabelError> {
    let composed: String = raw.nfc().collect();
    let collapsed = composed.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(LabelError::EmptyAfterTrim);
    }
    let folded = caseless::default_case_fold_str(&collapsed);
    Ok(folded.nfc().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalLabel {
    pub label: String,
    pub count: usize,
    pub total: usize,
    pub proportion: f64,
    /// Another label reached the same count; the codepoint-smallest one won.
    pub tie: bool,
}

/// Most frequent label of a cell. Ties go to the lexicographically smallest label.
pub fn modal_label<S: AsRef<str>>(cell: &[S]) -> Result<ModalLabel, LabelError> {
    if cell.is_empty() {
        return Err(LabelError::EmptyMultiset);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in cell {
        *counts.entry(label.as_ref()).or_insert(0) += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    let mut winners = counts.iter().filter(|(_, &c)| c == best).map(|(l, _)| *l);
    let label = winners.next().unwrap_or_default().to_string();
    let tie = winners.next().is_some();
    Ok(ModalLabel { label, count: best, total: cell.len(), proportion: best as f64 / cell.len() as f64, tie })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SetTag {
    Trps,
    Zhang,
    Ljsp,
    Lcxrk,
    Other,
}

impl SetTag {
    pub const ALL: [SetTag; 5] = [SetTag::Trps, SetTag::Zhang, SetTag::Ljsp, SetTag::Lcxrk, SetTag::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            SetTag::Trps => "TRPS",
            SetTag::Zhang => "ZHANG",
            SetTag::Ljsp => "LJSP",
            SetTag::Lcxrk => "LCXRK",
            SetTag::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<SetTag> {
        SetTag::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the focal object is marked on a stimulus page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Highlight {
    Gold,
    YellowArrow,
    RedArrow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub set_tag: SetTag,
    pub page_number: u32,
    pub focal_object: String,
    pub background_object: String,
    pub highlight: Highlight,
}

/// Contiguous page range sharing one highlight convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HighlightRun {
    pub highlight: Highlight,
    pub first_page: u32,
    pub last_page: u32,
}

/// Highlight layout of the 220-page stimulus document (TRPS+LCXRK gold,
/// Zhang yellow arrows, LJSP red arrows).
pub const REFERENCE_HIGHLIGHT_RUNS: [HighlightRun; 3] = [
    HighlightRun { highlight: Highlight::Gold, first_page: 1, last_page: 113 },
    HighlightRun { highlight: Highlight::YellowArrow, first_page: 114, last_page: 176 },
    HighlightRun { highlight: Highlight::RedArrow, first_page: 177, last_page: 220 },
];

/// Ordered scene list; pages are exactly `1..=N` in array order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SceneRecord>", into = "Vec<SceneRecord>")]
pub struct SceneManifest {
    scenes: Vec<SceneRecord>,
}

impl From<SceneManifest> for Vec<SceneRecord> {
    fn from(m: SceneManifest) -> Self {
        m.scenes
    }
}

impl TryFrom<Vec<SceneRecord>> for SceneManifest {
    type Error = LabelError;

    fn try_from(scenes: Vec<SceneRecord>) -> Result<Self, LabelError> {
        SceneManifest::new(scenes)
    }
}

impl SceneManifest {
    pub fn new(scenes: Vec<SceneRecord>) -> Result<Self, LabelError> {
        if scenes.is_empty() {
            return Err(LabelError::Manifest("manifest has no scenes".into()));
        }
        let mut ids = BTreeSet::new();
        for (i, scene) in scenes.iter().enumerate() {
            if scene.scene_id.trim().is_empty() {
                return Err(LabelError::Manifest(format!("entry {} has an empty scene_id", i + 1)));
            }
            if !ids.insert(scene.scene_id.as_str()) {
                return Err(LabelError::Manifest(format!("duplicate scene_id `{}`", scene.scene_id)));
            }
            let expected = i as u32 + 1;
            if scene.page_number != expected {
                return Err(LabelError::Manifest(format!(
                    "scene `{}` has page_number {} but entry {} must have page {} (pages are unique, ordered, and run 1..N)",
                    scene.scene_id, scene.page_number, expected, expected
                )));
            }
        }
        Ok(SceneManifest { scenes })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, LabelError> {
        let scenes: Vec<SceneRecord> =
            serde_json::from_slice(bytes).map_err(|e| LabelError::Manifest(e.to_string()))?;
        SceneManifest::new(scenes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.scenes).expect("manifest serializes")
    }

    pub fn scenes(&self) -> &[SceneRecord] {
        &self.scenes
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.iter().map(|s| s.scene_id.clone()).collect()
    }

    pub fn ids_in_set(&self, tag: SetTag) -> Vec<String> {
        self.scenes.iter().filter(|s| s.set_tag == tag).map(|s| s.scene_id.clone()).collect()
    }

    pub fn highlight_runs(&self) -> Vec<HighlightRun> {
        let mut runs: Vec<HighlightRun> = Vec::new();
        for scene in &self.scenes {
            match runs.last_mut() {
                Some(run) if run.highlight == scene.highlight => run.last_page = scene.page_number,
                _ => runs.push(HighlightRun {
                    highlight: scene.highlight,
                    first_page: scene.page_number,
                    last_page: scene.page_number,
                }),
            }
        }
        runs
    }

    /// For a 220-scene manifest, the highlight layout must match
    /// [`REFERENCE_HIGHLIGHT_RUNS`]. Other sizes are unconstrained.
    pub fn check_reference_layout(&self) -> Result<(), LabelError> {
        if self.scenes.len() != 220 {
            return Ok(());
        }
        for scene in &self.scenes {
            let run = REFERENCE_HIGHLIGHT_RUNS
                .iter()
                .find(|r| (r.first_page..=r.last_page).contains(&scene.page_number))
                .expect("pages 1..=220 are covered");
            if run.highlight != scene.highlight {
                return Err(LabelError::Manifest(format!(
                    "page {} (`{}`) has highlight {:?}; pages {}-{} must be {:?}",
                    scene.page_number, scene.scene_id, scene.highlight, run.first_page, run.last_page, run.highlight
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelOrigin {
    #[default]
    Human,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub scene_id: String,
    pub language: String,
    pub annotator_id: String,
    pub raw_label: String,
    pub normalized_label: String,
}

impl LabelEntry {
    pub fn new(
        scene_id: impl Into<String>,
        language: impl Into<String>,
        annotator_id: impl Into<String>,
        raw_label: impl Into<String>,
    ) -> Result<Self, LabelError> {
        let raw_label = raw_label.into();
        let normalized_label = normalize_label(&raw_label)?;
        Ok(LabelEntry {
            scene_id: scene_id.into(),
            language: language.into(),
            annotator_id: annotator_id.into(),
            raw_label,
            normalized_label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    entries: Vec<LabelEntry>,
    origin: LabelOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFormat {
    Csv,
}

pub fn parse_label_table(stream: &[u8], format: LabelFormat) -> Result<LabelTable, LabelError> {
    match format {
        LabelFormat::Csv => parse_label_csv(stream),
    }
}

fn parse_label_csv(stream: &[u8]) -> Result<LabelTable, LabelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(stream);
    let mut records = reader.byte_records();

    let header = match records.next() {
        None => return Err(LabelError::BadHeader { found: String::new() }),
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
    };
    let header_fields: Vec<String> = header.iter().map(|f| String::from_utf8_lossy(f).into_owned()).collect();
    // tolerate a UTF-8 BOM on the first field
    let mut normalized_header = header_fields.clone();
    if let Some(first) = normalized_header.first_mut() {
        *first = first.trim_start_matches('\u{feff}').to_string();
    }
    if normalized_header != LABEL_CSV_HEADER {
        return Err(LabelError::BadHeader { found: header_fields.join(",") });
    }

    let mut entries = Vec::new();
    let mut seen: HashMap<(String, String, String), u64> = HashMap::new();
    for record in records {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &'static str| -> Result<String, LabelError> {
            let bytes = record.get(i).unwrap_or_default();
            std::str::from_utf8(bytes).map(str::to_string).map_err(|_| LabelError::InvalidUtf8 { row, field: name })
        };
        let scene_id = field(0, "scene_id")?;
        let language = field(1, "language")?;
        let annotator_id = field(2, "annotator_id")?;
        let raw_label = field(3, "label")?;
        for (value, name) in [(&scene_id, "scene_id"), (&language, "language"), (&annotator_id, "annotator_id")] {
            if value.trim().is_empty() {
                return Err(LabelError::EmptyField { row, field: name });
            }
        }
        let normalized_label = normalize_label(&raw_label).map_err(|_| LabelError::EmptyLabel { row })?;
        let key = (scene_id.clone(), language.clone(), annotator_id.clone());
        if let Some(&first_row) = seen.get(&key) {
            return Err(LabelError::DuplicateTriple { row, first_row, scene_id, language, annotator_id });
        }
        seen.insert(key, row);
        entries.push(LabelEntry { scene_id, language, annotator_id, raw_label, normalized_label });
    }
    Ok(LabelTable { entries, origin: LabelOrigin::Human })
}

fn csv_error(err: csv::Error, fallback_row: u64) -> LabelError {
    let row = err.position().map(|p| p.line()).unwrap_or(fallback_row);
    LabelError::MalformedCsv { row, message: err.to_string() }
}

impl LabelTable {
    /// Validates the no-duplicate-triple and non-empty-label invariants.
    pub fn new(entries: Vec<LabelEntry>, origin: LabelOrigin) -> Result<Self, LabelError> {
        let mut seen: HashMap<(&str, &str, &str), u64> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let row = i as u64 + 2;
            if e.normalized_label.is_empty() {
                return Err(LabelError::EmptyLabel { row });
            }
            let key = (e.scene_id.as_str(), e.language.as_str(), e.annotator_id.as_str());
            if let Some(&first_row) = seen.get(&key) {
                return Err(LabelError::DuplicateTriple {
                    row,
                    first_row,
                    scene_id: e.scene_id.clone(),
                    language: e.language.clone(),
                    annotator_id: e.annotator_id.clone(),
                });
            }
            seen.insert(key, row);
        }
        Ok(LabelTable { entries, origin })
    }

    pub fn with_origin(mut self, origin: LabelOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn origin(&self) -> LabelOrigin {
        self.origin
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct language codes, sorted.
    pub fn languages(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.language.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn scene_ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.scene_id.clone()).collect()
    }

    pub fn restrict_language(&self, language: &str) -> LabelTable {
        LabelTable {
            entries: self.entries.iter().filter(|e| e.language == language).cloned().collect(),
            origin: self.origin,
        }
    }

    /// scene -> (annotator -> normalized label) for one language.
    pub fn annotations_by_scene(&self, language: &str) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.language == language) {
            out.entry(e.scene_id.clone()).or_default().insert(e.annotator_id.clone(), e.normalized_label.clone());
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LABEL_CSV_HEADER)?;
        for e in &self.entries {
            w.write_record([&e.scene_id, &e.language, &e.annotator_id, &e.raw_label])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatrixPolicy {
    Modal,
    RequireSingle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CellProvenance {
    SingleAnnotator,
    Modal,
    Llm,
}

impl CellProvenance {
    fn as_str(self) -> &'static str {
        match self {
            CellProvenance::SingleAnnotator => "SINGLE_ANNOTATOR",
            CellProvenance::Modal => "MODAL",
            CellProvenance::Llm => "LLM",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [CellProvenance::SingleAnnotator, CellProvenance::Modal, CellProvenance::Llm]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

/// Languages (rows) by scenes (columns), one canonical label per cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    languages: Vec<String>,
    scenes: Vec<String>,
    cells: Vec<String>,
    provenance: CellProvenance,
    modal_ties: Vec<(String, String)>,
}

impl LabelMatrix {
    /// `rows[l][s]` is the label of language `l` for scene `s`; labels are normalized here.
    pub fn from_rows(
        languages: Vec<String>,
        scenes: Vec<String>,
        rows: Vec<Vec<String>>,
        provenance: CellProvenance,
    ) -> Result<Self, LabelError> {
        check_unique(&languages, "language")?;
        check_unique(&scenes, "scene")?;
        if rows.len() != languages.len() {
            return Err(LabelError::MalformedMatrix(format!("{} rows for {} languages", rows.len(), languages.len())));
        }
        let mut cells = Vec::with_capacity(languages.len() * scenes.len());
        for (lang, row) in languages.iter().zip(rows) {
            if row.len() != scenes.len() {
                return Err(LabelError::MalformedMatrix(format!(
                    "row `{lang}` has {} labels for {} scenes",
                    row.len(),
                    scenes.len()
                )));
            }
            for (scene, label) in scenes.iter().zip(row) {
                let label = normalize_label(&label)
                    .map_err(|_| LabelError::MissingCells(vec![(lang.clone(), scene.clone())]))?;
                cells.push(label);
            }
        }
        Ok(LabelMatrix { languages, scenes, cells, provenance, modal_ties: Vec::new() })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn scenes(&self) -> &[String] {
        &self.scenes
    }

    pub fn provenance(&self) -> CellProvenance {
        self.provenance
    }

    /// (language, scene) cells whose modal label was decided by the tie rule.
    pub fn modal_ties(&self) -> &[(String, String)] {
        &self.modal_ties
    }

    pub fn language_index(&self, language: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == language)
    }

    pub fn scene_index(&self, scene: &str) -> Option<usize> {
        self.scenes.iter().position(|s| s == scene)
    }

    pub fn label_at(&self, language: usize, scene: usize) -> &str {
        &self.cells[language * self.scenes.len() + scene]
    }

    pub fn label(&self, language: &str, scene: &str) -> Option<&str> {
        Some(self.label_at(self.language_index(language)?, self.scene_index(scene)?))
    }

    pub fn row(&self, language: usize) -> &[String] {
        let n = self.scenes.len();
        &self.cells[language * n..(language + 1) * n]
    }

    /// Subsets and reorders rows and columns.
    pub fn select(&self, languages: &[String], scenes: &[String]) -> Result<LabelMatrix, LabelError> {
        let li = languages
            .iter()
            .map(|l| {
                self.language_index(l).ok_or_else(|| LabelError::MalformedMatrix(format!("unknown language `{l}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let si = scenes
            .iter()
            .map(|s| self.scene_index(s).ok_or_else(|| LabelError::MalformedMatrix(format!("unknown scene `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        check_unique(languages, "language")?;
        check_unique(scenes, "scene")?;
        let mut cells = Vec::with_capacity(li.len() * si.len());
        for &l in &li {
            for &s in &si {
                cells.push(self.label_at(l, s).to_string());
            }
        }
        let modal_ties =
            self.modal_ties.iter().filter(|(l, s)| languages.contains(l) && scenes.contains(s)).cloned().collect();
        Ok(LabelMatrix {
            languages: languages.to_vec(),
            scenes: scenes.to_vec(),
            cells,
            provenance: self.provenance,
            modal_ties,
        })
    }

    /// Wide CSV: `language,<scene ids...>`, preceded by a `# provenance:` comment line.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        writeln!(buf, "# provenance: {}", self.provenance.as_str()).expect("vec write");
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["language".to_string()];
            header.extend(self.scenes.iter().cloned());
            w.write_record(&header).expect("vec write");
            for (l, lang) in self.languages.iter().enumerate() {
                let mut record = vec![lang.clone()];
                record.extend(self.row(l).iter().cloned());
                w.write_record(&record).expect("vec write");
            }
            w.flush().expect("vec write");
        }
        buf
    }

    pub fn from_csv(bytes: &[u8]) -> Result<LabelMatrix, LabelError> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| LabelError::MalformedMatrix(format!("invalid UTF-8: {e}")))?;
        let mut provenance = CellProvenance::SingleAnnotator;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(p) = line.trim_start_matches('#').trim().strip_prefix("provenance:") {
                provenance = CellProvenance::parse(p.trim())
                    .ok_or_else(|| LabelError::MalformedMatrix(format!("unknown provenance `{}`", p.trim())))?;
            }
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(bytes);
        let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
        if header.get(0) != Some("language") {
            return Err(LabelError::MalformedMatrix("first header column must be `language`".into()));
        }
        let scenes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut languages = Vec::new();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(e, 0))?;
            languages.push(record.get(0).unwrap_or_default().to_string());
            rows.push(record.iter().skip(1).map(str::to_string).collect());
        }
        LabelMatrix::from_rows(languages, scenes, rows, provenance)
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_csv_bytes())
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<(), LabelError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(LabelError::MalformedMatrix(format!("duplicate {what} `{id}`")));
        }
    }
    Ok(())
}

/// Builds the full languages x manifest-scenes grid. Languages are the table's
/// distinct codes in sorted order; scenes follow manifest page order.
pub fn build_matrix(
    table: &LabelTable,
    manifest: &SceneManifest,
    policy: MatrixPolicy,
) -> Result<LabelMatrix, LabelError> {
    build_matrix_for(table, manifest, &table.languages(), policy)
}

pub fn build_matrix_for(
    table: &LabelTable,
    manifest: &SceneManifest,
    languages: &[String],
    policy: MatrixPolicy,
) -> Result<LabelMatrix, LabelError> {
    check_unique(languages, "language")?;
    let scenes = manifest.scene_ids();
    let lang_index: HashMap<&str, usize> = languages.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let scene_index: HashMap<&str, usize> = scenes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let n_scenes = scenes.len();
    let mut groups: Vec<Vec<&str>> = vec![Vec::new(); languages.len() * n_scenes];
    for e in table.entries() {
        if let (Some(&l), Some(&s)) = (lang_index.get(e.language.as_str()), scene_index.get(e.scene_id.as_str())) {
            groups[l * n_scenes + s].push(&e.normalized_label);
        }
    }

    let pair = |idx: usize| (languages[idx / n_scenes].clone(), scenes[idx % n_scenes].clone());
    let missing: Vec<_> = groups.iter().enumerate().filter(|(_, g)| g.is_empty()).map(|(i, _)| pair(i)).collect();
    if !missing.is_empty() {
        return Err(LabelError::MissingCells(missing));
    }
    if policy == MatrixPolicy::RequireSingle {
        let multi: Vec<_> = groups.iter().enumerate().filter(|(_, g)| g.len() > 1).map(|(i, _)| pair(i)).collect();
        if !multi.is_empty() {
            return Err(LabelError::MultiAnnotatorCells(multi));
        }
    }

    let mut cells = Vec::with_capacity(groups.len());
    let mut modal_ties = Vec::new();
    for (i, group) in groups.iter().enumerate() {
        let modal = modal_label(group)?;
        if modal.tie {
            modal_ties.push(pair(i));
        }
        cells.push(modal.label);
    }
    let provenance = match (policy, table.origin()) {
        (MatrixPolicy::Modal, _) => CellProvenance::Modal,
        (MatrixPolicy::RequireSingle, LabelOrigin::Llm) => CellProvenance::Llm,
        (MatrixPolicy::RequireSingle, LabelOrigin::Human) => CellProvenance::SingleAnnotator,
    };
    Ok(LabelMatrix { languages: languages.to_vec(), scenes, cells, provenance, modal_ties })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ManifestDiagnostic {
    /// The table labels a scene the manifest does not list.
    UnknownScene(String),
    /// The manifest lists a scene nobody labeled.
    UnlabeledScene(String),
}

impl fmt::Display for ManifestDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestDiagnostic::UnknownScene(id) => write!(f, "label table references unknown scene `{id}`"),
            ManifestDiagnostic::UnlabeledScene(id) => write!(f, "manifest scene `{id}` is unlabeled"),
        }
    }
}

pub fn validate_manifest(manifest: &SceneManifest, table: &LabelTable) -> Vec<ManifestDiagnostic> {
    let manifest_ids: BTreeSet<String> = manifest.scene_ids().into_iter().collect();
    let table_ids = table.scene_ids();
    let mut out: Vec<ManifestDiagnostic> =
        table_ids.difference(&manifest_ids).map(|id| ManifestDiagnostic::UnknownScene(id.clone())).collect();
    out.extend(manifest_ids.difference(&table_ids).map(|id| ManifestDiagnostic::UnlabeledScene(id.clone())));
    out
}
