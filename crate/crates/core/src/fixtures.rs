//! Deterministic synthetic label data for tests, demos and benchmarks.
//!
//! Scenes draw a latent relation type; each language lumps relation types into
//! its own vocabulary of terms, with a little labeling noise. Sets listed later
//! can reach relation types the earlier sets never use, so they add coverage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::label_store::{Highlight, LabelEntry, LabelOrigin, LabelTable, SceneManifest, SceneRecord, SetTag};

pub const SYNTHETIC_LANGUAGES: [&str; 23] = [
    "en", "zh", "fr", "ja", "nl", "es", "ko", "de", "it", "pt", "ro", "ru", "hi", "tr", "ar", "he", "sv", "pl", "fi",
    "hu", "el", "id", "vi",
];

const RELATION_TYPES: usize = 24;
const NOISE: f64 = 0.08;

fn highlight_for(tag: SetTag) -> Highlight {
    match tag {
        SetTag::Zhang => Highlight::YellowArrow,
        SetTag::Ljsp => Highlight::RedArrow,
        _ => Highlight::Gold,
    }
}

/// Scenes in the given set order, ids like `trps-001`, pages `1..=N`.
pub fn synthetic_manifest(sets: &[(SetTag, usize)]) -> SceneManifest {
    let mut scenes = Vec::new();
    for &(tag, n) in sets {
        for i in 1..=n {
            let page = scenes.len() as u32 + 1;
            scenes.push(SceneRecord {
                scene_id: format!("{}-{i:03}", tag.as_str().to_ascii_lowercase()),
                set_tag: tag,
                page_number: page,
                focal_object: format!("object {page}"),
                background_object: format!("ground {}", page % 7 + 1),
                highlight: highlight_for(tag),
            });
        }
    }
    SceneManifest::new(scenes).expect("generated manifest is valid")
}

/// One label per (language, scene) for the first `n_languages` synthetic codes
/// (cycling with a numeric suffix past 23), annotated by `annotator`.
pub fn synthetic_labels(
    manifest: &SceneManifest,
    n_languages: usize,
    seed: u64,
    annotator: &str,
    origin: LabelOrigin,
) -> LabelTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reach = 14usize;
    let mut scene_types = Vec::with_capacity(manifest.len());
    let mut current = None;
    for s in manifest.scenes() {
        if current != Some(s.set_tag) {
            if current.is_some() {
                reach = (reach + 3).min(RELATION_TYPES);
            }
            current = Some(s.set_tag);
        }
        scene_types.push(rng.random_range(0..reach));
    }
    let mut entries = Vec::with_capacity(manifest.len() * n_languages);
    for l in 0..n_languages {
        let code = match l / SYNTHETIC_LANGUAGES.len() {
            0 => SYNTHETIC_LANGUAGES[l].to_string(),
            k => format!("{}{k}", SYNTHETIC_LANGUAGES[l % SYNTHETIC_LANGUAGES.len()]),
        };
        let n_terms = rng.random_range(3..=12usize);
        let lexicon: Vec<usize> = (0..RELATION_TYPES).map(|_| rng.random_range(0..n_terms)).collect();
        for (s, &t) in manifest.scenes().iter().zip(&scene_types) {
            let term = if rng.random_bool(NOISE) { rng.random_range(0..n_terms) } else { lexicon[t] };
            entries.push(
                LabelEntry::new(&s.scene_id, &code, annotator, format!("{code}-term{term}")).expect("non-empty label"),
            );
        }
    }
    LabelTable::new(entries, origin).expect("generated table is valid")
}

/// 220 scenes in the stimulus page layout (TRPS, LCXRK, Zhang, LJSP) labeled
/// for 23 languages by a single synthetic model.
pub fn full_size_fixture(seed: u64) -> (SceneManifest, LabelTable) {
    let manifest =
        synthetic_manifest(&[(SetTag::Trps, 71), (SetTag::Lcxrk, 42), (SetTag::Zhang, 63), (SetTag::Ljsp, 44)]);
    let labels = synthetic_labels(&manifest, 23, seed, "synthetic-model", LabelOrigin::Llm);
    (manifest, labels)
}

/// 20 scenes across the four sets, 4 languages.
pub fn small_fixture(seed: u64) -> (SceneManifest, LabelTable) {
    let manifest = synthetic_manifest(&[(SetTag::Trps, 8), (SetTag::Lcxrk, 4), (SetTag::Zhang, 4), (SetTag::Ljsp, 4)]);
    let labels = synthetic_labels(&manifest, 4, seed, "synthetic-model", LabelOrigin::Llm);
    (manifest, labels)
}
