//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line for
//! each, and exits non-zero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spatialcov::coverage::{bootstrap_coverage_ci, coverage, coverage_report, greedy_extend, BootstrapConfig};
use spatialcov::elicit::{
    build_prompt, format_numbered_list, parse_numbered_response, ElicitationSpec, Elicitor, Language, ProviderProfile,
    ScriptedTransport,
};
use spatialcov::embed::{classical_mds, classical_mds_from_values};
use spatialcov::evalscore::{evaluate_language, human_human_alignment, ModelRow};
use spatialcov::fixtures::{full_size_fixture, synthetic_labels, synthetic_manifest};
use spatialcov::label_store::{
    build_matrix, normalize_label, parse_label_table, CellProvenance, LabelEntry, LabelFormat, LabelMatrix,
    LabelOrigin, LabelTable, MatrixPolicy, SceneManifest, SetTag,
};
use spatialcov::pipeline::{run_pipeline, RunConfig};
use spatialcov::simdist::{
    language_distance_matrix, scene_similarity_matrix, variation_of_information, EntropyBase, MatrixKind, Partition,
    SymmetricMatrix,
};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:02}")).collect()
}

/// Random label matrix: `n` scenes, `l` languages, labels from an alphabet of `k`.
fn random_labels(rng: &mut ChaCha8Rng, n: usize, l: usize, k: u32) -> Vec<Vec<u32>> {
    (0..l).map(|_| (0..n).map(|_| rng.random_range(0..k)).collect()).collect()
}

fn label_matrix(rows: &[Vec<u32>]) -> LabelMatrix {
    let n = rows[0].len();
    LabelMatrix::from_rows(
        ids("l", rows.len()),
        ids("s", n),
        rows.iter().map(|r| r.iter().map(|v| format!("t{v}")).collect()).collect(),
        CellProvenance::Llm,
    )
    .unwrap()
}

/// Max-then-mean coverage straight from the labels, with similarity counted as matches / languages.
fn coverage_oracle(rows: &[Vec<u32>], subset: &[usize]) -> f64 {
    let n = rows[0].len();
    let l = rows.len() as f64;
    let sim = |i: usize, j: usize| rows.iter().filter(|r| r[i] == r[j]).count() as f64 / l;
    let mut total = 0.0;
    for u in 0..n {
        let mut best = f64::NEG_INFINITY;
        for &s in subset {
            best = best.max(sim(s, u));
        }
        total += best;
    }
    total / n as f64
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn c1_coverage_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let l = rng.random_range(1..=6);
        let rows = random_labels(&mut rng, n, l, 4);
        let sim = scene_similarity_matrix(&label_matrix(&rows)).unwrap();
        let mut subset: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        if subset.is_empty() {
            subset.push(rng.random_range(0..n));
        }
        let names: Vec<String> = subset.iter().map(|&i| format!("s{i:02}")).collect();
        let got = coverage(&sim, &ids("s", n), &names).unwrap();
        if got.to_bits() != coverage_oracle(&rows, &subset).to_bits() {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches}/200 instances differ from the oracle"))
}

fn c2_submodularity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut triples, mut violations) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(3..=12);
        let l = rng.random_range(1..=6);
        let rows = random_labels(&mut rng, n, l, 3);
        let sim = scene_similarity_matrix(&label_matrix(&rows)).unwrap();
        let all = ids("s", n);
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let x = order[0];
            let big_len = rng.random_range(1..n);
            let small_len = rng.random_range(1..=big_len);
            let big: Vec<String> = order[1..=big_len].iter().map(|&i| all[i].clone()).collect();
            let small: Vec<String> = big[..small_len].to_vec();
            let with_x = |s: &[String]| {
                let mut v = s.to_vec();
                v.push(all[x].clone());
                v
            };
            let cs = coverage(&sim, &all, &small).unwrap();
            let cb = coverage(&sim, &all, &big).unwrap();
            let gs = coverage(&sim, &all, &with_x(&small)).unwrap() - cs;
            let gb = coverage(&sim, &all, &with_x(&big)).unwrap() - cb;
            triples += 1;
            if cs > cb + 1e-12 || gs < gb - 1e-12 || gs < -1e-12 {
                violations += 1;
            }
        }
    }
    check(violations == 0, format!("{violations} violations in {triples} (S, S', x) triples"))
}

/// Share of greedy runs within 1% of the exhaustive optimum, plus any runs
/// below the (1-1/e) bound.
fn greedy_vs_optimum(sims: &[SymmetricMatrix]) -> (usize, usize, usize) {
    let bound = 1.0 - (-1.0f64).exp();
    let (mut cases, mut below_bound, mut near_opt) = (0, 0, 0);
    for sim in sims {
        let all = sim.ids().to_vec();
        for k in [2, 3] {
            let greedy = greedy_extend(sim, &all, &[], &all, k).unwrap();
            let g = greedy.entries.last().unwrap().cumulative_coverage.unwrap();
            let opt = combinations(all.len(), k)
                .iter()
                .map(|c| coverage_oracle_sim(sim, c))
                .fold(f64::NEG_INFINITY, f64::max);
            cases += 1;
            below_bound += (g < bound * opt - 1e-12) as usize;
            near_opt += (g >= 0.99 * opt - 1e-12) as usize;
        }
    }
    (cases, below_bound, near_opt)
}

fn coverage_oracle_sim(sim: &SymmetricMatrix, subset: &[usize]) -> f64 {
    let n = sim.len();
    (0..n).map(|u| subset.iter().map(|&s| sim.get(s, u)).fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n as f64
}

fn c3_greedy_quality() -> Verdict {
    // language-structured instances: 23 languages labelling 10 scenes from shared latent relations
    let manifest = synthetic_manifest(&[(SetTag::Trps, 4), (SetTag::Lcxrk, 2), (SetTag::Zhang, 2), (SetTag::Ljsp, 2)]);
    let structured: Vec<SymmetricMatrix> = (0..100)
        .map(|t| {
            let table = synthetic_labels(&manifest, 23, 300 + t, "model", LabelOrigin::Llm);
            scene_similarity_matrix(&build_matrix(&table, &manifest, MatrixPolicy::Modal).unwrap()).unwrap()
        })
        .collect();
    // i.i.d. labels with no shared structure, reported for reference only
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let iid: Vec<SymmetricMatrix> = (0..100)
        .map(|_| {
            let l = rng.random_range(2..=6);
            scene_similarity_matrix(&label_matrix(&random_labels(&mut rng, 10, l, 3))).unwrap()
        })
        .collect();
    let (cases, below_bound, near_opt) = greedy_vs_optimum(&structured);
    let (iid_cases, iid_below, iid_near) = greedy_vs_optimum(&iid);
    let share = near_opt as f64 / cases as f64;
    check(
        below_bound == 0 && iid_below == 0 && share >= 0.8,
        format!(
            "structured: {below_bound}/{cases} below (1-1/e)*opt, {:.1}% within 1% of opt; i.i.d. labels: {iid_below}/{iid_cases} below bound, {:.1}% within 1%",
            100.0 * share,
            100.0 * iid_near as f64 / iid_cases as f64
        ),
    )
}

fn same_partition(a: &[u32], b: &[u32]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn c4_vi_axioms() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let n = 20;
    let names = ids("e", n);
    let cap = (n as f64).log2();
    let mut failures = Vec::new();
    let vi = |a: &Partition, b: &Partition| variation_of_information(a, b, EntropyBase::Bits).unwrap();
    for t in 0..1000 {
        let labels: Vec<Vec<u32>> = (0..3)
            .map(|_| {
                let k = rng.random_range(1..=8);
                (0..n).map(|_| rng.random_range(0..k)).collect()
            })
            .collect();
        let parts: Vec<Partition> = labels.iter().map(|l| Partition::from_labels(names.clone(), l).unwrap()).collect();
        let (p, q, r) = (&parts[0], &parts[1], &parts[2]);
        let (pq, qp, qr, pr) = (vi(p, q), vi(q, p), vi(q, r), vi(p, r));
        let ok = (pq - qp).abs() <= 1e-12
            && vi(p, p).abs() <= 1e-12
            && pq >= -1e-12
            && (pq.abs() <= 1e-12) == same_partition(&labels[0], &labels[1])
            && pr <= pq + qr + 1e-12
            && pq <= cap + 1e-12;
        if !ok && failures.len() < 3 {
            failures.push(t);
        }
    }
    let mut normalized_ok = true;
    for _ in 0..50 {
        let k = rng.random_range(1..=8);
        let rows = random_labels(&mut rng, n, 4, k);
        let d = language_distance_matrix(&label_matrix(&rows), true).unwrap();
        normalized_ok &= d.values().iter().all(|v| (0.0..=1.0).contains(v));
    }
    check(
        failures.is_empty() && normalized_ok,
        format!("1000 triples over 20 elements; failing triples {failures:?}; normalized VI in [0,1]: {normalized_ok}"),
    )
}

fn planar_distances(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
        }
    }
    d
}

fn embedded_distance(coords: &[Vec<f64>], i: usize, j: usize) -> f64 {
    coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn c5_mds_recovery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut worst_err, mut worst_stress) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(3..=30);
        let points: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))).collect();
        let d = planar_distances(&points);
        let e = classical_mds_from_values(&ids("p", n), &d, 2).unwrap();
        for i in 0..n {
            for j in 0..n {
                worst_err = worst_err.max((embedded_distance(&e.coordinates, i, j) - d[i * n + j]).abs());
            }
        }
        worst_stress = worst_stress.max(e.stress);
    }

    let line = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
    let e = classical_mds_from_values(&ids("p", 3), &line, 1).unwrap();
    let collinear = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 2.0)]
        .iter()
        .all(|&(i, j, want)| (embedded_distance(&e.coordinates, i, j) - want).abs() <= 1e-9)
        && e.stress <= 1e-9;
    let tri =
        SymmetricMatrix::new(ids("p", 3), vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], MatrixKind::SceneDissim)
            .unwrap();
    let e = classical_mds(&tri, 2).unwrap();
    let triangle =
        [(0, 1), (0, 2), (1, 2)].iter().all(|&(i, j)| (embedded_distance(&e.coordinates, i, j) - 1.0).abs() <= 1e-9);

    check(
        worst_err <= 1e-6 && worst_stress < 1e-6 && collinear && triangle,
        format!(
            "max distance error {worst_err:.2e}, max stress {worst_stress:.2e}; collinear {collinear}, triangle {triangle}"
        ),
    )
}

fn c6_scoring_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut identity_failures = 0;
    for _ in 0..200 {
        let n_scenes = rng.random_range(1..=15);
        let n_annotators = rng.random_range(1..=13);
        let mut entries = Vec::new();
        for s in 0..n_scenes {
            for a in 0..n_annotators {
                entries.push(
                    LabelEntry::new(format!("s{s}"), "xx", format!("h{a}"), format!("t{}", rng.random_range(0..4)))
                        .unwrap(),
                );
            }
        }
        let humans = LabelTable::new(entries, LabelOrigin::Human).unwrap();
        let model = ModelRow {
            language: "xx".into(),
            labels: (0..n_scenes).map(|s| (format!("s{s}"), format!("t{}", rng.random_range(0..5)))).collect(),
        };
        let r = evaluate_language(&model, &humans).unwrap();
        let ok = r.scenes.iter().all(|s| (s.binary == 1) == (s.graded > 0.0) && s.graded <= s.max_graded)
            && r.mean_graded <= r.max_graded_mean;
        identity_failures += (!ok) as usize;
    }

    // three annotators over four scenes
    let labels = [["on", "in", "on", "at"], ["on", "on", "on", "at"], ["in", "in", "on", "under"]];
    let mut entries = Vec::new();
    for (a, row) in labels.iter().enumerate() {
        for (s, l) in row.iter().enumerate() {
            entries.push(LabelEntry::new(format!("s{s}"), "en", format!("a{a}"), *l).unwrap());
        }
    }
    let table = LabelTable::new(entries, LabelOrigin::Human).unwrap();
    let mut pairs = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                let agree = (0..4).filter(|&s| labels[a][s] == labels[b][s]).count();
                pairs.push(agree as f64 / 4.0);
            }
        }
    }
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let mut sorted = pairs.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[(lo + 1).min(sorted.len() - 1)] - sorted[lo])
    };
    let got = human_human_alignment(&table, "en").unwrap();
    let alignment_ok = got.mean == mean && got.q_low == q(0.025) && got.q_high == q(0.975) && got.n_pairs == 6;
    check(
        identity_failures == 0 && alignment_ok,
        format!("{identity_failures}/200 fixtures break an identity; hand fixture alignment {} vs {mean}", got.mean),
    )
}

fn ci_for(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = random_labels(&mut rng, n, 5, 4);
    let sim = scene_similarity_matrix(&label_matrix(&rows)).unwrap();
    let all = ids("s", n);
    bootstrap_coverage_ci(&sim, &all[..3], &all, 1000, 0.95, seed).unwrap()
}

fn c7_bootstrap() -> Verdict {
    let deterministic = (0..5).all(|s| {
        ci_for(60, s).0.to_bits() == ci_for(60, s).0.to_bits() && ci_for(60, s).1.to_bits() == ci_for(60, s).1.to_bits()
    });

    let ones = label_matrix(&vec![vec![0u32; 12]; 3]);
    let sim = scene_similarity_matrix(&ones).unwrap();
    let all = ids("s", 12);
    let ones_ci = bootstrap_coverage_ci(&sim, &all[..2], &all, 1000, 0.95, 9).unwrap();

    let sizes = [25usize, 100, 400];
    let mut mean_width = [0.0; 3];
    let mut shrinking_trials = 0;
    for trial in 0..20u64 {
        let widths: Vec<f64> = sizes
            .iter()
            .map(|&n| {
                let (lo, hi) = ci_for(n, 1000 + trial);
                hi - lo
            })
            .collect();
        for (m, w) in mean_width.iter_mut().zip(&widths) {
            *m += w / 20.0;
        }
        shrinking_trials += (widths[2] < widths[0]) as usize;
    }
    let shrinks = mean_width[0] > mean_width[1] && mean_width[1] > mean_width[2] && shrinking_trials >= 18;
    check(
        deterministic && ones_ci == (1.0, 1.0) && shrinks,
        format!(
            "same seed identical: {deterministic}; all-ones CI {ones_ci:?}; mean widths {:.4} > {:.4} > {:.4} (|U| = 25, 100, 400), {shrinking_trials}/20 trials shrink",
            mean_width[0], mean_width[1], mean_width[2]
        ),
    )
}

fn random_label(rng: &mut ChaCha8Rng) -> String {
    const HANGUL: std::ops::Range<u32> = 0xAC00..0xD7A4;
    const CJK: std::ops::Range<u32> = 0x4E00..0x9FFF;
    const LATIN: &[char] = &['a', 'e', 'o', 'n', 's', 'é', 'è', 'ü', 'ñ', 'ç', 'ø', 'Å', 'ß', 'D', ' ', '-', '\''];
    let len = rng.random_range(1..=6);
    let script = rng.random_range(0..4);
    let s: String = (0..len)
        .map(|_| {
            let pick = if script == 3 { rng.random_range(0..3) } else { script };
            match pick {
                0 => char::from_u32(rng.random_range(HANGUL)).unwrap(),
                1 => char::from_u32(rng.random_range(CJK)).unwrap(),
                _ => LATIN[rng.random_range(0..LATIN.len())],
            }
        })
        .collect();
    s
}

fn c8_elicitation() -> Verdict {
    let (manifest, labels) = full_size_fixture(8);
    let matrix =
        spatialcov::label_store::build_matrix_for(&labels, &manifest, &["en".to_string()], MatrixPolicy::Modal)
            .unwrap();
    let spec = ElicitationSpec::new(
        Language::from_code("zh").unwrap(),
        Language::from_code("en").unwrap(),
        matrix.row(0).to_vec(),
        manifest,
        ProviderProfile::new("acceptance", "https://provider.invalid/v1", "model"),
    )
    .unwrap();
    let first = build_prompt(&spec).unwrap().digest;
    let stable = (0..10).all(|_| build_prompt(&spec).unwrap().digest == first);

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut round_trip_failures = 0;
    let mut tried = 0;
    while tried < 500 {
        let n = rng.random_range(1..=40);
        let list: Vec<String> = (0..n).filter_map(|_| normalize_label(&random_label(&mut rng)).ok()).collect();
        if list.is_empty() {
            continue;
        }
        tried += 1;
        let parsed = parse_numbered_response(&format_numbered_list(&list), list.len());
        if parsed.as_ref().ok() != Some(&list) {
            round_trip_failures += 1;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let transport = Arc::new(ScriptedTransport::new());
    let dry = Elicitor::new(transport.clone()).run(&spec, dir.path(), true).is_ok();
    let calls = transport.calls();
    check(
        stable && round_trip_failures == 0 && dry && calls == 0,
        format!("digest stable over 10 builds: {stable}; {round_trip_failures}/500 round-trip failures; dry-run transport calls: {calls}"),
    )
}

fn c9_coverage_table_replay() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/coverage_replay");
    let (labels_path, manifest_path) = (dir.join("labels.csv"), dir.join("manifest.json"));
    if !labels_path.exists() || !manifest_path.exists() {
        return Verdict::Skip(format!("no elicited label fixture at {}", dir.display()));
    }
    let table = parse_label_table(&std::fs::read(labels_path).unwrap(), LabelFormat::Csv).unwrap();
    let manifest = SceneManifest::from_json(&std::fs::read(manifest_path).unwrap()).unwrap();
    let matrix = build_matrix(&table, &manifest, MatrixPolicy::Modal).unwrap();
    let sim = scene_similarity_matrix(&matrix).unwrap();
    let universe = manifest.scene_ids();
    let trps = manifest.ids_in_set(SetTag::Trps);
    let bootstrap = Some(BootstrapConfig { n: 1000, level: 0.95, seed: 1 });
    let rows: Vec<_> = [None, Some(SetTag::Zhang), Some(SetTag::Ljsp), Some(SetTag::Lcxrk)]
        .iter()
        .map(|extra| {
            let mut subset = trps.clone();
            if let Some(tag) = extra {
                subset.extend(manifest.ids_in_set(*tag));
            }
            coverage_report(&sim, &universe, &subset, bootstrap).unwrap()
        })
        .collect();
    let lcxrk = &rows[3];
    let disjoint = rows[..3].iter().all(|r| r.ci_high.unwrap() < lcxrk.ci_low.unwrap());
    check(
        (rows[0].score - 0.914).abs() <= 0.005 && (lcxrk.score - 0.964).abs() <= 0.005 && disjoint,
        format!("TRPS {:.4}, TRPS+LCXRK {:.4}, LCXRK interval disjoint: {disjoint}", rows[0].score, lcxrk.score),
    )
}

fn c10_pipeline_determinism() -> Verdict {
    let (manifest, labels) = full_size_fixture(10);
    let (labels, manifest) = (labels.to_csv_bytes(), manifest.to_json().into_bytes());
    let config = RunConfig::pipeline("labels.csv", "manifest.json", 2024);
    let a = run_pipeline(&config, &labels, &manifest).unwrap();
    let b = run_pipeline(&config, &labels, &manifest).unwrap();
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write_to(dirs.0.path()).unwrap();
    b.write_to(dirs.1.path()).unwrap();
    let identical = a.files.iter().all(|(name, _)| {
        std::fs::read(dirs.0.path().join(name)).unwrap() == std::fs::read(dirs.1.path().join(name)).unwrap()
    });
    let cov: serde_json::Value = serde_json::from_slice(a.get("coverage.json").unwrap()).unwrap();
    let order: Vec<&str> = cov["rows"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    check(
        identical && a.files.len() == 7 && order == ["TRPS", "TRPS+ZHANG", "TRPS+LJSP", "TRPS+LCXRK"],
        format!("{} files, byte-identical: {identical}, coverage rows {order:?}", a.files.len()),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);
    let criteria: [Criterion; 10] = [
        ("1 coverage equals brute-force oracle", c1_coverage_oracle, Some(Duration::from_secs(5))),
        ("2 submodularity and monotonicity", c2_submodularity, Some(Duration::from_secs(10))),
        ("3 greedy quality vs exhaustive optimum", c3_greedy_quality, Some(Duration::from_secs(30))),
        ("4 variation of information metric axioms", c4_vi_axioms, Some(Duration::from_secs(5))),
        ("5 MDS recovery", c5_mds_recovery, Some(Duration::from_secs(10))),
        ("6 scoring identities", c6_scoring_identities, None),
        ("7 bootstrap determinism and shrinkage", c7_bootstrap, None),
        ("8 elicitation round-trips", c8_elicitation, None),
        ("9 coverage table replay", c9_coverage_table_replay, None),
        ("10 end-to-end pipeline determinism", c10_pipeline_determinism, Some(Duration::from_secs(60))),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let over = limit.is_some_and(|l| elapsed > l);
        let budget = limit.map(|l| format!(" / limit {}s", l.as_secs())).unwrap_or_default();
        let timing = format!("{:.2}s{budget}", elapsed.as_secs_f64());
        match verdict {
            Verdict::Pass(d) if !over => println!("PASS  {name}: {d} [{timing}]"),
            Verdict::Pass(d) => {
                failed += 1;
                println!("FAIL  {name}: over time budget; {d} [{timing}]");
            }
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{timing}]");
            }
            Verdict::Skip(d) => println!("SKIP  {name}: {d}"),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
