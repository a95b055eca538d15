//! `spatialcov` command-line interface.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation or a computation
//! errors, 2 on usage errors. Diagnostics go to stderr; data goes to `--out`
//! files or stdout.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spatialcov::coverage::{
    coverage_report, greedy_extend, novelty_ranking, rank_languages, BootstrapConfig, CoverageReport,
};
use spatialcov::digest::{format_g17, sha256_hex};
use spatialcov::elicit::{
    build_prompt, cache_key, reference_policy, ElicitOutcome, ElicitationSpec, Elicitor, HttpTransport, Language,
    PromptDoc, ProviderProfile,
};
use spatialcov::embed::{classical_mds, stress_profile, stress_profile_csv};
use spatialcov::evalscore::{
    evaluate_language, human_human_alignment, pearson_with_bootstrap, EvalReport, HumanAlignment, ModelRow,
    PearsonReport,
};
use spatialcov::label_store::{
    build_matrix, build_matrix_for, parse_label_table, validate_manifest, LabelFormat, LabelMatrix, LabelOrigin,
    LabelTable, MatrixPolicy, SceneManifest, SetTag,
};
use spatialcov::pipeline::{run_pipeline, RunConfig, DEFAULT_BASE_LANGUAGES};
use spatialcov::simdist::{
    language_distance_matrix, language_similarity_matrix, scene_similarity_matrix, to_dissimilarity, MatrixKind,
    SymmetricMatrix,
};

#[derive(Debug, Parser)]
#[command(
    name = "spatialcov",
    version,
    about = "Coverage, ranking and elicitation tools for spatial-relation label data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a label table against a manifest and write the label matrix.
    Ingest(IngestArgs),
    /// Scene similarity (or dissimilarity) matrix from a label matrix.
    Similarity(SimilarityArgs),
    /// Coverage of a scene subset over a universe, with a bootstrap interval.
    Coverage(CoverageArgs),
    /// Rank candidate scenes by greedy coverage gain or by novelty.
    RankScenes(RankScenesArgs),
    /// Rank candidate languages by distance to their nearest base language.
    RankLanguages(RankLanguagesArgs),
    /// Language distance matrix (variation of information).
    Distances(DistancesArgs),
    /// Classical multidimensional scaling of a dissimilarity matrix.
    Mds(MdsArgs),
    /// Score model labels against human labels for one language.
    Evaluate(EvaluateArgs),
    /// Pearson correlation of two id-keyed value files, with a bootstrap interval.
    Correlate(CorrelateArgs),
    /// Build elicitation prompts and collect model labels.
    Elicit(ElicitArgs),
    /// Run the full analysis and write a report bundle.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyArg {
    Modal,
    RequireSingle,
}

impl From<PolicyArg> for MatrixPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Modal => MatrixPolicy::Modal,
            PolicyArg::RequireSingle => MatrixPolicy::RequireSingle,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OriginArg {
    Human,
    Llm,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SceneRankMode {
    Greedy,
    Novelty,
}

fn parse_set_tag(s: &str) -> Result<SetTag, String> {
    SetTag::parse(s).ok_or_else(|| {
        let all: Vec<&str> = SetTag::ALL.iter().map(|t| t.as_str()).collect();
        format!("unknown stimulus set `{s}` (expected one of {})", all.join(", "))
    })
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "modal")]
    policy: PolicyArg,
    /// Who produced the labels; recorded as matrix provenance under require-single.
    #[arg(long, value_enum, default_value = "human")]
    origin: OriginArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SimilarityArgs {
    /// Label matrix CSV written by `ingest`.
    #[arg(long)]
    matrix: PathBuf,
    /// Write 1 - similarity instead.
    #[arg(long)]
    dissimilarity: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CoverageArgs {
    #[arg(long)]
    sim: PathBuf,
    /// `all` or a file with one scene id per line.
    #[arg(long, default_value = "all")]
    universe: String,
    /// File with one scene id per line.
    #[arg(long)]
    subset: PathBuf,
    /// Bootstrap replicates; 0 skips the interval.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct RankScenesArgs {
    #[arg(long)]
    sim: PathBuf,
    /// File with the base scene ids.
    #[arg(long)]
    base: PathBuf,
    /// File with candidate ids; defaults to every scene outside the base.
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: SceneRankMode,
    /// Number of greedy picks; defaults to all candidates.
    #[arg(long)]
    k: Option<usize>,
    /// `all` or a file of scene ids (greedy mode).
    #[arg(long, default_value = "all")]
    universe: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct RankLanguagesArgs {
    /// Language distance matrix CSV.
    #[arg(long)]
    dist: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BASE_LANGUAGES.map(String::from))]
    base: Vec<String>,
    /// Defaults to every language outside the base.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DistancesArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Divide VI by log2(number of scenes).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize_vi: bool,
    /// Write 1 - distance (requires normalization).
    #[arg(long)]
    similarity: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct MdsArgs {
    /// Scene dissimilarity or language distance matrix CSV.
    #[arg(long)]
    dissim: PathBuf,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also compute stress for k = 1..=K.
    #[arg(long)]
    stress_profile: Option<usize>,
    #[arg(long, requires = "stress_profile")]
    profile_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Label table of model output, one label per scene.
    #[arg(long)]
    model: PathBuf,
    /// Label table of human annotations.
    #[arg(long)]
    humans: PathBuf,
    #[arg(long)]
    language: String,
    /// Per-scene CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CorrelateArgs {
    /// CSV with header `id,value`.
    #[arg(long)]
    x: PathBuf,
    /// CSV with header `id,value`; ids must match `--x`.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ElicitArgs {
    /// Provider profile JSON.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Target languages as `code` or `code=Display Name`.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<String>,
    /// Reference language; defaults to zh for en and en otherwise.
    #[arg(long)]
    reference: Option<String>,
    /// Label table holding the reference language; modal label per scene is used.
    #[arg(long)]
    reference_labels: PathBuf,
    #[arg(long)]
    cache_dir: PathBuf,
    #[arg(long)]
    text_only: bool,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value = spatialcov::elicit::DEFAULT_ATTACHMENT)]
    attachment: String,
    #[arg(long)]
    dry_run: bool,
    /// Elicited label table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PipelineArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 5)]
    stress_k_max: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize_vi: bool,
    #[arg(long, value_enum, default_value = "modal")]
    policy: PolicyArg,
    #[arg(long, value_parser = parse_set_tag, default_value = "TRPS")]
    base_set: SetTag,
    #[arg(long, value_parser = parse_set_tag)]
    novelty_set: Option<SetTag>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BASE_LANGUAGES.map(String::from))]
    base_languages: Vec<String>,
    /// Provider profile recorded with the run.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Invalid(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) => m,
        }
    }
}

fn invalid<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Invalid(format!("{context}: {e}"))
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().ansi().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
                return 2;
            }
            let _ = write!(stdout, "{rendered}");
            return 0;
        }
    };
    let mut ctx = Ctx { stdout, stderr };
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, a),
        Command::Similarity(a) => cmd_similarity(&mut ctx, a),
        Command::Coverage(a) => cmd_coverage(&mut ctx, a),
        Command::RankScenes(a) => cmd_rank_scenes(&mut ctx, a),
        Command::RankLanguages(a) => cmd_rank_languages(&mut ctx, a),
        Command::Distances(a) => cmd_distances(&mut ctx, a),
        Command::Mds(a) => cmd_mds(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Correlate(a) => cmd_correlate(&mut ctx, a),
        Command::Elicit(a) => cmd_elicit(&mut ctx, a),
        Command::Pipeline(a) => cmd_pipeline(&mut ctx, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.stderr, "error: {}", e.message());
            e.code()
        }
    }
}

struct Ctx<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn note(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.stderr, "{msg}");
    }

    fn emit(&mut self, out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
        match out {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(invalid(&dir.display().to_string()))?;
                }
                std::fs::write(path, bytes).map_err(invalid(&path.display().to_string()))
            }
            None => self.stdout.write_all(bytes).map_err(invalid("stdout")),
        }
    }
}

struct Input {
    role: &'static str,
    path: PathBuf,
    bytes: Vec<u8>,
}

impl Input {
    fn read(role: &'static str, path: &Path) -> CliResult<Input> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Ok(Input { role, path: path.to_path_buf(), bytes })
    }

    fn context(&self) -> String {
        format!("{} ({})", self.role, self.path.display())
    }
}

#[derive(Serialize)]
struct InputRecord {
    role: &'static str,
    path: String,
    sha256: String,
}

fn input_records(inputs: &[&Input]) -> Vec<InputRecord> {
    inputs
        .iter()
        .map(|i| InputRecord { role: i.role, path: i.path.display().to_string(), sha256: sha256_hex(&i.bytes) })
        .collect()
}

/// Comment lines carrying the resolved arguments and input digests.
fn provenance_comments<A: Serialize>(command: &str, args: &A, inputs: &[&Input]) -> Vec<String> {
    let config = serde_json::json!({ "command": command, "args": args });
    let mut out = vec![format!("run_config {config}")];
    out.extend(input_records(inputs).iter().map(|r| format!("input {} {} sha256={}", r.role, r.path, r.sha256)));
    out
}

#[derive(Serialize)]
struct JsonEnvelope<'a, T: Serialize> {
    run_config: serde_json::Value,
    inputs: Vec<InputRecord>,
    #[serde(flatten)]
    result: &'a T,
}

fn json_output<A: Serialize, T: Serialize>(command: &str, args: &A, inputs: &[&Input], result: &T) -> Vec<u8> {
    let env = JsonEnvelope {
        run_config: serde_json::json!({ "command": command, "args": args }),
        inputs: input_records(inputs),
        result,
    };
    let mut s = serde_json::to_string_pretty(&env).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn read_ids(path: &Path) -> CliResult<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string).collect())
}

fn universe_ids(spec: &str, sim: &SymmetricMatrix) -> CliResult<Vec<String>> {
    if spec == "all" {
        Ok(sim.ids().to_vec())
    } else {
        read_ids(Path::new(spec))
    }
}

fn require_seed(seed: Option<u64>, what: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage(format!("--seed is required for {what}")))
}

fn load_matrix(input: &Input) -> CliResult<LabelMatrix> {
    LabelMatrix::from_csv(&input.bytes).map_err(invalid(&input.context()))
}

fn load_symmetric(input: &Input, kind: Option<MatrixKind>) -> CliResult<SymmetricMatrix> {
    SymmetricMatrix::from_csv(&input.bytes, kind).map_err(invalid(&input.context()))
}

fn load_table(input: &Input) -> CliResult<LabelTable> {
    parse_label_table(&input.bytes, LabelFormat::Csv).map_err(invalid(&input.context()))
}

fn load_manifest(input: &Input) -> CliResult<SceneManifest> {
    SceneManifest::from_json(&input.bytes).map_err(invalid(&input.context()))
}

fn cmd_ingest(ctx: &mut Ctx, a: &IngestArgs) -> CliResult<()> {
    let labels = Input::read("labels", &a.labels)?;
    let manifest_in = Input::read("manifest", &a.manifest)?;
    let origin = match a.origin {
        OriginArg::Human => LabelOrigin::Human,
        OriginArg::Llm => LabelOrigin::Llm,
    };
    let table = load_table(&labels)?.with_origin(origin);
    let manifest = load_manifest(&manifest_in)?;
    for d in validate_manifest(&manifest, &table) {
        ctx.note(format!("warning: {d}"));
    }
    let matrix = build_matrix(&table, &manifest, a.policy.into()).map_err(invalid("label matrix"))?;
    if !matrix.modal_ties().is_empty() {
        ctx.note(format!("note: {} modal ties broken lexicographically", matrix.modal_ties().len()));
    }
    ctx.note(format!(
        "{} languages x {} scenes, matrix sha256={}",
        matrix.languages().len(),
        matrix.scenes().len(),
        matrix.digest()
    ));
    let body = matrix.to_csv_bytes();
    let split = body.iter().position(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut bytes = body[..split].to_vec();
    for c in provenance_comments("ingest", a, &[&labels, &manifest_in]) {
        bytes.extend(format!("# {c}\n").into_bytes());
    }
    bytes.extend(&body[split..]);
    ctx.emit(a.out.as_deref(), &bytes)
}

fn cmd_similarity(ctx: &mut Ctx, a: &SimilarityArgs) -> CliResult<()> {
    let input = Input::read("matrix", &a.matrix)?;
    let matrix = load_matrix(&input)?;
    let mut sim = scene_similarity_matrix(&matrix).map_err(invalid("similarity"))?;
    if a.dissimilarity {
        sim = to_dissimilarity(&sim).map_err(invalid("dissimilarity"))?;
    }
    let mut comments = provenance_comments("similarity", a, &[&input]);
    comments.push(format!("label_matrix sha256={}", matrix.digest()));
    ctx.emit(a.out.as_deref(), &sim.to_csv_bytes(&comments))
}

fn cmd_coverage(ctx: &mut Ctx, a: &CoverageArgs) -> CliResult<()> {
    let bootstrap = if a.bootstrap > 0 {
        Some(BootstrapConfig { n: a.bootstrap, level: a.level, seed: require_seed(a.seed, "bootstrap intervals")? })
    } else {
        None
    };
    let input = Input::read("sim", &a.sim)?;
    let sim = load_symmetric(&input, None)?;
    let universe = universe_ids(&a.universe, &sim)?;
    let subset = read_ids(&a.subset)?;
    let mut report: CoverageReport =
        coverage_report(&sim, &universe, &subset, bootstrap).map_err(invalid("coverage"))?;
    report.label = a.label.clone();
    ctx.emit(a.out.as_deref(), &json_output("coverage", a, &[&input], &report))
}

fn cmd_rank_scenes(ctx: &mut Ctx, a: &RankScenesArgs) -> CliResult<()> {
    let input = Input::read("sim", &a.sim)?;
    let sim = load_symmetric(&input, None)?;
    let base = read_ids(&a.base)?;
    let candidates = match &a.candidates {
        Some(p) => read_ids(p)?,
        None => sim.ids().iter().filter(|id| !base.contains(id)).cloned().collect(),
    };
    let ranked = match a.mode {
        SceneRankMode::Greedy => {
            let universe = universe_ids(&a.universe, &sim)?;
            let k = a.k.unwrap_or(candidates.len());
            greedy_extend(&sim, &universe, &base, &candidates, k).map_err(invalid("greedy ranking"))?
        }
        SceneRankMode::Novelty => novelty_ranking(&sim, &base, &candidates).map_err(invalid("novelty ranking"))?,
    };
    let comments = provenance_comments("rank-scenes", a, &[&input]);
    ctx.emit(a.out.as_deref(), &ranked.to_csv_bytes(&comments))
}

fn cmd_rank_languages(ctx: &mut Ctx, a: &RankLanguagesArgs) -> CliResult<()> {
    let input = Input::read("dist", &a.dist)?;
    let dist = load_symmetric(&input, Some(MatrixKind::LangDist))?;
    let candidates = match &a.candidates {
        Some(c) => c.clone(),
        None => dist.ids().iter().filter(|id| !a.base.contains(id)).cloned().collect(),
    };
    let ranked = rank_languages(&dist, &a.base, &candidates).map_err(invalid("language ranking"))?;
    let comments = provenance_comments("rank-languages", a, &[&input]);
    ctx.emit(a.out.as_deref(), &ranked.to_csv_bytes(&comments))
}

fn cmd_distances(ctx: &mut Ctx, a: &DistancesArgs) -> CliResult<()> {
    let input = Input::read("matrix", &a.matrix)?;
    let matrix = load_matrix(&input)?;
    let mut dist = language_distance_matrix(&matrix, a.normalize_vi).map_err(invalid("language distances"))?;
    if a.similarity {
        if !a.normalize_vi {
            return Err(CliError::Usage("--similarity needs --normalize-vi true".into()));
        }
        dist = language_similarity_matrix(&dist).map_err(invalid("language similarity"))?;
    }
    let mut comments = provenance_comments("distances", a, &[&input]);
    comments.push(format!("label_matrix sha256={}", matrix.digest()));
    ctx.emit(a.out.as_deref(), &dist.to_csv_bytes(&comments))
}

fn cmd_mds(ctx: &mut Ctx, a: &MdsArgs) -> CliResult<()> {
    let input = Input::read("dissim", &a.dissim)?;
    let dissim = load_symmetric(&input, None)?;
    let embedding = classical_mds(&dissim, a.dims).map_err(invalid("mds"))?;
    ctx.note(format!("stress: {}", format_g17(embedding.stress)));
    if !embedding.negative_eigenvalues.is_empty() {
        ctx.note(format!(
            "warning: {} negative eigenvalue(s) clamped to zero (most negative {})",
            embedding.negative_eigenvalues.len(),
            format_g17(embedding.negative_eigenvalues.iter().cloned().fold(0.0, f64::min))
        ));
    }
    let mut comments = provenance_comments("mds", a, &[&input]);
    comments.push(format!("stress={}", format_g17(embedding.stress)));
    ctx.emit(a.out.as_deref(), &embedding.to_csv_bytes(&comments))?;
    if let Some(k_max) = a.stress_profile {
        let profile = stress_profile(&dissim, k_max).map_err(invalid("stress profile"))?;
        let bytes = stress_profile_csv(&profile, &provenance_comments("mds", a, &[&input]));
        match &a.profile_out {
            Some(p) => ctx.emit(Some(p), &bytes)?,
            None => {
                for (k, s) in profile {
                    ctx.note(format!("stress k={k}: {}", format_g17(s)));
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateResult<'a> {
    report: &'a EvalReport,
    human_alignment: Option<HumanAlignment>,
}

fn cmd_evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> CliResult<()> {
    let model_in = Input::read("model", &a.model)?;
    let humans_in = Input::read("humans", &a.humans)?;
    let model = ModelRow::from_table(&load_table(&model_in)?, &a.language).map_err(invalid("model labels"))?;
    let humans = load_table(&humans_in)?;
    let report = evaluate_language(&model, &humans).map_err(invalid("evaluation"))?;
    let human_alignment = match human_human_alignment(&humans, &a.language) {
        Ok(h) => Some(h),
        Err(e) => {
            ctx.note(format!("note: no human-human baseline ({e})"));
            None
        }
    };
    ctx.note(format!(
        "{}: mean binary {}, mean graded {}, ceiling {}",
        a.language,
        format_g17(report.mean_binary),
        format_g17(report.mean_graded),
        format_g17(report.max_graded_mean)
    ));
    let inputs = [&model_in, &humans_in];
    if let Some(path) = &a.out {
        ctx.emit(Some(path), &report.to_csv_bytes(&provenance_comments("evaluate", a, &inputs)))?;
    }
    let result = EvaluateResult { report: &report, human_alignment };
    ctx.emit(None, &json_output("evaluate", a, &inputs, &result))
}

fn read_values(input: &Input) -> CliResult<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input.bytes.as_slice());
    let header = reader.headers().map_err(invalid(&input.context()))?.clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "value" {
        return Err(CliError::Invalid(format!("{}: header must be `id,value`", input.context())));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(invalid(&input.context()))?;
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|e| CliError::Invalid(format!("{} row {}: `{}`: {e}", input.context(), i + 2, &record[1])))?;
        out.push((record[0].to_string(), value));
    }
    Ok(out)
}

#[derive(Serialize)]
struct CorrelateResult<'a> {
    n: usize,
    ids: Vec<&'a str>,
    pearson: PearsonReport,
}

fn cmd_correlate(ctx: &mut Ctx, a: &CorrelateArgs) -> CliResult<()> {
    let seed = require_seed(a.seed, "correlate")?;
    let x_in = Input::read("x", &a.x)?;
    let y_in = Input::read("y", &a.y)?;
    let xs = read_values(&x_in)?;
    let ys: std::collections::BTreeMap<String, f64> = read_values(&y_in)?.into_iter().collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, v) in &xs {
        let w = ys.get(id).ok_or_else(|| CliError::Invalid(format!("id `{id}` is missing from {}", y_in.context())))?;
        x.push(*v);
        y.push(*w);
    }
    if ys.len() != xs.len() {
        return Err(CliError::Invalid(format!("{} has ids that {} lacks", y_in.context(), x_in.context())));
    }
    let pearson = pearson_with_bootstrap(&x, &y, a.bootstrap, a.level, seed).map_err(invalid("correlation"))?;
    ctx.note(format!(
        "r = {} [{}, {}]",
        format_g17(pearson.r),
        format_g17(pearson.ci_low),
        format_g17(pearson.ci_high)
    ));
    let result = CorrelateResult { n: x.len(), ids: xs.iter().map(|(id, _)| id.as_str()).collect(), pearson };
    ctx.emit(a.out.as_deref(), &json_output("correlate", a, &[&x_in, &y_in], &result))
}

fn parse_language(spec: &str) -> CliResult<Language> {
    match spec.split_once('=') {
        Some((code, name)) => Ok(Language::new(code.trim(), name.trim())),
        None => Language::from_code(spec.trim()).map_err(|e| CliError::Invalid(format!("{e}; pass it as code=Name"))),
    }
}

#[derive(Serialize)]
struct DryRunRecord<'a> {
    target: &'a str,
    cache_key: String,
    request_path: String,
    prompt: &'a PromptDoc,
}

fn cmd_elicit(ctx: &mut Ctx, a: &ElicitArgs) -> CliResult<()> {
    let profile_in = Input::read("profile", &a.profile)?;
    let manifest_in = Input::read("manifest", &a.manifest)?;
    let refs_in = Input::read("reference_labels", &a.reference_labels)?;
    let profile = ProviderProfile::from_json(&profile_in.bytes).map_err(invalid(&profile_in.context()))?;
    let manifest = load_manifest(&manifest_in)?;
    let ref_table = load_table(&refs_in)?;

    let mut specs = Vec::new();
    for t in &a.targets {
        let target = parse_language(t)?;
        let reference_code = a.reference.clone().unwrap_or_else(|| reference_policy(&target.code).to_string());
        let reference = parse_language(&reference_code)?;
        let ref_matrix =
            build_matrix_for(&ref_table, &manifest, std::slice::from_ref(&reference.code), MatrixPolicy::Modal)
                .map_err(invalid(&format!("reference labels for `{}`", reference.code)))?;
        let spec =
            ElicitationSpec::new(target, reference, ref_matrix.row(0).to_vec(), manifest.clone(), profile.clone())
                .and_then(|s| s.with_temperature(a.temperature))
                .map_err(invalid("elicitation spec"))?
                .text_only(a.text_only)
                .with_attachment(a.attachment.clone());
        build_prompt(&spec).map_err(invalid(&format!("prompt for `{}`", spec.target.code)))?;
        specs.push(spec);
    }

    let elicitor = Elicitor::new(Arc::new(HttpTransport::default()));
    let outcomes = elicitor.run_many(&specs, &a.cache_dir, a.dry_run);
    let mut entries = Vec::new();
    let mut dry = Vec::new();
    let mut failures = Vec::new();
    for (spec, outcome) in specs.iter().zip(outcomes) {
        match outcome {
            Ok(ElicitOutcome::DryRun { prompt, key, request_path }) => dry.push((spec, prompt, key, request_path)),
            Ok(ElicitOutcome::Labels { table, key, cache_hit }) => {
                ctx.note(format!(
                    "{}: {} labels ({}, key {key})",
                    spec.target.code,
                    table.len(),
                    if cache_hit { "cached" } else { "fetched" }
                ));
                entries.extend(table.entries().iter().cloned());
            }
            Err(e) => failures.push(format!("{}: {e}", spec.target.code)),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Invalid(failures.join("\n")));
    }
    if a.dry_run {
        let records: Vec<DryRunRecord> = dry
            .iter()
            .map(|(spec, prompt, key, path)| {
                debug_assert_eq!(*key, cache_key(spec, prompt));
                DryRunRecord {
                    target: &spec.target.code,
                    cache_key: key.clone(),
                    request_path: path.display().to_string(),
                    prompt,
                }
            })
            .collect();
        let inputs = [&profile_in, &manifest_in, &refs_in];
        return ctx
            .emit(a.out.as_deref(), &json_output("elicit", a, &inputs, &serde_json::json!({ "dry_run": records })));
    }
    let table = LabelTable::new(entries, LabelOrigin::Llm).map_err(invalid("elicited labels"))?;
    ctx.emit(a.out.as_deref(), &table.to_csv_bytes())
}

fn cmd_pipeline(ctx: &mut Ctx, a: &PipelineArgs) -> CliResult<()> {
    let seed = require_seed(a.seed, "pipeline")?;
    let labels = Input::read("labels", &a.labels)?;
    let manifest = Input::read("manifest", &a.manifest)?;
    let mut config = RunConfig::pipeline(&a.labels.display().to_string(), &a.manifest.display().to_string(), seed);
    config.n_bootstrap = a.bootstrap;
    config.level = a.level;
    config.mds_dims = a.dims;
    config.stress_k_max = a.stress_k_max;
    config.normalize_vi = a.normalize_vi;
    config.policy = a.policy.into();
    config.base_set = a.base_set;
    config.novelty_set = a.novelty_set;
    config.base_languages = a.base_languages.clone();
    config.provider_profile = a.profile.as_ref().map(|p| p.display().to_string());
    let bundle = run_pipeline(&config, &labels.bytes, &manifest.bytes).map_err(|e| CliError::Invalid(e.to_string()))?;
    bundle.write_to(&a.out_dir).map_err(invalid(&a.out_dir.display().to_string()))?;
    ctx.note(format!("wrote {} files to {}", bundle.files.len(), a.out_dir.display()));
    Ok(())
}
