//! `pneunet`: one subcommand per pipeline stage.
//!
//! Every subcommand reads flags and JSON files only, takes all randomness
//! from its `--seed`, writes its outputs atomically, reports progress on
//! standard error and, on failure, prints exactly one JSON line
//! `{"error": KIND, "message": ...}` to standard error and exits with
//! 2 (usage), 3 (data) or 4 (numeric failure).

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pneunet_core::design_space::{synthesize_dataset, DesignDataset, ParameterBounds, SynthConfig};
use pneunet_core::embedding::EmbeddingConfig;
use pneunet_core::error::ErrorKind;
use pneunet_core::geometry::{self, LayoutOptions};
use pneunet_core::gmm::{FitConfig, GmmModel, ModelSpace};
use pneunet_core::kinematics::KinematicsConfig;
use pneunet_core::pipeline::{self, DecodeSource, EmbedConfig, EvaluateConfig, TrainConfig};
use pneunet_core::preprocess::FeatureSchema;
use pneunet_core::util;
use pneunet_core::workdir::{self, Workdir};
use pneunet_core::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pneunet", version, about = "Generative design of Pneu-net soft actuators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample and augment a synthetic design dataset.
    Synth(SynthArgs),
    /// Fit a Gaussian mixture to a dataset.
    Train(TrainArgs),
    /// Sample designs from a trained mixture and decode them.
    Generate(GenerateArgs),
    /// Embed a dataset in two dimensions with t-SNE.
    Embed(EmbedArgs),
    /// Novelty and diversity of generated designs against training designs.
    Evaluate(EvaluateArgs),
    /// Write STL and/or CSG geometry for one design.
    Export(ExportArgs),
    /// Backbone trajectories over a pressure sweep, with mode classification.
    Simulate(SimulateArgs),
    /// Summarize every artifact of a work directory.
    Report(ReportArgs),
    /// Serve the HTTP API over a work directory.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Parameter bounds JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 11_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of rows produced by augmenting reference designs.
    #[arg(long)]
    pub augmented_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Feature,
    Embedding,
}

impl From<SpaceArg> for ModelSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Feature => ModelSpace::Feature,
            SpaceArg::Embedding => ModelSpace::Embedding,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit on standardized features or on embedding coordinates.
    #[arg(long, value_enum, default_value_t = SpaceArg::Feature)]
    pub space: SpaceArg,
    /// Embedding file for `--space embedding` (default: embedding.csv beside the data).
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Parameter bounds JSON (default: bounds.json beside the data, else built-in).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit report with the EM log-likelihood trace.
    #[arg(long)]
    pub report: PathBuf,
    /// Feature schema output (default: schema.json beside the model).
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature schema (default: schema.json beside the model).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Training data, needed to decode embedding-space samples (default: data.csv beside the model).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Embedding, needed to decode embedding-space samples (default: embedding.csv beside the model).
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Neighbours averaged when decoding an embedding-space sample.
    #[arg(long, default_value_t = pipeline::DEFAULT_DECODE_K)]
    pub decode_k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Embed a seeded subsample of this many rows.
    #[arg(long, default_value_t = 1000, conflicts_with = "all_rows")]
    pub sample: usize,
    /// Embed every row (exact t-SNE is quadratic in the row count).
    #[arg(long)]
    pub all_rows: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding CSV; run details go to the same path with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rows drawn from each set for the hull embedding.
    #[arg(long, default_value_t = 50)]
    pub hull_sample: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Hull vertices CSV (default: hulls.csv beside the metrics).
    #[arg(long)]
    pub hulls: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// `FILE.csv:INDEX` or `reference:bending|twisting|mixed`.
    #[arg(long)]
    pub design: String,
    #[arg(long, required_unless_present = "csg")]
    pub stl: Option<PathBuf>,
    #[arg(long)]
    pub csg: Option<PathBuf>,
    /// Place helical chambers before straight ones.
    #[arg(long)]
    pub helical_first: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `FILE.csv:INDEX` or `reference:bending|twisting|mixed`.
    #[arg(long)]
    pub design: String,
    /// Comma-separated pressures in kPa.
    #[arg(long, value_delimiter = ',')]
    pub pressures: Option<Vec<f64>>,
    /// Kinematics configuration JSON.
    #[arg(long)]
    pub kinematics: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub workdir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub workdir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let text = e.to_string();
            let message: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("tip:"))
                .collect();
            print_error("usage", message.join(" ").trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (kind, code) = classify(&e);
            print_error(kind, &e.to_string());
            code
        }
    }
}

/// Error label and exit code for a failed subcommand.
pub fn classify(e: &Error) -> (&'static str, i32) {
    match e.kind() {
        ErrorKind::Usage => ("usage", EXIT_USAGE),
        ErrorKind::Data => ("data", EXIT_DATA),
        ErrorKind::Numeric => ("numeric", EXIT_NUMERIC),
    }
}

fn print_error(kind: &str, message: &str) {
    let line = serde_json::json!({"error": kind, "message": message.replace('\n', " ")});
    eprintln!("{line}");
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Embed(a) => embed(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Export(a) => export(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

/// Directory holding `path` (the current directory for bare file names).
fn dir_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    dir_of(path).join(name)
}

fn input(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Explicit bounds file, else the work directory's, else the defaults.
fn load_bounds(explicit: Option<&Path>, beside: &Path) -> Result<ParameterBounds> {
    match explicit {
        Some(p) => ParameterBounds::load(input(p)?),
        None => Workdir::new(dir_of(beside)).bounds(),
    }
}

/// Bounds for a design reference: explicit, else those beside the design file.
fn bounds_for_design(explicit: Option<&Path>, reference: &str) -> Result<ParameterBounds> {
    let beside = match reference.rsplit_once(':') {
        Some((head, _)) if head != "reference" => PathBuf::from(head),
        _ => PathBuf::from("design"),
    };
    load_bounds(explicit, &beside)
}

fn load_dataset(path: &Path, bounds: ParameterBounds) -> Result<DesignDataset> {
    DesignDataset::read_csv(input(path)?, bounds)
}

fn synth(a: SynthArgs) -> Result<()> {
    let bounds = match &a.config {
        Some(p) => ParameterBounds::load(input(p)?)?,
        None => ParameterBounds::default(),
    };
    let mut cfg = SynthConfig::with_count(a.n);
    if let Some(f) = a.augmented_fraction {
        cfg.augmented_fraction = f;
    }
    eprintln!("synthesizing {} designs (seed {})", a.n, a.seed);
    let data = synthesize_dataset(&cfg, &bounds, a.seed)?;
    // The bounds travel with the dataset so later stages validate against them.
    util::write_atomic(&sibling(&a.out, workdir::BOUNDS_FILE), bounds.to_json().as_bytes())?;
    data.write_csv(&a.out)?;
    let c = data.mode_counts();
    eprintln!(
        "wrote {} rows: {} bending, {} twisting, {} mixed",
        data.len(),
        c.bending,
        c.twisting,
        c.mixed
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let bounds = load_bounds(a.config.as_deref(), &a.data)?;
    let data = load_dataset(&a.data, bounds)?;
    let mut fit = FitConfig::default();
    if let Some(m) = a.max_iter {
        fit.max_iter = m;
    }
    if let Some(t) = a.tol {
        fit.tol = t;
    }
    let cfg = TrainConfig {
        k: a.k,
        fit,
        seed: a.seed,
        space: a.space.into(),
    };
    let rows = match cfg.space {
        ModelSpace::Feature => None,
        ModelSpace::Embedding => {
            let p = a.embedding.clone().unwrap_or_else(|| sibling(&a.data, workdir::EMBEDDING_FILE));
            Some(workdir::read_embedding_csv(input(&p)?)?)
        }
    };
    eprintln!("fitting K = {} mixture on {} rows in {:?} space", cfg.k, data.len(), cfg.space);
    let trained = pipeline::train(&data, &cfg, rows.as_deref())?;
    eprintln!(
        "EM finished after {} iterations (converged: {}), log-likelihood {:.6}",
        trained.report.iterations,
        trained.report.converged,
        trained.report.final_log_likelihood()
    );
    let schema_path = a.schema.clone().unwrap_or_else(|| sibling(&a.out, workdir::SCHEMA_FILE));
    util::write_atomic(&schema_path, trained.schema.to_json().as_bytes())?;
    util::write_atomic(&a.out, trained.model.to_json().as_bytes())?;
    workdir::write_json(&a.report, &trained.report)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let model = GmmModel::load(input(&a.model)?)?;
    let schema_path = a.schema.clone().unwrap_or_else(|| sibling(&a.model, workdir::SCHEMA_FILE));
    let schema = FeatureSchema::load(input(&schema_path)?)?;
    let bounds = load_bounds(a.config.as_deref(), &a.model)?;
    let source = match model.space() {
        ModelSpace::Feature => None,
        ModelSpace::Embedding => {
            let data_path = a.data.clone().unwrap_or_else(|| sibling(&a.model, workdir::DATA_FILE));
            let emb_path = a.embedding.clone().unwrap_or_else(|| sibling(&a.model, workdir::EMBEDDING_FILE));
            let data = load_dataset(&data_path, bounds.clone())?;
            let rows = workdir::read_embedding_csv(input(&emb_path)?)?;
            Some(DecodeSource::new(&data, &schema, &rows, a.decode_k)?)
        }
    };
    eprintln!("sampling {} designs (seed {})", a.n, a.seed);
    let designs = pipeline::generate(&model, &schema, &bounds, a.n, a.seed, source.as_ref())?;
    let file = pipeline::generated_file(&designs);
    workdir::write_generated_csv(&a.out, &file)?;
    let c = pipeline::generated_counts(&designs);
    eprintln!(
        "wrote {} designs: {} bending, {} twisting, {} mixed",
        designs.len(),
        c.bending,
        c.twisting,
        c.mixed
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let bounds = load_bounds(a.config.as_deref(), &a.data)?;
    let data = load_dataset(&a.data, bounds)?;
    let cfg = EmbedConfig {
        tsne: EmbeddingConfig {
            perplexity: a.perplexity,
            iterations: a.iterations,
            seed: a.seed,
            ..EmbeddingConfig::default()
        },
        sample: (!a.all_rows).then_some(a.sample),
    };
    eprintln!(
        "embedding {} of {} rows (perplexity {})",
        cfg.sample.map_or(data.len(), |s| s.min(data.len())),
        data.len(),
        a.perplexity
    );
    let (rows, sidecar) = pipeline::embed_dataset(&data, &cfg, |iter, kl| {
        if iter % 100 == 0 {
            eprintln!("  iteration {iter}: KL {kl:.5}");
        }
    })?;
    if sidecar.calibration_warnings > 0 {
        eprintln!("warning: {} rows did not reach the target perplexity", sidecar.calibration_warnings);
    }
    workdir::write_json(&a.out.with_extension("json"), &sidecar)?;
    workdir::write_embedding_csv(&a.out, &rows)?;
    eprintln!("final KL divergence {:.5}", sidecar.kl_divergence);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let bounds = load_bounds(a.config.as_deref(), &a.train)?;
    let training = load_dataset(&a.train, bounds)?;
    let gen = workdir::read_generated_csv(input(&a.gen)?)?;
    let cfg = EvaluateConfig {
        hull_sample: a.hull_sample,
        perplexity: a.perplexity,
        tsne_iterations: a.iterations,
        seed: a.seed,
    };
    eprintln!("evaluating {} generated against {} training designs", gen.rows.len(), training.len());
    let m = pipeline::evaluate(&training, &gen.rows, &cfg)?;
    let hulls = a.hulls.clone().unwrap_or_else(|| sibling(&a.out, workdir::HULLS_FILE));
    workdir::write_hull_csv(
        &hulls,
        &[("training", &m.diversity.hull_training), ("generated", &m.diversity.hull_generated)],
    )?;
    workdir::write_json(&a.out, &m)?;
    eprintln!(
        "d_new = {:.6}; hull areas training {:.4}, generated {:.4}",
        m.novelty.d_new, m.diversity.area_training, m.diversity.area_generated
    );
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let p = workdir::resolve_design_ref(&a.design, Path::new("."))?;
    let bounds = bounds_for_design(a.config.as_deref(), &a.design)?;
    let opts = LayoutOptions {
        helical_first: a.helical_first,
    };
    // Build everything before writing anything.
    let stl = match &a.stl {
        Some(_) => Some(geometry::build_mesh(&p, &bounds, opts)?),
        None => None,
    };
    let csg = match &a.csg {
        Some(_) => Some(geometry::export_csg_script(&p, &bounds, opts)?),
        None => None,
    };
    if let (Some(path), Some(mesh)) = (&a.stl, &stl) {
        mesh.write_stl(path)?;
        eprintln!("wrote {} ({} triangles)", path.display(), mesh.len());
    }
    if let (Some(path), Some(script)) = (&a.csg, &csg) {
        util::write_atomic(path, script.as_bytes())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let p = workdir::resolve_design_ref(&a.design, Path::new("."))?;
    let bounds = bounds_for_design(a.config.as_deref(), &a.design)?;
    let mut cfg = match &a.kinematics {
        Some(path) => workdir::read_json::<KinematicsConfig>(input(path)?)?,
        None => KinematicsConfig::default(),
    };
    if let Some(ps) = a.pressures {
        cfg.pressures = ps;
    }
    cfg.validate()?;
    let (trajectories, summary) = pipeline::simulate(&p, &bounds, &cfg)?;
    workdir::write_trajectory_csv(&a.out, &trajectories)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    if !a.workdir.is_dir() {
        return Err(Error::MissingArtifact(a.workdir));
    }
    let wd = Workdir::new(&a.workdir);
    let r = pipeline::build_report(&wd)?;
    let text = pipeline::summary_text(&r);
    workdir::write_json(&wd.path(workdir::REPORT_FILE), &r)?;
    util::write_atomic(&wd.path(workdir::SUMMARY_FILE), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    if !a.workdir.is_dir() {
        return Err(Error::MissingArtifact(a.workdir));
    }
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    rt.block_on(pneunet_server::serve(a.workdir, addr))
        .map_err(|e| Error::Config(format!("cannot serve on {addr}: {e}")))
}
