//! The `lsa` command line.
//!
//! `run` parses arguments, executes one subcommand and returns the exit
//! code: 0 on success, 1 for usage errors, 2 for data or validation errors
//! and 3 for numerical failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::baselines::{baseline_fit_sized, BaselineKind};
use crate::error::{Error, Result};
use crate::inference::{fit_sized, FitConfig, FitReport, InitScheme};
use crate::io::dataset::{self, records_from_sample, CSV_FORMAT_VERSION};
use crate::io::grid_file::{write_grid, GridFile};
use crate::io::model_file::{read_model, write_model, SavedModel};
use crate::io::report::{comparison_csv, grid_csv, max_style_csv, style_weights_csv, write_report};
use crate::io::{apply_filters, encode_covariates, write_atomic, CourtSide, CovariateScheme, Dataset, FilterReport, ServeContext, ServeDirection, Surface};
use crate::model::LsaParams;
use crate::sampler::{
    component_grids, default_grid, draw_params, posterior_predictive_grid, sample_with_context, separated_truth,
    vertex_truth, PredictiveContext, SimConfig,
};
use crate::selection::{compare, grid_search, FittedModel, ModelSpec};

#[derive(Parser, Debug)]
#[command(name = "lsa", version, about = "Latent style allocation models for 2D return impact locations")]
#[command(args_override_self = true)]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file of `flag = value` pairs that override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset and save it with its true parameters.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Fit one model and save its parameters and a fit report.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// k-fold ELPD over a (K, M) grid of latent style models.
    #[command(args_override_self = true)]
    Select(SelectArgs),
    /// k-fold ELPD of the four model families at a fixed M.
    #[command(args_override_self = true)]
    Compare(CompareArgs),
    /// Maximum-style counts and per-player style weights of a fitted model.
    #[command(args_override_self = true)]
    Summarize(SummarizeArgs),
    /// Predictive density grids of a fitted latent style model.
    #[command(args_override_self = true)]
    Grid(GridArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Separated,
    Vertex,
    Prior,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long = "K")]
    styles: usize,
    #[arg(long = "M")]
    patterns: usize,
    #[arg(long)]
    receivers: usize,
    /// Servers in the roster; defaults to the number of receivers.
    #[arg(long)]
    servers: Option<usize>,
    /// Points per receiver.
    #[arg(long)]
    points: usize,
    #[arg(long, default_value = "full")]
    scheme: CovariateScheme,
    #[arg(long, value_enum, default_value = "separated")]
    preset: Preset,
    /// Weight of every receiver's own style (separated and vertex presets).
    #[arg(long, default_value_t = 1.0)]
    dominance: f64,
    #[arg(long, default_value_t = 1)]
    serve_number: u8,
    /// Dataset CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Model file for the true parameters.
    #[arg(long)]
    truth_out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    serve_number: u8,
    #[arg(long, default_value = "full")]
    scheme: CovariateScheme,
    /// Keep short matches and receivers with few matches.
    #[arg(long)]
    no_filters: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Kmeans,
    Prior,
}

#[derive(Args, Debug)]
struct FitOptions {
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, value_enum, default_value = "kmeans")]
    init: InitArg,
    /// Hold receiver and server offsets at zero.
    #[arg(long)]
    fix_offsets: bool,
}

impl FitOptions {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            rel_tol: self.tol,
            n_restarts: self.restarts,
            init: match self.init {
                InitArg::Kmeans => InitScheme::KMeansPatternMeans,
                InitArg::Prior => InitScheme::PriorDraw,
            },
            seed,
            fix_offsets: self.fix_offsets,
            ..FitConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Lsa,
    Mvn,
    FiniteMixture,
    MixedMembership,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitOptions,
    #[arg(long, value_enum, default_value = "lsa")]
    family: Family,
    #[arg(long = "K", default_value_t = 1)]
    styles: usize,
    #[arg(long = "M")]
    patterns: usize,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Fit report (JSON) to write.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitOptions,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    #[arg(long, default_value_t = 8)]
    m_max: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Grid CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitOptions,
    #[arg(long = "K")]
    styles: usize,
    #[arg(long = "M")]
    patterns: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Comparison CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Model file of a latent style model.
    #[arg(long)]
    model: PathBuf,
    /// Row label of the maximum-style table.
    #[arg(long, default_value = "return")]
    label: String,
    /// Maximum-style count CSV to write.
    #[arg(long)]
    counts_out: PathBuf,
    /// Per-player style weight CSV to write.
    #[arg(long)]
    weights_out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Layer {
    /// Roster-average predictive density.
    Tour,
    /// One unweighted density per pattern.
    Components,
    /// One predictive density per receiver.
    Players,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "tour")]
    layer: Layer,
    /// Condition on one receiver (tour and components layers).
    #[arg(long)]
    receiver: Option<String>,
    /// Condition on one server; otherwise the roster average.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value = "deuce")]
    court_side: String,
    /// Serve direction, or `none`.
    #[arg(long, default_value = "wide")]
    direction: String,
    #[arg(long, default_value = "hard")]
    surface: String,
    #[arg(long, default_value_t = 200)]
    nx: usize,
    #[arg(long, default_value_t = 200)]
    ny: usize,
    /// Directory for the grid files; it must exist.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure of a subcommand, tagged with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Turn a flat TOML table into flags appended after the command line.
fn config_flags(path: &Path) -> CliResult<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io(e)))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{key}");
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => out.extend([flag.into(), s.into()]),
            toml::Value::Integer(i) => out.extend([flag.into(), i.to_string().into()]),
            toml::Value::Float(f) => out.extend([flag.into(), f.to_string().into()]),
            _ => return Err(usage(format!("config key {key:?} must be a boolean, string or number"))),
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Run the command line and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Some(path) = config_path(&argv) {
        match config_flags(&path) {
            Ok(extra) => argv.extend(extra),
            Err(f) => return report_failure(f),
        }
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(usage(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> i32 {
    eprintln!("lsa: {}", f.message);
    f.code
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Fit(a) => fit_cmd(a, cli.seed),
        Command::Select(a) => select(a, cli.seed),
        Command::Compare(a) => compare_cmd(a, cli.seed),
        Command::Summarize(a) => summarize(a),
        Command::Grid(a) => grid_cmd(a),
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).max(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn simulate(a: &SimulateArgs, seed: u64) -> CliResult<()> {
    let cfg = SimConfig {
        servers: a.servers.unwrap_or(a.receivers),
        covariate_scheme: a.scheme,
        ..SimConfig::new(a.styles, a.patterns, a.receivers, a.points, seed)
    };
    let truth = match a.preset {
        Preset::Separated => separated_truth(&cfg, a.dominance)?,
        Preset::Vertex => vertex_truth(&cfg, a.dominance)?,
        Preset::Prior => draw_params(&cfg)?,
    };
    let sample = sample_with_context(&truth, &cfg)?;
    let records = records_from_sample(&sample, cfg.receivers, cfg.servers, a.serve_number);
    dataset::write_csv(&a.out, &records)?;
    let saved = SavedModel {
        model: FittedModel::Lsa(truth),
        receivers: names("R", cfg.receivers),
        servers: names("S", cfg.servers),
        covariate_scheme: a.scheme,
    };
    write_model(&a.truth_out, &saved)?;
    eprintln!("simulate: wrote {} points for {} receivers", records.len(), cfg.receivers);
    Ok(())
}

fn load(a: &DataArgs) -> CliResult<(Dataset, FilterReport)> {
    let records = dataset::load_csv(&a.data, CSV_FORMAT_VERSION)?;
    let (kept, report) = if a.no_filters {
        (records, FilterReport::default())
    } else {
        apply_filters(records)
    };
    let ds = encode_covariates(&kept, a.scheme, a.serve_number)?;
    if ds.observations.is_empty() {
        return Err(Error::EmptyData.into());
    }
    eprintln!(
        "data: {} points, {} receivers, {} servers ({} matches and {} receivers filtered out)",
        ds.observations.len(),
        ds.receiver_roster.len(),
        ds.server_roster.len(),
        report.matches_dropped,
        report.receivers_dropped
    );
    Ok((ds, report))
}

#[derive(Serialize)]
struct FitSummary {
    format_version: u32,
    status: &'static str,
    model: String,
    observations: usize,
    receivers: usize,
    servers: usize,
    missing_direction: usize,
    matches_dropped: usize,
    receivers_dropped: usize,
    converged: bool,
    n_iters: usize,
    final_objective: f64,
    loglik: f64,
    restart_objectives: Vec<f64>,
    fallback_steps: usize,
    objective_trace: Vec<f64>,
}

#[derive(Serialize)]
struct FailedFit {
    format_version: u32,
    status: &'static str,
    model: String,
    error: String,
}

fn summary<P>(spec: &ModelSpec, ds: &Dataset, filters: &FilterReport, r: &FitReport<P>) -> FitSummary {
    FitSummary {
        format_version: 1,
        status: "ok",
        model: spec.label(),
        observations: ds.observations.len(),
        receivers: ds.receiver_roster.len(),
        servers: ds.server_roster.len(),
        missing_direction: ds.missing_direction,
        matches_dropped: filters.matches_dropped,
        receivers_dropped: filters.receivers_dropped,
        converged: r.converged,
        n_iters: r.n_iters,
        final_objective: r.final_objective(),
        loglik: r.loglik(),
        restart_objectives: r.restart_objectives.clone(),
        fallback_steps: r.fallback_steps,
        objective_trace: r.objective_trace.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn fit_cmd(a: &FitArgs, seed: u64) -> CliResult<()> {
    let (ds, filters) = load(&a.data)?;
    let cfg = a.fit.config(seed);
    let (r, s) = (ds.receiver_roster.len(), ds.server_roster.len());
    let spec = match a.family {
        Family::Lsa => ModelSpec::Lsa {
            styles: a.styles,
            patterns: a.patterns,
        },
        Family::Mvn => ModelSpec::Baseline(BaselineKind::Mvn),
        Family::FiniteMixture => ModelSpec::Baseline(BaselineKind::FiniteMixture(a.patterns)),
        Family::MixedMembership => ModelSpec::Baseline(BaselineKind::MixedMembership(a.patterns)),
    };
    let fitted = match spec {
        ModelSpec::Lsa { styles, patterns } => {
            fit_sized(&ds.observations, styles, patterns, r, s, &cfg).map(|rep| (summary(&spec, &ds, &filters, &rep), FittedModel::Lsa(rep.params)))
        }
        ModelSpec::Baseline(kind) => baseline_fit_sized(&ds.observations, kind, r, s, &cfg)
            .map(|rep| (summary(&spec, &ds, &filters, &rep), FittedModel::Baseline(rep.params))),
    };
    let (summary, model) = match fitted {
        Ok(v) => v,
        Err(e) => {
            if let (true, Some(path)) = (e.is_numerical(), &a.report) {
                let dump = FailedFit {
                    format_version: 1,
                    status: "failed",
                    model: spec.label(),
                    error: e.to_string(),
                };
                write_json(path, &dump)?;
            }
            return Err(e.into());
        }
    };
    write_model(
        &a.out,
        &SavedModel {
            model,
            receivers: ds.receiver_roster.clone(),
            servers: ds.server_roster.clone(),
            covariate_scheme: a.data.scheme,
        },
    )?;
    if let Some(path) = &a.report {
        write_json(path, &summary)?;
    }
    eprintln!(
        "fit: {} converged={} iterations={} objective={}",
        summary.model, summary.converged, summary.n_iters, summary.final_objective
    );
    Ok(())
}

fn select(a: &SelectArgs, seed: u64) -> CliResult<()> {
    if a.k_min > a.k_max || a.m_min > a.m_max {
        return Err(usage("grid ranges must satisfy min <= max"));
    }
    let (ds, _) = load(&a.data)?;
    let cells = (a.k_max - a.k_min + 1) * (a.m_max - a.m_min + 1);
    eprintln!("select: {cells} cells x {} folds", a.folds);
    let grid = grid_search(&ds.observations, a.k_min..=a.k_max, a.m_min..=a.m_max, a.folds, &a.fit.config(seed))?;
    for ((k, m), r) in &grid.entries {
        eprintln!("select: K={k} M={m} elpd={:.1} se={:.1}", r.elpd_estimate, r.se);
    }
    write_report(&a.out, &grid_csv(&grid)?)?;
    eprintln!("select: best K={} M={}", grid.best.0, grid.best.1);
    Ok(())
}

fn compare_cmd(a: &CompareArgs, seed: u64) -> CliResult<()> {
    let (ds, _) = load(&a.data)?;
    let specs = [
        ModelSpec::Baseline(BaselineKind::Mvn),
        ModelSpec::Baseline(BaselineKind::FiniteMixture(a.patterns)),
        ModelSpec::Baseline(BaselineKind::MixedMembership(a.patterns)),
        ModelSpec::Lsa {
            styles: a.styles,
            patterns: a.patterns,
        },
    ];
    let reports = compare(&ds.observations, &specs, a.folds, &a.fit.config(seed))?;
    for r in &reports {
        eprintln!("compare: {} elpd={:.1} se={:.1}", r.model_label, r.elpd_estimate, r.se);
    }
    write_report(&a.out, &comparison_csv(&reports)?)?;
    Ok(())
}

fn lsa_model(path: &Path) -> CliResult<(LsaParams, SavedModel)> {
    let saved = read_model(path)?;
    match &saved.model {
        FittedModel::Lsa(p) => Ok((p.clone(), saved)),
        FittedModel::Baseline(_) => Err(Error::InvalidConfig(format!("{} holds a baseline, not a latent style model", path.display())).into()),
    }
}

fn summarize(a: &SummarizeArgs) -> CliResult<()> {
    let (params, saved) = lsa_model(&a.model)?;
    write_report(&a.counts_out, &max_style_csv(&a.label, params.pi.pi())?)?;
    write_report(&a.weights_out, &style_weights_csv(&saved.receivers, params.pi.pi())?)?;
    Ok(())
}

fn roster_index(roster: &[String], name: &str, what: &str) -> CliResult<usize> {
    roster
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown {what} {name:?}")).into())
}

fn grid_cmd(a: &GridArgs) -> CliResult<()> {
    let (params, saved) = lsa_model(&a.model)?;
    let bad = |what: &str, v: &str| Failure::from(Error::InvalidConfig(format!("unknown {what} {v:?}")));
    let ctx = ServeContext {
        court_side: a.court_side.parse::<CourtSide>().map_err(|_| bad("court side", &a.court_side))?,
        direction: match a.direction.as_str() {
            "none" => None,
            d => Some(d.parse::<ServeDirection>().map_err(|_| bad("direction", d))?),
        },
        surface: a.surface.parse::<Surface>().map_err(|_| bad("surface", &a.surface))?,
    };
    let covariates = saved.covariate_scheme.encode(&ctx);
    let receiver = a.receiver.as_deref().map(|n| roster_index(&saved.receivers, n, "receiver")).transpose()?;
    let server = a.server.as_deref().map(|n| roster_index(&saved.servers, n, "server")).transpose()?;
    let context = |receiver: Option<usize>| PredictiveContext {
        receiver,
        server,
        covariates: DVector::from_vec(covariates.clone()),
    };
    let file = |layer: String, receiver: Option<usize>, weight: Option<f64>, grid| GridFile {
        layer,
        receiver: receiver.map(|i| saved.receivers[i].clone()),
        server: server.map(|s| saved.servers[s].clone()),
        covariates: covariates.clone(),
        weight,
        grid,
    };
    let mut written = 0;
    match a.layer {
        Layer::Tour => {
            let cx = context(receiver);
            let spec = default_grid(&params, &cx, a.nx, a.ny)?;
            let grid = posterior_predictive_grid(&params, &cx, &spec)?;
            write_grid(&a.out_dir.join("tour.grid"), &file("tour".into(), receiver, None, grid))?;
            written += 1;
        }
        Layer::Components => {
            let cx = context(receiver);
            let spec = default_grid(&params, &cx, a.nx, a.ny)?;
            let (grids, weights) = component_grids(&params, &cx, &spec)?;
            for (m, (grid, w)) in grids.into_iter().zip(weights).enumerate() {
                let path = a.out_dir.join(format!("component_{}.grid", m + 1));
                write_grid(&path, &file(format!("component:{}", m + 1), receiver, Some(w), grid))?;
                written += 1;
            }
        }
        Layer::Players => {
            for i in 0..params.receivers() {
                let cx = context(Some(i));
                let spec = default_grid(&params, &cx, a.nx, a.ny)?;
                let grid = posterior_predictive_grid(&params, &cx, &spec)?;
                let path = a.out_dir.join(format!("receiver_{}.grid", i + 1));
                write_grid(&path, &file(format!("receiver:{}", saved.receivers[i]), Some(i), None, grid))?;
                written += 1;
            }
        }
    }
    eprintln!("grid: wrote {written} files to {}", a.out_dir.display());
    Ok(())
}
