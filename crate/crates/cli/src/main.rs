//! Command-line front end for the identification pipeline.
//!
//! Subcommands map one-to-one onto pipeline stages: `ingest` validates a
//! long-format CSV, `fit` identifies a single station/window/smoothing
//! combination, `sweep` runs the min-max smoothing search, `stability`
//! analyzes a fitted model's critical points, `reconstruct` rebuilds the
//! unobserved coordinate from one series by delay embedding, and `synth`
//! emits a reference dataset with a known generating model.
//!
//! Every command writes its artifacts into one output directory together
//! with a `manifest.json` recording the resolved configuration; re-running
//! with the same configuration reproduces all artifacts byte-for-byte
//! (the manifest's own timestamp excepted).
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airdyn::dataset::{load_csv, select_window, write_csv, CsvSchema, DatasetError};
use airdyn::embedding::{
    default_bins, default_tau_max, delay_embed, fit_orthogonal_correction, pearson, reconstruct,
    select_lag, write_reconstruction_csv, EmbeddingError,
};
use airdyn::ode::{select_feasible_model, OdeError};
use airdyn::plot::{self, PlotError, PlotSeries, PortraitOptions};
use airdyn::preprocess::{process, standardize, PreprocessError, SmoothingFactor};
use airdyn::regression::{best_subset, build_library, RegressionError, FEATURE_LABELS};
use airdyn::stability::{critical_points, StabilityError};
use airdyn::sweep::{minmax_alpha, AlphaGrid, SweepConfig, SweepError};
use airdyn::synth::{preset, synth_dataset, SynthError, PRESET_NAMES};
use airdyn::{
    Criterion, IntegratorConfig, QuadraticModel, SpeciesId, StationDataset, StationId, TimeWindow,
};
use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;

const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping
// ---------------------------------------------------------------------------

/// Runtime failures, split into the two nonzero non-usage exit classes:
/// problems with the input data (exit 3) and numeric failures of the
/// pipeline itself (exit 4).
#[derive(Debug)]
enum CliError {
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RegressionError> for CliError {
    fn from(e: RegressionError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Ode(inner) => CliError::Numeric(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Dataset(inner) => inner.into(),
            SweepError::Preprocess(inner) => inner.into(),
            SweepError::Regression(inner) => inner.into(),
            SweepError::Ode(inner) => inner.into(),
            SweepError::NoFeasibleCells => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PlotError> for CliError {
    fn from(e: PlotError) -> Self {
        match e {
            PlotError::Io(inner) => CliError::Data(inner.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "airdyn",
    version,
    about = "Identify planar quadratic dynamics from two-species concentration series"
)]
struct Cli {
    /// Output directory for artifacts (default: $AIRDYN_OUT, then the
    /// current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a long-format CSV and summarize its contents.
    Ingest(IngestArgs),
    /// Fit one station and window at a fixed smoothing factor.
    Fit(FitArgs),
    /// Sweep smoothing factors and pick the min-max winner.
    Sweep(SweepArgs),
    /// Locate and classify the critical points of a fitted model.
    Stability(StabilityArgs),
    /// Rebuild the unobserved coordinate from one series by delay embedding.
    Reconstruct(ReconstructArgs),
    /// Generate a reference dataset from a known generating model.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input dataset CSV (columns station_id, timestamp, species, value).
    #[arg(long)]
    input: PathBuf,
}

/// Integrator knobs shared by fit and sweep.
#[derive(Args, Clone)]
struct IntegratorArgs {
    /// Relative tolerance of the step controller.
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    /// Absolute tolerance of the step controller.
    #[arg(long, default_value_t = 1e-9)]
    atol: f64,
    /// Derivative-magnitude guard: abort when any |dy/dt| exceeds this.
    #[arg(long, default_value_t = 1e6)]
    epsilon: f64,
    /// Maximum accepted steps per integration.
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: usize,
}

impl IntegratorArgs {
    fn to_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            rtol: self.rtol,
            atol: self.atol,
            epsilon_guard: self.epsilon,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Aic,
    Bic,
    AdjR2,
}

impl CriterionArg {
    fn to_core(self) -> Criterion {
        match self {
            CriterionArg::Aic => Criterion::Aic,
            CriterionArg::Bic => Criterion::Bic,
            CriterionArg::AdjR2 => Criterion::AdjR2,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    station: String,
    /// Window start (inclusive), e.g. 2018-04-01T08:00.
    #[arg(long, value_parser = parse_time)]
    from: DateTime<Utc>,
    /// Window end (inclusive).
    #[arg(long, value_parser = parse_time)]
    to: DateTime<Utc>,
    /// Smoothing factor in [0, 1].
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "aic")]
    criterion: CriterionArg,
    /// Spline refinement factor (sub-steps per raw interval).
    #[arg(long, default_value_t = 100)]
    refinement: usize,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated station ids, or "all".
    #[arg(long, default_value = "all")]
    stations: String,
    #[arg(long, value_parser = parse_time)]
    from: DateTime<Utc>,
    #[arg(long, value_parser = parse_time)]
    to: DateTime<Utc>,
    /// Comma-separated smoothing factors, or "default" for the standard
    /// 21-value grid.
    #[arg(long, default_value = "default")]
    alpha_grid: String,
    #[arg(long, value_enum, default_value = "aic")]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 100)]
    refinement: usize,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Args)]
struct StabilityArgs {
    /// Model JSON: either a bare model object or a fit report containing a
    /// "model" field.
    #[arg(long)]
    model: PathBuf,
    /// Plot critical points in original concentration units instead of
    /// standardized coordinates.
    #[arg(long)]
    physical: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    station: String,
    /// Species code of the measured series.
    #[arg(long, default_value = "NO2")]
    species: String,
    #[arg(long, value_parser = parse_time)]
    from: DateTime<Utc>,
    #[arg(long, value_parser = parse_time)]
    to: DateTime<Utc>,
    /// Largest lag to scan (default: a quarter of the series length).
    #[arg(long)]
    tau_max: Option<usize>,
    /// Histogram bins for the mutual-information estimate.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Named generating model.
    #[arg(long, value_parser = PRESET_NAMES)]
    planted: String,
    /// Additive Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the preset duration (hours).
    #[arg(long)]
    duration: Option<f64>,
    /// Override the preset station id.
    #[arg(long)]
    station: Option<String>,
}

/// Accept RFC 3339 or a naive `YYYY-MM-DD[THH:MM[:SS]]` (treated as UTC).
fn parse_time(raw: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(t.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc());
    }
    Err(format!(
        "cannot parse '{raw}' as a timestamp (expected RFC 3339 or YYYY-MM-DD[THH:MM[:SS]])"
    ))
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn resolve_out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os("AIRDYN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Record the resolved configuration and artifact list next to the
/// artifacts themselves.
fn write_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    artifacts: &[&str],
) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "command": command,
        "created_utc": Utc::now().to_rfc3339(),
        "config": config,
        "artifacts": artifacts,
    });
    std::fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<StationDataset, CliError> {
    Ok(load_csv(path, &CsvSchema::default())?)
}

fn make_window(from: DateTime<Utc>, to: DateTime<Utc>) -> Result<TimeWindow, CliError> {
    Ok(TimeWindow::new(from, to)?)
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

fn run_ingest(args: &IngestArgs, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let mut stations = Vec::new();
    for station in ds.stations() {
        let species = ds.species_at(&station);
        let probe = ds.get(&station, &species[0]).expect("listed species");
        stations.push(serde_json::json!({
            "station": station.0,
            "species": species.iter().map(|s| s.code().to_string()).collect::<Vec<_>>(),
            "t0": probe.t0.to_rfc3339(),
            "dt_hours": probe.dt_hours,
            "samples": probe.values.len(),
            "missing": probe.values.iter().filter(|v| v.is_none()).count(),
        }));
        let last = stations.last().unwrap();
        println!(
            "station {} [{} species, {} samples from {}]",
            last["station"],
            species.len(),
            last["samples"],
            last["t0"]
        );
    }
    let summary = serde_json::json!({ "series": ds.len(), "stations": stations });
    std::fs::write(
        out.join("ingest_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    write_manifest(
        out,
        "ingest",
        serde_json::json!({ "input": args.input }),
        &["ingest_summary.json"],
    )?;
    println!("ok: {} series validated", ds.len());
    Ok(())
}

fn run_fit(args: &FitArgs, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let station = StationId(args.station.clone());
    let window = make_window(args.from, args.to)?;
    let alpha = SmoothingFactor::new(args.alpha)?;
    let criterion = args.criterion.to_core();
    let cfg = args.integrator.to_config();

    let species = [SpeciesId::no2(), SpeciesId::o3()];
    let windowed = select_window(&ds, &station, &species, &window)?;
    let normalized = [standardize(&windowed[0])?, standardize(&windowed[1])?];
    let processed = [
        process(&normalized[0], alpha, args.refinement)?,
        process(&normalized[1], alpha, args.refinement)?,
    ];
    let library = build_library(&processed)?;
    let rankings = [
        best_subset(&library, 0, criterion)?,
        best_subset(&library, 1, criterion)?,
    ];
    let norm_params = [
        (normalized[0].mu, normalized[0].sigma),
        (normalized[1].mu, normalized[1].sigma),
    ];
    let y0 = Vector2::new(processed[0].y[0], processed[1].y[0]);
    let m = normalized[0].values.len();
    let dt = normalized[0].dt_hours;
    let span = (0.0, (m - 1) as f64 * dt);
    let selected = select_feasible_model(&rankings, norm_params, y0, span, &cfg)?;

    let mut rmse = [0.0; 2];
    for i in 0..2 {
        let sq: f64 = (0..m)
            .map(|j| {
                let fitted = selected.trajectory.sample(j as f64 * dt)[i];
                let raw = normalized[i].values[j];
                (fitted - raw) * (fitted - raw)
            })
            .sum();
        rmse[i] = (sq / m as f64).sqrt();
    }

    let report = serde_json::json!({
        "station": station.0,
        "window": { "from": args.from.to_rfc3339(), "to": args.to.to_rfc3339() },
        "alpha": args.alpha,
        "criterion": criterion,
        "model": selected.model,
        "ranks": selected.ranks,
        "rmse": { "NO2": rmse[0], "O3": rmse[1] },
    });
    std::fs::write(
        out.join("model.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    // Time-series chart: normalized readings as points, the integrated fit
    // as dense curves.
    let fine: Vec<f64> = (0..=400).map(|k| span.1 * k as f64 / 400.0).collect();
    let mut series = Vec::new();
    for (i, name) in ["NO2", "O3"].iter().enumerate() {
        series.push(PlotSeries::line(
            &format!("{name} fit"),
            fine.iter()
                .map(|&t| (t, selected.trajectory.sample(t)[i]))
                .collect(),
        ));
        series.push(PlotSeries::scatter(
            &format!("{name} data"),
            (0..m)
                .map(|j| (j as f64 * dt, normalized[i].values[j]))
                .collect(),
        ));
    }
    let ts_chart = plot::line_chart(
        &format!("Fit: {} (alpha = {})", station.0, args.alpha),
        "time (h)",
        "standardized concentration",
        &series,
    )?;
    plot::write_svg(&out.join("timeseries.svg"), &ts_chart)?;

    // State diagram: direction field, trajectory, and critical points (the
    // fit stays useful even when the critical-point solve fails, so that
    // failure only degrades the plot).
    let cps = match critical_points(&selected.model) {
        Ok(r) => r.points,
        Err(e) => {
            eprintln!("warning: critical-point solve failed ({e}); state diagram omits markers");
            Vec::new()
        }
    };
    let opts = PortraitOptions::covering(
        &format!("State diagram: {}", station.0),
        Some(&selected.trajectory),
        &cps,
    );
    let portrait = plot::phase_portrait(&selected.model, Some(&selected.trajectory), &cps, &opts)?;
    plot::write_svg(&out.join("state_diagram.svg"), &portrait)?;

    write_manifest(
        out,
        "fit",
        serde_json::json!({
            "input": args.input,
            "station": args.station,
            "from": args.from.to_rfc3339(),
            "to": args.to.to_rfc3339(),
            "alpha": args.alpha,
            "criterion": criterion,
            "refinement": args.refinement,
            "integrator": cfg,
        }),
        &["model.json", "timeseries.svg", "state_diagram.svg"],
    )?;

    for (i, name) in ["NO2", "O3"].iter().enumerate() {
        let fit = &rankings[i].fits[selected.ranks[i] - 1].fit;
        let labels: Vec<&str> = fit
            .mask
            .selected_columns()
            .iter()
            .map(|&c| FEATURE_LABELS[c])
            .collect();
        println!(
            "{name}: rank {} model [{}], rmse {:.4}",
            selected.ranks[i],
            labels.join(", "),
            rmse[i]
        );
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let window = make_window(args.from, args.to)?;
    let grid = if args.alpha_grid == "default" {
        AlphaGrid::default()
    } else {
        let values: Vec<f64> = args
            .alpha_grid
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(format!("bad alpha grid: {e}")))?;
        AlphaGrid::new(values)?
    };
    let stations: Vec<StationId> = if args.stations == "all" {
        ds.stations()
    } else {
        args.stations
            .split(',')
            .map(|s| StationId(s.trim().to_string()))
            .collect()
    };
    if stations.is_empty() {
        return Err(CliError::Data("no stations selected".into()));
    }
    let cfg = SweepConfig {
        criterion: args.criterion.to_core(),
        integrator: args.integrator.to_config(),
        refinement: args.refinement,
    };
    let report = minmax_alpha(&ds, &stations, &window, &grid, &cfg)?;

    airdyn::sweep::write_sweep_csv(&report, &out.join("sweep.csv"))?;
    airdyn::sweep::write_sweep_summary_json(&report, &out.join("sweep_summary.json"))?;
    plot::write_svg(&out.join("sweep.svg"), &plot::sweep_chart(&report)?)?;
    write_manifest(
        out,
        "sweep",
        serde_json::json!({
            "input": args.input,
            "stations": stations.iter().map(|s| s.0.clone()).collect::<Vec<_>>(),
            "from": args.from.to_rfc3339(),
            "to": args.to.to_rfc3339(),
            "alpha_grid": grid,
            "criterion": cfg.criterion,
            "refinement": cfg.refinement,
            "integrator": cfg.integrator,
        }),
        &["sweep.csv", "sweep_summary.json", "sweep.svg"],
    )?;

    for cell in &report.avg_rmse {
        match cell.mean_rmse {
            Some(mean) => println!(
                "alpha {:.2}: mean rmse NO2 {:.4}, O3 {:.4} ({} ok)",
                cell.alpha, mean[0], mean[1], cell.n_ok
            ),
            None => println!("alpha {:.2}: no feasible station", cell.alpha),
        }
    }
    println!(
        "selected alpha* = {} (worst average rmse {:.4})",
        report.alpha_star, report.objective
    );
    Ok(())
}

fn run_stability(args: &StabilityArgs, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.model)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let model: QuadraticModel = match value.get("model") {
        Some(inner) => serde_json::from_value(inner.clone())?,
        None => serde_json::from_value(value)?,
    };
    let report = critical_points(&model)?;

    std::fs::write(
        out.join("stability.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let opts = if args.physical {
        let coords: Vec<[f64; 2]> = report.points.iter().filter_map(|p| p.physical).collect();
        let range = |axis: usize| {
            let lo = coords.iter().map(|c| c[axis]).fold(f64::INFINITY, f64::min);
            let hi = coords
                .iter()
                .map(|c| c[axis])
                .fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() && hi.is_finite() {
                let pad = if hi > lo { 0.15 * (hi - lo) } else { 1.0 };
                (lo - pad, hi + pad)
            } else {
                (-1.0, 1.0)
            }
        };
        PortraitOptions {
            title: "Critical points (original units)".to_string(),
            x_label: "NO2 concentration".to_string(),
            y_label: "O3 concentration".to_string(),
            x_range: range(0),
            y_range: range(1),
            quiver: 20,
            physical_coords: true,
        }
    } else {
        PortraitOptions::covering("Critical points", None, &report.points)
    };
    // The direction field of the physical-coordinate plot still comes from
    // the standardized model; rescale it so arrows match the axes.
    let field_model = if args.physical {
        airdyn::stability::destandardize_model(&model)?
    } else {
        model.clone()
    };
    let portrait = plot::phase_portrait(&field_model, None, &report.points, &opts)?;
    plot::write_svg(&out.join("phase_portrait.svg"), &portrait)?;
    write_manifest(
        out,
        "stability",
        serde_json::json!({ "model": args.model, "physical": args.physical }),
        &["stability.json", "phase_portrait.svg"],
    )?;

    println!(
        "{} critical point(s), total multiplicity {}",
        report.points.len(),
        report.multiplicity_total
    );
    for p in &report.points {
        let class = p.class.map_or("complex".to_string(), |c| c.to_string());
        println!(
            "  z = ({:.6} {:+.6}i, {:.6} {:+.6}i)  [{}]  eigenvalues ({:.4} {:+.4}i, {:.4} {:+.4}i)",
            p.z[0].re, p.z[0].im, p.z[1].re, p.z[1].im, class,
            p.eigenvalues[0].re, p.eigenvalues[0].im,
            p.eigenvalues[1].re, p.eigenvalues[1].im,
        );
    }
    Ok(())
}

fn run_reconstruct(args: &ReconstructArgs, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let station = StationId(args.station.clone());
    let species = SpeciesId::new(&args.species)?;
    let window = make_window(args.from, args.to)?;
    let windowed = select_window(&ds, &station, std::slice::from_ref(&species), &window)?;
    let normalized = standardize(&windowed[0])?;
    let s = &normalized.values;

    let tau_max = args.tau_max.unwrap_or_else(|| default_tau_max(s.len()));
    let bins = args.bins.unwrap_or_else(|| default_bins(s.len()));
    let lag = select_lag(s, tau_max, bins)?;
    let emb = delay_embed(s, lag.tau)?;
    let corr = fit_orthogonal_correction(&emb, &s[..emb.points.len()])?;
    let corrected = reconstruct(&emb, &corr);

    let n = emb.points.len();
    let times: Vec<f64> = (0..n).map(|j| j as f64 * normalized.dt_hours).collect();
    let measured = &s[..n];
    let partner: Vec<f64> = corrected.iter().map(|p| p[1]).collect();
    let aligned: Vec<f64> = corrected.iter().map(|p| p[0]).collect();

    write_reconstruction_csv(&out.join("reconstruction.csv"), &times, measured, &partner)?;
    let chart = plot::reconstruction_chart(&times, measured, &partner)?;
    plot::write_svg(&out.join("reconstruction.svg"), &chart)?;
    let embedding_report = serde_json::json!({
        "tau": lag.tau,
        "fallback": lag.fallback,
        "tau_max": tau_max,
        "bins": bins,
        "theta": corr.theta,
        "reflected": corr.reflected,
        "loss": corr.loss,
        "aligned_correlation": pearson(measured, &aligned),
    });
    std::fs::write(
        out.join("embedding.json"),
        serde_json::to_string_pretty(&embedding_report)?,
    )?;
    write_manifest(
        out,
        "reconstruct",
        serde_json::json!({
            "input": args.input,
            "station": args.station,
            "species": args.species,
            "from": args.from.to_rfc3339(),
            "to": args.to.to_rfc3339(),
            "tau_max": tau_max,
            "bins": bins,
        }),
        &["reconstruction.csv", "reconstruction.svg", "embedding.json"],
    )?;

    println!(
        "lag tau = {} ({}), correction {} theta = {:.6}, aligned correlation {:.4}",
        lag.tau,
        if lag.fallback {
            "argmin fallback"
        } else {
            "first local minimum"
        },
        if corr.reflected {
            "reflection"
        } else {
            "rotation"
        },
        corr.theta,
        pearson(measured, &aligned),
    );
    Ok(())
}

fn run_synth(args: &SynthArgs, out: &Path) -> Result<(), CliError> {
    let mut spec = preset(&args.planted).ok_or_else(|| {
        CliError::Data(format!(
            "unknown preset '{}' (available: {})",
            args.planted,
            PRESET_NAMES.join(", ")
        ))
    })?;
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::Data("noise must be finite and >= 0".into()));
    }
    spec.noise_sigma = args.noise;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(duration) = args.duration {
        spec.duration_hours = duration;
    }
    if let Some(station) = &args.station {
        spec.station = StationId(station.clone());
    }

    let ds = synth_dataset(&spec)?;
    write_csv(&ds, &out.join("dataset.csv"))?;
    write_manifest(
        out,
        "synth",
        serde_json::json!({ "preset": args.planted, "spec": spec }),
        &["dataset.csv"],
    )?;
    let samples = ds.iter().next().map_or(0, |s| s.values.len());
    println!(
        "wrote {} series x {} samples for station {}",
        ds.len(),
        samples,
        spec.station.0
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let out = resolve_out_dir(&cli.out)?;
    match &cli.command {
        Command::Ingest(args) => run_ingest(args, &out),
        Command::Fit(args) => run_fit(args, &out),
        Command::Sweep(args) => run_sweep(args, &out),
        Command::Stability(args) => run_stability(args, &out),
        Command::Reconstruct(args) => run_reconstruct(args, &out),
        Command::Synth(args) => run_synth(args, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
