//! End-to-end fit evaluation and the min-max smoothing sweep: every
//! (station, smoothing factor) cell runs the full identification pipeline,
//! fits are scored by RMSE against the original normalized readings, and
//! the selected factor minimizes the worst per-species average error.

use crate::dataset::SpeciesId;
use crate::dataset::{select_window, DatasetError, StationDataset, StationId, TimeWindow};
use crate::ode::{select_feasible_model, IntegratorConfig, OdeError, QuadraticModel};
use crate::preprocess::{process, standardize, PreprocessError, SmoothingFactor};
use crate::regression::{best_subset, build_library, Criterion, RegressionError};
use nalgebra::Vector2;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid smoothing grid: {0}")]
    InvalidGrid(&'static str),
    #[error("no (species, alpha) cell has a feasible average")]
    NoFeasibleCells,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ordered smoothing factors to sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlphaGrid {
    values: Vec<f64>,
}

impl AlphaGrid {
    /// Strictly increasing values in `(0, 1)`.
    pub fn new(values: Vec<f64>) -> Result<Self, SweepError> {
        if values.is_empty() {
            return Err(SweepError::InvalidGrid("grid is empty"));
        }
        if values.iter().any(|a| !(0.0 < *a && *a < 1.0)) {
            return Err(SweepError::InvalidGrid("values must lie in (0, 1)"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SweepError::InvalidGrid(
                "values must be strictly increasing",
            ));
        }
        Ok(AlphaGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for AlphaGrid {
    /// 0.05 through 0.95 in steps of 0.05, bracketed by 0.01 and 0.99
    /// (21 values).
    fn default() -> Self {
        let mut values = vec![0.01];
        values.extend((1..=19).map(|k| k as f64 * 0.05));
        values.push(0.99);
        AlphaGrid { values }
    }
}

/// Whether a cell produced a scored model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FitStatus {
    Ok,
    /// Every ranked regression pair failed to integrate.
    Infeasible,
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitStatus::Ok => "ok",
            FitStatus::Infeasible => "infeasible",
        })
    }
}

/// Result of one (station, alpha) pipeline run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOutcome {
    pub station: StationId,
    pub alpha: f64,
    pub status: FitStatus,
    /// Selected model, present when `status == Ok`.
    pub model: Option<QuadraticModel>,
    /// 1-based criterion ranks of the selected regression pair.
    pub ranks: Option<[usize; 2]>,
    /// Per-species RMSE against the normalized raw readings.
    pub rmse: Option<[f64; 2]>,
}

/// Per-alpha aggregate over stations.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlphaCell {
    pub alpha: f64,
    pub n_ok: usize,
    pub n_infeasible: usize,
    /// Per-species mean RMSE over the ok stations; absent when no station
    /// fit succeeded at this alpha.
    pub mean_rmse: Option<[f64; 2]>,
    /// Max of the per-species means (the objective evaluated at this alpha).
    pub worst: Option<f64>,
}

/// Full sweep result.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepReport {
    /// One outcome per (station, alpha), stations outermost.
    pub outcomes: Vec<FitOutcome>,
    pub avg_rmse: Vec<AlphaCell>,
    pub alpha_star: f64,
    pub objective: f64,
}

/// Pipeline knobs shared by every cell.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepConfig {
    pub criterion: Criterion,
    pub integrator: IntegratorConfig,
    /// Spline refinement factor (sub-steps per raw interval).
    pub refinement: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            criterion: Criterion::Aic,
            integrator: IntegratorConfig::default(),
            refinement: 100,
        }
    }
}

/// Root mean square error `sqrt(mean((w - y)^2))` between two equal-length
/// sample vectors.
pub fn rmse(original: &[f64], fitted: &[f64]) -> Result<f64, SweepError> {
    if original.is_empty() || original.len() != fitted.len() {
        return Err(SweepError::LengthMismatch {
            expected: original.len(),
            got: fitted.len(),
        });
    }
    let sum: f64 = original
        .iter()
        .zip(fitted)
        .map(|(w, y)| (w - y) * (w - y))
        .sum();
    Ok((sum / original.len() as f64).sqrt())
}

/// Run the full inner pipeline for one station and smoothing factor:
/// window, standardize, filter, spline, differentiate, rank subsets per
/// species, pick the first integrable pair, then score the integrated
/// trajectory against the normalized raw readings at their own timestamps.
pub fn station_fit(
    ds: &StationDataset,
    station: &StationId,
    window: &TimeWindow,
    alpha: SmoothingFactor,
    cfg: &SweepConfig,
) -> Result<FitOutcome, SweepError> {
    let species = [SpeciesId::no2(), SpeciesId::o3()];
    let windowed = select_window(ds, station, &species, window)?;
    let normalized = [standardize(&windowed[0])?, standardize(&windowed[1])?];
    let processed = [
        process(&normalized[0], alpha, cfg.refinement)?,
        process(&normalized[1], alpha, cfg.refinement)?,
    ];
    let library = build_library(&processed)?;
    let rankings = [
        best_subset(&library, 0, cfg.criterion)?,
        best_subset(&library, 1, cfg.criterion)?,
    ];
    let norm_params = [
        (normalized[0].mu, normalized[0].sigma),
        (normalized[1].mu, normalized[1].sigma),
    ];
    let y0 = Vector2::new(processed[0].y[0], processed[1].y[0]);
    let m = normalized[0].values.len();
    let dt = normalized[0].dt_hours;
    let t_span = (0.0, (m - 1) as f64 * dt);

    match select_feasible_model(&rankings, norm_params, y0, t_span, &cfg.integrator) {
        Ok(selected) => {
            let mut scores = [0.0; 2];
            for i in 0..2 {
                let fitted: Vec<f64> = (0..m)
                    .map(|j| selected.trajectory.sample(j as f64 * dt)[i])
                    .collect();
                scores[i] = rmse(&normalized[i].values, &fitted)?;
            }
            Ok(FitOutcome {
                station: station.clone(),
                alpha: alpha.get(),
                status: FitStatus::Ok,
                model: Some(selected.model),
                ranks: Some(selected.ranks),
                rmse: Some(scores),
            })
        }
        Err(OdeError::AllModelsInfeasible { .. }) => Ok(FitOutcome {
            station: station.clone(),
            alpha: alpha.get(),
            status: FitStatus::Infeasible,
            model: None,
            ranks: None,
            rmse: None,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Aggregate outcomes into per-alpha cells and pick the min-max alpha:
/// per-species mean over ok stations, max over species, argmin over the
/// grid with ties resolved toward the smaller alpha.
pub fn summarize(
    outcomes: &[FitOutcome],
    grid: &AlphaGrid,
) -> Result<(Vec<AlphaCell>, f64, f64), SweepError> {
    let mut cells = Vec::with_capacity(grid.values.len());
    for &alpha in &grid.values {
        let mut sums = [0.0; 2];
        let mut n_ok = 0usize;
        let mut n_infeasible = 0usize;
        for o in outcomes.iter().filter(|o| o.alpha == alpha) {
            match (o.status, o.rmse) {
                (FitStatus::Ok, Some(r)) => {
                    sums[0] += r[0];
                    sums[1] += r[1];
                    n_ok += 1;
                }
                _ => n_infeasible += 1,
            }
        }
        let mean_rmse = (n_ok > 0).then(|| [sums[0] / n_ok as f64, sums[1] / n_ok as f64]);
        let worst = mean_rmse.map(|m| m[0].max(m[1]));
        cells.push(AlphaCell {
            alpha,
            n_ok,
            n_infeasible,
            mean_rmse,
            worst,
        });
    }
    let mut best: Option<(f64, f64)> = None;
    for cell in &cells {
        if let Some(w) = cell.worst {
            if best.is_none_or(|(_, bw)| w < bw) {
                best = Some((cell.alpha, w));
            }
        }
    }
    let (alpha_star, objective) = best.ok_or(SweepError::NoFeasibleCells)?;
    Ok((cells, alpha_star, objective))
}

/// Evaluate every (station, alpha) cell in parallel and assemble the
/// min-max report. Cell order (stations outermost, grid order inside) and
/// all values are deterministic for a fixed dataset and config.
pub fn minmax_alpha(
    ds: &StationDataset,
    stations: &[StationId],
    window: &TimeWindow,
    grid: &AlphaGrid,
    cfg: &SweepConfig,
) -> Result<SweepReport, SweepError> {
    let cells: Vec<(&StationId, f64)> = stations
        .iter()
        .flat_map(|s| grid.values.iter().map(move |&a| (s, a)))
        .collect();
    let results: Vec<Result<FitOutcome, SweepError>> = cells
        .par_iter()
        .map(|(station, alpha)| {
            station_fit(ds, station, window, SmoothingFactor::new(*alpha)?, cfg)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        outcomes.push(r?);
    }
    let (avg_rmse, alpha_star, objective) = summarize(&outcomes, grid)?;
    Ok(SweepReport {
        outcomes,
        avg_rmse,
        alpha_star,
        objective,
    })
}

/// Export one row per (station, alpha, species).
pub fn write_sweep_csv(report: &SweepReport, path: &Path) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["station", "alpha", "species", "rmse", "status"])?;
    for o in &report.outcomes {
        for (i, species) in ["NO2", "O3"].iter().enumerate() {
            let rmse_text = o.rmse.map(|r| r[i].to_string()).unwrap_or_default();
            w.write_record([
                o.station.0.as_str(),
                &o.alpha.to_string(),
                species,
                &rmse_text,
                &o.status.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Export the aggregate table and selection.
pub fn write_sweep_summary_json(report: &SweepReport, path: &Path) -> Result<(), SweepError> {
    #[derive(serde::Serialize)]
    struct Summary<'a> {
        avg_rmse: &'a [AlphaCell],
        alpha_star: f64,
        objective: f64,
    }
    let text = serde_json::to_string_pretty(&Summary {
        avg_rmse: &report.avg_rmse,
        alpha_star: report.alpha_star,
        objective: report.objective,
    })?;
    std::fs::write(path, text)?;
    Ok(())
}
