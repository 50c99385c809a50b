//! Quadratic feature library and sparse model fitting.
//!
//! The library spans the six planar monomials `[1, y1, y2, y1^2, y1*y2,
//! y2^2]` (y1 = first species, y2 = second). Fitting is exhaustive
//! best-subset least squares over the 2^5 = 32 masks of non-intercept
//! columns, scored by an information criterion; a LASSO solver is kept as a
//! non-default alternative (it is known to behave poorly on noisy field
//! data, which is why the subset search is the primary path).

use crate::preprocess::ProcessedSeries;
use nalgebra::{DMatrix, DVector};
use std::fmt;
use thiserror::Error;

/// Monomial labels in canonical column order.
pub const FEATURE_LABELS: [&str; 6] = ["1", "y1", "y2", "y1^2", "y1*y2", "y2^2"];

/// Number of selectable (non-intercept) features.
pub const N_FEATURES: usize = 5;

/// Residual sum-of-squares floor applied before the logarithm in AIC/BIC,
/// scaled by the row count: `max(rss, RSS_FLOOR_PER_ROW * m)`.
pub const RSS_FLOOR_PER_ROW: f64 = 1e-12;

/// Relative tolerance on the pivoted-QR diagonal for declaring a subset
/// rank-deficient.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("need exactly two processed series, got {0}")]
    SpeciesCount(usize),
    #[error("processed series have mismatched grids")]
    MismatchedGrids,
    #[error("non-finite feature or target entry at row {row}")]
    NonFinite { row: usize },
    #[error("empty feature library")]
    Empty,
    #[error("species index {0} out of range (0 or 1)")]
    SpeciesIndex(usize),
    #[error("rank-deficient submatrix for mask {mask}")]
    RankDeficient { mask: SubsetMask },
    #[error("too few rows: m={m}, k={k} (need m > k+1)")]
    DegreesOfFreedom { m: usize, k: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("coordinate descent did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
}

/// Inclusion flags over the five non-intercept columns, ordered as
/// `[y1, y2, y1^2, y1*y2, y2^2]`. The intercept is always included.
///
/// The derived ordering (element-wise, `false < true`) is the tie-break
/// order used by [`best_subset`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct SubsetMask(pub [bool; N_FEATURES]);

impl SubsetMask {
    pub fn none() -> Self {
        SubsetMask([false; N_FEATURES])
    }

    pub fn all() -> Self {
        SubsetMask([true; N_FEATURES])
    }

    /// Bit `j` of `bits` toggles feature `j` (0 = y1, ..., 4 = y2^2).
    pub fn from_bits(bits: u8) -> Self {
        let mut f = [false; N_FEATURES];
        for (j, fj) in f.iter_mut().enumerate() {
            *fj = bits >> j & 1 == 1;
        }
        SubsetMask(f)
    }

    /// All 32 masks (enumeration order is irrelevant to the final ranking).
    pub fn enumerate() -> impl Iterator<Item = SubsetMask> {
        (0u8..32).map(SubsetMask::from_bits)
    }

    /// Number of included features.
    pub fn k(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    /// Library column indices selected by this mask, intercept first.
    pub fn selected_columns(&self) -> Vec<usize> {
        let mut cols = vec![0];
        cols.extend(
            self.0
                .iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .map(|(j, _)| j + 1),
        );
        cols
    }
}

impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// Evaluated feature matrix plus the two derivative targets.
#[derive(Debug, Clone)]
pub struct FeatureLibrary {
    /// m x 6 matrix; row j is `[1, y1, y2, y1^2, y1*y2, y2^2]` at grid point j.
    pub matrix: DMatrix<f64>,
    /// Per-species derivative targets, each of length m.
    pub targets: [DVector<f64>; 2],
}

impl FeatureLibrary {
    /// Assemble a library directly from planar states and targets.
    pub fn from_states(states: &[[f64; 2]], targets: [&[f64]; 2]) -> Result<Self, RegressionError> {
        let m = states.len();
        if m == 0 {
            return Err(RegressionError::Empty);
        }
        if targets[0].len() != m || targets[1].len() != m {
            return Err(RegressionError::MismatchedGrids);
        }
        let mut matrix = DMatrix::zeros(m, 6);
        for (j, &[y1, y2]) in states.iter().enumerate() {
            let row = [1.0, y1, y2, y1 * y1, y1 * y2, y2 * y2];
            if row.iter().any(|v| !v.is_finite())
                || !targets[0][j].is_finite()
                || !targets[1][j].is_finite()
            {
                return Err(RegressionError::NonFinite { row: j });
            }
            for (c, v) in row.iter().enumerate() {
                matrix[(j, c)] = *v;
            }
        }
        Ok(FeatureLibrary {
            matrix,
            targets: [
                DVector::from_column_slice(targets[0]),
                DVector::from_column_slice(targets[1]),
            ],
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Build the regression library from the two processed series.
///
/// Row j pairs the state at refined grid point j+1 with the backward
/// difference `dy[j]`, so derivatives sit at the right endpoint of each
/// interval; there are `len(y) - 1` rows.
pub fn build_library(series: &[ProcessedSeries]) -> Result<FeatureLibrary, RegressionError> {
    if series.len() != 2 {
        return Err(RegressionError::SpeciesCount(series.len()));
    }
    let (a, b) = (&series[0], &series[1]);
    if a.grid.len() != b.grid.len()
        || a.grid
            .iter()
            .zip(&b.grid)
            .any(|(x, y)| (x - y).abs() > 1e-12)
    {
        return Err(RegressionError::MismatchedGrids);
    }
    if a.y.len() <= N_FEATURES + 1 {
        return Err(RegressionError::DegreesOfFreedom {
            m: a.y.len().saturating_sub(1),
            k: N_FEATURES,
        });
    }
    let states: Vec<[f64; 2]> = a.y[1..]
        .iter()
        .zip(&b.y[1..])
        .map(|(&y1, &y2)| [y1, y2])
        .collect();
    FeatureLibrary::from_states(&states, [&a.dy, &b.dy])
}

/// One least-squares fit for a single mask and species.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RegressionFit {
    pub mask: SubsetMask,
    /// Coefficients in canonical column order, exactly zero where masked out.
    pub beta: [f64; 6],
    pub rss: f64,
    /// Total sum of squares of the target about its mean.
    pub tss: f64,
    /// Number of non-intercept coefficients in the mask.
    pub k: usize,
    /// Number of regression rows.
    pub m: usize,
    pub aic: f64,
    pub bic: f64,
    pub adj_r2: f64,
}

impl RegressionFit {
    pub fn selected_labels(&self) -> Vec<&'static str> {
        self.mask
            .selected_columns()
            .into_iter()
            .map(|c| FEATURE_LABELS[c])
            .collect()
    }
}

/// Information criteria for ranking subset fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Criterion {
    Aic,
    Bic,
    AdjR2,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::AdjR2 => "adj-r2",
        })
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "adj-r2" | "adjr2" | "adj_r2" => Ok(Criterion::AdjR2),
            other => Err(format!("unknown criterion '{other}' (aic|bic|adj-r2)")),
        }
    }
}

/// Compute `(aic, bic, adj_r2)` from the stored statistics; the same
/// function backs [`fit_subset`], so recomputation is reproducible exactly.
pub fn scores(rss: f64, tss: f64, k: usize, m: usize) -> (f64, f64, f64) {
    let mf = m as f64;
    let rss_eff = rss.max(RSS_FLOOR_PER_ROW * mf);
    let aic = mf * (rss_eff / mf).ln() + 2.0 * k as f64;
    let bic = mf * (rss_eff / mf).ln() + mf.ln() * (k as f64 + 1.0);
    let r2 = if tss > 0.0 {
        1.0 - rss / tss
    } else if rss <= RSS_FLOOR_PER_ROW * mf {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    let adj_r2 = 1.0 - (1.0 - r2) * mf / (mf - k as f64 - 1.0);
    (aic, bic, adj_r2)
}

/// Least squares on the masked columns (intercept always included) via
/// column-pivoted QR; never forms normal equations.
pub fn fit_subset(
    lib: &FeatureLibrary,
    species: usize,
    mask: SubsetMask,
) -> Result<RegressionFit, RegressionError> {
    if species > 1 {
        return Err(RegressionError::SpeciesIndex(species));
    }
    let target = &lib.targets[species];
    let m = lib.rows();
    let k = mask.k();
    if m <= k + 1 {
        return Err(RegressionError::DegreesOfFreedom { m, k });
    }
    let cols = mask.selected_columns();
    let sub = lib.matrix.select_columns(&cols);
    let qr = sub.clone().col_piv_qr();
    let (q, r, p) = qr.unpack();
    let d0 = r[(0, 0)].abs();
    let deficient = d0 == 0.0 || (0..cols.len()).any(|i| r[(i, i)].abs() <= RANK_RTOL * d0);
    if deficient {
        return Err(RegressionError::RankDeficient { mask });
    }
    let proj = q.transpose() * target;
    let mut coef = r
        .solve_upper_triangular(&proj)
        .ok_or(RegressionError::RankDeficient { mask })?;
    p.inv_permute_rows(&mut coef);
    let rss = (target - &sub * &coef).norm_squared();
    let mean = target.mean();
    let tss = target.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
    let mut beta = [0.0; 6];
    for (i, &c) in cols.iter().enumerate() {
        beta[c] = coef[i];
    }
    let (aic, bic, adj_r2) = scores(rss, tss, k, m);
    Ok(RegressionFit {
        mask,
        beta,
        rss,
        tss,
        k,
        m,
        aic,
        bic,
        adj_r2,
    })
}

/// One entry of a [`ModelRanking`]; masks whose submatrix is rank-deficient
/// (or leaves no residual degrees of freedom) are kept but flagged.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RankedFit {
    pub fit: RegressionFit,
    pub feasible: bool,
}

/// All 32 subset fits for one species, ordered best-first.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ModelRanking {
    pub criterion: Criterion,
    pub fits: Vec<RankedFit>,
}

impl ModelRanking {
    pub fn best(&self) -> &RankedFit {
        &self.fits[0]
    }
}

fn ranking_key(rf: &RankedFit, criterion: Criterion) -> (bool, f64, usize, SubsetMask) {
    let score = match criterion {
        Criterion::Aic => rf.fit.aic,
        Criterion::Bic => rf.fit.bic,
        Criterion::AdjR2 => -rf.fit.adj_r2, // descending
    };
    (!rf.feasible, score, rf.fit.k, rf.fit.mask)
}

/// Exhaustively fit every mask and rank by `criterion` (ascending AIC/BIC,
/// descending adjusted R²); ties break toward fewer features, then the
/// lexicographically smaller mask. Infeasible masks sort last.
pub fn best_subset(
    lib: &FeatureLibrary,
    species: usize,
    criterion: Criterion,
) -> Result<ModelRanking, RegressionError> {
    let mut fits = Vec::with_capacity(32);
    for mask in SubsetMask::enumerate() {
        match fit_subset(lib, species, mask) {
            Ok(fit) => fits.push(RankedFit {
                fit,
                feasible: true,
            }),
            Err(RegressionError::RankDeficient { .. })
            | Err(RegressionError::DegreesOfFreedom { .. }) => fits.push(RankedFit {
                fit: RegressionFit {
                    mask,
                    beta: [0.0; 6],
                    rss: f64::INFINITY,
                    tss: f64::NAN,
                    k: mask.k(),
                    m: lib.rows(),
                    aic: f64::INFINITY,
                    bic: f64::INFINITY,
                    adj_r2: f64::NEG_INFINITY,
                },
                feasible: false,
            }),
            Err(e) => return Err(e),
        }
    }
    fits.sort_by(|a, b| {
        let (fa, fb) = (ranking_key(a, criterion), ranking_key(b, criterion));
        fa.0.cmp(&fb.0)
            .then(fa.1.total_cmp(&fb.1))
            .then(fa.2.cmp(&fb.2))
            .then(fa.3.cmp(&fb.3))
    });
    Ok(ModelRanking { criterion, fits })
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Smallest penalty that zeroes every non-intercept coefficient:
/// `max_j |X_j^T (t - mean(t))|`.
pub fn lasso_lambda_max(lib: &FeatureLibrary, species: usize) -> Result<f64, RegressionError> {
    if species > 1 {
        return Err(RegressionError::SpeciesIndex(species));
    }
    let t = &lib.targets[species];
    let centered = t.add_scalar(-t.mean());
    Ok((1..6)
        .map(|j| lib.matrix.column(j).dot(&centered).abs())
        .fold(0.0, f64::max))
}

/// Cyclic coordinate descent for `1/2 ||t - X b||^2 + lambda * sum_{j>=1} |b_j|`
/// (intercept unpenalized), warm-started from `beta0`.
pub fn lasso_warm(
    lib: &FeatureLibrary,
    species: usize,
    lambda: f64,
    beta0: [f64; 6],
) -> Result<[f64; 6], RegressionError> {
    if species > 1 {
        return Err(RegressionError::SpeciesIndex(species));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RegressionError::InvalidLambda(lambda));
    }
    let x = &lib.matrix;
    let t = &lib.targets[species];
    let cnorm: Vec<f64> = (0..6).map(|j| x.column(j).norm_squared()).collect();
    let mut beta = beta0;
    let mut residual = t.clone();
    for j in 0..6 {
        if beta[j] != 0.0 {
            residual -= x.column(j) * beta[j];
        }
    }
    const MAX_SWEEPS: usize = 100_000;
    for _ in 0..MAX_SWEEPS {
        let mut max_delta = 0.0_f64;
        for j in 0..6 {
            if cnorm[j] == 0.0 {
                continue;
            }
            let rho = x.column(j).dot(&residual) + cnorm[j] * beta[j];
            let new = if j == 0 {
                rho / cnorm[0]
            } else {
                soft_threshold(rho, lambda) / cnorm[j]
            };
            let delta = new - beta[j];
            if delta != 0.0 {
                residual.axpy(-delta, &x.column(j), 1.0);
                beta[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < 1e-10 {
            return Ok(beta);
        }
    }
    Err(RegressionError::NonConvergence {
        iterations: MAX_SWEEPS,
    })
}

/// [`lasso_warm`] from a zero start.
pub fn lasso(
    lib: &FeatureLibrary,
    species: usize,
    lambda: f64,
) -> Result<[f64; 6], RegressionError> {
    lasso_warm(lib, species, lambda, [0.0; 6])
}

/// Warm-started solution path over `lambdas` in the order given.
pub fn lasso_path(
    lib: &FeatureLibrary,
    species: usize,
    lambdas: &[f64],
) -> Result<Vec<[f64; 6]>, RegressionError> {
    let mut out = Vec::with_capacity(lambdas.len());
    let mut beta = [0.0; 6];
    for &l in lambdas {
        beta = lasso_warm(lib, species, l, beta)?;
        out.push(beta);
    }
    Ok(out)
}

/// Maximum violation of the stationarity conditions at `beta`: zero at an
/// exact optimum, and the measure the tests bound by 1e-6.
pub fn lasso_kkt_residual(
    lib: &FeatureLibrary,
    species: usize,
    lambda: f64,
    beta: &[f64; 6],
) -> f64 {
    let x = &lib.matrix;
    let bv = DVector::from_column_slice(beta);
    let grad = x.transpose() * (x * bv - &lib.targets[species]);
    let mut worst = grad[0].abs();
    for j in 1..6 {
        let v = if beta[j] != 0.0 {
            (grad[j] + lambda * beta[j].signum()).abs()
        } else {
            (grad[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}
