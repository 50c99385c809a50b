//! Delay-coordinate reconstruction of an unmeasured species from a single
//! measured series: average-mutual-information lag selection, a
//! two-dimensional delay embedding, and a post-hoc orthogonal correction
//! that aligns the embedding's observable coordinate with the data.

use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("series too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("lag {tau} out of range for series of length {len}")]
    LagOutOfRange { tau: usize, len: usize },
    #[error("histogram needs at least 2 bins")]
    InvalidBins,
    #[error("observed series length {got} does not match embedding length {expected}")]
    MismatchedLength { expected: usize, got: usize },
    #[error("no orthogonal candidate remains after excluding the identity")]
    EmptyCandidates,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Average mutual information per candidate lag, in nats.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AMICurve {
    /// Lags 1..=tau_max in grid steps.
    pub lags: Vec<usize>,
    pub ami: Vec<f64>,
}

/// Result of the lag search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LagSelection {
    pub tau: usize,
    /// True when the curve had no interior local minimum and the global
    /// argmin was used instead.
    pub fallback: bool,
    pub curve: AMICurve,
}

/// Two-dimensional delay embedding `(s_j, s_{j+tau})`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DelayEmbedding {
    pub tau: usize,
    /// Embedding dimension; fixed at 2 throughout.
    pub d: usize,
    pub points: Vec<[f64; 2]>,
}

/// One refined local minimum of the correction loss.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrectionCandidate {
    /// Angle in `[0, 2*pi)`.
    pub theta: f64,
    /// False for the rotation branch `R(theta)`, true for the reflection
    /// branch `S * R(theta)` with `S = [[0,1],[1,0]]`.
    pub reflected: bool,
    pub loss: f64,
}

/// Winning orthogonal correction plus the full candidate list.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OrthogonalCorrection {
    pub theta: f64,
    pub reflected: bool,
    /// Row-major 2x2 orthogonal matrix; determinant +1 on the rotation
    /// branch and -1 on the reflection branch.
    pub matrix: [[f64; 2]; 2],
    pub loss: f64,
    /// All refined non-identity local minima, ordered by
    /// (loss, branch, angle).
    pub candidates: Vec<CorrectionCandidate>,
}

impl OrthogonalCorrection {
    /// Apply the correction matrix to one embedded point.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1],
            m[1][0] * p[0] + m[1][1] * p[1],
        ]
    }
}

/// Default histogram bin count `max(8, ceil(log2 m) + 1)`.
pub fn default_bins(m: usize) -> usize {
    let sturges = (m.max(1) as f64).log2().ceil() as usize + 1;
    sturges.max(8)
}

/// Default lag search bound: a quarter of the series keeps at least three
/// quarters of the points in the embedding.
pub fn default_tau_max(m: usize) -> usize {
    (m / 4).max(1)
}

/// Average mutual information between `series` and its `tau`-lagged copy.
///
/// Joint and marginal probabilities come from one `bins`-wide equal-width
/// histogram spanning the full series range on both axes; empty cells
/// contribute nothing. `tau = 0` gives the self-information of the binned
/// series. Result in nats.
pub fn ami(series: &[f64], tau: usize, bins: usize) -> Result<f64, EmbeddingError> {
    if bins < 2 {
        return Err(EmbeddingError::InvalidBins);
    }
    let m = series.len();
    if m < 2 {
        return Err(EmbeddingError::TooShort { need: 2, got: m });
    }
    if tau >= m {
        return Err(EmbeddingError::LagOutOfRange { tau, len: m });
    }
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        // Constant series: a single occupied cell with probability one.
        return Ok(0.0);
    }
    let bin_of =
        |x: f64| -> usize { (((x - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1) };
    let n_pairs = m - tau;
    let mut joint = vec![0usize; bins * bins];
    for l in 0..n_pairs {
        joint[bin_of(series[l]) * bins + bin_of(series[l + tau])] += 1;
    }
    let mut row = vec![0usize; bins];
    let mut col = vec![0usize; bins];
    for i in 0..bins {
        for j in 0..bins {
            row[i] += joint[i * bins + j];
            col[j] += joint[i * bins + j];
        }
    }
    let n = n_pairs as f64;
    let mut total = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let q = c as f64 / n;
            let qi = row[i] as f64 / n;
            let qj = col[j] as f64 / n;
            total += q * (q / (qi * qj)).ln();
        }
    }
    Ok(total)
}

/// AMI at every lag 1..=tau_max.
pub fn ami_curve(series: &[f64], tau_max: usize, bins: usize) -> Result<AMICurve, EmbeddingError> {
    if tau_max == 0 || tau_max >= series.len() {
        return Err(EmbeddingError::LagOutOfRange {
            tau: tau_max,
            len: series.len(),
        });
    }
    let lags: Vec<usize> = (1..=tau_max).collect();
    let ami_values = lags
        .iter()
        .map(|&t| ami(series, t, bins))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AMICurve {
        lags,
        ami: ami_values,
    })
}

/// Index of the first strict interior local minimum of `values` (which has
/// `values[k]` at lag `k`, including lag 0), or `None` when the curve is
/// monotone through the whole range.
fn first_local_min(values: &[f64]) -> Option<usize> {
    (1..values.len().saturating_sub(1))
        .find(|&k| values[k - 1] > values[k] && values[k] < values[k + 1])
}

/// Pick the embedding lag: the first `tau` whose AMI is a strict local
/// minimum (`ami(tau-1) > ami(tau) < ami(tau+1)`, with lag 0 meaning the
/// series' self-information); when no such lag exists, fall back to the
/// global argmin and set the flag.
pub fn select_lag(
    series: &[f64],
    tau_max: usize,
    bins: usize,
) -> Result<LagSelection, EmbeddingError> {
    let curve = ami_curve(series, tau_max, bins)?;
    let mut padded = Vec::with_capacity(tau_max + 1);
    padded.push(ami(series, 0, bins)?);
    padded.extend_from_slice(&curve.ami);
    match first_local_min(&padded) {
        Some(tau) => Ok(LagSelection {
            tau,
            fallback: false,
            curve,
        }),
        None => {
            let tau = 1 + curve
                .ami
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            Ok(LagSelection {
                tau,
                fallback: true,
                curve,
            })
        }
    }
}

/// Build the two-dimensional delay embedding of `series` with lag `tau`:
/// point `j` is `(series[j], series[j + tau])`, giving `m - tau` points.
pub fn delay_embed(series: &[f64], tau: usize) -> Result<DelayEmbedding, EmbeddingError> {
    let m = series.len();
    if tau == 0 || tau >= m {
        return Err(EmbeddingError::LagOutOfRange { tau, len: m });
    }
    let points = (0..m - tau).map(|j| [series[j], series[j + tau]]).collect();
    Ok(DelayEmbedding { tau, d: 2, points })
}

fn rotation_matrix(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

fn reflection_matrix(theta: f64) -> [[f64; 2]; 2] {
    // S * R(theta) with S the coordinate swap.
    let (s, c) = theta.sin_cos();
    [[s, c], [c, -s]]
}

fn branch_matrix(theta: f64, reflected: bool) -> [[f64; 2]; 2] {
    if reflected {
        reflection_matrix(theta)
    } else {
        rotation_matrix(theta)
    }
}

fn frobenius_distance_from_identity(m: &[[f64; 2]; 2]) -> f64 {
    ((m[0][0] - 1.0).powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + (m[1][1] - 1.0).powi(2)).sqrt()
}

/// Golden-section minimization of a unimodal section of `f` on `[a, b]`.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Find the orthogonal matrix whose first row best maps the embedding onto
/// the observed coordinate.
///
/// The loss `sum_j (A(theta) p_j - w_j)_1^2` is scanned over both O(2)
/// branches on a 3600-point angle grid; each grid local minimum is refined
/// by golden-section search to 1e-8, candidates within Frobenius distance
/// 1e-6 of the identity are discarded, and the remaining candidates are
/// ordered by (loss, rotation-before-reflection, angle).
pub fn fit_orthogonal_correction(
    emb: &DelayEmbedding,
    observed: &[f64],
) -> Result<OrthogonalCorrection, EmbeddingError> {
    let n = emb.points.len();
    if observed.len() != n {
        return Err(EmbeddingError::MismatchedLength {
            expected: n,
            got: observed.len(),
        });
    }
    if n == 0 {
        return Err(EmbeddingError::TooShort { need: 1, got: 0 });
    }
    // The loss is quadratic in the first matrix row, so six accumulated
    // moments evaluate it exactly at any angle in O(1).
    let (mut suu, mut svv, mut sww, mut suv, mut suw, mut svw) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, &w) in emb.points.iter().zip(observed) {
        let (u, v) = (p[0], p[1]);
        suu += u * u;
        svv += v * v;
        sww += w * w;
        suv += u * v;
        suw += u * w;
        svw += v * w;
    }
    let loss = |theta: f64, reflected: bool| -> f64 {
        let row = branch_matrix(theta, reflected)[0];
        let (r1, r2) = (row[0], row[1]);
        r1 * r1 * suu + r2 * r2 * svv + sww + 2.0 * r1 * r2 * suv - 2.0 * r1 * suw - 2.0 * r2 * svw
    };

    const GRID: usize = 3600;
    let step = 2.0 * PI / GRID as f64;
    let mut candidates: Vec<CorrectionCandidate> = Vec::new();
    for reflected in [false, true] {
        let grid: Vec<f64> = (0..GRID)
            .map(|k| loss(k as f64 * step, reflected))
            .collect();
        for k in 0..GRID {
            let prev = grid[(k + GRID - 1) % GRID];
            let next = grid[(k + 1) % GRID];
            let here = grid[k];
            if here <= prev && here <= next && (here < prev || here < next) {
                let center = k as f64 * step;
                let theta = golden_min(|t| loss(t, reflected), center - step, center + step, 1e-8)
                    .rem_euclid(2.0 * PI);
                let matrix = branch_matrix(theta, reflected);
                if frobenius_distance_from_identity(&matrix) <= 1e-6 {
                    continue;
                }
                let refined = CorrectionCandidate {
                    theta,
                    reflected,
                    loss: loss(theta, reflected),
                };
                let duplicate = candidates.iter().any(|c| {
                    c.reflected == refined.reflected && {
                        let d = (c.theta - refined.theta).abs();
                        d.min(2.0 * PI - d) <= 1e-6
                    }
                });
                if !duplicate {
                    candidates.push(refined);
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then(a.reflected.cmp(&b.reflected))
            .then(a.theta.total_cmp(&b.theta))
    });
    let best = candidates.first().ok_or(EmbeddingError::EmptyCandidates)?;
    Ok(OrthogonalCorrection {
        theta: best.theta,
        reflected: best.reflected,
        matrix: branch_matrix(best.theta, best.reflected),
        loss: best.loss,
        candidates: candidates.clone(),
    })
}

/// Apply the correction to every embedded point; the second coordinate of
/// the result is the reconstructed hidden-species estimate.
pub fn reconstruct(emb: &DelayEmbedding, corr: &OrthogonalCorrection) -> Vec<[f64; 2]> {
    emb.points.iter().map(|&p| corr.apply(p)).collect()
}

/// Pearson correlation coefficient between two equal-length samples.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "series must have equal length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cab += (x - ma) * (y - mb);
        caa += (x - ma) * (x - ma);
        cbb += (y - mb) * (y - mb);
    }
    cab / (caa * cbb).sqrt()
}

/// Export `(t, measured, reconstructed)` rows.
pub fn write_reconstruction_csv(
    path: &Path,
    times: &[f64],
    measured: &[f64],
    reconstructed: &[f64],
) -> Result<(), EmbeddingError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "measured", "reconstructed"])?;
    for ((t, m), r) in times.iter().zip(measured).zip(reconstructed) {
        w.write_record([t.to_string(), m.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
