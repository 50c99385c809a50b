//! Series conditioning: standardization, Gaussian smoothing, modified-Akima
//! spline refinement, and backward-difference differentiation.
//!
//! The stages compose into [`process`], which turns one windowed raw series
//! into the `(grid, y, dy)` triple consumed by the regression module. All
//! state downstream of [`standardize`] is dimensionless; the recorded
//! `(mu, sigma)` pair maps results back to concentration units.

use crate::dataset::{RawSeries, SpeciesId, StationId, TimeWindow};
use thiserror::Error;

/// Smoothing strength in `[0, 1]`; `0` keeps the series untouched, `1`
/// applies the widest admissible kernel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct SmoothingFactor(f64);

impl SmoothingFactor {
    pub fn new(alpha: f64) -> Result<Self, PreprocessError> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(PreprocessError::InvalidAlpha(alpha));
        }
        Ok(SmoothingFactor(alpha))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// A standardized window: zero mean, unit sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub station: StationId,
    pub species: SpeciesId,
    pub window: TimeWindow,
    pub dt_hours: f64,
    pub values: Vec<f64>,
    /// Mean of the raw window (concentration units).
    pub mu: f64,
    /// Sample standard deviation of the raw window (divisor M-1).
    pub sigma: f64,
}

/// Output of the full conditioning chain for one species.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSeries {
    pub station: StationId,
    pub species: SpeciesId,
    pub alpha: f64,
    /// Refined time grid in hours from the window start; constant spacing.
    pub grid: Vec<f64>,
    /// Filtered and splined standardized values on `grid`.
    pub y: Vec<f64>,
    /// Backward differences: `dy[j]` pairs with `y[j+1]` at `grid[j+1]`.
    pub dy: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("series too short: need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("zero variance: cannot standardize a constant series")]
    ZeroVariance,
    #[error("series contains missing values; select a complete window first")]
    MissingValue,
    #[error("smoothing factor {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("refinement must be a positive integer")]
    ZeroRefinement,
}

/// Standardize a complete windowed series to zero mean and unit sample
/// standard deviation, recording `(mu, sigma)` for later de-standardization.
pub fn standardize(s: &RawSeries) -> Result<NormalizedSeries, PreprocessError> {
    let m = s.values.len();
    if m < 2 {
        return Err(PreprocessError::TooShort { need: 2, got: m });
    }
    let mut vals = Vec::with_capacity(m);
    for v in &s.values {
        match v {
            Some(x) => vals.push(*x),
            None => return Err(PreprocessError::MissingValue),
        }
    }
    let mu = vals.iter().sum::<f64>() / m as f64;
    let var = vals.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(PreprocessError::ZeroVariance);
    }
    Ok(NormalizedSeries {
        station: s.station.clone(),
        species: s.species.clone(),
        window: TimeWindow {
            start: s.t0,
            end: s.t_end(),
        },
        dt_hours: s.dt_hours,
        values: vals.iter().map(|x| (x - mu) / sigma).collect(),
        mu,
        sigma,
    })
}

/// Kernel window length for strength `alpha` on an M-point series: odd by
/// construction, 1 at the low end (identity), capped at the largest odd
/// number not exceeding M.
pub fn window_width(alpha: f64, m: usize) -> usize {
    let w = 1 + 2 * (alpha * (m - 1) as f64 / 4.0).round() as usize;
    let cap = if m.is_multiple_of(2) { m - 1 } else { m };
    w.min(cap)
}

/// Gaussian-weighted moving average with mirror-reflection boundaries.
///
/// The kernel spans `window_width(alpha, M)` taps with standard deviation
/// w/5, truncated to the window and renormalized to unit sum. Reflection
/// does not duplicate the edge sample (`..., x2, x1, x0, x1, x2, ...`).
pub fn gaussian_filter(
    values: &[f64],
    alpha: SmoothingFactor,
) -> Result<Vec<f64>, PreprocessError> {
    let m = values.len();
    if m < 3 {
        return Err(PreprocessError::TooShort { need: 3, got: m });
    }
    let w = window_width(alpha.get(), m);
    if w == 1 {
        return Ok(values.to_vec());
    }
    let half = (w - 1) / 2;
    let sigma = w as f64 / 5.0;
    let mut kernel: Vec<f64> = (0..w)
        .map(|i| {
            let x = i as f64 - half as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for g in &mut kernel {
        *g /= sum;
    }
    let n = m as isize;
    let reflect = |mut i: isize| -> usize {
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    Ok((0..m)
        .map(|j| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, g)| g * values[reflect(j as isize + k as isize - half as isize)])
                .sum()
        })
        .collect())
}

/// Piecewise-cubic Hermite interpolant with modified-Akima slopes on a
/// uniform grid starting at t = 0.
#[derive(Debug, Clone)]
pub struct MakimaSpline {
    pub dt: f64,
    pub y: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl MakimaSpline {
    /// Build the interpolant. Needs at least 2 knots.
    pub fn new(y: &[f64], dt: f64) -> Result<Self, PreprocessError> {
        let m = y.len();
        if m < 2 {
            return Err(PreprocessError::TooShort { need: 2, got: m });
        }
        let d: Vec<f64> = y.windows(2).map(|p| (p[1] - p[0]) / dt).collect();
        let nd = d.len();
        let mut slopes = vec![0.0; m];
        // Endpoint slopes are the one-sided secants.
        slopes[0] = d[0];
        slopes[m - 1] = d[nd - 1];
        if m > 2 {
            // Near-boundary interior knots extrapolate one ghost secant on
            // each side so the weight formula stays uniform.
            let ghost_left = 2.0 * d[0] - d[1];
            let ghost_right = 2.0 * d[nd - 1] - d[nd - 2];
            let sec = |i: isize| -> f64 {
                if i < 0 {
                    ghost_left
                } else if i as usize >= nd {
                    ghost_right
                } else {
                    d[i as usize]
                }
            };
            for knot in 1..m - 1 {
                let i = knot as isize;
                let w1 = (sec(i + 1) - sec(i)).abs() + (sec(i + 1) + sec(i)).abs() / 2.0;
                let w2 = (sec(i - 1) - sec(i - 2)).abs() + (sec(i - 1) + sec(i - 2)).abs() / 2.0;
                slopes[knot] = if w1 + w2 == 0.0 {
                    0.0
                } else {
                    (w1 * sec(i - 1) + w2 * sec(i)) / (w1 + w2)
                };
            }
        }
        Ok(MakimaSpline {
            dt,
            y: y.to_vec(),
            slopes,
        })
    }

    /// Evaluate at time `t` (hours from the first knot), clamped to the
    /// knot range.
    pub fn evaluate(&self, t: f64) -> f64 {
        let m = self.y.len();
        let k = ((t / self.dt).floor() as isize).clamp(0, m as isize - 2) as usize;
        let u = (t / self.dt - k as f64).clamp(0.0, 1.0);
        self.hermite(k, u)
    }

    fn hermite(&self, k: usize, u: f64) -> f64 {
        if u == 0.0 {
            return self.y[k]; // bitwise knot exactness
        }
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * self.y[k]
            + h10 * self.dt * self.slopes[k]
            + h01 * self.y[k + 1]
            + h11 * self.dt * self.slopes[k + 1]
    }

    /// Sample the interpolant at `refinement` equal subintervals per knot
    /// pair; output length is (M-1)*refinement + 1 with spacing dt/refinement.
    pub fn refine(&self, refinement: usize) -> Result<(Vec<f64>, Vec<f64>), PreprocessError> {
        if refinement == 0 {
            return Err(PreprocessError::ZeroRefinement);
        }
        let m = self.y.len();
        let step = self.dt / refinement as f64;
        let mut grid = Vec::with_capacity((m - 1) * refinement + 1);
        let mut out = Vec::with_capacity((m - 1) * refinement + 1);
        for k in 0..m - 1 {
            for j in 0..refinement {
                grid.push((k * refinement + j) as f64 * step);
                out.push(self.hermite(k, j as f64 / refinement as f64));
            }
        }
        grid.push(((m - 1) * refinement) as f64 * step);
        out.push(self.y[m - 1]);
        Ok((grid, out))
    }
}

/// Backward differences on a uniform grid: `dy[j] = (y[j+1] - y[j]) / dt`,
/// which downstream pairs with the state at the right endpoint `y[j+1]`.
pub fn differentiate(y: &[f64], dt: f64) -> Result<Vec<f64>, PreprocessError> {
    if y.len() < 2 {
        return Err(PreprocessError::TooShort {
            need: 2,
            got: y.len(),
        });
    }
    Ok(y.windows(2).map(|p| (p[1] - p[0]) / dt).collect())
}

/// Full conditioning chain: Gaussian filter at `alpha`, modified-Akima
/// refinement, backward differences.
pub fn process(
    ns: &NormalizedSeries,
    alpha: SmoothingFactor,
    refinement: usize,
) -> Result<ProcessedSeries, PreprocessError> {
    let filtered = gaussian_filter(&ns.values, alpha)?;
    let spline = MakimaSpline::new(&filtered, ns.dt_hours)?;
    let (grid, y) = spline.refine(refinement)?;
    let dy = differentiate(&y, grid[1] - grid[0])?;
    Ok(ProcessedSeries {
        station: ns.station.clone(),
        species: ns.species.clone(),
        alpha: alpha.get(),
        grid,
        y,
        dy,
        mu: ns.mu,
        sigma: ns.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SpeciesId;
    use approx::assert_abs_diff_eq;
    use chrono::{TimeZone, Utc};

    fn raw(values: &[f64]) -> RawSeries {
        RawSeries {
            station: "T".into(),
            species: SpeciesId::no2(),
            t0: Utc.with_ymd_and_hms(2018, 4, 1, 0, 0, 0).unwrap(),
            dt_hours: 1.0,
            values: values.iter().map(|v| Some(*v)).collect(),
        }
    }

    #[test]
    fn standardize_symmetric_triple() {
        let ns = standardize(&raw(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(ns.values, vec![-1.0, 0.0, 1.0]);
        assert_eq!(ns.mu, 2.0);
        assert_eq!(ns.sigma, 1.0);
    }

    #[test]
    fn standardize_pair_uses_sample_std() {
        let ns = standardize(&raw(&[0.0, 10.0])).unwrap();
        assert_abs_diff_eq!(ns.sigma, 50.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ns.values[0], -1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ns.values[1], 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ns.sigma, 7.0711, epsilon = 1e-4);
    }

    #[test]
    fn standardize_constant_is_zero_variance() {
        let err = standardize(&raw(&[5.0, 5.0, 5.0])).unwrap_err();
        assert!(matches!(err, PreprocessError::ZeroVariance));
    }

    #[test]
    fn standardize_output_invariants() {
        let vals: Vec<f64> = (0..40)
            .map(|i| ((i * 37 % 17) as f64).sin() * 9.0 + 3.0)
            .collect();
        let ns = standardize(&raw(&vals)).unwrap();
        let m = ns.values.len() as f64;
        let mean = ns.values.iter().sum::<f64>() / m;
        let std = (ns.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn smoothing_factor_bounds() {
        assert!(SmoothingFactor::new(0.0).is_ok());
        assert!(SmoothingFactor::new(1.0).is_ok());
        assert!(SmoothingFactor::new(-0.1).is_err());
        assert!(SmoothingFactor::new(1.1).is_err());
    }

    #[test]
    fn window_width_law() {
        assert_eq!(window_width(0.01, 19), 1);
        assert_eq!(window_width(0.01, 5), 1);
        assert_eq!(window_width(0.5, 21), 7);
        assert_eq!(window_width(1.0, 21), 11);
        assert_eq!(window_width(0.99, 5), 3);
    }

    #[test]
    fn low_alpha_filter_is_identity() {
        let v = vec![3.0, -1.0, 4.0, -1.0, 5.0];
        let out = gaussian_filter(&v, SmoothingFactor::new(0.01).unwrap()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn filter_preserves_constants() {
        let v = vec![2.5; 11];
        let out = gaussian_filter(&v, SmoothingFactor::new(0.7).unwrap()).unwrap();
        for x in out {
            assert_abs_diff_eq!(x, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        // M=9, alpha=1 -> w=5, sigma=1; impulse far from both edges.
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let out = gaussian_filter(&v, SmoothingFactor::new(1.0).unwrap()).unwrap();
        let raw: Vec<f64> = (-2..=2).map(|k| (-(k * k) as f64 / 2.0).exp()).collect();
        let s: f64 = raw.iter().sum();
        for (k, g) in raw.iter().enumerate() {
            assert_abs_diff_eq!(out[2 + k], g / s, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn reflection_keeps_linear_interior_exact() {
        // w=3 at this alpha/M; a symmetric 3-tap kernel reproduces linear data
        // away from the boundary, and the mirrored edge pulls inward by a
        // predictable amount.
        let v: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let out = gaussian_filter(&v, SmoothingFactor::new(0.5).unwrap()).unwrap();
        for j in 1..6 {
            assert_abs_diff_eq!(out[j], v[j], epsilon = 1e-12);
        }
        let sigma: f64 = 3.0 / 5.0;
        let a = (-1.0 / (2.0 * sigma * sigma)).exp();
        let edge = (2.0 * a * v[1] + v[0]) / (2.0 * a + 1.0);
        assert_abs_diff_eq!(out[0], edge, epsilon = 1e-12);
    }

    #[test]
    fn filter_does_not_increase_total_variation() {
        let v: Vec<f64> = (0..50)
            .map(|i| ((i as f64) * 1.7).sin() + 0.1 * (i % 3) as f64)
            .collect();
        let out = gaussian_filter(&v, SmoothingFactor::new(0.5).unwrap()).unwrap();
        let tv = |s: &[f64]| s.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>();
        assert!(tv(&out) <= tv(&v) + 1e-9);
    }

    #[test]
    fn makima_hits_knots_exactly() {
        let y = vec![0.3, -1.2, 2.2, 0.0, 0.7, -0.4];
        let sp = MakimaSpline::new(&y, 0.5).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert_abs_diff_eq!(sp.evaluate(i as f64 * 0.5), *v, epsilon = 1e-14);
        }
        let (_, refined) = sp.refine(4).unwrap();
        assert_eq!(refined.len(), (y.len() - 1) * 4 + 1);
        for (i, v) in y.iter().enumerate() {
            assert_eq!(refined[i * 4], *v);
        }
    }

    #[test]
    fn makima_reproduces_lines() {
        let y: Vec<f64> = (0..6).map(|i| 2.0 * i as f64 + 1.0).collect();
        let sp = MakimaSpline::new(&y, 1.0).unwrap();
        let (grid, refined) = sp.refine(10).unwrap();
        for (t, v) in grid.iter().zip(&refined) {
            assert_abs_diff_eq!(*v, 2.0 * t + 1.0, epsilon = 1e-13);
        }
    }

    /// Straight-line second implementation: extended secant array and direct
    /// polynomial evaluation, structured differently from the main path.
    fn reference_makima(y: &[f64], dt: f64, t: f64) -> f64 {
        let m = y.len();
        let mut d = Vec::new();
        for i in 0..m - 1 {
            d.push((y[i + 1] - y[i]) / dt);
        }
        // extended: [ghost_l, d..., ghost_r]
        let mut ext = vec![2.0 * d[0] - d[1]];
        ext.extend_from_slice(&d);
        ext.push(2.0 * d[m - 2] - d[m - 3]);
        // slope at knot i: formula over ext, offset +1
        let slope = |i: usize| -> f64 {
            if i == 0 {
                return d[0];
            }
            if i == m - 1 {
                return d[m - 2];
            }
            let e = |j: isize| ext[(j + 1) as usize];
            let i = i as isize;
            let w1 = (e(i + 1) - e(i)).abs() + (e(i + 1) + e(i)).abs() / 2.0;
            let w2 = (e(i - 1) - e(i - 2)).abs() + (e(i - 1) + e(i - 2)).abs() / 2.0;
            if w1 + w2 == 0.0 {
                0.0
            } else {
                (w1 * e(i - 1) + w2 * e(i)) / (w1 + w2)
            }
        };
        let k = ((t / dt).floor() as usize).min(m - 2);
        let u = t / dt - k as f64;
        // cubic through (y_k, s_k, y_{k+1}, s_{k+1}) in monomial form
        let (p0, m0, p1, m1) = (y[k], slope(k) * dt, y[k + 1], slope(k + 1) * dt);
        let c2 = -3.0 * p0 - 2.0 * m0 + 3.0 * p1 - m1;
        let c3 = 2.0 * p0 + m0 - 2.0 * p1 + m1;
        p0 + m0 * u + c2 * u * u + c3 * u * u * u
    }

    #[test]
    fn makima_matches_reference_on_parabola() {
        let y: Vec<f64> = (0..4).map(|i| (i * i) as f64).collect();
        let sp = MakimaSpline::new(&y, 1.0).unwrap();
        for k in 0..3 {
            let t = k as f64 + 0.5;
            assert_abs_diff_eq!(
                sp.evaluate(t),
                reference_makima(&y, 1.0, t),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn makima_matches_reference_on_irregular_data() {
        let y = vec![1.0, -0.5, 0.25, 3.0, 2.0, 2.0, -1.0];
        let sp = MakimaSpline::new(&y, 0.5).unwrap();
        for j in 0..=60 {
            let t = j as f64 * 0.05;
            assert_abs_diff_eq!(
                sp.evaluate(t),
                reference_makima(&y, 0.5, t),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn differentiate_constant_and_linear() {
        assert!(differentiate(&[4.0, 4.0, 4.0], 0.5)
            .unwrap()
            .iter()
            .all(|d| *d == 0.0));
        let y: Vec<f64> = (0..100).map(|i| 3.0 * (i as f64 * 0.01)).collect();
        for d in differentiate(&y, 0.01).unwrap() {
            assert_abs_diff_eq!(d, 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn differentiate_sine_first_order_bound() {
        let dt = 0.01;
        let y: Vec<f64> = (0..500).map(|i| (i as f64 * dt).sin()).collect();
        let dy = differentiate(&y, dt).unwrap();
        for (j, d) in dy.iter().enumerate() {
            let t_right = (j + 1) as f64 * dt;
            assert!((d - t_right.cos()).abs() <= 0.01);
        }
    }

    #[test]
    fn differentiate_inverts_cumulative_sum() {
        let a = vec![0.4, -1.1, 2.0, 0.0, 3.5, -0.2];
        let dt = 0.25;
        let mut y = vec![0.0];
        for x in &a {
            y.push(y.last().unwrap() + x * dt);
        }
        let dy = differentiate(&y, dt).unwrap();
        for (d, x) in dy.iter().zip(&a) {
            assert_abs_diff_eq!(*d, *x, epsilon = 1e-12);
        }
    }

    #[test]
    fn process_shape_invariants() {
        let vals: Vec<f64> = (0..8)
            .map(|i| (i as f64 * 0.9).cos() * 4.0 + 10.0)
            .collect();
        let ns = standardize(&raw(&vals)).unwrap();
        let ps = process(&ns, SmoothingFactor::new(0.35).unwrap(), 100).unwrap();
        assert_eq!(ps.grid.len(), (vals.len() - 1) * 100 + 1);
        assert_eq!(ps.y.len(), ps.grid.len());
        assert_eq!(ps.dy.len(), ps.y.len() - 1);
        let step = ps.grid[1] - ps.grid[0];
        assert_abs_diff_eq!(step, 0.01, epsilon = 1e-12);
        for w in ps.grid.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], step, epsilon = 1e-10);
        }
    }
}
