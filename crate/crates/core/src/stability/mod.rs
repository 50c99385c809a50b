//! Critical points of the fitted planar quadratic system, their local
//! stability classification, and the affine maps between standardized and
//! physical (concentration-unit) coordinates.
//!
//! Solving `P = Q = 0` for two bivariate quadratics proceeds by eliminating
//! the second variable with a polynomial resultant (degree at most four),
//! extracting all complex roots through a companion-matrix eigenvalue
//! computation, back-substituting, and polishing every candidate with Newton
//! iterations on the full system.

mod poly;

use crate::ode::QuadraticModel;
use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

/// Imaginary parts and duplicate distances below this are collapsed.
const POINT_TOL: f64 = 1e-8;
/// Relative tolerance deciding whether an eigenvalue (or its real part)
/// counts as zero during classification.
const EIGEN_REL_TOL: f64 = 1e-9;
/// Relative floor under which a coefficient is treated as structurally zero
/// when choosing the elimination route.
const STRUCT_TOL: f64 = 1e-13;
/// Relative trim level for resultant coefficients; the elimination of two
/// quadrics cannot exceed degree four, so anything above that is rounding
/// debris from the cofactor expansion.
const RESULTANT_TRIM: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("model coefficients must be finite")]
    NonFiniteCoefficients,
    #[error("the two nullclines share a component: infinitely many critical points")]
    SharedComponent,
    #[error("resultant is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditionedResultant { cond: f64 },
    #[error("standard deviations must be positive")]
    InvalidSigma,
}

/// Local behavior near a real critical point, decided by the Jacobian
/// eigenvalues: strict sign patterns give nodes and saddles, complex pairs
/// give spirals, and anything with a zero (eigenvalue or real part) is
/// reported as degenerate rather than forced into a generic class.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum StabilityClass {
    StableNode,
    UnstableNode,
    Saddle,
    StableSpiral,
    UnstableSpiral,
    Degenerate,
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            StabilityClass::StableNode => "stable node",
            StabilityClass::UnstableNode => "unstable node",
            StabilityClass::Saddle => "saddle",
            StabilityClass::StableSpiral => "stable spiral",
            StabilityClass::UnstableSpiral => "unstable spiral",
            StabilityClass::Degenerate => "degenerate",
        };
        f.write_str(name)
    }
}

/// One root of `P = Q = 0`, possibly complex.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CriticalPoint {
    /// Coordinates in standardized units.
    pub z: [Complex64; 2],
    /// True when both imaginary parts are below tolerance; only real points
    /// carry a stability class and physical coordinates.
    pub is_real: bool,
    /// Jacobian eigenvalues at the point (evaluated over the complex field
    /// for non-real points).
    pub eigenvalues: [Complex64; 2],
    pub class: Option<StabilityClass>,
    /// `mu + z * sigma` per species, present for real points.
    pub physical: Option<[f64; 2]>,
    /// `max(|P(z)|, |Q(z)|)` after polishing.
    pub residual: f64,
}

/// Full critical-point inventory of one model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StabilityReport {
    /// Points sorted by coordinates (real parts first), deduplicated.
    pub points: Vec<CriticalPoint>,
    /// Root count of the eliminating polynomial, with multiplicity, capped
    /// at the theoretical maximum of four.
    pub multiplicity_total: usize,
    /// Class histogram over the real points.
    pub counts: BTreeMap<StabilityClass, usize>,
}

/// Map a standardized point to physical units, componentwise `mu + z * sigma`.
pub fn destandardize(z: [f64; 2], norm_params: [(f64, f64); 2]) -> [f64; 2] {
    assert!(
        norm_params.iter().all(|&(_, s)| s > 0.0),
        "standard deviations must be positive"
    );
    [
        norm_params[0].0 + z[0] * norm_params[0].1,
        norm_params[1].0 + z[1] * norm_params[1].1,
    ]
}

/// Inverse of [`destandardize`]: componentwise `(y - mu) / sigma`.
pub fn standardize_point(y: [f64; 2], norm_params: [(f64, f64); 2]) -> [f64; 2] {
    assert!(
        norm_params.iter().all(|&(_, s)| s > 0.0),
        "standard deviations must be positive"
    );
    [
        (y[0] - norm_params[0].0) / norm_params[0].1,
        (y[1] - norm_params[1].0) / norm_params[1].1,
    ]
}

/// Rewrite the model in physical coordinates.
///
/// With `y_i = mu_i + sigma_i z_i` the physical field is
/// `dy_i/dt = sigma_i P_i((y1-mu1)/sigma1, (y2-mu2)/sigma2)`; expanding that
/// substitution gives the returned coefficients. The result carries identity
/// normalization parameters. Critical points map through [`destandardize`]
/// and keep their stability class (the Jacobians are related by a diagonal
/// similarity transform).
pub fn destandardize_model(model: &QuadraticModel) -> Result<QuadraticModel, StabilityError> {
    let params = model.norm_params;
    if params
        .iter()
        .any(|&(m, s)| !(s > 0.0) || !m.is_finite() || !s.is_finite())
    {
        return Err(StabilityError::InvalidSigma);
    }
    let [(m1, s1), (m2, s2)] = params;
    let mut coeffs = [[0.0; 6]; 2];
    for (i, b) in model.coeffs.iter().enumerate() {
        let si = [s1, s2][i];
        let c = [
            b[0] - b[1] * m1 / s1 - b[2] * m2 / s2
                + b[3] * m1 * m1 / (s1 * s1)
                + b[4] * m1 * m2 / (s1 * s2)
                + b[5] * m2 * m2 / (s2 * s2),
            b[1] / s1 - 2.0 * b[3] * m1 / (s1 * s1) - b[4] * m2 / (s1 * s2),
            b[2] / s2 - 2.0 * b[5] * m2 / (s2 * s2) - b[4] * m1 / (s1 * s2),
            b[3] / (s1 * s1),
            b[4] / (s1 * s2),
            b[5] / (s2 * s2),
        ];
        for (slot, cj) in coeffs[i].iter_mut().zip(c) {
            *slot = cj * si;
        }
    }
    Ok(QuadraticModel::new(coeffs, [(0.0, 1.0), (0.0, 1.0)]))
}

/// Inverse of [`destandardize_model`]: rewrite a physical-coordinate model
/// (identity normalization) in the standardized coordinates defined by
/// `norm_params`, which the result then carries.
pub fn standardize_model(
    model: &QuadraticModel,
    norm_params: [(f64, f64); 2],
) -> Result<QuadraticModel, StabilityError> {
    if norm_params
        .iter()
        .any(|&(m, s)| !(s > 0.0) || !m.is_finite() || !s.is_finite())
    {
        return Err(StabilityError::InvalidSigma);
    }
    let [(m1, s1), (m2, s2)] = norm_params;
    let mut coeffs = [[0.0; 6]; 2];
    for (i, b) in model.coeffs.iter().enumerate() {
        let si = [s1, s2][i];
        let e = [
            b[0] + b[1] * m1 + b[2] * m2 + b[3] * m1 * m1 + b[4] * m1 * m2 + b[5] * m2 * m2,
            (b[1] + 2.0 * b[3] * m1 + b[4] * m2) * s1,
            (b[2] + 2.0 * b[5] * m2 + b[4] * m1) * s2,
            b[3] * s1 * s1,
            b[4] * s1 * s2,
            b[5] * s2 * s2,
        ];
        for (slot, ej) in coeffs[i].iter_mut().zip(e) {
            *slot = ej / si;
        }
    }
    Ok(QuadraticModel::new(coeffs, norm_params))
}

/// Eigenvalues of a real 2x2 matrix from the trace/determinant closed form.
/// Real pairs are ordered descending; complex pairs put the positive
/// imaginary part first.
pub fn eigenvalues_2x2(j: &Matrix2<f64>) -> [Complex64; 2] {
    let tr = j[(0, 0)] + j[(1, 1)];
    let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        [
            Complex64::new((tr + sq) / 2.0, 0.0),
            Complex64::new((tr - sq) / 2.0, 0.0),
        ]
    } else {
        let sq = (-disc).sqrt();
        [
            Complex64::new(tr / 2.0, sq / 2.0),
            Complex64::new(tr / 2.0, -sq / 2.0),
        ]
    }
}

/// Classify a pair of Jacobian eigenvalues.
///
/// Strictly signed real pairs (repeated ones included) are nodes or saddles;
/// complex pairs with nonzero real part are spirals; a zero eigenvalue or a
/// zero real part (relative tolerance 1e-9) is degenerate.
pub fn classify_eigenvalues(eigenvalues: [Complex64; 2]) -> StabilityClass {
    let scale = eigenvalues[0].norm().max(eigenvalues[1].norm());
    if scale == 0.0 {
        return StabilityClass::Degenerate;
    }
    let tol = EIGEN_REL_TOL * scale;
    if eigenvalues[0].im.abs() > tol || eigenvalues[1].im.abs() > tol {
        let a = eigenvalues[0].re;
        if a.abs() <= tol {
            StabilityClass::Degenerate
        } else if a < 0.0 {
            StabilityClass::StableSpiral
        } else {
            StabilityClass::UnstableSpiral
        }
    } else {
        let (l1, l2) = (eigenvalues[0].re, eigenvalues[1].re);
        if l1.abs() <= tol || l2.abs() <= tol {
            StabilityClass::Degenerate
        } else if l1 > 0.0 && l2 > 0.0 {
            StabilityClass::UnstableNode
        } else if l1 < 0.0 && l2 < 0.0 {
            StabilityClass::StableNode
        } else {
            StabilityClass::Saddle
        }
    }
}

/// Stability class and Jacobian eigenvalues at a real point `z`.
pub fn classify_point(model: &QuadraticModel, z: [f64; 2]) -> (StabilityClass, [Complex64; 2]) {
    let jac = model.evaluate_jacobian(&Vector2::new(z[0], z[1]));
    let eigenvalues = eigenvalues_2x2(&jac);
    (classify_eigenvalues(eigenvalues), eigenvalues)
}

/// Field value `(P, Q)` at a complex point.
fn eval_pq(model: &QuadraticModel, z: [Complex64; 2]) -> [Complex64; 2] {
    let (z1, z2) = (z[0], z[1]);
    let row = |b: &[f64; 6]| {
        b[0] + b[1] * z1 + b[2] * z2 + b[3] * z1 * z1 + b[4] * z1 * z2 + b[5] * z2 * z2
    };
    [row(&model.coeffs[0]), row(&model.coeffs[1])]
}

/// Jacobian of the field over the complex plane.
fn complex_jacobian(model: &QuadraticModel, z: [Complex64; 2]) -> [[Complex64; 2]; 2] {
    let (z1, z2) = (z[0], z[1]);
    let row = |b: &[f64; 6]| {
        [
            b[1] + 2.0 * b[3] * z1 + b[4] * z2,
            b[2] + b[4] * z1 + 2.0 * b[5] * z2,
        ]
    };
    [row(&model.coeffs[0]), row(&model.coeffs[1])]
}

/// Eigenvalues of the complex Jacobian via trace/determinant, ordered by
/// descending real part then imaginary part.
fn complex_eigenvalues(j: &[[Complex64; 2]; 2]) -> [Complex64; 2] {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let sq = (tr * tr - 4.0 * det).sqrt();
    let (a, b) = ((tr + sq) / 2.0, (tr - sq) / 2.0);
    if (a.re, a.im) >= (b.re, b.im) {
        [a, b]
    } else {
        [b, a]
    }
}

fn residual(model: &QuadraticModel, z: [Complex64; 2]) -> f64 {
    let [p, q] = eval_pq(model, z);
    p.norm().max(q.norm())
}

/// Newton-polish a candidate root of `P = Q = 0` in complex arithmetic,
/// returning the best iterate and its residual.
fn polish(model: &QuadraticModel, start: [Complex64; 2]) -> ([Complex64; 2], f64) {
    let mut z = start;
    let (mut best, mut best_res) = (z, residual(model, z));
    for _ in 0..60 {
        if best_res <= 1e-14 {
            break;
        }
        let [p, q] = eval_pq(model, z);
        let j = complex_jacobian(model, z);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let jac_scale = j.iter().flatten().fold(0.0f64, |m, e| m.max(e.norm()));
        if det.norm() <= 1e-14 * jac_scale * jac_scale {
            break;
        }
        z = [
            z[0] - (p * j[1][1] - q * j[0][1]) / det,
            z[1] - (q * j[0][0] - p * j[1][0]) / det,
        ];
        if !z.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            break;
        }
        let res = residual(model, z);
        if res < best_res {
            best = z;
            best_res = res;
        } else if res > 10.0 * best_res + 1e-12 {
            break;
        }
    }
    (best, best_res)
}

/// Real-arithmetic Newton polish used to land exactly on the real slice.
fn polish_real(model: &QuadraticModel, start: [f64; 2]) -> ([f64; 2], f64) {
    let mut y = Vector2::new(start[0], start[1]);
    let res_at = |v: &Vector2<f64>| {
        let f = model.evaluate_rhs(v);
        f[0].abs().max(f[1].abs())
    };
    let (mut best, mut best_res) = (y, res_at(&y));
    for _ in 0..60 {
        if best_res <= 1e-14 {
            break;
        }
        let f = model.evaluate_rhs(&y);
        let j = model.evaluate_jacobian(&y);
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        let jac_scale = j.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        if det.abs() <= 1e-14 * jac_scale * jac_scale {
            break;
        }
        y = Vector2::new(
            y[0] - (f[0] * j[(1, 1)] - f[1] * j[(0, 1)]) / det,
            y[1] - (f[1] * j[(0, 0)] - f[0] * j[(1, 0)]) / det,
        );
        if !y[0].is_finite() || !y[1].is_finite() {
            break;
        }
        let res = res_at(&y);
        if res < best_res {
            best = y;
            best_res = res;
        } else if res > 10.0 * best_res + 1e-12 {
            break;
        }
    }
    ([best[0], best[1]], best_res)
}

/// Coefficient polynomials in `y1` of one equation viewed as a polynomial
/// in `y2`: `P = c[0](y1) + c[1](y1) y2 + c[2] y2^2`, trimmed against the
/// equation's own scale.
fn y2_profile(b: &[f64; 6], scale: f64) -> [Vec<f64>; 3] {
    [
        poly::trim(vec![b[0], b[1], b[3]], scale, STRUCT_TOL),
        poly::trim(vec![b[2], b[4]], scale, STRUCT_TOL),
        poly::trim(vec![b[5]], scale, STRUCT_TOL),
    ]
}

fn y2_degree(profile: &[Vec<f64>; 3]) -> usize {
    if !profile[2].is_empty() {
        2
    } else if !profile[1].is_empty() {
        1
    } else {
        0
    }
}

/// `P(y1*, .)` as a complex-coefficient polynomial in `y2` (length 3).
fn substitute_y1(profile: &[Vec<f64>; 3], y1: Complex64) -> [Complex64; 3] {
    [
        poly::eval_complex(&profile[0], y1),
        poly::eval_complex(&profile[1], y1),
        poly::eval_complex(&profile[2], y1),
    ]
}

/// Sylvester matrix (in `y2`) of the two profiles; entries are polynomials
/// in `y1`.
fn sylvester(p: &[Vec<f64>; 3], dp: usize, q: &[Vec<f64>; 3], dq: usize) -> Vec<Vec<Vec<f64>>> {
    let n = dp + dq;
    let mut m = vec![vec![Vec::new(); n]; n];
    for i in 0..dq {
        for k in 0..=dp {
            m[i][i + k] = p[dp - k].clone();
        }
    }
    for i in 0..dp {
        for k in 0..=dq {
            m[dq + i][i + k] = q[dq - k].clone();
        }
    }
    m
}

/// All critical points of the model, with classification of the real ones.
pub fn critical_points(model: &QuadraticModel) -> Result<StabilityReport, StabilityError> {
    if model.coeffs.iter().flatten().any(|c| !c.is_finite()) {
        return Err(StabilityError::NonFiniteCoefficients);
    }
    let scale_p = poly::max_abs(&model.coeffs[0]);
    let scale_q = poly::max_abs(&model.coeffs[1]);
    if scale_p == 0.0 || scale_q == 0.0 {
        // An identically zero equation makes the other nullcline a curve of
        // critical points.
        return Err(StabilityError::SharedComponent);
    }

    let p = y2_profile(&model.coeffs[0], scale_p);
    let q = y2_profile(&model.coeffs[1], scale_q);
    let (dp, dq) = (y2_degree(&p), y2_degree(&q));

    // Candidate (y1, y2) seeds for Newton polishing, plus the multiplicity
    // implied by the eliminating polynomial.
    let mut seeds: Vec<[Complex64; 2]> = Vec::new();
    let multiplicity_total;

    if dp == 0 && dq == 0 {
        // Neither equation involves y2: zero sets are unions of vertical
        // lines, so any shared root of the univariate parts means a shared
        // line, and disjoint roots mean no critical points at all.
        let common = poly::roots(&p[0])
            .into_iter()
            .any(|r| poly::eval_complex(&q[0], r).norm() <= POINT_TOL * scale_q.max(1.0));
        return if common {
            Err(StabilityError::SharedComponent)
        } else {
            Ok(StabilityReport {
                points: Vec::new(),
                multiplicity_total: 0,
                counts: BTreeMap::new(),
            })
        };
    } else if dp == 0 || dq == 0 {
        // One equation is univariate in y1: its roots fix y1 and the other
        // equation supplies y2 directly, with no resultant needed.
        let (uni, other, other_scale, other_deg) = if dp == 0 {
            (&p[0], &q, scale_q, dq)
        } else {
            (&q[0], &p, scale_p, dp)
        };
        for y1 in poly::roots(uni) {
            let coeffs = substitute_y1(other, y1);
            let floor = 1e-10 * other_scale * (1.0 + y1.norm()).powi(2);
            let ys = poly::complex_quadratic_roots(&coeffs, floor);
            if ys.is_empty() && coeffs.iter().all(|c| c.norm() <= floor) {
                // The second equation vanishes identically on this line.
                return Err(StabilityError::SharedComponent);
            }
            seeds.extend(ys.into_iter().map(|y2| [y1, y2]));
        }
        multiplicity_total = (poly::degree(uni) * other_deg).min(4);
    } else {
        // General case: eliminate y2 through the Sylvester resultant.
        let matrix = sylvester(&p, dp, &q, dq);
        let det = poly::poly_det(&matrix);
        let det_scale = scale_p.powi(dq as i32) * scale_q.powi(dp as i32);
        if poly::max_abs(&det) <= RESULTANT_TRIM * det_scale {
            return Err(StabilityError::SharedComponent);
        }
        let trim_scale = det_scale.max(poly::max_abs(&det));
        let mut resultant = poly::trim(det, trim_scale, RESULTANT_TRIM);
        // Degree five and up is cofactor-expansion debris: the resultant of
        // two conics is capped at degree four.
        resultant.truncate(5);
        let resultant = poly::trim(resultant, 1.0, 0.0);
        let lead = resultant.last().copied().unwrap_or(0.0).abs();
        let cond = poly::max_abs(&resultant) / lead.max(f64::MIN_POSITIVE);
        if resultant.len() > 1 && cond > 1e12 {
            return Err(StabilityError::IllConditionedResultant { cond });
        }
        multiplicity_total = poly::degree(&resultant).min(4);
        for y1 in poly::roots(&resultant) {
            for (profile, scale) in [(&p, scale_p), (&q, scale_q)] {
                let coeffs = substitute_y1(profile, y1);
                let floor = 1e-10 * scale * (1.0 + y1.norm()).powi(2);
                seeds.extend(
                    poly::complex_quadratic_roots(&coeffs, floor)
                        .into_iter()
                        .map(|y2| [y1, y2]),
                );
            }
        }
    }

    // Polish every seed, keep convergent ones, deduplicate, classify.
    let accept_scale = scale_p.max(scale_q);
    let mut polished: Vec<([Complex64; 2], f64)> = Vec::new();
    for seed in seeds {
        let (mut z, mut res) = polish(model, seed);
        let near_real = z.iter().all(|c| c.im.abs() <= POINT_TOL);
        if near_real {
            let (y, res_real) = polish_real(model, [z[0].re, z[1].re]);
            if res_real <= res.max(POINT_TOL) {
                z = [Complex64::new(y[0], 0.0), Complex64::new(y[1], 0.0)];
                res = res_real;
            }
        }
        let allowed =
            POINT_TOL * (1.0 + z[0].norm().max(z[1].norm())).powi(2) * accept_scale.max(1.0);
        if res <= allowed {
            polished.push((z, res));
        }
    }
    polished.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut kept: Vec<([Complex64; 2], f64)> = Vec::new();
    for (z, res) in polished {
        let dup = kept
            .iter()
            .any(|(w, _)| (z[0] - w[0]).norm() <= POINT_TOL && (z[1] - w[1]).norm() <= POINT_TOL);
        if !dup {
            kept.push((z, res));
        }
    }
    kept.sort_by(|(a, _), (b, _)| {
        (a[0].re, a[1].re, a[0].im, a[1].im)
            .partial_cmp(&(b[0].re, b[1].re, b[0].im, b[1].im))
            .unwrap()
    });

    let sigmas_ok = model.norm_params.iter().all(|&(_, s)| s > 0.0);
    let mut points = Vec::with_capacity(kept.len());
    let mut counts: BTreeMap<StabilityClass, usize> = BTreeMap::new();
    for (z, res) in kept {
        let is_real = z[0].im.abs() <= POINT_TOL && z[1].im.abs() <= POINT_TOL;
        let (class, eigenvalues, physical) = if is_real {
            let y = [z[0].re, z[1].re];
            let (class, eig) = classify_point(model, y);
            *counts.entry(class).or_insert(0) += 1;
            let phys = sigmas_ok.then(|| destandardize(y, model.norm_params));
            (Some(class), eig, phys)
        } else {
            (None, complex_eigenvalues(&complex_jacobian(model, z)), None)
        };
        points.push(CriticalPoint {
            z,
            is_real,
            eigenvalues,
            class,
            physical,
            residual: res,
        });
    }

    Ok(StabilityReport {
        points,
        multiplicity_total,
        counts,
    })
}
