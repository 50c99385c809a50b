//! Dense univariate polynomial helpers for the critical-point solver.
//!
//! Polynomials are coefficient vectors in ascending powers. Everything here
//! stays small: the elimination step never produces degree above four, so
//! cofactor determinants and companion matrices are cheap and exact enough.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Drop trailing (highest-power) coefficients that are negligible relative
/// to `scale`. An all-negligible polynomial trims to the empty vector.
pub(crate) fn trim(mut coeffs: Vec<f64>, scale: f64, rel_tol: f64) -> Vec<f64> {
    let floor = scale * rel_tol;
    while coeffs.last().is_some_and(|c| c.abs() <= floor) {
        coeffs.pop();
    }
    coeffs
}

/// Largest absolute coefficient (zero for the empty polynomial).
pub(crate) fn max_abs(coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

/// Degree of a trimmed polynomial; the empty/zero polynomial reports 0.
pub(crate) fn degree(coeffs: &[f64]) -> usize {
    coeffs.len().saturating_sub(1)
}

pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

pub(crate) fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, &ai) in a.iter().enumerate() {
        out[i] += ai;
    }
    for (i, &bi) in b.iter().enumerate() {
        out[i] += bi;
    }
    out
}

pub(crate) fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, &ai) in a.iter().enumerate() {
        out[i] += ai;
    }
    for (i, &bi) in b.iter().enumerate() {
        out[i] -= bi;
    }
    out
}

/// Determinant of a square matrix of polynomials by cofactor expansion
/// along the first row. Sizes here are at most 4x4.
pub(crate) fn poly_det(m: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut det: Vec<f64> = Vec::new();
    for j in 0..n {
        if m[0][j].is_empty() {
            continue;
        }
        let minor: Vec<Vec<Vec<f64>>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|&(c, _)| c != j)
                    .map(|(_, p)| p.clone())
                    .collect()
            })
            .collect();
        let term = poly_mul(&m[0][j], &poly_det(&minor));
        det = if j % 2 == 0 {
            poly_add(&det, &term)
        } else {
            poly_sub(&det, &term)
        };
    }
    det
}

/// Horner evaluation with real coefficients at a complex point.
pub(crate) fn eval_complex(coeffs: &[f64], x: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

/// All complex roots of a real polynomial (ascending coefficients, already
/// trimmed). Degrees 0 and 1 are handled directly; higher degrees go
/// through the companion-matrix eigenvalue route.
pub(crate) fn roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len();
    if n <= 1 {
        return Vec::new();
    }
    if n == 2 {
        return vec![Complex64::new(-coeffs[0] / coeffs[1], 0.0)];
    }
    let deg = n - 1;
    let lead = coeffs[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeffs[i] / lead;
    }
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Roots of a polynomial in one variable with complex coefficients of
/// degree at most two (used for back-substitution). Coefficients whose
/// magnitude is below `floor` are treated as structurally zero.
pub(crate) fn complex_quadratic_roots(c: &[Complex64; 3], floor: f64) -> Vec<Complex64> {
    let [c0, c1, c2] = *c;
    if c2.norm() > floor {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        let sq = disc.sqrt();
        vec![(-c1 + sq) / (2.0 * c2), (-c1 - sq) / (2.0 * c2)]
    } else if c1.norm() > floor {
        vec![-c0 / c1]
    } else {
        Vec::new()
    }
}
