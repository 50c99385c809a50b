//! Fitted planar quadratic systems: evaluation, integration, and the
//! rank-ordered selection loop that discards dynamically infeasible fits.
//!
//! A fitted model frequently looks excellent in-sample yet blows up in
//! finite time when integrated; the selection loop walks the per-species
//! rankings in lockstep until it finds a pair whose joint system can be
//! integrated across the window with all derivatives under the guard.

pub mod solver;

use crate::regression::ModelRanking;
use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use std::path::Path;
use thiserror::Error;

pub use solver::{integrate_system, DenseTrajectory, OdeSystem};

/// Tolerances, derivative guard, and step budget for the integrator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Abort threshold on any |dy_i/dt| at accepted states (standardized
    /// units per hour). Far above any physical value so only genuine
    /// blow-ups trip it.
    pub epsilon_guard: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-6,
            atol: 1e-9,
            epsilon_guard: 1e6,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(OdeError::InvalidConfig("tolerances must be positive"));
        }
        if !(self.epsilon_guard > 0.0) {
            return Err(OdeError::InvalidConfig("derivative guard must be positive"));
        }
        if self.max_steps == 0 {
            return Err(OdeError::InvalidConfig("step budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("derivative magnitude exceeded the guard at t={t} (component {component})")]
    DerivativeBlowup { t: f64, component: usize },
    #[error("step budget exhausted at t={t}")]
    StepLimitExceeded { t: f64 },
    #[error("Newton iteration diverged at t={t} with no usable step size")]
    NewtonDivergence { t: f64 },
    #[error("invalid time span: t0={t0}, tf={tf}")]
    InvalidSpan { t0: f64, tf: f64 },
    #[error("non-finite initial state")]
    NonFiniteInitial,
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("every ranked model combination failed to integrate ({attempts} pairs tried)")]
    AllModelsInfeasible { attempts: usize },
    #[error("model ranking contains no feasible fits")]
    EmptyRanking,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Planar quadratic vector field in standardized coordinates:
/// `dy_i/dt = b_i0 + b_i1 y1 + b_i2 y2 + b_i3 y1^2 + b_i4 y1 y2 + b_i5 y2^2`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadraticModel {
    /// Row i holds the six coefficients of species i in canonical order.
    pub coeffs: [[f64; 6]; 2],
    /// Per-species `(mu, sigma)` from standardization, kept so states and
    /// critical points can be mapped back to concentration units.
    pub norm_params: [(f64, f64); 2],
}

impl QuadraticModel {
    pub fn new(coeffs: [[f64; 6]; 2], norm_params: [(f64, f64); 2]) -> Self {
        QuadraticModel {
            coeffs,
            norm_params,
        }
    }

    /// Assemble a model from one fitted coefficient row per species.
    pub fn from_betas(beta1: [f64; 6], beta2: [f64; 6], norm_params: [(f64, f64); 2]) -> Self {
        QuadraticModel {
            coeffs: [beta1, beta2],
            norm_params,
        }
    }

    /// Vector field value at `y`.
    pub fn evaluate_rhs(&self, y: &Vector2<f64>) -> Vector2<f64> {
        let (y1, y2) = (y[0], y[1]);
        Vector2::from_fn(|i, _| {
            let b = &self.coeffs[i];
            b[0] + b[1] * y1 + b[2] * y2 + b[3] * y1 * y1 + b[4] * y1 * y2 + b[5] * y2 * y2
        })
    }

    /// Exact Jacobian of [`Self::evaluate_rhs`] at `y`.
    pub fn evaluate_jacobian(&self, y: &Vector2<f64>) -> Matrix2<f64> {
        let (y1, y2) = (y[0], y[1]);
        let row = |b: &[f64; 6]| {
            (
                b[1] + 2.0 * b[3] * y1 + b[4] * y2,
                b[2] + b[4] * y1 + 2.0 * b[5] * y2,
            )
        };
        let (j11, j12) = row(&self.coeffs[0]);
        let (j21, j22) = row(&self.coeffs[1]);
        Matrix2::new(j11, j12, j21, j22)
    }
}

impl OdeSystem<2> for QuadraticModel {
    fn rhs(&self, _t: f64, y: &SVector<f64, 2>) -> SVector<f64, 2> {
        self.evaluate_rhs(y)
    }

    fn jacobian(&self, _t: f64, y: &SVector<f64, 2>) -> SMatrix<f64, 2, 2> {
        self.evaluate_jacobian(y)
    }
}

/// Dense planar trajectory in standardized coordinates.
pub type Trajectory = DenseTrajectory<2>;

/// Integrate a quadratic model over `t_span` (hours).
pub fn integrate(
    model: &QuadraticModel,
    y0: Vector2<f64>,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    integrate_system(model, y0, t_span, cfg)
}

/// Export a planar trajectory as `time,y1,y2` rows.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<(), OdeError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["time", "y1", "y2"])?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        wtr.write_record([t.to_string(), s[0].to_string(), s[1].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Outcome of the ranked selection loop: the joint model, the 1-based rank
/// each species' fit had in its ranking, and the integrated trajectory.
#[derive(Debug, Clone)]
pub struct SelectedModel {
    pub model: QuadraticModel,
    pub ranks: [usize; 2],
    pub trajectory: Trajectory,
}

/// Walk both rankings in lockstep until a jointly integrable pair is found.
///
/// Counters start at rank 1 for both species; any integration failure —
/// derivative blow-up, Newton divergence, or step-budget exhaustion —
/// advances *both* counters, so the species are always paired at equal
/// rank. Infeasible (rank-deficient) fits sit at the tail of each ranking
/// and end the walk.
pub fn select_feasible_model(
    rankings: &[ModelRanking; 2],
    norm_params: [(f64, f64); 2],
    y0: Vector2<f64>,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<SelectedModel, OdeError> {
    let usable: [usize; 2] =
        [0, 1].map(|i| rankings[i].fits.iter().take_while(|rf| rf.feasible).count());
    if usable[0] == 0 || usable[1] == 0 {
        return Err(OdeError::EmptyRanking);
    }
    let mut rank = 1usize;
    let mut attempts = 0usize;
    while rank <= usable[0] && rank <= usable[1] {
        let model = QuadraticModel::from_betas(
            rankings[0].fits[rank - 1].fit.beta,
            rankings[1].fits[rank - 1].fit.beta,
            norm_params,
        );
        attempts += 1;
        match integrate(&model, y0, t_span, cfg) {
            Ok(trajectory) => {
                return Ok(SelectedModel {
                    model,
                    ranks: [rank, rank],
                    trajectory,
                })
            }
            Err(
                OdeError::DerivativeBlowup { .. }
                | OdeError::NewtonDivergence { .. }
                | OdeError::StepLimitExceeded { .. },
            ) => {
                rank += 1;
            }
            Err(other) => return Err(other),
        }
    }
    Err(OdeError::AllModelsInfeasible { attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{Criterion, RankedFit, RegressionFit, SubsetMask};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn model(c0: [f64; 6], c1: [f64; 6]) -> QuadraticModel {
        QuadraticModel::from_betas(c0, c1, [(0.0, 1.0), (0.0, 1.0)])
    }

    #[test]
    fn rhs_at_origin_is_the_intercepts() {
        let m = model(
            [-0.7561, -1.2358, -1.3949, 0.0, -1.0494, -0.6539],
            [-0.6142, 0.6275, 0.7181, 0.0, 0.2640, 0.1814],
        );
        let f = m.evaluate_rhs(&Vector2::zeros());
        assert_eq!(f[0], -0.7561);
        assert_eq!(f[1], -0.6142);
    }

    #[test]
    fn rhs_at_ones_is_the_coefficient_row_sum() {
        let m = model(
            [-0.4279, -0.7495, -0.8854, -6.3679, -12.488, -5.8383],
            [0.4317, 0.9800, 1.0719, 2.7402, 5.2943, 2.2776],
        );
        let f = m.evaluate_rhs(&Vector2::new(1.0, 1.0));
        assert_abs_diff_eq!(f[0], -26.7570, epsilon = 1e-10);
        assert_abs_diff_eq!(f[1], 12.7957, epsilon = 1e-10);
    }

    #[test]
    fn zero_model_is_inert() {
        let m = model([0.0; 6], [0.0; 6]);
        assert_eq!(m.evaluate_rhs(&Vector2::new(3.0, -2.0)), Vector2::zeros());
        assert_eq!(
            m.evaluate_jacobian(&Vector2::new(3.0, -2.0)),
            Matrix2::zeros()
        );
        let traj = integrate(
            &m,
            Vector2::new(1.5, -0.5),
            (0.0, 4.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        for s in &traj.states {
            assert_eq!(*s, Vector2::new(1.5, -0.5));
        }
    }

    #[test]
    fn linear_model_jacobian_is_constant() {
        let m = model(
            [0.0, -1.0, 0.3, 0.0, 0.0, 0.0],
            [0.0, 0.2, -2.0, 0.0, 0.0, 0.0],
        );
        let j = m.evaluate_jacobian(&Vector2::new(7.0, -4.0));
        assert_eq!(j, Matrix2::new(-1.0, 0.3, 0.2, -2.0));
        assert_eq!(j, m.evaluate_jacobian(&Vector2::zeros()));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let mut c = [[0.0; 6]; 2];
            for row in &mut c {
                for v in row.iter_mut() {
                    *v = rng.random_range(-2.0..2.0);
                }
            }
            let m = model(c[0], c[1]);
            let y = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let j = m.evaluate_jacobian(&y);
            let h = 1e-6;
            for col in 0..2 {
                let mut yp = y;
                let mut ym = y;
                yp[col] += h;
                ym[col] -= h;
                let df = (m.evaluate_rhs(&yp) - m.evaluate_rhs(&ym)) / (2.0 * h);
                for row in 0..2 {
                    assert_abs_diff_eq!(j[(row, col)], df[row], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn linear_system_matches_matrix_exponential() {
        let a = Matrix2::new(-1.0, 0.3, 0.2, -2.0);
        let m = model(
            [0.0, a[(0, 0)], a[(0, 1)], 0.0, 0.0, 0.0],
            [0.0, a[(1, 0)], a[(1, 1)], 0.0, 0.0, 0.0],
        );
        let y0 = Vector2::new(1.0, -0.5);
        let cfg = IntegratorConfig {
            rtol: 1e-8,
            atol: 1e-12,
            ..Default::default()
        };
        let traj = integrate(&m, y0, (0.0, 1.5), &cfg).unwrap();
        let oracle = (a * 1.5).exp() * y0;
        assert_abs_diff_eq!(traj.end_state()[0], oracle[0], epsilon = 1e-6);
        assert_abs_diff_eq!(traj.end_state()[1], oracle[1], epsilon = 1e-6);
    }

    #[test]
    fn tightening_tolerances_never_hurts_accuracy() {
        let a = Matrix2::new(-1.0, 0.3, 0.2, -2.0);
        let m = model(
            [0.0, a[(0, 0)], a[(0, 1)], 0.0, 0.0, 0.0],
            [0.0, a[(1, 0)], a[(1, 1)], 0.0, 0.0, 0.0],
        );
        let y0 = Vector2::new(1.0, 1.0);
        let oracle = (a * 2.0).exp() * y0;
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let cfg = IntegratorConfig {
                rtol: 1e-4 / 2.0_f64.powi(k),
                atol: 1e-7 / 2.0_f64.powi(k),
                ..Default::default()
            };
            let traj = integrate(&m, y0, (0.0, 2.0), &cfg).unwrap();
            let err = (traj.end_state() - oracle).norm();
            assert!(
                err <= prev + 1e-14,
                "error grew from {prev:e} to {err:e} at halving {k}"
            );
            prev = err;
        }
    }

    #[test]
    fn quadratic_blowup_trips_guard_before_the_pole() {
        // dy1/dt = y1^2 from y0 = 1 reaches infinity at t = 1.
        let m = model([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0; 6]);
        let err = integrate(
            &m,
            Vector2::new(1.0, 0.0),
            (0.0, 2.0),
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        match err {
            OdeError::DerivativeBlowup { t, component } => {
                assert!(t < 1.0, "guard tripped at t={t}");
                assert_eq!(component, 0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    fn ranked(beta: [f64; 6]) -> RankedFit {
        RankedFit {
            fit: RegressionFit {
                mask: SubsetMask::all(),
                beta,
                rss: 0.0,
                tss: 1.0,
                k: 5,
                m: 100,
                aic: 0.0,
                bic: 0.0,
                adj_r2: 1.0,
            },
            feasible: true,
        }
    }

    fn ranking(betas: Vec<[f64; 6]>) -> ModelRanking {
        ModelRanking {
            criterion: Criterion::Aic,
            fits: betas.into_iter().map(ranked).collect(),
        }
    }

    const BLOWUP: [f64; 6] = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    const DECAY_1: [f64; 6] = [0.0, -1.0, 0.0, 0.0, 0.0, 0.0];
    const DECAY_2: [f64; 6] = [0.0, 0.0, -1.0, 0.0, 0.0, 0.0];

    #[test]
    fn selection_returns_rank_one_when_it_integrates() {
        let rankings = [
            ranking(vec![DECAY_1, BLOWUP]),
            ranking(vec![DECAY_2, BLOWUP]),
        ];
        let sel = select_feasible_model(
            &rankings,
            [(0.0, 1.0), (0.0, 1.0)],
            Vector2::new(1.0, 1.0),
            (0.0, 4.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(sel.ranks, [1, 1]);
        assert_eq!(sel.model.coeffs, [DECAY_1, DECAY_2]);
    }

    #[test]
    fn selection_advances_both_counters_past_a_blowup() {
        let rankings = [
            ranking(vec![BLOWUP, DECAY_1]),
            ranking(vec![DECAY_2, DECAY_2]),
        ];
        let sel = select_feasible_model(
            &rankings,
            [(0.0, 1.0), (0.0, 1.0)],
            Vector2::new(1.0, 1.0),
            (0.0, 4.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(sel.ranks, [2, 2]);
        assert_eq!(sel.model.coeffs, [DECAY_1, DECAY_2]);
        assert_eq!(*sel.trajectory.times.last().unwrap(), 4.0);
    }

    #[test]
    fn selection_exhausts_when_everything_trips_the_guard() {
        let rankings = [
            ranking(vec![DECAY_1, DECAY_1]),
            ranking(vec![DECAY_2, DECAY_2]),
        ];
        let cfg = IntegratorConfig {
            epsilon_guard: 1e-12,
            ..Default::default()
        };
        let err = select_feasible_model(
            &rankings,
            [(0.0, 1.0), (0.0, 1.0)],
            Vector2::new(1.0, 1.0),
            (0.0, 4.0),
            &cfg,
        )
        .unwrap_err();
        match err {
            OdeError::AllModelsInfeasible { attempts } => assert_eq!(attempts, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn trajectory_csv_round_trips_via_reader() {
        let m = model(DECAY_1, DECAY_2);
        let traj = integrate(
            &m,
            Vector2::new(1.0, 2.0),
            (0.0, 1.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trajectory_csv(&traj, f.path()).unwrap();
        let mut rdr = csv::Reader::from_path(f.path()).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), traj.len());
        let parse = |s: &str| s.parse::<f64>().unwrap();
        assert_eq!(parse(&rows[0][0]), 0.0);
        assert_eq!(parse(&rows[0][1]), 1.0);
        let last = rows.last().unwrap();
        assert_eq!(parse(&last[0]), 1.0);
        assert_eq!(parse(&last[1]), traj.end_state()[0]);
    }
}
