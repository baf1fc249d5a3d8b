//! State-space models and the Kalman primitives built on them.
//!
//! States are `[px, vx, py, vy]`. Joint densities over several consecutive
//! states stack those blocks, newest last; the measurement ops act on the
//! final block so the same code serves plain filtering and joint smoothing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, LN_2PI};

pub const STATE_DIM: usize = 4;
pub const MEAS_DIM: usize = 2;

/// Gaussian density with explicit mean and covariance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        debug_assert_eq!(cov.nrows(), cov.ncols());
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of stacked state blocks.
    pub fn blocks(&self) -> usize {
        self.dim() / STATE_DIM
    }

    /// Marginal over one stacked block.
    pub fn block_marginal(&self, b: usize) -> GaussianState {
        let o = b * STATE_DIM;
        GaussianState::new(
            DVector::from(self.mean.rows(o, STATE_DIM)),
            DMatrix::from(self.cov.view((o, o), (STATE_DIM, STATE_DIM))),
        )
    }

    pub fn block_mean(&self, b: usize) -> DVector<f64> {
        DVector::from(self.mean.rows(b * STATE_DIM, STATE_DIM))
    }
}

/// Nearly-constant-velocity dynamics with survival probability.
#[derive(Clone, Debug)]
pub struct MotionModel {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub ps: f64,
}

impl MotionModel {
    /// `f` and `q` are per-axis kinematic blocks tiled over x and y; `sigma2`
    /// scales the process noise.
    pub fn constant_velocity(dt: f64, sigma2: f64, ps: f64) -> Self {
        let mut f = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for axis in 0..2 {
            let o = 2 * axis;
            f[(o, o)] = 1.0;
            f[(o, o + 1)] = dt;
            f[(o + 1, o + 1)] = 1.0;
            q[(o, o)] = sigma2 * dt.powi(3) / 3.0;
            q[(o, o + 1)] = sigma2 * dt.powi(2) / 2.0;
            q[(o + 1, o)] = sigma2 * dt.powi(2) / 2.0;
            q[(o + 1, o + 1)] = sigma2 * dt;
        }
        Self { f, q, ps }
    }
}

/// Linear position measurements in clutter.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub pd: f64,
    /// Expected clutter count per scan.
    pub clutter_rate: f64,
    /// Area of the surveillance region (clutter is uniform over it).
    pub region_area: f64,
    pub gate_prob: f64,
    gate_threshold: f64,
}

impl MeasurementModel {
    pub fn position_sensor(
        r_var: f64,
        pd: f64,
        clutter_rate: f64,
        region_area: f64,
        gate_prob: f64,
    ) -> Result<Self> {
        let mut h = DMatrix::zeros(MEAS_DIM, STATE_DIM);
        h[(0, 0)] = 1.0;
        h[(1, 2)] = 1.0;
        Ok(Self {
            h,
            r: DMatrix::identity(MEAS_DIM, MEAS_DIM) * r_var,
            pd,
            clutter_rate,
            region_area,
            gate_prob,
            gate_threshold: numeric::chi2_quantile(gate_prob, MEAS_DIM)?,
        })
    }

    /// Uniform clutter intensity, clutter_rate / area.
    pub fn clutter_density(&self) -> f64 {
        if self.clutter_rate == 0.0 {
            0.0
        } else {
            self.clutter_rate / self.region_area
        }
    }

    /// Log of the per-measurement weight normalizer. Zero when the scene is
    /// clutter-free, in which case hypothesis weights stay unnormalized and
    /// the association constraints alone rule out clutter.
    pub fn log_clutter_norm(&self) -> f64 {
        let lam = self.clutter_density();
        if lam > 0.0 {
            lam.ln()
        } else {
            0.0
        }
    }

    pub fn gate_threshold(&self) -> f64 {
        self.gate_threshold
    }
}

/// One Gaussian birth site. `weight` is the expected number of new targets
/// (Poisson interpretation) or the birth existence probability (Bernoulli
/// interpretation), depending on `BirthModel::kind`.
#[derive(Clone, Debug)]
pub struct BirthComponent {
    pub weight: f64,
    pub state: GaussianState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BirthKind {
    Poisson,
    MultiBernoulli,
}

#[derive(Clone, Debug)]
pub struct BirthModel {
    pub kind: BirthKind,
    pub components: Vec<BirthComponent>,
}

impl BirthModel {
    pub fn poisson(components: Vec<BirthComponent>) -> Self {
        Self {
            kind: BirthKind::Poisson,
            components,
        }
    }

    /// Weights are existence probabilities and must lie in [0, 1].
    pub fn multi_bernoulli(components: Vec<BirthComponent>) -> Result<Self> {
        for c in &components {
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::ModelMismatch(format!(
                    "Bernoulli birth existence {} outside [0, 1]",
                    c.weight
                )));
            }
        }
        Ok(Self {
            kind: BirthKind::MultiBernoulli,
            components,
        })
    }
}

fn check_state(state: &GaussianState, what: &'static str) -> Result<()> {
    let d = state.dim();
    if d == 0 || d % STATE_DIM != 0 {
        return Err(Error::Dimension {
            what,
            expected: STATE_DIM,
            got: d,
        });
    }
    if state.cov.nrows() != d || state.cov.ncols() != d {
        return Err(Error::Dimension {
            what,
            expected: d,
            got: state.cov.nrows(),
        });
    }
    Ok(())
}

/// One-step prediction of a single state block.
pub fn kalman_predict(state: &GaussianState, motion: &MotionModel) -> Result<GaussianState> {
    if state.dim() != STATE_DIM {
        return Err(Error::Dimension {
            what: "kalman_predict state",
            expected: STATE_DIM,
            got: state.dim(),
        });
    }
    let mean = &motion.f * &state.mean;
    let mut cov = &motion.f * &state.cov * motion.f.transpose() + &motion.q;
    numeric::symmetrize(&mut cov);
    Ok(GaussianState::new(mean, cov))
}

/// Innovation moments of a measurement against the last block of `state`.
pub fn innovation(
    state: &GaussianState,
    meas: &MeasurementModel,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_state(state, "innovation state")?;
    if z.len() != MEAS_DIM {
        return Err(Error::Dimension {
            what: "measurement",
            expected: MEAS_DIM,
            got: z.len(),
        });
    }
    let last = state.blocks() - 1;
    let o = last * STATE_DIM;
    let p_ll = state.cov.view((o, o), (STATE_DIM, STATE_DIM));
    let mut s = &meas.h * p_ll * meas.h.transpose() + &meas.r;
    numeric::symmetrize(&mut s);
    let nu = z - &meas.h * state.mean.rows(o, STATE_DIM);
    Ok((nu, s))
}

/// Conditions the full joint on a measurement of its final block, Joseph form.
/// Returns the posterior and the log predictive likelihood of `z`.
pub fn kalman_update(
    state: &GaussianState,
    meas: &MeasurementModel,
    z: &DVector<f64>,
) -> Result<(GaussianState, f64)> {
    let (nu, s) = innovation(state, meas, z)?;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_lik = -0.5 * (MEAS_DIM as f64 * LN_2PI + ln_det + nu.dot(&chol.solve(&nu)));

    let d = state.dim();
    let o = d - STATE_DIM;
    // K = P H_aug' S^-1 where H_aug = [0 .. 0 H]
    let p_cols = state.cov.columns(o, STATE_DIM);
    let pht = p_cols * meas.h.transpose(); // d x MEAS_DIM
    let k = chol.solve(&pht.transpose()).transpose(); // d x MEAS_DIM

    let mean = &state.mean + &k * &nu;
    // I - K H_aug
    let mut ikh = DMatrix::identity(d, d);
    let kh = &k * &meas.h; // d x STATE_DIM, applies to the last block
    for i in 0..d {
        for j in 0..STATE_DIM {
            ikh[(i, o + j)] -= kh[(i, j)];
        }
    }
    let mut cov = &ikh * &state.cov * ikh.transpose() + &k * &meas.r * k.transpose();
    numeric::symmetrize(&mut cov);
    Ok((GaussianState::new(mean, cov), log_lik))
}

/// Squared Mahalanobis distance of `z` in the predicted measurement density.
pub fn gate_distance2(
    state: &GaussianState,
    meas: &MeasurementModel,
    z: &DVector<f64>,
) -> Result<f64> {
    let (nu, s) = innovation(state, meas, z)?;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
    Ok(nu.dot(&chol.solve(&nu)))
}

/// Ellipsoidal gate at the model's configured gate probability.
pub fn ellipsoidal_gate(
    state: &GaussianState,
    meas: &MeasurementModel,
    z: &DVector<f64>,
) -> Result<bool> {
    Ok(gate_distance2(state, meas, z)? <= meas.gate_threshold())
}
