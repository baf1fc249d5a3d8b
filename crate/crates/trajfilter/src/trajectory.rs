//! Trajectory densities: a joint Gaussian over the most recent states of one
//! track, mixtures of those (one component per birth-time / death-time
//! combination), and the Bernoulli wrapper carrying an existence probability.
//!
//! A trajectory spans scans `beta ..= eps`. Means of states that have left
//! the active window are frozen as-is; the joint over the remaining blocks is
//! what prediction and measurement updates act on. Conditioning the joint on
//! a new measurement re-estimates every retained block, so keeping a window
//! of `n + l` blocks is the fixed-lag smoother.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    kalman_update, GaussianState, MeasurementModel, MotionModel, STATE_DIM,
};
use crate::numeric::{self, logsumexp};

/// Weights in a mixture below this are dropped (and the rest renormalized).
pub const MIXTURE_PRUNE_WEIGHT: f64 = 1e-4;

/// Which set of trajectories the posterior describes: only those alive at
/// the current scan, or every trajectory that ever existed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Current,
    All,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryGaussian {
    /// First scan of the trajectory, >= 1.
    pub beta: u32,
    /// Last scan of the trajectory; the trajectory is alive at scan k iff
    /// `eps == k`.
    pub eps: u32,
    /// Frozen means for scans `beta .. beta + frozen.len()`.
    pub frozen: Vec<DVector<f64>>,
    /// Joint Gaussian over the remaining blocks, newest last.
    pub joint: GaussianState,
}

impl TrajectoryGaussian {
    pub fn single(beta: u32, state: GaussianState) -> Self {
        debug_assert_eq!(state.dim(), STATE_DIM);
        Self {
            beta,
            eps: beta,
            frozen: Vec::new(),
            joint: state,
        }
    }

    /// Number of scans the trajectory covers.
    pub fn len(&self) -> usize {
        (self.eps - self.beta + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn active_blocks(&self) -> usize {
        self.joint.blocks()
    }

    pub fn check(&self) -> Result<()> {
        if self.eps < self.beta {
            return Err(Error::Contract("trajectory ends before it starts".into()));
        }
        if self.frozen.len() + self.active_blocks() != self.len() {
            return Err(Error::Contract(format!(
                "trajectory spans {} scans but stores {} frozen + {} active blocks",
                self.len(),
                self.frozen.len(),
                self.active_blocks()
            )));
        }
        Ok(())
    }

    /// Marginal of the newest state.
    pub fn last_marginal(&self) -> GaussianState {
        self.joint.block_marginal(self.active_blocks() - 1)
    }

    /// All state means, frozen prefix first.
    pub fn means(&self) -> Vec<DVector<f64>> {
        let mut out = self.frozen.clone();
        for b in 0..self.active_blocks() {
            out.push(self.joint.block_mean(b));
        }
        out
    }

    /// Appends the predicted next state to the joint.
    pub fn extend(&self, motion: &MotionModel) -> Self {
        let d = self.joint.dim();
        let o = d - STATE_DIM;
        let last_mean = self.joint.mean.rows(o, STATE_DIM);
        let new_mean_block = &motion.f * last_mean;

        let mut mean = DVector::zeros(d + STATE_DIM);
        mean.rows_mut(0, d).copy_from(&self.joint.mean);
        mean.rows_mut(d, STATE_DIM).copy_from(&new_mean_block);

        // cross covariance with the new block: P[:, last] F'
        let cross = self.joint.cov.columns(o, STATE_DIM) * motion.f.transpose();
        let p_ll = self.joint.cov.view((o, o), (STATE_DIM, STATE_DIM));
        let mut tail = &motion.f * p_ll * motion.f.transpose() + &motion.q;
        numeric::symmetrize(&mut tail);

        let mut cov = DMatrix::zeros(d + STATE_DIM, d + STATE_DIM);
        cov.view_mut((0, 0), (d, d)).copy_from(&self.joint.cov);
        cov.view_mut((0, d), (d, STATE_DIM)).copy_from(&cross);
        cov.view_mut((d, 0), (STATE_DIM, d))
            .copy_from(&cross.transpose());
        cov.view_mut((d, d), (STATE_DIM, STATE_DIM)).copy_from(&tail);

        Self {
            beta: self.beta,
            eps: self.eps + 1,
            frozen: self.frozen.clone(),
            joint: GaussianState::new(mean, cov),
        }
    }

    /// Freezes the oldest block means until at most `l_cap` blocks remain.
    pub fn truncate_to(&mut self, l_cap: usize) {
        debug_assert!(l_cap >= 1);
        while self.active_blocks() > l_cap {
            self.frozen.push(self.joint.block_mean(0));
            let d = self.joint.dim();
            let mean = DVector::from(self.joint.mean.rows(STATE_DIM, d - STATE_DIM));
            let cov = DMatrix::from(
                self.joint
                    .cov
                    .view((STATE_DIM, STATE_DIM), (d - STATE_DIM, d - STATE_DIM)),
            );
            self.joint = GaussianState::new(mean, cov);
        }
    }

    /// Conditions the joint on a measurement of the newest state.
    pub fn update(&self, meas: &MeasurementModel, z: &DVector<f64>) -> Result<(Self, f64)> {
        let (joint, log_lik) = kalman_update(&self.joint, meas, z)?;
        Ok((
            Self {
                beta: self.beta,
                eps: self.eps,
                frozen: self.frozen.clone(),
                joint,
            },
            log_lik,
        ))
    }
}

/// Normalized mixture of trajectory Gaussians.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryMixture {
    pub comps: Vec<(f64, TrajectoryGaussian)>,
}

impl TrajectoryMixture {
    pub fn single(traj: TrajectoryGaussian) -> Self {
        Self {
            comps: vec![(1.0, traj)],
        }
    }

    /// Total weight of components still alive at scan `k`.
    pub fn alive_mass(&self, k: u32) -> f64 {
        self.comps
            .iter()
            .filter(|(_, t)| t.eps == k)
            .map(|(w, _)| w)
            .sum()
    }

    pub fn weight_sum(&self) -> f64 {
        self.comps.iter().map(|(w, _)| w).sum()
    }

    fn normalize(&mut self) {
        let s = self.weight_sum();
        debug_assert!(s > 0.0);
        for (w, _) in &mut self.comps {
            *w /= s;
        }
    }

    /// Drops components below `min_w`, keeping at least the heaviest one.
    pub fn prune(&mut self, min_w: f64) {
        if self.comps.len() <= 1 {
            return;
        }
        let max_w = self
            .comps
            .iter()
            .map(|(w, _)| *w)
            .fold(f64::NEG_INFINITY, f64::max);
        let keep_all_below = max_w < min_w;
        self.comps
            .retain(|(w, _)| *w >= min_w || (keep_all_below && *w == max_w));
        self.normalize();
    }

    /// Highest-weight component; ties go to the earliest.
    pub fn map_component(&self) -> &TrajectoryGaussian {
        let mut best = 0;
        for (i, (w, _)) in self.comps.iter().enumerate() {
            if *w > self.comps[best].0 {
                best = i;
            }
        }
        &self.comps[best].1
    }

    pub fn truncate_to(&mut self, l_cap: usize) {
        for (_, t) in &mut self.comps {
            t.truncate_to(l_cap);
        }
    }

    /// Extends every component; valid only when all of them are alive.
    pub fn predict_current(&self, motion: &MotionModel) -> Self {
        debug_assert!(self
            .comps
            .iter()
            .all(|(_, t)| t.eps == self.comps[0].1.eps));
        Self {
            comps: self
                .comps
                .iter()
                .map(|(w, t)| (*w, t.extend(motion)))
                .collect(),
        }
    }

    /// Splits each component alive at `k - 1` into a dead copy (weight scaled
    /// by 1 - ps) and an extended copy (scaled by ps); components that died
    /// earlier pass through. Total weight is preserved, then small components
    /// are pruned.
    pub fn predict_all(&self, motion: &MotionModel, k: u32) -> Self {
        let mut comps = Vec::with_capacity(self.comps.len() + 1);
        for (w, t) in &self.comps {
            if t.eps == k - 1 {
                let dead_w = w * (1.0 - motion.ps);
                if dead_w > 0.0 {
                    comps.push((dead_w, t.clone()));
                }
                comps.push((w * motion.ps, t.extend(motion)));
            } else {
                debug_assert!(t.eps < k - 1);
                comps.push((*w, t.clone()));
            }
        }
        let mut mix = Self { comps };
        mix.prune(MIXTURE_PRUNE_WEIGHT);
        mix
    }

    /// Measurement update of the alive components. Returns the updated
    /// mixture and `log sum_j w_j l_j`, the log mixture likelihood of `z`.
    pub fn update_detect(
        &self,
        meas: &MeasurementModel,
        z: &DVector<f64>,
        k: u32,
    ) -> Result<(Self, f64)> {
        let mut updated = Vec::new();
        let mut log_terms = Vec::new();
        for (w, t) in &self.comps {
            if t.eps != k {
                continue;
            }
            let (post, ll) = t.update(meas, z)?;
            log_terms.push(w.ln() + ll);
            updated.push(post);
        }
        if updated.is_empty() {
            return Err(Error::Contract(
                "update_detect on a mixture with no alive components".into(),
            ));
        }
        let log_mix_lik = logsumexp(&log_terms);
        let comps = log_terms
            .iter()
            .zip(updated)
            .map(|(lt, t)| ((lt - log_mix_lik).exp(), t))
            .collect();
        let mut mix = Self { comps };
        mix.prune(MIXTURE_PRUNE_WEIGHT);
        Ok((mix, log_mix_lik))
    }

    /// Misdetection update: alive components keep their shape but lose weight
    /// by the factor 1 - pd. Returns the updated mixture and the prior alive
    /// mass q.
    pub fn update_miss(&self, pd: f64, k: u32) -> (Self, f64) {
        let q = self.alive_mass(k);
        let mut comps: Vec<(f64, TrajectoryGaussian)> = self
            .comps
            .iter()
            .map(|(w, t)| {
                let w = if t.eps == k { w * (1.0 - pd) } else { *w };
                (w, t.clone())
            })
            .collect();
        comps.retain(|(w, _)| *w > 0.0);
        let mut mix = Self { comps };
        mix.normalize();
        mix.prune(MIXTURE_PRUNE_WEIGHT);
        (mix, q)
    }
}

/// Bernoulli trajectory component: exists with probability `r`, in which case
/// its density is `mix`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BernoulliTrajectory {
    pub r: f64,
    pub mix: TrajectoryMixture,
}

impl BernoulliTrajectory {
    pub fn new(r: f64, mix: TrajectoryMixture) -> Self {
        debug_assert!((0.0..=1.0).contains(&r));
        Self { r, mix }
    }

    /// Alive-trajectories prediction: survival scales existence, every
    /// component is extended.
    pub fn predict_current(&self, motion: &MotionModel) -> Self {
        Self {
            r: self.r * motion.ps,
            mix: self.mix.predict_current(motion),
        }
    }

    /// All-trajectories prediction: existence is untouched, death moves into
    /// the mixture.
    pub fn predict_all(&self, motion: &MotionModel, k: u32) -> Self {
        Self {
            r: self.r,
            mix: self.mix.predict_all(motion, k),
        }
    }

    /// Detection update. `log_norm` is the per-measurement weight normalizer
    /// (log clutter intensity when clutter is present, zero otherwise).
    /// Returns the posterior (existence certain) and the log weight delta.
    pub fn update_detect(
        &self,
        meas: &MeasurementModel,
        z: &DVector<f64>,
        k: u32,
        log_norm: f64,
    ) -> Result<(Self, f64)> {
        if self.r <= 0.0 {
            return Err(Error::Contract(
                "detection update of a Bernoulli with r = 0".into(),
            ));
        }
        let (mix, log_mix_lik) = self.mix.update_detect(meas, z, k)?;
        let delta = self.r.ln() + meas.pd.ln() + log_mix_lik - log_norm;
        Ok((Self { r: 1.0, mix }, delta))
    }

    /// Misdetection update. Returns the posterior and the log weight delta
    /// `ln(1 - r pd q)`. With r = 1 the existence stays exactly 1, which is
    /// what the 0/1-restricted filters rely on.
    pub fn update_miss(&self, meas: &MeasurementModel, k: u32) -> (Self, f64) {
        let (mix, q) = self.mix.update_miss(meas.pd, k);
        let denom = 1.0 - self.r * meas.pd * q;
        let r = if self.r == 1.0 {
            1.0
        } else {
            self.r * (1.0 - meas.pd * q) / denom
        };
        (Self { r, mix }, denom.ln())
    }

    /// True if any alive component gates the measurement.
    pub fn gates(&self, meas: &MeasurementModel, z: &DVector<f64>, k: u32) -> Result<bool> {
        for (_, t) in &self.mix.comps {
            if t.eps == k && crate::models::ellipsoidal_gate(&t.last_marginal(), meas, z)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}
