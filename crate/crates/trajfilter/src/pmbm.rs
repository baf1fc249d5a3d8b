//! Poisson multi-Bernoulli mixture filter over trajectories.
//!
//! Targets never yet detected live in a Poisson intensity over single
//! current states; each detected target is a track holding a tree of local
//! hypotheses with Bernoulli trajectory densities. Every measurement starts
//! a candidate track whose two leaves ("not a target" / "new target") keep
//! the global weight algebra product-form, which is what lets the window
//! association problem be written per track.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hypothesis::{spawn_scan_children, LocalHypothesis, Track};
use crate::models::{
    ellipsoidal_gate, kalman_predict, kalman_update, BirthKind, BirthModel, GaussianState,
    MeasurementModel, MotionModel, STATE_DIM,
};
use crate::trajectory::{BernoulliTrajectory, TrajectoryGaussian, TrajectoryMixture, Variant};

/// Poisson components below this weight are dropped.
pub const POISSON_PRUNE_WEIGHT: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct PoissonComponent {
    /// Intensity mass, >= 0; not a probability.
    pub weight: f64,
    /// Scan at which this component entered the intensity.
    pub birth_time: u32,
    /// Single current state.
    pub state: GaussianState,
}

/// Intensity of targets that exist but have never been detected.
#[derive(Clone, Debug, Default)]
pub struct PoissonIntensity {
    pub components: Vec<PoissonComponent>,
}

impl PoissonIntensity {
    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Survival-scaled prediction plus fresh birth components at scan `k`.
    pub fn predict(&mut self, motion: &MotionModel, birth: &BirthModel, k: u32) -> Result<()> {
        for c in &mut self.components {
            c.weight *= motion.ps;
            c.state = kalman_predict(&c.state, motion)?;
        }
        for b in &birth.components {
            self.components.push(PoissonComponent {
                weight: b.weight,
                birth_time: k,
                state: b.state.clone(),
            });
        }
        self.prune();
        Ok(())
    }

    /// Misdetection thinning.
    pub fn thin(&mut self, pd: f64) {
        for c in &mut self.components {
            c.weight *= 1.0 - pd;
        }
        self.prune();
    }

    fn prune(&mut self) {
        self.components.retain(|c| c.weight >= POISSON_PRUNE_WEIGHT);
    }
}

#[derive(Clone, Debug, Default)]
pub struct PmbmPosterior {
    pub undetected: PoissonIntensity,
    pub tracks: Vec<Track>,
    pub globals: Vec<crate::hypothesis::GlobalHypothesis>,
    next_track_id: u32,
}

impl PmbmPosterior {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc_track_id(&mut self) -> u32 {
        let id = self.next_track_id;
        self.next_track_id += 1;
        id
    }
}

/// Prediction to scan `k`: Poisson survival + birth, every Bernoulli leaf
/// predicted per the chosen trajectory-set variant. Weights and globals are
/// untouched.
pub fn pmbm_predict(
    p: &mut PmbmPosterior,
    motion: &MotionModel,
    birth: &BirthModel,
    variant: Variant,
    k: u32,
) -> Result<()> {
    if birth.kind != BirthKind::Poisson {
        return Err(Error::ModelMismatch(
            "this filter takes Poisson birth, not multi-Bernoulli".into(),
        ));
    }
    p.undetected.predict(motion, birth, k)?;
    for track in &mut p.tracks {
        for hyp in &mut track.hyps {
            if let Some(bern) = &mut hyp.bern {
                *bern = match variant {
                    Variant::Current => bern.predict_current(motion),
                    Variant::All => bern.predict_all(motion, k),
                };
            }
        }
    }
    Ok(())
}

/// Backward means for scans `beta .. eps` of a track first seen at `eps`
/// with current mean `mean`, reconstructed by inverting the motion map.
/// Oldest first; used to give measurement-born tracks a full-length history.
fn backcast_means(
    mean: &DVector<f64>,
    motion: &MotionModel,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    let f_inv = motion
        .f
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("motion matrix is singular".into()))?;
    let mut out = Vec::with_capacity(steps);
    let mut x = mean.clone();
    for _ in 0..steps {
        x = &f_inv * x;
        out.push(x.clone());
    }
    out.reverse();
    Ok(out)
}

/// Builds the two-leaf candidate track for measurement `j` of scan `k`.
fn new_track_for_measurement(
    p: &mut PmbmPosterior,
    meas: &MeasurementModel,
    motion: &MotionModel,
    z: &DVector<f64>,
    k: u32,
    j: u32,
    gate: bool,
) -> Result<Track> {
    // posterior terms from gated undetected components
    let mut post_w = Vec::new();
    let mut post_state = Vec::new();
    let mut post_birth = Vec::new();
    for c in &p.undetected.components {
        if gate && !ellipsoidal_gate(&c.state, meas, z)? {
            continue;
        }
        let (upd, log_lik) = kalman_update(&c.state, meas, z)?;
        post_w.push(c.weight * log_lik.exp());
        post_state.push(upd);
        post_birth.push(c.birth_time);
    }
    let e: f64 = meas.pd * post_w.iter().sum::<f64>();

    let (r, beta, state) = if e > 0.0 {
        let total: f64 = post_w.iter().sum();
        let alphas: Vec<f64> = post_w.iter().map(|w| w / total).collect();
        let mut mean = DVector::zeros(STATE_DIM);
        for (a, s) in alphas.iter().zip(&post_state) {
            mean += *a * &s.mean;
        }
        let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for (a, s) in alphas.iter().zip(&post_state) {
            let d = &s.mean - &mean;
            cov += *a * (&s.cov + &d * d.transpose());
        }
        let best = alphas
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        (
            e / (meas.clutter_density() + e),
            post_birth[best],
            GaussianState::new(mean, cov),
        )
    } else {
        // nothing gated: a zero-existence placeholder anchored to the
        // measurement, so downstream linear algebra stays well-posed
        let mut mean = DVector::zeros(STATE_DIM);
        let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for d in 0..2 {
            mean[2 * d] = z[d];
            cov[(2 * d, 2 * d)] = meas.r[(d, d)];
            cov[(2 * d + 1, 2 * d + 1)] = 100.0;
        }
        (0.0, k, GaussianState::new(mean, cov))
    };

    // single-state joint at scan k; earlier scans get backcast frozen means
    let frozen = backcast_means(&state.mean, motion, (k - beta) as usize)?;
    let traj = TrajectoryGaussian {
        beta,
        eps: k,
        frozen,
        joint: state,
    };
    let bern = BernoulliTrajectory::new(r, TrajectoryMixture::single(traj));

    let mut track = Track::new(p.alloc_track_id(), k);
    let miss_id = track.alloc_id();
    track
        .hyps
        .push(LocalHypothesis::root(miss_id, 0.0, None));
    let claim_id = track.alloc_id();
    // weight (clutter + e) over the per-measurement clutter normalizer
    let log_w = (meas.clutter_density() + e).ln() - meas.log_clutter_norm();
    let mut claimed = LocalHypothesis::root(claim_id, log_w, Some(bern));
    claimed.assoc.push((k, j));
    track.hyps.push(claimed);
    Ok(track)
}

/// Measurement update at scan `k`: existing leaves branch over misdetection
/// and gated detections, each measurement seeds a candidate track, and the
/// undetected intensity is thinned.
pub fn pmbm_update(
    p: &mut PmbmPosterior,
    meas: &MeasurementModel,
    motion: &MotionModel,
    zs: &[DVector<f64>],
    k: u32,
    gate: bool,
) -> Result<()> {
    for track in &mut p.tracks {
        spawn_scan_children(track, meas, zs, k, gate)?;
    }
    for (j, z) in zs.iter().enumerate() {
        let track = new_track_for_measurement(p, meas, motion, z, k, j as u32, gate)?;
        p.tracks.push(track);
    }
    p.undetected.thin(meas.pd);
    Ok(())
}
