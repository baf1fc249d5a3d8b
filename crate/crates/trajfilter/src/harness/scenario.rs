//! Ground-truth and measurement synthesis for the benchmark scenarios.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{MeasurementModel, MotionModel, STATE_DIM};
use crate::smoothing::TrajectoryEstimate;

/// Half-width of the square surveillance region.
pub const REGION_HALF: f64 = 100.0;
/// Full area of the surveillance region.
pub const REGION_AREA: f64 = (2.0 * REGION_HALF) * (2.0 * REGION_HALF);

/// Birth scans shared by both scenarios.
pub const BIRTH_TIMES: [u32; 4] = [1, 11, 21, 31];
/// Final alive scan is birth + 50, i.e. scans {51, 61, 71, 81}.
pub const LIFETIME: u32 = 50;

/// One true target: alive on scans `birth ..= death` inclusive.
#[derive(Clone, Debug)]
pub struct TruthTrajectory {
    pub birth: u32,
    pub death: u32,
    pub states: Vec<DVector<f64>>,
}

impl TruthTrajectory {
    pub fn alive_at(&self, k: u32) -> bool {
        k >= self.birth && k <= self.death
    }

    pub fn state_at(&self, k: u32) -> Option<&DVector<f64>> {
        self.alive_at(k).then(|| &self.states[(k - self.birth) as usize])
    }
}

#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    pub trajectories: Vec<TruthTrajectory>,
}

impl GroundTruth {
    /// States of all targets alive at scan `k`.
    pub fn alive_states(&self, k: u32) -> Vec<DVector<f64>> {
        self.trajectories.iter().filter_map(|t| t.state_at(k).cloned()).collect()
    }

    /// Truth as trajectory estimates truncated to the window `[1, k]`,
    /// indexed by trajectory number.
    pub fn as_estimates(&self, k: u32) -> Vec<TrajectoryEstimate> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.birth <= k)
            .map(|(i, t)| {
                let eps = t.death.min(k);
                TrajectoryEstimate {
                    track_id: i as u32,
                    beta: t.birth,
                    eps,
                    means: t.states[..(eps - t.birth + 1) as usize].to_vec(),
                }
            })
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.birth < 1 || t.death < t.birth {
                return Err(Error::Contract(format!("trajectory {i} has an empty lifespan")));
            }
            if t.states.len() != (t.death - t.birth + 1) as usize {
                return Err(Error::Contract(format!(
                    "trajectory {i} carries {} states for scans [{}, {}]",
                    t.states.len(),
                    t.birth,
                    t.death
                )));
            }
        }
        Ok(())
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw of the process noise, via the Cholesky factor of `Q`.
fn process_noise(motion: &MotionModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let chol = motion
        .q
        .clone()
        .cholesky()
        .expect("constant-velocity process noise is positive definite");
    chol.l() * standard_normal_vec(rng, STATE_DIM)
}

fn propagate(
    x0: DVector<f64>,
    birth: u32,
    death: u32,
    motion: &MotionModel,
    rng: &mut ChaCha8Rng,
) -> TruthTrajectory {
    let mut states = Vec::with_capacity((death - birth + 1) as usize);
    states.push(x0);
    for _ in birth..death {
        let x = states.last().unwrap();
        states.push(&motion.f * x + process_noise(motion, rng));
    }
    TruthTrajectory { birth, death, states }
}

/// Twelve well-separated targets: birth scans {1, 11, 21, 31} cycled over the
/// four corner locations (±50, ±50), velocities drawn from the birth prior
/// (unit variance per component), each alive for 50 scans after birth.
pub fn generate_scenario1(seed: u64, motion: &MotionModel) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = [[50.0, 50.0], [50.0, -50.0], [-50.0, 50.0], [-50.0, -50.0]];
    let mut trajectories = Vec::with_capacity(12);
    for i in 0..12u32 {
        let birth = BIRTH_TIMES[(i % 4) as usize];
        let death = birth + LIFETIME;
        let corner = corners[((i + i / 4) % 4) as usize];
        let x0 = DVector::from_vec(vec![
            corner[0],
            rng.sample::<f64, _>(StandardNormal),
            corner[1],
            rng.sample::<f64, _>(StandardNormal),
        ]);
        trajectories.push(propagate(x0, birth, death, motion, &mut rng));
    }
    GroundTruth { trajectories }
}

/// Four targets in close proximity: each trajectory's midpoint state is drawn
/// from N(0, I₄), then propagated forward to its death and backward (inverse
/// dynamics) to its birth.
pub fn generate_scenario2(seed: u64, motion: &MotionModel) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_inv = motion
        .f
        .clone()
        .try_inverse()
        .expect("constant-velocity transition is invertible");
    let mut trajectories = Vec::with_capacity(4);
    for i in 0..4u32 {
        let birth = BIRTH_TIMES[i as usize];
        let death = birth + LIFETIME;
        let mid = (birth + death) / 2;
        let x_mid = standard_normal_vec(&mut rng, STATE_DIM);

        let mut forward = vec![x_mid.clone()];
        for _ in mid..death {
            let x = forward.last().unwrap();
            forward.push(&motion.f * x + process_noise(motion, &mut rng));
        }
        let mut backward = Vec::new();
        let mut x = x_mid;
        for _ in birth..mid {
            x = &f_inv * (&x - process_noise(motion, &mut rng));
            backward.push(x.clone());
        }
        backward.reverse();
        backward.extend(forward);
        trajectories.push(TruthTrajectory { birth, death, states: backward });
    }
    GroundTruth { trajectories }
}

/// One scan of synthetic measurements: every alive target is detected with
/// probability `pd`, clutter arrives Poisson with uniform positions over the
/// region, and the resulting list is shuffled.
pub fn generate_measurements(
    truth: &GroundTruth,
    meas: &MeasurementModel,
    scan: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let r_chol = meas
        .r
        .clone()
        .cholesky()
        .expect("measurement noise is positive definite");
    let mut zs = Vec::new();
    for traj in &truth.trajectories {
        if let Some(x) = traj.state_at(scan) {
            if rng.random::<f64>() < meas.pd {
                let noise = r_chol.l() * standard_normal_vec(rng, meas.h.nrows());
                zs.push(&meas.h * x + noise);
            }
        }
    }
    if meas.clutter_rate > 0.0 {
        let n_clutter = rng
            .sample(Poisson::new(meas.clutter_rate).expect("positive clutter rate"))
            as usize;
        for _ in 0..n_clutter {
            zs.push(DVector::from_vec(vec![
                rng.random_range(-REGION_HALF..REGION_HALF),
                rng.random_range(-REGION_HALF..REGION_HALF),
            ]));
        }
    }
    zs.shuffle(rng);
    zs
}
