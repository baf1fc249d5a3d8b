//! Estimate extraction and fixed-lag management.
//!
//! Smoothing happens implicitly: each trajectory keeps a joint Gaussian over
//! its newest states, and conditioning on a measurement re-estimates all of
//! them. What remains here is bookkeeping: choosing how many Bernoullis to
//! report, reading their best mixture components, and shrinking every joint
//! back to the configured lag after each scan.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hypothesis::Track;

/// One reported trajectory: means for scans `beta ..= eps`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryEstimate {
    pub track_id: u32,
    pub beta: u32,
    pub eps: u32,
    pub means: Vec<DVector<f64>>,
}

impl TrajectoryEstimate {
    pub fn len(&self) -> usize {
        (self.eps - self.beta + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Planar position at `scan`, if the trajectory covers it. Means may be
    /// bare positions or full states with interleaved velocities.
    pub fn position_at(&self, scan: u32) -> Option<[f64; 2]> {
        if scan < self.beta || scan > self.eps {
            return None;
        }
        let m = &self.means[(scan - self.beta) as usize];
        match m.len() {
            2 => Some([m[0], m[1]]),
            _ => Some([m[0], m[2]]),
        }
    }
}

/// Most likely count of existing targets: argmax of the Poisson-binomial
/// distribution of the existence probabilities, ties toward more targets.
pub fn map_cardinality(rs: &[f64]) -> usize {
    let mut pmf = vec![1.0f64];
    for &r in rs {
        let mut next = vec![0.0; pmf.len() + 1];
        for (n, p) in pmf.iter().enumerate() {
            next[n] += p * (1.0 - r);
            next[n + 1] += p * r;
        }
        pmf = next;
    }
    let mut best = 0;
    for (n, p) in pmf.iter().enumerate() {
        if *p >= pmf[best] {
            best = n;
        }
    }
    best
}

/// Trajectory estimates under the chosen global hypothesis: the map-cardinality
/// count of highest-existence Bernoullis, each reported at its heaviest
/// mixture component's mean sequence.
pub fn extract_estimates(tracks: &[Track], a_star: &[(u32, u32)]) -> Result<Vec<TrajectoryEstimate>> {
    let mut berns = Vec::new();
    for (track_id, hyp_id) in a_star {
        let track = tracks
            .iter()
            .find(|t| t.id == *track_id)
            .ok_or_else(|| Error::Contract(format!("estimate choice names unknown track {track_id}")))?;
        let hyp = track
            .hyp_by_id(*hyp_id)
            .ok_or_else(|| Error::Contract(format!("track {track_id} has no leaf {hyp_id}")))?;
        if let Some(b) = &hyp.bern {
            berns.push((*track_id, b));
        }
    }
    berns.sort_by(|a, b| b.1.r.total_cmp(&a.1.r).then(a.0.cmp(&b.0)));
    let n_star = map_cardinality(&berns.iter().map(|(_, b)| b.r).collect::<Vec<_>>());

    let mut out = Vec::with_capacity(n_star);
    for (track_id, bern) in berns.into_iter().take(n_star) {
        let traj = bern.mix.map_component();
        out.push(TrajectoryEstimate {
            track_id,
            beta: traj.beta,
            eps: traj.eps,
            means: traj.means(),
        });
    }
    Ok(out)
}

/// Shrinks every leaf's trajectory joints to at most `l_cap` active states,
/// freezing the means that slide out. Association histories, weights, and
/// existence probabilities are untouched.
pub fn fixed_lag_truncate(tracks: &mut [Track], l_cap: usize) {
    for track in tracks {
        for hyp in &mut track.hyps {
            if let Some(bern) = &mut hyp.bern {
                bern.mix.truncate_to(l_cap);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::LocalHypothesis;
    use crate::models::{
        kalman_predict, kalman_update, GaussianState, MeasurementModel, MotionModel,
    };
    use crate::trajectory::{BernoulliTrajectory, TrajectoryGaussian, TrajectoryMixture};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cardinality_examples() {
        assert_eq!(map_cardinality(&[1.0, 1.0]), 2);
        assert_eq!(map_cardinality(&[1.0, 1.0, 0.2]), 2);
        assert_eq!(map_cardinality(&[]), 0);
        // exact tie 0.5/0.5 resolves upward
        assert_eq!(map_cardinality(&[0.5]), 1);
        assert_eq!(map_cardinality(&[0.9, 0.3]), 1);
    }

    /// Exhaustive Poisson-binomial: enumerate all exist/not-exist outcomes.
    fn brute_cardinality(rs: &[f64]) -> usize {
        let n = rs.len();
        let mut pmf = vec![0.0; n + 1];
        for mask in 0u32..(1 << n) {
            let mut p = 1.0;
            let mut count = 0;
            for (i, r) in rs.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    p *= r;
                    count += 1;
                } else {
                    p *= 1.0 - r;
                }
            }
            pmf[count] += p;
        }
        let mut best = 0;
        for (i, p) in pmf.iter().enumerate() {
            if *p >= pmf[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn cardinality_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(0..=8);
            let rs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert_eq!(map_cardinality(&rs), brute_cardinality(&rs), "rs={rs:?}");
        }
    }

    fn track_with_bern(id: u32, bern: BernoulliTrajectory) -> Track {
        let mut t = Track::new(id, 1);
        let hid = t.alloc_id();
        t.hyps.push(LocalHypothesis::root(hid, 0.0, Some(bern)));
        t
    }

    fn single_bern(r: f64, beta: u32, x: f64) -> BernoulliTrajectory {
        let state = GaussianState::new(
            DVector::from_vec(vec![x, 0.0, -x, 0.0]),
            DMatrix::identity(4, 4),
        );
        BernoulliTrajectory::new(r, TrajectoryMixture::single(TrajectoryGaussian::single(beta, state)))
    }

    #[test]
    fn extraction_reports_map_cardinality_count() {
        let tracks = vec![
            track_with_bern(0, single_bern(0.9, 1, 10.0)),
            track_with_bern(1, single_bern(0.3, 1, -5.0)),
        ];
        let est = extract_estimates(&tracks, &[(0, 0), (1, 0)]).unwrap();
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].track_id, 0);
        assert_eq!(est[0].beta, 1);
        assert_eq!(est[0].eps, 1);
        assert_relative_eq!(est[0].means[0][0], 10.0);
        assert_eq!(est[0].position_at(1), Some([10.0, -10.0]));
        assert_eq!(est[0].position_at(2), None);
    }

    #[test]
    fn extraction_skips_nonexistent_leaves() {
        let mut absent = Track::new(5, 1);
        let hid = absent.alloc_id();
        absent.hyps.push(LocalHypothesis::root(hid, 0.0, None));
        let tracks = vec![absent, track_with_bern(6, single_bern(1.0, 2, 1.0))];
        let est = extract_estimates(&tracks, &[(5, 0), (6, 0)]).unwrap();
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].track_id, 6);
    }

    /// A heavier dead component must be reported with its own end time.
    #[test]
    fn extraction_reports_dead_component_when_heavier() {
        let alive = TrajectoryGaussian::single(
            1,
            GaussianState::new(DVector::zeros(4), DMatrix::identity(4, 4)),
        );
        let motion = MotionModel::constant_velocity(1.0, 0.01, 0.3); // low survival
        let mix = TrajectoryMixture::single(alive).predict_all(&motion, 2);
        // dead component weight 0.7 > alive 0.3
        let bern = BernoulliTrajectory::new(1.0, mix);
        let tracks = vec![track_with_bern(0, bern)];
        let est = extract_estimates(&tracks, &[(0, 0)]).unwrap();
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].eps, 1);
        assert_eq!(est[0].means.len(), 1);
    }

    #[test]
    fn truncation_caps_active_blocks_without_touching_weights() {
        let motion = MotionModel::constant_velocity(1.0, 0.01, 0.99);
        let mut bern = single_bern(0.8, 1, 0.0);
        for k in 2..=6 {
            bern = BernoulliTrajectory::new(bern.r, bern.mix.predict_all(&motion, k));
        }
        let mut tracks = vec![track_with_bern(0, bern)];
        let w_before: Vec<f64> = tracks[0].hyps.iter().map(|h| h.log_w).collect();
        fixed_lag_truncate(&mut tracks, 3);
        for h in &tracks[0].hyps {
            for (_, t) in &h.bern.as_ref().unwrap().mix.comps {
                assert!(t.active_blocks() <= 3);
                t.check().unwrap();
            }
        }
        let w_after: Vec<f64> = tracks[0].hyps.iter().map(|h| h.log_w).collect();
        assert_eq!(w_before, w_after);
        assert_relative_eq!(tracks[0].hyps[0].bern.as_ref().unwrap().r, 0.8);
    }

    /// Forward-backward reference smoother for one linear-Gaussian track.
    fn rts_smoother(
        motion: &MotionModel,
        meas: &MeasurementModel,
        prior: &GaussianState,
        zs: &[DVector<f64>],
    ) -> Vec<DVector<f64>> {
        let n = zs.len();
        let mut filt: Vec<GaussianState> = Vec::with_capacity(n);
        let mut pred: Vec<GaussianState> = Vec::with_capacity(n);
        let mut state = prior.clone();
        for (t, z) in zs.iter().enumerate() {
            if t > 0 {
                state = kalman_predict(&state, motion).unwrap();
            }
            pred.push(state.clone());
            let (upd, _) = kalman_update(&state, meas, z).unwrap();
            state = upd.clone();
            filt.push(upd);
        }
        let mut means = vec![DVector::zeros(4); n];
        let mut covs = vec![DMatrix::zeros(4, 4); n];
        means[n - 1] = filt[n - 1].mean.clone();
        covs[n - 1] = filt[n - 1].cov.clone();
        for t in (0..n - 1).rev() {
            let g = &filt[t].cov
                * motion.f.transpose()
                * pred[t + 1].cov.clone().try_inverse().unwrap();
            means[t] = &filt[t].mean + &g * (&means[t + 1] - &pred[t + 1].mean);
            covs[t] = &filt[t].cov
                + &g * (&covs[t + 1] - &pred[t + 1].cov) * g.transpose();
        }
        means
    }

    /// With the lag covering the whole run, the maintained joint's marginal
    /// means equal the fixed-interval smoother's.
    #[test]
    fn uncut_joint_equals_reference_smoother() {
        let motion = MotionModel::constant_velocity(1.0, 0.01, 0.99);
        let meas = MeasurementModel::position_sensor(1.0, 1.0, 0.0, 4.0e4, 0.999).unwrap();
        let prior = GaussianState::new(
            DVector::from_vec(vec![0.0, 1.0, 0.0, -1.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 4.0, 1.0])),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = prior.mean.clone();
        let mut zs = Vec::new();
        for _ in 0..6 {
            zs.push(DVector::from_vec(vec![
                x[0] + 0.3 * rng.random::<f64>(),
                x[2] + 0.3 * rng.random::<f64>(),
            ]));
            x = &motion.f * x;
        }

        let mut traj = TrajectoryGaussian::single(1, prior.clone());
        let (t0, _) = traj.update(&meas, &zs[0]).unwrap();
        traj = t0;
        for (i, z) in zs.iter().enumerate().skip(1) {
            traj = traj.extend(&motion);
            let (t, _) = traj.update(&meas, z).unwrap();
            traj = t;
            let _ = i;
        }
        let smoothed = rts_smoother(&motion, &meas, &prior, &zs);
        let means = traj.means();
        assert_eq!(means.len(), smoothed.len());
        for (a, b) in means.iter().zip(&smoothed) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }
}
