//! Evaluation metrics: GOSPA on current-target point sets and a multi-scan
//! trajectory distance on sets of trajectory estimates, both with full error
//! decompositions.
//!
//! The trajectory distance is solved exactly by dynamic programming over
//! per-scan matchings. Tracks are first split into proximity clusters (pairs
//! that never come within the cut-off can be ignored without loss), then each
//! cluster's matching sequence is optimized independently.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::assignment::solve_2d_assignment;
use crate::error::{Error, Result};
use crate::smoothing::TrajectoryEstimate;

/// GOSPA value with its decomposition. All fields are rooted, so
/// `total^p = localization^p + missed^p + false_^p`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct GospaResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_: f64,
}

/// Trajectory-distance value with its decomposition, normalized by the
/// evaluation horizon: `total^p = localization^p + missed^p + false_^p + switch^p`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TrajMetricResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_: f64,
    pub switch: f64,
}

fn pw(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

fn root(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x.sqrt()
    } else {
        x.powf(1.0 / p)
    }
}

/// Planar position of a 2-vector (taken as-is) or 4-vector (px, vx, py, vy).
fn position_of(v: &DVector<f64>) -> Result<[f64; 2]> {
    match v.len() {
        2 => Ok([v[0], v[1]]),
        4 => Ok([v[0], v[2]]),
        d => Err(Error::Contract(format!("metric input must be a 2- or 4-vector, got dim {d}"))),
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// GOSPA distance between two point sets with positional distances, cut-off
/// `c`, order `p`, and cardinality penalty `alpha = 2` (the only value under
/// which the missed/false decomposition below is defined).
pub fn gospa(
    estimates: &[DVector<f64>],
    truth: &[DVector<f64>],
    p: f64,
    c: f64,
    alpha: f64,
) -> Result<GospaResult> {
    if alpha != 2.0 {
        return Err(Error::Contract(format!("decomposition requires alpha = 2, got {alpha}")));
    }
    if !(p >= 1.0) || !(c > 0.0) {
        return Err(Error::Contract(format!("need p >= 1 and c > 0, got p={p} c={c}")));
    }
    let est: Vec<[f64; 2]> = estimates.iter().map(position_of).collect::<Result<_>>()?;
    let tru: Vec<[f64; 2]> = truth.iter().map(position_of).collect::<Result<_>>()?;

    // The solver wants rows <= cols; matching is symmetric so orient freely.
    let (rows, cols) = if est.len() <= tru.len() { (&est, &tru) } else { (&tru, &est) };
    let mut loc_p = 0.0;
    let mut n_matched = 0usize;
    if !rows.is_empty() && !cols.is_empty() {
        let costs: Vec<Vec<f64>> = rows
            .iter()
            .map(|a| {
                cols.iter()
                    .map(|b| {
                        let d = dist(*a, *b);
                        // matching at d >= c never beats leaving both unmatched
                        if d < c { pw(d, p) - pw(c, p) } else { f64::INFINITY }
                    })
                    .collect()
            })
            .collect();
        let (assign, _) = solve_2d_assignment(&costs, true)?;
        for (i, j) in assign.iter().enumerate() {
            if let Some(j) = j {
                let d = dist(rows[i], cols[*j]);
                if d < c {
                    loc_p += pw(d, p);
                    n_matched += 1;
                }
            }
        }
    }
    let n_missed = tru.len() - n_matched;
    let n_false = est.len() - n_matched;
    let half = pw(c, p) / alpha;
    Ok(GospaResult {
        total: root(loc_p + (n_missed + n_false) as f64 * half, p),
        localization: root(loc_p, p),
        missed: root(n_missed as f64 * half, p),
        false_: root(n_false as f64 * half, p),
    })
}

/// Per-cluster matching-sequence state: edge set packed as a bitmask with one
/// bit per (estimate, truth) pair.
const MAX_EDGE_BITS: usize = 64;
const MAX_DP_STATES: usize = 200_000;

struct ClusterTrack {
    beta: u32,
    eps: u32,
    positions: Vec<[f64; 2]>,
}

impl ClusterTrack {
    fn pos(&self, t: u32) -> Option<[f64; 2]> {
        if t >= self.beta && t <= self.eps {
            Some(self.positions[(t - self.beta) as usize])
        } else {
            None
        }
    }
}

fn cluster_track(e: &TrajectoryEstimate, k: u32) -> Result<ClusterTrack> {
    if e.beta < 1 || e.eps > k || e.beta > e.eps {
        return Err(Error::Contract(format!(
            "trajectory [{}, {}] falls outside the evaluation window [1, {k}]",
            e.beta, e.eps
        )));
    }
    if e.means.len() != e.len() {
        return Err(Error::Contract(format!(
            "trajectory claims {} scans but carries {} means",
            e.len(),
            e.means.len()
        )));
    }
    let positions = e.means.iter().map(position_of).collect::<Result<_>>()?;
    Ok(ClusterTrack { beta: e.beta, eps: e.eps, positions })
}

/// Accumulated decomposition of one matching sequence, all order-p powers.
#[derive(Clone, Copy, Default)]
struct Parts {
    total: f64,
    loc: f64,
    missed: f64,
    false_: f64,
    switch: f64,
}

impl Parts {
    fn add(&mut self, o: &Parts) {
        self.total += o.total;
        self.loc += o.loc;
        self.missed += o.missed;
        self.false_ += o.false_;
        self.switch += o.switch;
    }
}

/// Enumerate all partial injective matchings between `ne` estimates and `nt`
/// truths as edge bitmasks (bit `ei * nt + tj`).
fn enumerate_matchings(ne: usize, nt: usize) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    fn rec(ei: usize, ne: usize, nt: usize, used: u64, mask: u64, out: &mut Vec<u64>) -> Result<()> {
        if out.len() > MAX_DP_STATES {
            return Err(Error::Capability(format!(
                "matching-sequence search exceeds {MAX_DP_STATES} states; an LP backend would be needed"
            )));
        }
        if ei == ne {
            out.push(mask);
            return Ok(());
        }
        rec(ei + 1, ne, nt, used, mask, out)?;
        for tj in 0..nt {
            if used & (1 << tj) == 0 {
                rec(ei + 1, ne, nt, used | (1 << tj), mask | (1 << (ei * nt + tj)), out)?;
            }
        }
        Ok(())
    }
    rec(0, ne, nt, 0, 0, &mut out)?;
    Ok(out)
}

/// Exact minimum-cost matching sequence for one proximity cluster over scans
/// `1..=k`, as order-p component powers (unnormalized).
fn cluster_dp(
    est: &[ClusterTrack],
    tru: &[ClusterTrack],
    p: f64,
    c: f64,
    gamma: f64,
    k: u32,
) -> Result<Parts> {
    let (ne, nt) = (est.len(), tru.len());
    if ne * nt > MAX_EDGE_BITS {
        return Err(Error::Capability(format!(
            "cluster of {ne} estimates x {nt} truths exceeds the {MAX_EDGE_BITS}-edge exact-DP limit"
        )));
    }
    let states = enumerate_matchings(ne, nt)?;
    let id_of: HashMap<u64, u32> =
        states.iter().enumerate().map(|(i, m)| (*m, i as u32)).collect();
    let half = pw(c, p) / 2.0;
    let quarter_switch = pw(gamma, p) / 4.0;

    // per-state scan cost and its decomposition at scan t
    let scan_cost = |mask: u64, t: u32| -> Parts {
        let mut parts = Parts::default();
        let mut est_matched = 0u64;
        let mut tru_matched = 0u64;
        let mut m = mask;
        while m != 0 {
            let bit = m.trailing_zeros() as usize;
            m &= m - 1;
            let (ei, tj) = (bit / nt, bit % nt);
            est_matched |= 1 << ei;
            tru_matched |= 1 << tj;
            match (est[ei].pos(t), tru[tj].pos(t)) {
                (Some(a), Some(b)) => {
                    let d = dist(a, b);
                    if d < c {
                        parts.loc += pw(d, p);
                    } else {
                        // as bad as leaving both unmatched; report it that way
                        parts.missed += half;
                        parts.false_ += half;
                    }
                }
                (Some(_), None) => parts.false_ += half,
                (None, Some(_)) => parts.missed += half,
                (None, None) => {}
            }
        }
        for (ei, e) in est.iter().enumerate() {
            if est_matched & (1 << ei) == 0 && e.pos(t).is_some() {
                parts.false_ += half;
            }
        }
        for (tj, tr) in tru.iter().enumerate() {
            if tru_matched & (1 << tj) == 0 && tr.pos(t).is_some() {
                parts.missed += half;
            }
        }
        parts.total = parts.loc + parts.missed + parts.false_;
        parts
    };

    let mut dp: Vec<Parts> = states.iter().map(|m| scan_cost(*m, 1)).collect();

    let mut next = vec![Parts::default(); states.len()];
    // h[sigma] = min over predecessor states s containing edge set sigma of
    // dp[s].total + quarter * |s|; every sub-matching is itself a state, so
    // it doubles as the index space.
    let mut h: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); states.len()];
    for t in 2..=k {
        for v in h.iter_mut() {
            *v = (f64::INFINITY, 0);
        }
        for (sid, mask) in states.iter().enumerate() {
            let g = dp[sid].total + quarter_switch * mask.count_ones() as f64;
            let mut sub = *mask;
            loop {
                let hid = id_of[&sub] as usize;
                if g < h[hid].0 {
                    h[hid] = (g, sid as u32);
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
        for (sid, mask) in states.iter().enumerate() {
            // best predecessor: discount the shared edges twice (they are
            // counted in both |s| and |s'| but switch nothing)
            let mut best = (f64::INFINITY, 0u32);
            let mut sub = *mask;
            loop {
                let hid = id_of[&sub] as usize;
                let cand = h[hid].0 - 2.0 * quarter_switch * sub.count_ones() as f64;
                if cand < best.0 {
                    best = (cand, h[hid].1);
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
            let pred = best.1 as usize;
            let changed = (states[pred] ^ mask).count_ones() as f64;
            let mut parts = dp[pred];
            parts.switch += quarter_switch * changed;
            parts.total += quarter_switch * changed;
            let sc = scan_cost(*mask, t);
            parts.add(&sc);
            next[sid] = parts;
        }
        std::mem::swap(&mut dp, &mut next);
    }

    let mut best = 0;
    for (i, parts) in dp.iter().enumerate() {
        if parts.total < dp[best].total {
            best = i;
        }
    }
    Ok(dp[best])
}

/// Partition estimate and truth tracks into proximity clusters: tracks that
/// never come within `c` of each other while both exist cannot profitably be
/// matched, so the optimum decomposes across clusters.
fn proximity_clusters(est: &[ClusterTrack], tru: &[ClusterTrack], c: f64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = est.len() + tru.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for (i, e) in est.iter().enumerate() {
        for (j, tr) in tru.iter().enumerate() {
            let lo = e.beta.max(tr.beta);
            let hi = e.eps.min(tr.eps);
            let close = (lo..=hi).any(|t| dist(e.pos(t).unwrap(), tr.pos(t).unwrap()) < c);
            if close {
                let (a, b) = (find(&mut parent, i), find(&mut parent, est.len() + j));
                parent[a] = b;
            }
        }
    }
    let mut groups: HashMap<usize, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for i in 0..est.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().0.push(i);
    }
    for j in 0..tru.len() {
        let r = find(&mut parent, est.len() + j);
        groups.entry(r).or_default().1.push(j);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort_by_key(|(e, t)| (e.first().copied(), t.first().copied()));
    out
}

/// Multi-scan trajectory distance between estimate and truth sets over scans
/// `1..=k`: per-scan assignment costs truncated at `c`, unmatched-target costs
/// `c^p/2`, and `gamma^p/4` per half-switch (an assignment edge appearing or
/// disappearing between consecutive scans), minimized jointly over the
/// matching sequence. The result is normalized by `k^(1/p)`.
pub fn lp_trajectory_metric(
    est: &[TrajectoryEstimate],
    truth: &[TrajectoryEstimate],
    p: f64,
    c: f64,
    gamma: f64,
    k: u32,
) -> Result<TrajMetricResult> {
    if k == 0 {
        return Err(Error::Contract("evaluation time must be at least 1".into()));
    }
    if !(p >= 1.0) || !(c > 0.0) || !(gamma > 0.0) {
        return Err(Error::Contract(format!(
            "need p >= 1, c > 0, gamma > 0, got p={p} c={c} gamma={gamma}"
        )));
    }
    let est: Vec<ClusterTrack> = est.iter().map(|e| cluster_track(e, k)).collect::<Result<_>>()?;
    let tru: Vec<ClusterTrack> = truth.iter().map(|e| cluster_track(e, k)).collect::<Result<_>>()?;

    let mut parts = Parts::default();
    for (eg, tg) in proximity_clusters(&est, &tru, c) {
        let ce: Vec<ClusterTrack> = eg
            .iter()
            .map(|&i| ClusterTrack {
                beta: est[i].beta,
                eps: est[i].eps,
                positions: est[i].positions.clone(),
            })
            .collect();
        let ct: Vec<ClusterTrack> = tg
            .iter()
            .map(|&j| ClusterTrack {
                beta: tru[j].beta,
                eps: tru[j].eps,
                positions: tru[j].positions.clone(),
            })
            .collect();
        parts.add(&cluster_dp(&ce, &ct, p, c, gamma, k)?);
    }

    let norm = k as f64;
    Ok(TrajMetricResult {
        total: root(parts.total / norm, p),
        localization: root(parts.loc / norm, p),
        missed: root(parts.missed / norm, p),
        false_: root(parts.false_ / norm, p),
        switch: root(parts.switch / norm, p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn traj(beta: u32, path: &[[f64; 2]]) -> TrajectoryEstimate {
        TrajectoryEstimate {
            track_id: 0,
            beta,
            eps: beta + path.len() as u32 - 1,
            means: path.iter().map(|p| pt(p[0], p[1])).collect(),
        }
    }

    #[test]
    fn gospa_hand_values() {
        let r = gospa(&[], &[], 2.0, 10.0, 2.0).unwrap();
        assert_eq!(r.total, 0.0);

        let r = gospa(&[], &[pt(3.0, 4.0)], 2.0, 10.0, 2.0).unwrap();
        assert_relative_eq!(r.total, 50.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r.missed, 50.0f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.localization, 0.0);
        assert_eq!(r.false_, 0.0);

        let r = gospa(&[pt(3.0, 0.0)], &[pt(0.0, 0.0)], 2.0, 10.0, 2.0).unwrap();
        assert_relative_eq!(r.total, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.localization, 3.0, epsilon = 1e-12);
        assert_eq!(r.missed, 0.0);
        assert_eq!(r.false_, 0.0);
    }

    #[test]
    fn gospa_far_pair_counts_as_missed_plus_false() {
        let r = gospa(&[pt(0.0, 0.0)], &[pt(15.0, 0.0)], 2.0, 10.0, 2.0).unwrap();
        assert_relative_eq!(r.total, 10.0, epsilon = 1e-12);
        assert_relative_eq!(r.missed, 50.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r.false_, 50.0f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.localization, 0.0);
    }

    #[test]
    fn gospa_rejects_other_alphas() {
        assert!(gospa(&[], &[], 2.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn gospa_is_symmetric_with_labels_swapped() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let e: Vec<DVector<f64>> = (0..rng.random_range(0..5))
                .map(|_| pt(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
                .collect();
            let t: Vec<DVector<f64>> = (0..rng.random_range(0..5))
                .map(|_| pt(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
                .collect();
            let a = gospa(&e, &t, 2.0, 10.0, 2.0).unwrap();
            let b = gospa(&t, &e, 2.0, 10.0, 2.0).unwrap();
            assert_relative_eq!(a.total, b.total, epsilon = 1e-9);
            assert_relative_eq!(a.localization, b.localization, epsilon = 1e-9);
            assert_relative_eq!(a.missed, b.false_, epsilon = 1e-9);
            assert_relative_eq!(a.false_, b.missed, epsilon = 1e-9);
        }
    }

    #[test]
    fn gospa_zero_on_identical_and_monotone_in_false_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let t: Vec<DVector<f64>> = (0..rng.random_range(1..5))
                .map(|_| pt(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
                .collect();
            let same = gospa(&t, &t, 2.0, 10.0, 2.0).unwrap();
            assert_relative_eq!(same.total, 0.0, epsilon = 1e-12);

            let mut padded = t.clone();
            padded.push(pt(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)));
            let grown = gospa(&padded, &t, 2.0, 10.0, 2.0).unwrap();
            assert!(grown.total >= same.total - 1e-12);
        }
    }

    /// All partial matchings by brute force.
    fn brute_gospa_p(est: &[DVector<f64>], tru: &[DVector<f64>], p: f64, c: f64) -> f64 {
        fn rec(
            ei: usize,
            est: &[[f64; 2]],
            tru: &[[f64; 2]],
            used: u64,
            acc: f64,
            p: f64,
            c: f64,
            best: &mut f64,
        ) {
            if ei == est.len() {
                let unmatched_tru = tru.len() - used.count_ones() as usize;
                let v = acc + unmatched_tru as f64 * pw(c, p) / 2.0;
                if v < *best {
                    *best = v;
                }
                return;
            }
            rec(ei + 1, est, tru, used, acc + pw(c, p) / 2.0, p, c, best);
            for tj in 0..tru.len() {
                if used & (1 << tj) == 0 {
                    let d = dist(est[ei], tru[tj]).min(c);
                    rec(ei + 1, est, tru, used | (1 << tj), acc + pw(d, p), p, c, best);
                }
            }
        }
        let e: Vec<[f64; 2]> = est.iter().map(|v| position_of(v).unwrap()).collect();
        let t: Vec<[f64; 2]> = tru.iter().map(|v| position_of(v).unwrap()).collect();
        let mut best = f64::INFINITY;
        rec(0, &e, &t, 0, 0.0, p, c, &mut best);
        best
    }

    #[test]
    fn gospa_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let e: Vec<DVector<f64>> = (0..rng.random_range(0..5))
                .map(|_| pt(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)))
                .collect();
            let t: Vec<DVector<f64>> = (0..rng.random_range(0..5))
                .map(|_| pt(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)))
                .collect();
            let fast = gospa(&e, &t, 2.0, 10.0, 2.0).unwrap();
            let slow = brute_gospa_p(&e, &t, 2.0, 10.0);
            assert_relative_eq!(pw(fast.total, 2.0), slow, epsilon = 1e-9);
        }
    }

    #[test]
    fn gospa_accepts_full_states() {
        let est = [DVector::from_vec(vec![1.0, 9.0, 2.0, -9.0])];
        let tru = [pt(1.0, 2.0)];
        let r = gospa(&est, &tru, 2.0, 10.0, 2.0).unwrap();
        assert_relative_eq!(r.total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_metric_zero_on_identical() {
        let a = vec![
            traj(1, &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
            traj(2, &[[30.0, 0.0], [31.0, 0.0]]),
        ];
        let r = lp_trajectory_metric(&a, &a, 2.0, 10.0, 2.0, 3).unwrap();
        assert_relative_eq!(r.total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_metric_single_missed_track() {
        for k in [1u32, 4, 10] {
            let t = vec![traj(1, &vec![[0.0, 0.0]; k as usize])];
            let r = lp_trajectory_metric(&[], &t, 2.0, 10.0, 2.0, k).unwrap();
            assert_relative_eq!(r.total, 50.0f64.sqrt(), epsilon = 1e-9);
            assert_relative_eq!(r.missed, 50.0f64.sqrt(), epsilon = 1e-9);
            assert_eq!(r.switch, 0.0);
        }
    }

    /// One estimate that jumps from one truth to the other mid-run: the
    /// optimum pays exactly one full switch.
    #[test]
    fn trajectory_metric_identity_swap_costs_one_switch() {
        let t1 = traj(1, &[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let t2 = traj(1, &[[30.0, 0.0], [30.0, 0.0], [30.0, 0.0], [30.0, 0.0]]);
        let e = traj(1, &[[0.0, 0.0], [0.0, 0.0], [30.0, 0.0], [30.0, 0.0]]);
        let r = lp_trajectory_metric(&[e], &[t1, t2], 2.0, 10.0, 2.0, 4).unwrap();
        // gamma^p/2 = 2 switch cost; each truth unmatched for 2 scans
        assert_relative_eq!(pw(r.switch, 2.0) * 4.0, 2.0, epsilon = 1e-9);
        assert_relative_eq!(pw(r.missed, 2.0) * 4.0, 200.0, epsilon = 1e-9);
        assert_eq!(r.localization, 0.0);
        assert_eq!(r.false_, 0.0);
        assert_relative_eq!(pw(r.total, 2.0) * 4.0, 202.0, epsilon = 1e-9);
    }

    /// An estimate dying early keeps its assignment: no switch is charged at
    /// the death boundary, and the remaining truth scans count as missed.
    #[test]
    fn trajectory_metric_no_switch_at_track_death() {
        let t = traj(1, &[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let e = traj(1, &[[0.0, 0.0], [0.0, 0.0]]);
        let r = lp_trajectory_metric(&[e], &[t], 2.0, 10.0, 2.0, 4).unwrap();
        assert_eq!(r.switch, 0.0);
        assert_relative_eq!(pw(r.missed, 2.0) * 4.0, 100.0, epsilon = 1e-9);
        assert_relative_eq!(pw(r.total, 2.0) * 4.0, 100.0, epsilon = 1e-9);
    }

    /// Direct evaluation of a fixed matching sequence, for the oracle.
    fn sequence_cost(
        seq: &[u64],
        est: &[ClusterTrack],
        tru: &[ClusterTrack],
        p: f64,
        c: f64,
        gamma: f64,
    ) -> f64 {
        let nt = tru.len();
        let mut total = 0.0;
        for (idx, mask) in seq.iter().enumerate() {
            let t = idx as u32 + 1;
            let mut est_m = 0u64;
            let mut tru_m = 0u64;
            let mut m = *mask;
            while m != 0 {
                let bit = m.trailing_zeros() as usize;
                m &= m - 1;
                let (ei, tj) = (bit / nt, bit % nt);
                est_m |= 1 << ei;
                tru_m |= 1 << tj;
                match (est[ei].pos(t), tru[tj].pos(t)) {
                    (Some(a), Some(b)) => total += pw(dist(a, b).min(c), p),
                    (Some(_), None) | (None, Some(_)) => total += pw(c, p) / 2.0,
                    (None, None) => {}
                }
            }
            for (ei, e) in est.iter().enumerate() {
                if est_m & (1 << ei) == 0 && e.pos(t).is_some() {
                    total += pw(c, p) / 2.0;
                }
            }
            for (tj, tr) in tru.iter().enumerate() {
                if tru_m & (1 << tj) == 0 && tr.pos(t).is_some() {
                    total += pw(c, p) / 2.0;
                }
            }
            if idx > 0 {
                total += (seq[idx - 1] ^ mask).count_ones() as f64 * pw(gamma, p) / 4.0;
            }
        }
        total
    }

    fn brute_trajectory_p(
        est: &[TrajectoryEstimate],
        tru: &[TrajectoryEstimate],
        p: f64,
        c: f64,
        gamma: f64,
        k: u32,
    ) -> f64 {
        let ce: Vec<ClusterTrack> = est.iter().map(|e| cluster_track(e, k).unwrap()).collect();
        let ct: Vec<ClusterTrack> = tru.iter().map(|e| cluster_track(e, k).unwrap()).collect();
        let states = enumerate_matchings(ce.len(), ct.len()).unwrap();
        let mut best = f64::INFINITY;
        let mut seq = vec![0u64; k as usize];
        fn rec(
            depth: usize,
            k: usize,
            states: &[u64],
            seq: &mut Vec<u64>,
            est: &[ClusterTrack],
            tru: &[ClusterTrack],
            p: f64,
            c: f64,
            gamma: f64,
            best: &mut f64,
        ) {
            if depth == k {
                let v = sequence_cost(seq, est, tru, p, c, gamma);
                if v < *best {
                    *best = v;
                }
                return;
            }
            for s in states {
                seq[depth] = *s;
                rec(depth + 1, k, states, seq, est, tru, p, c, gamma, best);
            }
        }
        rec(0, k as usize, &states, &mut seq, &ce, &ct, p, c, gamma, &mut best);
        best
    }

    #[test]
    fn trajectory_metric_matches_sequence_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let k = 3u32;
            let mk = |rng: &mut ChaCha8Rng| {
                let beta = rng.random_range(1..=2);
                let len = rng.random_range(1..=(k - beta + 1));
                let path: Vec<[f64; 2]> = (0..len)
                    .map(|_| [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)])
                    .collect();
                traj(beta, &path)
            };
            let est: Vec<_> = (0..rng.random_range(0..3)).map(|_| mk(&mut rng)).collect();
            let tru: Vec<_> = (0..rng.random_range(0..3)).map(|_| mk(&mut rng)).collect();
            let fast = lp_trajectory_metric(&est, &tru, 2.0, 10.0, 2.0, k).unwrap();
            let slow = brute_trajectory_p(&est, &tru, 2.0, 10.0, 2.0, k);
            assert_relative_eq!(pw(fast.total, 2.0) * k as f64, slow, epsilon = 1e-9);
            // decomposition recombines to the total
            let recomb = pw(fast.localization, 2.0)
                + pw(fast.missed, 2.0)
                + pw(fast.false_, 2.0)
                + pw(fast.switch, 2.0);
            assert_relative_eq!(pw(fast.total, 2.0), recomb, epsilon = 1e-9);
        }
    }

    /// With switches priced out, a stable non-crossing scene costs the sum of
    /// its per-scan optimal assignments.
    #[test]
    fn trajectory_metric_reduces_to_per_scan_sums_for_huge_gamma() {
        let t1 = traj(1, &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let t2 = traj(2, &[[40.0, 0.0], [41.0, 0.0], [42.0, 0.0]]);
        let e1 = traj(1, &[[0.5, 0.0], [1.5, 0.0], [2.5, 0.0], [3.5, 0.0]]);
        let e2 = traj(2, &[[40.2, 0.0], [41.2, 0.0], [42.2, 0.0]]);
        let k = 4u32;
        let r = lp_trajectory_metric(&[e1.clone(), e2.clone()], &[t1.clone(), t2.clone()], 2.0, 10.0, 1e6, k)
            .unwrap();
        let mut per_scan = 0.0;
        for t in 1..=k {
            let at = |tr: &TrajectoryEstimate| {
                tr.position_at(t).map(|p| pt(p[0], p[1]))
            };
            let est: Vec<DVector<f64>> = [&e1, &e2].iter().filter_map(|x| at(x)).collect();
            let tru: Vec<DVector<f64>> = [&t1, &t2].iter().filter_map(|x| at(x)).collect();
            per_scan += pw(gospa(&est, &tru, 2.0, 10.0, 2.0).unwrap().total, 2.0);
        }
        assert_relative_eq!(pw(r.total, 2.0) * k as f64, per_scan, epsilon = 1e-9);
        assert_eq!(r.switch, 0.0);
    }

    #[test]
    fn trajectory_metric_rejects_oversized_clusters() {
        let coincident: Vec<TrajectoryEstimate> =
            (0..9).map(|_| traj(1, &[[0.0, 0.0], [0.0, 0.0]])).collect();
        let err = lp_trajectory_metric(&coincident, &coincident, 2.0, 10.0, 2.0, 2).unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }

    #[test]
    fn trajectory_metric_rejects_out_of_window_trajectories() {
        let t = vec![traj(1, &[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])];
        assert!(lp_trajectory_metric(&[], &t, 2.0, 10.0, 2.0, 2).is_err());
    }

    /// Clustering must not change the answer on a scene with interacting and
    /// far-apart groups.
    #[test]
    fn clustering_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let k = 3u32;
            let offset = [[0.0, 0.0], [500.0, 0.0]];
            let mut est = Vec::new();
            let mut tru = Vec::new();
            for off in offset {
                for _ in 0..rng.random_range(0..2) {
                    let path: Vec<[f64; 2]> = (0..k)
                        .map(|_| {
                            [off[0] + rng.random_range(-8.0..8.0), off[1] + rng.random_range(-8.0..8.0)]
                        })
                        .collect();
                    est.push(traj(1, &path));
                }
                for _ in 0..rng.random_range(1..3) {
                    let path: Vec<[f64; 2]> = (0..k)
                        .map(|_| {
                            [off[0] + rng.random_range(-8.0..8.0), off[1] + rng.random_range(-8.0..8.0)]
                        })
                        .collect();
                    tru.push(traj(1, &path));
                }
            }
            let fast = lp_trajectory_metric(&est, &tru, 2.0, 10.0, 2.0, k).unwrap();
            let slow = brute_trajectory_p(&est, &tru, 2.0, 10.0, 2.0, k);
            assert_relative_eq!(pw(fast.total, 2.0) * k as f64, slow, epsilon = 1e-7);
        }
    }
}
