//! Track tables and hypothesis bookkeeping.
//!
//! Every track keeps only the current leaf generation of its local
//! hypothesis tree. Leaves carry their measurement-association history plus
//! an ancestry trail (leaf id at the end of each past scan) so hypotheses
//! that disagree with the best global before the unresolved window can be
//! cut without storing interior tree nodes.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::assignment::{
    self, ConstraintMode, LeafCost, MultiFrameProblem, TrackColumn,
};
use crate::error::{Error, Result};
use crate::models::MeasurementModel;
use crate::numeric::logsumexp;
use crate::trajectory::BernoulliTrajectory;

/// Tracks whose every leaf existence sits below this are up for deletion
/// once nothing in the window references them.
pub const DEAD_EXISTENCE: f64 = 1e-4;

/// Bernoullis below this existence receive only misdetection children.
pub const MIN_DETECT_EXISTENCE: f64 = 1e-3;

/// Leaves whose weight falls this far below their track's best leaf are
/// dropped between scans. Keeps the per-track leaf count, and with it the
/// association search, bounded.
pub const LEAF_PRUNE_REL_WEIGHT: f64 = 1e-4;

/// Hard ceiling on surviving leaves per track, applied after the relative
/// threshold. Rarely binds; a backstop against near-tie pileups.
pub const LEAF_CAP: usize = 128;

/// One leaf of a track's hypothesis tree.
#[derive(Clone, Debug)]
pub struct LocalHypothesis {
    pub id: u32,
    pub parent: Option<u32>,
    /// Natural log of the hypothesis weight, renormalized per track per scan.
    pub log_w: f64,
    /// Absent means the track does not exist under this hypothesis.
    pub bern: Option<BernoulliTrajectory>,
    /// (scan, measurement index) claims, scans strictly ascending.
    pub assoc: Vec<(u32, u32)>,
    /// (scan, leaf id at end of that scan), most recent last.
    pub ancestry: Vec<(u32, u32)>,
}

impl LocalHypothesis {
    pub fn root(id: u32, log_w: f64, bern: Option<BernoulliTrajectory>) -> Self {
        Self {
            id,
            parent: None,
            log_w,
            bern,
            assoc: Vec::new(),
            ancestry: Vec::new(),
        }
    }

    /// Child extending this leaf by one scan's outcome.
    pub fn child(
        &self,
        id: u32,
        log_w_delta: f64,
        bern: Option<BernoulliTrajectory>,
        claim: Option<(u32, u32)>,
    ) -> Self {
        let mut assoc = self.assoc.clone();
        if let Some(c) = claim {
            debug_assert!(self.assoc.last().is_none_or(|(s, _)| *s < c.0));
            assoc.push(c);
        }
        Self {
            id,
            parent: Some(self.id),
            log_w: self.log_w + log_w_delta,
            bern,
            assoc,
            ancestry: self.ancestry.clone(),
        }
    }

    /// Leaf id this hypothesis descended from at the end of `scan`.
    pub fn ancestor_at(&self, scan: u32) -> Option<u32> {
        self.ancestry
            .binary_search_by_key(&scan, |(s, _)| *s)
            .ok()
            .map(|i| self.ancestry[i].1)
    }

    pub fn exists(&self) -> bool {
        self.bern.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct Track {
    pub id: u32,
    pub created_at: u32,
    pub hyps: Vec<LocalHypothesis>,
    next_hyp_id: u32,
}

impl Track {
    pub fn new(id: u32, created_at: u32) -> Self {
        Self {
            id,
            created_at,
            hyps: Vec::new(),
            next_hyp_id: 0,
        }
    }

    pub fn alloc_id(&mut self) -> u32 {
        let id = self.next_hyp_id;
        self.next_hyp_id += 1;
        id
    }

    pub fn hyp_by_id(&self, id: u32) -> Option<&LocalHypothesis> {
        self.hyps.iter().find(|h| h.id == id)
    }

    /// Shifts leaf log-weights so the maximum is zero. Per-track constants
    /// cancel in global normalization, so this only guards the exponentials.
    pub fn renormalize_leaves(&mut self) {
        let max = self
            .hyps
            .iter()
            .map(|h| h.log_w)
            .fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            for h in &mut self.hyps {
                h.log_w -= max;
            }
        }
    }

    /// Drops leaves more than `min_rel_log_w` below the best leaf, then caps
    /// the survivors at `cap`, strongest first.
    ///
    /// Regardless of weight, the strongest leaf per last claim scan at or
    /// after `window_start` survives, as does the strongest leaf with no
    /// claim in the window at all. Those leaves keep the window association
    /// problem feasible: every track can still opt out of the window, and a
    /// measurement's own seed track keeps a leaf claiming it alone.
    pub fn prune_leaves(&mut self, min_rel_log_w: f64, cap: usize, window_start: u32) {
        if self.hyps.len() <= 1 {
            return;
        }
        let max = self
            .hyps
            .iter()
            .map(|h| h.log_w)
            .fold(f64::NEG_INFINITY, f64::max);
        // last claim scan inside the window, or None for an opt-out leaf
        let claim_end = |h: &LocalHypothesis| {
            h.assoc
                .iter()
                .rev()
                .find(|(s, _)| *s >= window_start)
                .map(|(s, _)| *s)
        };
        let mut best_per_end: HashMap<Option<u32>, (f64, u32)> = HashMap::new();
        for h in &self.hyps {
            let entry = best_per_end
                .entry(claim_end(h))
                .or_insert((f64::NEG_INFINITY, u32::MAX));
            if h.log_w > entry.0 || (h.log_w == entry.0 && h.id < entry.1) {
                *entry = (h.log_w, h.id);
            }
        }
        let protected: Vec<u32> = best_per_end.values().map(|(_, id)| *id).collect();
        self.hyps
            .retain(|h| protected.contains(&h.id) || h.log_w - max >= min_rel_log_w);
        if self.hyps.len() > cap {
            self.hyps.sort_by(|a, b| {
                protected
                    .contains(&b.id)
                    .cmp(&protected.contains(&a.id))
                    .then(b.log_w.total_cmp(&a.log_w))
                    .then(a.id.cmp(&b.id))
            });
            self.hyps.truncate(cap.max(protected.len()));
            self.hyps.sort_by_key(|h| h.id);
        }
    }

    /// Records this scan's leaf ids in every ancestry trail, keeping the
    /// last `keep` entries.
    pub fn finish_scan(&mut self, k: u32, keep: usize) {
        for h in &mut self.hyps {
            h.ancestry.push((k, h.id));
            if h.ancestry.len() > keep {
                let drop = h.ancestry.len() - keep;
                h.ancestry.drain(..drop);
            }
        }
    }

    pub fn never_detected(&self) -> bool {
        self.hyps.iter().all(|h| h.assoc.is_empty())
    }

    pub fn only_nonexistent(&self) -> bool {
        self.hyps.iter().all(|h| h.bern.is_none())
    }

    /// Every leaf is either non-existent or has negligible existence.
    pub fn effectively_dead(&self) -> bool {
        self.hyps
            .iter()
            .all(|h| h.bern.as_ref().is_none_or(|b| b.r < DEAD_EXISTENCE))
    }

    /// Any leaf claiming a measurement at or after `window_start`?
    pub fn has_assoc_since(&self, window_start: u32) -> bool {
        self.hyps
            .iter()
            .any(|h| h.assoc.last().is_some_and(|(s, _)| *s >= window_start))
    }
}

/// A joint choice of one leaf per track.
#[derive(Clone, Debug)]
pub struct GlobalHypothesis {
    /// Log-weight, normalized across the enumerated global set.
    pub log_w: f64,
    /// (track id, leaf id), in track order.
    pub choice: Vec<(u32, u32)>,
}

/// Unnormalized log-weight of a joint choice, validating that the claimed
/// measurements are pairwise disjoint over the window (and, in equality
/// mode, cover it).
pub fn global_log_weight(
    tracks: &[Track],
    choice: &[(u32, u32)],
    scans: &[(u32, u32)],
    mode: ConstraintMode,
) -> Result<f64> {
    if choice.len() != tracks.len() {
        return Err(Error::Contract(format!(
            "choice covers {} tracks, table has {}",
            choice.len(),
            tracks.len()
        )));
    }
    let mut log_w = 0.0;
    let mut claimed: Vec<Vec<bool>> = scans.iter().map(|(_, m)| vec![false; *m as usize]).collect();
    for (track_id, hyp_id) in choice {
        let track = tracks
            .iter()
            .find(|t| t.id == *track_id)
            .ok_or_else(|| Error::Contract(format!("choice names unknown track {track_id}")))?;
        let hyp = track
            .hyp_by_id(*hyp_id)
            .ok_or_else(|| Error::Contract(format!("track {track_id} has no leaf {hyp_id}")))?;
        log_w += hyp.log_w;
        for (s, j) in &hyp.assoc {
            if let Some(si) = scans.iter().position(|(ss, _)| ss == s) {
                let slot = &mut claimed[si][*j as usize];
                if *slot {
                    return Err(Error::InvalidAssociation(format!(
                        "measurement {j} of scan {s} claimed twice"
                    )));
                }
                *slot = true;
            }
        }
    }
    if mode == ConstraintMode::Equality {
        for (si, (s, _)) in scans.iter().enumerate() {
            if let Some(j) = claimed[si].iter().position(|c| !c) {
                return Err(Error::InvalidAssociation(format!(
                    "measurement {j} of scan {s} claimed by no track"
                )));
            }
        }
    }
    Ok(log_w)
}

/// Lays the current leaves out as a multi-frame assignment problem over the
/// window `scans`. Leaf costs are negative log-weights; associations are
/// restricted to window scans.
pub fn build_multiframe_problem(
    tracks: &[Track],
    scans: &[(u32, u32)],
    mode: ConstraintMode,
) -> MultiFrameProblem {
    let columns = tracks
        .iter()
        .map(|t| TrackColumn {
            track_id: t.id,
            created_at: t.created_at,
            leaves: t
                .hyps
                .iter()
                .map(|h| LeafCost {
                    hyp_id: h.id,
                    cost: -h.log_w,
                    assoc: h
                        .assoc
                        .iter()
                        .filter(|(s, _)| scans.iter().any(|(ss, _)| ss == s))
                        .copied()
                        .collect(),
                })
                .collect(),
        })
        .collect();
    MultiFrameProblem {
        mode,
        scans: scans.to_vec(),
        tracks: columns,
    }
}

/// Maps a problem-index selection back to (track id, leaf id) pairs.
pub fn selection_to_choice(problem: &MultiFrameProblem, selection: &[usize]) -> Vec<(u32, u32)> {
    selection
        .iter()
        .enumerate()
        .map(|(t, &l)| {
            (
                problem.tracks[t].track_id,
                problem.tracks[t].leaves[l].hyp_id,
            )
        })
        .collect()
}

/// Deletes every leaf whose ancestor at scan `k - n` differs from the best
/// global's ancestor on the same track, then drops tracks that no longer
/// exist under any surviving leaf. Leaf weights are renormalized per track.
pub fn n_scan_prune(
    tracks: &mut Vec<Track>,
    a_star: &[(u32, u32)],
    n: u32,
    k: u32,
) -> Result<()> {
    if n >= k {
        return Ok(());
    }
    let cut = k - n;
    for track in tracks.iter_mut() {
        let chosen_id = a_star
            .iter()
            .find(|(tid, _)| *tid == track.id)
            .map(|(_, hid)| *hid)
            .ok_or_else(|| {
                Error::Contract(format!("best global misses track {}", track.id))
            })?;
        let chosen = track
            .hyp_by_id(chosen_id)
            .ok_or_else(|| Error::Contract(format!("track {} has no leaf {chosen_id}", track.id)))?;
        // at prune time ancestry runs through scan k-1; cut >= k compares
        // the fresh leaves themselves
        let key = |h: &LocalHypothesis| {
            if cut >= k {
                Some(h.id)
            } else {
                h.ancestor_at(cut)
            }
        };
        let Some(want) = key(chosen) else {
            continue; // track younger than the cut: nothing resolved yet
        };
        track.hyps.retain(|h| key(h) == Some(want));
        track.renormalize_leaves();
    }
    tracks.retain(|t| !t.only_nonexistent());
    Ok(())
}

/// Removes tracks the window no longer constrains and that cannot matter
/// for estimation: existence everywhere below threshold with no window
/// claims, or birth tracks never detected within `n` scans.
pub fn sweep_tracks(tracks: &mut Vec<Track>, k: u32, n: u32, window_start: u32) {
    tracks.retain(|t| {
        if t.only_nonexistent() {
            return false;
        }
        if t.effectively_dead() && !t.has_assoc_since(window_start) {
            return false;
        }
        if t.never_detected() && k.saturating_sub(t.created_at) > n {
            return false;
        }
        true
    });
}

/// Node budget for materializing the reported global list. Tie-dense windows
/// would otherwise burn the full solver budget on hypotheses nothing
/// downstream consumes; the enumeration truncates instead.
const GLOBAL_ENUM_NODE_CAP: usize = 100_000;

/// The `cap` heaviest globals consistent with the window constraints,
/// normalized so their weights sum to one. Tie-dense windows may truncate
/// the enumeration, so fewer than `cap` can come back; `seed` (the window
/// solver's best choice, as (track id, leaf id) pairs) guarantees the list
/// is never empty and its head never worse than the seed.
pub fn enumerate_globals(
    tracks: &[Track],
    scans: &[(u32, u32)],
    mode: ConstraintMode,
    cap: usize,
    node_cap: usize,
    seed: Option<&[(u32, u32)]>,
) -> Result<Vec<GlobalHypothesis>> {
    let problem = build_multiframe_problem(tracks, scans, mode);
    let seed_selection: Option<Vec<usize>> = seed.and_then(|pairs| {
        problem
            .tracks
            .iter()
            .map(|col| {
                let (_, hyp) = pairs.iter().find(|(tid, _)| *tid == col.track_id)?;
                col.leaves.iter().position(|l| l.hyp_id == *hyp)
            })
            .collect()
    });
    let selections = assignment::enumerate_best(
        &problem,
        cap,
        node_cap.min(GLOBAL_ENUM_NODE_CAP),
        seed_selection.as_deref(),
    )?;
    if selections.is_empty() {
        return Err(Error::NoFeasiblePrimal {
            report: Box::new(crate::assignment::SolveReport {
                selection: Vec::new(),
                best_primal: f64::INFINITY,
                dual_bound: f64::NEG_INFINITY,
                gap: f64::INFINITY,
                iterations: 0,
                converged: false,
            }),
        });
    }
    let log_ws: Vec<f64> = selections.iter().map(|(_, cost)| -cost).collect();
    let norm = logsumexp(&log_ws);
    Ok(selections
        .iter()
        .zip(&log_ws)
        .map(|((sel, _), lw)| GlobalHypothesis {
            log_w: lw - norm,
            choice: selection_to_choice(&problem, sel),
        })
        .collect())
}

/// Spawns the scan-`k` children of every leaf of `track`: a misdetection
/// child per existing leaf and, when existence is appreciable, one detection
/// child per gated measurement. Non-existent leaves pass through unchanged.
pub(crate) fn spawn_scan_children(
    track: &mut Track,
    meas: &MeasurementModel,
    zs: &[DVector<f64>],
    k: u32,
    gate: bool,
) -> Result<()> {
    let parents = std::mem::take(&mut track.hyps);
    let mut children = Vec::with_capacity(parents.len());
    for parent in &parents {
        let Some(bern) = &parent.bern else {
            children.push(parent.clone());
            continue;
        };
        let (missed, delta) = bern.update_miss(meas, k);
        let id = track.alloc_id();
        children.push(parent.child(id, delta, Some(missed), None));

        if meas.pd > 0.0 && bern.r >= MIN_DETECT_EXISTENCE && bern.mix.alive_mass(k) > 0.0 {
            for (j, z) in zs.iter().enumerate() {
                if gate && !bern.gates(meas, z, k)? {
                    continue;
                }
                let (detected, delta) =
                    bern.update_detect(meas, z, k, meas.log_clutter_norm())?;
                let id = track.alloc_id();
                children.push(parent.child(id, delta, Some(detected), Some((k, j as u32))));
            }
        }
    }
    track.hyps = children;
    Ok(())
}

/// Structured text dump of the whole forest, one record per leaf.
pub fn dump_forest(tracks: &[Track]) -> String {
    let mut out = String::from("forest v1\n");
    for t in tracks {
        out.push_str(&format!(
            "track {} created {} leaves {}\n",
            t.id,
            t.created_at,
            t.hyps.len()
        ));
        for h in &t.hyps {
            out.push_str(&format!("leaf {} ", h.id));
            match h.parent {
                Some(p) => out.push_str(&format!("parent {p} ")),
                None => out.push_str("root "),
            }
            out.push_str(&format!("logw {} ", h.log_w));
            match &h.bern {
                Some(b) => {
                    let (beta, eps) = b
                        .mix
                        .comps
                        .first()
                        .map(|(_, t)| (t.beta, t.eps))
                        .unwrap_or((0, 0));
                    out.push_str(&format!("r {} beta {beta} eps {eps} ", b.r));
                }
                None => out.push_str("absent "),
            }
            out.push_str("ancestry");
            for (s, a) in &h.ancestry {
                out.push_str(&format!(" {s}:{a}"));
            }
            out.push_str(" assoc");
            for (s, j) in &h.assoc {
                out.push_str(&format!(" {s}:{j}"));
            }
            out.push('\n');
        }
    }
    out
}
