//! Data-association solvers.
//!
//! The multi-frame problem picks one local-hypothesis leaf per track so that
//! every measurement in the unresolved window is claimed exactly once
//! (equality mode) or at most once (subset mode), minimizing total cost
//! (costs are negative log weights). It is attacked by Lagrangian dual
//! decomposition: one 2-D assignment subproblem per scan, coupled through
//! multipliers that are driven by a projected subgradient with Polyak step
//! sizes. Primal solutions are recovered with depth-first branch and bound,
//! which also serves as the exact fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in cost for a track that has no leaf avoiding a given scan, so that
/// the subproblem strongly prefers assigning it a measurement there.
pub const MISS_SENTINEL: f64 = 1e9;

/// Maximum measurements per scan the solvers accept (window masks are u64).
pub const MAX_MEAS_PER_SCAN: usize = 64;

const DEFAULT_NODE_CAP: usize = 2_000_000;

/// Minimum-cost assignment of rows to columns by shortest augmenting paths
/// with dual potentials. Entries may be `f64::INFINITY` (forbidden). When
/// `allow_unassigned_rows` is set, each row may also remain unmatched at zero
/// cost (an explicit per-row sink); otherwise every row must be matched.
///
/// Returns the per-row column choice and the total cost, summed in row order.
pub fn solve_2d_assignment(
    costs: &[Vec<f64>],
    allow_unassigned_rows: bool,
) -> Result<(Vec<Option<usize>>, f64)> {
    let m = costs.len();
    if m == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let n_real = costs[0].len();
    if costs.iter().any(|r| r.len() != n_real) {
        return Err(Error::Contract("ragged cost matrix".into()));
    }
    let n = if allow_unassigned_rows { n_real + m } else { n_real };
    if m > n {
        return Err(Error::Infeasible(format!(
            "{m} rows cannot all be assigned to {n} columns"
        )));
    }
    let cost = |i: usize, j: usize| -> f64 {
        if j < n_real {
            costs[i][j]
        } else if j - n_real == i {
            0.0
        } else {
            f64::INFINITY
        }
    };

    // 1-indexed Jonker-Volgenant style augmentation.
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched = vec![0usize; n + 1]; // column -> row, 0 when free
    let mut way = vec![0usize; n + 1];
    for i in 1..=m {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::Infeasible(format!(
                    "row {} cannot reach any free column",
                    i - 1
                )));
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![None; m];
    for j in 1..=n {
        if matched[j] != 0 && j - 1 < n_real {
            assign[matched[j] - 1] = Some(j - 1);
        }
    }
    let mut total = 0.0;
    for (i, a) in assign.iter().enumerate() {
        if let Some(j) = a {
            total += costs[i][*j];
        }
    }
    Ok((assign, total))
}

/// How window measurements must be covered by the chosen leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintMode {
    /// Every measurement is claimed by exactly one track.
    Equality,
    /// Every measurement is claimed by at most one track.
    Subset,
}

/// One selectable leaf of a track: its cost and the window measurements its
/// association history claims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafCost {
    pub hyp_id: u32,
    pub cost: f64,
    /// (scan, measurement index) pairs, scans strictly ascending.
    pub assoc: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackColumn {
    pub track_id: u32,
    pub created_at: u32,
    pub leaves: Vec<LeafCost>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiFrameProblem {
    pub mode: ConstraintMode,
    /// (scan index, measurement count) for the unresolved window, ascending.
    pub scans: Vec<(u32, u32)>,
    pub tracks: Vec<TrackColumn>,
}

impl MultiFrameProblem {
    pub fn check(&self) -> Result<()> {
        for w in self.scans.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Contract("window scans not ascending".into()));
            }
        }
        for (s, m) in &self.scans {
            if *m as usize > MAX_MEAS_PER_SCAN {
                return Err(Error::Capability(format!(
                    "scan {s} has {m} measurements, more than {MAX_MEAS_PER_SCAN}"
                )));
            }
        }
        for t in &self.tracks {
            if t.leaves.is_empty() {
                return Err(Error::Contract(format!("track {} has no leaves", t.track_id)));
            }
            for l in &t.leaves {
                let mut last_scan = None;
                for (s, j) in &l.assoc {
                    if last_scan.is_some_and(|p| *s <= p) {
                        return Err(Error::InvalidAssociation(format!(
                            "leaf {} of track {} has unsorted or duplicate scans",
                            l.hyp_id, t.track_id
                        )));
                    }
                    last_scan = Some(*s);
                    match self.scans.iter().find(|(ss, _)| ss == s) {
                        None => {
                            return Err(Error::InvalidAssociation(format!(
                                "leaf {} of track {} references scan {} outside the window",
                                l.hyp_id, t.track_id, s
                            )))
                        }
                        Some((_, m)) if j >= m => {
                            return Err(Error::InvalidAssociation(format!(
                                "leaf {} of track {} references measurement {} of scan {} (count {})",
                                l.hyp_id, t.track_id, j, s, m
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn selection_cost(&self, selection: &[usize]) -> f64 {
        selection
            .iter()
            .enumerate()
            .map(|(t, &l)| self.tracks[t].leaves[l].cost)
            .sum()
    }

    /// Disjointness plus, in equality mode, full coverage of the window.
    pub fn selection_feasible(&self, selection: &[usize]) -> bool {
        let mut used = vec![0u64; self.scans.len()];
        for (t, &l) in selection.iter().enumerate() {
            for (s, j) in &self.tracks[t].leaves[l].assoc {
                let si = self.scan_pos(*s).unwrap();
                let bit = 1u64 << j;
                if used[si] & bit != 0 {
                    return false;
                }
                used[si] |= bit;
            }
        }
        if self.mode == ConstraintMode::Equality {
            for (si, (_, m)) in self.scans.iter().enumerate() {
                if used[si] != full_mask(*m) {
                    return false;
                }
            }
        }
        true
    }

    fn scan_pos(&self, scan: u32) -> Option<usize> {
        self.scans.iter().position(|(s, _)| *s == scan)
    }

    /// Plain text serialization; floats survive a round trip exactly.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::from("multiframe v1\n");
        out.push_str(match self.mode {
            ConstraintMode::Equality => "mode equality\n",
            ConstraintMode::Subset => "mode subset\n",
        });
        for (s, m) in &self.scans {
            out.push_str(&format!("scan {s} {m}\n"));
        }
        for t in &self.tracks {
            out.push_str(&format!("track {} created {}\n", t.track_id, t.created_at));
            for l in &t.leaves {
                out.push_str(&format!("leaf {} cost {} assoc", l.hyp_id, l.cost));
                for (s, j) in &l.assoc {
                    out.push_str(&format!(" {s}:{j}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let bad = |line: &str, why: &str| {
            Error::Contract(format!("snapshot parse error at '{line}': {why}"))
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some("multiframe v1") => {}
            _ => return Err(Error::Contract("snapshot missing 'multiframe v1' header".into())),
        }
        let mode = match lines.next() {
            Some("mode equality") => ConstraintMode::Equality,
            Some("mode subset") => ConstraintMode::Subset,
            other => return Err(bad(other.unwrap_or(""), "expected mode line")),
        };
        let mut scans = Vec::new();
        let mut tracks: Vec<TrackColumn> = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.first() {
                Some(&"scan") if parts.len() == 3 => {
                    let s = parts[1].parse().map_err(|_| bad(line, "scan index"))?;
                    let m = parts[2].parse().map_err(|_| bad(line, "measurement count"))?;
                    scans.push((s, m));
                }
                Some(&"track") if parts.len() == 4 && parts[2] == "created" => {
                    tracks.push(TrackColumn {
                        track_id: parts[1].parse().map_err(|_| bad(line, "track id"))?,
                        created_at: parts[3].parse().map_err(|_| bad(line, "created scan"))?,
                        leaves: Vec::new(),
                    });
                }
                Some(&"leaf") if parts.len() >= 4 && parts[2] == "cost" && parts[4.min(parts.len() - 1)] == "assoc" => {
                    let track = tracks
                        .last_mut()
                        .ok_or_else(|| bad(line, "leaf before any track"))?;
                    let mut assoc = Vec::new();
                    for p in &parts[5..] {
                        let (s, j) = p
                            .split_once(':')
                            .ok_or_else(|| bad(line, "assoc entry missing ':'"))?;
                        assoc.push((
                            s.parse().map_err(|_| bad(line, "assoc scan"))?,
                            j.parse().map_err(|_| bad(line, "assoc measurement"))?,
                        ));
                    }
                    track.leaves.push(LeafCost {
                        hyp_id: parts[1].parse().map_err(|_| bad(line, "leaf id"))?,
                        cost: parts[3].parse().map_err(|_| bad(line, "leaf cost"))?,
                        assoc,
                    });
                }
                _ => return Err(bad(line, "unrecognized record")),
            }
        }
        let p = Self { mode, scans, tracks };
        p.check()?;
        Ok(p)
    }
}

fn full_mask(m: u32) -> u64 {
    if m == 0 {
        0
    } else {
        (u64::MAX) >> (64 - m)
    }
}

/// Per-scan Lagrange multipliers, one per (scan, track, leaf). The invariant
/// is that they sum to zero over scans for every leaf.
#[derive(Clone, Debug)]
pub struct Multipliers {
    pub delta: Vec<Vec<Vec<f64>>>,
}

impl Multipliers {
    pub fn zeros(problem: &MultiFrameProblem) -> Self {
        let per_scan: Vec<Vec<f64>> = problem
            .tracks
            .iter()
            .map(|t| vec![0.0; t.leaves.len()])
            .collect();
        Self {
            delta: vec![per_scan; problem.scans.len()],
        }
    }

    /// Removes the per-leaf mean over scans.
    pub fn project(&mut self) {
        let w = self.delta.len();
        if w == 0 {
            return;
        }
        for t in 0..self.delta[0].len() {
            for l in 0..self.delta[0][t].len() {
                let mean: f64 = self.delta.iter().map(|d| d[t][l]).sum::<f64>() / w as f64;
                for d in &mut self.delta {
                    d[t][l] -= mean;
                }
            }
        }
    }
}

/// Cost structure of one scan's 2-D subproblem under given multipliers.
pub struct ScanSubproblem {
    pub scan: u32,
    /// Adjusted leaf costs: cost / n_subproblems + delta.
    pub adjusted: Vec<Vec<f64>>,
    /// entries[j][t]: best claiming adjusted cost minus the miss alternative.
    pub entries: Vec<Vec<f64>>,
    /// Arg-min claiming leaf per entry.
    pub claim_leaf: Vec<Vec<Option<usize>>>,
    /// Best leaf without any measurement from this scan, per track.
    pub miss_leaf: Vec<Option<usize>>,
    /// Its adjusted cost, or MISS_SENTINEL when no such leaf exists.
    pub miss_cost: Vec<f64>,
    /// Unconstrained arg-min leaf per track.
    pub all_min_leaf: Vec<usize>,
}

/// Builds the 2-D subproblem for `scans[scan_idx]`.
pub fn subproblem_costs(
    problem: &MultiFrameProblem,
    scan_idx: usize,
    multipliers: &Multipliers,
    n_subproblems: usize,
) -> ScanSubproblem {
    let (scan, m) = problem.scans[scan_idx];
    let m = m as usize;
    let nt = problem.tracks.len();
    let div = n_subproblems.max(1) as f64;
    let delta = &multipliers.delta[scan_idx];

    let mut adjusted = Vec::with_capacity(nt);
    let mut entries = vec![vec![f64::INFINITY; nt]; m];
    let mut claim_leaf = vec![vec![None; nt]; m];
    let mut miss_leaf = vec![None; nt];
    let mut miss_cost = vec![MISS_SENTINEL; nt];
    let mut all_min_leaf = vec![0usize; nt];

    for (t, track) in problem.tracks.iter().enumerate() {
        let mut adj = Vec::with_capacity(track.leaves.len());
        let mut best_all = f64::INFINITY;
        let mut best_claim = vec![f64::INFINITY; m];
        for (l, leaf) in track.leaves.iter().enumerate() {
            let a = leaf.cost / div + delta[t][l];
            adj.push(a);
            if a < best_all {
                best_all = a;
                all_min_leaf[t] = l;
            }
            match leaf.assoc.iter().find(|(s, _)| *s == scan) {
                Some((_, j)) => {
                    let j = *j as usize;
                    if a < best_claim[j] {
                        best_claim[j] = a;
                        claim_leaf[j][t] = Some(l);
                    }
                }
                None => {
                    if miss_leaf[t].is_none() || a < miss_cost[t] {
                        miss_leaf[t] = Some(l);
                        miss_cost[t] = a;
                    }
                }
            }
        }
        for j in 0..m {
            if best_claim[j].is_finite() {
                entries[j][t] = best_claim[j] - miss_cost[t];
            }
        }
        adjusted.push(adj);
    }

    ScanSubproblem {
        scan,
        adjusted,
        entries,
        claim_leaf,
        miss_leaf,
        miss_cost,
        all_min_leaf,
    }
}

/// Solves one scan subproblem: a leaf per track honouring this scan's
/// measurement constraint. Returns the selection and its adjusted cost.
pub fn solve_scan_subproblem(
    problem: &MultiFrameProblem,
    sub: &ScanSubproblem,
) -> Result<(Vec<usize>, f64)> {
    let nt = problem.tracks.len();
    let (assign, _) = solve_2d_assignment(&sub.entries, problem.mode == ConstraintMode::Subset)?;

    let mut selection: Vec<usize> = (0..nt)
        .map(|t| match sub.miss_leaf[t] {
            Some(l) => l,
            // every leaf of this track claims some measurement of this scan;
            // if the assignment left it out anyway, fall back to its minimum
            None => sub.all_min_leaf[t],
        })
        .collect();
    for (j, a) in assign.iter().enumerate() {
        if let Some(t) = a {
            selection[*t] = sub.claim_leaf[j][*t]
                .expect("assignment picked an entry with no claiming leaf");
        }
    }
    let value = selection
        .iter()
        .enumerate()
        .map(|(t, &l)| sub.adjusted[t][l])
        .sum();
    Ok((selection, value))
}

#[derive(Clone, Copy, Debug)]
pub struct SolverParams {
    pub gap_tol: f64,
    pub max_iters: u32,
    pub node_cap: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gap_tol: 0.01,
            max_iters: 200,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    /// Chosen leaf per track; empty when nothing feasible was found.
    pub selection: Vec<usize>,
    pub best_primal: f64,
    pub dual_bound: f64,
    pub gap: f64,
    pub iterations: u32,
    pub converged: bool,
}

struct Search<'a> {
    problem: &'a MultiFrameProblem,
    /// Track indices in expansion order (most constrained first).
    order: Vec<usize>,
    /// leaf_order[d]: leaf indices of track order[d], cheapest first.
    leaf_order: Vec<Vec<usize>>,
    /// suffix_min[d]: sum of unconstrained leaf minima over order[d..].
    suffix_min: Vec<f64>,
    /// claim_masks[d][li][si]: measurement bits leaf li of track order[d]
    /// claims in window scan si.
    claim_masks: Vec<Vec<Vec<u64>>>,
    /// cover_after[d][si]: every measurement bit some track at depth >= d
    /// can still claim, ignoring conflicts.
    cover_after: Vec<Vec<u64>>,
    /// cap_after[d]: upper bound on how many claims tracks at depth >= d can
    /// jointly make (each contributes its single most claiming leaf).
    cap_after: Vec<u32>,
    /// Depths of tracks whose every leaf claims something; they can starve
    /// when claims taken elsewhere knock out all their leaves.
    forced_depths: Vec<usize>,
}

impl<'a> Search<'a> {
    fn new(problem: &'a MultiFrameProblem, fixed: &[Option<usize>]) -> Self {
        let has_free_leaf = |t: usize| {
            problem.tracks[t].leaves.iter().any(|l| l.assoc.is_empty())
        };
        let mut order: Vec<usize> = (0..problem.tracks.len())
            .filter(|t| fixed[*t].is_none())
            .collect();
        // Tracks whose every leaf claims something are the bottleneck; decide
        // them first so their conflicts surface near the root.
        order.sort_by_key(|&t| (has_free_leaf(t), problem.tracks[t].leaves.len()));

        let leaf_order: Vec<Vec<usize>> = order
            .iter()
            .map(|&t| {
                let leaves = &problem.tracks[t].leaves;
                let mut idx: Vec<usize> = (0..leaves.len()).collect();
                idx.sort_by(|&a, &b| leaves[a].cost.total_cmp(&leaves[b].cost).then(a.cmp(&b)));
                idx
            })
            .collect();

        let mut suffix_min = vec![0.0; order.len() + 1];
        for d in (0..order.len()).rev() {
            let best = problem.tracks[order[d]]
                .leaves
                .iter()
                .map(|l| l.cost)
                .fold(f64::INFINITY, f64::min);
            suffix_min[d] = suffix_min[d + 1] + best;
        }

        let n_scans = problem.scans.len();
        let claim_masks: Vec<Vec<Vec<u64>>> = order
            .iter()
            .map(|&t| {
                problem.tracks[t]
                    .leaves
                    .iter()
                    .map(|leaf| {
                        let mut masks = vec![0u64; n_scans];
                        for (s, j) in &leaf.assoc {
                            masks[problem.scan_pos(*s).unwrap()] |= 1u64 << j;
                        }
                        masks
                    })
                    .collect()
            })
            .collect();

        let mut cover_after = vec![vec![0u64; n_scans]; order.len() + 1];
        let mut cap_after = vec![0u32; order.len() + 1];
        for d in (0..order.len()).rev() {
            let mut union = cover_after[d + 1].clone();
            let mut best = 0u32;
            for masks in &claim_masks[d] {
                let mut claims = 0u32;
                for (si, m) in masks.iter().enumerate() {
                    union[si] |= m;
                    claims += m.count_ones();
                }
                best = best.max(claims);
            }
            cover_after[d] = union;
            cap_after[d] = cap_after[d + 1] + best;
        }
        let forced_depths: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &t)| !has_free_leaf(t))
            .map(|(d, _)| d)
            .collect();

        Self {
            problem,
            order,
            leaf_order,
            suffix_min,
            claim_masks,
            cover_after,
            cap_after,
            forced_depths,
        }
    }

    /// In equality mode, a node is dead once some unclaimed measurement is
    /// beyond every remaining track's reach, or once the remaining tracks
    /// cannot jointly supply enough claims (each contributes at most one
    /// leaf). Without the capacity cut, two unclaimed measurements whose
    /// only claimer is the same track through mutually exclusive leaves are
    /// caught only at the goal, after an exponential tail of backtracking.
    /// Tracks that must claim but whose leaves all conflict with `used`
    /// starve the same way, so those few get an exact compatibility scan.
    fn coverage_ok(&self, used: &[u64], next_depth: usize) -> bool {
        if self.problem.mode != ConstraintMode::Equality {
            return true;
        }
        let mut total = 0u32;
        for (si, (_, m)) in self.problem.scans.iter().enumerate() {
            let missing = full_mask(*m) & !used[si];
            if missing & !self.cover_after[next_depth][si] != 0 {
                return false;
            }
            total += missing.count_ones();
        }
        if total > self.cap_after[next_depth] {
            return false;
        }
        for &d in &self.forced_depths {
            if d < next_depth {
                continue;
            }
            let starved = !self.claim_masks[d]
                .iter()
                .any(|leaf| leaf.iter().zip(used).all(|(m, u)| m & u == 0));
            if starved {
                return false;
            }
        }
        true
    }

    fn leaf_compatible(&self, leaf: &LeafCost, used: &[u64]) -> Option<Vec<u64>> {
        let mut new_used = used.to_vec();
        for (s, j) in &leaf.assoc {
            let si = self.problem.scan_pos(*s).unwrap();
            let bit = 1u64 << j;
            if new_used[si] & bit != 0 {
                return None;
            }
            new_used[si] |= bit;
        }
        Some(new_used)
    }

    fn goal_feasible(&self, used: &[u64]) -> bool {
        if self.problem.mode != ConstraintMode::Equality {
            return true;
        }
        self.problem
            .scans
            .iter()
            .enumerate()
            .all(|(si, (_, m))| used[si] == full_mask(*m))
    }
}

/// Depth-first branch and bound state. Diving first reaches feasible
/// selections quickly; their costs then prune near-tie plateaus that would
/// flood a best-first frontier.
struct Dfs<'a> {
    search: Search<'a>,
    want: usize,
    node_cap: usize,
    nodes: usize,
    max_depth: usize,
    /// Caller's cap; selections at or above it are never collected.
    upper_bound: f64,
    /// Relative improvement a subtree must promise over the incumbent set
    /// before it gets explored. Zero keeps the search exact; a positive
    /// margin skips near-tie plateaus (clutter association permutations
    /// with indistinguishable weight) that are exponential to enumerate.
    improve_margin: f64,
    /// (cost, choice per depth), unordered, at most `want` entries.
    found: Vec<(f64, Vec<usize>)>,
    /// Cost of the worst kept selection once `found` is full.
    worst_kept: f64,
    truncated: bool,
}

impl Dfs<'_> {
    fn prune_at(&self) -> f64 {
        if self.found.len() == self.want {
            let slack = self.improve_margin * self.worst_kept.abs().max(1.0);
            (self.worst_kept - slack).min(self.upper_bound)
        } else {
            self.upper_bound
        }
    }

    fn record(&mut self, cost: f64, choice: &[usize]) {
        // seeds may coincide with selections the dive reaches on its own
        if self.found.iter().any(|(_, c)| c.as_slice() == choice) {
            return;
        }
        if self.found.len() == self.want {
            let worst = self
                .found
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
                .map(|(i, _)| i)
                .unwrap();
            self.found.swap_remove(worst);
        }
        self.found.push((cost, choice.to_vec()));
        self.worst_kept = self
            .found
            .iter()
            .map(|(c, _)| *c)
            .fold(f64::NEG_INFINITY, f64::max);
    }

    fn dive(&mut self, depth: usize, cost: f64, used: &mut [u64], choice: &mut Vec<usize>) {
        self.nodes += 1;
        self.max_depth = self.max_depth.max(depth);
        if self.nodes > self.node_cap {
            self.truncated = true;
            return;
        }
        if depth == self.search.order.len() {
            if self.search.goal_feasible(used) {
                self.record(cost, choice);
            }
            return;
        }
        let t = self.search.order[depth];
        for li in 0..self.search.leaf_order[depth].len() {
            let l = self.search.leaf_order[depth][li];
            let leaf_cost = self.search.problem.tracks[t].leaves[l].cost;
            // leaves come cheapest first, so everything later only costs more
            if cost + leaf_cost + self.search.suffix_min[depth + 1] >= self.prune_at() {
                break;
            }
            let mut applied: Vec<(usize, u64)> = Vec::new();
            let mut ok = true;
            for (s, j) in &self.search.problem.tracks[t].leaves[l].assoc {
                let si = self.search.problem.scan_pos(*s).unwrap();
                let bit = 1u64 << j;
                if used[si] & bit != 0 {
                    ok = false;
                    break;
                }
                used[si] |= bit;
                applied.push((si, bit));
            }
            if ok && self.search.coverage_ok(used, depth + 1) {
                choice.push(l);
                self.dive(depth + 1, cost + leaf_cost, used, choice);
                choice.pop();
            }
            for (si, bit) in applied {
                used[si] &= !bit;
            }
            if self.truncated {
                return;
            }
        }
    }
}

/// Depth-first branch and bound over leaf selections. `fixed` pins some
/// tracks' leaves. Solutions costing `upper_bound` or more are ignored.
/// `seeds` are known selections used as starting incumbents; invalid or
/// out-of-bound seeds are skipped. The node spend is drawn from `budget` so
/// several searches can share one allotment. Returns up to `want` feasible
/// selections in nondecreasing cost order: the exact cheapest set (modulo
/// `improve_margin`) when the search finishes within budget, otherwise the
/// best found so far. Errors only when the budget dies with nothing in hand.
fn bounded_search(
    problem: &MultiFrameProblem,
    fixed: &[Option<usize>],
    upper_bound: f64,
    want: usize,
    improve_margin: f64,
    budget: &mut usize,
    seeds: &[Vec<usize>],
) -> Result<Vec<(Vec<usize>, f64)>> {
    if want == 0 {
        return Ok(Vec::new());
    }
    let node_cap = *budget;
    let search = Search::new(problem, fixed);
    let mut base_used = vec![0u64; problem.scans.len()];
    let mut base_cost = 0.0;
    for (t, f) in fixed.iter().enumerate() {
        if let Some(l) = *f {
            let leaf = &problem.tracks[t].leaves[l];
            match search.leaf_compatible(leaf, &base_used) {
                Some(u) => base_used = u,
                None => {
                    return Err(Error::Infeasible(
                        "fixed leaves claim the same measurement".into(),
                    ))
                }
            }
            base_cost += leaf.cost;
        }
    }

    let mut dfs = Dfs {
        search,
        want,
        node_cap,
        nodes: 0,
        max_depth: 0,
        upper_bound,
        improve_margin,
        found: Vec::new(),
        worst_kept: f64::INFINITY,
        truncated: false,
    };
    for seed in seeds {
        if seed.len() != problem.tracks.len()
            || seed
                .iter()
                .enumerate()
                .any(|(t, &l)| l >= problem.tracks[t].leaves.len())
            || fixed
                .iter()
                .enumerate()
                .any(|(t, f)| f.is_some_and(|l| seed[t] != l))
            || !problem.selection_feasible(seed)
        {
            continue;
        }
        let cost = problem.selection_cost(seed);
        if cost >= upper_bound {
            continue;
        }
        let choice: Vec<usize> = dfs.search.order.iter().map(|&t| seed[t]).collect();
        dfs.record(cost, &choice);
    }
    let mut choice = Vec::with_capacity(dfs.search.order.len());
    dfs.dive(0, base_cost, &mut base_used, &mut choice);
    *budget = budget.saturating_sub(dfs.nodes);

    if dfs.found.is_empty() {
        if dfs.truncated {
            let leaves: usize = problem.tracks.iter().map(|t| t.leaves.len()).sum();
            return Err(Error::Capability(format!(
                "assignment search exceeded {node_cap} nodes ({} tracks, {leaves} leaves, \
                 {} window scans, deepest dive {} of {})",
                problem.tracks.len(),
                problem.scans.len(),
                dfs.max_depth,
                dfs.search.order.len(),
            )));
        }
        return Ok(Vec::new());
    }
    let mut found = dfs.found;
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(found
        .into_iter()
        .map(|(cost, ch)| {
            let mut selection: Vec<usize> = fixed.iter().map(|f| f.unwrap_or(0)).collect();
            for (d, &t) in dfs.search.order.iter().enumerate() {
                selection[t] = ch[d];
            }
            (selection, cost)
        })
        .collect())
}


/// Builds a feasible equality-mode selection by sweeping the window scans in
/// order and solving one 2-D assignment per scan: measurements against the
/// tracks whose remaining leaves can still claim them, priced at the marginal
/// cost over staying unmatched. Tracks committed at a scan keep only the
/// leaves agreeing with that commitment, so the final per-track cheapest
/// leaves jointly cover every measurement exactly once.
///
/// Returns `None` when any step dead-ends; the caller falls back to the
/// exhaustive search. Quality is heuristic, the value is that branch and
/// bound starts with an incumbent instead of hunting for one across every
/// opt-out combination.
fn scan_sequential_cover(
    problem: &MultiFrameProblem,
    fixed: &[Option<usize>],
) -> Option<Vec<usize>> {
    let w = problem.scans.len();
    let mut fixed_used = vec![0u64; w];
    for (t, f) in fixed.iter().enumerate() {
        if let Some(l) = *f {
            for (s, j) in &problem.tracks[t].leaves[l].assoc {
                let si = problem.scan_pos(*s)?;
                let bit = 1u64 << j;
                if fixed_used[si] & bit != 0 {
                    return None;
                }
                fixed_used[si] |= bit;
            }
        }
    }

    let free: Vec<usize> = (0..problem.tracks.len())
        .filter(|t| fixed[*t].is_none())
        .collect();
    let mut allowed: Vec<Vec<usize>> = free
        .iter()
        .map(|&t| {
            problem.tracks[t]
                .leaves
                .iter()
                .enumerate()
                .filter(|(_, l)| {
                    l.assoc.iter().all(|(s, j)| {
                        problem
                            .scan_pos(*s)
                            .is_some_and(|si| fixed_used[si] & (1u64 << j) == 0)
                    })
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    if allowed.iter().any(|a| a.is_empty()) {
        return None;
    }

    for si in 0..w {
        let (scan, m) = problem.scans[si];
        let rows: Vec<u32> =
            (0..m).filter(|j| fixed_used[si] & (1u64 << j) == 0).collect();

        // claim_at[ci][li]: measurement leaf li of free track ci claims here
        let claim_at: Vec<Vec<Option<u32>>> = free
            .iter()
            .enumerate()
            .map(|(ci, &t)| {
                allowed[ci]
                    .iter()
                    .map(|&li| {
                        problem.tracks[t].leaves[li]
                            .assoc
                            .iter()
                            .find(|(s, _)| *s == scan)
                            .map(|(_, j)| *j)
                    })
                    .collect()
            })
            .collect();
        let stay: Vec<Option<f64>> = free
            .iter()
            .enumerate()
            .map(|(ci, &t)| {
                allowed[ci]
                    .iter()
                    .zip(&claim_at[ci])
                    .filter(|(_, c)| c.is_none())
                    .map(|(&li, _)| problem.tracks[t].leaves[li].cost)
                    .min_by(f64::total_cmp)
            })
            .collect();
        // columns with no stay option must be matched; a large bonus makes
        // the assignment prefer them whenever the rows allow it
        const MUST_BONUS: f64 = 1e6;
        let mut costs = vec![vec![f64::INFINITY; free.len()]; rows.len()];
        for (ci, &t) in free.iter().enumerate() {
            for (&li, c) in allowed[ci].iter().zip(&claim_at[ci]) {
                let Some(j) = c else { continue };
                let Some(ri) = rows.iter().position(|r| r == j) else {
                    continue;
                };
                let marginal = problem.tracks[t].leaves[li].cost
                    - stay[ci].unwrap_or(MUST_BONUS);
                costs[ri][ci] = costs[ri][ci].min(marginal);
            }
        }

        let (assign, _) = solve_2d_assignment(&costs, false).ok()?;
        let mut committed: Vec<Option<u32>> = vec![None; free.len()];
        for (ri, c) in assign.iter().enumerate() {
            committed[(*c)?] = Some(rows[ri]);
        }
        if stay
            .iter()
            .zip(&committed)
            .any(|(s, c)| s.is_none() && c.is_none())
        {
            return None;
        }
        for (ci, want) in committed.iter().enumerate() {
            let keep: Vec<usize> = allowed[ci]
                .iter()
                .zip(&claim_at[ci])
                .filter(|(_, c)| *c == want)
                .map(|(&li, _)| li)
                .collect();
            if keep.is_empty() {
                return None;
            }
            allowed[ci] = keep;
        }
    }

    let mut selection: Vec<usize> = fixed.iter().map(|f| f.unwrap_or(0)).collect();
    for (ci, &t) in free.iter().enumerate() {
        selection[t] = allowed[ci].iter().copied().min_by(|&a, &b| {
            problem.tracks[t].leaves[a]
                .cost
                .total_cmp(&problem.tracks[t].leaves[b].cost)
                .then(a.cmp(&b))
        })?;
    }
    problem.selection_feasible(&selection).then_some(selection)
}

/// Builds a feasible equality-mode selection from singleton leaves only:
/// each unclaimed window measurement is matched to a distinct track through
/// a leaf claiming exactly that measurement, and every unmatched track opts
/// out. Tracker windows guarantee such a cover exists (the track a
/// measurement spawned keeps its one-claim chain, and every track keeps an
/// opt-out leaf), so this succeeds where the scan sweep can dead-end.
fn singleton_cover_seed(
    problem: &MultiFrameProblem,
    fixed: &[Option<usize>],
) -> Option<Vec<usize>> {
    let w = problem.scans.len();
    let mut fixed_used = vec![0u64; w];
    for (t, f) in fixed.iter().enumerate() {
        if let Some(l) = *f {
            for (s, j) in &problem.tracks[t].leaves[l].assoc {
                let si = problem.scan_pos(*s)?;
                let bit = 1u64 << j;
                if fixed_used[si] & bit != 0 {
                    return None;
                }
                fixed_used[si] |= bit;
            }
        }
    }

    let free: Vec<usize> = (0..problem.tracks.len())
        .filter(|t| fixed[*t].is_none())
        .collect();
    let mut meas = Vec::new();
    for (si, &(scan, m)) in problem.scans.iter().enumerate() {
        for j in 0..m {
            if fixed_used[si] & (1u64 << j) == 0 {
                meas.push((scan, j));
            }
        }
    }
    if meas.len() > free.len() {
        return None;
    }

    let opt_out: Vec<Option<(usize, f64)>> = free
        .iter()
        .map(|&t| {
            problem.tracks[t]
                .leaves
                .iter()
                .enumerate()
                .filter(|(_, l)| l.assoc.is_empty())
                .map(|(li, l)| (li, l.cost))
                .min_by(|a, b| a.1.total_cmp(&b.1))
        })
        .collect();

    // tracks with no opt-out leaf must win a measurement; the bonus makes
    // the matching spend rows on them first
    const MUST_BONUS: f64 = 1e6;
    let mut costs = vec![vec![f64::INFINITY; free.len()]; meas.len()];
    let mut picks = vec![vec![usize::MAX; free.len()]; meas.len()];
    for (ci, &t) in free.iter().enumerate() {
        let base = opt_out[ci].map(|(_, c)| c).unwrap_or(MUST_BONUS);
        for (li, leaf) in problem.tracks[t].leaves.iter().enumerate() {
            let [claim] = leaf.assoc.as_slice() else { continue };
            let Some(mi) = meas.iter().position(|m| m == claim) else {
                continue;
            };
            let marginal = leaf.cost - base;
            if marginal < costs[mi][ci] {
                costs[mi][ci] = marginal;
                picks[mi][ci] = li;
            }
        }
    }

    let (assign, _) = solve_2d_assignment(&costs, false).ok()?;
    let mut selection: Vec<usize> = fixed.iter().map(|f| f.unwrap_or(0)).collect();
    let mut matched = vec![false; free.len()];
    for (mi, c) in assign.iter().enumerate() {
        let ci = (*c)?;
        selection[free[ci]] = picks[mi][ci];
        matched[ci] = true;
    }
    for (ci, &t) in free.iter().enumerate() {
        if !matched[ci] {
            selection[t] = opt_out[ci]?.0;
        }
    }
    problem.selection_feasible(&selection).then_some(selection)
}

/// Seeded recovery: constructive covers first (equality mode), then branch
/// and bound sharpened by `improve_margin`, drawing nodes from `budget`.
fn recover_within(
    problem: &MultiFrameProblem,
    fixed: &[Option<usize>],
    improve_margin: f64,
    budget: &mut usize,
) -> Result<(Vec<usize>, f64)> {
    let mut seeds = Vec::new();
    if problem.mode == ConstraintMode::Equality {
        if let Some(sel) = scan_sequential_cover(problem, fixed) {
            seeds.push(sel);
        }
        if let Some(sel) = singleton_cover_seed(problem, fixed) {
            seeds.push(sel);
        }
    }
    bounded_search(problem, fixed, f64::INFINITY, 1, improve_margin, budget, &seeds)?
        .pop()
        .ok_or_else(|| Error::Infeasible("no feasible leaf selection".into()))
}

/// Minimum-cost completion given some fixed tracks: exact when the node
/// budget suffices, otherwise the best incumbent found.
pub fn branch_and_bound_recover(
    problem: &MultiFrameProblem,
    fixed: &[Option<usize>],
    node_cap: usize,
) -> Result<(Vec<usize>, f64)> {
    let mut budget = node_cap;
    recover_within(problem, fixed, 0.0, &mut budget)
}

/// The `cap` cheapest feasible selections, in nondecreasing cost order. An
/// optional known-good `seed` selection joins the incumbents so truncated
/// searches still return it.
pub fn enumerate_best(
    problem: &MultiFrameProblem,
    cap: usize,
    node_cap: usize,
    seed: Option<&[usize]>,
) -> Result<Vec<(Vec<usize>, f64)>> {
    problem.check()?;
    let mut seeds: Vec<Vec<usize>> = seed.map(|s| s.to_vec()).into_iter().collect();
    if seeds.is_empty() && problem.mode == ConstraintMode::Equality {
        let unpinned = vec![None; problem.tracks.len()];
        if let Some(sel) = scan_sequential_cover(problem, &unpinned) {
            seeds.push(sel);
        }
        if let Some(sel) = singleton_cover_seed(problem, &unpinned) {
            seeds.push(sel);
        }
    }
    let mut budget = node_cap;
    bounded_search(
        problem,
        &vec![None; problem.tracks.len()],
        f64::INFINITY,
        cap,
        0.0,
        &mut budget,
        &seeds,
    )
}

/// Full multi-frame solve: dual decomposition with subgradient updates and
/// branch-and-bound primal recovery, finished by an exact search seeded with
/// the incumbent so the returned selection is optimal whenever the node
/// budget allows.
pub fn dual_decomposition_solve(
    problem: &MultiFrameProblem,
    params: &SolverParams,
) -> Result<SolveReport> {
    problem.check()?;
    let nt = problem.tracks.len();
    let w = problem.scans.len();
    if nt == 0 {
        return Ok(SolveReport {
            selection: Vec::new(),
            best_primal: 0.0,
            dual_bound: 0.0,
            gap: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut multipliers = Multipliers::zeros(problem);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut best_dual = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut budget = params.node_cap;

    if w == 0 {
        // no window constraints: independent arg-min per track
        let selection: Vec<usize> = problem
            .tracks
            .iter()
            .map(|t| {
                t.leaves
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
                    .map(|(l, _)| l)
                    .unwrap()
            })
            .collect();
        let cost = problem.selection_cost(&selection);
        return Ok(SolveReport {
            selection,
            best_primal: cost,
            dual_bound: cost,
            gap: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    'outer: for iter in 1..=params.max_iters {
        iterations = iter;
        let mut rhos: Vec<Vec<usize>> = Vec::with_capacity(w);
        let mut dual_value = 0.0;
        for s in 0..w {
            let sub = subproblem_costs(problem, s, &multipliers, w);
            match solve_scan_subproblem(problem, &sub) {
                Ok((sel, value)) => {
                    dual_value += value;
                    rhos.push(sel);
                }
                // a measurement nobody can claim makes equality unsatisfiable
                Err(Error::Infeasible(_)) => {
                    return Err(Error::NoFeasiblePrimal {
                        report: Box::new(SolveReport {
                            selection: Vec::new(),
                            best_primal: f64::INFINITY,
                            dual_bound: f64::NEG_INFINITY,
                            gap: f64::INFINITY,
                            iterations: iter,
                            converged: false,
                        }),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        best_dual = best_dual.max(dual_value);

        // primal recovery: pin tracks on which every subproblem agrees
        let mut fixed: Vec<Option<usize>> = vec![None; nt];
        let mut used = vec![0u64; w];
        let mut all_agree = true;
        for t in 0..nt {
            let l0 = rhos[0][t];
            if rhos.iter().all(|r| r[t] == l0) {
                let leaf = &problem.tracks[t].leaves[l0];
                let mut ok = true;
                let mut trial = used.clone();
                for (s, j) in &leaf.assoc {
                    let si = problem.scan_pos(*s).unwrap();
                    let bit = 1u64 << j;
                    if trial[si] & bit != 0 {
                        ok = false;
                        break;
                    }
                    trial[si] |= bit;
                }
                if ok {
                    fixed[t] = Some(l0);
                    used = trial;
                    continue;
                }
            }
            all_agree = false;
        }

        let candidate = if all_agree
            && problem.selection_feasible(&rhos[0])
        {
            Some((rhos[0].clone(), problem.selection_cost(&rhos[0])))
        } else {
            {
                // slice the budget so one iteration cannot drain the solve
                let slice_cap = budget.min((params.node_cap / 32).max(1_000));
                let mut slice = slice_cap;
                let recovered = match recover_within(problem, &fixed, params.gap_tol, &mut slice)
                {
                    Ok(r) => Some(r),
                    Err(Error::Infeasible(_)) | Err(Error::Capability(_)) => {
                        // agreeing choices blocked or starved a completion;
                        // retry unpinned before giving up on this iteration
                        match recover_within(problem, &vec![None; nt], params.gap_tol, &mut slice)
                        {
                            Ok(r) => Some(r),
                            Err(Error::Infeasible(_)) | Err(Error::Capability(_)) => None,
                            Err(e) => return Err(e),
                        }
                    }
                    Err(e) => return Err(e),
                };
                budget -= slice_cap - slice;
                recovered
            }
        };
        if let Some((sel, cost)) = candidate {
            if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                best = Some((sel, cost));
            }
        }

        let Some((_, best_cost)) = best.as_ref() else {
            break;
        };
        let gap = (best_cost - best_dual) / best_cost.abs().max(1e-12);
        if gap <= params.gap_tol {
            converged = true;
            break;
        }
        if budget == 0 {
            break; // primal can no longer improve; keep the incumbent
        }

        // projected subgradient with a Polyak step
        let mut norm2 = 0.0;
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(w);
        for rho in &rhos {
            let g: Vec<Vec<f64>> = problem
                .tracks
                .iter()
                .enumerate()
                .map(|(t, track)| {
                    (0..track.leaves.len())
                        .map(|l| if rho[t] == l { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            grads.push(g);
        }
        for t in 0..nt {
            for l in 0..problem.tracks[t].leaves.len() {
                let mean: f64 = grads.iter().map(|g| g[t][l]).sum::<f64>() / w as f64;
                for g in &mut grads {
                    g[t][l] -= mean;
                    norm2 += g[t][l] * g[t][l];
                }
            }
        }
        if norm2 <= 0.0 {
            break 'outer; // subproblems fully agree; nothing to steer
        }
        let step = (best_cost - dual_value).max(0.0) / norm2;
        if step <= 0.0 {
            break;
        }
        for s in 0..w {
            for t in 0..nt {
                for l in 0..problem.tracks[t].leaves.len() {
                    multipliers.delta[s][t][l] += step * grads[s][t][l];
                }
            }
        }
        multipliers.project();
    }

    // Certify or improve the incumbent exactly unless the gap already
    // closed. Worthwhile only when the residual tree is small; large windows
    // rely on the dual bound, reporting whatever gap remains.
    let leaves_total: usize = problem.tracks.iter().map(|t| t.leaves.len()).sum();
    let certifiable = nt <= 24 && leaves_total <= 256;
    if let Some((_, best_cost)) = best.as_ref() {
        let gap = (best_cost - best_dual) / best_cost.abs().max(1e-12);
        if gap > 0.0 && certifiable {
            match bounded_search(
                problem,
                &vec![None; nt],
                *best_cost - 1e-12,
                1,
                0.0,
                &mut budget,
                &[],
            ) {
                Ok(mut better) => {
                    if let Some(b) = better.pop() {
                        best = Some(b);
                    }
                }
                Err(Error::Capability(_)) => {} // keep the incumbent, flagged by `converged`
                Err(e) => return Err(e),
            }
        }
    } else {
        // no iteration produced a primal; try the exact search once
        match recover_within(problem, &vec![None; nt], 0.0, &mut budget) {
            Ok(r) => best = Some(r),
            Err(Error::Infeasible(_)) | Err(Error::Capability(_)) => {}
            Err(e) => return Err(e),
        }
    }

    match best {
        Some((selection, cost)) => {
            let gap = ((cost - best_dual) / cost.abs().max(1e-12)).max(0.0);
            Ok(SolveReport {
                selection,
                best_primal: cost,
                dual_bound: best_dual.min(cost),
                gap,
                iterations,
                converged: converged || gap <= params.gap_tol,
            })
        }
        None => Err(Error::NoFeasiblePrimal {
            report: Box::new(SolveReport {
                selection: Vec::new(),
                best_primal: f64::INFINITY,
                dual_bound: best_dual,
                gap: f64::INFINITY,
                iterations,
                converged: false,
            }),
        }),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Brute force over all partial assignments of rows to distinct columns.
    pub(crate) fn brute_2d(costs: &[Vec<f64>], allow_unassigned: bool) -> Option<f64> {
        fn rec(
            costs: &[Vec<f64>],
            allow: bool,
            i: usize,
            used: &mut Vec<bool>,
        ) -> Option<f64> {
            if i == costs.len() {
                return Some(0.0);
            }
            let mut best: Option<f64> = None;
            if allow {
                if let Some(rest) = rec(costs, allow, i + 1, used) {
                    best = Some(rest);
                }
            }
            for j in 0..costs[i].len() {
                if used[j] || !costs[i][j].is_finite() {
                    continue;
                }
                used[j] = true;
                if let Some(rest) = rec(costs, allow, i + 1, used) {
                    let total = costs[i][j] + rest;
                    if best.is_none_or(|b| total < b) {
                        best = Some(total);
                    }
                }
                used[j] = false;
            }
            best
        }
        let ncols = costs.first().map_or(0, |r| r.len());
        rec(costs, allow_unassigned, 0, &mut vec![false; ncols])
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, p_inf: f64) -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < p_inf {
                            f64::INFINITY
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let m = rng.random_range(1..=5);
            let n = rng.random_range(1..=5);
            let allow = case % 2 == 0;
            let costs = random_matrix(&mut rng, m, n, 0.3);
            let oracle = brute_2d(&costs, allow);
            match solve_2d_assignment(&costs, allow) {
                Ok((assign, total)) => {
                    let expect = oracle.expect("solver found a solution the oracle did not");
                    assert!(
                        (total - expect).abs() <= 1e-9,
                        "case {case}: solver {total} vs brute {expect}"
                    );
                    // the reported assignment must be consistent with the cost
                    let mut seen = std::collections::HashSet::new();
                    let mut check = 0.0;
                    for (i, a) in assign.iter().enumerate() {
                        match a {
                            Some(j) => {
                                assert!(seen.insert(*j), "column used twice");
                                check += costs[i][*j];
                            }
                            None => assert!(allow, "row unassigned in equality mode"),
                        }
                    }
                    assert!((check - total).abs() <= 1e-12);
                }
                Err(_) => assert!(oracle.is_none(), "case {case}: solver infeasible, oracle not"),
            }
        }
    }

    #[test]
    fn assignment_prefers_negative_entries_over_sink() {
        let costs = vec![vec![-2.0, 1.0], vec![0.5, -3.0]];
        let (assign, total) = solve_2d_assignment(&costs, true).unwrap();
        assert_eq!(assign, vec![Some(0), Some(1)]);
        assert_eq!(total, -5.0);
        // all-positive rows stay unassigned when allowed
        let costs = vec![vec![2.0, 1.0]];
        let (assign, total) = solve_2d_assignment(&costs, true).unwrap();
        assert_eq!(assign, vec![None]);
        assert_eq!(total, 0.0);
        // ... but must be assigned in equality mode
        let (assign, total) = solve_2d_assignment(&costs, false).unwrap();
        assert_eq!(assign, vec![Some(1)]);
        assert_eq!(total, 1.0);
    }

    #[test]
    fn assignment_reports_infeasible() {
        let costs = vec![vec![f64::INFINITY, f64::INFINITY], vec![1.0, 2.0]];
        assert!(matches!(
            solve_2d_assignment(&costs, false),
            Err(Error::Infeasible(_))
        ));
        // with sinks the blocked row just goes unassigned, and so does the
        // all-positive one (staying out is cheaper than paying)
        let (assign, total) = solve_2d_assignment(&costs, true).unwrap();
        assert_eq!(assign, vec![None, None]);
        assert_eq!(total, 0.0);
        // a negative entry is worth taking
        let costs = vec![vec![f64::INFINITY, f64::INFINITY], vec![-1.0, 2.0]];
        let (assign, total) = solve_2d_assignment(&costs, true).unwrap();
        assert_eq!(assign, vec![None, Some(0)]);
        assert_eq!(total, -1.0);
        // more rows than columns
        let costs = vec![vec![1.0], vec![1.0]];
        assert!(solve_2d_assignment(&costs, false).is_err());
    }

    fn leaf(id: u32, cost: f64, assoc: &[(u32, u32)]) -> LeafCost {
        LeafCost {
            hyp_id: id,
            cost,
            assoc: assoc.to_vec(),
        }
    }

    /// Two tracks, two scans, one measurement each. Weights chosen so the
    /// optimum pairs track 0 with scan 1 and track 1 with scan 2.
    fn toy_problem(mode: ConstraintMode) -> MultiFrameProblem {
        MultiFrameProblem {
            mode,
            scans: vec![(1, 1), (2, 1)],
            tracks: vec![
                TrackColumn {
                    track_id: 0,
                    created_at: 1,
                    leaves: vec![
                        leaf(0, -(0.5f64.ln()), &[(1, 0)]),
                        leaf(1, -(0.25f64.ln()), &[(2, 0)]),
                        leaf(2, -(0.05f64.ln()), &[]),
                    ],
                },
                TrackColumn {
                    track_id: 1,
                    created_at: 1,
                    leaves: vec![
                        leaf(0, -(0.3f64.ln()), &[(2, 0)]),
                        leaf(1, -(0.1f64.ln()), &[(1, 0)]),
                        leaf(2, -(0.02f64.ln()), &[]),
                    ],
                },
            ],
        }
    }

    /// Exhaustive reference: all leaf combinations, feasibility filtered.
    pub(crate) fn brute_multiframe(p: &MultiFrameProblem) -> Option<(Vec<usize>, f64)> {
        let nt = p.tracks.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut sel = vec![0usize; nt];
        loop {
            if p.selection_feasible(&sel) {
                let cost = p.selection_cost(&sel);
                if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                    best = Some((sel.clone(), cost));
                }
            }
            let mut t = 0;
            loop {
                if t == nt {
                    return best;
                }
                sel[t] += 1;
                if sel[t] < p.tracks[t].leaves.len() {
                    break;
                }
                sel[t] = 0;
                t += 1;
            }
        }
    }

    #[test]
    fn dual_decomposition_solves_toy_exactly() {
        for mode in [ConstraintMode::Equality, ConstraintMode::Subset] {
            let p = toy_problem(mode);
            let report = dual_decomposition_solve(&p, &SolverParams::default()).unwrap();
            let (_, brute_cost) = brute_multiframe(&p).unwrap();
            assert!(
                (report.best_primal - brute_cost).abs() < 1e-9,
                "{mode:?}: {} vs {}",
                report.best_primal,
                brute_cost
            );
            assert!(report.dual_bound <= report.best_primal + 1e-9);
            assert!(p.selection_feasible(&report.selection));
            assert_eq!(report.selection, vec![0, 0]);
        }
    }

    pub(crate) fn random_problem(rng: &mut ChaCha8Rng, mode: ConstraintMode) -> MultiFrameProblem {
        let n_scans = rng.random_range(1..=3);
        let scans: Vec<(u32, u32)> = (0..n_scans)
            .map(|s| (s as u32 + 1, rng.random_range(0..=3)))
            .collect();
        let n_tracks = rng.random_range(1..=4);
        let mut tracks: Vec<TrackColumn> = (0..n_tracks)
            .map(|t| {
                let n_leaves = rng.random_range(1..=4);
                let mut leaves: Vec<LeafCost> = (0..n_leaves)
                    .map(|l| {
                        let mut assoc = Vec::new();
                        for (s, m) in &scans {
                            if *m > 0 && rng.random::<f64>() < 0.5 {
                                assoc.push((*s, rng.random_range(0..*m)));
                            }
                        }
                        leaf(l, rng.random_range(0.0..3.0), &assoc)
                    })
                    .collect();
                // guarantee a pure-miss leaf so every track has an out
                leaves.push(leaf(n_leaves, rng.random_range(0.0..3.0), &[]));
                TrackColumn {
                    track_id: t,
                    created_at: 1,
                    leaves,
                }
            })
            .collect();
        if mode == ConstraintMode::Equality {
            // one claimer track per measurement keeps the instance feasible
            let mut next_id = n_tracks;
            for (s, m) in &scans {
                for j in 0..*m {
                    tracks.push(TrackColumn {
                        track_id: next_id,
                        created_at: *s,
                        leaves: vec![
                            leaf(0, 0.0, &[]),
                            leaf(1, rng.random_range(0.0..2.0), &[(*s, j)]),
                        ],
                    });
                    next_id += 1;
                }
            }
        }
        MultiFrameProblem { mode, scans, tracks }
    }

    #[test]
    fn dual_decomposition_matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for case in 0..60 {
            let mode = if case % 2 == 0 {
                ConstraintMode::Equality
            } else {
                ConstraintMode::Subset
            };
            let p = random_problem(&mut rng, mode);
            let report = dual_decomposition_solve(&p, &SolverParams::default()).unwrap();
            let (_, brute_cost) = brute_multiframe(&p).expect("generator promises feasibility");
            assert!(
                (report.best_primal - brute_cost).abs() < 1e-9,
                "case {case} ({mode:?}): solver {} vs brute {}",
                report.best_primal,
                brute_cost
            );
            assert!(report.dual_bound <= report.best_primal + 1e-9);
            assert!(p.selection_feasible(&report.selection));
        }
    }

    #[test]
    fn enumerate_best_orders_by_cost() {
        let p = toy_problem(ConstraintMode::Subset);
        let all = enumerate_best(&p, 100, DEFAULT_NODE_CAP, None).unwrap();
        // subset mode: any disjoint combination is feasible
        let brute_count = {
            let mut count = 0;
            for a in 0..3 {
                for b in 0..3 {
                    if p.selection_feasible(&[a, b]) {
                        count += 1;
                    }
                }
            }
            count
        };
        assert_eq!(all.len(), brute_count);
        for w in all.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-12);
        }
        let (_, brute_cost) = brute_multiframe(&p).unwrap();
        assert!((all[0].1 - brute_cost).abs() < 1e-12);
        // capped enumeration returns the cheapest ones
        let top2 = enumerate_best(&p, 2, DEFAULT_NODE_CAP, None).unwrap();
        assert_eq!(top2.len(), 2);
        assert_eq!(top2[0].1, all[0].1);
        assert_eq!(top2[1].1, all[1].1);
    }

    #[test]
    fn subproblem_entries_are_cost_differences() {
        let p = toy_problem(ConstraintMode::Subset);
        let mult = Multipliers::zeros(&p);
        let sub = subproblem_costs(&p, 0, &mult, 2);
        // track 0: claiming leaf 0 costs -ln(.5)/2, miss best is leaf 1
        let claim = -(0.5f64.ln()) / 2.0;
        let miss = (-(0.25f64.ln()) / 2.0).min(-(0.05f64.ln()) / 2.0);
        assert!((sub.entries[0][0] - (claim - miss)).abs() < 1e-12);
        assert_eq!(sub.claim_leaf[0][0], Some(0));
        assert_eq!(sub.miss_leaf[0], Some(1));
    }

    #[test]
    fn subproblem_sentinel_when_every_leaf_claims() {
        let p = MultiFrameProblem {
            mode: ConstraintMode::Subset,
            scans: vec![(1, 2)],
            tracks: vec![TrackColumn {
                track_id: 0,
                created_at: 1,
                leaves: vec![leaf(0, 1.0, &[(1, 0)]), leaf(1, 2.0, &[(1, 1)])],
            }],
        };
        let mult = Multipliers::zeros(&p);
        let sub = subproblem_costs(&p, 0, &mult, 1);
        assert_eq!(sub.miss_leaf[0], None);
        assert_eq!(sub.miss_cost[0], MISS_SENTINEL);
        assert!(sub.entries[0][0] < -0.9e9);
        // the solve still assigns the forced track a measurement
        let (sel, _) = solve_scan_subproblem(&p, &sub).unwrap();
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn snapshot_round_trip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..20 {
            let mode = if case % 2 == 0 {
                ConstraintMode::Equality
            } else {
                ConstraintMode::Subset
            };
            let p = random_problem(&mut rng, mode);
            let text = p.to_snapshot();
            let q = MultiFrameProblem::from_snapshot(&text).unwrap();
            assert_eq!(p, q);
            // replay solves to the same optimum
            let a = dual_decomposition_solve(&p, &SolverParams::default()).unwrap();
            let b = dual_decomposition_solve(&q, &SolverParams::default()).unwrap();
            assert_eq!(a.best_primal, b.best_primal);
            assert_eq!(a.selection, b.selection);
        }
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(MultiFrameProblem::from_snapshot("nonsense").is_err());
        let p = toy_problem(ConstraintMode::Equality);
        let mut text = p.to_snapshot();
        text.push_str("leaf 9 cost notafloat assoc\n");
        assert!(MultiFrameProblem::from_snapshot(&text).is_err());
        // out-of-window association
        let bad = "multiframe v1\nmode subset\nscan 1 1\ntrack 0 created 1\nleaf 0 cost 1 assoc 7:0\n";
        assert!(MultiFrameProblem::from_snapshot(bad).is_err());
    }

    #[test]
    fn infeasible_equality_problem_is_an_error() {
        // one measurement, no track can claim it
        let p = MultiFrameProblem {
            mode: ConstraintMode::Equality,
            scans: vec![(1, 1)],
            tracks: vec![TrackColumn {
                track_id: 0,
                created_at: 1,
                leaves: vec![leaf(0, 0.0, &[])],
            }],
        };
        match dual_decomposition_solve(&p, &SolverParams::default()) {
            Err(Error::NoFeasiblePrimal { report }) => {
                assert!(report.selection.is_empty());
            }
            other => panic!("expected NoFeasiblePrimal, got {other:?}"),
        }
    }

    #[test]
    fn weight_one_leaf_costs_ln_two_sanity() {
        // cost = -log weight by construction of callers; spot-check the toy
        let p = toy_problem(ConstraintMode::Subset);
        assert!((p.tracks[0].leaves[0].cost - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
