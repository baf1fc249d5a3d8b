//! Filter orchestration: one tracker per run, scans processed through
//! predict, update, multi-frame association, pruning, lag truncation, and
//! estimate extraction; Monte Carlo runs execute in parallel on independent
//! RNG streams.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assignment::{dual_decomposition_solve, ConstraintMode, SolverParams};
use crate::error::{Error, Result};
use crate::hypothesis::{
    build_multiframe_problem, enumerate_globals, n_scan_prune, selection_to_choice, sweep_tracks,
    GlobalHypothesis, Track, LEAF_CAP, LEAF_PRUNE_REL_WEIGHT,
};
use crate::mbm::{mbm01_predict, mbm01_update, mbm_predict, mbm_update, MbmMode, MbmPosterior};
use crate::metrics::{gospa, lp_trajectory_metric, GospaResult, TrajMetricResult};
use crate::models::{BirthComponent, BirthModel, GaussianState, MeasurementModel, MotionModel};
use crate::pmbm::{pmbm_predict, pmbm_update, PmbmPosterior};
use crate::smoothing::{extract_estimates, fixed_lag_truncate, TrajectoryEstimate};
use crate::trajectory::Variant;

use super::scenario::{
    generate_measurements, generate_scenario1, generate_scenario2, GroundTruth, REGION_AREA,
};

pub const GOSPA_P: f64 = 2.0;
pub const GOSPA_C: f64 = 10.0;
pub const GOSPA_ALPHA: f64 = 2.0;
pub const SWITCH_GAMMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Pmbm,
    Mbm,
    Mbm01,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    S1,
    S2,
    Custom,
}

/// One Gaussian birth source; the filter kind decides whether the set is a
/// Poisson intensity or a multi-Bernoulli birth.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BirthSpec {
    pub weight: f64,
    pub mean: [f64; 4],
    pub cov_diag: [f64; 4],
}

/// Complete benchmark configuration.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub steps: u32,
    pub ps: f64,
    pub pd: f64,
    pub clutter_rate: f64,
    pub filter: FilterKind,
    pub variant: Variant,
    pub n_scan: u32,
    pub l_scan: u32,
    pub smoothing: bool,
    pub seed: u64,
    pub runs: u32,
    /// Birth sources; defaults depend on the scenario when omitted.
    pub birth: Option<Vec<BirthSpec>>,
    /// Ground truth for `Custom` scenarios, as written by the truth emitter.
    pub truth_path: Option<String>,
    /// Posterior global hypotheses kept per scan.
    pub global_cap: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::S1,
            steps: 81,
            ps: 0.99,
            pd: 0.9,
            clutter_rate: 10.0,
            filter: FilterKind::Pmbm,
            variant: Variant::All,
            n_scan: 3,
            l_scan: 4,
            smoothing: true,
            seed: 1,
            runs: 100,
            birth: None,
            truth_path: None,
            global_cap: 100,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Contract("steps must be at least 1".into()));
        }
        if self.runs < 1 {
            return Err(Error::Contract("runs must be at least 1".into()));
        }
        if self.l_scan < 1 {
            return Err(Error::Contract("l_scan must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ps) || !(0.0..=1.0).contains(&self.pd) {
            return Err(Error::Contract("ps and pd must lie in [0, 1]".into()));
        }
        if self.clutter_rate < 0.0 {
            return Err(Error::Contract("clutter_rate must be nonnegative".into()));
        }
        if self.scenario == ScenarioKind::Custom && self.truth_path.is_none() {
            return Err(Error::Contract("custom scenarios need a truth_path".into()));
        }
        Ok(())
    }

    pub fn motion(&self) -> MotionModel {
        MotionModel::constant_velocity(1.0, 0.01, self.ps)
    }

    pub fn measurement(&self) -> Result<MeasurementModel> {
        MeasurementModel::position_sensor(1.0, self.pd, self.clutter_rate, REGION_AREA, 0.999)
    }

    fn birth_specs(&self) -> Vec<BirthSpec> {
        if let Some(b) = &self.birth {
            return b.clone();
        }
        match self.scenario {
            ScenarioKind::S1 | ScenarioKind::Custom => {
                [[50.0, 50.0], [50.0, -50.0], [-50.0, 50.0], [-50.0, -50.0]]
                    .iter()
                    .map(|c| BirthSpec {
                        weight: 0.05,
                        mean: [c[0], 0.0, c[1], 0.0],
                        cov_diag: [4.0, 1.0, 4.0, 1.0],
                    })
                    .collect()
            }
            ScenarioKind::S2 => vec![BirthSpec {
                weight: 0.05,
                mean: [0.0; 4],
                cov_diag: [1.0e4, 1.0, 1.0e4, 1.0],
            }],
        }
    }

    pub fn birth_model(&self) -> Result<BirthModel> {
        let comps: Vec<BirthComponent> = self
            .birth_specs()
            .iter()
            .map(|s| BirthComponent {
                weight: s.weight,
                state: GaussianState::new(
                    DVector::from_row_slice(&s.mean),
                    DMatrix::from_diagonal(&DVector::from_row_slice(&s.cov_diag)),
                ),
            })
            .collect();
        match self.filter {
            FilterKind::Pmbm => Ok(BirthModel::poisson(comps)),
            FilterKind::Mbm | FilterKind::Mbm01 => BirthModel::multi_bernoulli(comps),
        }
    }
}

enum PosteriorState {
    Pmbm(PmbmPosterior),
    Mbm(MbmPosterior),
}

/// A configured filter processing scans one at a time.
pub struct Tracker {
    filter: FilterKind,
    variant: Variant,
    motion: MotionModel,
    meas: MeasurementModel,
    birth: BirthModel,
    n_scan: u32,
    l_scan: u32,
    smoothing: bool,
    global_cap: usize,
    gate: bool,
    leaf_prune: bool,
    solver: SolverParams,
    state: PosteriorState,
    meas_counts: Vec<(u32, u32)>,
    k: u32,
}

impl Tracker {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        Ok(Self::new(
            cfg.filter,
            cfg.variant,
            cfg.motion(),
            cfg.measurement()?,
            cfg.birth_model()?,
            cfg.n_scan,
            cfg.l_scan,
            cfg.smoothing,
            cfg.global_cap,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        filter: FilterKind,
        variant: Variant,
        motion: MotionModel,
        meas: MeasurementModel,
        birth: BirthModel,
        n_scan: u32,
        l_scan: u32,
        smoothing: bool,
        global_cap: usize,
    ) -> Self {
        let state = match filter {
            FilterKind::Pmbm => PosteriorState::Pmbm(PmbmPosterior::new()),
            FilterKind::Mbm => PosteriorState::Mbm(MbmPosterior::new(MbmMode::Mbm)),
            FilterKind::Mbm01 => PosteriorState::Mbm(MbmPosterior::new(MbmMode::Mbm01)),
        };
        Self {
            filter,
            variant,
            motion,
            meas,
            birth,
            n_scan,
            l_scan,
            smoothing,
            global_cap,
            gate: true,
            leaf_prune: true,
            solver: SolverParams::default(),
            state,
            meas_counts: Vec::new(),
            k: 0,
        }
    }

    pub fn set_gating(&mut self, on: bool) {
        self.gate = on;
    }

    /// Disables the between-scan leaf weight pruning. Exact association
    /// spaces for small scenes; unbounded growth on realistic ones.
    pub fn set_leaf_pruning(&mut self, on: bool) {
        self.leaf_prune = on;
    }

    pub fn scan(&self) -> u32 {
        self.k
    }

    pub fn tracks(&self) -> &[Track] {
        match &self.state {
            PosteriorState::Pmbm(p) => &p.tracks,
            PosteriorState::Mbm(p) => &p.tracks,
        }
    }

    pub fn globals(&self) -> &[GlobalHypothesis] {
        match &self.state {
            PosteriorState::Pmbm(p) => &p.globals,
            PosteriorState::Mbm(p) => &p.globals,
        }
    }

    pub fn undetected(&self) -> Option<&crate::pmbm::PoissonIntensity> {
        match &self.state {
            PosteriorState::Pmbm(p) => Some(&p.undetected),
            PosteriorState::Mbm(_) => None,
        }
    }

    fn mode(&self) -> ConstraintMode {
        match self.filter {
            FilterKind::Pmbm => ConstraintMode::Equality,
            FilterKind::Mbm | FilterKind::Mbm01 => ConstraintMode::Subset,
        }
    }

    /// Advance one scan: predict, update with `zs`, solve the sliding-window
    /// association, prune, truncate trajectory joints, and report estimates
    /// under the best global hypothesis.
    pub fn step(&mut self, zs: &[DVector<f64>]) -> Result<Vec<TrajectoryEstimate>> {
        self.k += 1;
        let k = self.k;
        match &mut self.state {
            PosteriorState::Pmbm(p) => {
                pmbm_predict(p, &self.motion, &self.birth, self.variant, k)?;
                pmbm_update(p, &self.meas, &self.motion, zs, k, self.gate)?;
            }
            PosteriorState::Mbm(p) => match self.filter {
                FilterKind::Mbm => {
                    mbm_predict(p, &self.motion, &self.birth, self.variant, k)?;
                    mbm_update(p, &self.meas, zs, k, self.gate)?;
                }
                _ => {
                    mbm01_predict(p, &self.motion, &self.birth, self.variant, k)?;
                    mbm01_update(p, &self.meas, zs, k, self.gate)?;
                }
            },
        }
        self.meas_counts.push((k, zs.len() as u32));

        let window = self.meas_counts.len() - (self.n_scan as usize + 1).min(self.k as usize)
            ..self.meas_counts.len();
        let scans = self.meas_counts[window].to_vec();
        let window_start = scans[0].0;
        let mode = self.mode();
        let (n_scan, l_cap, global_cap, solver) = (
            self.n_scan,
            if self.smoothing { (self.n_scan + self.l_scan) as usize } else { 1 },
            self.global_cap,
            self.solver.clone(),
        );
        let (tracks, globals_slot) = match &mut self.state {
            PosteriorState::Pmbm(p) => (&mut p.tracks, &mut p.globals),
            PosteriorState::Mbm(p) => (&mut p.tracks, &mut p.globals),
        };
        let leaf_prune = self.leaf_prune;
        for t in tracks.iter_mut() {
            t.renormalize_leaves();
            if leaf_prune {
                t.prune_leaves(LEAF_PRUNE_REL_WEIGHT.ln(), LEAF_CAP, window_start);
            }
        }

        let problem = build_multiframe_problem(tracks, &scans, mode);
        let report = dual_decomposition_solve(&problem, &solver)
            .map_err(|e| Error::Contract(format!("window solve: {e}")))?;
        let a_star = selection_to_choice(&problem, &report.selection);
        n_scan_prune(tracks, &a_star, n_scan, k)?;
        sweep_tracks(tracks, k, n_scan, window_start);

        let globals =
            enumerate_globals(tracks, &scans, mode, global_cap, solver.node_cap, Some(&a_star))
                .map_err(|e| Error::Contract(format!("global enumeration: {e}")))?;
        let best = globals
            .first()
            .ok_or_else(|| Error::Contract("posterior lost every global hypothesis".into()))?
            .clone();
        *globals_slot = globals;

        fixed_lag_truncate(tracks, l_cap);
        for t in tracks.iter_mut() {
            t.finish_scan(k, n_scan as usize + 2);
        }
        extract_estimates(tracks, &best.choice)
    }
}

/// Per-scan scores of one run.
#[derive(Clone, Debug)]
pub struct ScanScore {
    pub scan: u32,
    pub gospa: GospaResult,
    pub trajectory: TrajMetricResult,
    pub n_estimates: usize,
}

/// Everything recorded about one Monte Carlo run.
#[derive(Debug)]
pub struct RunResult {
    pub run: u32,
    pub diverged: bool,
    pub error: Option<String>,
    pub scores: Vec<ScanScore>,
    pub final_estimates: Vec<TrajectoryEstimate>,
    /// Filter processing time, excluding truth synthesis and scoring.
    pub filter_seconds: f64,
    pub truth: GroundTruth,
}

/// States at scan `k` under the estimate set: every trajectory whose span
/// covers `k` contributes its state there.
fn current_states(estimates: &[TrajectoryEstimate], k: u32) -> Vec<DVector<f64>> {
    estimates
        .iter()
        .filter(|e| e.beta <= k && k <= e.eps)
        .map(|e| e.means[(k - e.beta) as usize].clone())
        .collect()
}

/// Estimates restricted to scans `1..=k`: spans clipped, later births dropped.
fn clip_estimates(estimates: &[TrajectoryEstimate], k: u32) -> Vec<TrajectoryEstimate> {
    estimates
        .iter()
        .filter(|e| e.beta <= k)
        .map(|e| {
            let eps = e.eps.min(k);
            TrajectoryEstimate {
                track_id: e.track_id,
                beta: e.beta,
                eps,
                means: e.means[..=(eps - e.beta) as usize].to_vec(),
            }
        })
        .collect()
}

pub fn truth_for_run(cfg: &ScenarioConfig, shared: &GroundTruth, run: u32) -> GroundTruth {
    match cfg.scenario {
        // one fixed realization shared by every run
        ScenarioKind::S1 | ScenarioKind::Custom => shared.clone(),
        // midpoints resampled per run
        ScenarioKind::S2 => generate_scenario2(per_run_seed(cfg.seed, run), &cfg.motion()),
    }
}

/// Distinct stream per purpose: stream 0 is reserved for shared truth,
/// streams 1.. are per-run measurement noise.
fn measurement_rng(seed: u64, run: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64 + 1);
    rng
}

/// Seed derivation for per-run truths (splitmix64 step).
fn per_run_seed(seed: u64, run: u32) -> u64 {
    let mut z = seed ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_single(cfg: &ScenarioConfig, truth: GroundTruth, run: u32) -> RunResult {
    let meas = match cfg.measurement() {
        Ok(m) => m,
        Err(e) => {
            return RunResult {
                run,
                diverged: true,
                error: Some(e.to_string()),
                scores: Vec::new(),
                final_estimates: Vec::new(),
                filter_seconds: 0.0,
                truth,
            }
        }
    };
    let mut tracker = match Tracker::from_config(cfg) {
        Ok(t) => t,
        Err(e) => {
            return RunResult {
                run,
                diverged: true,
                error: Some(e.to_string()),
                scores: Vec::new(),
                final_estimates: Vec::new(),
                filter_seconds: 0.0,
                truth,
            }
        }
    };
    let mut rng = measurement_rng(cfg.seed, run);
    let mut final_estimates = Vec::new();
    let mut online_counts = Vec::with_capacity(cfg.steps as usize);
    let mut filter_seconds = 0.0;
    let mut error = None;

    for k in 1..=cfg.steps {
        let zs = generate_measurements(&truth, &meas, k, &mut rng);
        let t0 = Instant::now();
        match tracker.step(&zs) {
            Ok(estimates) => {
                filter_seconds += t0.elapsed().as_secs_f64();
                online_counts.push(estimates.len());
                final_estimates = estimates;
            }
            Err(e) => {
                error = Some(format!("scan {k}: {e}"));
                break;
            }
        }
    }

    // scoring is retrospective: every scan is judged against the trajectory
    // set reported at the end of the run, so a past state benefits from all
    // later evidence the window and smoothing lag allowed
    let mut scores = Vec::with_capacity(online_counts.len());
    for k in 1..=online_counts.len() as u32 {
        let g = gospa(
            &current_states(&final_estimates, k),
            &truth.alive_states(k),
            GOSPA_P,
            GOSPA_C,
            GOSPA_ALPHA,
        );
        let lp = lp_trajectory_metric(
            &clip_estimates(&final_estimates, k),
            &truth.as_estimates(k),
            GOSPA_P,
            GOSPA_C,
            SWITCH_GAMMA,
            k,
        );
        match (g, lp) {
            (Ok(gospa), Ok(trajectory)) => scores.push(ScanScore {
                scan: k,
                gospa,
                trajectory,
                n_estimates: online_counts[(k - 1) as usize],
            }),
            (Err(e), _) | (_, Err(e)) => {
                error = Some(format!("scan {k} scoring: {e}"));
                break;
            }
        }
    }

    RunResult {
        run,
        diverged: error.is_some(),
        error,
        scores,
        final_estimates,
        filter_seconds,
        truth,
    }
}

/// One aggregate cell of the summary table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub component: String,
    pub aggregation: String,
    pub value: f64,
}

#[derive(Debug)]
pub struct MonteCarloResults {
    pub config: ScenarioConfig,
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

impl MonteCarloResults {
    pub fn diverged_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.diverged).count()
    }

    /// `sum_rms` aggregate of one metric component, the headline table value.
    pub fn sum_rms(&self, metric: &str, component: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.metric == metric && r.component == component && r.aggregation == "sum_rms")
            .map(|r| r.value)
    }

    pub fn mean_filter_seconds(&self) -> f64 {
        let clean: Vec<&RunResult> = self.runs.iter().filter(|r| !r.diverged).collect();
        if clean.is_empty() {
            return f64::NAN;
        }
        clean.iter().map(|r| r.filter_seconds).sum::<f64>() / clean.len() as f64
    }
}

/// Score component by table name, used by the CSV emitters.
pub fn component_value(score: &ScanScore, metric: &str, component: &str) -> f64 {
    match (metric, component) {
        ("gospa", "total") => score.gospa.total,
        ("gospa", "localization") => score.gospa.localization,
        ("gospa", "missed") => score.gospa.missed,
        ("gospa", "false") => score.gospa.false_,
        ("trajectory", "total") => score.trajectory.total,
        ("trajectory", "localization") => score.trajectory.localization,
        ("trajectory", "missed") => score.trajectory.missed,
        ("trajectory", "false") => score.trajectory.false_,
        ("trajectory", "switch") => score.trajectory.switch,
        _ => f64::NAN,
    }
}

pub const METRIC_COMPONENTS: [(&str, &[&str]); 2] = [
    ("gospa", &["total", "localization", "missed", "false"]),
    ("trajectory", &["total", "localization", "missed", "false", "switch"]),
];

/// Both Table-style aggregations over completed runs: `sum_rms` (per-scan RMS
/// across runs, summed over scans) and `rms_sum` (per-run sums, RMS across
/// runs).
fn aggregate(cfg: &ScenarioConfig, runs: &[RunResult]) -> Vec<SummaryRow> {
    let clean: Vec<&RunResult> = runs.iter().filter(|r| !r.diverged).collect();
    let mut rows = Vec::new();
    for (metric, components) in METRIC_COMPONENTS {
        for component in components {
            let (mut sum_rms, mut rms_sum) = (f64::NAN, f64::NAN);
            if !clean.is_empty() {
                sum_rms = (1..=cfg.steps)
                    .map(|k| {
                        let ms = clean
                            .iter()
                            .map(|r| {
                                let s = &r.scores[(k - 1) as usize];
                                let v = component_value(s, metric, component);
                                v * v
                            })
                            .sum::<f64>()
                            / clean.len() as f64;
                        ms.sqrt()
                    })
                    .sum();
                rms_sum = (clean
                    .iter()
                    .map(|r| {
                        let total: f64 = r
                            .scores
                            .iter()
                            .map(|s| component_value(s, metric, component))
                            .sum();
                        total * total
                    })
                    .sum::<f64>()
                    / clean.len() as f64)
                    .sqrt();
            }
            rows.push(SummaryRow {
                metric: metric.into(),
                component: (*component).into(),
                aggregation: "sum_rms".into(),
                value: sum_rms,
            });
            rows.push(SummaryRow {
                metric: metric.into(),
                component: (*component).into(),
                aggregation: "rms_sum".into(),
                value: rms_sum,
            });
        }
    }
    let mean_secs = if clean.is_empty() {
        f64::NAN
    } else {
        clean.iter().map(|r| r.filter_seconds).sum::<f64>() / clean.len() as f64
    };
    rows.push(SummaryRow {
        metric: "runtime".into(),
        component: "filter".into(),
        aggregation: "mean_seconds".into(),
        value: mean_secs,
    });
    rows.push(SummaryRow {
        metric: "runs".into(),
        component: "diverged".into(),
        aggregation: "count".into(),
        value: runs.iter().filter(|r| r.diverged).count() as f64,
    });
    rows
}

/// Run the full benchmark: truth synthesis, per-run tracking in parallel,
/// per-scan scoring, and summary aggregation. Diverged runs are kept in the
/// output, flagged, and excluded from aggregates.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MonteCarloResults> {
    cfg.validate()?;
    let shared = match cfg.scenario {
        ScenarioKind::S1 => generate_scenario1(cfg.seed, &cfg.motion()),
        ScenarioKind::S2 => GroundTruth::default(),
        ScenarioKind::Custom => {
            let path = cfg.truth_path.as_ref().expect("validated above");
            super::output::read_truth_jsonl(path)?
        }
    };
    shared.check()?;
    let runs: Vec<RunResult> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| run_single(cfg, truth_for_run(cfg, &shared, r), r))
        .collect();
    let summary = aggregate(cfg, &runs);
    Ok(MonteCarloResults { config: cfg.clone(), runs, summary })
}
