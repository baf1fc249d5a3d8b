//! Benchmark harness: scenario synthesis, Monte Carlo orchestration, and
//! result emission.

pub mod output;
pub mod runner;
pub mod scenario;

pub use output::{
    read_estimates_runs, read_truth_jsonl, read_truth_runs, write_all, write_estimates_jsonl,
    write_per_scan_csv, write_summary_csv, write_truth_jsonl,
};
pub use runner::{
    run_monte_carlo, run_single, truth_for_run, BirthSpec, FilterKind, MonteCarloResults,
    RunResult, ScanScore, ScenarioConfig, ScenarioKind, SummaryRow, Tracker, GOSPA_ALPHA, GOSPA_C,
    GOSPA_P, SWITCH_GAMMA,
};
pub use scenario::{
    generate_measurements, generate_scenario1, generate_scenario2, GroundTruth, TruthTrajectory,
    BIRTH_TIMES, LIFETIME, REGION_AREA, REGION_HALF,
};
