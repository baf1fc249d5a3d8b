//! Result emission: summary and per-scan CSV tables, estimate and truth
//! JSONL dumps, plus the readers used by the standalone metric evaluator and
//! custom-truth runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::smoothing::TrajectoryEstimate;

use super::runner::{component_value, MonteCarloResults, METRIC_COMPONENTS};
use super::scenario::{GroundTruth, TruthTrajectory};

fn vec_rows(states: &[DVector<f64>]) -> Vec<Vec<f64>> {
    states.iter().map(|s| s.iter().copied().collect()).collect()
}

/// `summary.csv`: one row per metric, component, and aggregation.
pub fn write_summary_csv(path: &Path, results: &MonteCarloResults) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "component", "aggregation", "value"])?;
    for row in &results.summary {
        w.write_record([
            row.metric.as_str(),
            row.component.as_str(),
            row.aggregation.as_str(),
            &format!("{}", row.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `per_scan.csv`: run, scan, metric, component, value — the full grid for
/// every completed scan.
pub fn write_per_scan_csv(path: &Path, results: &MonteCarloResults) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "scan", "metric", "component", "value"])?;
    for run in &results.runs {
        for score in &run.scores {
            for (metric, components) in METRIC_COMPONENTS {
                for component in components {
                    w.write_record([
                        &run.run.to_string(),
                        &score.scan.to_string(),
                        metric,
                        component,
                        &format!("{}", component_value(score, metric, component)),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `estimates.jsonl`: final trajectory estimates, one per line.
pub fn write_estimates_jsonl(path: &Path, results: &MonteCarloResults) -> Result<()> {
    let mut f = File::create(path)?;
    for run in &results.runs {
        for est in &run.final_estimates {
            let line = serde_json::json!({
                "run": run.run,
                "track": est.track_id,
                "beta": est.beta,
                "eps": est.eps,
                "means": vec_rows(&est.means),
            });
            writeln!(f, "{line}")?;
        }
    }
    Ok(())
}

/// `truth.jsonl`: the ground truth each run was scored against.
pub fn write_truth_jsonl(path: &Path, results: &MonteCarloResults) -> Result<()> {
    let mut f = File::create(path)?;
    for run in &results.runs {
        for (i, t) in run.truth.trajectories.iter().enumerate() {
            let line = serde_json::json!({
                "run": run.run,
                "trajectory": i,
                "birth": t.birth,
                "death": t.death,
                "states": vec_rows(&t.states),
            });
            writeln!(f, "{line}")?;
        }
    }
    Ok(())
}

fn parse_states(v: &serde_json::Value, key: &str) -> Result<Vec<DVector<f64>>> {
    let rows = v[key]
        .as_array()
        .ok_or_else(|| Error::Contract(format!("line is missing the {key} array")))?;
    rows.iter()
        .map(|row| {
            let xs = row
                .as_array()
                .ok_or_else(|| Error::Contract("state rows must be arrays".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Contract("non-numeric state".into())))
                .collect::<Result<Vec<f64>>>()?;
            Ok(DVector::from_vec(xs))
        })
        .collect()
}

fn field_u64(v: &serde_json::Value, key: &str) -> Result<u64> {
    v[key]
        .as_u64()
        .ok_or_else(|| Error::Contract(format!("line is missing the integer field {key}")))
}

/// Read a truth dump; when the file spans several runs, the first run's truth
/// is returned (custom-truth runs share one realization, like scenario 1).
pub fn read_truth_jsonl(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let by_run = read_truth_runs(path)?;
    by_run
        .into_iter()
        .next()
        .map(|(_, gt)| gt)
        .ok_or_else(|| Error::Contract("truth file is empty".into()))
}

/// All truths in a dump, keyed by run.
pub fn read_truth_runs(path: impl AsRef<Path>) -> Result<BTreeMap<u32, GroundTruth>> {
    let f = BufReader::new(File::open(path.as_ref())?);
    let mut by_run: BTreeMap<u32, GroundTruth> = BTreeMap::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let run = field_u64(&v, "run")? as u32;
        by_run.entry(run).or_default().trajectories.push(TruthTrajectory {
            birth: field_u64(&v, "birth")? as u32,
            death: field_u64(&v, "death")? as u32,
            states: parse_states(&v, "states")?,
        });
    }
    for gt in by_run.values() {
        gt.check()?;
    }
    Ok(by_run)
}

/// All estimate sets in a dump, keyed by run.
pub fn read_estimates_runs(path: impl AsRef<Path>) -> Result<BTreeMap<u32, Vec<TrajectoryEstimate>>> {
    let f = BufReader::new(File::open(path.as_ref())?);
    let mut by_run: BTreeMap<u32, Vec<TrajectoryEstimate>> = BTreeMap::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let run = field_u64(&v, "run")? as u32;
        let beta = field_u64(&v, "beta")? as u32;
        let eps = field_u64(&v, "eps")? as u32;
        let means = parse_states(&v, "means")?;
        if means.len() != (eps - beta + 1) as usize {
            return Err(Error::Contract(format!(
                "estimate on run {run} claims scans [{beta}, {eps}] but has {} means",
                means.len()
            )));
        }
        by_run.entry(run).or_default().push(TrajectoryEstimate {
            track_id: field_u64(&v, "track")? as u32,
            beta,
            eps,
            means,
        });
    }
    Ok(by_run)
}

/// Write all four artifacts into `dir`, creating it if needed.
pub fn write_all(dir: impl AsRef<Path>, results: &MonteCarloResults) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_summary_csv(&dir.join("summary.csv"), results)?;
    write_per_scan_csv(&dir.join("per_scan.csv"), results)?;
    write_estimates_jsonl(&dir.join("estimates.jsonl"), results)?;
    write_truth_jsonl(&dir.join("truth.jsonl"), results)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::runner::{run_monte_carlo, ScenarioConfig, ScenarioKind};

    #[test]
    fn artifacts_round_trip() {
        let cfg = ScenarioConfig {
            scenario: ScenarioKind::S2,
            steps: 6,
            runs: 2,
            seed: 5,
            ..ScenarioConfig::default()
        };
        let out = run_monte_carlo(&cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("trajfilter-out-{}", std::process::id()));
        write_all(&dir, &out).unwrap();

        let truths = read_truth_runs(dir.join("truth.jsonl")).unwrap();
        assert_eq!(truths.len(), 2);
        for (run, gt) in &truths {
            assert_eq!(gt.trajectories.len(), 4);
            for (a, b) in gt.trajectories.iter().zip(&out.runs[*run as usize].truth.trajectories) {
                assert_eq!(a.birth, b.birth);
                assert_eq!(a.death, b.death);
                assert_eq!(a.states, b.states);
            }
        }

        let estimates = read_estimates_runs(dir.join("estimates.jsonl")).unwrap();
        for (run, ests) in &estimates {
            let want = &out.runs[*run as usize].final_estimates;
            assert_eq!(ests.len(), want.len());
            for (a, b) in ests.iter().zip(want) {
                assert_eq!(a.beta, b.beta);
                assert_eq!(a.eps, b.eps);
                assert_eq!(a.means, b.means);
            }
        }

        let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
        assert!(summary.contains("gospa,total,sum_rms"));
        assert!(summary.contains("trajectory,switch,rms_sum"));
        let per_scan = std::fs::read_to_string(dir.join("per_scan.csv")).unwrap();
        // header + runs x scans x 9 component rows
        assert_eq!(per_scan.lines().count(), 1 + 2 * 6 * 9);
        std::fs::remove_dir_all(&dir).ok();
    }
}
