//! Scripted reference experiments with pass/fail shape checks, the trace
//! comparator, and the calibration that ties them to the reported numbers.
//!
//! Every experiment is a plain [`RunConfig`] built from committed calibration
//! parameters, run through the engine and judged by an `evaluate_*` function.
//! The split lets callers tweak a config (negative controls, other seeds)
//! and still reuse the verdict.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Band, Position};
use crate::engine::{EngineError, RunRecord};
use crate::jammer::{JammerState, SensingConfig, DEFAULT_THRESHOLD_DB};
use crate::scenario::{LinkDirections, Node, Role, Scenario, ScenarioError};

pub mod chase;
pub mod cluster;
pub mod fig5;
pub mod gain_sweep;

pub use chase::{run_fig3_chase, ChaseParams, ChaseVerdict};
pub use cluster::{run_cluster_impact, ClusterParams, ClusterVerdict};
pub use fig5::{run_fig5, Fig5Params, Fig5Verdict};
pub use gain_sweep::{run_gain_sweep, GainSweepParams, GainSweepVerdict};

/// Seed used by the `run_*` entry points.
pub const DEFAULT_SEED: u64 = 1;
pub const SENSING_FFT_SIZE: usize = 1024;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace {path}: {message}")]
    Trace { path: PathBuf, message: String },
    #[error("I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("calibration: {0}")]
    Calibration(String),
}

pub trait Verdict: Serialize {
    fn passed(&self) -> bool;
}

#[derive(Debug, Clone)]
pub struct Outcome<V> {
    pub record: RunRecord,
    pub verdict: V,
}

/// Persist the record and `verdict.json` under `out_dir`, if given.
pub(crate) fn finish<V: Verdict>(
    record: RunRecord,
    verdict: V,
    out_dir: Option<&Path>,
) -> Result<Outcome<V>, ExperimentError> {
    if let Some(dir) = out_dir {
        record.persist(dir)?;
        let p = dir.join("verdict.json");
        let body = serde_json::json!({ "passed": verdict.passed(), "checks": verdict });
        fs::write(&p, serde_json::to_string_pretty(&body).expect("verdict serializes"))
            .map_err(|source| ExperimentError::Io { path: p, source })?;
    }
    Ok(Outcome { record, verdict })
}

/// Per-sample agreement between two percent-of-baseline traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceComparison {
    pub accuracy_pct: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub aligned_len: usize,
}

/// `accuracy(t) = 100 - |a(t) - b(t)|`, clamped to [0, 100], over the common
/// prefix of both traces. Both must share a sampling cadence.
pub fn compare_traces(a: &[f64], b: &[f64]) -> Result<TraceComparison, ExperimentError> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(ExperimentError::EmptyTrace);
    }
    let accuracy_pct: Vec<f64> = a.iter().zip(b).map(|(x, y)| (100.0 - (x - y).abs()).clamp(0.0, 100.0)).collect();
    let min = accuracy_pct.iter().copied().fold(f64::INFINITY, f64::min);
    let max = accuracy_pct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = accuracy_pct.iter().sum::<f64>() / n as f64;
    Ok(TraceComparison { accuracy_pct, min, mean, max, aligned_len: n })
}

/// Read one numeric column of a CSV file with a header row.
///
/// Works on the engine's `metrics.csv` (filter by `link_id` with
/// `link_filter`) as well as on two-column external traces.
pub fn read_trace_csv(path: &Path, column: &str, link_filter: Option<&str>) -> Result<Vec<f64>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
    parse_trace_csv(&text, column, link_filter)
        .map_err(|message| ExperimentError::Trace { path: path.into(), message })
}

pub fn parse_trace_csv(text: &str, column: &str, link_filter: Option<&str>) -> Result<Vec<f64>, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = headers.iter().position(|h| h == column).ok_or_else(|| format!("no column {column:?}"))?;
    let link_col = headers.iter().position(|h| h == "link_id");
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        if let (Some(want), Some(lc)) = (link_filter, link_col) {
            if row.get(lc) != Some(want) {
                continue;
            }
        }
        let cell = row.get(col).ok_or_else(|| format!("row {}: missing {column}", i + 1))?;
        out.push(cell.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1))?);
    }
    if out.is_empty() {
        return Err("no samples".into());
    }
    Ok(out)
}

pub fn write_trace_csv(path: &Path, times: &[f64], values: &[f64], column: &str) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["time_s", column]).map_err(|e| io(e.into()))?;
    for (t, v) in times.iter().zip(values) {
        w.write_record([t.to_string(), v.to_string()]).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Trailing moving average; the first `window - 1` outputs average what is
/// available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (i, x) in xs.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Mean of `values` over samples whose time lies in `[from, to)`.
pub fn window_mean(times: &[f64], values: &[f64], from: f64, to: f64) -> f64 {
    let (sum, n) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= from - 1e-9 && **t < to - 1e-9)
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Noise power of one subband of `band`, in dBm.
pub(crate) fn subband_noise_dbm(sc: &Scenario, band: &Band) -> f64 {
    sc.noise_floor_dbm_per_hz + 10.0 * (band.width_hz / sc.n_subbands as f64).log10()
}

/// One base station and one attached user, downlink only.
pub(crate) fn single_link_scenario(bs: (&str, Position, f64), ue: (&str, Position), band: Band) -> Scenario {
    let mut sc = Scenario::empty();
    sc.link_directions = LinkDirections::Downlink;
    sc.nodes.push(Node {
        id: bs.0.into(),
        role: Role::BaseStation,
        position_m: bs.1,
        cluster: 0,
        tx_power_dbm: bs.2,
        band,
        hop: None,
    });
    sc.nodes.push(Node {
        id: ue.0.into(),
        role: Role::User,
        position_m: ue.1,
        cluster: 0,
        tx_power_dbm: crate::scenario::DEFAULT_UE_POWER_DBM,
        band: sc.uplink_band,
        hop: None,
    });
    sc.attachments.insert(ue.0.into(), bs.0.into());
    sc
}

pub(crate) fn add_jammer(sc: &mut Scenario, position_m: Position, tx_power_dbm: f64, state: JammerState) {
    sc.nodes.push(Node {
        id: "jammer".into(),
        role: Role::Jammer,
        position_m,
        cluster: 0,
        tx_power_dbm,
        band: state.tuned_band,
        hop: None,
    });
    sc.jammer = Some(state);
}

pub(crate) fn sensing_for(sc: &Scenario, band: Band) -> SensingConfig {
    SensingConfig::for_band(band, SENSING_FFT_SIZE, DEFAULT_THRESHOLD_DB, sc.noise_floor_dbm_per_hz)
}

/// Times and one field of a link's samples.
pub(crate) fn link_trace(record: &RunRecord, link_id: &str, field: fn(&crate::network::LinkSample) -> f64) -> (Vec<f64>, Vec<f64>) {
    let series = record.series(link_id).unwrap_or_else(|| panic!("record has no link {link_id}"));
    series.samples.iter().map(|s| (s.time_s, field(s))).unzip()
}

/// Parameters for all four experiments, produced by the `calibrate` example
/// and committed as `data/calibration.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fig5: Fig5Params,
    pub gain_sweep: GainSweepParams,
    pub cluster: ClusterParams,
    pub chase: ChaseParams,
}

impl Calibration {
    pub fn committed() -> Self {
        serde_json::from_str(include_str!("../../data/calibration.json")).expect("committed calibration parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_definition_cases() {
        let a = vec![100.0; 10];
        let c = compare_traces(&a, &a).unwrap();
        assert!(c.accuracy_pct.iter().all(|x| *x == 100.0));
        let b = vec![75.0; 10];
        let c = compare_traces(&a, &b).unwrap();
        assert_eq!((c.min, c.mean, c.max), (75.0, 75.0, 75.0));
        let c = compare_traces(&a, &[-500.0, 300.0]).unwrap();
        assert_eq!(c.aligned_len, 2);
        assert_eq!(c.accuracy_pct, vec![0.0, 0.0]);
        assert!(matches!(compare_traces(&[], &a), Err(ExperimentError::EmptyTrace)));
    }

    #[test]
    fn spearman_handles_ties_and_direction() {
        let g = [0.0, 0.0, 5.0, 5.0, 10.0];
        let s = [30.0, 30.0, 20.0, 20.0, 10.0];
        assert!((spearman(&g, &s) + 1.0).abs() < 1e-12);
        assert!((spearman(&g, &g) - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
    }

    #[test]
    fn moving_average_and_median() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn trace_csv_round_trip_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trace_csv(&p, &[0.0, 0.01], &[100.0, 42.5], "throughput_pct").unwrap();
        assert_eq!(read_trace_csv(&p, "throughput_pct", None).unwrap(), vec![100.0, 42.5]);
        let metrics = "time_s,node_id,link_id,throughput_pct\n0,a,dl:a,1\n0,b,dl:b,2\n0.1,a,dl:a,3\n";
        assert_eq!(parse_trace_csv(metrics, "throughput_pct", Some("dl:a")).unwrap(), vec![1.0, 3.0]);
        assert!(parse_trace_csv(metrics, "nope", None).is_err());
        assert!(parse_trace_csv("time_s,x\n0,abc\n", "x", None).is_err());
    }
}
