//! Reactive follow of a frequency-hopping narrowband link.
//!
//! An access point hops its 2 MHz carrier between two centers 4 MHz apart
//! every 100 ms. A reactive 156 kHz noise jammer senses the 10 MHz band and
//! retunes onto each new carrier after its retune latency.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{add_jammer, finish, sensing_for, single_link_scenario, ExperimentError, Outcome, Verdict};
use crate::channel::{path_loss_db, Band};
use crate::engine::{run, RunConfig, RunRecord};
use crate::jammer::{JammerMode, JammerState, DEFAULT_RETUNE_LATENCY_S};
use crate::scenario::{HopPattern, Scenario};
use crate::waveforms::{db_to_power, power_to_db, WaveformKind, WaveformSpec};

pub const DURATION_S: f64 = 2.0;
pub const TICK_S: f64 = 0.01;
pub const HOP_DWELL_S: f64 = 0.1;
pub const HOP_CENTERS_HZ: [f64; 2] = [2.378e9, 2.382e9];
pub const MONITOR_BAND: Band = Band::new(2.38e9, 10e6);
pub const TARGET_WIDTH_HZ: f64 = 2e6;
pub const JAM_WIDTH_HZ: f64 = 156e3;
/// 11 Mb/s over the 2 MHz carrier.
pub const CAP_BPS_PER_HZ: f64 = 5.5;
pub const LINK_ID: &str = "dl:sta";
pub const RATIO_TARGET: f64 = 4.0 / 11.0;
pub const RATIO_TOLERANCE: f64 = 0.2;
pub const FRACTION_SLACK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaseParams {
    pub sta_distance_m: f64,
    pub ap_power_dbm: f64,
    /// Jammer offset from the access point, perpendicular to the AP-STA axis.
    pub jammer_distance_m: f64,
    pub jammer_power_dbm: f64,
    pub retune_latency_s: f64,
}

impl ChaseParams {
    /// Closed-form powers: `evade_snr_db` when the jammer is off target and a
    /// linear SINR of `caught_sinr` when it sits on the carrier.
    pub fn solve(sta_distance_m: f64, jammer_distance_m: f64, evade_snr_db: f64, caught_sinr: f64) -> Self {
        let mut p = Self {
            sta_distance_m,
            ap_power_dbm: 0.0,
            jammer_distance_m,
            jammer_power_dbm: 0.0,
            retune_latency_s: DEFAULT_RETUNE_LATENCY_S,
        };
        let sc = scenario(&p);
        let noise = sc.noise_floor_dbm_per_hz + 10.0 * TARGET_WIDTH_HZ.log10();
        let pl = path_loss_db([0.0, 0.0], [sta_distance_m, 0.0], &sc.path_loss);
        p.ap_power_dbm = evade_snr_db + noise + pl;
        let s = db_to_power(p.ap_power_dbm - pl);
        // s / (n + j * overlap) = caught_sinr
        let j = (s / caught_sinr - db_to_power(noise)) / (JAM_WIDTH_HZ / TARGET_WIDTH_HZ);
        p.jammer_power_dbm = power_to_db(j) + path_loss_db([0.0, jammer_distance_m], [sta_distance_m, 0.0], &sc.path_loss);
        p
    }
}

fn hopping_scenario(p: &ChaseParams) -> Scenario {
    let carrier = Band::new(HOP_CENTERS_HZ[0], TARGET_WIDTH_HZ);
    let mut sc = single_link_scenario(("ap", [0.0, 0.0], p.ap_power_dbm), ("sta", [p.sta_distance_m, 0.0]), carrier);
    sc.uplink_band = MONITOR_BAND;
    sc.downlink_band = MONITOR_BAND;
    sc.n_subbands = 1;
    sc.cap_bps_per_hz = CAP_BPS_PER_HZ;
    sc.node_mut("ap").expect("ap").hop = Some(HopPattern { centers_hz: HOP_CENTERS_HZ.to_vec(), dwell_s: HOP_DWELL_S });
    sc.node_mut("sta").expect("sta").band = carrier;
    sc
}

fn jammer_state(sc: &Scenario, mode: JammerMode, tuned_center_hz: f64, latency_s: f64) -> JammerState {
    let sensing = sensing_for(sc, MONITOR_BAND);
    let waveform = WaveformSpec::new(WaveformKind::BandNoise, JAM_WIDTH_HZ, sensing.sample_rate_hz, 1e-3);
    JammerState::new(mode, waveform, Band::new(tuned_center_hz, JAM_WIDTH_HZ), sensing).with_latency(latency_s)
}

/// Reactive follower, initially parked at the monitor band center.
pub fn scenario(p: &ChaseParams) -> Scenario {
    let mut sc = hopping_scenario(p);
    let state = jammer_state(&sc, JammerMode::Reactive, MONITOR_BAND.center_hz, p.retune_latency_s);
    add_jammer(&mut sc, [0.0, p.jammer_distance_m], p.jammer_power_dbm, state);
    sc
}

/// Control: a proactive jammer parked on one hop center.
pub fn parked_scenario(p: &ChaseParams, center_hz: f64) -> Scenario {
    let mut sc = hopping_scenario(p);
    let state = jammer_state(&sc, JammerMode::Proactive, center_hz, p.retune_latency_s);
    add_jammer(&mut sc, [0.0, p.jammer_distance_m], p.jammer_power_dbm, state);
    sc
}

pub fn config_for(scenario: Scenario, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(scenario, DURATION_S);
    c.tick_s = TICK_S;
    c.seed = seed;
    c.baseline_window_s = TICK_S;
    c.spectrogram_every_ticks = 1;
    c
}

pub fn config(p: &ChaseParams, seed: u64) -> RunConfig {
    config_for(scenario(p), seed)
}

/// Expected on-target fraction: every hop costs the ticks until the retune lands.
pub fn expected_on_target(latency_s: f64, tick_s: f64, dwell_s: f64) -> f64 {
    let missed = (latency_s / tick_s - 1e-9).ceil();
    1.0 - missed / (dwell_s / tick_s).round()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaseVerdict {
    pub on_target_fraction: f64,
    pub min_on_target_fraction: f64,
    pub high_plateau_bps: f64,
    pub low_plateau_bps: f64,
    pub ratio: f64,
    pub on_target_ok: bool,
    pub ratio_ok: bool,
}

impl Verdict for ChaseVerdict {
    fn passed(&self) -> bool {
        self.on_target_ok && self.ratio_ok
    }
}

/// Per tick: whether the jammer emitted over the target's current carrier.
pub fn on_target(record: &RunRecord) -> Vec<bool> {
    let sc = &record.config.scenario;
    let ap = sc.node("ap").expect("ap node");
    record
        .jammer_log
        .iter()
        .map(|e| e.on && Band::new(e.center_hz, e.width_hz).overlap_width_hz(&ap.band_at(e.time_s)) > 0.0)
        .collect()
}

/// Split throughput samples at the midpoint of their range and average each side.
pub fn plateaus(bps: &[f64]) -> (f64, f64) {
    let hi = bps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = bps.iter().copied().fold(f64::INFINITY, f64::min);
    let mid = 0.5 * (hi + lo);
    let mean = |it: Vec<f64>| if it.is_empty() { f64::NAN } else { it.iter().sum::<f64>() / it.len() as f64 };
    let high = mean(bps.iter().copied().filter(|b| *b >= mid).collect());
    let low = mean(bps.iter().copied().filter(|b| *b < mid).collect());
    // a flat trace has a single plateau
    (high, if low.is_nan() { high } else { low })
}

pub fn evaluate(record: &RunRecord) -> ChaseVerdict {
    let latency = record.config.scenario.jammer.as_ref().map_or(0.0, |j| j.retune_latency_s);
    let flags = on_target(record);
    let on_target_fraction = flags.iter().filter(|f| **f).count() as f64 / flags.len().max(1) as f64;
    let min_on_target_fraction = (100.0 - latency * 1e3) / 100.0 - FRACTION_SLACK;
    let bps: Vec<f64> = record.series(LINK_ID).expect("target link").samples.iter().map(|s| s.throughput_bps).collect();
    let (high, low) = plateaus(&bps);
    let ratio = if high > 0.0 { low / high } else { f64::NAN };
    ChaseVerdict {
        on_target_fraction,
        min_on_target_fraction,
        high_plateau_bps: high,
        low_plateau_bps: low,
        ratio,
        on_target_ok: on_target_fraction >= min_on_target_fraction,
        ratio_ok: (ratio - RATIO_TARGET).abs() <= RATIO_TOLERANCE * RATIO_TARGET,
    }
}

pub fn run_with(p: &ChaseParams, seed: u64, out_dir: Option<&Path>) -> Result<Outcome<ChaseVerdict>, ExperimentError> {
    let record = run(config(p, seed))?;
    let verdict = evaluate(&record);
    finish(record, verdict, out_dir)
}

pub fn run_fig3_chase(out_dir: &Path) -> Result<Outcome<ChaseVerdict>, ExperimentError> {
    run_with(&super::Calibration::committed().chase, super::DEFAULT_SEED, Some(out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ChaseParams {
        ChaseParams::solve(20.0, 10.0, 25.0, 3.0)
    }

    #[test]
    fn twenty_ms_latency_is_eighty_percent_on_target() {
        assert!((expected_on_target(0.02, 0.01, 0.1) - 0.8).abs() < 1e-12);
        let v = evaluate(&run(config(&params(), 1)).unwrap());
        assert!((v.on_target_fraction - 0.8).abs() < 1e-9, "{}", v.on_target_fraction);
        assert!((v.high_plateau_bps - 11e6).abs() < 1.0);
        assert!((v.low_plateau_bps - 4e6).abs() / 4e6 < 1e-6);
        assert!(v.passed());
    }

    #[test]
    fn parked_jammer_hits_half_the_time() {
        let p = params();
        let rec = run(config_for(parked_scenario(&p, HOP_CENTERS_HZ[0]), 1)).unwrap();
        let flags = on_target(&rec);
        let frac = flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64;
        assert!((frac - 0.5).abs() < 1e-9);
        let s = &rec.series(LINK_ID).unwrap().samples;
        for (x, hit) in s.iter().zip(&flags) {
            let want = if *hit { 4e6 } else { 11e6 };
            assert!((x.throughput_bps - want).abs() / want < 1e-6, "t = {}", x.time_s);
        }
    }

    #[test]
    fn silent_jammer_fails() {
        let mut c = config(&params(), 1);
        c.scenario.jammer.as_mut().unwrap().transmitting = false;
        let v = evaluate(&run(c).unwrap());
        assert_eq!(v.on_target_fraction, 0.0);
        assert_eq!(v.ratio, 1.0);
        assert!(!v.on_target_ok && !v.ratio_ok);
    }
}
