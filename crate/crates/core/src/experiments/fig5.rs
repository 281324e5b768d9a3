//! Narrowband FSK jam of a single downlink: throughput drop and recovery.
//!
//! The jammer sits on the lowest `jammed_subbands` subbands of the carrier,
//! turns on at 3.5 s and off at 10 s of a 15 s run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{add_jammer, finish, sensing_for, single_link_scenario, window_mean, ExperimentError, Outcome, Verdict};
use crate::channel::{path_loss_db, Band};
use crate::engine::{run, Event, EventKind, RunConfig, RunRecord};
use crate::jammer::{JammerMode, JammerState};
use crate::scenario::Scenario;
use crate::waveforms::{db_to_power, power_to_db, WaveformKind, WaveformSpec};

pub const DURATION_S: f64 = 15.0;
pub const TICK_S: f64 = 0.01;
pub const JAMMER_ON_S: f64 = 3.5;
pub const JAMMER_OFF_S: f64 = 10.0;
pub const LINK_ID: &str = "dl:ue";
/// Seed of the committed golden trace. Comparisons run other seeds.
pub const GOLDEN_SEED: u64 = 0;

pub const PREJAM_MIN_PCT: f64 = 95.0;
pub const PLATEAU_RANGE_PCT: (f64, f64) = (30.0, 50.0);
pub const RECOVERY_MIN_PCT: f64 = 95.0;
pub const RECOVERY_WITHIN_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Params {
    pub ue_distance_m: f64,
    pub bs_power_dbm: f64,
    /// Jammer offset from the user, perpendicular to the BS-user axis.
    pub jammer_distance_m: f64,
    pub jammer_power_dbm: f64,
    pub jammed_subbands: usize,
    pub fading_sigma_db: f64,
}

impl Fig5Params {
    /// Closed-form powers for a jammer-free SNR of `snr_db` and a jammed
    /// subband SINR of `jammed_sinr_db`.
    pub fn solve(
        ue_distance_m: f64,
        jammer_distance_m: f64,
        snr_db: f64,
        jammed_sinr_db: f64,
        jammed_subbands: usize,
        fading_sigma_db: f64,
    ) -> Self {
        let mut p = Self {
            ue_distance_m,
            bs_power_dbm: 0.0,
            jammer_distance_m,
            jammer_power_dbm: 0.0,
            jammed_subbands,
            fading_sigma_db,
        };
        let sc = scenario(&p);
        let band = sc.downlink_band;
        let n = sc.n_subbands as f64;
        let noise_total = sc.noise_floor_dbm_per_hz + 10.0 * band.width_hz.log10();
        let pl = path_loss_db([0.0, 0.0], [ue_distance_m, 0.0], &sc.path_loss);
        p.bs_power_dbm = snr_db + noise_total + pl;

        let s_sub = db_to_power(p.bs_power_dbm - pl) / n;
        let n_sub = db_to_power(noise_total) / n;
        let jam_rx = power_to_db(s_sub / db_to_power(jammed_sinr_db) - n_sub);
        p.jammer_power_dbm = jam_rx + path_loss_db([ue_distance_m, jammer_distance_m], [ue_distance_m, 0.0], &sc.path_loss);
        p
    }
}

pub fn scenario(p: &Fig5Params) -> Scenario {
    let band = Scenario::empty().downlink_band;
    let mut sc = single_link_scenario(("bs", [0.0, 0.0], p.bs_power_dbm), ("ue", [p.ue_distance_m, 0.0]), band);
    sc.fading_sigma_db = p.fading_sigma_db;
    let w = p.jammed_subbands as f64 * band.width_hz / sc.n_subbands as f64;
    let tuned = Band::new(band.low_hz() + w / 2.0, w);
    let sensing = sensing_for(&sc, band);
    let waveform = WaveformSpec::new(WaveformKind::Fsk, w, sensing.sample_rate_hz, 1e-3);
    let state = JammerState::new(JammerMode::Proactive, waveform, tuned, sensing).armed(false);
    add_jammer(&mut sc, [p.ue_distance_m, p.jammer_distance_m], p.jammer_power_dbm, state);
    sc
}

pub fn config(p: &Fig5Params, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(scenario(p), DURATION_S);
    c.tick_s = TICK_S;
    c.seed = seed;
    c.timeline = vec![Event::at(JAMMER_ON_S, EventKind::JammerOn), Event::at(JAMMER_OFF_S, EventKind::JammerOff)];
    c.baseline_window_s = 3.0;
    c.spectrogram_every_ticks = 10;
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Verdict {
    pub prejam_mean_pct: f64,
    pub plateau_mean_pct: f64,
    pub recovery_mean_pct: f64,
    /// First tick at or after jammer-off with throughput back at the threshold.
    pub recovery_time_s: Option<f64>,
    pub prejam_ok: bool,
    pub plateau_ok: bool,
    pub recovery_ok: bool,
}

impl Verdict for Fig5Verdict {
    fn passed(&self) -> bool {
        self.prejam_ok && self.plateau_ok && self.recovery_ok
    }
}

/// Throughput trace of the monitored link, in percent of baseline.
pub fn trace(record: &RunRecord) -> (Vec<f64>, Vec<f64>) {
    super::link_trace(record, LINK_ID, |s| s.throughput_pct)
}

pub fn evaluate(record: &RunRecord) -> Fig5Verdict {
    let (t, pct) = trace(record);
    let prejam_mean_pct = window_mean(&t, &pct, 0.0, 3.0);
    let plateau_mean_pct = window_mean(&t, &pct, 6.0, JAMMER_OFF_S);
    let recovery_mean_pct = window_mean(&t, &pct, JAMMER_OFF_S + RECOVERY_WITHIN_S, DURATION_S);
    let recovery_time_s = t
        .iter()
        .zip(&pct)
        .find(|(ti, p)| **ti >= JAMMER_OFF_S - 1e-9 && **p >= RECOVERY_MIN_PCT)
        .map(|(ti, _)| *ti);
    Fig5Verdict {
        prejam_mean_pct,
        plateau_mean_pct,
        recovery_mean_pct,
        recovery_time_s,
        prejam_ok: prejam_mean_pct >= PREJAM_MIN_PCT,
        plateau_ok: (PLATEAU_RANGE_PCT.0..=PLATEAU_RANGE_PCT.1).contains(&plateau_mean_pct),
        recovery_ok: recovery_mean_pct >= RECOVERY_MIN_PCT
            && recovery_time_s.is_some_and(|r| r <= JAMMER_OFF_S + RECOVERY_WITHIN_S),
    }
}

pub fn run_with(p: &Fig5Params, seed: u64, out_dir: Option<&Path>) -> Result<Outcome<Fig5Verdict>, ExperimentError> {
    let record = run(config(p, seed))?;
    let verdict = evaluate(&record);
    finish(record, verdict, out_dir)
}

/// Run with the committed calibration and the default seed, writing the
/// record and `verdict.json` to `out_dir`.
pub fn run_fig5(out_dir: &Path) -> Result<Outcome<Fig5Verdict>, ExperimentError> {
    run_with(&super::Calibration::committed().fig5, super::DEFAULT_SEED, Some(out_dir))
}

/// The committed golden throughput trace (percent of baseline, one sample per tick).
pub fn golden_trace() -> Vec<f64> {
    super::parse_trace_csv(include_str!("../../data/golden_fig5.csv"), "throughput_pct", None)
        .expect("committed golden trace parses")
}
