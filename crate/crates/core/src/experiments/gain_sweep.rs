//! Barrage jammer with a rising then falling gain staircase over 15 minutes.
//! The victim's SINR mirrors the staircase and the link detaches only while
//! the gain sits at its maximum.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{add_jammer, finish, median, sensing_for, single_link_scenario, spearman, subband_noise_dbm, ExperimentError, Outcome, Verdict};
use crate::channel::path_loss_db;
use crate::engine::{run, RunConfig, RunRecord};
use crate::jammer::{GainSchedule, JammerMode, JammerState};
use crate::scenario::Scenario;
use crate::waveforms::{power_to_db, WaveformKind, WaveformSpec};

pub const DURATION_S: f64 = 900.0;
pub const TICK_S: f64 = 0.1;
pub const LINK_ID: &str = "dl:ue";
pub const STEP_DB: f64 = 5.0;
pub const MAX_GAIN_DB: f64 = 32.0;
/// Jammer-to-noise ratio at the lower plateau above which a step counts as
/// jammer-dominated.
pub const DOMINATED_JNR_DB: f64 = 6.0;
pub const STEP_DROP_RANGE_PTS: (f64, f64) = (16.0, 20.0);
pub const MAX_RANK_CORRELATION: f64 = -0.95;
/// Leading part of each plateau left out of its median.
const SETTLE_S: f64 = 1.0;

/// `(start_s, gain_db)` for each plateau.
pub fn staircase() -> Vec<(f64, f64)> {
    vec![
        (0.0, 0.0),
        (90.0, 5.0),
        (180.0, 10.0),
        (270.0, 15.0),
        (360.0, 20.0),
        (450.0, 25.0),
        (540.0, MAX_GAIN_DB),
        (600.0, 25.0),
        (690.0, 20.0),
        (780.0, 15.0),
        (870.0, 10.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSweepParams {
    pub ue_distance_m: f64,
    pub bs_power_dbm: f64,
    /// Jammer offset from the user, perpendicular to the BS-user axis.
    pub jammer_distance_m: f64,
    pub jammer_power_dbm: f64,
    pub fading_sigma_db: f64,
}

impl GainSweepParams {
    /// Closed-form powers for a jammer-free SNR of `snr_db` and a per-subband
    /// jammer-to-noise ratio of `jnr0_db` at 0 dB gain.
    pub fn solve(ue_distance_m: f64, jammer_distance_m: f64, snr_db: f64, jnr0_db: f64, fading_sigma_db: f64) -> Self {
        let mut p = Self { ue_distance_m, bs_power_dbm: 0.0, jammer_distance_m, jammer_power_dbm: 0.0, fading_sigma_db };
        let sc = scenario(&p);
        let band = sc.downlink_band;
        let noise_total = sc.noise_floor_dbm_per_hz + 10.0 * band.width_hz.log10();
        let pl = path_loss_db([0.0, 0.0], [ue_distance_m, 0.0], &sc.path_loss);
        p.bs_power_dbm = snr_db + noise_total + pl;
        p.jammer_power_dbm = jnr0_db + subband_noise_dbm(&sc, &band) + jammer_loss_db(&sc);
        p
    }
}

fn jammer_loss_db(sc: &Scenario) -> f64 {
    let j = sc.node("jammer").expect("jammer node").position_m;
    let u = sc.node("ue").expect("user node").position_m;
    path_loss_db(j, u, &sc.path_loss)
}

pub fn scenario(p: &GainSweepParams) -> Scenario {
    scenario_with_schedule(p, GainSchedule::from_pairs(&staircase()).expect("staircase is ordered"))
}

pub fn scenario_with_schedule(p: &GainSweepParams, schedule: GainSchedule) -> Scenario {
    let band = Scenario::empty().downlink_band;
    let mut sc = single_link_scenario(("bs", [0.0, 0.0], p.bs_power_dbm), ("ue", [p.ue_distance_m, 0.0]), band);
    sc.fading_sigma_db = p.fading_sigma_db;
    let sensing = sensing_for(&sc, band);
    let waveform = WaveformSpec::new(WaveformKind::BandNoise, band.width_hz, sensing.sample_rate_hz, 1e-3);
    let state = JammerState::new(JammerMode::Proactive, waveform, band, sensing).with_schedule(schedule);
    add_jammer(&mut sc, [p.ue_distance_m, p.jammer_distance_m], p.jammer_power_dbm, state);
    sc
}

pub fn config_for(scenario: Scenario, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(scenario, DURATION_S);
    c.tick_s = TICK_S;
    c.seed = seed;
    c.baseline_window_s = 10.0;
    c.spectrogram_every_ticks = 100;
    c
}

pub fn config(p: &GainSweepParams, seed: u64) -> RunConfig {
    config_for(scenario(p), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDrop {
    pub from_gain_db: f64,
    pub to_gain_db: f64,
    /// Jammer-to-noise ratio per subband at the lower plateau.
    pub jnr_db: f64,
    pub drop_pts: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSweepVerdict {
    pub steps: Vec<StepDrop>,
    pub plateau_medians_pct: Vec<f64>,
    pub rank_correlation: f64,
    pub detached_from_s: Option<f64>,
    pub detached_until_s: Option<f64>,
    pub max_plateau_detached_fraction: f64,
    pub dominated_steps_ok: bool,
    pub detach_ok: bool,
    pub correlation_ok: bool,
}

impl Verdict for GainSweepVerdict {
    fn passed(&self) -> bool {
        self.dominated_steps_ok && self.detach_ok && self.correlation_ok
    }
}

pub fn evaluate(record: &RunRecord) -> GainSweepVerdict {
    let sc = &record.config.scenario;
    let jam = sc.jammer.as_ref().expect("gain sweep has a jammer");
    let steps_cfg = jam.gain_schedule.steps();
    let samples = &record.series(LINK_ID).expect("victim link").samples;
    let dwell = sc.link_status.dwell_s;
    let end = record.n_ticks as f64 * record.config.tick_s;

    let plateaus: Vec<(f64, f64, f64)> = steps_cfg
        .iter()
        .enumerate()
        .map(|(i, s)| (s.time_s, steps_cfg.get(i + 1).map_or(end, |n| n.time_s), s.gain_db))
        .collect();
    let plateau_medians_pct: Vec<f64> = plateaus
        .iter()
        .map(|&(a, b, _)| {
            let mut v: Vec<f64> = samples
                .iter()
                .filter(|s| s.time_s >= a + SETTLE_S - 1e-9 && s.time_s < b - 1e-9)
                .map(|s| s.sinr_pct)
                .collect();
            median(&mut v)
        })
        .collect();

    let jam_pl = jammer_loss_db(sc);
    let noise_sub = subband_noise_dbm(sc, &sc.downlink_band);
    let jammer_power = sc.node("jammer").expect("jammer node").tx_power_dbm;
    let mut steps = Vec::new();
    for i in 1..plateaus.len() {
        let (from, to) = (plateaus[i - 1].2, plateaus[i].2);
        if (to - from - STEP_DB).abs() > 1e-9 {
            continue;
        }
        let jnr_db = jammer_power + from - jam_pl - noise_sub;
        steps.push(StepDrop {
            from_gain_db: from,
            to_gain_db: to,
            jnr_db,
            drop_pts: plateau_medians_pct[i - 1] - plateau_medians_pct[i],
            dominated: jnr_db >= DOMINATED_JNR_DB,
        });
    }
    let dominated: Vec<&StepDrop> = steps.iter().filter(|s| s.dominated).collect();
    let dominated_steps_ok = !dominated.is_empty()
        && dominated.iter().all(|s| (STEP_DROP_RANGE_PTS.0..=STEP_DROP_RANGE_PTS.1).contains(&s.drop_pts));

    let max_gain = plateaus.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let (max_from, max_to) = plateaus
        .iter()
        .find(|p| p.2 == max_gain)
        .map(|p| (p.0, p.1))
        .unwrap_or((0.0, 0.0));
    let detached: Vec<f64> = samples.iter().filter(|s| !s.link_status).map(|s| s.time_s).collect();
    let in_plateau = samples.iter().filter(|s| s.time_s >= max_from - 1e-9 && s.time_s < max_to - 1e-9);
    let (n_in, n_det) = in_plateau.fold((0usize, 0usize), |(n, d), s| (n + 1, d + usize::from(!s.link_status)));
    let max_plateau_detached_fraction = if n_in > 0 { n_det as f64 / n_in as f64 } else { 0.0 };
    let tolerance = dwell + 2.0 * record.config.tick_s;
    let detach_ok = !detached.is_empty()
        && detached.iter().all(|t| *t >= max_from - 1e-9 && *t < max_to + tolerance)
        && max_plateau_detached_fraction >= 0.5
        && samples.last().is_some_and(|s| s.link_status);

    let gains: Vec<f64> = samples.iter().map(|s| jam.gain_schedule.gain_at(s.time_s)).collect();
    let pct: Vec<f64> = samples.iter().map(|s| s.sinr_pct).collect();
    let rank_correlation = spearman(&gains, &pct);

    GainSweepVerdict {
        steps,
        plateau_medians_pct,
        rank_correlation,
        detached_from_s: detached.first().copied(),
        detached_until_s: detached.last().copied(),
        max_plateau_detached_fraction,
        dominated_steps_ok,
        detach_ok,
        correlation_ok: rank_correlation <= MAX_RANK_CORRELATION,
    }
}

pub fn run_with(p: &GainSweepParams, seed: u64, out_dir: Option<&Path>) -> Result<Outcome<GainSweepVerdict>, ExperimentError> {
    let record = run(config(p, seed))?;
    let verdict = evaluate(&record);
    finish(record, verdict, out_dir)
}

pub fn run_gain_sweep(out_dir: &Path) -> Result<Outcome<GainSweepVerdict>, ExperimentError> {
    run_with(&super::Calibration::committed().gain_sweep, super::DEFAULT_SEED, Some(out_dir))
}

/// Jammer-free SNR of the victim, in dB.
pub fn baseline_snr_db(p: &GainSweepParams) -> f64 {
    let sc = scenario(p);
    let noise_total = sc.noise_floor_dbm_per_hz + 10.0 * sc.downlink_band.width_hz.log10();
    p.bs_power_dbm - path_loss_db([0.0, 0.0], [p.ue_distance_m, 0.0], &sc.path_loss) - noise_total
}

/// Jammer-free SINR minus jammed SINR at `gain_db`, from the link budget alone.
pub fn predicted_sinr_db(p: &GainSweepParams, gain_db: f64) -> f64 {
    let sc = scenario(p);
    let jnr = p.jammer_power_dbm + gain_db - jammer_loss_db(&sc) - subband_noise_dbm(&sc, &sc.downlink_band);
    baseline_snr_db(p) - power_to_db(1.0 + 10f64.powf(jnr / 10.0))
}
