//! The adversary: energy-detection sensing and the proactive/reactive
//! transmit state machine.
//!
//! A proactive jammer transmits whenever it is enabled. A reactive jammer
//! transmits only while it senses energy in its monitor band (plus a short
//! hold), and retunes onto the strongest detected peak after a fixed latency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Band;
use crate::waveforms::{PsdFrame, WaveformSpec};

pub const DEFAULT_HOLD_S: f64 = 0.05;
pub const DEFAULT_RETUNE_LATENCY_S: f64 = 0.02;
pub const DEFAULT_THRESHOLD_DB: f64 = 10.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum JammerError {
    #[error("gain schedule is empty")]
    EmptySchedule,
    #[error("gain schedule times must be strictly increasing (step {index})")]
    UnorderedSchedule { index: usize },
    #[error("PSD frame [{frame_lo_hz}, {frame_hi_hz}] Hz does not cover monitor band [{band_lo_hz}, {band_hi_hz}] Hz")]
    FrameDoesNotCover { frame_lo_hz: f64, frame_hi_hz: f64, band_lo_hz: f64, band_hi_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JammerMode {
    Proactive,
    Reactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainStep {
    pub time_s: f64,
    #[serde(with = "crate::serde_db")]
    pub gain_db: f64,
}

/// Piecewise-constant gain over time, right-continuous at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GainStep>", into = "Vec<GainStep>")]
pub struct GainSchedule(Vec<GainStep>);

impl GainSchedule {
    pub fn new(steps: Vec<GainStep>) -> Result<Self, JammerError> {
        if steps.is_empty() {
            return Err(JammerError::EmptySchedule);
        }
        if let Some(index) = steps.windows(2).position(|w| w[1].time_s <= w[0].time_s) {
            return Err(JammerError::UnorderedSchedule { index: index + 1 });
        }
        Ok(Self(steps))
    }

    pub fn constant(gain_db: f64) -> Self {
        Self(vec![GainStep { time_s: 0.0, gain_db }])
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, JammerError> {
        Self::new(pairs.iter().map(|&(time_s, gain_db)| GainStep { time_s, gain_db }).collect())
    }

    pub fn steps(&self) -> &[GainStep] {
        &self.0
    }

    pub fn gain_at(&self, time_s: f64) -> f64 {
        gain_at(&self.0, time_s).expect("schedule is non-empty by construction")
    }

    /// Replace everything from `time_s` on with a constant `gain_db`.
    pub fn override_from(&mut self, time_s: f64, gain_db: f64) {
        self.0.retain(|s| s.time_s < time_s);
        self.0.push(GainStep { time_s, gain_db });
    }
}

impl TryFrom<Vec<GainStep>> for GainSchedule {
    type Error = JammerError;

    fn try_from(v: Vec<GainStep>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<GainSchedule> for Vec<GainStep> {
    fn from(s: GainSchedule) -> Self {
        s.0
    }
}

/// Gain of the latest step at or before `time_s`; the first step's gain before
/// the schedule starts.
pub fn gain_at(schedule: &[GainStep], time_s: f64) -> Result<f64, JammerError> {
    let first = schedule.first().ok_or(JammerError::EmptySchedule)?;
    let idx = schedule.partition_point(|s| s.time_s <= time_s + TIME_EPS);
    Ok(if idx == 0 { first.gain_db } else { schedule[idx - 1].gain_db })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingConfig {
    pub monitor_band: Band,
    pub fft_size: usize,
    pub sample_rate_hz: f64,
    pub threshold_db_above_floor: f64,
    /// Expected noise level of one bin, in the frame's dB unit.
    pub noise_floor_db: f64,
    #[serde(default = "one")]
    pub min_detections: u32,
}

fn one() -> u32 {
    1
}

impl SensingConfig {
    /// Monitor `band` with `fft_size` bins, sampling at 1.25x the band width so
    /// the band edges fall well inside the frame.
    pub fn for_band(band: Band, fft_size: usize, threshold_db: f64, noise_dbm_per_hz: f64) -> Self {
        let sample_rate_hz = band.width_hz * 1.25;
        let bin_hz = sample_rate_hz / fft_size as f64;
        Self {
            monitor_band: band,
            fft_size,
            sample_rate_hz,
            threshold_db_above_floor: threshold_db,
            noise_floor_db: noise_dbm_per_hz + 10.0 * bin_hz.log10(),
            min_detections: 1,
        }
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz / self.fft_size as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub present: bool,
    pub peak_freq_hz: f64,
    pub peak_power_db: f64,
}

impl Detection {
    pub const NONE: Detection = Detection { present: false, peak_freq_hz: 0.0, peak_power_db: f64::NEG_INFINITY };
}

/// Energy detection over the bins whose centers fall inside the monitor band.
pub fn sense(frame: &PsdFrame, cfg: &SensingConfig) -> Result<Detection, JammerError> {
    let band = cfg.monitor_band;
    let half = frame.freq_step_hz / 2.0;
    let lo = frame.freq_start_hz - half;
    let hi = frame.freq_end_hz() + half;
    let tol = 1e-6 * frame.freq_step_hz;
    if frame.power_db.is_empty() || lo > band.low_hz() + tol || hi < band.high_hz() - tol {
        return Err(JammerError::FrameDoesNotCover {
            frame_lo_hz: lo,
            frame_hi_hz: hi,
            band_lo_hz: band.low_hz(),
            band_hi_hz: band.high_hz(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in frame.power_db.iter().enumerate() {
        if band.contains(frame.bin_freq(k)) && best.is_none_or(|(_, b)| *p > b) {
            best = Some((k, *p));
        }
    }
    let Some((k, peak)) = best else {
        return Ok(Detection::NONE);
    };
    Ok(Detection {
        present: peak > cfg.noise_floor_db + cfg.threshold_db_above_floor,
        peak_freq_hz: frame.bin_freq(k),
        peak_power_db: peak,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingRetune {
    pub target: Band,
    pub due_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TxDecision {
    Off,
    On { band: Band, gain_db: f64 },
}

impl TxDecision {
    pub fn is_on(&self) -> bool {
        matches!(self, TxDecision::On { .. })
    }
}

/// Configuration plus runtime state of the single jammer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JammerState {
    pub mode: JammerMode,
    pub waveform: WaveformSpec,
    pub tuned_band: Band,
    pub gain_schedule: GainSchedule,
    pub sensing: SensingConfig,
    #[serde(default = "default_latency")]
    pub retune_latency_s: f64,
    #[serde(default = "default_hold")]
    pub hold_s: f64,
    /// Armed by JammerOn / disarmed by JammerOff.
    #[serde(default = "yes")]
    pub transmitting: bool,
    #[serde(default)]
    pub pending_retune: Option<PendingRetune>,
    #[serde(default)]
    pub last_detection_s: Option<f64>,
    #[serde(default)]
    pub consecutive_detections: u32,
}

fn default_latency() -> f64 {
    DEFAULT_RETUNE_LATENCY_S
}

fn default_hold() -> f64 {
    DEFAULT_HOLD_S
}

fn yes() -> bool {
    true
}

impl JammerState {
    pub fn new(mode: JammerMode, waveform: WaveformSpec, tuned_band: Band, sensing: SensingConfig) -> Self {
        Self {
            mode,
            waveform,
            tuned_band,
            gain_schedule: GainSchedule::constant(0.0),
            sensing,
            retune_latency_s: DEFAULT_RETUNE_LATENCY_S,
            hold_s: DEFAULT_HOLD_S,
            transmitting: true,
            pending_retune: None,
            last_detection_s: None,
            consecutive_detections: 0,
        }
    }

    pub fn with_schedule(mut self, schedule: GainSchedule) -> Self {
        self.gain_schedule = schedule;
        self
    }

    pub fn with_latency(mut self, latency_s: f64) -> Self {
        self.retune_latency_s = latency_s;
        self
    }

    pub fn armed(mut self, on: bool) -> Self {
        self.transmitting = on;
        self
    }

    /// Immediate retune; cancels any pending follow.
    pub fn set_center(&mut self, center_hz: f64) {
        self.tuned_band = self.tuned_band.recentered(center_hz);
        self.pending_retune = None;
    }
}

/// Advance the jammer by one sensing step.
pub fn jammer_step(state: &JammerState, detection: &Detection, time_s: f64) -> (JammerState, TxDecision) {
    let mut s = state.clone();
    s.consecutive_detections = if detection.present { s.consecutive_detections.saturating_add(1) } else { 0 };
    let confirmed = detection.present && s.consecutive_detections >= s.sensing.min_detections.max(1);

    if s.mode == JammerMode::Reactive && confirmed {
        s.last_detection_s = Some(time_s);
        let peak = detection.peak_freq_hz;
        if s.tuned_band.contains(peak) {
            s.pending_retune = None;
        } else if !s.pending_retune.is_some_and(|p| p.target.contains(peak)) {
            s.pending_retune = Some(PendingRetune {
                target: s.tuned_band.recentered(peak),
                due_s: time_s + s.retune_latency_s,
            });
        }
    }

    if let Some(p) = s.pending_retune {
        if time_s + TIME_EPS >= p.due_s {
            s.tuned_band = p.target;
            s.pending_retune = None;
        }
    }

    let active = s.transmitting
        && match s.mode {
            JammerMode::Proactive => true,
            JammerMode::Reactive => s.last_detection_s.is_some_and(|d| time_s - d <= s.hold_s + TIME_EPS),
        };
    let decision = if active {
        TxDecision::On { band: s.tuned_band, gain_db: s.gain_schedule.gain_at(time_s) }
    } else {
        TxDecision::Off
    };
    (s, decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveforms::WaveformKind;

    fn monitor() -> SensingConfig {
        SensingConfig::for_band(Band::new(2.38e9, 10e6), 1024, 10.0, -174.0)
    }

    fn jammer(mode: JammerMode) -> JammerState {
        let wf = WaveformSpec::new(WaveformKind::BandNoise, 156e3, 12.5e6, 1e-3);
        JammerState::new(mode, wf, Band::new(2.378e9, 156e3), monitor())
    }

    fn flat_frame(cfg: &SensingConfig, level_db: f64) -> PsdFrame {
        let step = cfg.bin_hz();
        PsdFrame {
            freq_start_hz: cfg.monitor_band.center_hz - step * (cfg.fft_size / 2) as f64,
            freq_step_hz: step,
            power_db: vec![level_db; cfg.fft_size],
            timestamp_s: 0.0,
        }
    }

    #[test]
    fn gain_lookup() {
        assert_eq!(gain_at(&[GainStep { time_s: 0.0, gain_db: 0.0 }], 5.0), Ok(0.0));
        let stair = GainSchedule::from_pairs(&[(0.0, 0.0), (90.0, 5.0), (180.0, 10.0)]).unwrap();
        assert_eq!(stair.gain_at(95.0), 5.0);
        assert_eq!(stair.gain_at(90.0), 5.0);
        assert_eq!(stair.gain_at(1e6), 10.0);
        assert_eq!(GainSchedule::from_pairs(&[(10.0, 3.0)]).unwrap().gain_at(0.0), 3.0);
        assert_eq!(gain_at(&[], 1.0), Err(JammerError::EmptySchedule));
        assert_eq!(
            GainSchedule::from_pairs(&[(0.0, 0.0), (0.0, 1.0)]),
            Err(JammerError::UnorderedSchedule { index: 1 })
        );
    }

    #[test]
    fn override_truncates_the_future() {
        let mut s = GainSchedule::from_pairs(&[(0.0, 0.0), (90.0, 5.0), (180.0, 10.0)]).unwrap();
        s.override_from(100.0, 20.0);
        assert_eq!(s.gain_at(95.0), 5.0);
        assert_eq!(s.gain_at(500.0), 20.0);
        s.override_from(100.0, 21.0);
        assert_eq!(s.steps().len(), 3);
        assert_eq!(s.gain_at(100.0), 21.0);
    }

    #[test]
    fn silence_is_not_detected() {
        let cfg = monitor();
        let d = sense(&flat_frame(&cfg, cfg.noise_floor_db), &cfg).unwrap();
        assert!(!d.present);
    }

    #[test]
    fn uncovered_band_is_an_error() {
        let cfg = monitor();
        let mut frame = flat_frame(&cfg, -100.0);
        frame.freq_start_hz += 3e6;
        assert!(matches!(sense(&frame, &cfg), Err(JammerError::FrameDoesNotCover { .. })));
    }

    #[test]
    fn boundary_level_just_below_threshold() {
        let cfg = monitor();
        let mut frame = flat_frame(&cfg, cfg.noise_floor_db);
        frame.power_db[700] = cfg.noise_floor_db + cfg.threshold_db_above_floor - 0.1;
        assert!(!sense(&frame, &cfg).unwrap().present);
        frame.power_db[700] = cfg.noise_floor_db + cfg.threshold_db_above_floor + 0.1;
        let d = sense(&frame, &cfg).unwrap();
        assert!(d.present);
        assert_eq!(d.peak_freq_hz, frame.bin_freq(700));
    }

    #[test]
    fn proactive_is_always_on() {
        let mut s = jammer(JammerMode::Proactive);
        for k in 0..10 {
            let (next, tx) = jammer_step(&s, &Detection::NONE, k as f64 * 0.01);
            assert_eq!(tx, TxDecision::On { band: s.tuned_band, gain_db: 0.0 });
            s = next;
        }
    }

    #[test]
    fn reactive_stays_silent_without_energy() {
        let mut s = jammer(JammerMode::Reactive);
        for k in 0..100 {
            let (next, tx) = jammer_step(&s, &Detection::NONE, k as f64 * 0.01);
            assert_eq!(tx, TxDecision::Off);
            s = next;
        }
    }

    #[test]
    fn reactive_follows_a_hop_after_latency() {
        let mut s = jammer(JammerMode::Reactive).with_latency(0.02);
        let hop = Detection { present: true, peak_freq_hz: 2.382e9, peak_power_db: -60.0 };
        let mut moved_at = None;
        for k in 0..10 {
            let t = k as f64 * 0.01;
            let (next, tx) = jammer_step(&s, &hop, t);
            s = next;
            assert!(tx.is_on());
            if moved_at.is_none() && s.tuned_band.contains(2.382e9) {
                moved_at = Some(t);
            }
        }
        assert_eq!(moved_at, Some(0.02));
        assert_eq!(s.tuned_band.center_hz, 2.382e9);
    }

    #[test]
    fn hold_keeps_transmitting_briefly() {
        let s = jammer(JammerMode::Reactive);
        let tone = Detection { present: true, peak_freq_hz: 2.378e9, peak_power_db: -60.0 };
        let (s, tx) = jammer_step(&s, &tone, 0.0);
        assert!(tx.is_on());
        let (s, tx) = jammer_step(&s, &Detection::NONE, 0.05);
        assert!(tx.is_on());
        let (_, tx) = jammer_step(&s, &Detection::NONE, 0.06);
        assert!(!tx.is_on());
    }

    #[test]
    fn min_detections_debounces() {
        let mut s = jammer(JammerMode::Reactive);
        s.sensing.min_detections = 3;
        let tone = Detection { present: true, peak_freq_hz: 2.378e9, peak_power_db: -60.0 };
        let mut on = vec![];
        for k in 0..4 {
            let (next, tx) = jammer_step(&s, &tone, k as f64 * 0.01);
            on.push(tx.is_on());
            s = next;
        }
        assert_eq!(on, vec![false, false, true, true]);
    }

    #[test]
    fn disarmed_jammer_never_transmits() {
        let s = jammer(JammerMode::Proactive).armed(false);
        assert_eq!(jammer_step(&s, &Detection::NONE, 0.0).1, TxDecision::Off);
    }
}
