//! Discrete-time simulation loop.
//!
//! Each tick runs, in order: due timeline events and queued commands, jammer
//! sensing and state update, per-link SINR/throughput/status, and metric
//! recording. Commands only take effect at tick boundaries, so a run is a pure
//! function of its config and the ordered command log.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{path_loss_db, Band, Position};
use crate::jammer::{jammer_step, sense, Detection, JammerMode, JammerState, TxDecision};
use crate::network::{self, Interferer, LinkMetrics, LinkSample, LinkStatusState};
use crate::rng;
use crate::scenario::{Scenario, ScenarioError};
use crate::waveforms::{self, apply_gain, frequency_shift, psd, IqBuffer, PsdFrame, WaveformKind, WaveformSpec, Window};

pub const DEFAULT_TICK_S: f64 = 0.01;
/// FFT blocks averaged into one spectrogram row.
pub const SPECTROGRAM_BLOCKS: usize = 4;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run is not live")]
    NotLive,
    #[error("invalid command: {0}")]
    BadCommand(String),
    #[error("waveform: {0}")]
    Waveform(#[from] waveforms::WaveformError),
    #[error("I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn invalid(field: &str, reason: impl Into<String>) -> EngineError {
    EngineError::InvalidConfig { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    JammerOn,
    JammerOff,
    SetGain {
        #[serde(with = "crate::serde_db")]
        gain_db: f64,
    },
    SetCenter { center_hz: f64 },
    SetMode { mode: JammerMode },
    StartTraffic,
    StopTraffic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn at(time_s: f64, kind: EventKind) -> Self {
        Self { time_s, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timeline: Vec<Event>,
    #[serde(default = "one")]
    pub spectrogram_every_ticks: u64,
    #[serde(default = "default_baseline_window")]
    pub baseline_window_s: f64,
}

fn default_tick() -> f64 {
    DEFAULT_TICK_S
}
fn one() -> u64 {
    1
}
fn default_baseline_window() -> f64 {
    1.0
}

impl RunConfig {
    pub fn new(scenario: Scenario, duration_s: f64) -> Self {
        Self {
            scenario,
            duration_s,
            tick_s: DEFAULT_TICK_S,
            seed: 0,
            timeline: Vec::new(),
            spectrogram_every_ticks: 1,
            baseline_window_s: 1.0,
        }
    }

    pub fn n_ticks(&self) -> u64 {
        (self.duration_s / self.tick_s - TIME_EPS).ceil().max(1.0) as u64
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.tick_s > 0.0 && self.tick_s.is_finite()) {
            return Err(invalid("tick_s", "must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if self.spectrogram_every_ticks == 0 {
            return Err(invalid("spectrogram_every_ticks", "must be at least 1"));
        }
        if !(self.baseline_window_s > 0.0 && self.baseline_window_s <= self.duration_s + TIME_EPS) {
            return Err(invalid("baseline_window_s", "must be positive and within the run"));
        }
        for (i, w) in self.timeline.windows(2).enumerate() {
            if w[1].time_s < w[0].time_s {
                return Err(invalid(&format!("timeline[{}]", i + 1), "events must be time-ordered"));
            }
        }
        for (i, e) in self.timeline.iter().enumerate() {
            if !(e.time_s >= 0.0 && e.time_s <= self.duration_s + TIME_EPS) {
                return Err(invalid(&format!("timeline[{i}].time_s"), "outside the run"));
            }
            validate_command(&self.scenario, &e.kind).map_err(|reason| invalid(&format!("timeline[{i}]"), reason))?;
        }
        self.scenario.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Payload checks shared by the timeline and live commands.
pub fn validate_command(scenario: &Scenario, kind: &EventKind) -> Result<(), String> {
    match *kind {
        EventKind::SetGain { gain_db } if gain_db.is_nan() || gain_db == f64::INFINITY => {
            Err(format!("gain_db must be finite or -inf, got {gain_db}"))
        }
        EventKind::SetCenter { center_hz } => {
            let (lo, hi) = scenario.spectrum_span_hz();
            if center_hz.is_finite() && center_hz >= lo && center_hz <= hi {
                Ok(())
            } else {
                Err(format!("center_hz {center_hz} outside emulated spectrum [{lo}, {hi}]"))
            }
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSeries {
    pub link_id: String,
    pub node_id: String,
    pub samples: Vec<LinkSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub throughput_bps: f64,
    pub sinr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramFrame {
    pub tick: u64,
    pub frame: PsdFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JammerLogEntry {
    pub tick: u64,
    pub time_s: f64,
    pub mode: JammerMode,
    pub armed: bool,
    pub on: bool,
    pub center_hz: f64,
    pub width_hz: f64,
    #[serde(with = "crate::serde_db")]
    pub gain_db: f64,
    pub detected: bool,
    pub peak_freq_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedCommand {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: RunConfig,
    pub n_ticks: u64,
    pub links: Vec<LinkSeries>,
    pub baselines: Vec<Baseline>,
    pub spectrogram: Vec<SpectrogramFrame>,
    pub jammer_log: Vec<JammerLogEntry>,
    pub commands: Vec<AppliedCommand>,
}

impl RunRecord {
    pub fn series(&self, link_id: &str) -> Option<&LinkSeries> {
        self.links.iter().find(|l| l.link_id == link_id)
    }

    pub fn baseline(&self, link_id: &str) -> Option<Baseline> {
        self.links.iter().position(|l| l.link_id == link_id).map(|i| self.baselines[i])
    }

    /// Metrics rows in tick-major, link-minor order.
    pub fn metrics_rows(&self) -> impl Iterator<Item = LinkMetrics> + '_ {
        (0..self.n_ticks as usize).flat_map(move |k| {
            self.links.iter().map(move |l| metrics_row(l, &l.samples[k]))
        })
    }

    /// Write the record as `config.json`, `baseline.json`, `metrics.csv`,
    /// `spectrogram.bin`, `jammer_log.jsonl` and `commands.jsonl` under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<Vec<PathBuf>, EngineError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EngineError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();

        let p = dir.join("config.json");
        let snapshot = serde_json::json!({
            "schema_version": 1,
            "config_hash": self.config_hash,
            "config": self.config,
        });
        fs::write(&p, serde_json::to_string_pretty(&snapshot).expect("serializes")).map_err(io(&p))?;
        written.push(p);

        let p = dir.join("baseline.json");
        let baselines: Vec<_> = self
            .links
            .iter()
            .zip(&self.baselines)
            .map(|(l, b)| serde_json::json!({"link_id": l.link_id, "throughput_bps": b.throughput_bps, "sinr_db": b.sinr_db}))
            .collect();
        fs::write(&p, serde_json::to_string_pretty(&baselines).expect("serializes")).map_err(io(&p))?;
        written.push(p);

        let p = dir.join("metrics.csv");
        let file = fs::File::create(&p).map_err(io(&p))?;
        write_metrics_csv(self.metrics_rows(), file).map_err(io(&p))?;
        written.push(p);

        let p = dir.join("spectrogram.bin");
        let mut buf = Vec::new();
        write_spectrogram(&self.spectrogram, &mut buf).map_err(io(&p))?;
        fs::write(&p, buf).map_err(io(&p))?;
        written.push(p);

        let p = dir.join("jammer_log.jsonl");
        fs::write(&p, to_json_lines(&self.jammer_log)).map_err(io(&p))?;
        written.push(p);

        let p = dir.join("commands.jsonl");
        fs::write(&p, to_json_lines(&self.commands)).map_err(io(&p))?;
        written.push(p);
        Ok(written)
    }
}

pub(crate) fn metrics_row(series: &LinkSeries, s: &LinkSample) -> LinkMetrics {
    LinkMetrics {
        time_s: s.time_s,
        node_id: series.node_id.clone(),
        link_id: series.link_id.clone(),
        sinr_db: s.sinr_db,
        sinr_pct: s.sinr_pct,
        throughput_bps: s.throughput_bps,
        throughput_pct: s.throughput_pct,
        link_status: s.link_status,
    }
}

fn to_json_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializes"));
        out.push('\n');
    }
    out
}

pub const METRICS_COLUMNS: [&str; 8] =
    ["time_s", "node_id", "link_id", "sinr_db", "sinr_pct", "throughput_bps", "throughput_pct", "link_status"];

pub fn write_metrics_csv<W: Write>(rows: impl Iterator<Item = LinkMetrics>, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.time_s.to_string(),
            r.node_id,
            r.link_id,
            r.sinr_db.to_string(),
            r.sinr_pct.to_string(),
            r.throughput_bps.to_string(),
            r.throughput_pct.to_string(),
            if r.link_status { "1".into() } else { "0".into() },
        ])?;
    }
    w.flush()
}

const SPECTROGRAM_MAGIC: &[u8; 4] = b"JSPG";
const SPECTROGRAM_VERSION: u32 = 1;

/// Binary spectrogram: magic `JSPG`, `u32` version, then per frame
/// `u64 tick, f64 time_s, f64 freq_start_hz, f64 freq_step_hz, u32 n_bins`
/// followed by `n_bins` `f32` dB values. All little-endian.
pub fn write_spectrogram<W: Write>(frames: &[SpectrogramFrame], out: &mut W) -> io::Result<()> {
    out.write_all(SPECTROGRAM_MAGIC)?;
    out.write_all(&SPECTROGRAM_VERSION.to_le_bytes())?;
    for f in frames {
        out.write_all(&f.tick.to_le_bytes())?;
        out.write_all(&f.frame.timestamp_s.to_le_bytes())?;
        out.write_all(&f.frame.freq_start_hz.to_le_bytes())?;
        out.write_all(&f.frame.freq_step_hz.to_le_bytes())?;
        out.write_all(&(f.frame.power_db.len() as u32).to_le_bytes())?;
        for p in &f.frame.power_db {
            out.write_all(&(*p as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_spectrogram<R: Read>(input: &mut R) -> io::Result<Vec<SpectrogramFrame>> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != SPECTROGRAM_MAGIC {
        return Err(bad("missing spectrogram header"));
    }
    let mut pos = 8usize;
    let mut take = |n: usize| -> io::Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated frame"))?;
        pos += n;
        Ok(s)
    };
    let mut frames = Vec::new();
    loop {
        let Ok(head) = take(8) else { break };
        let tick = u64::from_le_bytes(head.try_into().unwrap());
        let mut f64s = [0.0f64; 3];
        for v in &mut f64s {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let raw = take(4 * n)?;
        let power_db = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
        frames.push(SpectrogramFrame {
            tick,
            frame: PsdFrame { freq_start_hz: f64s[1], freq_step_hz: f64s[2], power_db, timestamp_s: f64s[0] },
        });
    }
    Ok(frames)
}

/// What one tick produced, for streaming consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub time_s: f64,
    pub metrics: Vec<LinkMetrics>,
    pub spectrogram: Option<PsdFrame>,
    pub jammer: Option<JammerLogEntry>,
}

struct LinkCtx {
    tx_idx: usize,
    signal_dbm: f64,
    jam_loss_db: f64,
    jam_label: String,
}

struct JammerCtx {
    node_idx: usize,
    base_power_dbm: f64,
    /// Path loss from every node to the jammer's antenna.
    loss_to_jammer_db: Vec<f64>,
    self_loss_db: f64,
    custom: Option<IqBuffer>,
}

/// A live run: the world state advanced one tick at a time.
pub struct Simulation {
    config: RunConfig,
    links: Vec<crate::network::Link>,
    ctx: Vec<LinkCtx>,
    tx_nodes: Vec<usize>,
    jammer: Option<JammerState>,
    jctx: Option<JammerCtx>,
    status: Vec<LinkStatusState>,
    baselines: Vec<Baseline>,
    traffic_on: bool,
    tick: u64,
    n_ticks: u64,
    timeline_pos: usize,
    queued: VecDeque<EventKind>,
    record: RunRecord,
    template_cache: HashMap<(u64, u64), Vec<(usize, f64)>>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let sc = &config.scenario;
        let index: HashMap<&str, usize> = sc.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let links = sc.links();
        let jammer_idx = sc.jammer_node().map(|j| index[j.id.as_str()]);

        let ctx = links
            .iter()
            .map(|l| {
                let tx_idx = index[l.tx_node.as_str()];
                let rx_idx = index[l.rx_node.as_str()];
                let signal_dbm = match sc.fir_taps(&l.tx_node, &l.rx_node) {
                    Some(taps) => l.tx_power_dbm + taps.power_gain_db(),
                    None => l.tx_power_dbm - path_loss_db(pos(sc, tx_idx), pos(sc, rx_idx), &sc.path_loss),
                };
                let jam_loss_db = jammer_idx.map_or(f64::INFINITY, |j| link_loss(sc, j, rx_idx));
                let jam_label = jammer_idx.map_or_else(String::new, |j| format!("{}->{}", sc.nodes[j].id, l.rx_node));
                LinkCtx { tx_idx, signal_dbm, jam_loss_db, jam_label }
            })
            .collect::<Vec<_>>();

        let mut tx_nodes: Vec<usize> = ctx.iter().map(|c| c.tx_idx).collect();
        tx_nodes.sort_unstable();
        tx_nodes.dedup();

        let jctx = match jammer_idx {
            Some(j) => {
                let jam = sc.jammer.as_ref().expect("validated");
                let custom = match (&jam.waveform.kind, &jam.waveform.custom_path) {
                    (WaveformKind::CustomFile, Some(p)) => Some(waveforms::read_iq_file(p)?),
                    _ => None,
                };
                Some(JammerCtx {
                    node_idx: j,
                    base_power_dbm: sc.nodes[j].tx_power_dbm,
                    loss_to_jammer_db: (0..sc.nodes.len()).map(|i| link_loss(sc, i, j)).collect(),
                    self_loss_db: sc.path_loss.ref_loss_db
                        + 10.0 * sc.path_loss.exponent * (sc.path_loss.min_dist_m / sc.path_loss.ref_dist_m).log10(),
                    custom,
                })
            }
            None => None,
        };

        let n_ticks = config.n_ticks();
        let status = vec![sc.link_status.initial_state(); links.len()];
        let record = RunRecord {
            config_hash: config.hash(),
            config: config.clone(),
            n_ticks: 0,
            links: links
                .iter()
                .map(|l| LinkSeries {
                    link_id: l.id.clone(),
                    node_id: node_of_link(l),
                    samples: Vec::with_capacity(n_ticks as usize),
                })
                .collect(),
            baselines: Vec::new(),
            spectrogram: Vec::new(),
            jammer_log: Vec::new(),
            commands: Vec::new(),
        };
        let mut sim = Self {
            jammer: sc.jammer.clone(),
            config,
            links,
            ctx,
            tx_nodes,
            jctx,
            status,
            baselines: Vec::new(),
            traffic_on: true,
            tick: 0,
            n_ticks,
            timeline_pos: 0,
            queued: VecDeque::new(),
            record,
            template_cache: HashMap::new(),
        };
        sim.baselines = sim.compute_baselines();
        sim.record.baselines = sim.baselines.clone();
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Index of the next tick to execute.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn n_ticks(&self) -> u64 {
        self.n_ticks
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.n_ticks
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.config.tick_s
    }

    pub fn baselines(&self) -> &[Baseline] {
        &self.baselines
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    /// Queue a control command for the next tick boundary. Returns the tick
    /// index at which it takes effect.
    pub fn apply_command(&mut self, kind: EventKind) -> Result<u64, EngineError> {
        if self.is_finished() {
            return Err(EngineError::NotLive);
        }
        validate_command(&self.config.scenario, &kind).map_err(EngineError::BadCommand)?;
        if self.jammer.is_none() && !matches!(kind, EventKind::StartTraffic | EventKind::StopTraffic) {
            return Err(EngineError::BadCommand("scenario has no jammer".into()));
        }
        self.queued.push_back(kind);
        Ok(self.tick)
    }

    /// Mean jammer-free throughput and SINR of every link over the baseline window.
    fn compute_baselines(&mut self) -> Vec<Baseline> {
        let window_ticks = ((self.config.baseline_window_s / self.config.tick_s - TIME_EPS).ceil() as u64)
            .clamp(1, self.n_ticks);
        let mut acc = vec![(0.0, 0.0); self.links.len()];
        for k in 0..window_ticks {
            let t = self.time_of(k);
            for (i, a) in acc.iter_mut().enumerate() {
                let (report, band) = self.link_sinr(i, k, t, None);
                let tput = network::throughput_bps(
                    &report.per_subband_db,
                    &band,
                    self.links[i].n_subbands,
                    self.config.scenario.cap_bps_per_hz,
                );
                a.0 += tput;
                a.1 += report.effective_db;
            }
        }
        acc.into_iter()
            .map(|(t, s)| Baseline { throughput_bps: t / window_ticks as f64, sinr_db: s / window_ticks as f64 })
            .collect()
    }

    fn link_sinr(&self, i: usize, tick: u64, t: f64, jam: Option<(Band, f64)>) -> (network::SinrReport, Band) {
        let sc = &self.config.scenario;
        let link = &self.links[i];
        let c = &self.ctx[i];
        let band = sc.nodes[c.tx_idx].band_at(t);
        let signal = c.signal_dbm + rng::fading_db(self.config.seed, &link.id, tick, sc.fading_sigma_db);
        let interferers: Vec<Interferer> = match jam {
            Some((jam_band, gain_db)) if gain_db > f64::NEG_INFINITY => {
                let jc = self.jctx.as_ref().expect("jammer context");
                let fade = rng::fading_db(self.config.seed, &c.jam_label, tick, sc.fading_sigma_db);
                vec![Interferer { rx_power_dbm: jc.base_power_dbm + gain_db - c.jam_loss_db + fade, band: jam_band }]
            }
            _ => Vec::new(),
        };
        (network::sinr_db(&band, link.n_subbands, signal, &interferers, sc.noise_floor_dbm_per_hz), band)
    }

    fn apply_event(&mut self, kind: EventKind, t: f64) {
        match kind {
            EventKind::StartTraffic => self.traffic_on = true,
            EventKind::StopTraffic => self.traffic_on = false,
            _ => {
                let Some(j) = self.jammer.as_mut() else { return };
                match kind {
                    EventKind::JammerOn => j.transmitting = true,
                    EventKind::JammerOff => j.transmitting = false,
                    EventKind::SetGain { gain_db } => j.gain_schedule.override_from(t, gain_db),
                    EventKind::SetCenter { center_hz } => j.set_center(center_hz),
                    EventKind::SetMode { mode } => j.mode = mode,
                    EventKind::StartTraffic | EventKind::StopTraffic => unreachable!(),
                }
            }
        }
    }

    /// Execute one tick.
    pub fn step(&mut self) -> Result<TickOutput, EngineError> {
        if self.is_finished() {
            return Err(EngineError::NotLive);
        }
        let k = self.tick;
        let t = self.time_of(k);

        // (1) timeline events and live commands due at this boundary
        while let Some(e) = self.config.timeline.get(self.timeline_pos).copied() {
            if e.time_s > t + TIME_EPS {
                break;
            }
            self.timeline_pos += 1;
            self.apply_event(e.kind, t);
        }
        while let Some(cmd) = self.queued.pop_front() {
            self.apply_event(cmd, t);
            self.record.commands.push(AppliedCommand { tick: k, kind: cmd });
        }

        // (2)-(3) sensing and jammer decision
        let mut jam_tx: Option<(Band, f64)> = None;
        let mut jammer_entry = None;
        if let Some(state) = self.jammer.take() {
            let frame = self.sensing_frame(&state, t);
            let detection = sense(&frame, &state.sensing).unwrap_or(Detection::NONE);
            let (next, decision) = jammer_step(&state, &detection, t);
            let gain_db = next.gain_schedule.gain_at(t);
            if let TxDecision::On { band, gain_db } = decision {
                jam_tx = Some((band, gain_db));
            }
            jammer_entry = Some(JammerLogEntry {
                tick: k,
                time_s: t,
                mode: next.mode,
                armed: next.transmitting,
                on: decision.is_on(),
                center_hz: next.tuned_band.center_hz,
                width_hz: next.tuned_band.width_hz,
                gain_db,
                detected: detection.present,
                peak_freq_hz: detection.peak_freq_hz,
            });
            self.jammer = Some(next);
        }

        // (4)-(5) links
        let cap = self.config.scenario.cap_bps_per_hz;
        let mut metrics = Vec::with_capacity(self.links.len());
        for i in 0..self.links.len() {
            let (report, band) = self.link_sinr(i, k, t, jam_tx);
            self.status[i] = network::update_link_status(&self.status[i], report.best_subband_db(), t);
            let attached = self.status[i].attached;
            let tput = if attached && self.traffic_on {
                network::throughput_bps(&report.per_subband_db, &band, self.links[i].n_subbands, cap)
            } else {
                0.0
            };
            let b = self.baselines[i];
            let sample = LinkSample {
                tick: k,
                time_s: t,
                sinr_db: report.effective_db,
                sinr_pct: network::sinr_pct(report.effective_db, b.sinr_db),
                throughput_bps: tput,
                throughput_pct: network::throughput_pct(tput, b.throughput_bps),
                link_status: attached,
            };
            let series = &mut self.record.links[i];
            metrics.push(metrics_row(series, &sample));
            series.samples.push(sample);
        }

        // (6) spectrogram and logs
        let spectrogram = match (&self.jammer, k % self.config.spectrogram_every_ticks == 0) {
            (Some(state), true) => {
                let frame = self.spectrogram_frame(state, k, t, jam_tx)?;
                self.record.spectrogram.push(SpectrogramFrame { tick: k, frame: frame.clone() });
                Some(frame)
            }
            _ => None,
        };
        if let Some(e) = jammer_entry {
            self.record.jammer_log.push(e);
        }
        self.tick += 1;
        self.record.n_ticks = self.tick;
        Ok(TickOutput { tick: k, time_s: t, metrics, spectrogram, jammer: jammer_entry })
    }

    /// Transmissions visible at the jammer: `(node index, band, received dBm)`.
    fn visible_transmissions(&self, t: f64) -> Vec<(usize, Band, f64)> {
        let (Some(jc), true) = (&self.jctx, self.traffic_on) else { return Vec::new() };
        let sc = &self.config.scenario;
        self.tx_nodes
            .iter()
            .map(|&i| (i, sc.nodes[i].band_at(t), sc.nodes[i].tx_power_dbm - jc.loss_to_jammer_db[i]))
            .collect()
    }

    /// Analytic PSD of the monitor band as seen by the jammer's receiver. Each
    /// legitimate emission is spread over its band with a raised-cosine shape;
    /// the jammer's own emission is excluded.
    fn sensing_frame(&mut self, state: &JammerState, t: f64) -> PsdFrame {
        let cfg = state.sensing;
        let n = cfg.fft_size;
        let step = cfg.bin_hz();
        let start = cfg.monitor_band.center_hz - step * (n / 2) as f64;
        let noise = waveforms::db_to_power(self.config.scenario.noise_floor_dbm_per_hz) * step;
        let mut bins = vec![noise; n];
        for (_, band, rx_dbm) in self.visible_transmissions(t) {
            let p = waveforms::db_to_power(rx_dbm);
            let key = (band.center_hz.to_bits(), band.width_hz.to_bits());
            let template = self
                .template_cache
                .entry(key)
                .or_insert_with(|| raised_cosine_template(&band, start, step, n));
            for &(k, frac) in template.iter() {
                bins[k] += p * frac;
            }
        }
        PsdFrame {
            freq_start_hz: start,
            freq_step_hz: step,
            power_db: bins.iter().map(|p| 10.0 * p.max(1e-20).log10()).collect(),
            timestamp_s: t,
        }
    }

    /// IQ-level spectrogram row of the monitor band at the jammer's position,
    /// including the jammer's own emission.
    fn spectrogram_frame(
        &self,
        state: &JammerState,
        tick: u64,
        t: f64,
        jam_tx: Option<(Band, f64)>,
    ) -> Result<PsdFrame, EngineError> {
        let sc = &self.config.scenario;
        let jc = self.jctx.as_ref().expect("jammer context");
        let cfg = state.sensing;
        let fs = cfg.sample_rate_hz;
        let center = cfg.monitor_band.center_hz;
        let n = cfg.fft_size * SPECTROGRAM_BLOCKS;
        let duration = n as f64 / fs;
        let seed = self.config.seed;
        let mut mix = IqBuffer::zeros(n, fs, center);

        let thermal = WaveformSpec::new(WaveformKind::Awgn, fs, fs, duration)
            .with_gain_db(sc.noise_floor_dbm_per_hz + 10.0 * fs.log10());
        mix.add_assign(&waveforms::gen_waveform(&thermal, rng::derive_seed(seed, "thermal", tick))?);

        let span = Band::new(center, fs);
        for (i, band, rx_dbm) in self.visible_transmissions(t) {
            let width = band.overlap_width_hz(&span).min(fs);
            if width <= 0.0 {
                continue;
            }
            let spec = WaveformSpec::new(WaveformKind::BandNoise, band.width_hz.min(fs), fs, duration).with_gain_db(rx_dbm);
            let sig = waveforms::gen_waveform(&spec, rng::derive_seed(seed, &sc.nodes[i].id, tick))?;
            mix.add_assign(&frequency_shift(&sig, band.center_hz - center));
        }

        if let Some((band, gain_db)) = jam_tx {
            let mut spec = state.waveform.clone();
            spec.sample_rate_hz = fs;
            spec.duration_s = duration;
            spec.gain_db = 0.0;
            spec.bandwidth_hz = spec.bandwidth_hz.min(fs);
            let unit = waveforms::synthesize(&spec, rng::derive_seed(seed, &sc.nodes[jc.node_idx].id, tick), jc.custom.as_ref())?;
            let rx = apply_gain(&unit, jc.base_power_dbm + gain_db - jc.self_loss_db);
            mix.add_assign(&frequency_shift(&rx, band.center_hz - center));
        }

        let mut frame = psd(&mix, cfg.fft_size, Window::Hann)?;
        frame.timestamp_s = t;
        Ok(frame)
    }

    /// Consume the simulation, returning its record. Unexecuted ticks are dropped.
    pub fn finish(self) -> RunRecord {
        self.record
    }
}

fn pos(sc: &Scenario, i: usize) -> Position {
    sc.nodes[i].position_m
}

fn link_loss(sc: &Scenario, tx: usize, rx: usize) -> f64 {
    match sc.fir_taps(&sc.nodes[tx].id, &sc.nodes[rx].id) {
        Some(taps) => -taps.power_gain_db(),
        None => path_loss_db(pos(sc, tx), pos(sc, rx), &sc.path_loss),
    }
}

fn node_of_link(l: &crate::network::Link) -> String {
    l.id.split_once(':').map_or_else(|| l.rx_node.clone(), |(_, user)| user.to_string())
}

/// Fraction of a raised-cosine PSD over `band` falling in each frequency bin.
fn raised_cosine_template(band: &Band, start: f64, step: f64, n: usize) -> Vec<(usize, f64)> {
    let w = band.width_hz;
    let cdf = |f: f64| {
        let x = (f - band.center_hz).clamp(-w / 2.0, w / 2.0);
        (x + w / 2.0) / w + (std::f64::consts::TAU * x / w).sin() / std::f64::consts::TAU
    };
    (0..n)
        .filter_map(|k| {
            let c = start + k as f64 * step;
            let frac = cdf(c + step / 2.0) - cdf(c - step / 2.0);
            (frac > 0.0).then_some((k, frac))
        })
        .collect()
}

/// Run a config to completion.
pub fn run(config: RunConfig) -> Result<RunRecord, EngineError> {
    let mut sim = Simulation::new(config)?;
    while !sim.is_finished() {
        sim.step()?;
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raised_cosine_template_integrates_to_one() {
        let band = Band::new(1e6, 2e6);
        let t = raised_cosine_template(&band, -5e6, 10e3, 1024);
        let total: f64 = t.iter().map(|(_, f)| f).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let peak = t.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((-5e6 + peak.0 as f64 * 10e3 - 1e6).abs() <= 10e3);
    }

    #[test]
    fn spectrogram_binary_round_trip() {
        let frames = vec![
            SpectrogramFrame {
                tick: 3,
                frame: PsdFrame { freq_start_hz: -1.0, freq_step_hz: 0.5, power_db: vec![-200.0, -3.5, 0.25], timestamp_s: 0.03 },
            },
            SpectrogramFrame {
                tick: 4,
                frame: PsdFrame { freq_start_hz: -1.0, freq_step_hz: 0.5, power_db: vec![], timestamp_s: 0.04 },
            },
        ];
        let mut buf = Vec::new();
        write_spectrogram(&frames, &mut buf).unwrap();
        assert_eq!(read_spectrogram(&mut buf.as_slice()).unwrap(), frames);
        assert!(read_spectrogram(&mut &buf[..buf.len() - 2]).is_err());
        assert!(read_spectrogram(&mut &b"nope"[..]).is_err());
    }

    #[test]
    fn tick_count_rounds_up() {
        let mut c = RunConfig::new(crate::scenario::Scenario::empty(), 0.025);
        c.tick_s = 0.01;
        assert_eq!(c.n_ticks(), 3);
        c.duration_s = 0.03;
        assert_eq!(c.n_ticks(), 3);
        c.duration_s = 0.01;
        assert_eq!(c.n_ticks(), 1);
    }
}
