//! Link abstraction: per-subband SINR, rate mapping and attach/detach
//! dynamics for base-station/user links.

use serde::{Deserialize, Serialize};

use crate::channel::{band_overlap, Band};
use crate::waveforms::db_to_power;

pub const DEFAULT_SUBBANDS: usize = 50;
pub const DEFAULT_CAP_BPS_PER_HZ: f64 = 6.0;
pub const DEFAULT_DETACH_DB: f64 = 5.0;
pub const DEFAULT_ATTACH_DB: f64 = 8.0;
pub const DEFAULT_DWELL_S: f64 = 1.0;

const TIME_EPS: f64 = 1e-9;

/// A directed transmitter-to-receiver link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub tx_node: String,
    pub rx_node: String,
    pub band: Band,
    pub n_subbands: usize,
    pub tx_power_dbm: f64,
}

/// Interfering emission as received at the victim.
///
/// `rx_power_dbm` is referenced to the victim's (sub)band: an interferer adds
/// `power × overlap(subband, band)` to every subband it touches, where the
/// overlap is the fraction of the subband it occupies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    pub rx_power_dbm: f64,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrReport {
    pub per_subband_db: Vec<f64>,
    pub effective_db: f64,
}

impl SinrReport {
    pub fn best_subband_db(&self) -> f64 {
        self.per_subband_db.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// SINR of a signal received at `signal_rx_dbm` over `band`, split evenly
/// across `n_subbands`. Powers are combined in milliwatts.
pub fn sinr_db(
    band: &Band,
    n_subbands: usize,
    signal_rx_dbm: f64,
    interferers: &[Interferer],
    noise_floor_dbm_per_hz: f64,
) -> SinrReport {
    let n = n_subbands.max(1);
    let subbands = band.subbands(n);
    let s_sub = db_to_power(signal_rx_dbm) / n as f64;
    let noise_psd = db_to_power(noise_floor_dbm_per_hz);
    let mut signal_total = 0.0;
    let mut denom_total = 0.0;
    let per_subband_db = subbands
        .iter()
        .map(|sb| {
            let noise = noise_psd * sb.width_hz;
            let interference: f64 = interferers
                .iter()
                .map(|i| db_to_power(i.rx_power_dbm) * band_overlap(sb, &i.band))
                .sum();
            signal_total += s_sub;
            denom_total += noise + interference;
            10.0 * (s_sub / (noise + interference)).log10()
        })
        .collect();
    SinrReport { per_subband_db, effective_db: 10.0 * (signal_total / denom_total).log10() }
}

/// Shannon rate per subband, capped at `cap_bps_per_hz`, summed over the band.
pub fn throughput_bps(per_subband_sinr_db: &[f64], band: &Band, n_subbands: usize, cap_bps_per_hz: f64) -> f64 {
    let w = band.width_hz / n_subbands.max(1) as f64;
    per_subband_sinr_db
        .iter()
        .map(|db| {
            let se = (1.0 + db_to_power(*db)).log2();
            w * se.min(cap_bps_per_hz)
        })
        .sum()
}

/// `sinr_db` as a percentage of the jammer-free baseline, clamped to [0, 100].
pub fn sinr_pct(sinr_db: f64, baseline_db: f64) -> f64 {
    if baseline_db <= 0.0 {
        return if sinr_db >= baseline_db { 100.0 } else { 0.0 };
    }
    (100.0 * sinr_db / baseline_db).clamp(0.0, 100.0)
}

pub fn throughput_pct(bps: f64, baseline_bps: f64) -> f64 {
    if baseline_bps > 0.0 {
        100.0 * bps / baseline_bps
    } else {
        0.0
    }
}

/// Hysteresis automaton for link attachment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkStatusState {
    pub attached: bool,
    pub below_since_s: Option<f64>,
    pub above_since_s: Option<f64>,
    pub detach_thresh_db: f64,
    pub attach_thresh_db: f64,
    pub dwell_s: f64,
}

impl LinkStatusState {
    pub fn new(detach_thresh_db: f64, attach_thresh_db: f64, dwell_s: f64) -> Self {
        assert!(attach_thresh_db > detach_thresh_db, "attach threshold must exceed detach threshold");
        assert!(dwell_s > 0.0, "dwell must be positive");
        Self {
            attached: true,
            below_since_s: None,
            above_since_s: None,
            detach_thresh_db,
            attach_thresh_db,
            dwell_s,
        }
    }
}

impl Default for LinkStatusState {
    fn default() -> Self {
        Self::new(DEFAULT_DETACH_DB, DEFAULT_ATTACH_DB, DEFAULT_DWELL_S)
    }
}

pub fn update_link_status(state: &LinkStatusState, sinr_db: f64, time_s: f64) -> LinkStatusState {
    let mut next = *state;
    if state.attached {
        next.above_since_s = None;
        if sinr_db < state.detach_thresh_db {
            let since = *next.below_since_s.get_or_insert(time_s);
            if time_s - since + TIME_EPS >= state.dwell_s {
                next.attached = false;
                next.below_since_s = None;
            }
        } else {
            next.below_since_s = None;
        }
    } else {
        next.below_since_s = None;
        if sinr_db > state.attach_thresh_db {
            let since = *next.above_since_s.get_or_insert(time_s);
            if time_s - since + TIME_EPS >= state.dwell_s {
                next.attached = true;
                next.above_since_s = None;
            }
        } else {
            next.above_since_s = None;
        }
    }
    next
}

/// One link's metrics at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub tick: u64,
    pub time_s: f64,
    pub sinr_db: f64,
    pub sinr_pct: f64,
    pub throughput_bps: f64,
    pub throughput_pct: f64,
    pub link_status: bool,
}

/// Flattened metrics row, as written to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub time_s: f64,
    pub node_id: String,
    pub link_id: String,
    pub sinr_db: f64,
    pub sinr_pct: f64,
    pub throughput_bps: f64,
    pub throughput_pct: f64,
    pub link_status: bool,
}
