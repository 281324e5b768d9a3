//! World construction: node rosters, clustered layouts, jammer placement and
//! the scenario config file.
//!
//! The config file is a single JSON document. See `docs/scenario-schema.md` in
//! the repository root
//! for the field reference; everything except `nodes` has a default.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Band, FirTaps, PathLossParams, Position};
use crate::jammer::JammerState;
use crate::network::{self, Link, LinkStatusState};
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;
pub const UPLINK_CENTER_HZ: f64 = 980e6;
pub const DOWNLINK_CENTER_HZ: f64 = 1020e6;
pub const CHANNEL_WIDTH_HZ: f64 = 10e6;
/// Thermal noise (-174 dBm/Hz) plus a 7 dB receiver noise figure.
pub const DEFAULT_NOISE_DBM_PER_HZ: f64 = -167.0;
pub const DEFAULT_BS_POWER_DBM: f64 = 20.0;
pub const DEFAULT_UE_POWER_DBM: f64 = 23.0;
pub const DEFAULT_INTER_BS_SPACING_M: f64 = 500.0;
pub const DEFAULT_CLUSTER_RADIUS_M: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("attachment {user} -> {base_station} references a missing or mistyped node")]
    DanglingAttachment { user: String, base_station: String },
    #[error("zero-width or non-finite band: {0}")]
    DegenerateBand(String),
    #[error("user `{user}` references cluster {cluster} with no base station")]
    UnknownCluster { user: String, cluster: u32 },
    #[error("more than one jammer node")]
    MultipleJammers,
    #[error("jammer node and jammer configuration must appear together")]
    JammerConfigMismatch,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is a base station and cannot be replaced by a jammer")]
    ReplacesBaseStation(String),
    #[error("node `{0}` is not a user")]
    NotAUser(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    BaseStation,
    User,
    Jammer,
}

/// Periodic carrier hopping: the node's band center cycles through `centers_hz`,
/// spending `dwell_s` on each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopPattern {
    pub centers_hz: Vec<f64>,
    pub dwell_s: f64,
}

impl HopPattern {
    pub fn center_at(&self, time_s: f64) -> f64 {
        let slot = ((time_s + 1e-9) / self.dwell_s).floor().max(0.0) as usize;
        self.centers_hz[slot % self.centers_hz.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub role: Role,
    pub position_m: Position,
    pub cluster: u32,
    pub tx_power_dbm: f64,
    pub band: Band,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop: Option<HopPattern>,
}

impl Node {
    pub fn band_at(&self, time_s: f64) -> Band {
        match &self.hop {
            Some(h) => self.band.recentered(h.center_at(time_s)),
            None => self.band,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkDirections {
    Uplink,
    Downlink,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirProfile {
    pub tx: String,
    pub rx: String,
    pub taps: FirTaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkStatusConfig {
    pub detach_thresh_db: f64,
    pub attach_thresh_db: f64,
    pub dwell_s: f64,
}

impl Default for LinkStatusConfig {
    fn default() -> Self {
        Self {
            detach_thresh_db: network::DEFAULT_DETACH_DB,
            attach_thresh_db: network::DEFAULT_ATTACH_DB,
            dwell_s: network::DEFAULT_DWELL_S,
        }
    }
}

impl LinkStatusConfig {
    pub fn initial_state(&self) -> LinkStatusState {
        LinkStatusState::new(self.detach_thresh_db, self.attach_thresh_db, self.dwell_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub path_loss: PathLossParams,
    #[serde(default = "default_noise")]
    pub noise_floor_dbm_per_hz: f64,
    #[serde(default = "default_uplink")]
    pub uplink_band: Band,
    #[serde(default = "default_downlink")]
    pub downlink_band: Band,
    /// user id -> base-station id
    #[serde(default)]
    pub attachments: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fir_profiles: Vec<FirProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jammer: Option<JammerState>,
    #[serde(default = "default_subbands")]
    pub n_subbands: usize,
    #[serde(default = "default_cap")]
    pub cap_bps_per_hz: f64,
    #[serde(default)]
    pub link_status: LinkStatusConfig,
    /// Per-tick log-normal fading on every link, in dB. Zero disables it.
    #[serde(default)]
    pub fading_sigma_db: f64,
    #[serde(default)]
    pub link_directions: LinkDirections,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_DBM_PER_HZ
}
fn default_uplink() -> Band {
    Band::new(UPLINK_CENTER_HZ, CHANNEL_WIDTH_HZ)
}
fn default_downlink() -> Band {
    Band::new(DOWNLINK_CENTER_HZ, CHANNEL_WIDTH_HZ)
}
fn default_subbands() -> usize {
    network::DEFAULT_SUBBANDS
}
fn default_cap() -> f64 {
    network::DEFAULT_CAP_BPS_PER_HZ
}

impl Scenario {
    /// Empty world with every optional field at its default.
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            nodes: Vec::new(),
            path_loss: PathLossParams::default(),
            noise_floor_dbm_per_hz: DEFAULT_NOISE_DBM_PER_HZ,
            uplink_band: default_uplink(),
            downlink_band: default_downlink(),
            attachments: BTreeMap::new(),
            fir_profiles: Vec::new(),
            jammer: None,
            n_subbands: network::DEFAULT_SUBBANDS,
            cap_bps_per_hz: network::DEFAULT_CAP_BPS_PER_HZ,
            link_status: LinkStatusConfig::default(),
            fading_sigma_db: 0.0,
            link_directions: LinkDirections::Both,
        }
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn jammer_node(&self) -> Option<&Node> {
        self.nodes.iter().find(|n| n.role == Role::Jammer)
    }

    pub fn count(&self, role: Role) -> usize {
        self.nodes.iter().filter(|n| n.role == role).count()
    }

    pub fn legitimate_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.role != Role::Jammer).count()
    }

    pub fn users_in_cluster(&self, cluster: u32) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == Role::User && n.cluster == cluster)
    }

    pub fn set_tx_power(&mut self, id: &str, dbm: f64) -> Result<(), ScenarioError> {
        self.node_mut(id).ok_or_else(|| ScenarioError::UnknownNode(id.into()))?.tx_power_dbm = dbm;
        Ok(())
    }

    pub fn fir_taps(&self, tx: &str, rx: &str) -> Option<&FirTaps> {
        self.fir_profiles.iter().find(|p| p.tx == tx && p.rx == rx).map(|p| &p.taps)
    }

    /// Links implied by the attachments, in attachment (user id) order.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for (user, bs) in &self.attachments {
            let (Some(u), Some(b)) = (self.node(user), self.node(bs)) else { continue };
            if matches!(self.link_directions, LinkDirections::Downlink | LinkDirections::Both) {
                out.push(Link {
                    id: format!("dl:{user}"),
                    tx_node: bs.clone(),
                    rx_node: user.clone(),
                    band: b.band,
                    n_subbands: self.n_subbands,
                    tx_power_dbm: b.tx_power_dbm,
                });
            }
            if matches!(self.link_directions, LinkDirections::Uplink | LinkDirections::Both) {
                out.push(Link {
                    id: format!("ul:{user}"),
                    tx_node: user.clone(),
                    rx_node: bs.clone(),
                    band: u.band,
                    n_subbands: self.n_subbands,
                    tx_power_dbm: u.tx_power_dbm,
                });
            }
        }
        out
    }

    /// Lowest and highest frequency any node or the jammer's monitor band uses.
    pub fn spectrum_span_hz(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut include = |b: Band| {
            lo = lo.min(b.low_hz());
            hi = hi.max(b.high_hz());
        };
        include(self.uplink_band);
        include(self.downlink_band);
        for n in &self.nodes {
            include(n.band);
            if let Some(h) = &n.hop {
                for c in &h.centers_hz {
                    include(n.band.recentered(*c));
                }
            }
        }
        if let Some(j) = &self.jammer {
            include(j.sensing.monitor_band);
            include(j.tuned_band);
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion(self.schema_version));
        }
        let invalid = |field: &str, reason: &str| ScenarioError::Invalid { field: field.into(), reason: reason.into() };
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(ScenarioError::DuplicateId(n.id.clone()));
            }
            if !(n.position_m[0].is_finite() && n.position_m[1].is_finite()) {
                return Err(invalid(&format!("nodes[{}].position_m", n.id), "must be finite"));
            }
            if !n.tx_power_dbm.is_finite() {
                return Err(invalid(&format!("nodes[{}].tx_power_dbm", n.id), "must be finite"));
            }
            check_band(&n.band, &format!("nodes[{}].band", n.id))?;
            if let Some(h) = &n.hop {
                if h.centers_hz.is_empty() || !(h.dwell_s > 0.0) {
                    return Err(invalid(&format!("nodes[{}].hop", n.id), "needs centers and a positive dwell"));
                }
            }
        }
        check_band(&self.uplink_band, "uplink_band")?;
        check_band(&self.downlink_band, "downlink_band")?;

        let clusters: BTreeSet<u32> =
            self.nodes.iter().filter(|n| n.role == Role::BaseStation).map(|n| n.cluster).collect();
        for n in self.nodes.iter().filter(|n| n.role == Role::User) {
            if !clusters.contains(&n.cluster) {
                return Err(ScenarioError::UnknownCluster { user: n.id.clone(), cluster: n.cluster });
            }
        }
        for (user, bs) in &self.attachments {
            let ok = self.node(user).is_some_and(|n| n.role == Role::User)
                && self.node(bs).is_some_and(|n| n.role == Role::BaseStation);
            if !ok {
                return Err(ScenarioError::DanglingAttachment { user: user.clone(), base_station: bs.clone() });
            }
        }
        if self.count(Role::Jammer) > 1 {
            return Err(ScenarioError::MultipleJammers);
        }
        if (self.count(Role::Jammer) == 1) != self.jammer.is_some() {
            return Err(ScenarioError::JammerConfigMismatch);
        }
        if let Some(j) = &self.jammer {
            check_band(&j.tuned_band, "jammer.tuned_band")?;
            check_band(&j.sensing.monitor_band, "jammer.sensing.monitor_band")?;
            if !j.sensing.fft_size.is_power_of_two() || j.sensing.fft_size < 8 {
                return Err(invalid("jammer.sensing.fft_size", "must be a power of two >= 8"));
            }
            if !(j.sensing.threshold_db_above_floor > 0.0) {
                return Err(invalid("jammer.sensing.threshold_db_above_floor", "must be positive"));
            }
            if j.sensing.sample_rate_hz < j.sensing.monitor_band.width_hz {
                return Err(invalid("jammer.sensing.sample_rate_hz", "must cover the monitor band"));
            }
            if !(j.retune_latency_s >= 0.0) || !(j.hold_s >= 0.0) {
                return Err(invalid("jammer.retune_latency_s", "latency and hold must be non-negative"));
            }
            j.waveform.validate().map_err(|e| invalid("jammer.waveform", &e.to_string()))?;
        }
        for p in &self.fir_profiles {
            for id in [&p.tx, &p.rx] {
                if self.node(id).is_none() {
                    return Err(ScenarioError::UnknownNode(id.clone()));
                }
            }
        }
        if self.n_subbands == 0 {
            return Err(invalid("n_subbands", "must be at least 1"));
        }
        if !(self.cap_bps_per_hz > 0.0) {
            return Err(invalid("cap_bps_per_hz", "must be positive"));
        }
        if !self.noise_floor_dbm_per_hz.is_finite() {
            return Err(invalid("noise_floor_dbm_per_hz", "must be finite"));
        }
        let ls = &self.link_status;
        if !(ls.attach_thresh_db > ls.detach_thresh_db) || !(ls.dwell_s > 0.0) {
            return Err(invalid("link_status", "attach threshold must exceed detach threshold and dwell be positive"));
        }
        if !(self.fading_sigma_db >= 0.0) {
            return Err(invalid("fading_sigma_db", "must be non-negative"));
        }
        if !(self.path_loss.ref_dist_m > 0.0 && self.path_loss.exponent > 0.0 && self.path_loss.min_dist_m > 0.0) {
            return Err(invalid("path_loss", "distances and exponent must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        fs::write(path, self.to_json()).map_err(|source| ScenarioError::Io { path: path.into(), source })
    }
}

fn check_band(b: &Band, what: &str) -> Result<(), ScenarioError> {
    if b.width_hz > 0.0 && b.width_hz.is_finite() && b.center_hz.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::DegenerateBand(what.into()))
    }
}

/// `n_bs` base stations on a jittered square grid, each surrounded by
/// `users_per_cluster` users placed uniformly in a disc of `cluster_radius_m`.
pub fn build_clustered_scenario(
    n_bs: usize,
    users_per_cluster: usize,
    cluster_radius_m: f64,
    inter_bs_spacing_m: f64,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    if n_bs == 0 {
        return Err(ScenarioError::Invalid { field: "n_bs".into(), reason: "must be at least 1".into() });
    }
    for (field, v) in [("cluster_radius_m", cluster_radius_m), ("inter_bs_spacing_m", inter_bs_spacing_m)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ScenarioError::Invalid { field: field.into(), reason: format!("must be positive, got {v}") });
        }
    }
    let mut scenario = Scenario::empty();
    let mut rng = rng::chacha(rng::derive_seed(seed, "layout", 0));
    let cols = (n_bs as f64).sqrt().ceil() as usize;
    let jitter = 0.1 * inter_bs_spacing_m;
    for c in 0..n_bs {
        let (row, col) = (c / cols, c % cols);
        let bs_pos = [
            col as f64 * inter_bs_spacing_m + jitter * (2.0 * rng.random::<f64>() - 1.0),
            row as f64 * inter_bs_spacing_m + jitter * (2.0 * rng.random::<f64>() - 1.0),
        ];
        let bs_id = format!("bs{c}");
        scenario.nodes.push(Node {
            id: bs_id.clone(),
            role: Role::BaseStation,
            position_m: bs_pos,
            cluster: c as u32,
            tx_power_dbm: DEFAULT_BS_POWER_DBM,
            band: scenario.downlink_band,
            hop: None,
        });
        for u in 0..users_per_cluster {
            let r = cluster_radius_m * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let id = format!("ue{c}-{u}");
            scenario.nodes.push(Node {
                id: id.clone(),
                role: Role::User,
                position_m: [bs_pos[0] + r * theta.cos(), bs_pos[1] + r * theta.sin()],
                cluster: c as u32,
                tx_power_dbm: DEFAULT_UE_POWER_DBM,
                band: scenario.uplink_band,
                hop: None,
            });
            scenario.attachments.insert(id, bs_id.clone());
        }
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Turn user `replaced_node_id` into the jammer. Position and cluster are kept;
/// its attachment is dropped.
pub fn place_jammer(scenario: &Scenario, replaced_node_id: &str, jammer: JammerState) -> Result<Scenario, ScenarioError> {
    let node = scenario.node(replaced_node_id).ok_or_else(|| ScenarioError::UnknownNode(replaced_node_id.into()))?;
    match node.role {
        Role::BaseStation => return Err(ScenarioError::ReplacesBaseStation(replaced_node_id.into())),
        Role::Jammer => return Err(ScenarioError::NotAUser(replaced_node_id.into())),
        Role::User => {}
    }
    if scenario.jammer_node().is_some() {
        return Err(ScenarioError::MultipleJammers);
    }
    let mut out = scenario.clone();
    let n = out.node_mut(replaced_node_id).expect("checked above");
    n.role = Role::Jammer;
    n.band = jammer.tuned_band;
    n.hop = None;
    out.attachments.remove(replaced_node_id);
    out.fir_profiles.retain(|p| p.tx != replaced_node_id && p.rx != replaced_node_id);
    out.jammer = Some(jammer);
    out.validate()?;
    Ok(out)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
    parse_scenario(&text).map_err(|e| match e {
        ScenarioError::Parse { message, .. } => ScenarioError::Parse { path: path.into(), message },
        other => other,
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text)
        .map_err(|e| ScenarioError::Parse { path: PathBuf::from("<inline>"), message: e.to_string() })?;
    scenario.validate()?;
    Ok(scenario)
}
