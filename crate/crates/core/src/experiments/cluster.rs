//! A jammer replaces one user of a cluster in the 10-cluster layout. One user
//! of the same cluster and one nearby user of another cluster are monitored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{finish, moving_average, sensing_for, subband_noise_dbm, ExperimentError, Outcome, Verdict};
use crate::channel::{distance_m, path_loss_db};
use crate::engine::{run, Event, EventKind, RunConfig, RunRecord};
use crate::jammer::{GainSchedule, JammerMode, JammerState};
use crate::scenario::{build_clustered_scenario, place_jammer, LinkDirections, Role, Scenario};
use crate::waveforms::{power_to_db, WaveformKind, WaveformSpec};

pub const DURATION_S: f64 = 900.0;
pub const TICK_S: f64 = 0.1;
pub const JAMMER_ON_S: f64 = 60.0;
/// Windows in which the jammer adds `burst_db` to its gain.
pub const BURSTS_S: [(f64, f64); 2] = [(420.0, 540.0), (840.0, 900.0)];
pub const N_BS: usize = 10;
pub const USERS_PER_CLUSTER: usize = 4;
pub const JAMMER_CLUSTER: u32 = 4;
pub const SAME_RANGE_PTS: (f64, f64) = (60.0, 80.0);
pub const OTHER_RANGE_PTS: (f64, f64) = (28.0, 48.0);
pub const SAME_TARGET_PTS: f64 = 70.0;
pub const OTHER_TARGET_PTS: f64 = 38.0;
/// Averaging window applied to sinr_pct before taking the worst degradation.
pub const SMOOTHING_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub layout_seed: u64,
    pub bs_power_dbm: f64,
    pub jammer_power_dbm: f64,
    pub burst_db: f64,
    pub fading_sigma_db: f64,
    pub replaced_user: String,
    pub same_cluster_user: String,
    pub other_cluster_user: String,
}

impl ClusterParams {
    pub fn same_link(&self) -> String {
        format!("dl:{}", self.same_cluster_user)
    }

    pub fn other_link(&self) -> String {
        format!("dl:{}", self.other_cluster_user)
    }
}

pub fn layout(layout_seed: u64, bs_power_dbm: f64) -> Result<Scenario, ExperimentError> {
    let mut sc = build_clustered_scenario(
        N_BS,
        USERS_PER_CLUSTER,
        crate::scenario::DEFAULT_CLUSTER_RADIUS_M,
        crate::scenario::DEFAULT_INTER_BS_SPACING_M,
        layout_seed,
    )?;
    sc.link_directions = LinkDirections::Downlink;
    for n in sc.nodes.iter_mut().filter(|n| n.role == Role::BaseStation) {
        n.tx_power_dbm = bs_power_dbm;
    }
    Ok(sc)
}

pub fn schedule(burst_db: f64) -> GainSchedule {
    let mut pairs = vec![(0.0, 0.0)];
    for (a, b) in BURSTS_S {
        pairs.push((a, burst_db));
        if b < DURATION_S {
            pairs.push((b, 0.0));
        }
    }
    GainSchedule::from_pairs(&pairs).expect("bursts are ordered")
}

pub fn scenario(p: &ClusterParams) -> Result<Scenario, ExperimentError> {
    let base = layout(p.layout_seed, p.bs_power_dbm)?;
    let band = base.downlink_band;
    let sensing = sensing_for(&base, band);
    let waveform = WaveformSpec::new(WaveformKind::BandNoise, band.width_hz, sensing.sample_rate_hz, 1e-3);
    let state = JammerState::new(JammerMode::Proactive, waveform, band, sensing)
        .with_schedule(schedule(p.burst_db))
        .armed(false);
    let mut sc = place_jammer(&base, &p.replaced_user, state)?;
    sc.set_tx_power(&p.replaced_user, p.jammer_power_dbm)?;
    sc.fading_sigma_db = p.fading_sigma_db;
    Ok(sc)
}

pub fn config(p: &ClusterParams, seed: u64) -> Result<RunConfig, ExperimentError> {
    let mut c = RunConfig::new(scenario(p)?, DURATION_S);
    c.tick_s = TICK_S;
    c.seed = seed;
    c.timeline = vec![Event::at(JAMMER_ON_S, EventKind::JammerOn)];
    c.baseline_window_s = 30.0;
    c.spectrogram_every_ticks = 100;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeImpact {
    pub link_id: String,
    pub degradation_pts: f64,
    pub min_sinr_db: f64,
    pub detach_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub same: NodeImpact,
    pub other: NodeImpact,
    pub same_ok: bool,
    pub other_ok: bool,
    pub same_detaches_ok: bool,
    pub other_never_detaches_ok: bool,
}

impl Verdict for ClusterVerdict {
    fn passed(&self) -> bool {
        self.same_ok && self.other_ok && self.same_detaches_ok && self.other_never_detaches_ok
    }
}

/// Worst smoothed sinr_pct degradation and detach count of one link.
pub fn impact(record: &RunRecord, link_id: &str) -> NodeImpact {
    let s = &record.series(link_id).unwrap_or_else(|| panic!("no link {link_id}")).samples;
    let window = (SMOOTHING_S / record.config.tick_s).round() as usize;
    let pct: Vec<f64> = s.iter().map(|x| x.sinr_pct).collect();
    let smooth = moving_average(&pct, window);
    let worst = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let min_sinr_db = s.iter().map(|x| x.sinr_db).fold(f64::INFINITY, f64::min);
    let detach_count = s.windows(2).filter(|w| w[0].link_status && !w[1].link_status).count()
        + usize::from(s.first().is_some_and(|x| !x.link_status));
    NodeImpact { link_id: link_id.into(), degradation_pts: 100.0 - worst, min_sinr_db, detach_count }
}

pub fn evaluate_links(record: &RunRecord, same_link: &str, other_link: &str) -> ClusterVerdict {
    let same = impact(record, same_link);
    let other = impact(record, other_link);
    ClusterVerdict {
        same_ok: (SAME_RANGE_PTS.0..=SAME_RANGE_PTS.1).contains(&same.degradation_pts),
        other_ok: (OTHER_RANGE_PTS.0..=OTHER_RANGE_PTS.1).contains(&other.degradation_pts),
        same_detaches_ok: same.detach_count >= 1,
        other_never_detaches_ok: other.detach_count == 0,
        same,
        other,
    }
}

pub fn evaluate(record: &RunRecord, p: &ClusterParams) -> ClusterVerdict {
    evaluate_links(record, &p.same_link(), &p.other_link())
}

pub fn run_with(p: &ClusterParams, seed: u64, out_dir: Option<&Path>) -> Result<Outcome<ClusterVerdict>, ExperimentError> {
    let record = run(config(p, seed)?)?;
    let verdict = evaluate(&record, p);
    finish(record, verdict, out_dir)
}

pub fn run_cluster_impact(out_dir: &Path) -> Result<Outcome<ClusterVerdict>, ExperimentError> {
    run_with(&super::Calibration::committed().cluster, super::DEFAULT_SEED, Some(out_dir))
}

/// Link-budget prediction for one monitored user: jammer-free SNR and the
/// SINR at peak jammer gain, in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub snr_db: f64,
    pub min_sinr_db: f64,
}

impl Budget {
    pub fn degradation_pts(&self) -> f64 {
        100.0 * (1.0 - self.min_sinr_db / self.snr_db)
    }
}

fn budget(sc: &Scenario, user: &str, jammer: &str, bs_power: f64, jam_power: f64) -> Budget {
    let u = sc.node(user).expect("user");
    let bs = sc.node(&sc.attachments[user]).expect("serving base station");
    let j = sc.node(jammer).expect("jammer");
    let noise_sub = subband_noise_dbm(sc, &sc.downlink_band);
    let s_sub = bs_power - path_loss_db(bs.position_m, u.position_m, &sc.path_loss) - power_to_db(sc.n_subbands as f64);
    let jnr = jam_power - path_loss_db(j.position_m, u.position_m, &sc.path_loss) - noise_sub;
    let snr_db = s_sub - noise_sub;
    Budget { snr_db, min_sinr_db: snr_db - power_to_db(1.0 + 10f64.powf(jnr / 10.0)) }
}

/// Constraints on a calibration candidate, in dB of SINR.
#[derive(Debug, Clone, Copy)]
pub struct SearchLimits {
    /// Same-cluster SINR at peak gain must be at least this far below the detach threshold.
    pub detach_margin_db: f64,
    /// Other-cluster SINR at peak gain must be at least this far above it.
    pub survive_margin_db: f64,
    pub max_snr_db: f64,
    /// Other-cluster candidates are the users of other clusters nearest the jammer.
    pub nearest_others: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self { detach_margin_db: 1.0, survive_margin_db: 1.5, max_snr_db: 40.0, nearest_others: 3 }
    }
}

/// Search layouts, the replaced user, the monitored pair and the base-station
/// power for the combination whose budget hits the target degradations. The
/// jammer power is solved by bisection so the same-cluster degradation is
/// exactly on target; candidates are ranked by the other-cluster error.
pub fn search(
    layout_seeds: std::ops::Range<u64>,
    burst_db: f64,
    fading_sigma_db: f64,
    limits: SearchLimits,
) -> Result<ClusterParams, ExperimentError> {
    let mut best: Option<(f64, ClusterParams)> = None;
    for seed in layout_seeds {
        let sc = layout(seed, 0.0)?;
        let detach = sc.link_status.detach_thresh_db;
        let cluster_users: Vec<String> = sc.users_in_cluster(JAMMER_CLUSTER).map(|n| n.id.clone()).collect();
        for replaced in &cluster_users {
            let jpos = sc.node(replaced).expect("user").position_m;
            let mut others: Vec<(f64, String)> = sc
                .nodes
                .iter()
                .filter(|n| n.role == Role::User && n.cluster != JAMMER_CLUSTER)
                .map(|n| (distance_m(n.position_m, jpos), n.id.clone()))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0));
            others.truncate(limits.nearest_others);
            for same in cluster_users.iter().filter(|u| *u != replaced) {
                for (_, other) in &others {
                    for step in 0..=100 {
                        let bs_power = -10.0 + 0.5 * step as f64;
                        let at = |jam: f64, user: &str| budget(&sc, user, replaced, bs_power, jam + burst_db);
                        let snr_s = at(-300.0, same).snr_db;
                        if snr_s <= 0.0 || snr_s > limits.max_snr_db {
                            continue;
                        }
                        // degradation grows with jammer power
                        let (mut lo, mut hi) = (-100.0, 100.0);
                        if at(hi, same).degradation_pts() < SAME_TARGET_PTS {
                            continue;
                        }
                        for _ in 0..80 {
                            let mid = 0.5 * (lo + hi);
                            if at(mid, same).degradation_pts() < SAME_TARGET_PTS {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        let jam = 0.5 * (lo + hi);
                        let s = at(jam, same);
                        let o = at(jam, other);
                        if s.min_sinr_db > detach - limits.detach_margin_db
                            || o.min_sinr_db < detach + limits.survive_margin_db
                            || o.snr_db > limits.max_snr_db
                        {
                            continue;
                        }
                        let err = (o.degradation_pts() - OTHER_TARGET_PTS).abs();
                        if best.as_ref().is_none_or(|(e, _)| err < *e) {
                            best = Some((
                                err,
                                ClusterParams {
                                    layout_seed: seed,
                                    bs_power_dbm: bs_power,
                                    jammer_power_dbm: jam,
                                    burst_db,
                                    fading_sigma_db,
                                    replaced_user: replaced.clone(),
                                    same_cluster_user: same.clone(),
                                    other_cluster_user: other.clone(),
                                },
                            ));
                        }
                    }
                }
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| ExperimentError::Calibration("no cluster layout satisfies the limits".into()))
}

/// Budget of both monitored users under `p`, at peak jammer gain.
pub fn predicted(p: &ClusterParams) -> Result<(Budget, Budget), ExperimentError> {
    let sc = layout(p.layout_seed, p.bs_power_dbm)?;
    let jam = p.jammer_power_dbm + p.burst_db;
    Ok((
        budget(&sc, &p.same_cluster_user, &p.replaced_user, p.bs_power_dbm, jam),
        budget(&sc, &p.other_cluster_user, &p.replaced_user, p.bs_power_dbm, jam),
    ))
}
