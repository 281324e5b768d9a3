//! Jammer gain stepped 0..32 dB and back over 15 minutes; prints the median
//! SINR percentage of each plateau and the link's attach state.
//!
//!     cargo run --release --example gain_staircase [-- <out_dir>]

use jamsim::experiments::{gain_sweep, Calibration, Verdict, DEFAULT_SEED};

fn main() {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let p = Calibration::committed().gain_sweep;
    let o = gain_sweep::run_with(&p, DEFAULT_SEED, out.as_deref()).expect("run");
    let series = o.record.series(gain_sweep::LINK_ID).unwrap();
    for ((t, g), med) in gain_sweep::staircase().iter().zip(&o.verdict.plateau_medians_pct) {
        let probe = series.samples.iter().find(|s| s.time_s >= t + 30.0).or(series.samples.last());
        let attached = probe.is_some_and(|s| s.link_status);
        println!("t {t:>5} s  gain {g:>4} dB  sinr {med:5.1}%  {}", if attached { "attached" } else { "DETACHED" });
    }
    for s in &o.verdict.steps {
        println!("{:>4} -> {:>4} dB: drop {:5.1} pts{}", s.from_gain_db, s.to_gain_db, s.drop_pts, if s.dominated { " (jammer-dominated)" } else { "" });
    }
    println!("spearman {:.3}, passed: {}", o.verdict.rank_correlation, o.verdict.passed());
}
