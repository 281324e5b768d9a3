//! Ten clusters of four users; one user is replaced by a jammer. Reports the
//! worst smoothed SINR degradation in the jammer's cluster and in another one.
//!
//!     cargo run --release --example cluster_impact [-- <out_dir>]

use jamsim::experiments::{cluster, Calibration, Verdict, DEFAULT_SEED};

fn main() {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let p = Calibration::committed().cluster;
    println!("layout seed {}, jammer replaces {}", p.layout_seed, p.replaced_user);
    let o = cluster::run_with(&p, DEFAULT_SEED, out.as_deref()).expect("run");
    for n in [&o.verdict.same, &o.verdict.other] {
        println!("{:<10} degradation {:5.1} pts, min sinr {:6.1} dB, detaches {}", n.link_id, n.degradation_pts, n.min_sinr_db, n.detach_count);
    }
    println!("passed: {}", o.verdict.passed());
}
