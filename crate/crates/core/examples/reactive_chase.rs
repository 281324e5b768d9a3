//! A reactive jammer follows a carrier hopping every 100 ms. Prints the
//! jammer log around the first few hops.
//!
//!     cargo run --release --example reactive_chase [-- <out_dir>]

use jamsim::experiments::{chase, Calibration, Verdict, DEFAULT_SEED};

fn main() {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let p = Calibration::committed().chase;
    let o = chase::run_with(&p, DEFAULT_SEED, out.as_deref()).expect("run");
    let bps = &o.record.series(chase::LINK_ID).unwrap().samples;
    let hits = chase::on_target(&o.record);
    for ((e, s), hit) in o.record.jammer_log.iter().zip(bps).zip(&hits).take(35) {
        println!(
            "{:4.2} s  jammer {:>3} at {:.4} GHz  {}  {:5.2} Mb/s",
            e.time_s,
            if e.on { "on" } else { "off" },
            e.center_hz / 1e9,
            if *hit { "HIT " } else { "miss" },
            s.throughput_bps / 1e6
        );
    }
    println!("{:#?}\npassed: {}", o.verdict, o.verdict.passed());
}
