//! Throughput of a single downlink while a proactive jammer is switched on at
//! 3.5 s and off at 10 s, compared with the committed golden trace.
//!
//!     cargo run --release --example throughput_drop [-- <out_dir>]

use jamsim::experiments::{compare_traces, fig5, Calibration, Verdict, DEFAULT_SEED};

fn main() {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let p = Calibration::committed().fig5;
    let o = fig5::run_with(&p, DEFAULT_SEED, out.as_deref()).expect("run");
    let (t, pct) = fig5::trace(&o.record);
    for (t, v) in t.iter().zip(&pct).step_by(50) {
        println!("{t:5.1} s  {v:5.1}%  {}", "#".repeat((*v / 2.0) as usize));
    }
    let cmp = compare_traces(&pct, &fig5::golden_trace()).unwrap();
    println!("{:#?}", o.verdict);
    println!("vs golden trace: min {:.1}, mean {:.1}; passed: {}", cmp.min, cmp.mean, o.verdict.passed());
}
