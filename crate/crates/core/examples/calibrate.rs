//! Search experiment parameters that reproduce the reference shapes and write
//! `data/calibration.json` plus the golden throughput trace.
//!
//!     cargo run --release --example calibrate [-- <out_dir>]
//!
//! Each experiment is solved from its link budget first, then confirmed by
//! running the engine. Only the fig5 fading level needs a search over full
//! runs: it is chosen so that runs with other seeds stay within the accuracy
//! band of the golden trace without being identical to it.

use std::path::PathBuf;

use jamsim::experiments::{
    chase, cluster, compare_traces, fig5, gain_sweep, write_trace_csv, Calibration, ChaseParams, Fig5Params,
    GainSweepParams, Verdict,
};

fn calibrate_fig5() -> Fig5Params {
    let mut best: Option<(f64, Fig5Params)> = None;
    for step in 0..=16 {
        let sigma = 0.3 + 0.025 * step as f64;
        let p = Fig5Params::solve(150.0, 40.0, 14.0, -20.0, 30, sigma);
        let golden = fig5::run_with(&p, fig5::GOLDEN_SEED, None).expect("golden run");
        let (_, g) = fig5::trace(&golden.record);
        let mut margin = f64::INFINITY;
        for seed in 1..=4 {
            let out = fig5::run_with(&p, seed, None).expect("run");
            let (_, t) = fig5::trace(&out.record);
            let cmp = compare_traces(&t, &g).expect("non-empty");
            let m = (cmp.min - 75.0).min(98.0 - cmp.mean);
            margin = margin.min(if out.verdict.passed() { m } else { f64::NEG_INFINITY });
        }
        println!("fig5 sigma {sigma:.3} dB: worst margin {margin:.2}");
        if best.as_ref().is_none_or(|(b, _)| margin > *b) {
            best = Some((margin, p));
        }
    }
    let (margin, p) = best.expect("grid is non-empty");
    assert!(margin > 0.0, "no fading level keeps the perturbed traces in the accuracy band");
    p
}

fn calibrate_gain_sweep() -> GainSweepParams {
    let sigma = 0.3;
    let snr = 27.0;
    let mut best: Option<(f64, GainSweepParams)> = None;
    for step in 0..=40 {
        let jnr0 = -12.0 + 0.2 * step as f64;
        let p = GainSweepParams::solve(120.0, 30.0, snr, jnr0, sigma);
        let at = |g| gain_sweep::predicted_sinr_db(&p, g);
        // detach only at the top of the staircase, with 1 dB to spare each way
        if at(gain_sweep::MAX_GAIN_DB) > 4.0 || at(25.0) < 9.0 {
            continue;
        }
        let mut margin = f64::INFINITY;
        for w in gain_sweep::staircase().windows(2) {
            let (from, to) = (w[0].1, w[1].1);
            let jnr_from = jnr0 + from;
            if to - from != gain_sweep::STEP_DB || jnr_from < gain_sweep::DOMINATED_JNR_DB {
                continue;
            }
            let drop = 100.0 * (at(from) - at(to)) / snr;
            margin = margin.min((drop - 16.0).min(20.0 - drop));
        }
        if best.as_ref().is_none_or(|(b, _)| margin > *b) {
            best = Some((margin, p));
        }
    }
    let (margin, p) = best.expect("some jammer level detaches only at the top");
    println!("gain sweep: jammer {:.2} dBm, predicted step margin {margin:.2} pts", p.jammer_power_dbm);
    p
}

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"));
    std::fs::create_dir_all(&out_dir).expect("output directory");

    let f5 = calibrate_fig5();
    let gs = calibrate_gain_sweep();
    let cl = cluster::search(0..24, 6.0, 0.3, cluster::SearchLimits::default()).expect("cluster layout");
    let (same, other) = cluster::predicted(&cl).expect("layout");
    println!(
        "cluster: seed {} jammer {} same {} ({:.1} pts) other {} ({:.1} pts)",
        cl.layout_seed,
        cl.replaced_user,
        cl.same_cluster_user,
        same.degradation_pts(),
        cl.other_cluster_user,
        other.degradation_pts()
    );
    let ch = ChaseParams::solve(20.0, 10.0, 25.0, 3.0);

    let calib = Calibration { fig5: f5, gain_sweep: gs, cluster: cl, chase: ch };
    let seed = jamsim::experiments::DEFAULT_SEED;
    let checks = [
        ("fig5", fig5::run_with(&calib.fig5, seed, None).map(|o| o.verdict.passed())),
        ("gain sweep", gain_sweep::run_with(&calib.gain_sweep, seed, None).map(|o| o.verdict.passed())),
        ("cluster", cluster::run_with(&calib.cluster, seed, None).map(|o| o.verdict.passed())),
        ("chase", chase::run_with(&calib.chase, seed, None).map(|o| o.verdict.passed())),
    ];
    for (name, ok) in &checks {
        println!("{name}: {}", if matches!(ok, Ok(true)) { "pass" } else { "FAIL" });
    }

    let path = out_dir.join("calibration.json");
    std::fs::write(&path, serde_json::to_string_pretty(&calib).unwrap() + "\n").expect("write calibration");
    println!("wrote {}", path.display());

    let golden = fig5::run_with(&calib.fig5, fig5::GOLDEN_SEED, None).expect("golden run");
    let (t, pct) = fig5::trace(&golden.record);
    let path = out_dir.join("golden_fig5.csv");
    write_trace_csv(&path, &t, &pct, "throughput_pct").expect("write golden trace");
    println!("wrote {}", path.display());
}
