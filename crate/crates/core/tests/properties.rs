//! Invariants of the signal, channel, link and jammer models.

use jamsim::channel::{apply_fir, band_overlap, path_loss_db, Band, FirTaps, PathLossParams};
use jamsim::experiments::compare_traces;
use jamsim::jammer::{jammer_step, Detection, GainSchedule, JammerMode, JammerState, SensingConfig};
use jamsim::network::{sinr_db, throughput_bps, update_link_status, Interferer, LinkStatusState};
use jamsim::scenario::{build_clustered_scenario, place_jammer};
use jamsim::waveforms::{apply_gain, gen_waveform, psd, IqBuffer, PsdFrame, Window, WaveformKind, WaveformSpec};
use num_complex::Complex64;
use proptest::prelude::*;

fn complex_vec(len: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = Vec<Complex64>> {
    proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| Complex64::new(a, b)), len)
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    diff / scale
}

fn monitor() -> SensingConfig {
    SensingConfig::for_band(Band::new(2.38e9, 10e6), 1024, 10.0, -174.0)
}

fn jammer(mode: JammerMode, latency_s: f64) -> JammerState {
    let wf = WaveformSpec::new(WaveformKind::BandNoise, 156e3, 12.5e6, 1e-3);
    JammerState::new(mode, wf, Band::new(2.38e9, 156e3), monitor()).with_latency(latency_s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psd_shifts_by_exactly_the_applied_gain(seed in any::<u64>(), delta in -40.0f64..40.0, kind in 0usize..3) {
        let kind = [WaveformKind::Awgn, WaveformKind::Fsk, WaveformKind::BandNoise][kind];
        let spec = WaveformSpec::new(kind, 2e6, 10e6, 8192.0 / 10e6);
        let x = gen_waveform(&spec, seed).unwrap();
        let a = psd(&x, 1024, Window::Rect).unwrap();
        let b = psd(&apply_gain(&x, delta), 1024, Window::Rect).unwrap();
        for (p, q) in a.power_db.iter().zip(&b.power_db) {
            if *p > -180.0 && *q > -180.0 {
                prop_assert!((q - p - delta).abs() < 1e-9, "{p} -> {q}");
            }
        }
    }

    #[test]
    fn fir_is_linear(
        x in complex_vec(1..300),
        taps in complex_vec(1..120),
        a in (-2.0f64..2.0, -2.0f64..2.0),
        b in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let n = x.len();
        let y: Vec<Complex64> = x.iter().rev().map(|v| v * Complex64::new(0.3, -1.1)).collect();
        let (a, b) = (Complex64::new(a.0, a.1), Complex64::new(b.0, b.1));
        let h = FirTaps::new(taps).unwrap();
        let f = |s: Vec<Complex64>| apply_fir(&IqBuffer::new(s, 1e6, 0.0), &h).samples;
        let mix: Vec<Complex64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = f(mix);
        let rhs: Vec<Complex64> = f(x.clone()).iter().zip(f(y.clone())).map(|(p, q)| a * p + b * q).collect();
        prop_assert_eq!(lhs.len(), n);
        prop_assert!(rel_err(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn path_loss_increases_with_distance_and_ignores_rigid_motion(
        d1 in 1.0f64..5e3, extra in 1e-3f64..5e3,
        tx in (-1e3f64..1e3, -1e3f64..1e3), angle in 0.0f64..std::f64::consts::TAU,
        shift in (-1e4f64..1e4, -1e4f64..1e4), theta in 0.0f64..std::f64::consts::TAU,
    ) {
        let p = PathLossParams::default();
        let o = [tx.0, tx.1];
        let at = |d: f64| [o[0] + d * angle.cos(), o[1] + d * angle.sin()];
        prop_assert!(path_loss_db(o, at(d1 + extra), &p) > path_loss_db(o, at(d1), &p));

        let (s, c) = theta.sin_cos();
        let move_pt = |q: [f64; 2]| [c * q[0] - s * q[1] + shift.0, s * q[0] + c * q[1] + shift.1];
        let rx = at(d1);
        let before = path_loss_db(o, rx, &p);
        let after = path_loss_db(move_pt(o), move_pt(rx), &p);
        prop_assert!((before - after).abs() < 1e-6, "{before} vs {after}");
    }

    #[test]
    fn overlap_times_width_is_symmetric(
        ca in -50e6f64..50e6, wa in 1e3f64..40e6, cb in -50e6f64..50e6, wb in 1e3f64..40e6,
    ) {
        let (a, b) = (Band::new(ca, wa), Band::new(cb, wb));
        let lhs = band_overlap(&a, &b) * a.width_hz;
        let rhs = band_overlap(&b, &a) * b.width_hz;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * wa.max(wb));
    }

    #[test]
    fn stronger_interference_never_raises_sinr(
        n in 1usize..60, sig in -90.0f64..-30.0,
        jam in -120.0f64..-40.0, step in 0.1f64..30.0,
        offset in -0.6f64..0.6, width_frac in 0.01f64..1.5,
        other in -120.0f64..-60.0,
    ) {
        let band = Band::new(1.02e9, 10e6);
        let jband = Band::new(band.center_hz + offset * band.width_hz, width_frac * band.width_hz);
        prop_assume!(band.overlap_width_hz(&jband) > 0.0);
        let bystander = Interferer { rx_power_dbm: other, band: Band::new(1.02e9, 2e6) };
        let run = |j: f64| sinr_db(&band, n, sig, &[Interferer { rx_power_dbm: j, band: jband }, bystander], -167.0);
        let lo = run(jam);
        let hi = run(jam + step);
        let mut strictly = false;
        for (a, b) in lo.per_subband_db.iter().zip(&hi.per_subband_db) {
            prop_assert!(b <= a);
            strictly |= b < a;
        }
        prop_assert!(strictly);
    }

    #[test]
    fn throughput_is_monotone_and_additive(
        sinrs in proptest::collection::vec(-30.0f64..40.0, 1..50),
        bump in 0.0f64..20.0, which in any::<prop::sample::Index>(),
        cap in 1.0f64..8.0,
    ) {
        let n = sinrs.len();
        let w = 200e3;
        let band = Band::new(1e9, w * n as f64);
        let total = throughput_bps(&sinrs, &band, n, cap);
        let parts: f64 = sinrs.iter().map(|s| throughput_bps(&[*s], &Band::new(0.0, w), 1, cap)).sum();
        prop_assert!((total - parts).abs() <= 1e-9 * total.max(1.0));
        prop_assert!(total >= 0.0);

        let mut up = sinrs.clone();
        up[which.index(n)] += bump;
        prop_assert!(throughput_bps(&up, &band, n, cap) >= total);
    }

    #[test]
    fn link_status_never_chatters(
        sinrs in proptest::collection::vec(-10.0f64..20.0, 1..600),
        dt in 0.01f64..0.5, dwell in 0.05f64..2.0,
    ) {
        let mut s = LinkStatusState::new(5.0, 8.0, dwell);
        let mut last_change: Option<f64> = None;
        for (i, x) in sinrs.iter().enumerate() {
            let t = i as f64 * dt;
            let next = update_link_status(&s, *x, t);
            if next.attached != s.attached {
                if let Some(prev) = last_change {
                    prop_assert!(t - prev >= dwell - 1e-9, "transitions at {prev} and {t}");
                }
                last_change = Some(t);
            }
            s = next;
        }
    }

    #[test]
    fn sinr_tracks_jammer_gain_with_unit_slope_when_jammer_dominates(
        sig in -70.0f64..-40.0, jnr in 20.0f64..40.0, delta in 1.0f64..10.0, n in 1usize..60,
    ) {
        let band = Band::new(1.02e9, 10e6);
        let noise_dbm = -167.0 + 10.0 * band.width_hz.log10();
        let jam = noise_dbm + jnr;
        let at = |j: f64| sinr_db(&band, n, sig, &[Interferer { rx_power_dbm: j, band }], -167.0).effective_db;
        let slope = (at(jam + delta) - at(jam)) / delta;
        prop_assert!((slope + 1.0).abs() <= 0.05, "slope {slope}");
    }

    #[test]
    fn trace_comparison_is_symmetric(
        a in proptest::collection::vec(0.0f64..120.0, 1..200),
        b in proptest::collection::vec(0.0f64..120.0, 1..200),
    ) {
        let ab = compare_traces(&a, &b).unwrap();
        let ba = compare_traces(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        prop_assert!(ab.min >= 0.0 && ab.max <= 100.0 && ab.min <= ab.mean && ab.mean <= ab.max);
        prop_assert_eq!(compare_traces(&a, &a).unwrap().min, 100.0);
    }

    #[test]
    fn proactive_always_on_reactive_silent_without_energy(
        steps in 1usize..300, dt in 0.001f64..0.1, peaks in proptest::collection::vec(-5e6f64..5e6, 300),
    ) {
        let mut pro = jammer(JammerMode::Proactive, 0.02);
        let mut re = jammer(JammerMode::Reactive, 0.02);
        for (i, peak) in peaks.iter().take(steps).enumerate() {
            let t = i as f64 * dt;
            let quiet = Detection { present: false, peak_freq_hz: 2.38e9 + peak, peak_power_db: -150.0 };
            let (p, dp) = jammer_step(&pro, &quiet, t);
            let (r, dr) = jammer_step(&re, &quiet, t);
            prop_assert!(dp.is_on());
            prop_assert!(!dr.is_on());
            prop_assert_eq!(r.tuned_band, re.tuned_band);
            pro = p;
            re = r;
        }
    }

    #[test]
    fn retunes_never_land_before_the_latency(
        latency in 0.0f64..0.2, dt in 0.002f64..0.05,
        events in proptest::collection::vec((any::<bool>(), -4.9e6f64..4.9e6), 1..200),
    ) {
        let mut s = jammer(JammerMode::Reactive, latency);
        let mut detections: Vec<(f64, f64)> = Vec::new();
        for (i, (present, off)) in events.iter().enumerate() {
            let t = i as f64 * dt;
            let d = Detection { present: *present, peak_freq_hz: 2.38e9 + off, peak_power_db: -60.0 };
            if *present {
                detections.push((t, d.peak_freq_hz));
            }
            let (next, _) = jammer_step(&s, &d, t);
            if next.tuned_band != s.tuned_band {
                let c = next.tuned_band.center_hz;
                let cause = detections.iter().any(|(td, f)| *f == c && *td + latency <= t + 1e-9);
                prop_assert!(cause, "retuned to {c} at {t} without a detection {latency}s earlier");
            }
            s = next;
        }
    }

    #[test]
    fn gain_schedule_is_right_continuous_step_function(
        mut times in proptest::collection::vec(0.0f64..100.0, 1..10),
        gains in proptest::collection::vec(-10.0f64..40.0, 10),
        probe in 0.0f64..120.0,
    ) {
        times.sort_by(f64::total_cmp);
        times.dedup();
        let pairs: Vec<(f64, f64)> = times.iter().zip(&gains).map(|(t, g)| (*t, *g)).collect();
        let s = GainSchedule::from_pairs(&pairs).unwrap();
        for (t, g) in &pairs {
            prop_assert_eq!(s.gain_at(*t), *g);
        }
        let want = pairs.iter().rev().find(|(t, _)| *t <= probe).map_or(pairs[0].1, |p| p.1);
        prop_assert_eq!(s.gain_at(probe), want);
    }

    #[test]
    fn place_jammer_touches_only_the_replaced_node(seed in 0u64..50, pick in any::<prop::sample::Index>()) {
        let sc = build_clustered_scenario(4, 3, 100.0, 500.0, seed).unwrap();
        let users: Vec<String> = sc.nodes.iter().filter(|n| n.id.starts_with("ue")).map(|n| n.id.clone()).collect();
        let victim = &users[pick.index(users.len())];
        let out = place_jammer(&sc, victim, jammer(JammerMode::Proactive, 0.02)).unwrap();
        prop_assert_eq!(out.nodes.len(), sc.nodes.len());
        for (a, b) in sc.nodes.iter().zip(&out.nodes) {
            if &a.id == victim {
                prop_assert_eq!(a.position_m, b.position_m);
                prop_assert_eq!(a.cluster, b.cluster);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn reactive_jammer_converges_on_a_static_tone() {
    let cfg = monitor();
    let tone = 2.3832e9;
    let start = cfg.monitor_band.center_hz - cfg.sample_rate_hz / 2.0;
    let mut power_db = vec![cfg.noise_floor_db; cfg.fft_size];
    let k = ((tone - start) / cfg.bin_hz()).round() as usize;
    power_db[k] = cfg.noise_floor_db + 30.0;
    let frame = PsdFrame { freq_start_hz: start, freq_step_hz: cfg.bin_hz(), power_db, timestamp_s: 0.0 };
    let det = jamsim::jammer::sense(&frame, &cfg).unwrap();
    assert!(det.present);

    let latency = 0.02;
    let mut s = jammer(JammerMode::Reactive, latency);
    for i in 0..50 {
        let t = i as f64 * 0.01;
        let (next, decision) = jammer_step(&s, &det, t);
        if t >= latency - 1e-9 {
            assert!((next.tuned_band.center_hz - tone).abs() <= cfg.bin_hz(), "t = {t}");
            assert!(decision.is_on());
        } else {
            assert_eq!(next.tuned_band.center_hz, 2.38e9);
        }
        s = next;
    }
}
