//! Checks shared by the waveform tests and the acceptance harness. Each
//! returns a short measurement summary, or the reason it failed.

#![allow(dead_code)]

pub mod live;

use std::path::Path;

use jamsim::channel::{apply_fir, FirTaps};
use jamsim::engine::{EventKind, RunConfig};
use jamsim::waveforms::{gen_waveform, psd, IqBuffer, Window, WaveformKind, WaveformSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rustfft::FftPlanner;

pub type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn awgn_power() -> Check {
    let gain_db = 3.0;
    let spec = WaveformSpec::new(WaveformKind::Awgn, 1e6, 1e6, 1.0).with_gain_db(gain_db);
    let x = gen_waveform(&spec, 11).map_err(|e| e.to_string())?;
    let want = 10f64.powf(gain_db / 10.0);
    let rel = (x.mean_power() - want).abs() / want;
    ensure(x.len() >= 1_000_000 && rel < 0.01, format!("{} samples, power error {:.3}%", x.len(), 100.0 * rel))
}

/// Mean in-band bin power over the strongest bin clear of the band edge.
pub fn band_noise_rejection() -> Check {
    let (bw, fs) = (1e6, 10e6);
    let spec = WaveformSpec::new(WaveformKind::BandNoise, bw, fs, 131_072.0 / fs);
    let frame = psd(&gen_waveform(&spec, 5).map_err(|e| e.to_string())?, 1024, Window::Hann).map_err(|e| e.to_string())?;
    let lin = |db: f64| 10f64.powf(db / 10.0);
    let (mut inband, mut n_in, mut worst_out) = (0.0, 0, f64::NEG_INFINITY);
    for (k, p) in frame.power_db.iter().enumerate() {
        let f = frame.bin_freq(k).abs();
        if f < 0.4 * bw {
            inband += lin(*p);
            n_in += 1;
        } else if f > 0.6 * bw {
            worst_out = worst_out.max(*p);
        }
    }
    let rejection = 10.0 * (inband / n_in as f64).log10() - worst_out;
    ensure(rejection >= 40.0, format!("rejection {rejection:.1} dB"))
}

pub fn constant_envelope() -> Check {
    let mut worst: f64 = 0.0;
    for kind in [WaveformKind::Fsk, WaveformKind::Msk, WaveformKind::Cpfsk] {
        let spec = WaveformSpec::new(kind, 200e3, 2e6, 0.05).with_gain_db(-7.0);
        let x = gen_waveform(&spec, 9).map_err(|e| e.to_string())?;
        let a = 10f64.powf(-7.0 / 20.0);
        worst = x.samples.iter().map(|s| (s.norm() - a).abs() / a).fold(worst, f64::max);
    }
    ensure(worst <= 1e-9, format!("worst envelope deviation {worst:.1e}"))
}

/// Rect-window PSD bins sum to the mean sample power, and the raw DFT
/// satisfies the energy identity.
pub fn parseval() -> Check {
    let spec = WaveformSpec::new(WaveformKind::BandNoise, 3e6, 10e6, 8192.0 / 10e6);
    let x = gen_waveform(&spec, 2).map_err(|e| e.to_string())?;
    let frame = psd(&x, 1024, Window::Rect).map_err(|e| e.to_string())?;
    let rel_psd = (frame.total_linear_power() - x.mean_power()).abs() / x.mean_power();

    let mut spectrum = x.samples.clone();
    FftPlanner::<f64>::new().plan_fft_forward(spectrum.len()).process(&mut spectrum);
    let time: f64 = x.samples.iter().map(|s| s.norm_sqr()).sum();
    let freq: f64 = spectrum.iter().map(|s| s.norm_sqr()).sum::<f64>() / spectrum.len() as f64;
    let rel_dft = (time - freq).abs() / time;
    let worst = rel_psd.max(rel_dft);
    ensure(worst <= 1e-6, format!("psd {rel_psd:.1e}, dft {rel_dft:.1e}"))
}

fn brute_force(x: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    (0..x.len())
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, hk) in h.iter().enumerate() {
                if k <= n {
                    acc += hk * x[n - k];
                }
            }
            acc
        })
        .collect()
}

/// 100 random cases spanning both the direct and the FFT convolution paths.
pub fn fir_matches_brute_force() -> Check {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut c = || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n_taps = 1 + (case * 7) % 200;
        let n = 1 + (case * 131) % 3000;
        let h: Vec<Complex64> = (0..n_taps).map(|_| c()).collect();
        let x: Vec<Complex64> = (0..n).map(|_| c()).collect();
        let got = apply_fir(&IqBuffer::new(x.clone(), 1e6, 0.0), &FirTaps::new(h.clone()).unwrap()).samples;
        let want = brute_force(&x, &h);
        if got.len() != want.len() {
            return Err(format!("case {case}: length {} != {}", got.len(), want.len()));
        }
        let err: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = want.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
    }
    ensure(worst <= 1e-9, format!("worst relative error {worst:.1e}"))
}

pub fn waveform_suite() -> Vec<(&'static str, Check)> {
    vec![
        ("awgn power", awgn_power()),
        ("band-noise rejection", band_noise_rejection()),
        ("constant envelope", constant_envelope()),
        ("parseval", parseval()),
        ("fir vs brute force", fir_matches_brute_force()),
    ]
}

/// Keep the jammer disarmed for the whole run.
pub fn silence(mut config: RunConfig) -> RunConfig {
    if let Some(j) = config.scenario.jammer.as_mut() {
        j.transmitting = false;
    }
    config.timeline.retain(|e| e.kind != EventKind::JammerOn);
    config
}

/// Names of files that differ between two persisted record directories.
pub fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let n_b = std::fs::read_dir(b).unwrap().count();
    let mut diff: Vec<String> =
        names.iter().filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok()).cloned().collect();
    if names.len() != n_b {
        diff.push(format!("file count {} vs {n_b}", names.len()));
    }
    diff
}
