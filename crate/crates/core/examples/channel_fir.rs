//! Path loss and a two-ray FIR channel applied to a band-noise burst.
//!
//!     cargo run --example channel_fir

use jamsim::channel::{apply_fir, path_loss_db, FirTaps, PathLossParams};
use jamsim::waveforms::{gen_waveform, psd, Window, WaveformKind, WaveformSpec};
use num_complex::Complex64;

fn main() {
    let params = PathLossParams::default();
    for d in [1.0, 10.0, 100.0, 1000.0] {
        println!("path loss at {d:>6} m: {:.1} dB", path_loss_db([0.0, 0.0], [d, 0.0], &params));
    }

    let fs = 10e6;
    let x = gen_waveform(&WaveformSpec::new(WaveformKind::BandNoise, 8e6, fs, 0.01), 3).unwrap();
    // direct path plus an echo 0.5 us later, 6 dB down
    let mut taps = vec![Complex64::new(0.0, 0.0); 6];
    taps[0] = Complex64::new(1.0, 0.0);
    taps[5] = Complex64::new(0.5, 0.0);
    let h = FirTaps::new(taps).unwrap();
    let y = apply_fir(&x, &h);
    println!("tap power gain {:.2} dB, measured {:.2} dB", h.power_gain_db(), 10.0 * (y.mean_power() / x.mean_power()).log10());

    // the echo carves notches every 1/0.5us = 2 MHz
    let (px, py) = (psd(&x, 256, Window::Hann).unwrap(), psd(&y, 256, Window::Hann).unwrap());
    for k in (0..256).step_by(16) {
        println!("{:+6.2} MHz  {:+6.1} dB", px.bin_freq(k) / 1e6, py.power_db[k] - px.power_db[k]);
    }
}
