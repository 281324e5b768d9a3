//! Generate each jamming waveform, report its power and spectral peak, and
//! write one of them as an IQ file.
//!
//!     cargo run --example waveforms [-- out.iq]

use jamsim::waveforms::{gen_waveform, psd, write_iq_file, Window, WaveformKind, WaveformSpec};

fn main() {
    let fs = 10e6;
    for kind in WaveformKind::ALL.into_iter().filter(|k| *k != WaveformKind::CustomFile) {
        let spec = WaveformSpec::new(kind, 1e6, fs, 0.01).with_gain_db(-3.0);
        let buf = gen_waveform(&spec, 7).expect("valid spec");
        let frame = psd(&buf, 1024, Window::Hann).expect("long enough");
        let (k, peak) = frame
            .power_db
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty frame");
        println!(
            "{kind:?}: {} samples, power {:.3} dB, peak {:.1} dB at {:+.0} kHz, constant envelope: {}",
            buf.len(),
            10.0 * buf.mean_power().log10(),
            peak,
            frame.bin_freq(k) / 1e3,
            kind.is_constant_envelope()
        );
    }
    if let Some(out) = std::env::args().nth(1) {
        let fsk = gen_waveform(&WaveformSpec::new(WaveformKind::Fsk, 1e6, fs, 0.01), 7).unwrap();
        write_iq_file(&fsk, out.as_ref()).expect("write IQ file");
        println!("wrote {out} and its JSON sidecar");
    }
}
