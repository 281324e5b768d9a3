//! Baseband IQ synthesis for the jamming signal families and power spectral
//! density estimation.
//!
//! Amplitudes are dimensionless; a buffer's mean `|x|^2` is its power in
//! whatever linear unit the caller assigns (the engine uses milliwatts).

use std::cell::RefCell;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Lowest reportable PSD level, in dB. Silence maps here instead of `-inf`.
pub const PSD_FLOOR_DB: f64 = -200.0;
pub const DEFAULT_FFT_SIZE: usize = 1024;

const PSD_FLOOR_LINEAR: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("bandwidth {bandwidth_hz} Hz exceeds sample rate {sample_rate_hz} Hz")]
    BandwidthExceedsSampleRate { bandwidth_hz: f64, sample_rate_hz: f64 },
    #[error("duration {duration_s} s at {sample_rate_hz} Hz yields no samples")]
    TooShort { duration_s: f64, sample_rate_hz: f64 },
    #[error("invalid {field}: {value}")]
    InvalidParameter { field: &'static str, value: f64 },
    #[error("custom waveform requires custom_path")]
    MissingCustomPath,
    #[error("cannot read IQ file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed IQ file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("buffer has {len} samples, fewer than fft size {fft_size}")]
    BufferTooShort { len: usize, fft_size: usize },
    #[error("fft size {0} is not a power of two")]
    BadFftSize(usize),
}

/// Complex baseband samples with their sample rate and RF center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqBuffer {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64, center_freq_hz: f64) -> Self {
        Self { samples, sample_rate_hz, center_freq_hz }
    }

    pub fn zeros(len: usize, sample_rate_hz: f64, center_freq_hz: f64) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate_hz, center_freq_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.re.is_finite() && s.im.is_finite())
    }

    /// Add `other` sample-by-sample. Lengths must match.
    pub fn add_assign(&mut self, other: &IqBuffer) {
        assert_eq!(self.len(), other.len(), "mixing buffers of unequal length");
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += *b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Fsk,
    Ask,
    Msk,
    Awgn,
    BandNoise,
    Cpfsk,
    CustomFile,
}

impl WaveformKind {
    pub const ALL: [WaveformKind; 7] = [
        WaveformKind::Fsk,
        WaveformKind::Ask,
        WaveformKind::Msk,
        WaveformKind::Awgn,
        WaveformKind::BandNoise,
        WaveformKind::Cpfsk,
        WaveformKind::CustomFile,
    ];

    pub fn is_constant_envelope(self) -> bool {
        matches!(self, WaveformKind::Fsk | WaveformKind::Msk | WaveformKind::Cpfsk)
    }
}

/// Parameters of one generated jamming waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub kind: WaveformKind,
    pub bandwidth_hz: f64,
    /// Ignored for the noise kinds.
    pub symbol_rate_hz: f64,
    /// Mean power in dB relative to unit amplitude. `-inf` mutes the output.
    #[serde(with = "crate::serde_db")]
    pub gain_db: f64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_path: Option<PathBuf>,
}

impl WaveformSpec {
    pub fn new(kind: WaveformKind, bandwidth_hz: f64, sample_rate_hz: f64, duration_s: f64) -> Self {
        Self {
            kind,
            bandwidth_hz,
            symbol_rate_hz: bandwidth_hz / 2.0,
            gain_db: 0.0,
            sample_rate_hz,
            duration_s,
            custom_path: None,
        }
    }

    pub fn with_gain_db(mut self, gain_db: f64) -> Self {
        self.gain_db = gain_db;
        self
    }

    pub fn with_symbol_rate(mut self, symbol_rate_hz: f64) -> Self {
        self.symbol_rate_hz = symbol_rate_hz;
        self
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(WaveformError::InvalidParameter { field, value: v })
            }
        };
        positive("sample_rate_hz", self.sample_rate_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(WaveformError::InvalidParameter { field: "duration_s", value: self.duration_s });
        }
        if self.gain_db.is_nan() || self.gain_db == f64::INFINITY {
            return Err(WaveformError::InvalidParameter { field: "gain_db", value: self.gain_db });
        }
        if self.bandwidth_hz > self.sample_rate_hz {
            return Err(WaveformError::BandwidthExceedsSampleRate {
                bandwidth_hz: self.bandwidth_hz,
                sample_rate_hz: self.sample_rate_hz,
            });
        }
        if self.duration_s * self.sample_rate_hz < 1.0 || self.n_samples() == 0 {
            return Err(WaveformError::TooShort {
                duration_s: self.duration_s,
                sample_rate_hz: self.sample_rate_hz,
            });
        }
        if matches!(self.kind, WaveformKind::Fsk | WaveformKind::Ask | WaveformKind::Msk | WaveformKind::Cpfsk) {
            positive("symbol_rate_hz", self.symbol_rate_hz)?;
        }
        if self.kind == WaveformKind::CustomFile && self.custom_path.is_none() {
            return Err(WaveformError::MissingCustomPath);
        }
        Ok(())
    }
}

/// Linear power for a dB value; `-inf` is exact silence.
pub fn db_to_power(db: f64) -> f64 {
    if db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(db / 10.0)
    }
}

pub fn power_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

/// Generate the waveform described by `spec`. Bit-identical for equal
/// `(spec, seed)`.
pub fn gen_waveform(spec: &WaveformSpec, seed: u64) -> Result<IqBuffer, WaveformError> {
    spec.validate()?;
    let custom = match spec.kind {
        WaveformKind::CustomFile => {
            let path = spec.custom_path.as_ref().ok_or(WaveformError::MissingCustomPath)?;
            Some(read_iq_file(path)?)
        }
        _ => None,
    };
    synthesize(spec, seed, custom.as_ref())
}

/// Like [`gen_waveform`], with an already-loaded custom source for
/// `CustomFile` specs (the engine loads the file once per run).
pub fn synthesize(spec: &WaveformSpec, seed: u64, custom: Option<&IqBuffer>) -> Result<IqBuffer, WaveformError> {
    spec.validate()?;
    let n = spec.n_samples();
    let fs = spec.sample_rate_hz;
    let power = db_to_power(spec.gain_db);
    let amp = power.sqrt();
    let mut rng = rng::chacha(seed);

    let samples = match spec.kind {
        WaveformKind::Awgn => {
            let sigma = (power / 2.0).sqrt();
            complex_gaussian(&mut rng, n).into_iter().map(|z| z * sigma).collect()
        }
        WaveformKind::BandNoise => band_limited_noise(&mut rng, n, fs, spec.bandwidth_hz, power),
        WaveformKind::Fsk => {
            let bits = random_bits(&mut rng, symbol_count(n, spec.symbol_rate_hz, fs));
            continuous_phase_fsk(&bits, spec.bandwidth_hz / 2.0, spec.symbol_rate_hz, fs, n, amp)
        }
        WaveformKind::Cpfsk => {
            let h = 0.5 * spec.bandwidth_hz / spec.symbol_rate_hz;
            let bits = random_bits(&mut rng, symbol_count(n, spec.symbol_rate_hz, fs));
            continuous_phase_fsk(&bits, h * spec.symbol_rate_hz / 2.0, spec.symbol_rate_hz, fs, n, amp)
        }
        WaveformKind::Msk => {
            let bits = random_bits(&mut rng, symbol_count(n, spec.symbol_rate_hz, fs));
            continuous_phase_fsk(&bits, 0.25 * spec.symbol_rate_hz, spec.symbol_rate_hz, fs, n, amp)
        }
        WaveformKind::Ask => {
            let bits = random_bits(&mut rng, symbol_count(n, spec.symbol_rate_hz, fs));
            amplitude_shift_keying(&bits, spec.symbol_rate_hz, fs, n, power)
        }
        WaveformKind::CustomFile => {
            let source = custom.ok_or(WaveformError::MissingCustomPath)?;
            tile_to_power(source, n, power)
        }
    };
    Ok(IqBuffer::new(samples, fs, 0.0))
}

fn symbol_count(n: usize, symbol_rate_hz: f64, fs: f64) -> usize {
    ((n as f64) * symbol_rate_hz / fs).ceil() as usize + 1
}

fn random_bits<R: Rng>(rng: &mut R, count: usize) -> Vec<bool> {
    (0..count).map(|_| rng.next_u64() >> 63 == 1).collect()
}

fn complex_gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| {
            let (a, b) = rng::normal_pair(rng);
            Complex64::new(a, b)
        })
        .collect()
}

/// Binary continuous-phase FSK: symbol `true` sits at `+deviation_hz`,
/// `false` at `-deviation_hz`, with the phase carried across symbol edges.
pub fn continuous_phase_fsk(
    bits: &[bool],
    deviation_hz: f64,
    symbol_rate_hz: f64,
    sample_rate_hz: f64,
    n_samples: usize,
    amplitude: f64,
) -> Vec<Complex64> {
    let step = std::f64::consts::TAU * deviation_hz / sample_rate_hz;
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        out.push(Complex64::from_polar(amplitude, phase));
        let sym = ((i as f64) * symbol_rate_hz / sample_rate_hz) as usize;
        let bit = bits.get(sym).copied().unwrap_or(true);
        phase += if bit { step } else { -step };
        phase = phase.rem_euclid(std::f64::consts::TAU);
    }
    out
}

// Two-level ASK with levels at 0.2 and 1.8 times the target power.
fn amplitude_shift_keying(bits: &[bool], symbol_rate_hz: f64, fs: f64, n: usize, power: f64) -> Vec<Complex64> {
    let lo = (0.2 * power).sqrt();
    let hi = (1.8 * power).sqrt();
    (0..n)
        .map(|i| {
            let sym = ((i as f64) * symbol_rate_hz / fs) as usize;
            let a = if bits[sym.min(bits.len() - 1)] { hi } else { lo };
            Complex64::new(a, 0.0)
        })
        .collect()
}

/// White complex noise brick-wall filtered to `|f| <= bandwidth/2` in the
/// frequency domain of the whole buffer, then scaled to exactly `power`.
fn band_limited_noise<R: Rng>(rng: &mut R, n: usize, fs: f64, bandwidth_hz: f64, power: f64) -> Vec<Complex64> {
    let mut spectrum = complex_gaussian(rng, n);
    if power == 0.0 {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    fft_plan(n, false).process(&mut spectrum);
    let half = bandwidth_hz / 2.0;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * fs / n as f64;
        if f.abs() > half {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    // A band narrower than one bin would keep nothing; keep DC at least.
    if spectrum.iter().all(|c| c.norm_sqr() == 0.0) {
        let (a, b) = rng::normal_pair(rng);
        spectrum[0] = Complex64::new(a, b);
    }
    fft_plan(n, true).process(&mut spectrum);
    scale_to_power(spectrum, power)
}

fn tile_to_power(source: &IqBuffer, n: usize, power: f64) -> Vec<Complex64> {
    let tiled: Vec<Complex64> = source.samples.iter().copied().cycle().take(n).collect();
    scale_to_power(tiled, power)
}

fn scale_to_power(mut samples: Vec<Complex64>, power: f64) -> Vec<Complex64> {
    let measured = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len().max(1) as f64;
    let k = if measured > 0.0 { (power / measured).sqrt() } else { 0.0 };
    for s in &mut samples {
        *s *= k;
    }
    samples
}

/// Scale every sample by `10^(delta_db/20)`. `-inf` mutes.
pub fn apply_gain(buffer: &IqBuffer, delta_db: f64) -> IqBuffer {
    let k = db_to_power(delta_db).sqrt();
    IqBuffer {
        samples: buffer.samples.iter().map(|s| s * k).collect(),
        ..buffer.clone()
    }
}

/// Mix the buffer by `offset_hz`; the center frequency is left untouched so the
/// content moves relative to it.
pub fn frequency_shift(buffer: &IqBuffer, offset_hz: f64) -> IqBuffer {
    let w = std::f64::consts::TAU * offset_hz / buffer.sample_rate_hz;
    let samples = buffer
        .samples
        .iter()
        .enumerate()
        .map(|(n, s)| s * Complex64::from_polar(1.0, (w * n as f64).rem_euclid(std::f64::consts::TAU)))
        .collect();
    IqBuffer { samples, ..buffer.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rect,
    #[default]
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// One spectrogram row: power per bin in dB, bins ascending in frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdFrame {
    pub freq_start_hz: f64,
    pub freq_step_hz: f64,
    pub power_db: Vec<f64>,
    pub timestamp_s: f64,
}

impl PsdFrame {
    pub fn bin_freq(&self, k: usize) -> f64 {
        self.freq_start_hz + k as f64 * self.freq_step_hz
    }

    pub fn freq_end_hz(&self) -> f64 {
        self.bin_freq(self.power_db.len().saturating_sub(1))
    }

    pub fn total_linear_power(&self) -> f64 {
        self.power_db.iter().map(|db| 10f64.powf(db / 10.0)).sum()
    }
}

/// Averaged periodogram over non-overlapping `fft_size` blocks, FFT-shifted so
/// bin 0 is the lowest frequency. Normalized so that with a rectangular window
/// the bins sum to the mean sample power of the blocks used.
pub fn psd(buffer: &IqBuffer, fft_size: usize, window: Window) -> Result<PsdFrame, WaveformError> {
    if fft_size == 0 || !fft_size.is_power_of_two() {
        return Err(WaveformError::BadFftSize(fft_size));
    }
    if buffer.len() < fft_size {
        return Err(WaveformError::BufferTooShort { len: buffer.len(), fft_size });
    }
    let w = window.coefficients(fft_size);
    let w_energy: f64 = w.iter().map(|c| c * c).sum();
    let fft = fft_plan(fft_size, false);
    let blocks = buffer.len() / fft_size;
    let mut acc = vec![0.0f64; fft_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft_size];
    for b in 0..blocks {
        let chunk = &buffer.samples[b * fft_size..(b + 1) * fft_size];
        for ((dst, s), c) in scratch.iter_mut().zip(chunk).zip(&w) {
            *dst = s * c;
        }
        fft.process(&mut scratch);
        for (a, x) in acc.iter_mut().zip(&scratch) {
            *a += x.norm_sqr();
        }
    }
    let norm = 1.0 / (fft_size as f64 * w_energy * blocks as f64);
    let half = fft_size / 2;
    let power_db = (0..fft_size)
        .map(|k| {
            let p = acc[(k + half) % fft_size] * norm;
            10.0 * p.max(PSD_FLOOR_LINEAR).log10()
        })
        .collect();
    let step = buffer.sample_rate_hz / fft_size as f64;
    Ok(PsdFrame {
        freq_start_hz: buffer.center_freq_hz - half as f64 * step,
        freq_step_hz: step,
        power_db,
        timestamp_s: 0.0,
    })
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized forward FFT, or inverse FFT scaled by `1/n`.
pub(crate) fn fft_plan(n: usize, inverse: bool) -> ScaledFft {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let inner = if inverse { p.plan_fft_inverse(n) } else { p.plan_fft_forward(n) };
        ScaledFft { inner, scale: if inverse { 1.0 / n as f64 } else { 1.0 } }
    })
}

pub(crate) struct ScaledFft {
    inner: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl ScaledFft {
    pub(crate) fn process(&self, data: &mut [Complex64]) {
        self.inner.process(data);
        if self.scale != 1.0 {
            for d in data.iter_mut() {
                *d *= self.scale;
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IqSidecar {
    sample_rate_hz: f64,
    center_freq_hz: f64,
}

/// Path of the JSON metadata file that accompanies `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Read interleaved little-endian `f32` I/Q pairs plus the `<file>.json`
/// sidecar carrying `sample_rate_hz` and `center_freq_hz`.
pub fn read_iq_file(path: &Path) -> Result<IqBuffer, WaveformError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| WaveformError::Io { path: p, source }
    };
    let malformed = |reason: String| WaveformError::MalformedFile { path: path.to_path_buf(), reason };

    let bytes = fs::read(path).map_err(io_err(path))?;
    let meta_path = sidecar_path(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: IqSidecar = serde_json::from_str(&meta_text).map_err(|e| malformed(format!("sidecar: {e}")))?;
    if !(meta.sample_rate_hz.is_finite() && meta.sample_rate_hz > 0.0) || !meta.center_freq_hz.is_finite() {
        return Err(malformed("sidecar sample_rate_hz must be positive and center_freq_hz finite".into()));
    }
    if bytes.is_empty() || bytes.len() % 8 != 0 {
        return Err(malformed(format!("{} bytes is not a whole number of I/Q pairs", bytes.len())));
    }
    let samples: Vec<Complex64> = bytes
        .chunks_exact(8)
        .map(|c| {
            let i = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let q = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(f64::from(i), f64::from(q))
        })
        .collect();
    let buf = IqBuffer::new(samples, meta.sample_rate_hz, meta.center_freq_hz);
    if !buf.is_finite() {
        return Err(malformed("non-finite sample".into()));
    }
    Ok(buf)
}

pub fn write_iq_file(buffer: &IqBuffer, path: &Path) -> Result<(), WaveformError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| WaveformError::Io { path: p, source }
    };
    let mut bytes = Vec::with_capacity(buffer.len() * 8);
    for s in &buffer.samples {
        bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let meta = IqSidecar { sample_rate_hz: buffer.sample_rate_hz, center_freq_hz: buffer.center_freq_hz };
    let meta_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    fs::write(&meta_path, text).map_err(io_err(&meta_path))
}
