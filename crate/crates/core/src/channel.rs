//! Propagation between node pairs: log-distance path loss, FIR tap
//! convolution and spectral overlap.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveforms::{fft_plan, IqBuffer};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("FIR tap sequence is empty")]
    EmptyTaps,
    #[error("FIR tap {index} is not finite")]
    NonFiniteTap { index: usize },
}

/// Log-distance path loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub ref_loss_db: f64,
    pub ref_dist_m: f64,
    pub exponent: f64,
    pub min_dist_m: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self { ref_loss_db: 30.0, ref_dist_m: 1.0, exponent: 3.0, min_dist_m: 1.0 }
    }
}

pub type Position = [f64; 2];

pub fn distance_m(a: Position, b: Position) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn path_loss_db(tx_pos: Position, rx_pos: Position, params: &PathLossParams) -> f64 {
    let d = distance_m(tx_pos, rx_pos).max(params.min_dist_m);
    params.ref_loss_db + 10.0 * params.exponent * (d / params.ref_dist_m).log10()
}

pub fn rx_power_dbm(tx_power_dbm: f64, pl_db: f64) -> f64 {
    tx_power_dbm - pl_db
}

/// A contiguous slice of spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center_hz: f64,
    pub width_hz: f64,
}

impl Band {
    pub const fn new(center_hz: f64, width_hz: f64) -> Self {
        Self { center_hz, width_hz }
    }

    pub fn low_hz(&self) -> f64 {
        self.center_hz - self.width_hz / 2.0
    }

    pub fn high_hz(&self) -> f64 {
        self.center_hz + self.width_hz / 2.0
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        f_hz >= self.low_hz() && f_hz <= self.high_hz()
    }

    pub fn overlap_width_hz(&self, other: &Band) -> f64 {
        (self.high_hz().min(other.high_hz()) - self.low_hz().max(other.low_hz())).max(0.0)
    }

    /// Split into `n` equal adjacent sub-bands, lowest first.
    pub fn subbands(&self, n: usize) -> Vec<Band> {
        let w = self.width_hz / n as f64;
        (0..n).map(|i| Band::new(self.low_hz() + (i as f64 + 0.5) * w, w)).collect()
    }

    pub fn recentered(&self, center_hz: f64) -> Band {
        Band::new(center_hz, self.width_hz)
    }
}

/// Fraction of the victim band `a` covered by `b`.
pub fn band_overlap(a: &Band, b: &Band) -> f64 {
    if a.width_hz <= 0.0 {
        return 0.0;
    }
    (a.overlap_width_hz(b) / a.width_hz).clamp(0.0, 1.0)
}

/// Channel impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct FirTaps(Vec<Complex64>);

impl FirTaps {
    pub fn new(taps: Vec<Complex64>) -> Result<Self, ChannelError> {
        if taps.is_empty() {
            return Err(ChannelError::EmptyTaps);
        }
        if let Some(index) = taps.iter().position(|t| !(t.re.is_finite() && t.im.is_finite())) {
            return Err(ChannelError::NonFiniteTap { index });
        }
        Ok(Self(taps))
    }

    /// Single-tap flat channel carrying the given path loss.
    pub fn flat(pl_db: f64) -> Self {
        Self(vec![Complex64::new(10f64.powf(-pl_db / 20.0), 0.0)])
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.0
    }

    /// Power gain for a white input, `sum |h|^2`, in dB.
    pub fn power_gain_db(&self) -> f64 {
        10.0 * self.0.iter().map(|t| t.norm_sqr()).sum::<f64>().log10()
    }
}

impl TryFrom<Vec<[f64; 2]>> for FirTaps {
    type Error = ChannelError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        FirTaps::new(v.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

impl From<FirTaps> for Vec<[f64; 2]> {
    fn from(t: FirTaps) -> Self {
        t.0.into_iter().map(|c| [c.re, c.im]).collect()
    }
}

// Above this tap count the overlap-save FFT path is used.
const DIRECT_MAX_TAPS: usize = 64;

/// Causal linear convolution truncated to the input length.
pub fn apply_fir(buffer: &IqBuffer, taps: &FirTaps) -> IqBuffer {
    let samples = if taps.0.len() <= DIRECT_MAX_TAPS {
        convolve_direct(&buffer.samples, &taps.0)
    } else {
        convolve_fft(&buffer.samples, &taps.0)
    };
    IqBuffer { samples, ..buffer.clone() }
}

fn convolve_direct(x: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let kmax = h.len().min(n + 1);
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..kmax {
            acc += h[k] * x[n - k];
        }
        *out = acc;
    }
    y
}

/// Overlap-save convolution; equal to [`convolve_direct`] up to rounding.
pub(crate) fn convolve_fft(x: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    let m = h.len();
    let nfft = (4 * m).next_power_of_two();
    let step = nfft - (m - 1);
    let fwd = fft_plan(nfft, false);
    let inv = fft_plan(nfft, true);

    let mut hf = vec![Complex64::new(0.0, 0.0); nfft];
    hf[..m].copy_from_slice(h);
    fwd.process(&mut hf);

    let mut y = Vec::with_capacity(x.len());
    let mut block = vec![Complex64::new(0.0, 0.0); nfft];
    let mut start = 0usize;
    while start < x.len() {
        // block holds x[start - (m-1) .. start + step], zero before the signal.
        for (i, slot) in block.iter_mut().enumerate() {
            let idx = start as isize + i as isize - (m as isize - 1);
            *slot = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { Complex64::new(0.0, 0.0) };
        }
        fwd.process(&mut block);
        for (b, hk) in block.iter_mut().zip(&hf) {
            *b *= hk;
        }
        inv.process(&mut block);
        let take = step.min(x.len() - start);
        y.extend_from_slice(&block[m - 1..m - 1 + take]);
        start += step;
    }
    y
}
