use num_complex::Complex;

use super::F0Track;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Signal;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Coefficients of one pitch-synchronous analysis instant.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFrame<T> {
    /// Analysis instant, in samples.
    pub time: usize,
    pub f0: T,
    /// Complex amplitude of harmonics `1..=K`, amplitude-normalized so that
    /// `A·cos(k·φ + θ)` yields `A·e^{jθ}`.
    pub coefficients: Vec<Complex<T>>,
    /// The analysis window ran past either end of the signal.
    pub truncated: bool,
}

impl<T: Real> HarmonicFrame<T> {
    pub fn n_harmonics(&self) -> usize {
        self.coefficients.len()
    }

    pub fn magnitudes(&self) -> Vec<T> {
        self.coefficients.iter().map(|c| c.norm()).collect()
    }

    pub fn harmonic_freqs(&self) -> Vec<T> {
        (1..=self.coefficients.len())
            .map(|k| self.f0 * T::from_usize_lossy(k))
            .collect()
    }
}

/// aDFT output: irregularly spaced frames of harmonic coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSpectrogram<T> {
    pub frames: Vec<HarmonicFrame<T>>,
    pub sample_rate: u32,
    pub n_samples: usize,
}

impl<T: Real> HarmonicSpectrogram<T> {
    pub fn nyquist(&self) -> T {
        T::lit(f64::from(self.sample_rate) / 2.0)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Largest `K` with `K·f0 < nyquist`.
pub(crate) fn harmonic_count(f0: f64, nyquist: f64) -> usize {
    if f0 <= 0.0 || f0 >= nyquist {
        return 0;
    }
    let mut k = (nyquist / f0).floor() as usize;
    while k > 0 && k as f64 * f0 >= nyquist {
        k -= 1;
    }
    k
}

/// Analysis instants one local period apart: each instant is the first sample
/// whose phase has advanced by a full cycle since the previous one.
pub(crate) fn analysis_instants(phase: &[f64]) -> Vec<usize> {
    let mut out = vec![0];
    let mut last = phase[0];
    for (n, &p) in phase.iter().enumerate().skip(1) {
        if p - last >= TWO_PI {
            out.push(n);
            last = p;
        }
    }
    out
}

/// Hann window over `periods` cycles of the phase, centred on phase
/// `centre`. Returns the first sample index, the weights, and whether the
/// support was cut by either end of the signal.
pub(crate) fn phase_window(
    phase: &[f64],
    anchor: usize,
    centre: f64,
    periods: f64,
) -> (usize, Vec<f64>, bool) {
    let half = std::f64::consts::PI * periods;
    let inside = |n: usize| (phase[n] - centre).abs() < half;
    let mut lo = anchor;
    while lo > 0 && phase[lo - 1] > centre - half {
        lo -= 1;
    }
    let mut hi = anchor;
    while hi + 1 < phase.len() && phase[hi + 1] < centre + half {
        hi += 1;
    }
    let truncated = (lo == 0 && phase[0] > centre - half)
        || (hi + 1 == phase.len() && phase[hi] < centre + half);
    let weights = (lo..=hi)
        .map(|n| {
            if inside(n) {
                let c = ((phase[n] - centre) / (2.0 * periods)).cos();
                c * c
            } else {
                0.0
            }
        })
        .collect();
    (lo, weights, truncated)
}

/// Normalized inner products of `x` with `e^{−jk(φ(n) − reference)}` under
/// the given window, for `k = 1..=count`.
pub(crate) fn demodulate(
    x: &[f64],
    phase: &[f64],
    start: usize,
    weights: &[f64],
    reference: f64,
    count: usize,
) -> Vec<Complex<f64>> {
    let total: f64 = weights.iter().sum();
    let mut acc = vec![Complex::new(0.0, 0.0); count];
    if total <= 0.0 || count == 0 {
        return acc;
    }
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let n = start + i;
        let v = w * x[n];
        if v == 0.0 {
            continue;
        }
        let base = Complex::from_polar(1.0, -(phase[n] - reference));
        let mut z = base;
        for a in acc.iter_mut() {
            *a += z * v;
            z *= base;
        }
    }
    let scale = 2.0 / total;
    acc.iter_mut().for_each(|a| *a *= scale);
    acc
}

/// Adaptive DFT over the whole signal, using `window_periods` local periods
/// of Hann window at pitch-synchronous instants.
pub fn adft_spectrogram<T: Real>(
    signal: &Signal<T>,
    track: &F0Track<T>,
    window_periods: f64,
) -> Result<HarmonicSpectrogram<T>> {
    if track.len() < signal.len() {
        return Err(Error::ShapeMismatch(format!(
            "F0 track covers {} samples, signal has {}",
            track.len(),
            signal.len()
        )));
    }
    if track.sample_rate() != signal.sample_rate() {
        return Err(Error::ShapeMismatch("F0 track and signal sample rates differ".into()));
    }
    if !(window_periods > 0.0) {
        return Err(Error::InvalidParameter("window_periods must be positive".into()));
    }
    let x: Vec<f64> = signal.samples().iter().map(|s| s.as_f64()).collect();
    let mut phase = track.phase();
    phase.truncate(x.len());
    let nyquist = f64::from(signal.sample_rate()) / 2.0;
    let frames = analysis_instants(&phase)
        .into_iter()
        .map(|t| {
            let f0 = track.at(t).as_f64();
            let (start, weights, truncated) = phase_window(&phase, t, phase[t], window_periods);
            let coeffs = demodulate(&x, &phase, start, &weights, phase[t], harmonic_count(f0, nyquist));
            HarmonicFrame {
                time: t,
                f0: T::lit(f0),
                coefficients: coeffs
                    .into_iter()
                    .map(|c| Complex::new(T::lit(c.re), T::lit(c.im)))
                    .collect(),
                truncated,
            }
        })
        .collect();
    Ok(HarmonicSpectrogram {
        frames,
        sample_rate: signal.sample_rate(),
        n_samples: signal.len(),
    })
}

/// Mean over frames of the total harmonic power `Σ_k |a_k|²`.
pub fn captured_energy<T: Real>(hspec: &HarmonicSpectrogram<T>) -> f64 {
    if hspec.frames.is_empty() {
        return 0.0;
    }
    let total: f64 = hspec
        .frames
        .iter()
        .map(|f| f.coefficients.iter().map(|c| c.norm_sqr().as_f64()).sum::<f64>())
        .sum();
    total / hspec.frames.len() as f64
}
