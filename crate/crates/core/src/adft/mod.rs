//! Adaptive DFT: a Fourier-like analysis whose basis frequencies follow a
//! time-varying fundamental.
//!
//! The pipeline for one call is
//! [`estimate_f0_track`] → [`halve_f0`] → optionally [`refine_f0`] →
//! [`adft_spectrogram`] → [`regrid`] onto the call's STFT grid.
//!
//! Phase is accumulated in `f64` regardless of the scalar type: a half-second
//! call at 2 kHz accumulates several thousand radians.

mod f0;
mod refine;
mod regrid;
mod transform;

pub use f0::{estimate_f0_track, F0Config};
pub use refine::{refine_f0, refine_f0_traced, RefineConfig, RefineTrace};
pub use regrid::{harmonic_concentration, regrid};
pub use transform::{adft_spectrogram, captured_energy, HarmonicFrame, HarmonicSpectrogram};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_F_MIN: f64 = 80.0;
pub const DEFAULT_F_MAX: f64 = 2000.0;
pub const DEFAULT_WINDOW_PERIODS: f64 = 3.0;
pub const DEFAULT_SLEW_HZ_PER_MS: f64 = 20.0;

/// Per-sample fundamental frequency contour in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track<T> {
    f0: Vec<T>,
    sample_rate: u32,
    voiced_range: (T, T),
}

impl<T: Real> F0Track<T> {
    /// Validates that every value is finite and inside `voiced_range`.
    pub fn new(f0: Vec<T>, sample_rate: u32, voiced_range: (T, T)) -> Result<Self> {
        let (lo, hi) = voiced_range;
        if !(lo > T::zero() && lo <= hi) {
            return Err(Error::InvalidParameter(format!(
                "invalid voiced range ({lo}, {hi})"
            )));
        }
        if sample_rate == 0 || f0.is_empty() {
            return Err(Error::InvalidParameter("empty F0 track".into()));
        }
        // Allow for rounding in the caller's arithmetic.
        let slack = hi * T::lit(1e-9);
        if let Some(i) = f0
            .iter()
            .position(|&v| !v.is_finite() || v < lo - slack || v > hi + slack)
        {
            return Err(Error::InvalidParameter(format!(
                "F0 value {} at sample {i} outside [{lo}, {hi}]",
                f0[i]
            )));
        }
        Ok(Self {
            f0,
            sample_rate,
            voiced_range,
        })
    }

    /// Constant contour, convenient for tests and synthetic analyses.
    pub fn constant(value: T, len: usize, sample_rate: u32, voiced_range: (T, T)) -> Result<Self> {
        Self::new(vec![value; len], sample_rate, voiced_range)
    }

    pub fn values(&self) -> &[T] {
        &self.f0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn voiced_range(&self) -> (T, T) {
        self.voiced_range
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn at(&self, n: usize) -> T {
        self.f0[n.min(self.f0.len() - 1)]
    }

    /// Cumulative phase `φ(n) = 2π Σ_{m≤n} f0(m)/fs`.
    pub(crate) fn phase(&self) -> Vec<f64> {
        let step = 2.0 * std::f64::consts::PI / f64::from(self.sample_rate);
        let mut acc = 0.0;
        self.f0
            .iter()
            .map(|f| {
                acc += f.as_f64() * step;
                acc
            })
            .collect()
    }
}

/// Halves every F0 value and the voiced range, so the adaptive basis also
/// resolves sub- and inter-harmonics.
pub fn halve_f0<T: Real>(track: &F0Track<T>) -> F0Track<T> {
    let half = T::lit(0.5);
    F0Track {
        f0: track.f0.iter().map(|&v| v * half).collect(),
        sample_rate: track.sample_rate,
        voiced_range: (track.voiced_range.0 * half, track.voiced_range.1 * half),
    }
}

/// Clamps to `range` and limits the per-sample change to `slew_hz_per_ms`,
/// sweeping forwards then backwards so the limit is symmetric in time.
pub(crate) fn condition_track(values: &mut [f64], range: (f64, f64), slew_hz_per_ms: f64, fs: f64) {
    let step = slew_hz_per_ms * 1000.0 / fs;
    for v in values.iter_mut() {
        *v = v.clamp(range.0, range.1);
    }
    for i in 1..values.len() {
        let prev = values[i - 1];
        values[i] = values[i].clamp(prev - step, prev + step);
    }
    for i in (0..values.len().saturating_sub(1)).rev() {
        let next = values[i + 1];
        values[i] = values[i].clamp(next - step, next + step);
    }
}

/// Piecewise-linear interpolation of `(position, value)` knots (sorted by
/// position) onto `0..len`, holding the end values.
pub(crate) fn interpolate_knots(knots: &[(f64, f64)], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut seg = 0;
    for n in 0..len {
        let t = n as f64;
        if t <= knots[0].0 {
            out.push(knots[0].1);
            continue;
        }
        if t >= knots[knots.len() - 1].0 {
            out.push(knots[knots.len() - 1].1);
            continue;
        }
        while knots[seg + 1].0 < t {
            seg += 1;
        }
        let (t0, v0) = knots[seg];
        let (t1, v1) = knots[seg + 1];
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        out.push(v0 + w * (v1 - v0));
    }
    out
}
