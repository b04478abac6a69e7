//! Whole-clip linear prediction (autocorrelation method).
//!
//! The predictor convention is `x̂(n) = Σ a[k]·x(n−k)`, so the inverse
//! filter is `A(z) = 1 − Σ a[k]·z^{−k}` and the residual is `x(n) − x̂(n)`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Signal;

pub const DEFAULT_ORDER: usize = 10;

/// Tolerance on reflection-coefficient magnitude when checking stability.
pub const STABILITY_TOLERANCE: f64 = 1e-9;

/// All-pole model fitted to a call.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel<T> {
    pub coefficients: Vec<T>,
    /// Square root of the final prediction error power.
    pub gain: T,
}

impl<T: Real> LpcModel<T> {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Identity inverse filter: residual equals input.
    pub fn passthrough(order: usize, gain: T) -> Self {
        Self {
            coefficients: vec![T::zero(); order],
            gain,
        }
    }

    /// Reflection coefficients via the step-down recursion. The model is
    /// stable iff all of them lie strictly inside (−1, 1).
    pub fn reflection_coefficients(&self) -> Vec<T> {
        let mut a = self.coefficients.clone();
        let mut ks = vec![T::zero(); a.len()];
        for m in (1..=a.len()).rev() {
            let k = a[m - 1];
            ks[m - 1] = k;
            let denom = T::one() - k * k;
            if denom <= T::zero() {
                break;
            }
            let prev: Vec<T> = (0..m - 1).map(|i| (a[i] + k * a[m - 2 - i]) / denom).collect();
            a.truncate(m - 1);
            a.copy_from_slice(&prev);
        }
        ks
    }

    pub fn check_stable(&self) -> Result<()> {
        for (i, k) in self.reflection_coefficients().iter().enumerate() {
            let mag = k.abs().as_f64();
            if !mag.is_finite() || mag >= 1.0 - STABILITY_TOLERANCE {
                return Err(Error::UnstableModel {
                    index: i + 1,
                    magnitude: mag,
                });
            }
        }
        Ok(())
    }
}

/// `r[k] = Σ_n x(n)·x(n+k)` for `k = 0..=max_lag`.
pub fn autocorrelate<T: Real>(samples: &[T], max_lag: usize) -> Result<Vec<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidSignal("cannot autocorrelate an empty signal".into()));
    }
    if max_lag >= samples.len() {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            got: samples.len(),
        });
    }
    Ok((0..=max_lag)
        .map(|k| {
            samples[..samples.len() - k]
                .iter()
                .zip(&samples[k..])
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect())
}

/// Output of the Levinson-Durbin recursion.
#[derive(Debug, Clone)]
pub struct Levinson<T> {
    pub coefficients: Vec<T>,
    pub reflection: Vec<T>,
    /// Prediction error power after each order, `errors[0] = r[0]`.
    pub errors: Vec<T>,
}

/// Solves the Toeplitz normal equations `R a = r[1..]` by Levinson-Durbin.
pub fn levinson_durbin<T: Real>(r: &[T], order: usize) -> Result<Levinson<T>> {
    if r.len() <= order {
        return Err(Error::InvalidParameter(format!(
            "need {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > T::zero()) {
        return Err(Error::DegenerateAutocorrelation);
    }
    let mut a = vec![T::zero(); order];
    let mut reflection = Vec::with_capacity(order);
    let mut errors = Vec::with_capacity(order + 1);
    let mut err = r[0];
    errors.push(err);
    for m in 0..order {
        let mut acc = r[m + 1];
        for i in 0..m {
            acc -= a[i] * r[m - i];
        }
        let k = acc / err;
        if !k.is_finite() {
            return Err(Error::NonFinite("Levinson-Durbin reflection coefficient"));
        }
        let prev = a[..m].to_vec();
        for i in 0..m {
            a[i] = prev[i] - k * prev[m - 1 - i];
        }
        a[m] = k;
        err *= T::one() - k * k;
        // Rounding can push a perfectly predictable signal slightly negative.
        if err < T::zero() {
            err = T::zero();
        }
        reflection.push(k);
        errors.push(err);
    }
    if a.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("LPC coefficients"));
    }
    Ok(Levinson {
        coefficients: a,
        reflection,
        errors,
    })
}

/// Fits an all-pole model of the given order to the whole clip.
pub fn fit_lpc<T: Real>(signal: &Signal<T>, order: usize) -> Result<LpcModel<T>> {
    if signal.len() <= order {
        return Err(Error::TooShort {
            needed: order + 1,
            got: signal.len(),
        });
    }
    let r = autocorrelate(signal.samples(), order)?;
    if r[0] == T::zero() {
        return Err(Error::DegenerateAutocorrelation);
    }
    let lev = levinson_durbin(&r, order)?;
    let gain = lev.errors[order].sqrt();
    if !gain.is_finite() {
        return Err(Error::NonFinite("LPC gain"));
    }
    Ok(LpcModel {
        coefficients: lev.coefficients,
        gain,
    })
}

/// Prediction error `e(n) = x(n) − Σ a[k]·x(n−k)` with zero initial state.
pub fn residual<T: Real>(signal: &Signal<T>, model: &LpcModel<T>) -> Signal<T> {
    let x = signal.samples();
    let a = &model.coefficients;
    let e = (0..x.len())
        .map(|n| {
            let pred: T = a
                .iter()
                .enumerate()
                .take(n)
                .map(|(k, &c)| c * x[n - k - 1])
                .sum();
            x[n] - pred
        })
        .collect();
    signal.map_samples(e)
}

/// All-pole synthesis `x(n) = e(n) + Σ a[k]·x(n−k)`, inverse of [`residual`].
pub fn synthesize<T: Real>(excitation: &Signal<T>, model: &LpcModel<T>) -> Signal<T> {
    let e = excitation.samples();
    let a = &model.coefficients;
    let mut x: Vec<T> = Vec::with_capacity(e.len());
    for n in 0..e.len() {
        let pred: T = a
            .iter()
            .enumerate()
            .take(n)
            .map(|(k, &c)| c * x[n - k - 1])
            .sum();
        x.push(e[n] + pred);
    }
    excitation.map_samples(x)
}

/// `gain / |A(e^{jω})|` at `n_bins` frequencies spaced uniformly over
/// `[0, π]` (DC to Nyquist inclusive).
pub fn lpc_spectrum<T: Real>(model: &LpcModel<T>, n_bins: usize) -> Result<Vec<T>> {
    if n_bins < 2 {
        return Err(Error::InvalidParameter("lpc_spectrum needs n_bins >= 2".into()));
    }
    model.check_stable()?;
    let step = T::PI() / T::from_usize_lossy(n_bins - 1);
    let out: Vec<T> = (0..n_bins)
        .map(|i| {
            let w = step * T::from_usize_lossy(i);
            let mut a = Complex::new(T::one(), T::zero());
            for (k, &c) in model.coefficients.iter().enumerate() {
                let phase = w * T::from_usize_lossy(k + 1);
                a -= Complex::new(phase.cos(), -phase.sin()) * c;
            }
            model.gain / a.norm()
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LPC spectrum"));
    }
    Ok(out)
}
