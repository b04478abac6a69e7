use super::transform::{adft_spectrogram, analysis_instants, captured_energy, demodulate, harmonic_count, phase_window};
use super::{condition_track, interpolate_knots, F0Track, DEFAULT_SLEW_HZ_PER_MS, DEFAULT_WINDOW_PERIODS};
use crate::error::Result;
use crate::scalar::Real;
use crate::signal::Signal;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Stop once the largest per-frame correction is below this (Hz).
    pub tol: f64,
    pub window_periods: f64,
    /// Harmonics above this index do not vote; their phase slope aliases
    /// first when the track is far off.
    pub max_harmonic: usize,
    pub slew_hz_per_ms: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 8,
            tol: 0.1,
            window_periods: DEFAULT_WINDOW_PERIODS,
            max_harmonic: 8,
            slew_hz_per_ms: DEFAULT_SLEW_HZ_PER_MS,
        }
    }
}

/// What happened during refinement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineTrace {
    /// Accepted update steps.
    pub accepted: usize,
    /// Largest per-frame correction proposed at each iteration (Hz).
    pub max_corrections: Vec<f64>,
    /// Captured harmonic energy of the initial and each accepted track.
    pub energies: Vec<f64>,
    pub converged: bool,
    pub reverted: bool,
}

/// Iteratively corrects `track` from the phase slope of each demodulated
/// harmonic. See [`refine_f0_traced`].
pub fn refine_f0<T: Real>(
    signal: &Signal<T>,
    track: &F0Track<T>,
    config: &RefineConfig,
) -> Result<F0Track<T>> {
    refine_f0_traced(signal, track, config).map(|(t, _)| t)
}

/// Each iteration compares, for every analysis instant and harmonic `k`, the
/// phase of the harmonic demodulated over the half-period before and after
/// the instant. The phase advance gives the harmonic's frequency mismatch
/// `Δf_k`; the instant's F0 moves by the power-weighted mean of `Δf_k / k`.
/// An update that lowers the captured harmonic energy is discarded and
/// refinement stops.
pub fn refine_f0_traced<T: Real>(
    signal: &Signal<T>,
    track: &F0Track<T>,
    config: &RefineConfig,
) -> Result<(F0Track<T>, RefineTrace)> {
    let fs = f64::from(signal.sample_rate());
    let x: Vec<f64> = signal.samples().iter().map(|s| s.as_f64()).collect();
    let range = (track.voiced_range().0.as_f64(), track.voiced_range().1.as_f64());
    let mut current = track.clone();
    let mut energy = captured_energy(&adft_spectrogram(signal, &current, config.window_periods)?);
    let mut trace = RefineTrace {
        energies: vec![energy],
        ..RefineTrace::default()
    };
    for _ in 0..config.max_iters {
        let knots = corrections(&x, &current, fs, config);
        let worst = knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max);
        trace.max_corrections.push(worst);
        if knots.is_empty() || worst < config.tol {
            trace.converged = true;
            break;
        }
        let delta = interpolate_knots(&knots, current.len());
        let mut next: Vec<f64> = current
            .values()
            .iter()
            .zip(&delta)
            .map(|(f, d)| f.as_f64() + d)
            .collect();
        condition_track(&mut next, range, config.slew_hz_per_ms, fs);
        let candidate = F0Track::new(
            next.into_iter().map(T::lit).collect(),
            current.sample_rate(),
            current.voiced_range(),
        )?;
        let e = captured_energy(&adft_spectrogram(signal, &candidate, config.window_periods)?);
        if e < energy {
            trace.reverted = true;
            break;
        }
        energy = e;
        current = candidate;
        trace.accepted += 1;
        trace.energies.push(e);
    }
    Ok((current, trace))
}

/// Per-instant F0 corrections as `(sample, Hz)` knots. Instants whose
/// sub-windows are cut by the signal edges, or that carry no harmonic power,
/// contribute no knot.
fn corrections<T: Real>(x: &[f64], track: &F0Track<T>, fs: f64, config: &RefineConfig) -> Vec<(f64, f64)> {
    let mut phase = track.phase();
    phase.truncate(x.len());
    let nyquist = fs / 2.0;
    let sub_periods = (config.window_periods - 1.0).max(1.0);
    let centroid = |start: usize, w: &[f64]| {
        let total: f64 = w.iter().sum();
        w.iter()
            .enumerate()
            .map(|(i, &v)| v * (start + i) as f64)
            .sum::<f64>()
            / total
    };
    let mut knots = Vec::new();
    for t in analysis_instants(&phase) {
        let f0 = track.at(t).as_f64();
        let count = harmonic_count(f0, nyquist).min(config.max_harmonic);
        if count == 0 {
            continue;
        }
        let reference = phase[t];
        let (s0, w0, cut0) = phase_window(&phase, t, reference - std::f64::consts::PI, sub_periods);
        let (s1, w1, cut1) = phase_window(&phase, t, reference + std::f64::consts::PI, sub_periods);
        if cut0 || cut1 {
            continue;
        }
        let before = demodulate(x, &phase, s0, &w0, reference, count);
        let after = demodulate(x, &phase, s1, &w1, reference, count);
        let dt = centroid(s1, &w1) - centroid(s0, &w0);
        if !(dt > 0.0) {
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, (b, a)) in before.iter().zip(&after).enumerate() {
            let d = a * b.conj();
            let weight = d.norm();
            if weight == 0.0 {
                continue;
            }
            let mismatch = d.arg() * fs / (TWO_PI * dt);
            num += weight * mismatch / (k + 1) as f64;
            den += weight;
        }
        if den > 0.0 {
            knots.push((t as f64, num / den));
        }
    }
    knots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adft::halve_f0;
    use std::f64::consts::PI;

    fn harmonic_signal(f0: f64, n: usize) -> Signal<f64> {
        let amps = [1.0, 0.5, 0.25, 0.125, 0.0625];
        let x = (0..n)
            .map(|i| {
                let p = 2.0 * PI * f0 * i as f64 / 48000.0;
                amps.iter()
                    .enumerate()
                    .map(|(k, a)| a * ((k + 1) as f64 * p).sin())
                    .sum()
            })
            .collect();
        Signal::new(x, 48000).unwrap()
    }

    #[test]
    fn exact_track_is_a_fixed_point() {
        let s = harmonic_signal(440.0, 9600);
        let track = F0Track::constant(440.0, s.len(), 48000, (80.0, 2000.0)).unwrap();
        let (refined, trace) = refine_f0_traced(&s, &track, &RefineConfig::default()).unwrap();
        assert!(trace.converged);
        for (a, b) in refined.values().iter().zip(track.values()) {
            assert!((a - b).abs() <= 0.1);
        }
    }

    #[test]
    fn biased_track_is_pulled_back() {
        let s = harmonic_signal(440.0, 9600);
        let biased = F0Track::constant(440.0 * 1.05, s.len(), 48000, (80.0, 2000.0)).unwrap();
        let (refined, trace) = refine_f0_traced(&s, &biased, &RefineConfig::default()).unwrap();
        let worst = refined.values().iter().map(|f| (f - 440.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1.0, "worst {worst}, trace {trace:?}");
        assert!(trace.energies.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn halved_track_refines_towards_half_f0() {
        let s = harmonic_signal(600.0, 9600);
        let biased = halve_f0(&F0Track::constant(600.0 * 0.97, s.len(), 48000, (80.0, 2000.0)).unwrap());
        let refined = refine_f0(&s, &biased, &RefineConfig::default()).unwrap();
        let worst = refined.values().iter().map(|f| (f - 300.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1.0, "worst {worst}");
        assert_eq!(refined.voiced_range(), (40.0, 1000.0));
    }

    #[test]
    fn second_pass_is_idempotent() {
        let s = harmonic_signal(523.0, 9600);
        let start = F0Track::constant(510.0, s.len(), 48000, (80.0, 2000.0)).unwrap();
        let cfg = RefineConfig::default();
        let once = refine_f0(&s, &start, &cfg).unwrap();
        let twice = refine_f0(&s, &once, &cfg).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() <= cfg.tol);
        }
    }
}
