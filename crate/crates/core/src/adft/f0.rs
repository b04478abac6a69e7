use num_complex::Complex;
use rustfft::FftPlanner;

use super::{condition_track, interpolate_knots, F0Track, DEFAULT_F_MAX, DEFAULT_F_MIN, DEFAULT_SLEW_HZ_PER_MS};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Signal;

/// Settings for the autocorrelation F0 tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Config {
    pub f_min: f64,
    pub f_max: f64,
    pub hop_ms: f64,
    /// Minimum normalized cross-correlation for a lag to count as a candidate.
    pub voicing_threshold: f64,
    /// Frames quieter than this (dB re the loudest frame) are unvoiced.
    pub silence_db: f64,
    /// Strength penalty per octave of lag above the shortest admissible lag.
    pub octave_cost: f64,
    /// Path cost per octave of F0 change between consecutive voiced frames.
    pub jump_cost: f64,
    pub max_candidates: usize,
    pub slew_hz_per_ms: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            f_min: DEFAULT_F_MIN,
            f_max: DEFAULT_F_MAX,
            hop_ms: 5.0,
            voicing_threshold: 0.4,
            silence_db: -40.0,
            octave_cost: 0.05,
            jump_cost: 0.5,
            max_candidates: 5,
            slew_hz_per_ms: DEFAULT_SLEW_HZ_PER_MS,
        }
    }
}

impl F0Config {
    pub fn with_range(f_min: f64, f_max: f64) -> Self {
        Self {
            f_min,
            f_max,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    lag: f64,
    strength: f64,
}

/// Tracks F0 with normalized cross-correlation candidates per frame, a
/// minimum-cost path through the candidates (penalizing octave jumps), and
/// linear interpolation to one value per sample.
pub fn estimate_f0_track<T: Real>(signal: &Signal<T>, config: &F0Config) -> Result<F0Track<T>> {
    if !(config.f_min > 0.0 && config.f_min < config.f_max) {
        return Err(Error::InvalidParameter(format!(
            "F0 range ({}, {}) is invalid",
            config.f_min, config.f_max
        )));
    }
    let fs = f64::from(signal.sample_rate());
    if config.f_max >= fs / 2.0 {
        return Err(Error::InvalidParameter("f_max must be below Nyquist".into()));
    }
    let x: Vec<f64> = signal.samples().iter().map(|s| s.as_f64()).collect();
    let lag_min = ((fs / config.f_max).floor() as usize).max(2);
    let lag_max = (fs / config.f_min).ceil() as usize;
    let window = (fs / config.f_min).round() as usize;
    let span = window + lag_max + 1;
    if x.len() < span {
        return Err(Error::TooShort {
            needed: span,
            got: x.len(),
        });
    }
    let hop = ((config.hop_ms * 1e-3 * fs).round() as usize).max(1);

    let mut squares = Vec::with_capacity(x.len() + 1);
    squares.push(0.0);
    for v in &x {
        squares.push(squares.last().unwrap() + v * v);
    }
    let energy = |a: usize, b: usize| (squares[b] - squares[a]).max(0.0);

    // Tail frames keep only the lags that still fit inside the signal.
    let starts: Vec<usize> = (0..)
        .map(|i| i * hop)
        .take_while(|s| s + window + lag_min + 2 <= x.len())
        .collect();
    let loudest = starts
        .iter()
        .map(|&s| energy(s, s + window))
        .fold(0.0, f64::max);
    if loudest == 0.0 {
        return Err(Error::Unvoiced);
    }
    let silence = loudest * 10f64.powf(config.silence_db / 10.0);

    let n_fft = span.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let zero = Complex::new(0.0, 0.0);

    // (frame start, candidates) for voiced frames only.
    let mut frames: Vec<(usize, Vec<Candidate>)> = Vec::new();
    for &s in &starts {
        let e0 = energy(s, s + window);
        if e0 <= silence {
            continue;
        }
        let mut a: Vec<Complex<f64>> = x[s..s + window].iter().map(|&v| Complex::new(v, 0.0)).collect();
        a.resize(n_fft, zero);
        let lag_hi = lag_max.min(x.len() - s - window - 1);
        let mut b: Vec<Complex<f64>> = x[s..s + window + lag_hi + 1]
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        b.resize(n_fft, zero);
        fwd.process(&mut a);
        fwd.process(&mut b);
        let mut c: Vec<Complex<f64>> = a.iter().zip(&b).map(|(p, q)| p.conj() * q).collect();
        inv.process(&mut c);
        let scale = 1.0 / n_fft as f64;
        let nccf = |lag: usize| {
            let el = energy(s + lag, s + lag + window);
            let d = (e0 * el).sqrt();
            if d > 0.0 {
                c[lag].re * scale / d
            } else {
                0.0
            }
        };
        let values: Vec<f64> = (lag_min - 1..=lag_hi).map(nccf).collect();
        let mut cands = Vec::new();
        for i in 1..values.len() - 1 {
            let (l, m, r) = (values[i - 1], values[i], values[i + 1]);
            if m < config.voicing_threshold || m < l || m < r {
                continue;
            }
            let denom = l - 2.0 * m + r;
            let delta = if denom < 0.0 {
                (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            let peak = m - 0.25 * (l - r) * delta;
            let lag = (lag_min - 1 + i) as f64 + delta;
            cands.push(Candidate {
                lag,
                strength: peak - config.octave_cost * (lag / lag_min as f64).log2(),
            });
        }
        if cands.is_empty() {
            continue;
        }
        cands.sort_by(|p, q| q.strength.total_cmp(&p.strength));
        cands.truncate(config.max_candidates.max(1));
        frames.push((s, cands));
    }
    if frames.is_empty() {
        return Err(Error::Unvoiced);
    }

    // Minimum-cost path.
    let mut cost: Vec<f64> = frames[0].1.iter().map(|c| -c.strength).collect();
    let mut back: Vec<Vec<usize>> = vec![vec![0; frames[0].1.len()]];
    for i in 1..frames.len() {
        let (prev, cur) = (&frames[i - 1].1, &frames[i].1);
        let mut next_cost = Vec::with_capacity(cur.len());
        let mut next_back = Vec::with_capacity(cur.len());
        for c in cur {
            let (best, arg) = prev
                .iter()
                .enumerate()
                .map(|(j, p)| (cost[j] + config.jump_cost * (p.lag / c.lag).log2().abs(), j))
                .fold((f64::INFINITY, 0), |acc, v| if v.0 < acc.0 { v } else { acc });
            next_cost.push(best - c.strength);
            next_back.push(arg);
        }
        cost = next_cost;
        back.push(next_back);
    }
    let mut idx = cost
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, &c)| if c < acc.1 { (j, c) } else { acc })
        .0;
    let mut knots = vec![(0.0, 0.0); frames.len()];
    for i in (0..frames.len()).rev() {
        let lag = frames[i].1[idx].lag;
        // The correlation measures the period midway between the two
        // compared segments.
        knots[i] = ((frames[i].0 + window / 2) as f64 + lag / 2.0, fs / lag);
        idx = back[i][idx];
    }
    for i in 1..knots.len() {
        knots[i].0 = knots[i].0.max(knots[i - 1].0);
    }

    let mut f0 = interpolate_knots(&knots, x.len());
    condition_track(&mut f0, (config.f_min, config.f_max), config.slew_hz_per_ms, fs);
    F0Track::new(
        f0.into_iter().map(T::lit).collect(),
        signal.sample_rate(),
        (T::lit(config.f_min), T::lit(config.f_max)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sig(x: Vec<f64>) -> Signal<f64> {
        Signal::new(x, 48000).unwrap()
    }

    #[test]
    fn pure_sine_500_hz() {
        let x: Vec<f64> = (0..9600).map(|i| (2.0 * PI * 500.0 * i as f64 / 48000.0).sin()).collect();
        let t = estimate_f0_track(&sig(x), &F0Config::default()).unwrap();
        assert!(t.values().iter().all(|&f| (f - 500.0).abs() < 2.0));
    }

    #[test]
    fn linear_chirp_is_tracked() {
        let fs = 48000.0;
        let n = (0.3 * fs) as usize;
        let f = |i: usize| 1000.0 - 300.0 * i as f64 / n as f64;
        let mut phase = 0.0;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                phase += 2.0 * PI * f(i) / fs;
                // A few harmonics make octave errors possible.
                phase.sin() + 0.5 * (2.0 * phase).sin() + 0.3 * (3.0 * phase).sin()
            })
            .collect();
        let t = estimate_f0_track(&sig(x), &F0Config::default()).unwrap();
        let worst = (0..n)
            .map(|i| (t.values()[i] - f(i)).abs() / f(i))
            .fold(0.0, f64::max);
        assert!(worst < 0.03, "worst relative error {worst}");
    }

    #[test]
    fn default_range() {
        let c = F0Config::default();
        assert_eq!((c.f_min, c.f_max), (80.0, 2000.0));
    }

    #[test]
    fn silence_and_noise_are_unvoiced() {
        assert!(matches!(
            estimate_f0_track(&sig(vec![0.0; 4800]), &F0Config::default()),
            Err(Error::Unvoiced)
        ));
        assert!(matches!(
            estimate_f0_track(&sig(vec![0.1; 100]), &F0Config::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn output_respects_range_and_slew() {
        let x: Vec<f64> = (0..9600)
            .map(|i| {
                let f = if i < 4800 { 300.0 } else { 1200.0 };
                (2.0 * PI * f * i as f64 / 48000.0).sin()
            })
            .collect();
        let t = estimate_f0_track(&sig(x), &F0Config::default()).unwrap();
        let step = 20.0 * 1000.0 / 48000.0;
        assert!(t.values().windows(2).all(|w| (w[1] - w[0]).abs() <= step + 1e-9));
        assert!(t.values().iter().all(|&f| (80.0..=2000.0).contains(&f)));
    }
}
