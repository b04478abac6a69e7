//! Synthetic labelled call corpora with known sources of individual identity.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{align_onset, write_labels, write_wav, LabelRow, LabelledCall, Signal};

pub const DEFAULT_SAMPLE_RATE: u32 = 48000;
pub const PEAK: f64 = 0.9;
const ATTACK_S: f64 = 0.010;
const RELEASE_S: f64 = 0.030;

/// Peaking resonance applied to every call of an individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub gain_db: f64,
}

/// Random peaking filters drawn afresh for every call (microphone, distance,
/// room), independent of the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFilter {
    pub n_peaks: usize,
    pub max_gain_db: f64,
    pub min_hz: f64,
    pub max_hz: f64,
    /// Peak bandwidth as a fraction of its centre frequency.
    pub relative_bandwidth: f64,
}

impl Default for ChannelFilter {
    fn default() -> Self {
        Self {
            n_peaks: 4,
            max_gain_db: 15.0,
            min_hz: 300.0,
            max_hz: 12000.0,
            relative_bandwidth: 0.5,
        }
    }
}

/// Call-to-call variation within one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallVariation {
    /// Relative standard deviation of each f0 endpoint.
    pub f0_jitter: f64,
    /// Standard deviation of each harmonic's level, dB.
    pub amp_jitter_db: f64,
    /// Relative standard deviation of formant centres.
    pub formant_jitter: f64,
    pub channel: Option<ChannelFilter>,
    /// Silence before the call starts, drawn uniformly up to this many seconds.
    pub max_lead_s: f64,
    /// Randomize harmonic starting phases.
    pub random_phase: bool,
}

impl CallVariation {
    /// No variation at all: every call of a profile is identical apart from
    /// its duration draw and noise.
    pub fn none() -> Self {
        Self {
            f0_jitter: 0.0,
            amp_jitter_db: 0.0,
            formant_jitter: 0.0,
            channel: None,
            max_lead_s: 0.0,
            random_phase: false,
        }
    }
}

impl Default for CallVariation {
    fn default() -> Self {
        Self {
            f0_jitter: 0.015,
            amp_jitter_db: 1.5,
            formant_jitter: 0.03,
            channel: None,
            max_lead_s: 0.02,
            random_phase: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualProfile {
    pub f0_start: f64,
    pub f0_end: f64,
    /// Linear amplitude of harmonics `1..=len`.
    pub harmonic_amps: Vec<f64>,
    pub formants: Vec<Formant>,
    pub duration_mean: f64,
    pub duration_sd: f64,
    /// Frequency ratio of a second, weaker harmonic stack.
    pub two_voice: Option<f64>,
    /// Gaussian noise level relative to a unit-amplitude harmonic; `None` is
    /// noiseless.
    pub noise_floor_db: Option<f64>,
    pub variation: CallVariation,
}

pub const TWO_VOICE_RATIO: f64 = 1.0 + std::f64::consts::SQRT_2 / 10.0;
const TWO_VOICE_LEVEL: f64 = 0.5;

impl IndividualProfile {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = f64::from(sample_rate) / 2.0;
        for f in [self.f0_start, self.f0_end] {
            if !(f > 80.0 && f < 2000.0) {
                return Err(Error::InvalidParameter(format!("f0 {f} Hz outside (80, 2000)")));
            }
        }
        if self.harmonic_amps.is_empty() || self.harmonic_amps.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidParameter("harmonic amplitudes must be finite and non-negative".into()));
        }
        for fm in &self.formants {
            if !(fm.center_hz > 0.0 && fm.center_hz < nyquist && fm.bandwidth_hz > 0.0) {
                return Err(Error::InvalidParameter(format!("formant at {} Hz is invalid", fm.center_hz)));
            }
        }
        if !(self.duration_mean > 0.0 && self.duration_sd >= 0.0) {
            return Err(Error::InvalidParameter("durations must be positive".into()));
        }
        if let Some(r) = self.two_voice {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter("two-voice ratio must be positive".into()));
            }
        }
        Ok(())
    }
}

/// RBJ peaking equalizer section.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn peaking(center_hz: f64, bandwidth_hz: f64, gain_db: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * center_hz / fs;
        let q = center_hz / bandwidth_hz;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let a0 = 1.0 + alpha / a;
        Self {
            b: [(1.0 + alpha * a) / a0, -2.0 * cos / a0, (1.0 - alpha * a) / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha / a) / a0],
        }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Renders one call of `profile`. All randomness (duration, jitter, channel,
/// phases, noise) comes from `seed`.
pub fn generate_call(profile: &IndividualProfile, seed: u64, sample_rate: u32) -> Result<Signal<f64>> {
    profile.validate(sample_rate)?;
    let fs = f64::from(sample_rate);
    let nyquist = fs / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = &profile.variation;

    let d = profile.duration_mean + profile.duration_sd * normal(&mut rng);
    let spread = 3.0 * profile.duration_sd;
    let duration = d.clamp(
        (profile.duration_mean - spread).max(ATTACK_S + RELEASE_S),
        profile.duration_mean + spread,
    );
    let n = (duration * fs).round() as usize;
    let lead = if var.max_lead_s > 0.0 {
        (rng.random::<f64>() * var.max_lead_s * fs).round() as usize
    } else {
        0
    };

    let f0_start = profile.f0_start * (1.0 + var.f0_jitter * normal(&mut rng));
    let f0_end = profile.f0_end * (1.0 + var.f0_jitter * normal(&mut rng));
    let amps: Vec<f64> = profile
        .harmonic_amps
        .iter()
        .map(|a| a * 10f64.powf(var.amp_jitter_db * normal(&mut rng) / 20.0))
        .collect();
    let phases: Vec<f64> = amps
        .iter()
        .map(|_| if var.random_phase { 2.0 * PI * rng.random::<f64>() } else { 0.0 })
        .collect();

    let mut stacks = vec![(1.0, 1.0)];
    if let Some(r) = profile.two_voice {
        stacks.push((r, TWO_VOICE_LEVEL));
    }
    let mut x = vec![0.0; n];
    for &(ratio, level) in &stacks {
        let mut phase = 0.0f64;
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / n as f64;
            let f0 = ratio * (f0_start + (f0_end - f0_start) * t);
            let mut acc = 0.0;
            for (k, (&a, &p0)) in amps.iter().zip(&phases).enumerate() {
                let h = (k + 1) as f64;
                if h * f0 >= nyquist {
                    break;
                }
                acc += a * (h * phase + p0).sin();
            }
            *v += level * acc;
            phase += 2.0 * PI * f0 / fs;
        }
    }

    for fm in &profile.formants {
        let centre = (fm.center_hz * (1.0 + var.formant_jitter * normal(&mut rng))).clamp(20.0, 0.95 * nyquist);
        Biquad::peaking(centre, fm.bandwidth_hz, fm.gain_db, fs).run(&mut x);
    }

    let attack = (ATTACK_S * fs).round().max(1.0);
    let release = (RELEASE_S * fs).round().max(1.0);
    for (i, v) in x.iter_mut().enumerate() {
        let a = (i as f64 / attack).min(1.0);
        let r = ((n - i) as f64 / release).min(1.0);
        *v *= a * r;
    }

    let mut samples = vec![0.0; lead];
    samples.extend(x);
    samples.extend(std::iter::repeat_n(0.0, (0.01 * fs) as usize));

    if let Some(ch) = &var.channel {
        for _ in 0..ch.n_peaks {
            let centre = (ch.min_hz.ln() + rng.random::<f64>() * (ch.max_hz / ch.min_hz).ln()).exp();
            let gain = ch.max_gain_db * (2.0 * rng.random::<f64>() - 1.0);
            Biquad::peaking(centre, centre * ch.relative_bandwidth, gain, fs).run(&mut samples);
        }
    }

    if let Some(db) = profile.noise_floor_db {
        let sd = 10f64.powf(db / 20.0);
        for v in samples.iter_mut() {
            *v += sd * normal(&mut rng);
        }
    }
    Ok(Signal::new(samples, sample_rate)?.normalize_peak(PEAK))
}

/// Which profile parameters differ between individuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentitySources {
    pub f0_contour: bool,
    pub harmonic_amps: bool,
    pub formants: bool,
}

impl IdentitySources {
    pub const ALL: Self = Self {
        f0_contour: true,
        harmonic_amps: true,
        formants: true,
    };
}

/// Identity confined to the levels of harmonics inside one frequency band,
/// with a fixed f0 shared by everyone. In-band harmonics sit at or below the
/// shared out-of-band level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandIdentity {
    pub f0_hz: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Between-individual standard deviation of in-band harmonic levels, dB.
    pub level_sd_db: f64,
}

impl Default for BandIdentity {
    fn default() -> Self {
        Self {
            f0_hz: 260.0,
            band_lo_hz: 1000.0,
            band_hi_hz: 3000.0,
            level_sd_db: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_individuals: usize,
    pub calls_each: usize,
    /// Per-individual call counts; overrides `n_individuals × calls_each`.
    pub counts: Option<Vec<usize>>,
    pub master_seed: u64,
    pub sample_rate: u32,
    /// Multiplies every between-individual standard deviation.
    pub identity_spread: f64,
    pub sources: IdentitySources,
    pub variation: CallVariation,
    pub n_harmonics: usize,
    pub duration_mean: f64,
    pub duration_sd: f64,
    /// Fraction of individuals given a second voice.
    pub two_voice_fraction: f64,
    pub noise_floor_db: Option<f64>,
    pub band_identity: Option<BandIdentity>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_individuals: 20,
            calls_each: 30,
            counts: None,
            master_seed: 7,
            sample_rate: DEFAULT_SAMPLE_RATE,
            identity_spread: 1.0,
            sources: IdentitySources::ALL,
            variation: CallVariation::default(),
            n_harmonics: 12,
            duration_mean: 0.272,
            duration_sd: 0.03,
            two_voice_fraction: 0.0,
            noise_floor_db: Some(-50.0),
            band_identity: None,
        }
    }
}

impl CorpusConfig {
    /// Identity carried by the source (f0 contour and harmonic levels) only,
    /// with a random channel filter and loud background noise on every call.
    pub fn source_identity(master_seed: u64) -> Self {
        Self {
            master_seed,
            sources: IdentitySources {
                f0_contour: true,
                harmonic_amps: true,
                formants: false,
            },
            identity_spread: 1.5,
            variation: CallVariation {
                channel: Some(ChannelFilter {
                    n_peaks: 6,
                    ..ChannelFilter::default()
                }),
                ..CallVariation::default()
            },
            noise_floor_db: Some(-10.0),
            ..Self::default()
        }
    }

    /// Identity only in the levels of harmonics between 1 and 3 kHz.
    pub fn band_identity(master_seed: u64) -> Self {
        Self {
            master_seed,
            sources: IdentitySources {
                f0_contour: false,
                harmonic_amps: true,
                formants: false,
            },
            variation: CallVariation {
                f0_jitter: 0.0,
                formant_jitter: 0.0,
                ..CallVariation::default()
            },
            n_harmonics: 40,
            duration_mean: 0.32,
            duration_sd: 0.01,
            band_identity: Some(BandIdentity::default()),
            ..Self::default()
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        self.counts
            .clone()
            .unwrap_or_else(|| vec![self.calls_each; self.n_individuals])
    }
}

/// Generated calls plus the profiles that produced them.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub calls: Vec<LabelledCall<f64>>,
    pub profiles: BTreeMap<String, IndividualProfile>,
    pub master_seed: u64,
}

pub fn individual_id(index: usize) -> String {
    format!("ind{index:02}")
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of call `call` of individual `individual`, independent of generation
/// order.
pub fn call_seed(master_seed: u64, individual: usize, call: usize) -> u64 {
    splitmix(splitmix(splitmix(master_seed) ^ individual as u64) ^ (call as u64).wrapping_mul(0x2545_f491_4f6c_dd1d))
}

fn profile_rng(master_seed: u64, individual: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(master_seed ^ 0x5eed_0f_11fe));
    rng.set_stream(individual as u64);
    rng
}

/// Draws the profile of one individual around the population means.
pub fn draw_profile(config: &CorpusConfig, individual: usize) -> IndividualProfile {
    let mut rng = profile_rng(config.master_seed, individual);
    let s = config.identity_spread;
    let src = config.sources;
    // Always draw every value so switching a source off leaves the others
    // unchanged.
    let z_f0 = [normal(&mut rng), normal(&mut rng)];
    let z_amp: Vec<f64> = (0..config.n_harmonics).map(|_| normal(&mut rng)).collect();
    let z_fm: Vec<[f64; 2]> = (0..2).map(|_| [normal(&mut rng), normal(&mut rng)]).collect();
    let z_two = rng.random::<f64>();

    let (mut f0_start, mut f0_end) = (1000.0, 700.0);
    let mut harmonic_amps: Vec<f64> = (1..=config.n_harmonics).map(|k| 1.0 / k as f64).collect();
    if let Some(band) = &config.band_identity {
        f0_start = band.f0_hz;
        f0_end = band.f0_hz;
        harmonic_amps = vec![1.0; config.n_harmonics];
        if src.harmonic_amps {
            for (k, a) in harmonic_amps.iter_mut().enumerate() {
                let f = (k + 1) as f64 * band.f0_hz;
                if f >= band.band_lo_hz && f <= band.band_hi_hz {
                    // Capped below the out-of-band level so the loudest
                    // harmonic, and with it the dB reference, never moves.
                    *a *= 10f64.powf(s * band.level_sd_db * (z_amp[k].min(3.0) - 3.0) / 20.0);
                }
            }
        }
    } else {
        if src.f0_contour {
            f0_start *= (s * 0.08 * z_f0[0]).exp();
            f0_end *= (s * 0.08 * z_f0[1]).exp();
        }
        if src.harmonic_amps {
            for (a, z) in harmonic_amps.iter_mut().zip(&z_amp) {
                *a *= 10f64.powf(s * 6.0 * z / 20.0);
            }
        }
    }
    let f0_start = f0_start.clamp(85.0, 1950.0);
    let f0_end = f0_end.clamp(85.0, 1950.0);

    let mut formants = Vec::new();
    if config.band_identity.is_none() {
        for (i, (centre, bw, gain)) in [(2200.0, 500.0, 8.0), (4500.0, 900.0, 6.0)].into_iter().enumerate() {
            let (c, g) = if src.formants {
                (centre * (s * 0.15 * z_fm[i][0]).exp(), gain + s * 4.0 * z_fm[i][1])
            } else {
                (centre, gain)
            };
            formants.push(Formant {
                center_hz: c,
                bandwidth_hz: bw,
                gain_db: g,
            });
        }
    }

    IndividualProfile {
        f0_start,
        f0_end,
        harmonic_amps,
        formants,
        duration_mean: config.duration_mean,
        duration_sd: config.duration_sd,
        two_voice: (z_two < config.two_voice_fraction).then_some(TWO_VOICE_RATIO),
        noise_floor_db: config.noise_floor_db,
        variation: config.variation.clone(),
    }
}

/// Generates a corpus. Calls are rendered in parallel; each uses its own
/// derived seed, so the audio does not depend on scheduling.
pub fn generate_corpus(config: &CorpusConfig) -> Result<SynthCorpus> {
    let counts = config.counts();
    if counts.len() < 2 {
        return Err(Error::InvalidParameter("a corpus needs at least two individuals".into()));
    }
    let profiles: Vec<IndividualProfile> = (0..counts.len()).map(|i| draw_profile(config, i)).collect();
    let jobs: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| (0..c).map(move |j| (i, j)))
        .collect();
    let calls = jobs
        .par_iter()
        .map(|&(i, j)| {
            let signal = generate_call(&profiles[i], call_seed(config.master_seed, i, j), config.sample_rate)?;
            Ok(LabelledCall {
                signal: align_onset(signal)?,
                individual_id: individual_id(i),
                call_id: format!("{}_c{j:03}", individual_id(i)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        calls,
        profiles: profiles
            .into_iter()
            .enumerate()
            .map(|(i, p)| (individual_id(i), p))
            .collect(),
        master_seed: config.master_seed,
    })
}

impl SynthCorpus {
    pub fn labels(&self) -> Vec<String> {
        self.calls.iter().map(|c| c.individual_id.clone()).collect()
    }

    /// Writes `<call_id>.wav` (16-bit), `labels.csv` and `profiles.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.calls
            .par_iter()
            .map(|c| write_wav(&c.signal, dir.join(format!("{}.wav", c.call_id)), 16))
            .collect::<Result<()>>()?;
        let rows: Vec<LabelRow> = self
            .calls
            .iter()
            .map(|c| LabelRow {
                filename: format!("{}.wav", c.call_id),
                individual_id: c.individual_id.clone(),
            })
            .collect();
        write_labels(dir.join("labels.csv"), &rows)?;
        let json = serde_json::to_string_pretty(&serde_json::json!({
            "master_seed": self.master_seed,
            "profiles": self.profiles,
        }))?;
        let path = dir.join("profiles.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
