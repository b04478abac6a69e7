//! Call recordings: the canonical [`Signal`] type, WAV ingestion and onset
//! detection.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_ONSET_FRAME_MS: f64 = 5.0;
pub const DEFAULT_ONSET_THRESHOLD_DB: f64 = -30.0;

/// Mono audio at a fixed sample rate, with the index of the call onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal<T> {
    samples: Vec<T>,
    sample_rate: u32,
    onset_index: usize,
}

impl<T: Real> Signal<T> {
    /// Builds a signal with `onset_index = 0`.
    ///
    /// Rejects empty input, non-finite samples and a zero sample rate.
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSignal("no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
            onset_index: 0,
        })
    }

    pub fn with_onset(mut self, onset_index: usize) -> Result<Self> {
        if onset_index >= self.samples.len() {
            return Err(Error::InvalidSignal(format!(
                "onset {onset_index} beyond {} samples",
                self.samples.len()
            )));
        }
        self.onset_index = onset_index;
        Ok(self)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn onset_index(&self) -> usize {
        self.onset_index
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// The portion of the signal from the onset onwards, with onset 0.
    pub fn from_onset(&self) -> Signal<T> {
        Signal {
            samples: self.samples[self.onset_index..].to_vec(),
            sample_rate: self.sample_rate,
            onset_index: 0,
        }
    }

    /// Same sample rate and onset, different samples (e.g. a filtered copy).
    pub(crate) fn map_samples(&self, samples: Vec<T>) -> Signal<T> {
        debug_assert_eq!(samples.len(), self.samples.len());
        Signal {
            samples,
            sample_rate: self.sample_rate,
            onset_index: self.onset_index,
        }
    }

    /// Scales so the largest magnitude equals `peak`. Silent signals are
    /// returned unchanged.
    pub fn normalize_peak(&self, peak: T) -> Signal<T> {
        let max = self
            .samples
            .iter()
            .fold(T::zero(), |m, s| m.max(s.abs()));
        if max == T::zero() {
            return self.clone();
        }
        let g = peak / max;
        self.map_samples(self.samples.iter().map(|&s| s * g).collect())
    }

    pub fn cast<U: Real>(&self) -> Signal<U> {
        Signal {
            samples: self.samples.iter().map(|s| U::lit(s.as_f64())).collect(),
            sample_rate: self.sample_rate,
            onset_index: self.onset_index,
        }
    }
}

/// A call paired with the individual that produced it.
#[derive(Debug, Clone)]
pub struct LabelledCall<T> {
    pub signal: Signal<T>,
    pub individual_id: String,
    pub call_id: String,
}

/// Reads a 16- or 24-bit integer PCM WAV file, averaging channels to mono.
pub fn load_wav<T: Real>(path: impl AsRef<Path>) -> Result<Signal<T>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format == hound::SampleFormat::Float {
        return Err(Error::UnsupportedEncoding(format!(
            "{}: IEEE float samples",
            path.display()
        )));
    }
    if spec.bits_per_sample != 16 && spec.bits_per_sample != 24 {
        return Err(Error::UnsupportedEncoding(format!(
            "{}: {}-bit PCM",
            path.display(),
            spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels.max(1));
    let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
    let raw: Vec<i32> = reader
        .into_samples::<i32>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| wav_error(path, e))?;
    let samples: Vec<T> = raw
        .chunks(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| f64::from(s)).sum();
            T::lit(sum * scale / frame.len() as f64)
        })
        .collect();
    Signal::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: unsupported WAV format", path.display()))
        }
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    }
}

/// Writes a mono integer PCM WAV (16 or 24 bit). Samples are rounded to the
/// nearest step of 1/2^(bits-1) and clipped to the representable range.
pub fn write_wav<T: Real>(signal: &Signal<T>, path: impl AsRef<Path>, bits: u16) -> Result<()> {
    let path = path.as_ref();
    if bits != 16 && bits != 24 {
        return Err(Error::UnsupportedEncoding(format!("{bits}-bit output")));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: bits,
        sample_format: hound::SampleFormat::Int,
    };
    let full = f64::from(1u32 << (bits - 1));
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for s in signal.samples() {
        let q = (s.as_f64() * full).round().clamp(-full, full - 1.0) as i32;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Energy-threshold onset: start of the first non-overlapping frame whose RMS
/// exceeds the loudest frame's RMS by `threshold_db` (a negative number).
pub fn detect_onset<T: Real>(signal: &Signal<T>, frame_ms: f64, threshold_db: f64) -> Result<usize> {
    if !(frame_ms > 0.0) {
        return Err(Error::InvalidParameter("frame_ms must be positive".into()));
    }
    let frame = ((frame_ms * 1e-3 * f64::from(signal.sample_rate())).round() as usize).max(1);
    let rms: Vec<f64> = signal
        .samples()
        .chunks(frame)
        .map(|c| (c.iter().map(|s| s.as_f64().powi(2)).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::NoOnset);
    }
    let threshold = peak * 10f64.powf(threshold_db / 20.0);
    let first = rms
        .iter()
        .position(|&r| r > threshold)
        .unwrap_or_else(|| rms.iter().position(|&r| r == peak).unwrap_or(0));
    Ok(first * frame)
}

/// Runs [`detect_onset`] with the default 5 ms / -30 dB settings and stores
/// the result.
pub fn align_onset<T: Real>(signal: Signal<T>) -> Result<Signal<T>> {
    let onset = detect_onset(&signal, DEFAULT_ONSET_FRAME_MS, DEFAULT_ONSET_THRESHOLD_DB)?;
    signal.with_onset(onset)
}

/// One row of a labels CSV (`filename,individual_id`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub filename: String,
    pub individual_id: String,
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<LabelRow>, _>>()?;
    Ok(rows)
}

pub fn write_labels(path: impl AsRef<Path>, rows: &[LabelRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Call id used throughout: the file name without its extension.
pub fn call_id_for(filename: &str) -> String {
    Path::new(filename)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| filename.to_string())
}

/// Loads every file listed in a labels CSV from `dir`, checks that all share
/// one sample rate, and detects onsets.
pub fn load_corpus<T: Real>(
    dir: impl AsRef<Path>,
    labels_csv: impl AsRef<Path>,
) -> Result<Vec<LabelledCall<T>>> {
    let dir = dir.as_ref();
    let rows = read_labels(labels_csv)?;
    let mut seen = HashSet::new();
    let mut calls = Vec::with_capacity(rows.len());
    let mut rate = None;
    for row in rows {
        let call_id = call_id_for(&row.filename);
        if !seen.insert(call_id.clone()) {
            return Err(Error::InvalidParameter(format!("duplicate call id {call_id}")));
        }
        let path: PathBuf = dir.join(&row.filename);
        let signal = load_wav::<T>(&path)?;
        let expected = *rate.get_or_insert(signal.sample_rate());
        if signal.sample_rate() != expected {
            return Err(Error::MixedSampleRates {
                expected,
                found: signal.sample_rate(),
                call: call_id,
            });
        }
        calls.push(LabelledCall {
            signal: align_onset(signal)?,
            individual_id: row.individual_id,
            call_id,
        });
    }
    Ok(calls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(n: usize, fs: u32, f: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / f64::from(fs)).sin())
            .collect()
    }

    #[test]
    fn rejects_invalid_signals() {
        assert!(Signal::<f64>::new(vec![], 48000).is_err());
        assert!(Signal::new(vec![0.0f64], 0).is_err());
        assert!(Signal::new(vec![f64::NAN], 48000).is_err());
        let s = Signal::new(vec![0.0f64; 4], 48000).unwrap();
        assert!(s.clone().with_onset(4).is_err());
        assert_eq!(s.with_onset(3).unwrap().onset_index(), 3);
    }

    #[test]
    fn full_scale_16_bit_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.finalize().unwrap();
        let s = load_wav::<f64>(&path).unwrap();
        assert_eq!(s.samples(), &[32767.0 / 32768.0]);
        assert_eq!(s.sample_rate(), 48000);
        assert_eq!(s.onset_index(), 0);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        let half = 1 << 22;
        w.write_sample(half).unwrap();
        w.write_sample(-half).unwrap();
        w.write_sample(half).unwrap();
        w.write_sample(half).unwrap();
        w.finalize().unwrap();
        let s = load_wav::<f64>(&path).unwrap();
        assert_eq!(s.samples(), &[0.0, 0.5]);
    }

    #[test]
    fn float_and_mulaw_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        let err = load_wav::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedEncoding(_)), "{err}");

        // Hand-built mu-law (format tag 7) header with one data byte.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(4u32 + 8 + 16 + 8 + 1).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&7u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(0xff);
        let mu = dir.path().join("mu.wav");
        std::fs::write(&mu, bytes).unwrap();
        let err = load_wav::<f64>(&mu).unwrap_err();
        assert!(matches!(err, Error::UnsupportedEncoding(_)), "{err}");

        let missing = load_wav::<f64>(dir.path().join("nope.wav")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
        assert_ne!(missing.code(), err.code());

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"not a wav file at all").unwrap();
        assert!(matches!(
            load_wav::<f64>(&junk).unwrap_err(),
            Error::MalformedWav(_)
        ));
    }

    #[test]
    fn wav_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let samples = tone(2000, 48000, 523.0, 0.8);
        let s = Signal::new(samples.clone(), 48000).unwrap();
        for bits in [16u16, 24] {
            let path = dir.path().join(format!("rt{bits}.wav"));
            write_wav(&s, &path, bits).unwrap();
            let back = load_wav::<f64>(&path).unwrap();
            let lsb = 1.0 / f64::from(1u32 << (bits - 1));
            for (a, b) in samples.iter().zip(back.samples()) {
                assert!((a - b).abs() <= lsb, "{bits}-bit: {a} vs {b}");
            }
        }
    }

    #[test]
    fn onset_after_silence() {
        let fs = 48000;
        let mut x = vec![0.0; 4800];
        x.extend(tone(4800, fs, 440.0, 1.0));
        let s = Signal::new(x, fs).unwrap();
        let onset = detect_onset(&s, 5.0, -30.0).unwrap();
        let frame = 240;
        assert!(onset + frame >= 4800 && onset <= 4800 + frame, "{onset}");
    }

    #[test]
    fn onset_of_constant_tone_is_zero() {
        let s = Signal::new(tone(4800, 48000, 440.0, 0.5), 48000).unwrap();
        assert_eq!(detect_onset(&s, 5.0, -30.0).unwrap(), 0);
    }

    #[test]
    fn silent_signal_has_no_onset() {
        let s = Signal::new(vec![0.0f64; 1000], 48000).unwrap();
        assert!(matches!(detect_onset(&s, 5.0, -30.0), Err(Error::NoOnset)));
    }

    #[test]
    fn onset_of_exponential_fade_matches_frame_scan() {
        // 50 ms fade-in from -60 dB, then steady tone.
        let fs = 48000u32;
        let fade = 2400;
        let x: Vec<f64> = tone(12000, fs, 700.0, 1.0)
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let g = if i < fade {
                    10f64.powf(-3.0 * (1.0 - i as f64 / fade as f64))
                } else {
                    1.0
                };
                v * g
            })
            .collect();
        let s = Signal::new(x.clone(), fs).unwrap();
        let onset = detect_onset(&s, 5.0, -30.0).unwrap();

        // Independent scan: explicit per-frame RMS in a plain loop.
        let frame = 240;
        let mut levels = Vec::new();
        let mut start = 0;
        while start < x.len() {
            let end = (start + frame).min(x.len());
            let mut acc = 0.0;
            for v in &x[start..end] {
                acc += v * v;
            }
            levels.push((acc / (end - start) as f64).sqrt());
            start = end;
        }
        let peak = levels.iter().cloned().fold(0.0, f64::max);
        let expected = levels
            .iter()
            .position(|&l| 20.0 * (l / peak).log10() > -30.0)
            .unwrap()
            * frame;
        assert_eq!(onset, expected);
        assert!(onset > 0 && onset < fade);
    }

    #[test]
    fn labels_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let rows = vec![
            LabelRow {
                filename: "a.wav".into(),
                individual_id: "bird1".into(),
            },
            LabelRow {
                filename: "b.wav".into(),
                individual_id: "bird2".into(),
            },
        ];
        write_labels(&path, &rows).unwrap();
        assert_eq!(read_labels(&path).unwrap(), rows);
        assert_eq!(call_id_for("dir/a.wav"), "a");
    }

    #[test]
    fn corpus_rejects_mixed_rates() {
        let dir = tempfile::tempdir().unwrap();
        let a = Signal::new(tone(4800, 48000, 440.0, 0.5), 48000).unwrap();
        let b = Signal::new(tone(4410, 44100, 440.0, 0.5), 44100).unwrap();
        write_wav(&a, dir.path().join("a.wav"), 16).unwrap();
        write_wav(&b, dir.path().join("b.wav"), 16).unwrap();
        let labels = dir.path().join("labels.csv");
        write_labels(
            &labels,
            &[
                LabelRow {
                    filename: "a.wav".into(),
                    individual_id: "x".into(),
                },
                LabelRow {
                    filename: "b.wav".into(),
                    individual_id: "y".into(),
                },
            ],
        )
        .unwrap();
        let err = load_corpus::<f64>(dir.path(), &labels).unwrap_err();
        assert!(matches!(err, Error::MixedSampleRates { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn onset_is_shift_equivariant(pad in 0usize..5000, lead in 0usize..3000) {
            let fs = 48000u32;
            let mut x = vec![0.0; lead];
            x.extend(tone(6000, fs, 600.0, 0.7));
            let base = detect_onset(&Signal::new(x.clone(), fs).unwrap(), 5.0, -30.0).unwrap();
            let mut shifted = vec![0.0; pad];
            shifted.extend(x);
            let moved = detect_onset(&Signal::new(shifted, fs).unwrap(), 5.0, -30.0).unwrap();
            let frame = 240i64;
            prop_assert!(((moved as i64) - (base as i64 + pad as i64)).abs() <= frame);
        }
    }
}
