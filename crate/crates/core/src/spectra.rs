//! Short-time Fourier magnitude spectrograms and the dB transform.
//!
//! Magnitudes are amplitude-normalized (`2/Σw`), so a sinusoid of amplitude
//! `A` centred on a bin reads `A` at that bin. The adaptive transform uses the
//! same normalization, which makes regridded aDFT and STFT pixels comparable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Signal;

pub const DEFAULT_FRAME_SIZE: usize = 1024;
pub const DEFAULT_OVERLAP: f64 = 0.75;
pub const DEFAULT_FLOOR_DB: f64 = -80.0;

/// Regular time-frequency matrix, `n_frames × n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub values: Array2<T>,
    pub frame_hop: usize,
    pub frame_size: usize,
    pub sample_rate: u32,
    pub is_log: bool,
    /// Sample index of the first frame centre.
    pub time_origin: usize,
    /// Floor of the dB transform; `None` for magnitudes.
    pub floor_db: Option<T>,
}

impl<T: Real> Spectrogram<T> {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn bin_width_hz(&self) -> f64 {
        f64::from(self.sample_rate) / self.frame_size as f64
    }

    /// Centre of frame `j`, in samples.
    pub fn frame_center(&self, j: usize) -> usize {
        self.time_origin + j * self.frame_hop
    }

    /// Value used when a call is padded past its end: 0 for magnitudes, the
    /// floor for dB values.
    pub fn pad_value(&self) -> T {
        if self.is_log {
            self.floor_db.unwrap_or_else(|| T::lit(DEFAULT_FLOOR_DB))
        } else {
            T::zero()
        }
    }

    pub fn max_value(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v))
    }
}

pub(crate) fn hann_periodic<T: Real>(n: usize) -> Vec<T> {
    let nf = T::from_usize_lossy(n);
    (0..n)
        .map(|i| {
            let x = T::lit(2.0) * T::PI() * T::from_usize_lossy(i) / nf;
            T::lit(0.5) - T::lit(0.5) * x.cos()
        })
        .collect()
}

/// Hann-windowed one-sided magnitude STFT.
pub fn stft_magnitude<T: Real>(
    signal: &Signal<T>,
    frame_size: usize,
    overlap: f64,
) -> Result<Spectrogram<T>> {
    if frame_size < 2 {
        return Err(Error::InvalidParameter("frame_size must be >= 2".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter("overlap must lie in [0, 1)".into()));
    }
    let x = signal.samples();
    if x.len() < frame_size {
        return Err(Error::TooShort {
            needed: frame_size,
            got: x.len(),
        });
    }
    let hop = ((frame_size as f64 * (1.0 - overlap)).round() as usize).max(1);
    let n_frames = (x.len() - frame_size) / hop + 1;
    let n_bins = frame_size / 2 + 1;
    let window = hann_periodic::<T>(frame_size);
    let scale = T::lit(2.0) / window.iter().copied().sum::<T>();
    let fft = FftPlanner::<T>::new().plan_fft_forward(frame_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); frame_size];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut values = Array2::zeros((n_frames, n_bins));
    for (j, mut row) in values.rows_mut().into_iter().enumerate() {
        let start = j * hop;
        for (b, (&s, &w)) in buf.iter_mut().zip(x[start..start + frame_size].iter().zip(&window)) {
            *b = Complex::new(s * w, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (v, c) in row.iter_mut().zip(&buf[..n_bins]) {
            *v = c.norm() * scale;
        }
    }
    Ok(Spectrogram {
        values,
        frame_hop: hop,
        frame_size,
        sample_rate: signal.sample_rate(),
        is_log: false,
        time_origin: frame_size / 2,
        floor_db: None,
    })
}

/// Reference level for the dB transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogReference<T> {
    /// Each spectrogram's own maximum.
    PerCall,
    /// A shared maximum, e.g. over a whole corpus.
    Fixed(T),
}

/// dB relative to the reference maximum, clamped below at `floor_db`:
/// `20·log10(max(m, ref·10^(floor/20)) / ref)`. Values lie in `[floor_db, 0]`
/// when the reference is the maximum; a zero reference yields all-floor.
pub fn log_magnitude<T: Real>(
    spec: &Spectrogram<T>,
    floor_db: T,
    reference: LogReference<T>,
) -> Result<Spectrogram<T>> {
    if spec.is_log {
        return Err(Error::AlreadyLog);
    }
    if !(floor_db < T::zero()) {
        return Err(Error::InvalidParameter("floor_db must be negative".into()));
    }
    let reference = match reference {
        LogReference::PerCall => spec.max_value(),
        LogReference::Fixed(r) => r,
    };
    let values = if reference > T::zero() {
        let floor = reference * T::lit(10.0).powf(floor_db / T::lit(20.0));
        spec.values
            .mapv(|m| (T::lit(20.0) * (m.max(floor) / reference).log10()).max(floor_db))
    } else {
        spec.values.mapv(|_| floor_db)
    };
    Ok(Spectrogram {
        values,
        is_log: true,
        floor_db: Some(floor_db),
        ..spec.clone()
    })
}

/// Largest magnitude over a set of spectrograms, for a corpus-wide reference.
pub fn corpus_max<T: Real>(specs: &[Spectrogram<T>]) -> T {
    specs.iter().fold(T::zero(), |m, s| m.max(s.max_value()))
}

/// Geometric over arithmetic mean of the whole-clip periodogram.
pub fn spectral_flatness<T: Real>(samples: &[T]) -> T {
    let n = samples.len().next_power_of_two().max(2);
    let mut buf: Vec<Complex<T>> = samples
        .iter()
        .map(|&s| Complex::new(s, T::zero()))
        .chain(std::iter::repeat(Complex::new(T::zero(), T::zero())))
        .take(n)
        .collect();
    FftPlanner::<T>::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm_sqr().as_f64()).collect();
    let mean = power.iter().sum::<f64>() / power.len() as f64;
    if mean == 0.0 {
        return T::zero();
    }
    let eps = mean * 1e-20;
    let log_mean = power.iter().map(|p| (p + eps).ln()).sum::<f64>() / power.len() as f64;
    T::lit(log_mean.exp() / mean)
}

/// Header of the compact binary spectrogram format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridHeader {
    pub n_frames: u32,
    pub n_bins: u32,
    pub hop: u32,
    pub frame_size: u32,
}

/// Writes the compact binary format: a 16-byte little-endian header
/// (`n_frames, n_bins, hop, frame_size` as u32) followed by row-major f32
/// values.
pub fn write_bin<T: Real>(spec: &Spectrogram<T>, path: impl AsRef<Path>) -> Result<()> {
    let header = GridHeader {
        n_frames: spec.n_frames() as u32,
        n_bins: spec.n_bins() as u32,
        hop: spec.frame_hop as u32,
        frame_size: spec.frame_size as u32,
    };
    write_grid(path, header, &spec.values)
}

pub(crate) fn write_grid<T: Real>(
    path: impl AsRef<Path>,
    header: GridHeader,
    values: &Array2<T>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(16 + values.len() * 4);
    for v in [header.n_frames, header.n_bins, header.hop, header.frame_size] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in values.iter() {
        bytes.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
    }
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads the compact binary format back.
pub fn read_bin(path: impl AsRef<Path>) -> Result<(GridHeader, Array2<f32>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::ShapeMismatch("binary grid shorter than its header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let header = GridHeader {
        n_frames: word(0),
        n_bins: word(1),
        hop: word(2),
        frame_size: word(3),
    };
    let count = header.n_frames as usize * header.n_bins as usize;
    if bytes.len() < 16 + 4 * count {
        return Err(Error::ShapeMismatch(format!(
            "binary grid declares {count} values but holds {}",
            (bytes.len() - 16) / 4
        )));
    }
    let data: Vec<f32> = bytes[16..16 + 4 * count]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((header.n_frames as usize, header.n_bins as usize), data)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((header, values))
}

/// One CSV row per frame, one column per bin.
pub fn write_csv<T: Real>(values: &Array2<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in values.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(n: usize, fs: f64, f: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect()
    }

    fn spec_of(x: Vec<f64>) -> Spectrogram<f64> {
        stft_magnitude(&Signal::new(x, 48000).unwrap(), 1024, 0.75).unwrap()
    }

    #[test]
    fn bin_centred_sine_dominates() {
        let k = 37;
        let s = spec_of(sine(8192, 48000.0, k as f64 * 48000.0 / 1024.0, 0.5));
        assert_eq!(s.n_bins(), 513);
        assert_eq!(s.frame_hop, 256);
        for row in s.values.rows() {
            let peak = row[k];
            assert!((peak - 0.5).abs() < 1e-9, "amplitude normalization: {peak}");
            for (b, &v) in row.iter().enumerate() {
                if b.abs_diff(k) >= 2 {
                    assert!(peak >= 100.0 * v);
                }
            }
        }
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = spec_of(vec![0.0; 4096]);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn median_call_framing() {
        // 0.272 s at 48 kHz.
        let s = spec_of(vec![0.1; 13056]);
        assert_eq!(s.n_frames(), 48);
        assert_eq!(s.time_origin, 512);
    }

    #[test]
    fn short_signal_is_an_error() {
        let sig = Signal::new(vec![0.0f64; 1000], 48000).unwrap();
        assert!(matches!(
            stft_magnitude(&sig, 1024, 0.75),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn parseval_per_frame() {
        let x: Vec<f64> = (0..4096).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let s = spec_of(x.clone());
        let w = hann_periodic::<f64>(1024);
        let scale = 2.0 / w.iter().sum::<f64>();
        for j in 0..s.n_frames() {
            let frame_energy: f64 = (0..1024).map(|n| (x[j * 256 + n] * w[n]).powi(2)).sum();
            let row = s.values.row(j);
            let mut spec_energy = 0.0;
            for (b, &m) in row.iter().enumerate() {
                let mag = m / scale;
                let weight = if b == 0 || b == 512 { 1.0 } else { 2.0 };
                spec_energy += weight * mag * mag;
            }
            spec_energy /= 1024.0;
            assert!((spec_energy - frame_energy).abs() <= 1e-6 * frame_energy);
        }
    }

    #[test]
    fn hop_shift_moves_columns() {
        let x: Vec<f64> = (0..6000).map(|i| ((i * 31) % 97) as f64 / 97.0 - 0.5).collect();
        let a = spec_of(x.clone());
        let b = spec_of(x[256..].to_vec());
        for j in 0..b.n_frames() {
            assert_eq!(a.values.row(j + 1), b.values.row(j));
        }
    }

    #[test]
    fn log_magnitude_cases() {
        let mut s = spec_of(vec![0.0; 2048]);
        let log = log_magnitude(&s, -80.0, LogReference::PerCall).unwrap();
        assert!(log.values.iter().all(|&v| v == -80.0));
        assert_eq!(log.pad_value(), -80.0);
        assert!(matches!(
            log_magnitude(&log, -80.0, LogReference::PerCall),
            Err(Error::AlreadyLog)
        ));

        s.values = Array2::from_shape_vec((1, 3), vec![1.0, 0.1, 1e-9]).unwrap();
        let log = log_magnitude(&s, -80.0, LogReference::PerCall).unwrap();
        assert!((log.values[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((log.values[[0, 1]] + 20.0).abs() < 1e-12);
        assert_eq!(log.values[[0, 2]], -80.0);

        let fixed = log_magnitude(&s, -80.0, LogReference::Fixed(10.0)).unwrap();
        assert!((fixed.values[[0, 0]] + 20.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec_of(sine(5000, 48000.0, 1000.0, 0.3));
        let p = dir.path().join("s.bin");
        write_bin(&s, &p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(raw.len(), 16 + 4 * s.values.len());
        assert_eq!(&raw[0..4], &(s.n_frames() as u32).to_le_bytes());
        let (h, v) = read_bin(&p).unwrap();
        assert_eq!(h.n_bins, 513);
        assert_eq!(h.hop, 256);
        assert_eq!(h.frame_size, 1024);
        for (a, b) in s.values.iter().zip(v.iter()) {
            assert_eq!(*a as f32, *b);
        }
        write_csv(&s.values, dir.path().join("s.csv")).unwrap();
    }

    #[test]
    fn flatness_of_noise_exceeds_tone() {
        let tone = sine(4096, 48000.0, 1000.0, 0.5);
        let noise: Vec<f64> = (0..4096u64)
            .map(|i| {
                let h = i.wrapping_mul(0x9E3779B97F4A7C15).rotate_left(17) ^ 0x5555;
                (h % 10_000) as f64 / 10_000.0 - 0.5
            })
            .collect();
        assert!(spectral_flatness(&noise) > spectral_flatness(&tone));
        assert!(spectral_flatness(&noise) <= 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn log_is_order_preserving(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let mut s = spec_of(vec![0.0; 1024]);
            s.values = Array2::from_shape_vec((1, 3), vec![a, b, 2.0]).unwrap();
            let l = log_magnitude(&s, -80.0, LogReference::PerCall).unwrap();
            if a <= b {
                prop_assert!(l.values[[0, 0]] <= l.values[[0, 1]]);
            } else {
                prop_assert!(l.values[[0, 0]] >= l.values[[0, 1]]);
            }
        }
    }
}
