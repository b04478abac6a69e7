use ndarray::Array2;

use super::HarmonicSpectrogram;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectra::Spectrogram;

/// Nearest-neighbour resampling of an aDFT onto a regular STFT grid.
///
/// Each template frame takes the aDFT frame nearest in time; each bin then
/// takes the magnitude of that frame's nearest harmonic. Bins farther than
/// `f0/2` from every harmonic stay 0.
pub fn regrid<T: Real>(hspec: &HarmonicSpectrogram<T>, template: &Spectrogram<T>) -> Result<Spectrogram<T>> {
    if hspec.is_empty() {
        return Err(Error::EmptyHarmonics);
    }
    if template.is_log {
        return Err(Error::InvalidParameter("regrid template must hold magnitudes".into()));
    }
    if hspec.sample_rate != template.sample_rate {
        return Err(Error::ShapeMismatch("aDFT and template sample rates differ".into()));
    }
    let bin_width = template.bin_width_hz();
    let times: Vec<usize> = hspec.frames.iter().map(|f| f.time).collect();
    let mut values = Array2::<T>::zeros((template.n_frames(), template.n_bins()));
    for (j, mut row) in values.rows_mut().into_iter().enumerate() {
        let frame = &hspec.frames[nearest(&times, template.frame_center(j))];
        let f0 = frame.f0.as_f64();
        let n_harm = frame.coefficients.len();
        if f0 <= 0.0 || n_harm == 0 {
            continue;
        }
        for (b, v) in row.iter_mut().enumerate() {
            let f = b as f64 * bin_width;
            let k = ((f / f0).round() as usize).clamp(1, n_harm);
            if (f - k as f64 * f0).abs() <= f0 / 2.0 {
                *v = frame.coefficients[k - 1].norm();
            }
        }
    }
    Ok(Spectrogram {
        values,
        ..template.clone()
    })
}

/// Index of the sorted `times` entry closest to `t` (earlier wins ties).
fn nearest(times: &[usize], t: usize) -> usize {
    match times.binary_search(&t) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == times.len() => i - 1,
        Err(i) => {
            if t - times[i - 1] <= times[i] - t {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Fraction of a magnitude spectrogram's energy lying within
/// `radius · f0(t)` of the harmonics `k·f0(t)` of a reference contour (one
/// value per sample). A radius of 0.5 covers every bin from `f0/2` up.
pub fn harmonic_concentration<T: Real>(spec: &Spectrogram<T>, f0: &[f64], radius: f64) -> Result<f64> {
    if spec.is_log {
        return Err(Error::InvalidParameter("concentration needs magnitudes".into()));
    }
    if f0.is_empty() {
        return Err(Error::InvalidParameter("empty reference contour".into()));
    }
    if !(radius > 0.0 && radius <= 0.5) {
        return Err(Error::InvalidParameter(format!("radius {radius} outside (0, 0.5]")));
    }
    let bin_width = spec.bin_width_hz();
    let nyquist = f64::from(spec.sample_rate) / 2.0;
    let mut inside = 0.0;
    let mut total = 0.0;
    for (j, row) in spec.values.rows().into_iter().enumerate() {
        let f = f0[spec.frame_center(j).min(f0.len() - 1)];
        for (b, v) in row.iter().enumerate() {
            let e = v.as_f64().powi(2);
            total += e;
            let freq = b as f64 * bin_width;
            let k = (freq / f).round().max(1.0);
            if f > 0.0 && k * f < nyquist && (freq - k * f).abs() <= radius * f {
                inside += e;
            }
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adft::{adft_spectrogram, F0Track, HarmonicFrame};
    use crate::signal::Signal;
    use crate::spectra::stft_magnitude;
    use num_complex::Complex;

    fn template(n: usize) -> Spectrogram<f64> {
        let s = Signal::new(vec![0.0f64; n], 48000).unwrap();
        stft_magnitude(&s, 1024, 0.75).unwrap()
    }

    #[test]
    fn single_harmonic_exact_hit() {
        let tpl = template(13056);
        let f0 = tpl.bin_width_hz();
        let h = HarmonicSpectrogram {
            frames: vec![HarmonicFrame {
                time: tpl.frame_center(5),
                f0,
                coefficients: vec![Complex::new(0.0, 0.7)],
                truncated: false,
            }],
            sample_rate: 48000,
            n_samples: 13056,
        };
        let g = regrid(&h, &tpl).unwrap();
        assert_eq!(g.values.dim(), (48, 513));
        assert!((g.values[[5, 1]] - 0.7).abs() < 1e-12);
        assert_eq!(g.values[[5, 0]], 0.0);
        assert_eq!(g.values[[5, 2]], 0.0);
        assert_eq!(g.values.row(5).iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn constant_f0_paints_horizontal_bands() {
        let n = 13056;
        let f0 = 523.0;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let p = 2.0 * std::f64::consts::PI * f0 * i as f64 / 48000.0;
                p.sin() + 0.5 * (2.0 * p).sin()
            })
            .collect();
        let s = Signal::new(x, 48000).unwrap();
        let track = F0Track::constant(f0, n, 48000, (80.0, 2000.0)).unwrap();
        let h = adft_spectrogram(&s, &track, 3.0).unwrap();
        let tpl = stft_magnitude(&s, 1024, 0.75).unwrap();
        let g = regrid(&h, &tpl).unwrap();
        assert_eq!(g.values.dim(), tpl.values.dim());
        assert_eq!(g.frame_hop, tpl.frame_hop);
        let bw = tpl.bin_width_hz();
        let k_max = h.frames[0].n_harmonics() as f64;
        let b1 = (f0 / bw).round() as usize;
        let b2 = (2.0 * f0 / bw).round() as usize;
        for row in g.values.rows() {
            for (b, &v) in row.iter().enumerate() {
                let f = b as f64 * bw;
                let k = (f / f0).round().clamp(1.0, k_max);
                let centre = (k * f0 / bw).round() as usize;
                if (f - k * f0).abs() <= f0 / 2.0 {
                    assert_eq!(v, row[centre], "bin {b} differs from its harmonic");
                } else {
                    assert_eq!(v, 0.0, "bin {b} is outside every harmonic band");
                }
            }
            assert!(row[b1] > 0.5 && row[b2] > 0.2);
            assert!(row[b1 + 2] == row[b1] && row[(3.0 * f0 / bw).round() as usize] < 0.1);
        }
        let again = regrid(&h, &tpl).unwrap();
        assert_eq!(again, g);
    }

    #[test]
    fn empty_input_is_rejected() {
        let h = HarmonicSpectrogram::<f64> {
            frames: vec![],
            sample_rate: 48000,
            n_samples: 0,
        };
        assert!(matches!(regrid(&h, &template(2048)), Err(Error::EmptyHarmonics)));
    }

    #[test]
    fn nearest_time_lookup() {
        let t = [0, 10, 20];
        assert_eq!(nearest(&t, 4), 0);
        assert_eq!(nearest(&t, 5), 0);
        assert_eq!(nearest(&t, 6), 1);
        assert_eq!(nearest(&t, 100), 2);
    }

    #[test]
    fn concentration_partitions_harmonic_and_gap_energy() {
        let mut spec = template(8192);
        let bw = spec.bin_width_hz();
        let f0 = vec![20.0 * bw; 8192];
        spec.values.fill(0.0);
        spec.values.column_mut(40).fill(3.0);
        assert!((harmonic_concentration(&spec, &f0, 1.0 / 3.0).unwrap() - 1.0).abs() < 1e-12);
        spec.values.column_mut(30).fill(3.0);
        assert!((harmonic_concentration(&spec, &f0, 1.0 / 3.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((harmonic_concentration(&spec, &f0, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(harmonic_concentration(&spec, &f0, 0.0).is_err());
        assert!(harmonic_concentration(&spec, &f0, 0.6).is_err());
    }
}
