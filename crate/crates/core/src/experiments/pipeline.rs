use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::adft::{adft_spectrogram, estimate_f0_track, halve_f0, refine_f0, regrid, F0Config, RefineConfig};
use crate::distances::{RepresentationTag, Scale, Source, Transform};
use crate::error::Result;
use crate::lpc::{fit_lpc, lpc_spectrum, residual};
use crate::scalar::Real;
use crate::signal::Signal;
use crate::spectra::{log_magnitude, stft_magnitude, LogReference, Spectrogram};

/// Analysis settings shared by every representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub frame_size: usize,
    pub overlap: f64,
    pub lpc_order: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub window_periods: f64,
    pub refine_iters: usize,
    pub floor_db: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_size: crate::spectra::DEFAULT_FRAME_SIZE,
            overlap: crate::spectra::DEFAULT_OVERLAP,
            lpc_order: crate::lpc::DEFAULT_ORDER,
            f_min: crate::adft::DEFAULT_F_MIN,
            f_max: crate::adft::DEFAULT_F_MAX,
            window_periods: crate::adft::DEFAULT_WINDOW_PERIODS,
            refine_iters: RefineConfig::default().max_iters,
            floor_db: crate::spectra::DEFAULT_FLOOR_DB,
        }
    }
}

/// Source signal for a representation: the call itself or its LPC residual,
/// starting at the onset.
pub fn source_signal<T: Real>(signal: &Signal<T>, source: Source, config: &PipelineConfig) -> Result<Signal<T>> {
    let trimmed = signal.from_onset();
    match source {
        Source::Raw | Source::LpcFilter => Ok(trimmed),
        Source::LpcResidual => {
            let model = fit_lpc(&trimmed, config.lpc_order)?;
            Ok(residual(&trimmed, &model))
        }
    }
}

/// Magnitude spectrogram of one call under `tag`, on the regular STFT grid
/// of the onset-trimmed call.
pub fn magnitude_representation<T: Real>(
    signal: &Signal<T>,
    tag: RepresentationTag,
    config: &PipelineConfig,
) -> Result<Spectrogram<T>> {
    let src = source_signal(signal, tag.source, config)?;
    let template = stft_magnitude(&src, config.frame_size, config.overlap)?;
    if tag.source == Source::LpcFilter {
        let model = fit_lpc(&src, config.lpc_order)?;
        let envelope = lpc_spectrum(&model, template.n_bins())?;
        let values = Array2::from_shape_fn(template.values.dim(), |(_, b)| envelope[b]);
        return Ok(Spectrogram { values, ..template });
    }
    match tag.transform {
        Transform::Stft => Ok(template),
        Transform::AdftUnrefined | Transform::AdftRefined => {
            let f0 = F0Config::with_range(config.f_min, config.f_max);
            let mut track = halve_f0(&estimate_f0_track(&signal.from_onset(), &f0)?);
            if tag.transform == Transform::AdftRefined {
                let refine = RefineConfig {
                    max_iters: config.refine_iters,
                    window_periods: config.window_periods,
                    ..RefineConfig::default()
                };
                track = refine_f0(&src, &track, &refine)?;
            }
            let hspec = adft_spectrogram(&src, &track, config.window_periods)?;
            regrid(&hspec, &template)
        }
    }
}

/// Applies the amplitude scale: magnitudes unchanged, or dB re each call's
/// own maximum.
pub fn apply_scale<T: Real>(spec: &Spectrogram<T>, scale: Scale, config: &PipelineConfig) -> Result<Spectrogram<T>> {
    match scale {
        Scale::Mag => Ok(spec.clone()),
        Scale::Log => log_magnitude(spec, T::lit(config.floor_db), LogReference::PerCall),
    }
}
