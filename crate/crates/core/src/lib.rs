pub mod adft;
pub mod distances;
pub mod error;
pub mod experiments;
pub mod knn;
pub mod lmnn;
pub mod lpc;
pub mod scalar;
pub mod signal;
pub mod spectra;
pub mod synth;
pub mod tsne;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instantiations; the default throughout the CLI.
pub type Signal = signal::Signal<f64>;
pub type LabelledCall = signal::LabelledCall<f64>;
pub type LpcModel = lpc::LpcModel<f64>;
pub type Spectrogram = spectra::Spectrogram<f64>;
pub type F0Track = adft::F0Track<f64>;
pub type HarmonicSpectrogram = adft::HarmonicSpectrogram<f64>;
pub type DistanceMatrix = distances::DistanceMatrix<f64>;
pub type FeatureMatrix = lmnn::FeatureMatrix<f64>;
pub type LinearMetric = lmnn::LinearMetric<f64>;

/// Single-precision instantiations.
pub mod f32 {
    pub type Signal = crate::signal::Signal<f32>;
    pub type LabelledCall = crate::signal::LabelledCall<f32>;
    pub type LpcModel = crate::lpc::LpcModel<f32>;
    pub type Spectrogram = crate::spectra::Spectrogram<f32>;
    pub type F0Track = crate::adft::F0Track<f32>;
    pub type HarmonicSpectrogram = crate::adft::HarmonicSpectrogram<f32>;
    pub type DistanceMatrix = crate::distances::DistanceMatrix<f32>;
    pub type FeatureMatrix = crate::lmnn::FeatureMatrix<f32>;
    pub type LinearMetric = crate::lmnn::LinearMetric<f32>;
}
