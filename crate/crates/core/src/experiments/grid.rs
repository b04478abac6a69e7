use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cache::{content_hash, signal_bytes, ArtifactCache};
use super::pipeline::{apply_scale, magnitude_representation, PipelineConfig};
use crate::distances::{pairwise_matrix, DistanceMatrix, Metric, MetricTag, RepresentationTag, Scale};
use crate::error::{Error, Result};
use crate::knn::{chance_level, loo_accuracy};
use crate::scalar::Real;
use crate::signal::LabelledCall;
use crate::spectra::Spectrogram;

/// Factorial selection of representations, scales and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub representations: Vec<RepresentationTag>,
    pub scales: Vec<Scale>,
    pub metrics: Vec<Metric>,
    pub k: usize,
    pub max_shift_ms: f64,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            representations: RepresentationTag::all(),
            scales: vec![Scale::Mag, Scale::Log],
            metrics: vec![Metric::Euclidean, Metric::Manhattan],
            k: crate::knn::DEFAULT_K,
            max_shift_ms: crate::distances::DEFAULT_MAX_SHIFT_MS,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.representations.is_empty() || self.scales.is_empty() || self.metrics.is_empty() {
            return Err(Error::InvalidParameter("every grid factor needs at least one level".into()));
        }
        if let Some(bad) = self.representations.iter().find(|r| !r.is_valid()) {
            return Err(Error::InvalidParameter(format!("{bad} is not a valid combination")));
        }
        if self.k == 0 || !(self.max_shift_ms >= 0.0) {
            return Err(Error::InvalidParameter("k must be positive and max_shift_ms non-negative".into()));
        }
        Ok(())
    }

    /// Cells in reporting order: representation, then scale, then metric.
    pub fn cells(&self) -> Vec<(RepresentationTag, Scale, Metric)> {
        let mut out = Vec::new();
        for &r in &self.representations {
            for &s in &self.scales {
                for &m in &self.metrics {
                    out.push((r, s, m));
                }
            }
        }
        out
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub representation: RepresentationTag,
    pub scale: Scale,
    pub metric: Metric,
    /// `None` when the cell failed.
    pub accuracy: Option<f64>,
    pub chance_level: f64,
    pub n_calls: usize,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
    pub wall_time_s: f64,
}

impl CellResult {
    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }
}

fn spectrogram_key<T: Real>(call: &LabelledCall<T>, tag: RepresentationTag, pipeline: &PipelineConfig) -> Result<String> {
    let cfg = serde_json::to_vec(pipeline)?;
    let tag = tag.to_string();
    let precision = std::any::type_name::<T>();
    Ok(content_hash([
        b"spectrogram".as_slice(),
        precision.as_bytes(),
        tag.as_bytes(),
        &cfg,
        &signal_bytes(&call.signal),
    ]))
}

/// Magnitude spectrograms of every call for one representation, through the
/// cache.
pub fn representation_set<T: Real>(
    calls: &[LabelledCall<T>],
    tag: RepresentationTag,
    pipeline: &PipelineConfig,
    cache: &ArtifactCache<T>,
) -> Result<(Vec<String>, Vec<std::sync::Arc<Spectrogram<T>>>)> {
    use rayon::prelude::*;
    calls
        .par_iter()
        .map(|c| {
            let key = spectrogram_key(c, tag, pipeline)?;
            let spec = cache
                .spectrogram(&key, || magnitude_representation(&c.signal, tag, pipeline))
                .map_err(|e| Error::InvalidParameter(format!("{}: {e}", c.call_id)))?;
            Ok((key, spec))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Distance matrix of one representation, scale and metric, through the
/// cache.
pub fn cell_matrix<T: Real>(
    calls: &[LabelledCall<T>],
    tag: RepresentationTag,
    scale: Scale,
    metric: Metric,
    max_shift_ms: f64,
    pipeline: &PipelineConfig,
    cache: &ArtifactCache<T>,
) -> Result<std::sync::Arc<DistanceMatrix<T>>> {
    let (keys, specs) = representation_set(calls, tag, pipeline, cache)?;
    let ids: Vec<String> = calls.iter().map(|c| c.call_id.clone()).collect();
    let mut parts: Vec<Vec<u8>> = vec![
        b"distances".to_vec(),
        format!("{scale}/{metric}/{max_shift_ms}").into_bytes(),
        serde_json::to_vec(pipeline)?,
    ];
    parts.extend(keys.into_iter().map(String::into_bytes));
    parts.extend(ids.iter().map(|i| i.clone().into_bytes()));
    let key = content_hash(parts.iter().map(Vec::as_slice));
    cache.distance_matrix(&key, || {
        let scaled = specs
            .iter()
            .map(|s| apply_scale(s, scale, pipeline))
            .collect::<Result<Vec<_>>>()?;
        Ok(pairwise_matrix(&scaled, &ids, metric, max_shift_ms)?
            .with_tags(Some(MetricTag { metric, scale }), Some(tag)))
    })
}

/// Runs every cell of the grid. A failing cell is recorded with its error and
/// the remaining cells still run. Representation artifacts are shared across
/// the scale and metric cells that use them.
pub fn run_grid<T: Real>(
    calls: &[LabelledCall<T>],
    grid: &ExperimentGrid,
    pipeline: &PipelineConfig,
    cache: &ArtifactCache<T>,
) -> Result<Vec<CellResult>> {
    grid.validate()?;
    if calls.len() <= grid.k {
        return Err(Error::TooFewCalls {
            needed: grid.k + 1,
            got: calls.len(),
        });
    }
    let labels: Vec<String> = calls.iter().map(|c| c.individual_id.clone()).collect();
    let chance = chance_level(&labels);
    let mut results = Vec::new();
    for (representation, scale, metric) in grid.cells() {
        let start = Instant::now();
        let outcome = cell_matrix(calls, representation, scale, metric, grid.max_shift_ms, pipeline, cache)
            .and_then(|dm| loo_accuracy(&dm, &labels, grid.k));
        let (accuracy, status) = match outcome {
            Ok(report) => (Some(report.accuracy), "ok".to_string()),
            Err(e) => {
                log::warn!("cell {representation} {scale} {metric} failed: {e}");
                (None, format!("failed: {e}"))
            }
        };
        results.push(CellResult {
            representation,
            scale,
            metric,
            accuracy,
            chance_level: chance,
            n_calls: calls.len(),
            status,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(results)
}
