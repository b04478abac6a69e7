use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::grid::ExperimentGrid;
use super::pipeline::PipelineConfig;
use crate::distances::RepresentationTag;
use crate::error::{Error, Result};
use crate::synth::CorpusConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPreset {
    Default,
    SourceIdentity,
    BandIdentity,
}

/// Everything `callkit run` needs. Read from a `key = value` file; the same
/// keys are accepted as command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory of WAV files; when unset a synthetic corpus is generated.
    pub corpus_dir: Option<PathBuf>,
    /// Labels CSV; defaults to `<corpus_dir>/labels.csv`.
    pub labels: Option<PathBuf>,
    pub synth_preset: SynthPreset,
    pub synth_individuals: usize,
    pub synth_calls: usize,
    pub synth_seed: u64,
    pub grid: ExperimentGrid,
    pub pipeline: PipelineConfig,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            labels: None,
            synth_preset: SynthPreset::Default,
            synth_individuals: 20,
            synth_calls: 30,
            synth_seed: 7,
            grid: ExperimentGrid::default(),
            pipeline: PipelineConfig::default(),
            out_dir: PathBuf::from("results"),
            cache_dir: None,
            threads: 0,
            precision: Precision::F64,
        }
    }
}

/// Every key understood by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "corpus_dir",
    "labels",
    "synth_preset",
    "synth_individuals",
    "synth_calls",
    "synth_seed",
    "representations",
    "scales",
    "metrics",
    "k",
    "max_shift_ms",
    "frame_size",
    "overlap",
    "lpc_order",
    "f_min",
    "f_max",
    "window_periods",
    "refine_iters",
    "floor_db",
    "out_dir",
    "cache_dir",
    "threads",
    "precision",
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| format!("'{value}': {e}"))
}

fn list<T: FromStr<Err = Error>>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|e: Error| e.to_string()))
        .collect()
}

impl RunConfig {
    /// Sets one key. Errors carry no line number; callers add it.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key.trim() {
            "corpus_dir" => self.corpus_dir = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "synth_preset" => {
                self.synth_preset = match value {
                    "default" => SynthPreset::Default,
                    "source_identity" => SynthPreset::SourceIdentity,
                    "band_identity" => SynthPreset::BandIdentity,
                    other => return Err(format!("unknown synth preset '{other}'")),
                }
            }
            "synth_individuals" => self.synth_individuals = parse(value)?,
            "synth_calls" => self.synth_calls = parse(value)?,
            "synth_seed" => self.synth_seed = parse(value)?,
            "representations" => {
                self.grid.representations = if value == "all" {
                    RepresentationTag::all()
                } else {
                    list(value)?
                }
            }
            "scales" => self.grid.scales = list(value)?,
            "metrics" => self.grid.metrics = list(value)?,
            "k" => self.grid.k = parse(value)?,
            "max_shift_ms" => self.grid.max_shift_ms = parse(value)?,
            "frame_size" => self.pipeline.frame_size = parse(value)?,
            "overlap" => self.pipeline.overlap = parse(value)?,
            "lpc_order" => self.pipeline.lpc_order = parse(value)?,
            "f_min" => self.pipeline.f_min = parse(value)?,
            "f_max" => self.pipeline.f_max = parse(value)?,
            "window_periods" => self.pipeline.window_periods = parse(value)?,
            "refine_iters" => self.pipeline.refine_iters = parse(value)?,
            "floor_db" => self.pipeline.floor_db = parse(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "cache_dir" => self.cache_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "threads" => self.threads = parse(value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => return Err(format!("precision must be f32 or f64, not '{other}'")),
                }
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                reason: "expected 'key = value'".into(),
            })?;
            cfg.set(key, value).map_err(|reason| Error::Config { line: i + 1, reason })?;
        }
        cfg.grid.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let base = match self.synth_preset {
            SynthPreset::Default => CorpusConfig::default(),
            SynthPreset::SourceIdentity => CorpusConfig::source_identity(self.synth_seed),
            SynthPreset::BandIdentity => CorpusConfig::band_identity(self.synth_seed),
        };
        CorpusConfig {
            n_individuals: self.synth_individuals,
            calls_each: self.synth_calls,
            master_seed: self.synth_seed,
            ..base
        }
    }

    pub fn labels_path(&self) -> Option<PathBuf> {
        self.labels
            .clone()
            .or_else(|| self.corpus_dir.as_ref().map(|d| d.join("labels.csv")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::{Metric, Scale};

    #[test]
    fn parses_every_key() {
        let text = "\
# experiment
corpus_dir = data/calls
synth_preset = source_identity
synth_individuals = 4
synth_calls = 6
synth_seed = 11
representations = raw/stft, lpc_residual/adft_refined
scales = log
metrics = manhattan
k = 5
max_shift_ms = 10   # shorter search
frame_size = 512
overlap = 0.5
lpc_order = 12
f_min = 100
f_max = 1500
window_periods = 4
refine_iters = 3
floor_db = -60
out_dir = out
cache_dir = cache
threads = 2
precision = f32
labels = data/labels.csv
";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.corpus_dir.as_deref(), Some(Path::new("data/calls")));
        assert_eq!(c.synth_preset, SynthPreset::SourceIdentity);
        assert_eq!(c.grid.representations.len(), 2);
        assert_eq!(c.grid.scales, vec![Scale::Log]);
        assert_eq!(c.grid.metrics, vec![Metric::Manhattan]);
        assert_eq!((c.grid.k, c.grid.max_shift_ms), (5, 10.0));
        assert_eq!(c.pipeline.frame_size, 512);
        assert_eq!(c.pipeline.floor_db, -60.0);
        assert_eq!(c.precision, Precision::F32);
        assert_eq!(c.labels_path().unwrap(), PathBuf::from("data/labels.csv"));
        assert_eq!(c.corpus_config().n_individuals, 4);
        assert_eq!(KEYS.len(), text.lines().filter(|l| l.contains('=')).count());
    }

    #[test]
    fn errors_carry_line_numbers() {
        match RunConfig::parse("k = 3\nbogus = 1\n") {
            Err(Error::Config { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::parse("k 3"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(
            RunConfig::parse("representations = lpc_filter/adft_refined"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(RunConfig::parse("scales = ").is_err());
    }

    #[test]
    fn defaults_cover_the_full_grid() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.grid.cells().len(), 7 * 4);
        assert!(c.labels_path().is_none());
    }
}
