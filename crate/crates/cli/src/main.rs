//! `callkit`: identify individuals from their calls.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use callkit::distances::{pairwise_matrix, DistanceMatrix, Metric, RepresentationTag, Scale, DEFAULT_MAX_SHIFT_MS};
use callkit::experiments::{self, ArtifactCache, PipelineConfig, Precision, RunConfig};
use callkit::signal::{self, LabelRow, LabelledCall};
use callkit::{adft, knn, lmnn, lpc, spectra, synth, tsne, Error, Real, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "callkit", version, about = "Spectral analysis and individual identification of animal calls")]
struct Cli {
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and check a labelled corpus; optionally re-export it as PCM WAV
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write every call (from its onset) to this directory
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        bits: u16,
    },
    /// Generate a synthetic corpus (WAVs, labels.csv, profiles.json)
    Synth {
        #[arg(long, default_value_t = 20)]
        individuals: usize,
        #[arg(long, default_value_t = 30)]
        calls: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// default, source_identity or band_identity
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-call spectrograms of one representation
    Spectrogram {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "raw/stft")]
        representation: RepresentationTag,
        #[arg(long, default_value = "mag")]
        scale: Scale,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Also write a CSV matrix next to each binary file
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// LPC residual WAVs or filter-spectrum CSVs
    Lpc {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = lpc::DEFAULT_ORDER)]
        order: usize,
        /// residual or filter
        #[arg(long, default_value = "residual")]
        emit: String,
        #[arg(long, default_value_t = spectra::DEFAULT_FRAME_SIZE)]
        frame_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adaptive DFT: harmonic sets (CSV) and regridded spectrograms (binary)
    Adft {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, overrides_with = "no_refine")]
        refine: bool,
        #[arg(long)]
        no_refine: bool,
        #[arg(long, default_value_t = adft::DEFAULT_F_MIN)]
        fmin: f64,
        #[arg(long, default_value_t = adft::DEFAULT_F_MAX)]
        fmax: f64,
        #[arg(long, default_value_t = adft::DEFAULT_WINDOW_PERIODS)]
        window_periods: f64,
        #[arg(long, default_value_t = PipelineConfig::default().refine_iters)]
        refine_iters: usize,
        #[arg(long, default_value = "raw")]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise distance matrix (.csv or binary, by extension)
    Distances {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "raw/stft")]
        representation: RepresentationTag,
        #[arg(long, default_value = "euclidean")]
        metric: Metric,
        #[arg(long, default_value = "log")]
        scale: Scale,
        #[arg(long, default_value_t = DEFAULT_MAX_SHIFT_MS)]
        max_shift_ms: f64,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out kNN over a distance matrix
    Classify {
        distances: PathBuf,
        labels: PathBuf,
        #[arg(long, default_value_t = knn::DEFAULT_K)]
        k: usize,
        /// Write the report as JSON here
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Learn an LMNN metric on pooled spectrogram pixels
    Lmnn {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "raw/stft")]
        representation: RepresentationTag,
        #[arg(long, default_value = "log")]
        scale: Scale,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = lmnn::DEFAULT_MU)]
        mu: f64,
        #[arg(long, default_value_t = lmnn::DEFAULT_MAX_ITERS)]
        iters: usize,
        /// Output dimension (leading principal axes); 0 keeps the full span
        #[arg(long, default_value_t = lmnn::DEFAULT_OUT_DIM)]
        dim: usize,
        /// Pooled grid, frames x bands
        #[arg(long, default_value = "48x64", value_parser = parse_pool)]
        pool: (usize, usize),
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// 2-D t-SNE embedding of a distance matrix
    Tsne {
        distances: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Labels CSV for the label column
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the classification grid; exits nonzero if any cell failed
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set k=5 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Directory of WAV files
    dir: PathBuf,
    /// Labels CSV (filename,individual_id); defaults to <dir>/labels.csv
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<LabelledCall<f64>>> {
        load(&self.dir, self.labels.as_deref())
    }
}

#[derive(Args, Debug)]
struct AnalysisArgs {
    #[arg(long, default_value_t = spectra::DEFAULT_FRAME_SIZE)]
    frame_size: usize,
    #[arg(long, default_value_t = spectra::DEFAULT_OVERLAP)]
    overlap: f64,
    #[arg(long, default_value_t = lpc::DEFAULT_ORDER)]
    lpc_order: usize,
    #[arg(long, default_value_t = spectra::DEFAULT_FLOOR_DB)]
    floor_db: f64,
}

impl AnalysisArgs {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            frame_size: self.frame_size,
            overlap: self.overlap,
            lpc_order: self.lpc_order,
            floor_db: self.floor_db,
            ..PipelineConfig::default()
        }
    }
}

fn parse_pool(s: &str) -> std::result::Result<(usize, usize), String> {
    let (f, b) = s.split_once('x').ok_or("expected FRAMESxBANDS, e.g. 48x64")?;
    let f = f.parse().map_err(|e| format!("{e}"))?;
    let b = b.parse().map_err(|e| format!("{e}"))?;
    Ok((f, b))
}

fn load<T: Real>(dir: &Path, labels: Option<&Path>) -> Result<Vec<LabelledCall<T>>> {
    let labels = labels.map(Path::to_path_buf).unwrap_or_else(|| dir.join("labels.csv"));
    let calls = signal::load_corpus(dir, &labels)?;
    log::info!("loaded {} calls from {}", calls.len(), dir.display());
    Ok(calls)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidParameter(format!("{}: {e}", dir.display())))
}

fn ingest(dir: &Path, labels: Option<&Path>, export: Option<&Path>, bits: u16) -> Result<()> {
    let calls = load::<f64>(dir, labels)?;
    let mut individuals: Vec<&str> = calls.iter().map(|c| c.individual_id.as_str()).collect();
    individuals.sort_unstable();
    individuals.dedup();
    let rate = calls.first().map(|c| c.signal.sample_rate()).unwrap_or(0);
    let total: f64 = calls.iter().map(|c| c.signal.duration_secs()).sum();
    println!("calls        {}", calls.len());
    println!("individuals  {}", individuals.len());
    println!("sample rate  {rate} Hz");
    println!("total        {total:.2} s");
    if let Some(out) = export {
        create_dir(out)?;
        let mut rows = Vec::with_capacity(calls.len());
        for c in &calls {
            let filename = format!("{}.wav", c.call_id);
            signal::write_wav(&c.signal.from_onset(), out.join(&filename), bits)?;
            rows.push(LabelRow {
                filename,
                individual_id: c.individual_id.clone(),
            });
        }
        signal::write_labels(out.join("labels.csv"), &rows)?;
        println!("exported to  {}", out.display());
    }
    Ok(())
}

fn synth_cmd(individuals: usize, calls: usize, seed: u64, preset: &str, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth_preset", preset.to_string()),
        ("synth_individuals", individuals.to_string()),
        ("synth_calls", calls.to_string()),
        ("synth_seed", seed.to_string()),
    ] {
        cfg.set(k, &v).map_err(Error::InvalidParameter)?;
    }
    let corpus = synth::generate_corpus(&cfg.corpus_config())?;
    corpus.write(out)?;
    println!("wrote {} calls to {}", corpus.calls.len(), out.display());
    Ok(())
}

fn representations(
    calls: &[LabelledCall<f64>],
    tag: RepresentationTag,
    scale: Scale,
    pipeline: &PipelineConfig,
) -> Result<Vec<spectra::Spectrogram<f64>>> {
    if !tag.is_valid() {
        return Err(Error::InvalidParameter(format!("{tag} is not a valid representation")));
    }
    let cache = ArtifactCache::in_memory();
    let (_, specs) = experiments::representation_set(calls, tag, pipeline, &cache)?;
    specs
        .iter()
        .map(|s| experiments::apply_scale(s, scale, pipeline))
        .collect()
}

fn spectrogram_cmd(
    corpus: &CorpusArgs,
    tag: RepresentationTag,
    scale: Scale,
    pipeline: &PipelineConfig,
    csv: bool,
    out: &Path,
) -> Result<()> {
    let calls = corpus.load()?;
    let specs = representations(&calls, tag, scale, pipeline)?;
    create_dir(out)?;
    for (c, s) in calls.iter().zip(&specs) {
        spectra::write_bin(s, out.join(format!("{}.bin", c.call_id)))?;
        if csv {
            spectra::write_csv(&s.values, out.join(format!("{}.csv", c.call_id)))?;
        }
    }
    println!("wrote {} spectrograms to {}", specs.len(), out.display());
    Ok(())
}

fn lpc_cmd(corpus: &CorpusArgs, order: usize, emit: &str, frame_size: usize, out: &Path) -> Result<()> {
    if emit != "residual" && emit != "filter" {
        return Err(Error::InvalidParameter(format!("--emit must be residual or filter, not {emit}")));
    }
    let calls = corpus.load()?;
    create_dir(out)?;
    for c in &calls {
        let x = c.signal.from_onset();
        let model = lpc::fit_lpc(&x, order)?;
        if emit == "residual" {
            signal::write_wav(&lpc::residual(&x, &model), out.join(format!("{}.wav", c.call_id)), 24)?;
        } else {
            let n_bins = frame_size / 2 + 1;
            let env = lpc::lpc_spectrum(&model, n_bins)?;
            let path = out.join(format!("{}.csv", c.call_id));
            let mut text = String::from("freq_hz,magnitude\n");
            let step = f64::from(x.sample_rate()) / frame_size as f64;
            for (b, v) in env.iter().enumerate() {
                text.push_str(&format!("{},{v}\n", b as f64 * step));
            }
            std::fs::write(&path, text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        }
    }
    println!("wrote {} {emit} files to {}", calls.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn adft_cmd(
    corpus: &CorpusArgs,
    refine: bool,
    fmin: f64,
    fmax: f64,
    window_periods: f64,
    refine_iters: usize,
    source: &str,
    out: &Path,
) -> Result<()> {
    let transform = if refine { "adft_refined" } else { "adft_unrefined" };
    let tag: RepresentationTag = format!("{source}/{transform}").parse()?;
    let pipeline = PipelineConfig {
        f_min: fmin,
        f_max: fmax,
        window_periods,
        refine_iters,
        ..PipelineConfig::default()
    };
    let calls = corpus.load()?;
    create_dir(out)?;
    for c in &calls {
        let x = experiments::source_signal(&c.signal, tag.source, &pipeline)?;
        let mut track = adft::halve_f0(&adft::estimate_f0_track(
            &c.signal.from_onset(),
            &adft::F0Config::with_range(fmin, fmax),
        )?);
        if refine {
            let rc = adft::RefineConfig {
                max_iters: refine_iters,
                window_periods,
                ..adft::RefineConfig::default()
            };
            track = adft::refine_f0(&x, &track, &rc)?;
        }
        let hspec = adft::adft_spectrogram(&x, &track, window_periods)?;
        let fs = f64::from(hspec.sample_rate);
        let mut text = String::from("t_s,k,freq_hz,magnitude\n");
        for frame in &hspec.frames {
            let t = frame.time as f64 / fs;
            for (k, (f, m)) in frame.harmonic_freqs().iter().zip(frame.magnitudes()).enumerate() {
                text.push_str(&format!("{t},{},{f},{m}\n", k + 1));
            }
        }
        let path = out.join(format!("{}.harmonics.csv", c.call_id));
        std::fs::write(&path, text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        let spec = experiments::magnitude_representation(&c.signal, tag, &pipeline)?;
        spectra::write_bin(&spec, out.join(format!("{}.bin", c.call_id)))?;
    }
    println!("wrote {} harmonic sets to {}", calls.len(), out.display());
    Ok(())
}

fn distances_cmd(
    corpus: &CorpusArgs,
    tag: RepresentationTag,
    metric: Metric,
    scale: Scale,
    max_shift_ms: f64,
    pipeline: &PipelineConfig,
    out: &Path,
) -> Result<()> {
    let calls = corpus.load()?;
    let specs = representations(&calls, tag, scale, pipeline)?;
    let ids: Vec<String> = calls.iter().map(|c| c.call_id.clone()).collect();
    let dm = pairwise_matrix(&specs, &ids, metric, max_shift_ms)?.with_tags(
        Some(callkit::distances::MetricTag { metric, scale }),
        Some(tag),
    );
    dm.write(out)?;
    println!("wrote {n}x{n} matrix to {}", out.display(), n = dm.len());
    Ok(())
}

/// Labels for the matrix rows, matched on call id.
fn labels_for(dm: &DistanceMatrix<f64>, labels: &Path) -> Result<Vec<String>> {
    let rows = signal::read_labels(labels)?;
    let map: std::collections::HashMap<String, String> = rows
        .into_iter()
        .map(|r| (signal::call_id_for(&r.filename), r.individual_id))
        .collect();
    dm.call_ids()
        .iter()
        .map(|id| {
            map.get(id)
                .cloned()
                .ok_or_else(|| Error::InvalidParameter(format!("no label for call {id}")))
        })
        .collect()
}

fn classify_cmd(distances: &Path, labels: &Path, k: usize, json: Option<&Path>) -> Result<()> {
    let dm = DistanceMatrix::<f64>::read(distances)?;
    let labels = labels_for(&dm, labels)?;
    let report = knn::loo_accuracy(&dm, &labels, k)?;
    print!("{report}");
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn lmnn_cmd(
    corpus: &CorpusArgs,
    tag: RepresentationTag,
    scale: Scale,
    config: &lmnn::LmnnConfig,
    pool: (usize, usize),
    pipeline: &PipelineConfig,
    out: &Path,
) -> Result<()> {
    let calls = corpus.load()?;
    let specs = representations(&calls, tag, scale, pipeline)?;
    let labels: Vec<String> = calls.iter().map(|c| c.individual_id.clone()).collect();
    let features = lmnn::FeatureMatrix::from_spectrograms(&specs, labels, pool.0, pool.1)?;
    let metric = lmnn::lmnn_fit(&features, config)?;
    create_dir(out)?;
    lmnn::write_projection(&metric, out.join("projection.bin"))?;
    let map = lmnn::importance_map(&metric)?;
    spectra::write_csv(&map, out.join("importance.csv"))?;
    spectra::write_csv(&lmnn::rank_transform(&map), out.join("importance_rank.csv"))?;
    let first = metric.loss_history.first().copied().unwrap_or(f64::NAN);
    let last = metric.loss_history.last().copied().unwrap_or(f64::NAN);
    println!(
        "loss {first:.4} -> {last:.4} over {} steps; wrote {}",
        metric.loss_history.len().saturating_sub(1),
        out.display()
    );
    Ok(())
}

fn tsne_cmd(distances: &Path, config: &tsne::TsneConfig, labels: Option<&Path>, out: &Path) -> Result<()> {
    let dm = DistanceMatrix::<f64>::read(distances)?;
    let labels = labels.map(|l| labels_for(&dm, l)).transpose()?;
    let embedding = tsne::tsne(&dm, config)?;
    embedding.write_csv(out, labels.as_deref())?;
    println!(
        "final KL {:.4}; wrote {}",
        embedding.kl_history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn run_typed<T: Real>(cfg: &RunConfig) -> Result<Vec<experiments::CellResult>> {
    let calls: Vec<LabelledCall<T>> = match &cfg.corpus_dir {
        Some(dir) => load(dir, cfg.labels_path().as_deref())?,
        None => {
            let corpus = synth::generate_corpus(&cfg.corpus_config())?;
            log::info!("generated {} synthetic calls", corpus.calls.len());
            corpus
                .calls
                .into_iter()
                .map(|c| LabelledCall {
                    signal: c.signal.cast(),
                    individual_id: c.individual_id,
                    call_id: c.call_id,
                })
                .collect()
        }
    };
    let cache = match &cfg.cache_dir {
        Some(dir) => ArtifactCache::on_disk(dir)?,
        None => ArtifactCache::in_memory(),
    };
    experiments::run_grid(&calls, &cfg.grid, &cfg.pipeline, &cache)
}

/// Returns whether every cell succeeded.
fn run_cmd(config: Option<&Path>, overrides: &[String]) -> Result<bool> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (i, o) in overrides.iter().enumerate() {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("override {} ('{o}') is not KEY=VALUE", i + 1),
        })?;
        cfg.set(k, v).map_err(|reason| Error::Config { line: 0, reason })?;
    }
    cfg.grid.validate()?;
    if cfg.threads > 0 {
        set_threads(cfg.threads);
    }
    let results = match cfg.precision {
        Precision::F64 => run_typed::<f64>(&cfg)?,
        Precision::F32 => run_typed::<f32>(&cfg)?,
    };
    let files = experiments::emit_report(&results, &cfg.out_dir, "results")?;
    for r in &results {
        let acc = r.accuracy.map(|a| format!("{:.1}%", 100.0 * a)).unwrap_or_else(|| "-".into());
        println!("{:<26} {:<4} {:<10} {acc:>7}  {}", r.representation, r.scale, r.metric, r.status);
    }
    println!("wrote {} and {}", files.csv.display(), files.svg.display());
    Ok(results.iter().all(|r| r.succeeded()))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest {
            dir,
            labels,
            export,
            bits,
        } => ingest(&dir, labels.as_deref(), export.as_deref(), bits)?,
        Command::Synth {
            individuals,
            calls,
            seed,
            preset,
            out,
        } => synth_cmd(individuals, calls, seed, &preset, &out)?,
        Command::Spectrogram {
            corpus,
            representation,
            scale,
            analysis,
            csv,
            out,
        } => spectrogram_cmd(&corpus, representation, scale, &analysis.pipeline(), csv, &out)?,
        Command::Lpc {
            corpus,
            order,
            emit,
            frame_size,
            out,
        } => lpc_cmd(&corpus, order, &emit, frame_size, &out)?,
        Command::Adft {
            corpus,
            refine,
            no_refine,
            fmin,
            fmax,
            window_periods,
            refine_iters,
            source,
            out,
        } => adft_cmd(&corpus, refine || !no_refine, fmin, fmax, window_periods, refine_iters, &source, &out)?,
        Command::Distances {
            corpus,
            representation,
            metric,
            scale,
            max_shift_ms,
            analysis,
            out,
        } => distances_cmd(&corpus, representation, metric, scale, max_shift_ms, &analysis.pipeline(), &out)?,
        Command::Classify {
            distances,
            labels,
            k,
            json,
        } => classify_cmd(&distances, &labels, k, json.as_deref())?,
        Command::Lmnn {
            corpus,
            representation,
            scale,
            k,
            mu,
            iters,
            dim,
            pool,
            analysis,
            out,
        } => {
            let config = lmnn::LmnnConfig {
                k,
                mu,
                max_iters: iters,
                out_dim: (dim > 0).then_some(dim),
                ..lmnn::LmnnConfig::default()
            };
            lmnn_cmd(&corpus, representation, scale, &config, pool, &analysis.pipeline(), &out)?
        }
        Command::Tsne {
            distances,
            perplexity,
            seed,
            iters,
            labels,
            out,
        } => {
            let config = tsne::TsneConfig {
                perplexity,
                seed,
                iters,
                ..tsne::TsneConfig::default()
            };
            tsne_cmd(&distances, &config, labels.as_deref(), &out)?
        }
        Command::Run { config, overrides } => return run_cmd(config.as_deref(), &overrides),
    }
    Ok(true)
}

/// The first call wins; later ones only log.
fn set_threads(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::info!("thread pool already sized: {e}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        set_threads(cli.threads);
    }
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("callkit: some cells failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("callkit: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
