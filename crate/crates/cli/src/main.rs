//! `isosr` command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isosr::config::{ChannelSet, FoldsConfig, RunConfig};
use isosr::folds::FoldSpec;
use isosr::metrics::DomainSelection;
use isosr::patchset::DriverKind;
use isosr::pipeline::{self, ModelRef, PipelineError};
use isosr::runlog::{log_path, RunLog};
use isosr::sr::experiment;

#[derive(Parser)]
#[command(name = "isosr", version, about = "Super-resolution of gridded isoprene emissions")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory relative inputs resolve against [env: ISOSR_DATA_DIR].
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the toy dataset and its run.toml.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        dates: usize,
    },
    /// Derive cropland and tree-cover percentages on the emission grid.
    Preprocess {
        #[arg(long)]
        emission: Option<PathBuf>,
        #[arg(long)]
        land_cover: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut emission maps into patches and write a patch store.
    ExtractPatches(ExtractArgs),
    /// Build the climate-specific folds.
    BuildFolds {
        /// Patch store directory or its index.jsonl.
        #[arg(long)]
        index: PathBuf,
        /// Fold settings: TOML like the [folds] section, or a JSON list of fold specs.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-patch correlation and entropy between emission and one driver.
    AnalyzeStats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        driver: Option<DriverKind>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on one fold.
    Train(TrainArgs),
    /// Super-resolve patches to emission units.
    Deploy {
        /// Model file, or `bicubic`.
        #[arg(long)]
        model: ModelRef,
        #[arg(long)]
        store: PathBuf,
        /// Patch ids, whitespace separated or a JSON array.
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a model on one partition of a fold.
    Evaluate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Model file, or `bicubic`.
        #[arg(long)]
        model: ModelRef,
        /// t, i or both.
        #[arg(long)]
        domain: Option<DomainSelection>,
        #[arg(long, default_value = "test_standard")]
        partition: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare evaluation CSVs against a baseline.
    Report {
        #[arg(long = "eval", required = true)]
        evals: Vec<PathBuf>,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Run every step on freshly generated toy data.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Single-channel versus driver-stacked training on synthetic patches.
    Experiment {
        #[arg(long)]
        out: PathBuf,
        /// Constant drivers instead of informative ones.
        #[arg(long)]
        control: bool,
        /// Number of driver fields (2 trains all four channel subsets).
        #[arg(long, default_value_t = 1)]
        drivers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Args)]
struct ExtractArgs {
    /// NetCDF file or directory of files.
    #[arg(long)]
    emission: Option<PathBuf>,
    #[arg(long)]
    cl: Option<PathBuf>,
    #[arg(long)]
    tc: Option<PathBuf>,
    #[arg(long)]
    lai: Option<PathBuf>,
    #[arg(long)]
    climate: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    patch_deg: Option<f64>,
    #[arg(long)]
    stride_deg: Option<f64>,
    #[arg(long)]
    zero_thresh: Option<f64>,
    #[arg(long)]
    alpha: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// isop, isop,cl, isop,tc, isop,cl,tc or another driver list.
    #[arg(long)]
    channels: Option<ChannelSet>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// An input flag: absolute when it exists relative to the working
/// directory, otherwise left for the data directory to resolve.
fn input_flag(p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| {
        if p.is_relative() && p.exists() {
            std::path::absolute(&p).unwrap_or(p)
        } else {
            p
        }
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = Some(std::path::absolute(d).unwrap_or_else(|_| d.clone()));
    }
    Ok(cfg)
}

fn fold_spec_file(path: &Path, base: &FoldsConfig) -> Result<FoldsConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
        what: "fold spec".into(),
        path: path.to_path_buf(),
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        let custom: Vec<FoldSpec> =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        return Ok(FoldsConfig {
            custom,
            ..base.clone()
        });
    }
    toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn io<T>(r: std::io::Result<T>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Data(e.to_string()))
}

fn write_log(log: RunLog, out: &Path, step: &str) -> Result<(), PipelineError> {
    io(log.output(out).write(&log_path(out, step)))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let mut cfg = load_config(&cli)?;
    let config_input = cli.config.clone();
    let base_log = |step: &str| -> Result<RunLog, PipelineError> {
        let log = RunLog::new(step);
        match &config_input {
            Some(p) => io(log.input(p)),
            None => Ok(log),
        }
    };

    match cli.command {
        Command::Synth { out, seed, dates } => {
            let spec = isosr::synth::ToySpec {
                seed,
                n_dates: dates,
                ..Default::default()
            };
            let files = isosr::synth::write_toy(&out, &spec)?;
            eprintln!("toy data written to {}; config {}", out.display(), out.join(&files.config).display());
            write_log(base_log("synth")?.seed("seed", seed).settings(&spec)?, &out, "synth")?;
        }
        Command::Preprocess { emission, land_cover, out } => {
            if let Some(p) = input_flag(emission) {
                cfg.inputs.emission = Some(p);
            }
            if let Some(p) = input_flag(land_cover) {
                cfg.inputs.land_cover = Some(p);
            }
            let result = pipeline::preprocess(&cfg, &out)?;
            let mut log = base_log("preprocess")?.settings(&cfg.inputs)?;
            for p in [&cfg.inputs.emission, &cfg.inputs.land_cover].into_iter().flatten() {
                log = io(log.input(&cfg.resolve(p)))?;
            }
            eprintln!("wrote {} and {}", result.cl.display(), result.tc.display());
            write_log(log.output(&result.cl), &out, "preprocess")?;
        }
        Command::ExtractPatches(a) => {
            let inputs = &mut cfg.inputs;
            for (slot, flag) in [
                (&mut inputs.emission, a.emission),
                (&mut inputs.cl, a.cl),
                (&mut inputs.tc, a.tc),
                (&mut inputs.lai, a.lai),
                (&mut inputs.climate, a.climate),
            ] {
                if let Some(p) = input_flag(flag) {
                    *slot = Some(p);
                }
            }
            let p = &mut cfg.patches;
            p.patch_deg = a.patch_deg.unwrap_or(p.patch_deg);
            p.stride_deg = a.stride_deg.unwrap_or(p.stride_deg);
            p.zero_thresh = a.zero_thresh.unwrap_or(p.zero_thresh);
            p.alpha = a.alpha.unwrap_or(p.alpha);
            cfg.validate()?;
            let summary = pipeline::extract(&cfg, &a.out)?;
            eprintln!(
                "{} of {} windows retained over {} dates",
                summary.n_retained, summary.n_windows, summary.n_dates
            );
            let mut log = base_log("extract-patches")?.settings(&(&cfg.inputs, &cfg.patches, &summary))?;
            let i = &cfg.inputs;
            for p in [&i.emission, &i.cl, &i.tc, &i.lai, &i.climate].into_iter().flatten() {
                log = io(log.input(&cfg.resolve(p)))?;
            }
            write_log(log, &a.out, "extract-patches")?;
        }
        Command::BuildFolds { index, spec, out } => {
            let mut log = io(base_log("build-folds")?.input(&index))?;
            if let Some(s) = &spec {
                cfg.folds = fold_spec_file(s, &cfg.folds)?;
                log = io(log.input(s))?;
            }
            cfg.validate()?;
            let folds = pipeline::build_folds(&cfg, &index, &out)?;
            for (m, p) in &folds {
                eprintln!(
                    "{}: train {} val {} test {} spatial {} climate {} -> {}",
                    m.spec.name,
                    m.train.len(),
                    m.val.len(),
                    m.test_standard.len(),
                    m.test_unseen_spatial.len(),
                    m.test_unseen_climate.len(),
                    p.display()
                );
                log = log.output(p);
            }
            write_log(log.seed("folds", cfg.folds.seed).settings(&cfg.folds)?, &out, "build-folds")?;
        }
        Command::AnalyzeStats { store, driver, bins, out } => {
            let driver = driver.unwrap_or(cfg.stats.driver);
            let bins = bins.unwrap_or(cfg.stats.bins);
            if bins < 2 {
                return Err(PipelineError::Config("bins must be at least 2".into()));
            }
            let result = pipeline::analyze_stats(&store, driver, bins, &out)?;
            let log = io(base_log("analyze-stats")?.input(&store))?
                .output(&result.patches_csv)
                .output(&result.dates_csv)
                .settings(&(driver, bins))?;
            write_log(log, &out, "analyze-stats")?;
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            t.lr = a.lr.unwrap_or(t.lr);
            t.max_epochs = a.max_epochs.unwrap_or(t.max_epochs);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.rng_seed = a.seed.unwrap_or(t.rng_seed);
            if let Some(c) = a.channels {
                cfg.model.channels = c;
            }
            let channels = cfg.model.channels.clone();
            let result = pipeline::train(&cfg, &a.store, &a.manifest, &channels, &a.out, |e| {
                eprintln!(
                    "epoch {:>3}  train {:.6e}  val {:.6e}  lr {:.1e}",
                    e.epoch, e.train_loss, e.val_loss, e.lr
                );
            })?;
            eprintln!(
                "best epoch {} (val {:.6e}); model {}",
                result.history.best_epoch,
                result.history.best_val_loss,
                result.model.display()
            );
            let log = io(io(base_log("train")?.input(&a.store))?.input(&a.manifest))?
                .seed("rng_seed", cfg.train.rng_seed)
                .output(&result.transform)
                .settings(&(&channels, &cfg.model, &cfg.train))?;
            write_log(log, &a.out, "train")?;
        }
        Command::Deploy { model, store, ids, out } => {
            let id_list = pipeline::read_ids(&ids)?;
            let written = pipeline::deploy(&model, &store, &id_list, &out)?;
            eprintln!("{} patches written to {}", written.len(), out.display());
            let mut log = io(io(base_log("deploy")?.input(&store))?.input(&ids))?;
            if let ModelRef::File(p) = &model {
                log = io(log.input(p))?;
            }
            write_log(log, &out, "deploy")?;
        }
        Command::Evaluate {
            store,
            manifest,
            model,
            domain,
            partition,
            out,
        } => {
            let domain = domain.unwrap_or(cfg.domain);
            let report = pipeline::evaluate(&cfg, &store, &manifest, &model, domain, &partition, &out)?;
            for (d, aggs) in &report.aggregates {
                if let Some(a) = aggs.get("nmse_db") {
                    eprintln!("{d}: NMSE {:.3} dB over {} patches", a.avg, a.n);
                }
            }
            let mut log = io(io(base_log("evaluate")?.input(&store))?.input(&manifest))?;
            if let ModelRef::File(p) = &model {
                log = io(log.input(p))?;
            }
            write_log(log.settings(&(domain, &partition))?, &out, "evaluate")?;
        }
        Command::Report { evals, baseline, out } => {
            let rows = pipeline::report(&evals, &baseline, &out)?;
            for r in rows.iter().filter(|r| r.metric == "nmse_db") {
                let nir = r.nir.map_or("-".to_string(), |v| format!("{v:.4}"));
                eprintln!("{:<20} {:<12} NMSE {:>9.3} dB  NIR {nir}", r.name, r.domain, r.avg);
            }
            let mut log = io(base_log("report")?.input(&baseline))?;
            for e in &evals {
                log = io(log.input(e))?;
            }
            write_log(log, &out, "report")?;
        }
        Command::Toy { out, seed } => {
            let run = pipeline::run_toy(&out, seed)?;
            eprintln!("toy run complete; report {}", run.report.display());
            write_log(base_log("toy")?.seed("seed", seed).settings(&run)?, &out, "toy")?;
        }
        Command::Experiment {
            out,
            control,
            drivers,
            seed,
            epochs,
        } => {
            if !(1..=2).contains(&drivers) {
                return Err(PipelineError::Config("--drivers must be 1 or 2".into()));
            }
            let spec = experiment::SyntheticSpec {
                drivers,
                informative: !control,
                seed,
                ..Default::default()
            };
            let mut train_cfg = experiment::desk_config(seed);
            if let Some(e) = epochs {
                train_cfg.max_epochs = e;
            }
            let configs: Vec<Vec<usize>> = if drivers == 1 {
                vec![vec![], vec![0]]
            } else {
                vec![vec![], vec![0], vec![1], vec![0, 1]]
            };
            let data = experiment::generate(&spec);
            let result = experiment::run(&data, &spec, &configs, &cfg.model.hidden, &train_cfg, |c, e| {
                eprintln!("config {c} epoch {:>3}  val {:.6e}", e.epoch, e.val_loss);
            })?;
            eprintln!("bicubic NMSE {:.3} dB", result.bicubic_nmse_db);
            for (k, c) in result.configs.iter().enumerate() {
                let nir = if k == 0 { "-".to_string() } else { format!("{:.4}", result.nir[k - 1]) };
                eprintln!("drivers {:?}: NMSE {:.3} dB  NIR {nir}", c.drivers, c.test_nmse_db);
            }
            io(std::fs::write(&out, serde_json::to_string_pretty(&result)?))?;
            write_log(
                base_log("experiment")?.seed("seed", seed).settings(&(&spec, &train_cfg))?,
                &out,
                "experiment",
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
