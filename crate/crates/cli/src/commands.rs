use std::fs;
use std::path::PathBuf;

use bicurnet::decoder::Bicurnet;
use bicurnet::features::{read_dataset, write_dataset, FeatureBank, FeatureTag, WindowSpec};
use bicurnet::io::{write_eeg_csv, write_markers_csv, write_trajectory_csv};
use bicurnet::synth::Coupling;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{self, *};

#[derive(Debug, Parser)]
#[command(name = "bicurnet", version, about = "Decode elbow trajectories from EEG windows")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load_or_default(self.config.as_deref())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CouplingArg {
    LinearDelta,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sessions as EEG, trajectory and marker CSV files.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        groups: Option<u32>,
        /// Drive-to-background ratio in dB.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
        #[arg(long, value_enum)]
        coupling: Option<CouplingArg>,
    },
    /// Add ocular and EMG-like artifacts to stored sessions.
    InjectArtifacts {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Resample, remove baseline wander and normalise stored sessions.
    Preprocess {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute feature matrices of preprocessed sessions.
    Features {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated tags such as V_com,V_delta,V_delta_SH.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
    },
    /// Cut lagged windows from stored features and split them.
    Dataset {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        feature: Option<String>,
        #[arg(long)]
        window_ms: Option<u32>,
        #[arg(long)]
        lag_ms: Option<u32>,
    },
    /// Train a decoder on a dataset directory.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and write trajectory overlays.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train and test every feature × window × lag cell; finished cells are reused.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        windows: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        lags: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
    },
    /// Rebuild the report of a sweep directory.
    Report {
        #[arg(long)]
        sweep: PathBuf,
    },
    /// Run every stage for the configured cell.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_tags(tags: &[String]) -> Result<Vec<FeatureTag>> {
    tags.iter().map(|t| t.parse::<FeatureTag>().map_err(CliError::from)).collect()
}

/// Executes one command, returning the lines it prints.
pub fn execute(command: Command) -> Result<Vec<String>> {
    let mut out = Vec::new();
    match command {
        Command::Synth { config, out: dir, trials, seed, groups, snr_db, coupling } => {
            let mut cfg = config.load()?;
            if let Some(n) = trials {
                cfg.synth.n_trials = n;
            }
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            if let Some(g) = groups {
                cfg.data.groups = g;
            }
            if let Some(s) = snr_db {
                cfg.synth.noise_snr_db = Some(s);
            }
            if let Some(c) = coupling {
                cfg.synth.coupling = match c {
                    CouplingArg::LinearDelta => Coupling::LinearDelta,
                    CouplingArg::None => Coupling::None,
                };
            }
            cfg.synth.validate()?;
            if cfg.data.groups == 0 {
                return Err(CliError::usage("synth", "groups must be at least 1"));
            }
            let sessions = synth_sessions(&cfg)?;
            for d in save_sessions(&sessions, &dir)? {
                out.push(format!("wrote {}", d.display()));
            }
        }
        Command::InjectArtifacts { config, input, out: dir, seed } => {
            let cfg = config.load()?;
            let mut spec = cfg.preprocess.artifacts.unwrap_or_default();
            if let Some(s) = seed {
                spec.seed = s;
            }
            let sessions = load_sessions(&input)?;
            let noisy = sessions.iter().map(|s| add_artifacts(s, &spec)).collect::<Result<Vec<_>>>()?;
            for d in save_sessions(&noisy, &dir)? {
                out.push(format!("wrote {}", d.display()));
            }
        }
        Command::Preprocess { config, input, out: dir } => {
            let cfg = config.load()?;
            let sessions = load_sessions(&input)?;
            let pre = sessions.iter().map(|s| preprocess_session(s, &cfg.preprocess)).collect::<Result<Vec<_>>>()?;
            for d in save_sessions(&pre, &dir)? {
                out.push(format!("wrote {}", d.display()));
            }
        }
        Command::Features { config, input, out: dir, features } => {
            let cfg = config.load()?;
            let tags = if features.is_empty() { vec![cfg.features.tag] } else { parse_tags(&features)? };
            let montage = montage_for(&cfg)?;
            let sessions = load_sessions(&input)?;
            for s in &sessions {
                let bank = FeatureBank::compute(&s.eeg, &montage, &cfg.features.wavelet, &cfg.features.method)?;
                let p = PreparedSession {
                    group: s.group,
                    labels: s.eeg.labels().to_vec(),
                    bank,
                    trajectory: s.trajectory.clone(),
                    markers: s.markers.clone(),
                };
                let target = session_dir(&dir, s.group, sessions.len());
                fs::create_dir_all(&target)?;
                write_trajectory_csv(&s.trajectory, target.join(TRAJECTORY_FILE))?;
                write_markers_csv(&s.markers, target.join(MARKERS_FILE))?;
                for &tag in &tags {
                    let path = target.join(format!("{tag}.csv"));
                    write_eeg_csv(&feature_record(&p, tag)?, &path)?;
                    out.push(format!("wrote {}", path.display()));
                }
            }
        }
        Command::Dataset { config, input, out: dir, feature, window_ms, lag_ms } => {
            let cfg = config.load()?;
            let tag = match feature {
                Some(f) => f.parse::<FeatureTag>()?,
                None => cfg.features.tag,
            };
            let window = WindowSpec {
                window_ms: window_ms.unwrap_or(cfg.window.window_ms),
                lag_ms: lag_ms.unwrap_or(cfg.window.lag_ms),
                ..cfg.window
            };
            window.validate()?;
            let file = format!("{tag}.csv");
            let mut examples = Vec::new();
            for (g, sdir) in find_sessions(&input, &file)? {
                let s = load_session_files(g, &sdir.join(&file), &sdir.join(TRAJECTORY_FILE), Some(&sdir.join(MARKERS_FILE)))?;
                examples.extend(examples_from_features(s.eeg.samples(), s.eeg.t0(), (&s.trajectory, &s.markers, g), &window)?);
            }
            let n_channels = examples.first().map_or(0, |e| e.x.nrows());
            let split = pipeline::split(examples, &cfg)?;
            let manifest = dataset_manifest(&split, tag, &window, n_channels);
            write_dataset(&dir, &split, &manifest)?;
            out.push(format!(
                "wrote {} ({} train, {} val, {} test windows)",
                dir.display(),
                manifest.counts.0,
                manifest.counts.1,
                manifest.counts.2
            ));
        }
        Command::Train { config, dataset, out: dir, epochs, seed } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.model.epochs = e;
            }
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            let (split, manifest) = read_dataset(&dataset)?;
            let (model, report) = train_model(&split, &cfg, manifest.n_channels, &manifest.window)?;
            fs::create_dir_all(&dir)?;
            model.save(dir.join(CHECKPOINT_FILE))?;
            write_json(&dir.join(TRAIN_REPORT_FILE), &report)?;
            out.push(format!("train pcc {:.4}", report.train_eval.pcc_mean));
            if let Some(t) = &report.test {
                out.push(format!("test pcc {:.4} ± {:.4} over {} windows", t.pcc_mean, t.pcc_std, t.n_windows));
            }
        }
        Command::Eval { checkpoint, dataset, out: dir, split } => {
            let mut model = Bicurnet::load(&checkpoint)?;
            let (data, manifest) = read_dataset(&dataset)?;
            let examples = match split {
                SplitArg::Train => &data.train,
                SplitArg::Val => &data.val,
                SplitArg::Test => &data.test,
            };
            if examples.is_empty() {
                return Err(CliError::data("eval", "selected split is empty"));
            }
            let report = model.evaluate(examples)?;
            fs::create_dir_all(&dir)?;
            write_json(&dir.join(EVAL_FILE), &report)?;
            fs::write(dir.join(OVERLAY_FILE), overlay_csv(&mut model, examples, &manifest.window)?)?;
            out.push(format!("pcc {:.4} ± {:.4} (concatenated {:.4}), mse {:.4}", report.pcc_mean, report.pcc_std, report.pcc_concat, report.mse));
        }
        Command::Sweep { config, out: dir, windows, lags, features } => {
            let mut cfg = config.load()?;
            if !windows.is_empty() {
                cfg.sweep.windows_ms = windows;
            }
            if !lags.is_empty() {
                cfg.sweep.lags_ms = lags;
            }
            if !features.is_empty() {
                cfg.sweep.features = parse_tags(&features)?;
            }
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            let outcome = sweep(&cfg, &dir, workers_from_env()?)?;
            out.push(format!(
                "{} cells computed, {} reused, {} failed",
                outcome.computed.len(),
                outcome.reused.len(),
                outcome.failures.len()
            ));
            for f in &outcome.failures {
                out.push(format!("failed {}: {}", f.cell, f.error));
            }
            match outcome.report {
                Some(r) => out.push(r.table()),
                None => return Err(CliError::numeric("sweep", "every cell failed")),
            }
        }
        Command::Report { sweep } => {
            out.push(report_from_cells(&sweep)?.table());
        }
        Command::Run { config, out: dir } => {
            let mut cfg = config.load()?;
            if let Some(d) = dir {
                cfg.out_dir = d;
            }
            let summary = run_pipeline(&cfg)?;
            out.push(format!(
                "{} test pcc {:.4} ± {:.4}; artifacts in {}",
                summary.cell.key(),
                summary.cell.test.pcc_mean,
                summary.cell.test.pcc_std,
                summary.out_dir.display()
            ));
        }
    }
    Ok(out)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
