//! Stage functions shared by the subcommands, the sweep runner and the
//! end-to-end run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use bicurnet::decoder::{build_bicurnet, train, Bicurnet, EvalReport, TrainReport};
use bicurnet::features::{
    make_windows, split_dataset, write_dataset, DatasetManifest, DatasetSplit, Family, FeatureBank, FeatureTag, WindowSpec,
    WindowedExample,
};
use bicurnet::harmonics::{lm_pairs, DEFAULT_ORDER};
use bicurnet::io::{load_eeg_csv, load_markers_csv, load_trajectory_csv, write_eeg_csv, write_markers_csv, write_trajectory_csv};
use bicurnet::metrics::{sweep_report, SweepReport, SweepResult};
use bicurnet::montage::{builtin_montage_1020, Montage};
use bicurnet::preprocess::{inject_artifacts, normalize_amplitude, remove_baseline, resample, ArtifactSpec};
use bicurnet::synth::synthesize;
use bicurnet::{EegRecord, JointAngleRecord, TrialMarkerSet};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{PreprocessConfig, RunConfig};
use crate::error::{CliError, Result};

pub const EEG_FILE: &str = "eeg.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MARKERS_FILE: &str = "markers.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_FILE: &str = "eval.json";
pub const OVERLAY_FILE: &str = "overlay.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const FAILURES_FILE: &str = "failures.json";
pub const OVERLAY_HEADER: &str = "window,group,trial_id,sample,time_s,actual_deg,predicted_deg";

/// Parallel sweep workers; defaults to one.
pub const WORKERS_ENV: &str = "BICURNET_WORKERS";

/// One recording session; `group` plays the role of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub group: u32,
    pub eeg: EegRecord,
    pub trajectory: JointAngleRecord,
    pub markers: TrialMarkerSet,
}

// ---------------------------------------------------------------------------
// session storage

/// Directory of group `g` under `root`: the root itself for a single
/// session, `group_<g>` otherwise.
pub fn session_dir(root: &Path, group: u32, n_groups: usize) -> PathBuf {
    if n_groups == 1 {
        root.to_path_buf()
    } else {
        root.join(format!("group_{group}"))
    }
}

/// Session directories under `root` with their group ids.
pub fn find_sessions(root: &Path, file: &str) -> Result<Vec<(u32, PathBuf)>> {
    if root.join(file).is_file() {
        return Ok(vec![(0, root.to_path_buf())]);
    }
    let mut out = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| CliError::data("io", format!("{}: {e}", root.display())))?;
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(g) = name.strip_prefix("group_").and_then(|g| g.parse::<u32>().ok()) {
            if path.join(file).is_file() {
                out.push((g, path));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::data("io", format!("no sessions with {file} under {}", root.display())));
    }
    out.sort();
    Ok(out)
}

pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_eeg_csv(&session.eeg, dir.join(EEG_FILE))?;
    write_trajectory_csv(&session.trajectory, dir.join(TRAJECTORY_FILE))?;
    write_markers_csv(&session.markers, dir.join(MARKERS_FILE))?;
    Ok(())
}

pub fn save_sessions(sessions: &[Session], root: &Path) -> Result<Vec<PathBuf>> {
    sessions
        .iter()
        .map(|s| {
            let dir = session_dir(root, s.group, sessions.len());
            save_session(s, &dir).map(|_| dir)
        })
        .collect()
}

fn load_markers_or_single(path: Option<&Path>, t0: f64) -> Result<TrialMarkerSet> {
    match path {
        Some(p) if p.is_file() => Ok(load_markers_csv(p)?),
        Some(p) if p.file_name().is_some_and(|n| n != MARKERS_FILE) => {
            Err(CliError::data("io", format!("marker file {} not found", p.display())))
        }
        _ => Ok(TrialMarkerSet::single(t0)),
    }
}

pub fn load_session_files(group: u32, eeg: &Path, trajectory: &Path, markers: Option<&Path>) -> Result<Session> {
    for p in [eeg, trajectory] {
        if !p.is_file() {
            return Err(CliError::data("io", format!("{} not found", p.display())));
        }
    }
    let eeg = load_eeg_csv(eeg)?;
    let trajectory = load_trajectory_csv(trajectory)?;
    let markers = load_markers_or_single(markers, eeg.t0())?;
    Ok(Session { group, eeg, trajectory, markers })
}

/// Every session stored under `root`.
pub fn load_sessions(root: &Path) -> Result<Vec<Session>> {
    find_sessions(root, EEG_FILE)?
        .into_iter()
        .map(|(g, dir)| load_session_files(g, &dir.join(EEG_FILE), &dir.join(TRAJECTORY_FILE), Some(&dir.join(MARKERS_FILE))))
        .collect()
}

// ---------------------------------------------------------------------------
// stages

/// Synthetic sessions, group `g` seeded with `synth.seed + g`.
pub fn synth_sessions(cfg: &RunConfig) -> Result<Vec<Session>> {
    (0..cfg.data.groups)
        .map(|g| {
            let spec = bicurnet::synth::SynthSpec { seed: cfg.synth.seed.wrapping_add(g as u64), ..cfg.synth.clone() };
            let s = synthesize(&spec)?;
            Ok(Session { group: g, eeg: s.eeg, trajectory: s.trajectory, markers: s.markers })
        })
        .collect()
}

/// Sessions named in `[data]`, or synthetic ones.
pub fn source_sessions(cfg: &RunConfig) -> Result<Vec<Session>> {
    if cfg.data.sessions.is_empty() {
        return synth_sessions(cfg);
    }
    cfg.data
        .sessions
        .iter()
        .enumerate()
        .map(|(g, p)| load_session_files(g as u32, &p.eeg, &p.trajectory, p.markers.as_deref()))
        .collect()
}

/// Artifact settings for one group; each group gets its own seed.
pub fn artifacts_for(spec: &ArtifactSpec, group: u32) -> ArtifactSpec {
    ArtifactSpec { seed: spec.seed.wrapping_add(group as u64), ..*spec }
}

pub fn add_artifacts(session: &Session, spec: &ArtifactSpec) -> Result<Session> {
    let eeg = inject_artifacts(&session.eeg, &artifacts_for(spec, session.group))?;
    Ok(Session { eeg, ..session.clone() })
}

/// Optional artifact injection, resampling, baseline removal and amplitude
/// normalisation.
pub fn preprocess_session(session: &Session, cfg: &PreprocessConfig) -> Result<Session> {
    let mut eeg = match &cfg.artifacts {
        Some(a) => inject_artifacts(&session.eeg, &artifacts_for(a, session.group))?,
        None => session.eeg.clone(),
    };
    if (eeg.fs() - cfg.target_fs).abs() > 1e-9 {
        eeg = resample(&eeg, cfg.target_fs)?;
    }
    eeg = remove_baseline(&eeg, &cfg.baseline)?;
    if cfg.normalize {
        eeg = normalize_amplitude(&eeg)?;
    }
    Ok(Session { eeg, ..session.clone() })
}

pub fn montage_for(cfg: &RunConfig) -> Result<Montage> {
    match &cfg.features.montage {
        Some(p) => Ok(Montage::from_file(p)?),
        None => Ok(builtin_montage_1020()),
    }
}

/// A preprocessed session with every feature family computed.
#[derive(Debug, Clone)]
pub struct PreparedSession {
    pub group: u32,
    pub labels: Vec<String>,
    pub bank: FeatureBank,
    pub trajectory: JointAngleRecord,
    pub markers: TrialMarkerSet,
}

pub fn prepare_session(session: &Session, cfg: &RunConfig, montage: &Montage) -> Result<PreparedSession> {
    let pre = preprocess_session(session, &cfg.preprocess)?;
    let bank = FeatureBank::compute(&pre.eeg, montage, &cfg.features.wavelet, &cfg.features.method)?;
    Ok(PreparedSession {
        group: session.group,
        labels: pre.eeg.labels().to_vec(),
        bank,
        trajectory: pre.trajectory,
        markers: pre.markers,
    })
}

pub fn prepare_sessions(sessions: &[Session], cfg: &RunConfig) -> Result<Vec<PreparedSession>> {
    let montage = montage_for(cfg)?;
    sessions.iter().map(|s| prepare_session(s, cfg, &montage)).collect()
}

/// Column labels of a feature matrix.
pub fn feature_labels(tag: FeatureTag, electrodes: &[String]) -> Vec<String> {
    let harmonics = |prefix: &str| -> Vec<String> { lm_pairs(DEFAULT_ORDER).into_iter().map(|(l, m)| format!("{prefix}_{l}_{m}")).collect() };
    match tag {
        FeatureTag::Single { family: Family::Spatial, .. } => electrodes.to_vec(),
        FeatureTag::Single { family: Family::Sh, .. } => harmonics("SH"),
        FeatureTag::Single { family: Family::H2, .. } => harmonics("H2"),
        FeatureTag::Combined => {
            let mut v = electrodes.to_vec();
            v.extend(harmonics("SH"));
            v.extend(harmonics("H2"));
            v
        }
    }
}

/// A feature matrix as a record sharing the EEG time axis.
pub fn feature_record(p: &PreparedSession, tag: FeatureTag) -> Result<EegRecord> {
    let x = p.bank.select(tag);
    let labels = feature_labels(tag, &p.labels);
    EegRecord::new(x, p.bank.fs, labels, p.bank.t0).map_err(|e| CliError::data("features", e))
}

/// Windows of `tag` from every prepared session.
pub fn examples_for(prepared: &[PreparedSession], tag: FeatureTag, window: &WindowSpec) -> Result<Vec<WindowedExample>> {
    let mut out = Vec::new();
    for p in prepared {
        let x = p.bank.select(tag);
        out.extend(make_windows(&x, p.bank.t0, &p.trajectory, window, &p.markers, p.group)?);
    }
    Ok(out)
}

/// Windows from a feature matrix stored on disk next to its trajectory.
pub fn examples_from_features(
    features: &Array2<f64>,
    features_t0: f64,
    session: (&JointAngleRecord, &TrialMarkerSet, u32),
    window: &WindowSpec,
) -> Result<Vec<WindowedExample>> {
    let (trajectory, markers, group) = session;
    Ok(make_windows(features, features_t0, trajectory, window, markers, group)?)
}

pub fn split(examples: Vec<WindowedExample>, cfg: &RunConfig) -> Result<DatasetSplit> {
    Ok(split_dataset(examples, cfg.dataset.ratios, cfg.dataset.grouping, cfg.dataset.seed)?)
}

pub fn dataset_manifest(split: &DatasetSplit, tag: FeatureTag, window: &WindowSpec, n_channels: usize) -> DatasetManifest {
    DatasetManifest {
        feature: tag,
        window: *window,
        grouping: split.grouping,
        ratios: split.ratios,
        seed: split.seed,
        n_channels,
        counts: (split.train.len(), split.val.len(), split.test.len()),
    }
}

pub fn train_model(split: &DatasetSplit, cfg: &RunConfig, n_channels: usize, window: &WindowSpec) -> Result<(Bicurnet, TrainReport)> {
    let mut model = build_bicurnet(&cfg.model_for(n_channels, window))?;
    let report = train(&mut model, split)?;
    log::info!(
        "trained {} epochs on {} windows in {:.1} s",
        report.epochs_run,
        split.train.len(),
        report.wall_time_s
    );
    Ok((model, report))
}

/// Actual and predicted target samples of every window as tidy CSV.
pub fn overlay_csv(model: &mut Bicurnet, examples: &[WindowedExample], window: &WindowSpec) -> Result<String> {
    let preds = model.predict_many(examples)?;
    let fs = window.fs;
    let lag = window.lag_samples() as f64 / fs;
    let mut out = String::from(OVERLAY_HEADER);
    out.push('\n');
    for (w, (e, p)) in examples.iter().zip(&preds).enumerate() {
        for (i, (a, q)) in e.y.iter().zip(p.iter()).enumerate() {
            let t = e.t_start + lag + i as f64 / fs;
            out += &format!("{w},{},{},{i},{t},{a},{q}\n", e.group, e.trial_id);
        }
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_report(report: &SweepReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_JSON), report.to_json() + "\n")?;
    fs::write(dir.join(REPORT_CSV), report.to_csv())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// cells

/// Outcome of training and testing one feature × window × lag cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub feature: FeatureTag,
    pub window_ms: u32,
    pub lag_ms: u32,
    pub n_channels: usize,
    /// Train, validation and test window counts.
    pub counts: (usize, usize, usize),
    pub epochs_run: usize,
    pub train: EvalReport,
    pub test: EvalReport,
    /// Settings the cell was computed under; a cached cell is reused only
    /// when these match.
    pub context: serde_json::Value,
}

impl CellResult {
    pub fn key(&self) -> String {
        cell_key(self.feature, self.window_ms, self.lag_ms)
    }

    pub fn sweep_result(&self) -> SweepResult {
        SweepResult {
            feature: self.feature.to_string(),
            window_ms: self.window_ms,
            lag_ms: self.lag_ms,
            pcc_mean: self.test.pcc_mean,
            pcc_std: self.test.pcc_std,
            n: self.test.n_windows,
        }
    }
}

pub fn cell_key(tag: FeatureTag, window_ms: u32, lag_ms: u32) -> String {
    format!("{tag}_w{window_ms}_l{lag_ms}")
}

/// Everything except the sweep grid and output location.
pub fn cell_context(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "data": cfg.data,
        "synth": cfg.synth,
        "preprocess": cfg.preprocess,
        "features": { "wavelet": cfg.features.wavelet, "method": cfg.features.method, "montage": cfg.features.montage },
        "overlap": cfg.window.overlap,
        "dataset": cfg.dataset,
        "model": cfg.model,
    })
}

/// A trained cell together with its model and split.
pub struct CellRun {
    pub result: CellResult,
    pub model: Bicurnet,
    pub split: DatasetSplit,
    pub train_report: TrainReport,
}

pub fn run_cell(prepared: &[PreparedSession], tag: FeatureTag, window: &WindowSpec, cfg: &RunConfig) -> Result<CellRun> {
    let examples = examples_for(prepared, tag, window)?;
    let n_channels = examples[0].x.nrows();
    let split = split(examples, cfg)?;
    let (mut model, train_report) = train_model(&split, cfg, n_channels, window)?;
    let test = match &train_report.test {
        Some(t) => t.clone(),
        None => model.evaluate(&split.test)?,
    };
    let result = CellResult {
        feature: tag,
        window_ms: window.window_ms,
        lag_ms: window.lag_ms,
        n_channels,
        counts: (split.train.len(), split.val.len(), split.test.len()),
        epochs_run: train_report.epochs_run,
        train: train_report.train_eval.clone(),
        test,
        context: cell_context(cfg),
    };
    Ok(CellRun { result, model, split, train_report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub report: Option<SweepReport>,
    pub cells: Vec<CellResult>,
    pub computed: Vec<String>,
    pub reused: Vec<String>,
    pub failures: Vec<CellFailure>,
}

pub fn cells_dir(dir: &Path) -> PathBuf {
    dir.join("cells")
}

/// Worker count from the environment.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::usage("sweep", format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

fn cached_cell(path: &Path, context: &serde_json::Value) -> Option<CellResult> {
    let cell: CellResult = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    (cell.context == *context).then_some(cell)
}

/// Trains every cell of `features × windows × lags` not already cached in
/// `dir/cells`, then writes the report. Failed cells are recorded and
/// skipped.
pub fn sweep(cfg: &RunConfig, dir: &Path, workers: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let sessions = source_sessions(cfg)?;
    let prepared = prepare_sessions(&sessions, cfg)?;
    sweep_prepared(cfg, &prepared, dir, workers)
}

pub fn sweep_prepared(cfg: &RunConfig, prepared: &[PreparedSession], dir: &Path, workers: usize) -> Result<SweepOutcome> {
    let grid: Vec<(FeatureTag, u32, u32)> = cfg
        .sweep
        .features
        .iter()
        .flat_map(|&f| cfg.sweep.windows_ms.iter().flat_map(move |&w| cfg.sweep.lags_ms.iter().map(move |&l| (f, w, l))))
        .collect();
    let cells = cells_dir(dir);
    fs::create_dir_all(&cells)?;
    let context = cell_context(cfg);

    let mut slots: Vec<Option<std::result::Result<CellResult, String>>> = vec![None; grid.len()];
    let mut reused = Vec::new();
    let mut todo = Vec::new();
    for (i, &(f, w, l)) in grid.iter().enumerate() {
        let key = cell_key(f, w, l);
        match cached_cell(&cells.join(format!("{key}.json")), &context) {
            Some(c) => {
                slots[i] = Some(Ok(c));
                reused.push(key);
            }
            None => todo.push(i),
        }
    }

    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::new());
    let compute = |i: usize| -> std::result::Result<CellResult, String> {
        let (f, w, l) = grid[i];
        let window = WindowSpec { window_ms: w, lag_ms: l, ..cfg.window };
        let started = Instant::now();
        let run = window.validate().map_err(CliError::from).and_then(|_| run_cell(prepared, f, &window, cfg)).map_err(|e| e.to_string())?;
        log::info!("cell {} pcc {:.3} ({:.1} s)", run.result.key(), run.result.test.pcc_mean, started.elapsed().as_secs_f64());
        write_json(&cells.join(format!("{}.json", run.result.key())), &run.result).map_err(|e| e.to_string())?;
        Ok(run.result)
    };
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(todo.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                let r = compute(i);
                done.lock().expect("no panics while held").push((i, r));
            });
        }
    });
    for (i, r) in done.into_inner().expect("workers joined") {
        slots[i] = Some(r);
    }

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut computed = Vec::new();
    for (i, slot) in slots.into_iter().enumerate() {
        let (f, w, l) = grid[i];
        let key = cell_key(f, w, l);
        match slot.expect("every cell visited") {
            Ok(c) => {
                if !reused.contains(&key) {
                    computed.push(key);
                }
                results.push(c);
            }
            Err(error) => {
                log::warn!("cell {key} failed: {error}");
                failures.push(CellFailure { cell: key, error });
            }
        }
    }
    write_json(&dir.join(FAILURES_FILE), &failures)?;
    let report = if results.is_empty() {
        None
    } else {
        let r = sweep_report(results.iter().map(CellResult::sweep_result).collect())?;
        write_report(&r, dir)?;
        Some(r)
    };
    Ok(SweepOutcome { report, cells: results, computed, reused, failures })
}

/// Rebuilds the report from the cell files under `dir`.
pub fn report_from_cells(dir: &Path) -> Result<SweepReport> {
    let cells = cells_dir(dir);
    let mut paths: Vec<PathBuf> = fs::read_dir(&cells)
        .map_err(|e| CliError::data("report", format!("{}: {e}", cells.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut results: Vec<SweepResult> = Vec::new();
    for p in paths {
        let cell: CellResult = read_json(&p)?;
        results.push(cell.sweep_result());
    }
    // report ordering follows the grid, not file names
    results.sort_by(|a, b| {
        let rank = |r: &SweepResult| r.feature.parse::<FeatureTag>().ok();
        (rank(a), a.window_ms, a.lag_ms).cmp(&(rank(b), b.window_ms, b.lag_ms))
    });
    let report = sweep_report(results)?;
    write_report(&report, dir)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// end to end

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: RunConfig,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cell: CellResult,
    pub report: SweepReport,
    pub manifest: RunManifest,
}

fn seeds(cfg: &RunConfig) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    if cfg.data.sessions.is_empty() {
        m.insert("synth".to_string(), cfg.synth.seed);
    }
    if let Some(a) = &cfg.preprocess.artifacts {
        m.insert("artifacts".to_string(), a.seed);
    }
    m.insert("dataset".to_string(), cfg.dataset.seed);
    m.insert("model".to_string(), cfg.model.seed);
    m
}

fn relative_files(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(rel) = p.strip_prefix(root) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Sessions, preprocessing, features, dataset, training, evaluation and
/// report for the configured cell, all written under `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    let tag = cfg.features.tag;
    let window = cfg.window;

    let sessions = source_sessions(cfg)?;
    save_sessions(&sessions, &out.join("sessions/raw"))?;
    let montage = montage_for(cfg)?;
    let mut prepared = Vec::with_capacity(sessions.len());
    for s in &sessions {
        let pre = preprocess_session(s, &cfg.preprocess)?;
        save_session(&pre, &session_dir(&out.join("sessions/preprocessed"), s.group, sessions.len()))?;
        let bank = FeatureBank::compute(&pre.eeg, &montage, &cfg.features.wavelet, &cfg.features.method)?;
        let p = PreparedSession { group: s.group, labels: pre.eeg.labels().to_vec(), bank, trajectory: pre.trajectory, markers: pre.markers };
        let fdir = session_dir(&out.join("features"), s.group, sessions.len());
        fs::create_dir_all(&fdir)?;
        write_eeg_csv(&feature_record(&p, tag)?, fdir.join(format!("{tag}.csv")))?;
        prepared.push(p);
    }

    let mut run = run_cell(&prepared, tag, &window, cfg)?;
    write_dataset(out.join("dataset"), &run.split, &dataset_manifest(&run.split, tag, &window, run.result.n_channels))?;
    run.model.save(out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(TRAIN_REPORT_FILE), &run.train_report)?;
    write_json(&out.join(EVAL_FILE), &run.result.test)?;
    fs::write(out.join(OVERLAY_FILE), overlay_csv(&mut run.model, &run.split.test, &window)?)?;
    let report = sweep_report(vec![run.result.sweep_result()])?;
    write_report(&report, &out)?;

    let mut artifacts = relative_files(&out)?;
    artifacts.retain(|a| a != RUN_MANIFEST);
    artifacts.push(RUN_MANIFEST.to_string());
    artifacts.sort();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: seeds(cfg),
        config: cfg.clone(),
        artifacts,
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)?;
    Ok(RunSummary { out_dir: out, cell: run.result, report, manifest })
}
