//! Config-driven experiment runner behind the `bwvi` binary.
//!
//! An experiment file is TOML: an `[experiment]` section (kind, seeds,
//! output directory, emit formats), a `[target]` section, an optional
//! `[init]`, one `[[methods]]` table per optimizer to compare, and optional
//! `[snr]` / `[contour]` sections for the sweep and grid commands.
//!
//! Per method and seed the runner writes `<name>_seed<N>_trace.jsonl` (one
//! JSON object per iteration) and `<name>_seed<N>_summary.json`; with CSV
//! emission also an iteration/objective table and, for 2-D targets, contour
//! grids of the fitted Gaussian. A final `index.json` lists every artifact
//! along with the config hash and toolkit version. Re-running with a
//! modified config onto the same directory refuses to overwrite unless
//! forced.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::diagnostics::{is_diagnostics, snr_sweep_with, IsDiagnostics, SnrReport};
use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::gradients::SnrEstimator;
use crate::objectives::{estimate_vr_iwae, EstimatorConfig, ObjectiveEstimate};
use crate::gradients::GradMethod;
use crate::optimizers::{run, AdamParams, OptMethod, OptimizerConfig, StopReason};
use crate::stream::{substream, tag};
use crate::targets::{
    load_dataset, synth_logistic, BananaTarget, DatasetConfig, EggboxGmm, GaussianTarget,
    LogisticPosterior, TargetModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Eggbox,
    Banana,
    Logistic,
    SnrSweep,
    TraceCompare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitKind {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: Vec<EmitKind>,
}

fn default_emit() -> Vec<EmitKind> {
    vec![EmitKind::Json]
}

/// Target family parameters; which keys apply depends on the experiment
/// kind (or `family` for `trace_compare`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub family: Option<String>,
    // gaussian
    pub mean: Option<Vec<f64>>,
    pub cov_diag: Option<Vec<f64>>,
    // eggbox
    pub spread: Option<f64>,
    // banana
    pub dim: Option<usize>,
    pub curvature: Option<f64>,
    // synthetic logistic regression
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub theta_scale: Option<f64>,
    pub data_seed: Option<u64>,
    pub prior_var: Option<f64>,
    // logistic regression from a CSV file
    pub csv_path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub positive_label: Option<String>,
    pub pca_components: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub mean: Option<Vec<f64>>,
    pub cov_diag: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    pub method: OptMethod,
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub k: usize,
    pub m: usize,
    #[serde(default)]
    pub alpha: f64,
    pub max_iters: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_stop_window")]
    pub stop_window: usize,
    #[serde(default = "default_grad_method")]
    pub grad_method: GradMethod,
    #[serde(default)]
    pub adam: AdamParams,
}

fn default_eta() -> f64 {
    0.1
}
fn default_stop_tol() -> f64 {
    1e-4
}
fn default_stop_window() -> usize {
    20
}
fn default_grad_method() -> GradMethod {
    GradMethod::Hessian
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Importance samples for the post-fit diagnostics.
    #[serde(default = "default_is_samples")]
    pub is_samples: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { is_samples: default_is_samples() }
    }
}

fn default_is_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSection {
    pub z: Vec<f64>,
    pub ks: Vec<usize>,
    pub reps: usize,
    #[serde(default = "default_snr_m")]
    pub m: usize,
    pub estimators: Vec<SnrEstimator>,
    /// Proposal used for the sweep; defaults to the experiment init.
    pub q_mean: Option<Vec<f64>>,
    pub q_cov_diag: Option<Vec<f64>>,
}

fn default_snr_m() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSection {
    /// [x_min, x_max, y_min, y_max]
    pub bounds: [f64; 4],
    pub resolution: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub init: Option<InitSection>,
    #[serde(default)]
    pub methods: Vec<MethodSection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub snr: Option<SnrSection>,
    #[serde(default)]
    pub contour: Option<ContourSection>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::ConfigError(e.to_string()))?;
        cfg.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let hash = hex_prefix(&hasher.finalize(), 16);
        Ok((cfg, hash))
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::ConfigError("experiment.seeds must be nonempty".into()));
        }
        match self.experiment.kind {
            ExperimentKind::SnrSweep => {
                if self.snr.is_none() {
                    return Err(Error::ConfigError("snr section required for snr_sweep".into()));
                }
            }
            _ => {
                if self.methods.is_empty() {
                    return Err(Error::ConfigError("at least one [[methods]] required".into()));
                }
            }
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.methods {
            if !names.insert(&m.name) {
                return Err(Error::ConfigError(format!("duplicate method name '{}'", m.name)));
            }
        }
        if let Some(path) = &self.target.csv_path {
            if !path.exists() {
                return Err(Error::ConfigError(format!(
                    "target.csv_path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    fn target_family(&self) -> Result<&str> {
        match self.experiment.kind {
            ExperimentKind::Eggbox => Ok("eggbox"),
            ExperimentKind::Banana => Ok("banana"),
            ExperimentKind::Logistic => Ok("logistic"),
            ExperimentKind::SnrSweep | ExperimentKind::TraceCompare => self
                .target
                .family
                .as_deref()
                .ok_or_else(|| Error::ConfigError("target.family required for this kind".into())),
        }
    }

    /// Instantiate the target. `seed` feeds the synthetic dataset stream
    /// when `target.data_seed` is absent.
    pub fn build_target(&self, seed: u64) -> Result<Box<dyn TargetModel>> {
        match self.target_family()? {
            "gaussian" => {
                let mean = self
                    .target
                    .mean
                    .clone()
                    .ok_or_else(|| Error::ConfigError("target.mean required".into()))?;
                let cov = self
                    .target
                    .cov_diag
                    .clone()
                    .unwrap_or_else(|| vec![1.0; mean.len()]);
                let state = GaussianState::diagonal(
                    DVector::from_vec(mean),
                    &DVector::from_vec(cov),
                )?;
                Ok(Box::new(GaussianTarget::new(state)))
            }
            "eggbox" => {
                let spread = self.target.spread.unwrap_or(4.0);
                Ok(Box::new(EggboxGmm::symmetric_four(spread)))
            }
            "banana" => {
                let dim = self.target.dim.unwrap_or(2);
                let curvature = self.target.curvature.unwrap_or(0.03);
                Ok(Box::new(BananaTarget::new(dim, curvature)?))
            }
            "logistic" => Ok(Box::new(self.build_logistic(seed)?)),
            other => Err(Error::ConfigError(format!("unknown target.family '{other}'"))),
        }
    }

    fn build_logistic(&self, seed: u64) -> Result<LogisticPosterior> {
        if let Some(path) = &self.target.csv_path {
            let label_column = self
                .target
                .label_column
                .clone()
                .ok_or_else(|| Error::ConfigError("target.label_column required".into()))?;
            let ds_cfg = DatasetConfig {
                label_column,
                positive_label: self.target.positive_label.clone(),
                pca_components: self.target.pca_components,
            };
            let (features, labels, _) = load_dataset(path, &ds_cfg)?;
            LogisticPosterior::new(features, labels, self.target.prior_var.unwrap_or(10.0))
        } else {
            let n = self.target.n.unwrap_or(2000);
            let d = self.target.d.unwrap_or(8);
            let scale = self.target.theta_scale.unwrap_or(2.0);
            let data_seed = self.target.data_seed.unwrap_or(seed);
            let mut rng = substream(data_seed, &[tag("dataset")]);
            let mut theta = DVector::from_fn(d, |_, _| {
                use rand::Rng;
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            theta *= scale / theta.norm();
            Ok(synth_logistic(n, d, &mut rng, &theta))
        }
    }

    pub fn build_init(&self, dim: usize) -> Result<GaussianState> {
        let (mean, cov) = match &self.init {
            Some(init) => (
                init.mean.clone().unwrap_or_else(|| vec![0.0; dim]),
                init.cov_diag.clone().unwrap_or_else(|| vec![1.0; dim]),
            ),
            None => (vec![0.0; dim], vec![1.0; dim]),
        };
        if mean.len() != dim || cov.len() != dim {
            return Err(Error::ConfigError(format!(
                "init dimensions ({}, {}) do not match target dim {dim}",
                mean.len(),
                cov.len()
            )));
        }
        GaussianState::diagonal(DVector::from_vec(mean), &DVector::from_vec(cov))
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

/// Analytic reference moments when the target family has them.
fn reference_moments(cfg: &ExperimentConfig) -> Option<(DVector<f64>, DMatrix<f64>)> {
    match cfg.target_family().ok()? {
        "eggbox" => {
            let egg = EggboxGmm::symmetric_four(cfg.target.spread.unwrap_or(4.0));
            Some(egg.moments())
        }
        "gaussian" => {
            let mean = DVector::from_vec(cfg.target.mean.clone()?);
            let cov =
                DMatrix::from_diagonal(&DVector::from_vec(cfg.target.cov_diag.clone().unwrap_or_else(
                    || vec![1.0; mean.len()],
                )));
            Some((mean, cov))
        }
        _ => None,
    }
}

/// Everything recorded about one (method, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub version: String,
    pub experiment: ExperimentKind,
    pub method: MethodSection,
    pub seed: u64,
    pub stop: StopReason,
    pub n_iters: usize,
    pub final_mean: Vec<f64>,
    pub final_cov: Vec<Vec<f64>>,
    pub final_logdet_cov: f64,
    pub objective: ObjectiveEstimate,
    pub diagnostics: IsDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_cov: Option<f64>,
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFile {
    pub config_hash: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub files: Vec<String>,
    pub failures: Vec<String>,
}

/// All file paths produced by a successful experiment run.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub output_dir: PathBuf,
    pub summaries: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

fn guard_overwrite(out_dir: &Path, config_hash: &str, force: bool) -> Result<()> {
    let index_path = out_dir.join("index.json");
    if index_path.exists() && !force {
        let existing: IndexFile = serde_json::from_str(
            &fs::read_to_string(&index_path)?,
        )
        .map_err(|e| Error::ParseError(format!("existing index.json: {e}")))?;
        if existing.config_hash != config_hash {
            return Err(Error::ConfigError(format!(
                "output dir {} holds results for config {}; current config is {}. \
                 Pass --force to overwrite.",
                out_dir.display(),
                existing.config_hash,
                config_hash
            )));
        }
    }
    Ok(())
}

/// Run every (method, seed) unit of a config, writing artifacts under the
/// output directory.
pub fn run_experiment(cfg: &ExperimentConfig, config_hash: &str, ov: &Overrides) -> Result<ExperimentOutput> {
    let mut cfg = cfg.clone();
    if let Some(seed) = ov.seed {
        cfg.experiment.seeds = vec![seed];
    }
    if let Some(out) = &ov.out {
        cfg.experiment.output_dir = out.clone();
    }
    let out_dir = cfg.experiment.output_dir.clone();
    fs::create_dir_all(&out_dir)?;
    guard_overwrite(&out_dir, config_hash, ov.force)?;

    if cfg.experiment.kind == ExperimentKind::SnrSweep {
        return run_snr_experiment(&cfg, config_hash, ov);
    }

    let emit_csv = cfg.experiment.emit.contains(&EmitKind::Csv);
    let reference = reference_moments(&cfg);

    struct Unit {
        method: MethodSection,
        seed: u64,
        method_idx: usize,
    }
    let mut units = Vec::new();
    for (method_idx, method) in cfg.methods.iter().enumerate() {
        for &seed in &cfg.experiment.seeds {
            units.push(Unit { method: method.clone(), seed, method_idx });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ov.threads.max(1))
        .build()
        .map_err(|e| Error::ConfigError(e.to_string()))?;

    let results: Vec<std::result::Result<(RunSummary, Vec<PathBuf>), String>> =
        pool.install(|| {
            units
                .par_iter()
                .map(|unit| {
                    run_unit(&cfg, config_hash, unit.method_idx, &unit.method, unit.seed, emit_csv, reference.as_ref())
                        .map_err(|e| format!("{} seed {}: {e}", unit.method.name, unit.seed))
                })
                .collect()
        });

    let mut summaries = Vec::new();
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((s, fs)) => {
                summaries.push(s);
                files.extend(fs);
            }
            Err(msg) => failures.push(msg),
        }
    }

    // target contour once per experiment (2-D targets, CSV emission)
    if emit_csv {
        if let Some(contour) = &cfg.contour {
            let target = cfg.build_target(cfg.experiment.seeds[0])?;
            if target.dim() >= 2 {
                let path = out_dir.join("target_contour.csv");
                emit_contour_grid_target(target.as_ref(), contour, &path)?;
                files.push(path);
            }
        }
    }

    let index = IndexFile {
        config_hash: config_hash.to_string(),
        version: crate::version().to_string(),
        kind: cfg.experiment.kind,
        files: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        failures: failures.clone(),
    };
    let index_path = out_dir.join("index.json");
    fs::write(&index_path, serde_json::to_string_pretty(&index)?.as_bytes())?;
    files.push(index_path);

    if !failures.is_empty() {
        return Err(Error::ParseError(format!("{} run(s) failed: {}", failures.len(), failures.join("; "))));
    }
    Ok(ExperimentOutput { output_dir: out_dir, summaries, files })
}

fn run_unit(
    cfg: &ExperimentConfig,
    config_hash: &str,
    method_idx: usize,
    method: &MethodSection,
    seed: u64,
    emit_csv: bool,
    reference: Option<&(DVector<f64>, DMatrix<f64>)>,
) -> Result<(RunSummary, Vec<PathBuf>)> {
    let out_dir = &cfg.experiment.output_dir;
    let target = cfg.build_target(seed)?;
    let init = cfg.build_init(target.dim())?;
    let opt_cfg = OptimizerConfig {
        method: method.method,
        eta: method.eta,
        max_iters: method.max_iters,
        k: method.k,
        m: method.m,
        alpha: method.alpha,
        stop_tol: method.stop_tol,
        stop_window: method.stop_window,
        seed: crate::stream::derive_key(seed, &[tag("run"), method_idx as u64]),
        grad_method: method.grad_method,
        adam: method.adam,
    };
    let started = std::time::Instant::now();
    let out = run(target.as_ref(), &init, &opt_cfg)?;

    let stem = format!("{}_seed{}", method.name, seed);
    let mut written = Vec::new();

    // trace: one JSON object per iteration
    let trace_path = out_dir.join(format!("{stem}_trace.jsonl"));
    {
        let mut f = fs::File::create(&trace_path)?;
        for rec in &out.trace {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n")?;
        }
    }
    written.push(trace_path);

    // post-fit diagnostics with a dedicated substream
    let mut diag_rng = substream(seed, &[tag("diag"), method_idx as u64]);
    let diag = is_diagnostics(target.as_ref(), &out.state, cfg.diagnostics.is_samples, &mut diag_rng)?;
    let (mse_mean, mse_cov) = match reference {
        Some((rm, rc)) => {
            let (a, b) = crate::diagnostics::moment_mse(&diag.is_mean, &diag.is_cov, rm, rc)?;
            (Some(a), Some(b))
        }
        None => (None, None),
    };

    // final objective under the method's own bound
    let est_cfg = EstimatorConfig::new(
        method.k,
        1024,
        method.alpha,
        crate::stream::derive_key(seed, &[tag("final_obj"), method_idx as u64]),
    )?;
    let objective = estimate_vr_iwae(target.as_ref(), &out.state, &est_cfg)?;

    let summary = RunSummary {
        config_hash: config_hash.to_string(),
        version: crate::version().to_string(),
        experiment: cfg.experiment.kind,
        method: method.clone(),
        seed,
        stop: out.stop.clone(),
        n_iters: out.trace.len(),
        final_mean: out.state.mean().iter().copied().collect(),
        final_cov: (0..out.state.dim())
            .map(|i| out.state.covariance().row(i).iter().copied().collect())
            .collect(),
        final_logdet_cov: out.state.logdet_covariance(),
        objective,
        diagnostics: diag,
        mse_mean,
        mse_cov,
        wallclock_ms: started.elapsed().as_millis() as u64,
    };
    let summary_path = out_dir.join(format!("{stem}_summary.json"));
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    written.push(summary_path);

    if emit_csv {
        let obj_path = out_dir.join(format!("{stem}_objective.csv"));
        let mut w = csv::Writer::from_path(&obj_path)
            .map_err(|e| Error::ParseError(e.to_string()))?;
        w.write_record(["iter", "objective", "objective_se"])
            .map_err(|e| Error::ParseError(e.to_string()))?;
        for rec in &out.trace {
            w.write_record([
                rec.iter.to_string(),
                format!("{}", rec.objective),
                format!("{}", rec.objective_se),
            ])
            .map_err(|e| Error::ParseError(e.to_string()))?;
        }
        w.flush()?;
        written.push(obj_path);

        if let Some(contour) = &cfg.contour {
            if out.state.dim() >= 2 {
                let path = out_dir.join(format!("{stem}_contour.csv"));
                emit_contour_grid_state(&out.state, contour, &path)?;
                written.push(path);
            }
        }
    }

    Ok((summary, written))
}

fn run_snr_experiment(cfg: &ExperimentConfig, config_hash: &str, _ov: &Overrides) -> Result<ExperimentOutput> {
    let out_dir = cfg.experiment.output_dir.clone();
    let snr = cfg.snr.as_ref().expect("validated");
    let emit_csv = cfg.experiment.emit.contains(&EmitKind::Csv);
    let mut files = Vec::new();

    let seed = cfg.experiment.seeds[0];
    let target = cfg.build_target(seed)?;
    let q = match (&snr.q_mean, &snr.q_cov_diag) {
        (Some(m), Some(c)) => GaussianState::diagonal(
            DVector::from_vec(m.clone()),
            &DVector::from_vec(c.clone()),
        )?,
        _ => cfg.build_init(target.dim())?,
    };
    let z = DVector::from_vec(snr.z.clone());

    let mut reports: Vec<(String, SnrReport)> = Vec::new();
    for (i, est) in snr.estimators.iter().enumerate() {
        let label = estimator_label(est);
        let mut rng = substream(seed, &[tag("snr"), i as u64]);
        let report =
            snr_sweep_with(*est, target.as_ref(), &q, &z, &snr.ks, snr.m, snr.reps, &mut rng)?;
        let json_path = out_dir.join(format!("snr_{label}.json"));
        #[derive(Serialize)]
        struct SnrFile<'a> {
            config_hash: &'a str,
            version: &'a str,
            report: &'a SnrReport,
        }
        fs::write(
            &json_path,
            serde_json::to_string_pretty(&SnrFile {
                config_hash,
                version: crate::version(),
                report: &report,
            })?,
        )?;
        files.push(json_path);
        if emit_csv {
            let csv_path = out_dir.join(format!("snr_{label}.csv"));
            let mut w = csv::Writer::from_path(&csv_path)
                .map_err(|e| Error::ParseError(e.to_string()))?;
            let mut header = vec!["k".to_string()];
            for c in 0..q.dim() {
                header.push(format!("snr_{c}"));
            }
            w.write_record(&header).map_err(|e| Error::ParseError(e.to_string()))?;
            for (ki, k) in report.ks.iter().enumerate() {
                let mut rec = vec![k.to_string()];
                for c in 0..q.dim() {
                    rec.push(format!("{}", report.snr[ki][c]));
                }
                w.write_record(&rec).map_err(|e| Error::ParseError(e.to_string()))?;
            }
            w.flush()?;
            files.push(csv_path);
        }
        reports.push((label, report));
    }

    let index = IndexFile {
        config_hash: config_hash.to_string(),
        version: crate::version().to_string(),
        kind: cfg.experiment.kind,
        files: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        failures: Vec::new(),
    };
    let index_path = out_dir.join("index.json");
    fs::write(&index_path, serde_json::to_string_pretty(&index)?.as_bytes())?;
    files.push(index_path);

    Ok(ExperimentOutput { output_dir: out_dir, summaries: Vec::new(), files })
}

fn estimator_label(est: &SnrEstimator) -> String {
    match est {
        SnrEstimator::WassersteinIwElbo => "wasserstein_iw_elbo".into(),
        SnrEstimator::WassersteinVrIwae { alpha } => {
            format!("wasserstein_vr_iwae_a{}", format!("{alpha}").replace('.', "p"))
        }
        SnrEstimator::EuclideanMean => "euclidean_mean".into(),
    }
}

/// Write a CSV grid of target log-densities over the first two coordinates.
/// For targets beyond 2-D the remaining coordinates are fixed at zero,
/// declared in the header.
pub fn emit_contour_grid_target(
    target: &dyn TargetModel,
    spec: &ContourSection,
    path: &Path,
) -> Result<()> {
    let d = target.dim();
    emit_grid(
        |x, y| {
            let mut z = DVector::zeros(d);
            z[0] = x;
            z[1] = y;
            target.log_unnorm(&z)
        },
        d,
        "log_unnorm",
        spec,
        path,
    )
}

/// Same grid for a fitted Gaussian's log-density.
pub fn emit_contour_grid_state(
    state: &GaussianState,
    spec: &ContourSection,
    path: &Path,
) -> Result<()> {
    let d = state.dim();
    let mean = state.mean().clone();
    emit_grid(
        |x, y| {
            let mut z = mean.clone();
            z[0] = x;
            z[1] = y;
            state.log_density(&z)
        },
        d,
        "log_density",
        spec,
        path,
    )
}

fn emit_grid(
    f: impl Fn(f64, f64) -> f64,
    dim: usize,
    value_name: &str,
    spec: &ContourSection,
    path: &Path,
) -> Result<()> {
    if spec.resolution < 2 {
        return Err(Error::ConfigError("contour.resolution must be >= 2".into()));
    }
    if dim < 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: dim });
    }
    let [x0, x1, y0, y1] = spec.bounds;
    let n = spec.resolution;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::ParseError(e.to_string()))?;
    let value_col = if dim == 2 {
        value_name.to_string()
    } else {
        // declare the fixed trailing coordinates in the header
        format!("{value_name}[z3..z{dim}=mean]")
    };
    w.write_record(["z1", "z2", value_col.as_str()])
        .map_err(|e| Error::ParseError(e.to_string()))?;
    for i in 0..n {
        let x = x0 + (x1 - x0) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let y = y0 + (y1 - y0) * j as f64 / (n - 1) as f64;
            let v = f(x, y);
            w.write_record([format!("{x}"), format!("{y}"), format!("{v}")])
                .map_err(|e| Error::ParseError(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Entry point for the `contour` subcommand: target grid (always) plus a
/// grid per summary file already present in the output dir.
pub fn run_contour(cfg: &ExperimentConfig, config_hash: &str, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    if let Some(out) = &ov.out {
        cfg.experiment.output_dir = out.clone();
    }
    let contour = cfg
        .contour
        .as_ref()
        .ok_or_else(|| Error::ConfigError("contour section required".into()))?;
    let out_dir = cfg.experiment.output_dir.clone();
    fs::create_dir_all(&out_dir)?;
    guard_overwrite(&out_dir, config_hash, ov.force)?;
    let seed = ov.seed.unwrap_or(cfg.experiment.seeds[0]);
    let target = cfg.build_target(seed)?;
    let path = out_dir.join("target_contour.csv");
    emit_contour_grid_target(target.as_ref(), contour, &path)?;
    Ok(vec![path])
}
