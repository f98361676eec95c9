//! Command-line front end. Each subcommand resolves a [`RunConfig`] from an
//! optional JSON file plus flags, writes `resolved_config.json` next to its
//! outputs, and reports failures as one `error kind=... reason=...` line.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cif::estimate_cif;
use crate::data::{generate_synthetic, load_csv, standardize, write_csv, Dataset, Schema, SynthSpec};
use crate::error::{MtfsError, Result};
use crate::evaluation::{cross_validate, select_features, FeatureSource, Method, PipelineConfig};
use crate::objective::{Hyperparams, LossBreakdown, PenaltyMode};
use crate::params::ModelParams;
use crate::path::{default_ratio_grid, lambda_max, sweep, write_path_csv, PathOptions, SelectionCriteria};
use crate::predictors::{predictor_solver_config, train_svm, train_svr, Standardization, SvmModel, SvrModel};
use crate::solver::{default_init, fit, SolverConfig, StopReason};

#[derive(Debug, Parser)]
#[command(name = "mtfs", version, about = "Multi-task feature selection for joint RUL regression and failure-type classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a planted shared support.
    Synth(SynthArgs),
    /// Fit the joint model at one lambda.
    Fit(FitArgs),
    /// Sweep lambda / lambda_max and record losses and selections.
    Path(PathArgs),
    /// Select features at one ratio.
    Select(SelectArgs),
    /// Cumulative incidence of the two failure types per stratum.
    Cif(CifArgs),
    /// Cross-validate the select-then-predict pipeline.
    Cv(CvArgs),
    /// Score a CSV with saved predictors.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    Ridge,
    Group,
    Lasso,
}

impl From<PenaltyArg> for PenaltyMode {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::Ridge => PenaltyMode::Ridge,
            PenaltyArg::Group => PenaltyMode::GroupLasso,
            PenaltyArg::Lasso => PenaltyMode::Lasso,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Mtfs,
    Single,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mtfs => Method::Mtfs,
            MethodArg::Single => Method::SingleTask,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, value_enum)]
    pub penalty: Option<PenaltyArg>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k_shared: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Absolute penalty weight; overrides --ratio.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated ascending ratios in [0, 1].
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Start every ratio from the default initialization.
    #[arg(long)]
    pub cold_start: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

#[derive(Debug, Clone, Args)]
pub struct CifArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated stratum columns.
    #[arg(long, value_delimiter = ',')]
    pub group_by: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// `selected.json` from `select`; fixes the features in every fold.
    #[arg(long)]
    pub selected: Option<PathBuf>,
    #[arg(long)]
    pub svm_c: Option<f64>,
    #[arg(long)]
    pub svr_c: Option<f64>,
    #[arg(long)]
    pub svr_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory holding `svr_model.json` and `svm_model.json`.
    #[arg(long)]
    pub models: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub theta: f64,
    pub penalty: PenaltyMode,
    pub lambda: Option<f64>,
    pub ratio: f64,
    pub ratios: Vec<f64>,
    pub lambda_max: Option<f64>,
    pub warm_start: bool,
    pub solver: SolverConfig,
    pub criteria: SelectionCriteria,
    pub synth: SynthSpec,
    pub k: usize,
    pub method: Method,
    pub selected: Option<PathBuf>,
    pub svm_c: f64,
    pub svr_c: f64,
    pub svr_epsilon: f64,
    pub predictor_solver: SolverConfig,
    pub group_by: Vec<String>,
    pub models: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        Self {
            data: None,
            schema: None,
            out: PathBuf::from("."),
            seed: 0,
            theta: pipeline.theta,
            penalty: PenaltyMode::GroupLasso,
            lambda: None,
            ratio: pipeline.ratio,
            ratios: default_ratio_grid(),
            lambda_max: None,
            warm_start: true,
            solver: SolverConfig {
                gamma: 1.0,
                ..SolverConfig::default()
            },
            criteria: pipeline.criteria,
            synth: SynthSpec::default(),
            k: 5,
            method: Method::Mtfs,
            selected: None,
            svm_c: pipeline.svm_c,
            svr_c: pipeline.svr_c,
            svr_epsilon: pipeline.svr_epsilon,
            predictor_solver: predictor_solver_config(),
            group_by: Vec::new(),
            models: None,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    fn from_common(c: &CommonArgs) -> Result<RunConfig> {
        let mut cfg = match &c.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| MtfsError::Validation(format!("config {}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        if c.data.is_some() {
            cfg.data.clone_from(&c.data);
        }
        if c.schema.is_some() {
            cfg.schema.clone_from(&c.schema);
        }
        set(&mut cfg.out, c.out.clone());
        set(&mut cfg.seed, c.seed);
        set(&mut cfg.theta, c.theta);
        set(&mut cfg.penalty, c.penalty.map(Into::into));
        set(&mut cfg.solver.gamma, c.gamma);
        set(&mut cfg.solver.tolerance, c.tol);
        set(&mut cfg.solver.max_iters, c.max_iters);
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<PipelineConfig> {
        let features = match &self.selected {
            Some(path) => {
                let s: SelectionFile = read_json(path)?;
                FeatureSource::Fixed {
                    reg: s.reg_features,
                    cls: s.cls_features,
                }
            }
            None => FeatureSource::InFold,
        };
        Ok(PipelineConfig {
            method: self.method,
            theta: self.theta,
            ratio: self.ratio,
            lambda_max: self.lambda_max,
            solver: SolverConfig {
                trace_every: 0,
                ..self.solver
            },
            criteria: self.criteria,
            features,
            svm_c: self.svm_c,
            svr_c: self.svr_c,
            svr_epsilon: self.svr_epsilon,
            predictor_solver: self.predictor_solver,
        })
    }

    fn dataset(&self) -> Result<Dataset> {
        let data = self
            .data
            .as_deref()
            .ok_or_else(|| MtfsError::Validation("--data is required".into()))?;
        let schema = self
            .schema
            .as_deref()
            .ok_or_else(|| MtfsError::Validation("--schema is required".into()))?;
        load_csv(data, &Schema::from_json_file(schema)?)
    }

    fn standardized(&self) -> Result<Dataset> {
        let (d, dropped) = standardize(&self.dataset()?)?;
        if !dropped.is_empty() {
            log::warn!("dropped constant columns: {}", dropped.join(", "));
        }
        Ok(d)
    }

    /// Creates the output directory and snapshots the resolved config.
    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        write_json(&self.out.join("resolved_config.json"), self)
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| MtfsError::Io(e).context(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub support: Vec<String>,
    pub params: ModelParams,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FittedModel {
    pub feature_names: Vec<String>,
    pub standardization: Standardization,
    pub hyperparams: Hyperparams,
    pub params: ModelParams,
    pub breakdown: LossBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionFile {
    pub method: Method,
    pub theta: f64,
    pub ratio: f64,
    /// Features kept for both tasks.
    pub selected: Vec<String>,
    pub reg_features: Vec<String>,
    pub cls_features: Vec<String>,
}

fn lambda_for(cfg: &RunConfig, d: &Dataset, lambda: Option<f64>) -> Result<f64> {
    match lambda {
        Some(l) => Ok(l),
        None => Ok(cfg.ratio * cfg.lambda_max.map_or_else(|| lambda_max(d, cfg.theta), Ok)?),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    set(&mut cfg.synth.n, args.n);
    set(&mut cfg.synth.m, args.m);
    set(&mut cfg.synth.k_shared, args.k_shared);
    set(&mut cfg.synth.noise_std, args.noise_std);
    if args.correlation.is_some() {
        cfg.synth.correlation = args.correlation;
    }
    cfg.synth.validate()?;
    cfg.prepare_out()?;

    let (d, truth) = generate_synthetic(&cfg.synth)?;
    write_csv(&d, create(&cfg.out_file("synth.csv"))?)?;
    let support = truth
        .active_groups()
        .into_iter()
        .map(|j| d.feature_names[j].clone())
        .collect();
    write_json(
        &cfg.out_file("ground_truth.json"),
        &GroundTruth {
            spec: cfg.synth.clone(),
            support,
            params: truth,
        },
    )?;
    write_json(&cfg.out_file("schema.json"), &Schema::for_dataset(&d))
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    cfg.lambda = args.lambda.or(cfg.lambda);
    set(&mut cfg.ratio, args.ratio);
    if args.lambda_max.is_some() {
        cfg.lambda_max = args.lambda_max;
    }
    cfg.prepare_out()?;

    let d = cfg.standardized()?;
    let lambda = lambda_for(&cfg, &d, cfg.lambda)?;
    let h = Hyperparams::new(cfg.theta, lambda, cfg.penalty)?;
    let res = fit(&d, &h, &cfg.solver, &default_init(&d))?;

    let mut w = csv::Writer::from_writer(create(&cfg.out_file("trace.csv"))?);
    w.write_record(["iteration", "L", "L_r", "L_c", "L_n", "theta_Lr", "lambda_Ln"])?;
    for t in &res.breakdown_trace {
        let b = &t.breakdown;
        w.write_record([
            t.iteration.to_string(),
            b.total.to_string(),
            b.l_r.to_string(),
            b.l_c.to_string(),
            b.l_n.to_string(),
            b.theta_l_r.to_string(),
            b.lambda_l_n.to_string(),
        ])?;
    }
    w.flush()?;

    write_json(
        &cfg.out_file("model.json"),
        &FittedModel {
            feature_names: d.feature_names.clone(),
            standardization: Standardization {
                means: d.column_means.clone(),
                stds: d.column_stds.clone(),
            },
            hyperparams: h,
            params: res.params,
            breakdown: res.breakdown,
            iterations: res.iterations,
            converged: res.converged,
            stop_reason: res.stop_reason,
        },
    )
}

fn cmd_path(args: PathArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    set(&mut cfg.ratios, args.ratios);
    if args.lambda_max.is_some() {
        cfg.lambda_max = args.lambda_max;
    }
    if args.cold_start {
        cfg.warm_start = false;
    }
    cfg.prepare_out()?;

    let d = cfg.standardized()?;
    let solver = SolverConfig {
        trace_every: 0,
        ..cfg.solver
    };
    let opts = PathOptions {
        penalty_mode: cfg.penalty,
        lambda_max: cfg.lambda_max,
        warm_start: cfg.warm_start,
    };
    let entries = sweep(&d, cfg.theta, &cfg.ratios, &solver, &cfg.criteria, &opts)?;
    write_path_csv(&entries, create(&cfg.out_file("path.csv"))?)
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    set(&mut cfg.ratio, args.ratio);
    if args.lambda_max.is_some() {
        cfg.lambda_max = args.lambda_max;
    }
    set(&mut cfg.method, args.method.map(Into::into));
    cfg.selected = None;
    cfg.prepare_out()?;

    let d = cfg.standardized()?;
    let (reg_features, cls_features) = select_features(&d, &cfg.pipeline()?)?;
    let selected = reg_features
        .iter()
        .filter(|f| cls_features.contains(f))
        .cloned()
        .collect();
    write_json(
        &cfg.out_file("selected.json"),
        &SelectionFile {
            method: cfg.method,
            theta: cfg.theta,
            ratio: cfg.ratio,
            selected,
            reg_features,
            cls_features,
        },
    )
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn cmd_cif(args: CifArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    set(&mut cfg.group_by, args.group_by);
    cfg.prepare_out()?;

    let events = cfg.dataset()?.event_records()?;
    for table in estimate_cif(&events, &cfg.group_by)? {
        let name = format!("cif_{}.csv", file_label(&table.label()));
        table.write_csv(create(&cfg.out_file(&name))?)?;
    }
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    set(&mut cfg.k, args.k);
    set(&mut cfg.method, args.method.map(Into::into));
    set(&mut cfg.ratio, args.ratio);
    if args.lambda_max.is_some() {
        cfg.lambda_max = args.lambda_max;
    }
    if args.selected.is_some() {
        cfg.selected = args.selected;
    }
    set(&mut cfg.svm_c, args.svm_c);
    set(&mut cfg.svr_c, args.svr_c);
    set(&mut cfg.svr_epsilon, args.svr_epsilon);
    cfg.prepare_out()?;

    let pipeline = cfg.pipeline()?;
    let raw = cfg.dataset()?;
    let report = cross_validate(&raw, &pipeline, cfg.k, cfg.seed)?;
    write_json(&cfg.out_file("cv_report.json"), &report)?;

    let mut w = csv::Writer::from_writer(create(&cfg.out_file("roc.csv"))?);
    w.write_record(["fpr", "tpr"])?;
    for (fpr, tpr) in &report.roc {
        w.write_record([fpr.to_string(), tpr.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&cfg.out_file("ape_groups.csv"))?);
    w.write_record(["group", "count", "mean", "median", "q1", "q3", "min", "max"])?;
    for (group, s) in &report.ape_per_group {
        w.write_record([
            group.clone(),
            s.count.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush()?;

    // Final predictors on all rows, for `predict`.
    let (d, _) = standardize(&raw)?;
    let (reg, cls) = select_features(&d, &pipeline)?;
    let svr = train_svr(
        &d.select_features_by_name(&reg)?,
        pipeline.svr_epsilon,
        pipeline.svr_c,
        &pipeline.predictor_solver,
    )?;
    let svm = train_svm(&d.select_features_by_name(&cls)?, pipeline.svm_c, &pipeline.predictor_solver)?;
    write_json(&cfg.out_file("svr_model.json"), &svr)?;
    write_json(&cfg.out_file("svm_model.json"), &svm)
}

fn column_indices(headers: &csv::StringRecord, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| MtfsError::Schema(format!("missing column {n:?}")))
        })
        .collect()
}

fn raw_row(record: &csv::StringRecord, cols: &[usize], row: usize) -> Result<Vec<f64>> {
    cols.iter()
        .map(|&c| {
            let cell = record.get(c).unwrap_or("").trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MtfsError::InvalidRow {
                    row,
                    message: format!("cannot parse {cell:?} as a finite number"),
                })
        })
        .collect()
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    if args.models.is_some() {
        cfg.models = args.models;
    }
    cfg.prepare_out()?;

    let models = cfg
        .models
        .clone()
        .ok_or_else(|| MtfsError::Validation("--models is required".into()))?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| MtfsError::Validation("--data is required".into()))?;
    let svr: SvrModel = read_json(&models.join("svr_model.json"))?;
    let svm: SvmModel = read_json(&models.join("svm_model.json"))?;

    let mut reader = csv::Reader::from_path(&data)?;
    let headers = reader.headers()?.clone();
    let reg_cols = column_indices(&headers, &svr.feature_names)?;
    let cls_cols = column_indices(&headers, &svm.feature_names)?;

    let mut w = csv::Writer::from_writer(create(&cfg.out_file("predictions.csv"))?);
    let mut out_headers = headers.clone();
    out_headers.push_field("predicted_rul");
    out_headers.push_field("predicted_failure_type");
    w.write_record(&out_headers)?;
    for (row, record) in reader.records().enumerate() {
        let mut record = record?;
        let rul = svr.predict_raw(&raw_row(&record, &reg_cols, row)?)?;
        let class = svm.predict_raw(&raw_row(&record, &cls_cols, row)?)?;
        record.push_field(&rul.to_string());
        record.push_field(&class.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Select(a) => cmd_select(a),
        Command::Cif(a) => cmd_cif(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

/// 3 for numerical failures, 1 for I/O, 2 for every input or validation
/// problem.
pub fn exit_code(e: &MtfsError) -> i32 {
    if e.is_numerical() {
        3
    } else if e.kind() == "io" {
        1
    } else {
        2
    }
}

/// Single-line diagnostic: `error kind=<tag> reason="<message>"`.
pub fn error_line(e: &MtfsError) -> String {
    format!("error kind={} reason={:?}", e.kind(), e.to_string().replace('\n', " "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"theta": 5.0, "seed": 9, "solver": {"tolerance": 1e-3}}"#).unwrap();
        let common = CommonArgs {
            config: Some(path),
            theta: Some(2.0),
            ..Default::default()
        };
        let cfg = RunConfig::from_common(&common).unwrap();
        assert_eq!(cfg.theta, 2.0);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.solver.tolerance, 1e-3);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&MtfsError::Divergence { iteration: 3 }), 3);
        assert_eq!(exit_code(&MtfsError::StepFailure { shrinks: 60 }.context("ratio 0.5")), 3);
        assert_eq!(exit_code(&MtfsError::Validation("x".into())), 2);
        let line = error_line(&MtfsError::Schema("missing\ncolumn".into()));
        assert!(line.starts_with("error kind=schema reason="));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn labels_become_file_names() {
        assert_eq!(file_label("car_kind=G,wheel_size=36"), "car_kind_G_wheel_size_36");
    }
}
