//! Declarative experiment configuration and the file-based stages built on
//! it: dataset generation, statistical edges, training, evaluation and
//! single-scenario prediction.
//!
//! Every stage reads the files written by earlier stages from the output
//! directory and writes its own artifacts there.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    generate_dataset, read_dataset, read_traces, simulate_cascade, subsample_profiles, write_dataset, write_traces,
    CascadeError, CascadeResult, DatasetError, SampleSet, Split, SplitFractions,
};
use crate::gbt::{
    classifier_metrics, flat_samples, positive_mean_mw, predict_gbt, train_gbt, write_metrics_csv, BoostedForest,
    GbtError, GbtParams,
};
use crate::gnn::{train_gnn, GnnCheckpoint, GnnError, Population, TrainConfig};
use crate::grid::{apply_profile, parse_case, parse_profiles, validate, Grid, GridError, Profile, ProfileError};
use crate::influence::{
    augment_topology, cofailure_counts, read_edges, select_statistical_edges, write_edges, AugmentedTopology,
    EdgeFileError,
};
use crate::pipeline::{
    evaluate_model, write_parity, Classifier, EvalReport, PipelineError, PipelineModel, Regressor, Variant,
    DEFAULT_VERIFICATION_MW, SEVERE_HIGH_MW, SEVERE_LOW_MW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub case: PathBuf,
    pub profiles: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            case: PathBuf::from("data/case16.txt"),
            profiles: PathBuf::from("data/profiles16.csv"),
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceConfig {
    /// One statistical-edge file is written per entry.
    pub edge_counts: Vec<usize>,
    /// Share of profiles whose cascade traces feed the co-failure counts.
    pub trace_fraction: f64,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self { edge_counts: vec![0, 5, 10, 20], trace_fraction: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    #[serde(flatten)]
    pub params: GbtParams,
    /// Weight training samples by blackout size.
    pub linear_weighting: bool,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { params: GbtParams::default(), linear_weighting: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub verification_mw: f64,
    pub severe_low_mw: f64,
    pub severe_high_mw: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { verification_mw: DEFAULT_VERIFICATION_MW, severe_low_mw: SEVERE_LOW_MW, severe_high_mw: SEVERE_HIGH_MW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives the split, the trace sub-sample and every training run.
    pub seed: u64,
    pub contingency_size: usize,
    pub paths: Paths,
    pub split: SplitFractions,
    pub influence: InfluenceConfig,
    pub gnn_mixed: TrainConfig,
    pub gnn_blackout: TrainConfig,
    pub gbt: GbtConfig,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            contingency_size: 2,
            paths: Paths::default(),
            split: SplitFractions::default(),
            influence: InfluenceConfig::default(),
            gnn_mixed: TrainConfig { population: Population::Mixed, ..TrainConfig::default() },
            gnn_blackout: TrainConfig { population: Population::BlackoutOnly, ..TrainConfig::default() },
            gbt: GbtConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Edges(#[from] EdgeFileError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl ExperimentError {
    /// Bad input or invocation, as opposed to a failure inside a stage.
    pub fn is_usage(&self) -> bool {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Input { .. }
            | ExperimentError::Usage(_)
            | ExperimentError::Grid(_)
            | ExperimentError::Profile(_)
            | ExperimentError::Edges(_) => true,
            ExperimentError::Cascade(e) => matches!(e, CascadeError::InvalidLine(_) | CascadeError::StateSize { .. }),
            ExperimentError::Dataset(e) => !matches!(e, DatasetError::Simulation { .. } | DatasetError::Io(_)),
            ExperimentError::Gnn(e) => matches!(e, GnnError::EmptyPopulation | GnnError::InvalidLine(_) | GnnError::Checkpoint(_)),
            ExperimentError::Gbt(e) => !matches!(e, GbtError::Length { .. }),
            ExperimentError::Pipeline(e) => matches!(
                e,
                PipelineError::MissingComponent { .. }
                    | PipelineError::Threshold(_)
                    | PipelineError::PerfectOutsideEvaluation
                    | PipelineError::SevereThresholds { .. }
                    | PipelineError::Empty
            ),
            ExperimentError::Output { .. } => false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Input { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.case, &mut cfg.paths.profiles, &mut cfg.paths.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.contingency_size == 0 {
            return bad("contingency_size must be at least 1".into());
        }
        let SplitFractions { train, val } = self.split;
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return bad(format!("split fractions train={train} val={val} are not a valid partition"));
        }
        if !(self.influence.trace_fraction > 0.0 && self.influence.trace_fraction <= 1.0) {
            return bad(format!("trace_fraction {} is outside (0, 1]", self.influence.trace_fraction));
        }
        let t = self.thresholds;
        if !(t.verification_mw > 0.0) {
            return bad(format!("verification_mw {} must be positive", t.verification_mw));
        }
        if !(t.severe_low_mw < t.severe_high_mw) {
            return bad(format!("severe_low_mw {} must be below severe_high_mw {}", t.severe_low_mw, t.severe_high_mw));
        }
        for (name, c) in [("gnn_mixed", &self.gnn_mixed), ("gnn_blackout", &self.gnn_blackout)] {
            if c.batch_size == 0 || c.architecture.hidden == 0 || !(c.learning_rate > 0.0) {
                return bad(format!("{name}: batch_size, architecture.hidden and learning_rate must be positive"));
            }
        }
        Ok(())
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }
}

/// The component `train` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    GnnMixed,
    GnnBlackout,
    Gbt,
}

impl Target {
    pub fn parse(s: &str) -> Option<Target> {
        match s {
            "gnn-mixed" => Some(Target::GnnMixed),
            "gnn-blackout" => Some(Target::GnnBlackout),
            "gbt" => Some(Target::Gbt),
            _ => None,
        }
    }
}

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRACE_FILE: &str = "traces.csv";
pub const GBT_FILE: &str = "gbt.json";

pub fn edges_file(k: usize) -> String {
    format!("edges_k{k}.csv")
}

pub fn gnn_file(population: Population, k: usize) -> String {
    match population {
        Population::Mixed => format!("gnn-mixed_k{k}.json"),
        Population::BlackoutOnly => format!("gnn-blackout_k{k}.json"),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, ExperimentError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| ExperimentError::Input { path: path.to_path_buf(), message: e.to_string() })
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Output { path: dir.to_path_buf(), source })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), ExperimentError> {
    w.flush().map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })
}

pub fn load_grid(cfg: &ExperimentConfig) -> Result<Grid, ExperimentError> {
    let text = std::fs::read_to_string(&cfg.paths.case)
        .map_err(|e| ExperimentError::Input { path: cfg.paths.case.clone(), message: e.to_string() })?;
    let grid = parse_case(&text)?;
    let diagnostics = validate(&grid);
    if !diagnostics.is_empty() {
        return Err(GridError::Validation(diagnostics).into());
    }
    Ok(grid)
}

pub fn load_profiles(cfg: &ExperimentConfig, grid: &Grid) -> Result<Vec<Profile>, ExperimentError> {
    let text = std::fs::read_to_string(&cfg.paths.profiles)
        .map_err(|e| ExperimentError::Input { path: cfg.paths.profiles.clone(), message: e.to_string() })?;
    Ok(parse_profiles(&text, grid.n_buses())?)
}

pub fn load_dataset(cfg: &ExperimentConfig, grid: &Grid) -> Result<SampleSet, ExperimentError> {
    Ok(read_dataset(grid, open(&cfg.out_path(DATASET_FILE))?)?)
}

/// Simulates one scenario on the profile with `hour_id` and writes its
/// trace to `simulate_trace.csv`.
pub fn run_simulate(cfg: &ExperimentConfig, hour_id: i64, failures: &[usize]) -> Result<CascadeResult, ExperimentError> {
    let grid = load_grid(cfg)?;
    let profiles = load_profiles(cfg, &grid)?;
    let profile = profiles
        .iter()
        .find(|p| p.hour_id == hour_id)
        .ok_or_else(|| ExperimentError::Usage(format!("no profile with hour {hour_id}")))?;
    let state = apply_profile(&grid, profile)?;
    let result = simulate_cascade(&grid, &state, failures)?;
    let path = cfg.out_path("simulate_trace.csv");
    let mut w = create(&path)?;
    write_traces(&[(0, result.failure_trace.clone())], &mut w)?;
    finish(w, &path)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub n_blackouts: usize,
    pub trace_profiles: Vec<usize>,
    pub n_traces: usize,
}

/// Simulates every contingency × profile and writes the dataset and the
/// traces of the sub-sampled profiles.
pub fn run_gen_dataset(cfg: &ExperimentConfig) -> Result<DatasetSummary, ExperimentError> {
    let grid = load_grid(cfg)?;
    let profiles = load_profiles(cfg, &grid)?;
    let set = generate_dataset(&grid, &profiles, cfg.contingency_size, cfg.seed, cfg.split)?;

    let path = cfg.out_path(DATASET_FILE);
    let mut w = create(&path)?;
    write_dataset(&grid, &set, &mut w)?;
    finish(w, &path)?;

    let trace_profiles = subsample_profiles(profiles.len(), cfg.influence.trace_fraction, cfg.seed);
    let traces: Vec<(usize, Vec<_>)> = set
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| trace_profiles.binary_search(&s.profile).is_ok())
        .map(|(i, s)| (i, s.trace.clone()))
        .collect();
    let path = cfg.out_path(TRACE_FILE);
    let mut w = create(&path)?;
    write_traces(&traces, &mut w)?;
    finish(w, &path)?;

    Ok(DatasetSummary {
        n_samples: set.samples.len(),
        n_blackouts: set.samples.iter().filter(|s| crate::cascade::is_blackout(s.blackout_mw)).count(),
        trace_profiles,
        n_traces: traces.len(),
    })
}

/// Writes one statistical-edge file per configured edge count. Every file is
/// a prefix of the same ranking.
pub fn run_stat_edges(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, ExperimentError> {
    let grid = load_grid(cfg)?;
    let traces = read_traces(open(&cfg.out_path(TRACE_FILE))?)?;
    let failed: Vec<Vec<usize>> = traces.iter().map(|(_, t)| t.iter().map(|e| e.line).collect()).collect();
    let table = cofailure_counts(&failed);
    let max_k = cfg.influence.edge_counts.iter().copied().max().unwrap_or(0);
    let ranking = select_statistical_edges(&table, &grid, max_k);
    let mut written = Vec::new();
    for &k in &cfg.influence.edge_counts {
        let path = cfg.out_path(&edges_file(k));
        let mut w = create(&path)?;
        write_edges(&ranking[..k.min(ranking.len())], &mut w)?;
        finish(w, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Physical topology plus the statistical edges of `edges_k{k}.csv`; `k = 0`
/// needs no file.
pub fn load_topology(cfg: &ExperimentConfig, grid: &Grid, k: usize) -> Result<AugmentedTopology, ExperimentError> {
    if k == 0 {
        return Ok(AugmentedTopology::physical_only(grid));
    }
    let edges = read_edges(open(&cfg.out_path(&edges_file(k)))?)?;
    if let Some(e) = edges.iter().find(|e| e.from_bus >= grid.n_buses() || e.to_bus >= grid.n_buses()) {
        return Err(ExperimentError::Usage(format!("statistical edge {}-{} is outside the grid", e.from_bus, e.to_bus)));
    }
    Ok(augment_topology(grid, &edges))
}

/// Trains one component and writes its checkpoint and log. Returns the
/// checkpoint path.
pub fn run_train(cfg: &ExperimentConfig, target: Target, k: usize) -> Result<PathBuf, ExperimentError> {
    let grid = load_grid(cfg)?;
    let set = load_dataset(cfg, &grid)?;
    match target {
        Target::GnnMixed | Target::GnnBlackout => {
            let (base, population) = match target {
                Target::GnnMixed => (&cfg.gnn_mixed, Population::Mixed),
                _ => (&cfg.gnn_blackout, Population::BlackoutOnly),
            };
            let config = TrainConfig { seed: cfg.seed, population, ..base.clone() };
            let topology = load_topology(cfg, &grid, k)?;
            let ckpt = train_gnn(&grid, &set, &topology, &config)?;
            let name = gnn_file(population, k);
            let path = cfg.out_path(&name);
            let mut w = create(&path)?;
            ckpt.write(&mut w)?;
            finish(w, &path)?;
            let log_path = cfg.out_path(&name.replace(".json", "_log.csv"));
            let mut w = create(&log_path)?;
            ckpt.log.write_csv(&mut w)?;
            finish(w, &log_path)?;
            Ok(path)
        }
        Target::Gbt => {
            let train_idx = set.indices_in(Split::Train);
            let val_idx = set.indices_in(Split::Val);
            let mean = if cfg.gbt.linear_weighting {
                Some(positive_mean_mw(&set, &train_idx).ok_or(GbtError::SingleClass)?)
            } else {
                None
            };
            let train = flat_samples(&grid, &set, &train_idx, mean)?;
            let val = flat_samples(&grid, &set, &val_idx, None)?;
            let forest = train_gbt(&train, &val, &cfg.gbt.params)?;
            let path = cfg.out_path(GBT_FILE);
            let mut w = create(&path)?;
            forest.write(&mut w)?;
            finish(w, &path)?;

            let log_path = cfg.out_path("gbt_log.csv");
            let mut w = create(&log_path)?;
            writeln!(w, "round,train_loss,val_f1").and_then(|_| {
                forest.history.iter().try_for_each(|r| {
                    let f1 = r.val_f1.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(w, "{},{},{}", r.round, r.train_loss, f1)
                })
            })
            .map_err(|source| ExperimentError::Output { path: log_path.clone(), source })?;
            finish(w, &log_path)?;

            if !val.is_empty() {
                let preds: Vec<bool> =
                    val.iter().map(|s| predict_gbt(&forest, &s.features).map(|p| p.1)).collect::<Result<_, _>>()?;
                let labels: Vec<bool> = val.iter().map(|s| s.label).collect();
                let metrics = classifier_metrics(&preds, &labels).map_err(GbtError::from)?;
                let metrics_path = cfg.out_path("gbt_val_metrics.csv");
                let mut w = create(&metrics_path)?;
                write_metrics_csv(&metrics, &mut w).map_err(|e| ExperimentError::Output {
                    path: metrics_path.clone(),
                    source: std::io::Error::other(e),
                })?;
                finish(w, &metrics_path)?;
            }
            Ok(path)
        }
    }
}

/// Which checkpoints an evaluation or prediction uses. `None` paths fall
/// back to the default file names in the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComponentPaths {
    pub mixed: Option<PathBuf>,
    pub blackout: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    /// Statistical-edge count of the default GNN file names.
    pub edges: usize,
    pub perfect_classifier: bool,
}

fn load_regressor(path: &Path) -> Result<Regressor, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::Input { path: path.to_path_buf(), message: "checkpoint not found".into() });
    }
    let ckpt = GnnCheckpoint::read(open(path)?)?;
    Ok(Regressor { model: ckpt.model, topology: ckpt.topology })
}

/// Loads the components `variant` needs and assembles the pipeline.
pub fn assemble_pipeline(
    cfg: &ExperimentConfig,
    variant: Variant,
    components: &ComponentPaths,
) -> Result<PipelineModel, ExperimentError> {
    let k = components.edges;
    let resolve = |given: &Option<PathBuf>, default: String| given.clone().unwrap_or_else(|| cfg.out_path(&default));
    let uses_mixed = matches!(variant, Variant::R | Variant::CVR);
    let uses_classified = matches!(variant, Variant::CR | Variant::CVR);
    let mixed = if uses_mixed {
        Some(load_regressor(&resolve(&components.mixed, gnn_file(Population::Mixed, k)))?)
    } else {
        None
    };
    let blackout = if uses_classified {
        Some(load_regressor(&resolve(&components.blackout, gnn_file(Population::BlackoutOnly, k)))?)
    } else {
        None
    };
    let classifier = if !uses_classified {
        None
    } else if components.perfect_classifier {
        Some(Classifier::Perfect)
    } else {
        let path = resolve(&components.classifier, GBT_FILE.to_string());
        if !path.exists() {
            return Err(ExperimentError::Input { path, message: "checkpoint not found".into() });
        }
        Some(Classifier::Forest(BoostedForest::read(open(&path)?)?))
    };
    Ok(PipelineModel::new(variant, classifier, mixed, blackout, cfg.thresholds.verification_mw)?)
}

/// File stem of an evaluation, e.g. `eval_cr-plus_perfect`.
pub fn eval_stem(label: &str, perfect: bool) -> String {
    let name = label.to_ascii_lowercase().replace('+', "-plus");
    format!("eval_{name}{}", if perfect { "_perfect" } else { "" })
}

/// Evaluates on the test split and writes `<stem>.csv`, `<stem>.json` and
/// `<stem>_parity.csv`.
pub fn run_eval(
    cfg: &ExperimentConfig,
    variant: Variant,
    components: &ComponentPaths,
) -> Result<(EvalReport, PathBuf), ExperimentError> {
    let grid = load_grid(cfg)?;
    let model = assemble_pipeline(cfg, variant, components)?;
    let set = load_dataset(cfg, &grid)?;
    let test = set.indices_in(Split::Test);
    let t = cfg.thresholds;
    let (report, predictions) = evaluate_model(&model, &grid, &set, &test, t.severe_low_mw, t.severe_high_mw)?;
    let stem = eval_stem(&report.variant, components.perfect_classifier && variant != Variant::R);

    let csv_path = cfg.out_path(&format!("{stem}.csv"));
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    finish(w, &csv_path)?;
    let json_path = cfg.out_path(&format!("{stem}.json"));
    let mut w = create(&json_path)?;
    report.write_json(&mut w)?;
    finish(w, &json_path)?;
    let parity_path = cfg.out_path(&format!("{stem}_parity.csv"));
    let labels: Vec<f64> = test.iter().map(|&i| set.samples[i].blackout_mw).collect();
    let mut w = create(&parity_path)?;
    write_parity(&test, &predictions, &labels, &mut w)?;
    finish(w, &parity_path)?;
    Ok((report, csv_path))
}

/// Estimate for one scenario with deployable components only.
pub fn run_predict(
    cfg: &ExperimentConfig,
    variant: Variant,
    components: &ComponentPaths,
    hour_id: i64,
    failures: &[usize],
) -> Result<f64, ExperimentError> {
    if components.perfect_classifier {
        return Err(PipelineError::PerfectOutsideEvaluation.into());
    }
    let grid = load_grid(cfg)?;
    let profiles = load_profiles(cfg, &grid)?;
    let profile = profiles
        .iter()
        .find(|p| p.hour_id == hour_id)
        .ok_or_else(|| ExperimentError::Usage(format!("no profile with hour {hour_id}")))?;
    if let Some(&bad) = failures.iter().find(|&&f| f >= grid.n_lines()) {
        return Err(CascadeError::InvalidLine(bad).into());
    }
    let state = apply_profile(&grid, profile)?;
    let mut failures = failures.to_vec();
    failures.sort_unstable();
    failures.dedup();
    let set = SampleSet {
        profile_ids: vec![hour_id],
        states: vec![state],
        samples: vec![crate::cascade::Sample { profile: 0, failures, blackout_mw: 0.0, split: Split::Test, trace: Vec::new() }],
    };
    let model = assemble_pipeline(cfg, variant, components)?;
    Ok(model.predict(&grid, &set, &[0])?[0])
}
