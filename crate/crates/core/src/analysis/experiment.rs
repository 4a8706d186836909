//! Experiment harness: seeded runs, ablation suites, sweeps and manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::stats::{mean_std, t_test};
use crate::data::{generate_synthetic, Dataset, SynthConfig};
use crate::error::{BicError, Result};
use crate::interaction::InteractionKind;
use crate::model::{evaluate, prepare_inputs, train, BicModel, InputSpec, ModelConfig, Precision, TrainOutcome};
use crate::numerics::Real;

/// Where an experiment's dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Path(PathBuf),
}

impl DataSource {
    pub fn load(&self, tweet_cap: usize) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(cfg) => generate_synthetic(cfg),
            DataSource::Path(p) => Dataset::load(p, tweet_cap),
        }
    }
}

/// One swept configuration key and the values it takes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(data: DataSource, model: ModelConfig, seeds: Vec<u64>) -> Self {
        ExperimentSpec { data, model, seeds, axes: Vec::new(), out_dir: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(BicError::Config("an experiment needs at least one seed".into()));
        }
        self.model.validate()?;
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(BicError::Config(format!("sweep axis `{}` has no values", axis.key)));
            }
            for v in &axis.values {
                with_override(&self.model, &axis.key, v.clone())?;
            }
        }
        Ok(())
    }
}

/// Returns `cfg` with one key replaced. Unknown keys and ill-typed or
/// invalid values are config errors.
pub fn with_override(cfg: &ModelConfig, key: &str, value: Value) -> Result<ModelConfig> {
    let mut obj = match serde_json::to_value(cfg)? {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if !obj.contains_key(key) {
        return Err(BicError::Config(format!("unknown config key `{key}`")));
    }
    obj.insert(key.to_string(), value);
    let out: ModelConfig = serde_json::from_value(Value::Object(obj))
        .map_err(|e| BicError::Config(format!("bad value for `{key}`: {e}")))?;
    out.validate()?;
    Ok(out)
}

/// Splits a flat JSON object of model and generator keys into the two
/// configurations. Keys not belonging to either are rejected.
pub fn split_flat_config(flat: &Value) -> Result<(ModelConfig, SynthConfig)> {
    let Value::Object(all) = flat else {
        return Err(BicError::Config("config must be a JSON object".into()));
    };
    let keys = |v: Value| match v {
        Value::Object(m) => m.into_iter().map(|(k, _)| k).collect::<Vec<_>>(),
        _ => Vec::new(),
    };
    let model_keys = keys(serde_json::to_value(ModelConfig::default())?);
    let synth_keys = keys(serde_json::to_value(SynthConfig::default())?);
    let (mut m, mut s) = (Map::new(), Map::new());
    for (k, v) in all {
        if model_keys.contains(k) {
            m.insert(k.clone(), v.clone());
        } else if synth_keys.contains(k) {
            s.insert(k.clone(), v.clone());
        } else {
            return Err(BicError::Config(format!("unknown config key `{k}`")));
        }
    }
    let model: ModelConfig =
        serde_json::from_value(Value::Object(m)).map_err(|e| BicError::Config(format!("model config: {e}")))?;
    let synth: SynthConfig =
        serde_json::from_value(Value::Object(s)).map_err(|e| BicError::Config(format!("generator config: {e}")))?;
    model.validate()?;
    synth.validate()?;
    Ok((model, synth))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the configuration's canonical JSON (sorted keys, shortest
/// round-trip floats), excluding the seed. Identical on every platform.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Value::Object(m) = &mut v {
        m.remove("seed");
    }
    sha256_hex(serde_json::to_string(&v).expect("value serializes").as_bytes())
}

/// Test-split result of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub param_count: usize,
    pub wall_clock_s: f64,
}

/// A trained model in either precision.
pub enum Trained {
    F32(TrainOutcome<f32>),
    F64(TrainOutcome<f64>),
}

fn train_typed<R: Real>(dataset: &Dataset, cfg: &ModelConfig) -> Result<(TrainOutcome<R>, SeedResult)> {
    let start = Instant::now();
    let spec = InputSpec::from_dataset(dataset, cfg);
    let model = BicModel::<R>::new(cfg.clone(), spec)?;
    let param_count = model.param_count();
    let outcome = train(model, dataset)?;
    let test = prepare_inputs(dataset, dataset.split_ids("test")?, cfg, &outcome.model.spec)?;
    let m = evaluate(&outcome.model, &test)?;
    let result = SeedResult {
        seed: cfg.seed,
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        param_count,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((outcome, result))
}

/// Trains `cfg` on the dataset's train split and scores the test split.
pub fn train_and_test(dataset: &Dataset, cfg: &ModelConfig) -> Result<(Trained, SeedResult)> {
    Ok(match cfg.precision {
        Precision::F32 => {
            let (o, r) = train_typed::<f32>(dataset, cfg)?;
            (Trained::F32(o), r)
        }
        Precision::F64 => {
            let (o, r) = train_typed::<f64>(dataset, cfg)?;
            (Trained::F64(o), r)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        MeanStd { mean, std }
    }
}

/// Aggregate of one configuration over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config_hash: String,
    pub param_count: usize,
    pub runs: Vec<SeedResult>,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn from_runs(label: impl Into<String>, cfg: &ModelConfig, runs: Vec<SeedResult>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let f1: Vec<f64> = runs.iter().map(|r| r.f1).collect();
        RunReport {
            label: label.into(),
            config_hash: config_hash(cfg),
            param_count: runs.first().map_or(0, |r| r.param_count),
            accuracy: MeanStd::of(&acc),
            f1: MeanStd::of(&f1),
            wall_clock_s: runs.iter().map(|r| r.wall_clock_s).sum(),
            runs,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFailure {
    pub label: String,
    pub seed: u64,
    pub error: String,
}

/// Reports of a suite plus any runs that failed. A suite with failures is
/// still returned so partial results can be written out.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Suite {
    pub reports: Vec<RunReport>,
    pub failures: Vec<RunFailure>,
}

impl Suite {
    pub fn report(&self, label: &str) -> Option<&RunReport> {
        self.reports.iter().find(|r| r.label == label)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

type Progress<'a> = Box<dyn FnMut(&str, &SeedResult) + 'a>;

/// Runs configurations over seeds, memoizing finished runs by configuration
/// hash and seed so overlapping suites train each model once.
pub struct Runner<'a> {
    pub dataset: &'a Dataset,
    cache: BTreeMap<(String, u64), SeedResult>,
    progress: Option<Progress<'a>>,
}

impl<'a> Runner<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Runner { dataset, cache: BTreeMap::new(), progress: None }
    }

    /// Called after every fresh (non-cached) run.
    pub fn on_run(mut self, f: impl FnMut(&str, &SeedResult) + 'a) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    pub fn run_seed(&mut self, label: &str, cfg: &ModelConfig, seed: u64) -> Result<SeedResult> {
        let key = (config_hash(cfg), seed);
        if let Some(r) = self.cache.get(&key) {
            return Ok(r.clone());
        }
        let cfg = ModelConfig { seed, ..cfg.clone() };
        let (_, r) = train_and_test(self.dataset, &cfg)?;
        if let Some(f) = self.progress.as_mut() {
            f(label, &r);
        }
        self.cache.insert(key, r.clone());
        Ok(r)
    }

    /// Stores a result computed elsewhere, such as a run whose model was
    /// kept for analysis.
    pub fn record(&mut self, cfg: &ModelConfig, result: SeedResult) {
        self.cache.insert((config_hash(cfg), result.seed), result);
    }

    /// Runs one labelled configuration over all seeds into `suite`.
    pub fn run_into(&mut self, suite: &mut Suite, label: &str, cfg: &ModelConfig, seeds: &[u64]) {
        let mut runs = Vec::new();
        for &seed in seeds {
            match self.run_seed(label, cfg, seed) {
                Ok(r) => runs.push(r),
                Err(e) => suite.failures.push(RunFailure { label: label.into(), seed, error: e.to_string() }),
            }
        }
        if !runs.is_empty() {
            suite.reports.push(RunReport::from_runs(label, cfg, runs));
        }
    }
}

/// Label used for a variant in ablation tables.
pub fn variant_label(kind: InteractionKind) -> &'static str {
    match kind {
        InteractionKind::Similarity => "ours",
        k => k.name(),
    }
}

/// Trains every interaction variant under the same seeds and splits. With
/// an `interaction` sweep axis in the experiment only those variants run.
pub fn run_ablation_suite(runner: &mut Runner<'_>, spec: &ExperimentSpec) -> Result<Suite> {
    spec.validate()?;
    let variants: Vec<InteractionKind> = match spec.axes.iter().find(|a| a.key == "interaction") {
        Some(axis) => axis
            .values
            .iter()
            .map(|v| with_override(&spec.model, "interaction", v.clone()).map(|c| c.interaction))
            .collect::<Result<_>>()?,
        None => InteractionKind::ALL.to_vec(),
    };
    let mut suite = Suite::default();
    for kind in variants {
        let cfg = ModelConfig { interaction: kind, ..spec.model.clone() };
        runner.run_into(&mut suite, variant_label(kind), &cfg, &spec.seeds);
    }
    Ok(suite)
}

/// Which modality a removal sweep masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalAxis {
    Text,
    Graph,
}

impl RemovalAxis {
    pub const BOTH: [RemovalAxis; 2] = [RemovalAxis::Text, RemovalAxis::Graph];

    pub fn name(self) -> &'static str {
        match self {
            RemovalAxis::Text => "text",
            RemovalAxis::Graph => "graph",
        }
    }

    pub fn apply(self, cfg: &ModelConfig, fraction: f64) -> ModelConfig {
        let mut c = cfg.clone();
        match self {
            RemovalAxis::Text => c.text_removal = fraction,
            RemovalAxis::Graph => c.graph_removal = fraction,
        }
        c
    }
}

pub fn removal_label(axis: RemovalAxis, fraction: f64) -> String {
    format!("{}@{fraction}", axis.name())
}

/// Masks a growing share of tweets or neighbors, at train and test time,
/// for both modalities.
pub fn run_modality_removal(runner: &mut Runner<'_>, spec: &ExperimentSpec, fractions: &[f64]) -> Result<Suite> {
    spec.validate()?;
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(BicError::Config(format!("removal fraction {f} not in [0, 1]")));
    }
    let mut suite = Suite::default();
    for axis in RemovalAxis::BOTH {
        for &f in fractions {
            runner.run_into(&mut suite, &removal_label(axis, f), &axis.apply(&spec.model, f), &spec.seeds);
        }
    }
    Ok(suite)
}

/// Label of one sweep point.
pub fn sweep_label(key: &str, value: &Value) -> String {
    match value {
        Value::String(s) => format!("{key}={s}"),
        v => format!("{key}={v}"),
    }
}

/// Runs every value of every sweep axis of the experiment, one axis at a time.
pub fn run_sweep(runner: &mut Runner<'_>, spec: &ExperimentSpec) -> Result<Suite> {
    spec.validate()?;
    if spec.axes.is_empty() {
        return Err(BicError::Config("sweep needs at least one axis".into()));
    }
    let mut suite = Suite::default();
    for axis in &spec.axes {
        for v in &axis.values {
            let cfg = with_override(&spec.model, &axis.key, v.clone())?;
            runner.run_into(&mut suite, &sweep_label(&axis.key, v), &cfg, &spec.seeds);
        }
    }
    Ok(suite)
}

/// Per-seed metrics, one row per run. Wall-clock time is left out so the
/// file is byte-identical across reruns.
pub fn metrics_csv(suite: &Suite) -> String {
    let mut s = String::from("label,config_hash,seed,accuracy,precision,recall,f1,best_epoch,epochs,param_count\n");
    for r in &suite.reports {
        for x in &r.runs {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
                r.label, r.config_hash, x.seed, x.accuracy, x.precision, x.recall, x.f1, x.best_epoch, x.epochs, x.param_count
            );
        }
    }
    s
}

/// One row per configuration with mean ± std, plus an unpaired t-test of
/// accuracy against the `reference` row when both have two or more seeds.
pub fn summary_csv(suite: &Suite, reference: Option<&str>) -> String {
    let base = reference.and_then(|l| suite.report(l)).map(RunReport::accuracies);
    let mut s = String::from("label,seeds,accuracy_mean,accuracy_std,f1_mean,f1_std,param_count,t_vs_ref,p_vs_ref\n");
    for r in &suite.reports {
        let test = base.as_ref().filter(|_| Some(r.label.as_str()) != reference).and_then(|b| t_test(&r.accuracies(), b));
        let (t, p) = test.map_or((String::new(), String::new()), |t| (format!("{:.4}", t.t), format!("{:.4}", t.p_value)));
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{t},{p}",
            r.label,
            r.runs.len(),
            r.accuracy.mean,
            r.accuracy.std,
            r.f1.mean,
            r.f1.std,
            r.param_count
        );
    }
    s
}

/// Accuracy-versus-fraction curve rows for a removal suite.
pub fn removal_csv(suite: &Suite) -> String {
    let mut s = String::from("modality,fraction,accuracy_mean,accuracy_std,f1_mean,f1_std\n");
    for r in &suite.reports {
        if let Some((m, f)) = r.label.split_once('@') {
            let _ = writeln!(s, "{m},{f},{:.6},{:.6},{:.6},{:.6}", r.accuracy.mean, r.accuracy.std, r.f1.mean, r.f1.std);
        }
    }
    s
}

/// Everything needed to rerun a command exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub config: ModelConfig,
    pub config_hash: String,
    pub data: DataSource,
    pub dataset_hash: String,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
}

impl Manifest {
    pub fn new(command: &str, spec: &ExperimentSpec, dataset: &Dataset) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seeds: spec.seeds.clone(),
            config: spec.model.clone(),
            config_hash: config_hash(&spec.model),
            data: spec.data.clone(),
            dataset_hash: dataset.content_hash(),
            axes: spec.axes.clone(),
        }
    }
}

pub fn write_text(path: impl AsRef<Path>, body: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| BicError::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| BicError::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_text(path, &body)
}
