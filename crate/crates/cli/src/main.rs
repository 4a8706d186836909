//! `bic`: generate data, train, evaluate, run ablations and sweeps, analyze
//! trained models and verify gradients.
//!
//! Exit codes: 0 success, 1 a run failed, 2 bad configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bic::analysis::{
    case_study_export, cluster_consistency, consistency_boxplot_data, metrics_csv, removal_csv, run_ablation_suite,
    run_modality_removal, run_sweep, split_flat_config, summary_csv, train_and_test, variant_label, write_json,
    write_text, DataSource, ExperimentSpec, Manifest, RunFailure, RunReport, Runner, SeedResult, Suite, SweepAxis,
    Trained, KMEANS_RESTARTS,
};
use bic::consistency::pool_matrix;
use bic::data::{generate_synthetic, Dataset, SynthConfig};
use bic::interaction::InteractionKind;
use bic::model::{
    evaluate, grad_check_model, predict, prepare_inputs, read_checkpoint, save_checkpoint, BicModel, EpochRecord,
    InputSpec, ModelConfig, Precision,
};
use bic::numerics::{GradCheckConfig, Real, Tensor};
use bic::{BicError, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bic", version, about = "Text-graph interaction bot detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset
    Generate(GenerateArgs),
    /// Train and score on the test split
    Train(RunArgs),
    /// Score a checkpoint on a dataset split
    Evaluate(ModelArgs),
    /// Compare interaction variants under identical seeds
    Ablate(AblateArgs),
    /// Sweep config keys and/or modality-removal fractions
    Sweep(SweepArgs),
    /// Eigenvalue, clustering and case-study reports for a checkpoint
    Analyze(AnalyzeArgs),
    /// Finite-difference check of the full model gradient
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Flat JSON config; only generator keys are used
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the generator's data_seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// First seed; --runs consecutive seeds are used
    #[arg(long)]
    seed: u64,
    /// Flat JSON of model and generator keys
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Dataset JSON; when absent the synthetic generator is used
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Variants to run (ours, hard, soft, mlp, text, graph, none); all by default
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `key=v1,v2,...`; values are parsed as JSON, falling back to strings
    #[arg(long = "axis")]
    axes: Vec<String>,
    /// Modality-removal fractions, run for both text and graph
    #[arg(long, value_delimiter = ',')]
    fractions: Vec<f64>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Flat JSON config whose generator keys rebuild the dataset
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = KMEANS_RESTARTS)]
    restarts: usize,
    /// k-means seed; defaults to the checkpoint's seed
    #[arg(long)]
    seed: Option<u64>,
    /// User ids for case-study reports (raw and pooled matrices included)
    #[arg(long = "case")]
    cases: Vec<String>,
}

#[derive(Args)]
struct GradArgs {
    /// Flat JSON config; a tiny built-in instance when absent
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    users: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Check at most this many coordinates per parameter
    #[arg(long)]
    max_coords: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion but may contain failed runs.
enum Status {
    Ok,
    RunFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Sweep(a) => sweep(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match res {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::RunFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn read_config(path: &Path) -> Result<(ModelConfig, SynthConfig)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BicError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let flat: Value = serde_json::from_str(&text)?;
    split_flat_config(&flat)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| BicError::Io { path: dir.to_path_buf(), source })
}

fn load_data(path: Option<&Path>, synth: SynthConfig, tweet_cap: usize) -> Result<(DataSource, Dataset)> {
    let source = match path {
        Some(p) => DataSource::Path(p.to_path_buf()),
        None => DataSource::Synthetic(synth),
    };
    let ds = source.load(tweet_cap)?;
    Ok((source, ds))
}

struct Prepared {
    spec: ExperimentSpec,
    dataset: Dataset,
}

fn prepare(a: &RunArgs) -> Result<Prepared> {
    if a.runs == 0 {
        return Err(BicError::Config("--runs must be at least 1".into()));
    }
    let (mut model, synth) = read_config(&a.config)?;
    model.seed = a.seed;
    let (data, dataset) = load_data(a.data.as_deref(), synth, model.tweet_cap)?;
    let seeds = (a.seed..a.seed + a.runs).collect();
    let mut spec = ExperimentSpec::new(data, model, seeds);
    spec.out_dir = Some(a.out.clone());
    Ok(Prepared { spec, dataset })
}

fn progress(quiet: bool) -> impl FnMut(&str, &SeedResult) {
    move |label, r| {
        if !quiet {
            eprintln!(
                "{label:<16} seed {:<4} acc {:.4} f1 {:.4} epochs {:<3} {:.1}s",
                r.seed, r.accuracy, r.f1, r.epochs, r.wall_clock_s
            );
        }
    }
}

/// Writes the manifest, per-seed metrics, summary and any failures.
fn write_suite(out: &Path, command: &str, p: &Prepared, suite: &Suite, reference: Option<&str>) -> Result<Status> {
    write_json(out.join("manifest.json"), &Manifest::new(command, &p.spec, &p.dataset))?;
    write_text(out.join("metrics.csv"), &metrics_csv(suite))?;
    write_text(out.join("summary.csv"), &summary_csv(suite, reference))?;
    if suite.is_complete() {
        return Ok(Status::Ok);
    }
    write_json(out.join("failures.json"), &suite.failures)?;
    for f in &suite.failures {
        eprintln!("run failed: {} seed {}: {}", f.label, f.seed, f.error);
    }
    Ok(Status::RunFailed)
}

fn generate(a: GenerateArgs) -> Result<Status> {
    let mut synth = match &a.config {
        Some(p) => read_config(p)?.1,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        synth.data_seed = s;
    }
    synth.validate()?;
    let ds = generate_synthetic(&synth)?;
    create_dir(&a.out)?;
    ds.save(a.out.join("dataset.json"))?;
    let hash = ds.content_hash();
    write_json(
        a.out.join("manifest.json"),
        &json!({
            "command": "generate",
            "version": env!("CARGO_PKG_VERSION"),
            "generator": synth,
            "dataset_hash": hash,
            "users": ds.len(),
            "edges": ds.edges().len(),
        }),
    )?;
    println!("{} users, {} edges, hash {hash}", ds.len(), ds.edges().len());
    Ok(Status::Ok)
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_accuracy,val_f1,lr\n");
    for h in history {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:e}\n",
            h.epoch, h.train_loss, h.val_accuracy, h.val_f1, h.lr
        ));
    }
    s
}

fn train_cmd(a: RunArgs) -> Result<Status> {
    let p = prepare(&a)?;
    p.spec.validate()?;
    let label = variant_label(p.spec.model.interaction);
    let mut report = progress(a.quiet);
    let mut suite = Suite::default();
    let mut runs = Vec::new();
    for &seed in &p.spec.seeds {
        let cfg = ModelConfig { seed, ..p.spec.model.clone() };
        let dir = if p.spec.seeds.len() == 1 { a.out.clone() } else { a.out.join(format!("seed-{seed}")) };
        let saved = train_and_test(&p.dataset, &cfg).and_then(|(trained, r)| {
            create_dir(&dir)?;
            let history = match &trained {
                Trained::F32(o) => {
                    save_checkpoint(&o.model, dir.join("checkpoint.json"))?;
                    &o.history
                }
                Trained::F64(o) => {
                    save_checkpoint(&o.model, dir.join("checkpoint.json"))?;
                    &o.history
                }
            };
            write_text(dir.join("history.csv"), &history_csv(history))?;
            Ok(r)
        });
        match saved {
            Ok(r) => {
                report(label, &r);
                runs.push(r);
            }
            Err(e) if e.is_config() => return Err(e),
            Err(e) => suite.failures.push(RunFailure { label: label.into(), seed, error: e.to_string() }),
        }
    }
    if !runs.is_empty() {
        suite.reports.push(RunReport::from_runs(label, &p.spec.model, runs));
    }
    write_suite(&a.out, "train", &p, &suite, None)
}

fn variant_value(name: &str) -> Result<Value> {
    let kind = if name == "ours" { InteractionKind::Similarity } else { InteractionKind::parse(name)? };
    Ok(serde_json::to_value(kind)?)
}

fn ablate(a: AblateArgs) -> Result<Status> {
    let mut p = prepare(&a.run)?;
    if !a.variants.is_empty() {
        let values = a.variants.iter().map(|v| variant_value(v)).collect::<Result<_>>()?;
        p.spec.axes.push(SweepAxis { key: "interaction".into(), values });
    }
    let mut runner = Runner::new(&p.dataset).on_run(progress(a.run.quiet));
    let suite = run_ablation_suite(&mut runner, &p.spec)?;
    drop(runner);
    let reference = suite.report("ours").map(|_| "ours");
    write_suite(&a.run.out, "ablate", &p, &suite, reference)
}

/// Parses `key=v1,v2`. Each value is read as JSON when it parses, else as a string.
fn parse_axis(s: &str) -> Result<SweepAxis> {
    let (key, vals) = s
        .split_once('=')
        .ok_or_else(|| BicError::Config(format!("axis `{s}` is not of the form key=v1,v2")))?;
    let values = vals
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    Ok(SweepAxis { key: key.trim().to_string(), values })
}

fn sweep(a: SweepArgs) -> Result<Status> {
    if a.axes.is_empty() && a.fractions.is_empty() {
        return Err(BicError::Config("sweep needs --axis or --fractions".into()));
    }
    let mut p = prepare(&a.run)?;
    p.spec.axes = a.axes.iter().map(|s| parse_axis(s)).collect::<Result<_>>()?;
    p.spec.validate()?;
    let mut runner = Runner::new(&p.dataset).on_run(progress(a.run.quiet));
    let mut suite = Suite::default();
    if !p.spec.axes.is_empty() {
        suite = run_sweep(&mut runner, &p.spec)?;
    }
    if !a.fractions.is_empty() {
        let removal = run_modality_removal(&mut runner, &p.spec, &a.fractions)?;
        write_text(a.run.out.join("removal.csv"), &removal_csv(&removal))?;
        suite.reports.extend(removal.reports);
        suite.failures.extend(removal.failures);
    }
    drop(runner);
    write_suite(&a.run.out, "sweep", &p, &suite, None)
}

/// A checkpoint's model in its own precision, with the dataset it is scored on.
fn with_model<T>(a: &ModelArgs, f: impl Fn(&dyn Analyzable, &Dataset, &[String]) -> Result<T>) -> Result<T> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let synth = match &a.config {
        Some(p) => read_config(p)?.1,
        None if a.data.is_none() => {
            return Err(BicError::Config("need --data or --config to locate the dataset".into()));
        }
        None => SynthConfig::default(),
    };
    let (_, ds) = load_data(a.data.as_deref(), synth, ck.config.tweet_cap)?;
    let ids = ds.split_ids(&a.split).map_err(|_| BicError::Config(format!("unknown split `{}`", a.split)))?.to_vec();
    match ck.config.precision {
        Precision::F32 => f(&ck.into_model::<f32>()?, &ds, &ids),
        Precision::F64 => f(&ck.into_model::<f64>()?, &ds, &ids),
    }
}

/// Precision-erased view of a trained model for the reporting commands.
trait Analyzable {
    fn config(&self) -> &ModelConfig;
    fn evaluate(&self, ds: &Dataset, ids: &[String]) -> Result<(bic::model::Metrics, String)>;
    fn boxplot(&self, ds: &Dataset, ids: &[String]) -> Result<bic::analysis::Boxplot>;
    fn cluster(&self, ds: &Dataset, ids: &[String], k: usize, restarts: usize, seed: u64)
        -> Result<bic::analysis::Clustering>;
    fn case(&self, ds: &Dataset, id: &str) -> Result<(bic::analysis::CaseStudy, Vec<(String, String)>)>;
}

fn matrix_csv<R: Real>(m: &Tensor<R>) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{:.6e}", v.as_f64())).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

impl<R: Real> Analyzable for BicModel<R> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn evaluate(&self, ds: &Dataset, ids: &[String]) -> Result<(bic::model::Metrics, String)> {
        let xs = prepare_inputs::<R>(ds, ids, &self.config, &self.spec)?;
        let metrics = evaluate(self, &xs)?;
        let mut csv = String::from("user_id,label,bot_probability,prediction\n");
        for (x, lg) in xs.iter().zip(predict(self, &xs)?) {
            let [a, b] = lg.map(|v| v.as_f64());
            let p = 1.0 / (1.0 + (a - b).exp());
            let label = x.label.map_or(String::new(), |l| l.to_string());
            csv.push_str(&format!("{},{label},{p:.6},{}\n", x.id, u8::from(b > a)));
        }
        Ok((metrics, csv))
    }

    fn boxplot(&self, ds: &Dataset, ids: &[String]) -> Result<bic::analysis::Boxplot> {
        consistency_boxplot_data(self, ds, ids)
    }

    fn cluster(&self, ds: &Dataset, ids: &[String], k: usize, restarts: usize, seed: u64) -> Result<bic::analysis::Clustering> {
        cluster_consistency(self, ds, ids, k, restarts, seed)
    }

    fn case(&self, ds: &Dataset, id: &str) -> Result<(bic::analysis::CaseStudy, Vec<(String, String)>)> {
        let report = case_study_export(self, ds, id)?;
        let x = prepare_inputs::<R>(ds, &[id.to_string()], &self.config, &self.spec)?.remove(0);
        let trace = self.forward(&x)?;
        let mut files = Vec::new();
        for (l, m) in trace.attention.iter().enumerate() {
            files.push((format!("{id}.step{l}.raw.csv"), matrix_csv(m)));
            files.push((format!("{id}.step{l}.pooled.csv"), matrix_csv(&pool_matrix(m, self.config.pool)?)));
        }
        Ok((report, files))
    }
}

fn evaluate_cmd(a: ModelArgs) -> Result<Status> {
    let (metrics, preds) = with_model(&a, |m, ds, ids| m.evaluate(ds, ids))?;
    write_json(a.out.join("evaluation.json"), &json!({ "split": a.split, "metrics": metrics }))?;
    write_text(a.out.join("predictions.csv"), &preds)?;
    println!("{} acc {:.4} f1 {:.4}", a.split, metrics.accuracy, metrics.f1);
    Ok(Status::Ok)
}

fn analyze(a: AnalyzeArgs) -> Result<Status> {
    let out = a.model.out.clone();
    with_model(&a.model, |m, ds, ids| {
        if m.config().uses_consistency() {
            let bp = m.boxplot(ds, ids)?;
            write_text(out.join("eigenvalues.csv"), &bp.to_csv())?;
            write_text(out.join("eigen_summary.csv"), &bp.summary_csv())?;
            let seed = a.seed.unwrap_or(m.config().seed);
            let cl = m.cluster(ds, ids, a.k, a.restarts, seed)?;
            write_text(out.join("clusters.csv"), &cl.to_csv())?;
            write_json(
                out.join("clustering.json"),
                &json!({
                    "k": a.k,
                    "restarts": a.restarts,
                    "seed": seed,
                    "users": cl.ids.len(),
                    "score": cl.score,
                    "explained_variance": cl.projection.explained_variance,
                }),
            )?;
            println!(
                "v-measure {:.4} (homogeneity {:.4}, completeness {:.4})",
                cl.score.v_measure, cl.score.homogeneity, cl.score.completeness
            );
        } else {
            eprintln!("model has no consistency block; skipping eigenvalue and clustering reports");
        }
        for id in &a.cases {
            let (report, files) = m.case(ds, id)?;
            write_json(out.join("cases").join(format!("{id}.json")), &report)?;
            for (name, body) in files {
                write_text(out.join("cases").join(name), &body)?;
            }
        }
        Ok(())
    })?;
    Ok(Status::Ok)
}

/// Smallest instance that exercises every block: four users with two tweets
/// each, D=4, two steps, K=2.
fn tiny_instance() -> (ModelConfig, SynthConfig) {
    let model = ModelConfig {
        hidden_dim: 4,
        heads: 2,
        ffn_dim: 6,
        steps: 2,
        pool: 2,
        consistency_dim: 3,
        consistency_out: 3,
        ..ModelConfig::default()
    };
    let synth = SynthConfig {
        n_genuine: 2,
        n_traditional: 1,
        n_advanced: 1,
        dim: 4,
        feature_dim: 3,
        tweets_min: 2,
        tweets_max: 2,
        edges_per_user: 1,
        communities: 2,
        ..SynthConfig::default()
    };
    (model, synth)
}

fn gradcheck(a: GradArgs) -> Result<Status> {
    let (mut cfg, synth) = match &a.config {
        Some(p) => read_config(p)?,
        None => tiny_instance(),
    };
    cfg.seed = a.seed;
    cfg.precision = Precision::F64;
    cfg.dropout = 0.0;
    cfg.validate()?;
    let ds = generate_synthetic(&synth)?;
    let ids: Vec<String> = ds.labelled_ids().into_iter().take(a.users.max(1)).collect();
    let model = BicModel::<f64>::new(cfg.clone(), InputSpec::from_dataset(&ds, &cfg))?;
    let xs = prepare_inputs::<f64>(&ds, &ids, &cfg, &model.spec)?;
    let check = GradCheckConfig { max_coords: a.max_coords, ..GradCheckConfig::with_tol(a.tol) };
    let report = grad_check_model(&model, &xs, &check)?;
    let worst = report.worst().map_or("-".to_string(), |w| format!("{} ({:.3e})", w.name, w.max_rel_error));
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!("{verdict}: {} parameters, tol {:e}, worst {worst}", report.params.len(), a.tol);
    if let Some(out) = &a.out {
        write_json(out.join("gradcheck.json"), &report)?;
    }
    Ok(if report.passed() { Status::Ok } else { Status::RunFailed })
}
