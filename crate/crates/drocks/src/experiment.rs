//! Experiment runner: config parsing, dataset resolution, multi-seed
//! repetition, final evaluation, and report emission.
//!
//! One process runs one experiment (one dataset, one method, one kernel
//! count); sweeps are shell-level composition. Every artifact embeds the
//! config hash and master seed, and identical configs produce
//! byte-identical outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, FedAvgVariant, ServerRun};
use crate::data::{self, ClientData, Dataset};
use crate::error::{Error, Result};
use crate::federation::{self, Dropout, FederationConfig, RoundLog, Topology};
use crate::linreg::{self, LinearModel, TrainConfig};
use crate::metrics::{self, CommReport};
use crate::rng::{self, TAG_REPEAT};
use crate::rocket::{transform, FeatureMatrix, KernelSet, TimeSeries};

/// Environment variable naming the dataset root directory.
pub const DATA_ROOT_ENV: &str = "DROCKS_DATA_ROOT";
/// Marker file written when a run aborts with partial results.
pub const PARTIAL_MARKER: &str = "PARTIAL";

/// Training scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Drocks,
    Frocks,
    FedavgRaw,
    FedavgRocket,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Drocks => "drocks",
            Method::Frocks => "frocks",
            Method::FedavgRaw => "fedavg_raw",
            Method::FedavgRocket => "fedavg_rocket",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drocks" => Ok(Method::Drocks),
            "frocks" => Ok(Method::Frocks),
            "fedavg_raw" => Ok(Method::FedavgRaw),
            "fedavg_rocket" => Ok(Method::FedavgRocket),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?} (expected drocks, frocks, fedavg_raw or fedavg_rocket)"
            ))),
        }
    }
}

fn default_kernels() -> usize {
    100
}
fn default_clients() -> usize {
    4
}
fn default_rounds() -> usize {
    100
}
fn default_repeats() -> usize {
    5
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    4
}
fn default_local_epochs() -> usize {
    10
}

/// One experiment: a dataset, a method, and the shared protocol knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset name, resolved as `<root>/<name>/<name>_TRAIN.tsv` plus
    /// the matching `_TEST.tsv`.
    pub dataset: String,
    pub method: Method,
    #[serde(default = "default_kernels")]
    pub kernels: usize,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub dropout: Option<Dropout>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Overrides the `DROCKS_DATA_ROOT` environment variable.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    /// Evaluate clients on their test shards every round (slower; the
    /// final evaluation happens regardless).
    #[serde(default)]
    pub per_round_metrics: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config JSON: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::InvalidConfig("dataset name is empty".into()));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        // Shared shape constraints live on the federation config.
        self.federation_config(0).validate()
    }

    /// SHA-256 of the canonical config JSON.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Dataset root: explicit config value, else the environment
    /// variable, else `./data`.
    pub fn resolved_data_root(&self) -> PathBuf {
        if let Some(root) = &self.data_root {
            return root.clone();
        }
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            if !root.is_empty() {
                return PathBuf::from(root);
            }
        }
        PathBuf::from("data")
    }

    pub fn train_paths(&self) -> (PathBuf, PathBuf) {
        let dir = self.resolved_data_root().join(&self.dataset);
        (
            dir.join(format!("{}_TRAIN.tsv", self.dataset)),
            dir.join(format!("{}_TEST.tsv", self.dataset)),
        )
    }

    fn federation_config(&self, repeat_seed: u64) -> FederationConfig {
        FederationConfig {
            clients: self.clients,
            kernels: self.kernels,
            max_rounds: self.rounds,
            topology: self.topology,
            dropout: self.dropout.clone(),
            train: TrainConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                local_epochs: self.local_epochs,
                ..TrainConfig::default()
            },
            master_seed: repeat_seed,
            eval_every_round: self.per_round_metrics,
            initial_seeds: None,
        }
    }
}

/// Final evaluation of one model across all client test shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    /// Unweighted mean over clients with test data (the headline).
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    /// Union of all client test shards evaluated as one set.
    pub pooled_accuracy: f64,
    pub pooled_macro_f1: f64,
    pub per_client: Vec<federation::ClientMetric>,
}

fn features_for(
    series: &[TimeSeries],
    kernels: Option<&KernelSet>,
) -> Result<FeatureMatrix> {
    match kernels {
        Some(ks) => transform(series, ks),
        None => {
            let labels: Vec<usize> = series.iter().map(|x| x.label).collect();
            let cols = series.first().map(|x| x.len()).unwrap_or(0);
            let values: Vec<f64> = series.iter().flat_map(|x| x.values.iter().copied()).collect();
            FeatureMatrix::new(values, series.len(), cols, labels)
        }
    }
}

/// Evaluates the final model on every client's test shard, including any
/// clients that dropped out of training.
pub fn evaluate_final(
    model: &LinearModel,
    kernels: Option<&KernelSet>,
    clients: &[ClientData],
    class_count: usize,
) -> Result<FinalEval> {
    let mut per_client = Vec::new();
    let mut pooled_true = Vec::new();
    let mut pooled_pred = Vec::new();
    for (id, client) in clients.iter().enumerate() {
        if client.test.is_empty() {
            continue;
        }
        let features = features_for(&client.test, kernels)?;
        let pred = linreg::predict(&features, model)?;
        let report = metrics::evaluate(features.labels(), &pred, class_count)?;
        per_client.push(federation::ClientMetric {
            client: id,
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
        });
        pooled_true.extend_from_slice(features.labels());
        pooled_pred.extend(pred);
    }
    if per_client.is_empty() {
        return Err(Error::InvalidInput("no client has test data".into()));
    }
    let n = per_client.len() as f64;
    let pooled = metrics::evaluate(&pooled_true, &pooled_pred, class_count)?;
    Ok(FinalEval {
        mean_accuracy: per_client.iter().map(|m| m.accuracy).sum::<f64>() / n,
        mean_macro_f1: per_client.iter().map(|m| m.macro_f1).sum::<f64>() / n,
        pooled_accuracy: pooled.accuracy,
        pooled_macro_f1: pooled.macro_f1,
        per_client,
    })
}

/// Everything one repeat produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub rounds_run: usize,
    pub converged_at: Option<usize>,
    pub eval: FinalEval,
    #[serde(skip)]
    pub logs: Vec<RoundLog>,
    #[serde(skip)]
    pub model: Option<LinearModel>,
    #[serde(skip)]
    pub kernel_seeds: Option<Vec<crate::rocket::KernelSeed>>,
    pub total_messages: usize,
    pub total_bytes: usize,
}

/// Runs one repeat: partition, train with the method, evaluate finally.
pub fn run_repeat(cfg: &ExperimentConfig, ds: &Dataset, repeat: usize) -> Result<RepeatOutcome> {
    let seed = rng::mix(cfg.master_seed, &[TAG_REPEAT, repeat as u64]);
    let partition = data::partition_iid(ds, cfg.clients, seed)?;
    let fed = cfg.federation_config(seed);

    let (model, kernels, logs, converged_at) = match cfg.method {
        Method::Drocks => {
            let run = federation::run_drocks(&fed, &partition.clients, ds.class_count)?;
            (run.model, Some(run.kernels), run.logs, run.converged_at)
        }
        Method::Frocks => {
            let run = baselines::run_frocks(&fed, &partition.clients, ds.class_count)?;
            (run.model, run.kernels, run.logs, run.converged_at)
        }
        Method::FedavgRaw | Method::FedavgRocket => {
            let variant = if cfg.method == Method::FedavgRaw {
                FedAvgVariant::Raw
            } else {
                FedAvgVariant::RocketShared
            };
            let ServerRun { model, kernels, logs, converged_at } =
                baselines::run_fedavg(variant, &fed, &partition.clients, ds.class_count)?;
            (model, kernels, logs, converged_at)
        }
    };

    let eval = evaluate_final(&model, kernels.as_ref(), &partition.clients, ds.class_count)?;
    let total_messages = logs.iter().map(|l| l.messages_sent).sum();
    let total_bytes = logs.iter().map(|l| l.bytes_sent).sum();
    Ok(RepeatOutcome {
        repeat,
        seed,
        rounds_run: logs.len(),
        converged_at,
        eval,
        kernel_seeds: kernels.map(|ks| ks.seeds()),
        model: Some(model),
        logs,
        total_messages,
        total_bytes,
    })
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize)]
struct SummaryStats {
    mean_accuracy: f64,
    std_accuracy: f64,
    mean_macro_f1: f64,
    std_macro_f1: f64,
    pooled_mean_accuracy: f64,
    pooled_mean_macro_f1: f64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    master_seed: u64,
    /// The effective config after flag overrides; with the hash and seed
    /// this fully specifies reproduction.
    config: &'a ExperimentConfig,
    label_mapping: Vec<(String, usize)>,
    summary: SummaryStats,
    repeat_outcomes: &'a [RepeatOutcome],
    comm: Vec<CommReport>,
}

/// Model artifact: header fields lead, then the canonical model fields
/// (flattened, so `LinearModel::from_json` still reads the file).
#[derive(Debug, Serialize)]
struct ModelArtifact<'a> {
    config_hash: &'a str,
    master_seed: u64,
    #[serde(flatten)]
    model: &'a LinearModel,
}

#[derive(Debug, Serialize)]
struct KernelsArtifact<'a> {
    config_hash: &'a str,
    master_seed: u64,
    kernel_seeds: &'a [crate::rocket::KernelSeed],
}

/// Artifacts of a completed experiment.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub mean_macro_f1: f64,
    pub mean_accuracy: f64,
    pub repeats: Vec<RepeatOutcome>,
}

fn format_float(v: f64) -> String {
    // Shortest round-trip decimal, same policy as the JSON artifacts.
    let mut out = String::new();
    fmt::write(&mut out, format_args!("{v}")).expect("formatting cannot fail");
    out
}

fn write_csv(
    path: &Path,
    cfg: &ExperimentConfig,
    hash: &str,
    outcomes: &[RepeatOutcome],
) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# config_hash: {hash}")?;
    writeln!(buf, "# master_seed: {}", cfg.master_seed)?;
    writeln!(buf, "dataset,method,K,seed,accuracy,macro_f1")?;
    for o in outcomes {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            cfg.dataset,
            cfg.method,
            cfg.kernels,
            o.seed,
            format_float(o.eval.mean_accuracy),
            format_float(o.eval.mean_macro_f1),
        )?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Runs all repeats and writes `results.csv`, `summary.json`, per-repeat
/// round logs, models, and kernel seed lists into the output directory.
/// On a failed repeat, completed rows are still written next to a
/// `PARTIAL` marker and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (train_path, test_path) = cfg.train_paths();
    let ds = data::load_ucr(&train_path, &test_path)?;
    if cfg.method == Method::Frocks && ds.class_count != 2 {
        return Err(Error::UnsupportedTask(format!(
            "multiclass unsupported: {} has {} classes and frocks is binary-only",
            ds.name, ds.class_count
        )));
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    let hash = cfg.hash();
    let csv_path = cfg.output_dir.join("results.csv");
    let summary_path = cfg.output_dir.join("summary.json");
    let partial_path = cfg.output_dir.join(PARTIAL_MARKER);
    // A fresh run invalidates any stale marker from a previous attempt.
    let _ = std::fs::remove_file(&partial_path);

    let results: Vec<Result<RepeatOutcome>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|repeat| run_repeat(cfg, &ds, repeat))
        .collect();

    let mut outcomes = Vec::with_capacity(cfg.repeats);
    for result in results {
        match result {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                write_csv(&csv_path, cfg, &hash, &outcomes)?;
                std::fs::write(
                    &partial_path,
                    format!(
                        "# config_hash: {hash}\n# master_seed: {}\nrepeat {} failed: {e}\n",
                        cfg.master_seed,
                        outcomes.len()
                    ),
                )?;
                return Err(e);
            }
        }
    }

    write_csv(&csv_path, cfg, &hash, &outcomes)?;
    for o in &outcomes {
        let jsonl: String = o
            .logs
            .iter()
            .map(|log| serde_json::to_string(log).expect("log serialization cannot fail"))
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(
            cfg.output_dir.join(format!("rounds_{}.jsonl", o.repeat)),
            format!("# config_hash: {hash}\n# master_seed: {}\n{jsonl}\n", cfg.master_seed),
        )?;
        if let Some(model) = &o.model {
            let artifact = ModelArtifact { config_hash: &hash, master_seed: cfg.master_seed, model };
            std::fs::write(
                cfg.output_dir.join(format!("model_{}.json", o.repeat)),
                serde_json::to_string(&artifact).expect("model serialization cannot fail"),
            )?;
        }
        if let Some(seeds) = &o.kernel_seeds {
            let artifact = KernelsArtifact {
                config_hash: &hash,
                master_seed: cfg.master_seed,
                kernel_seeds: seeds,
            };
            std::fs::write(
                cfg.output_dir.join(format!("kernels_{}.json", o.repeat)),
                serde_json::to_string(&artifact).expect("seed serialization cannot fail"),
            )?;
        }
    }

    let acc: Vec<f64> = outcomes.iter().map(|o| o.eval.mean_accuracy).collect();
    let f1: Vec<f64> = outcomes.iter().map(|o| o.eval.mean_macro_f1).collect();
    let pooled_acc: Vec<f64> = outcomes.iter().map(|o| o.eval.pooled_accuracy).collect();
    let pooled_f1: Vec<f64> = outcomes.iter().map(|o| o.eval.pooled_macro_f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
    let comm: Vec<CommReport> = outcomes
        .iter()
        .map(|o| {
            CommReport::new(
                cfg.method.as_str(),
                o.logs.iter().map(|l| l.messages_sent).collect(),
                o.logs.iter().map(|l| l.bytes_sent).collect(),
            )
        })
        .collect();
    let summary = Summary {
        config_hash: &hash,
        master_seed: cfg.master_seed,
        config: cfg,
        label_mapping: ds.label_mapping(),
        summary: SummaryStats {
            mean_accuracy,
            std_accuracy,
            mean_macro_f1,
            std_macro_f1,
            pooled_mean_accuracy: mean_std(&pooled_acc).0,
            pooled_mean_macro_f1: mean_std(&pooled_f1).0,
        },
        repeat_outcomes: &outcomes,
        comm,
    };
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail"),
    )?;

    Ok(ExperimentOutcome {
        output_dir: cfg.output_dir.clone(),
        csv_path,
        summary_path,
        mean_macro_f1,
        mean_accuracy,
        repeats: outcomes,
    })
}

/// Metric column used by report comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMetric {
    MacroF1,
    Accuracy,
}

impl std::str::FromStr for CompareMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(CompareMetric::MacroF1),
            "acc" => Ok(CompareMetric::Accuracy),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric {other:?} (expected f1 or acc)"
            ))),
        }
    }
}

/// Per-method mean rank over the datasets every method covers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub datasets: Vec<String>,
    /// `(method, mean rank)` sorted by rank, then name.
    pub ranks: Vec<(String, f64)>,
}

const CSV_HEADER: [&str; 6] = ["dataset", "method", "K", "seed", "accuracy", "macro_f1"];

fn parse_results_csv(path: &Path) -> Result<Vec<(String, String, f64, f64)>> {
    let fail = |e: &dyn fmt::Display| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| fail(&e))?;
    let headers = reader.headers().map_err(|e| fail(&e))?;
    if headers.iter().ne(CSV_HEADER) {
        return Err(fail(&format_args!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| fail(&e))?;
        let number = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| fail(&format_args!("bad number {:?}", &record[i])))
        };
        rows.push((record[0].to_string(), record[1].to_string(), number(4)?, number(5)?));
    }
    Ok(rows)
}

/// Reads result CSVs, averages repeats per `(method, dataset)`, and ranks
/// methods on the datasets all of them cover.
pub fn compare(paths: &[PathBuf], metric: CompareMetric) -> Result<CompareReport> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no report files given".into()));
    }
    let mut scores: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for path in paths {
        for (dataset, method, acc, f1) in parse_results_csv(path)? {
            let value = match metric {
                CompareMetric::Accuracy => acc,
                CompareMetric::MacroF1 => f1,
            };
            scores.entry((method, dataset)).or_default().push(value);
        }
    }
    let methods: BTreeSet<String> = scores.keys().map(|(m, _)| m.clone()).collect();
    if methods.is_empty() {
        return Err(Error::InvalidConfig("report files contain no rows".into()));
    }
    let mut common: Option<BTreeSet<String>> = None;
    for method in &methods {
        let covered: BTreeSet<String> = scores
            .keys()
            .filter(|(m, _)| m == method)
            .map(|(_, d)| d.clone())
            .collect();
        common = Some(match common {
            None => covered,
            Some(c) => c.intersection(&covered).cloned().collect(),
        });
    }
    let datasets: Vec<String> = common.unwrap_or_default().into_iter().collect();
    if datasets.is_empty() {
        return Err(Error::InvalidConfig(
            "no dataset is covered by every method".into(),
        ));
    }

    let method_list: Vec<String> = methods.into_iter().collect();
    let matrix: Vec<Vec<f64>> = method_list
        .iter()
        .map(|m| {
            datasets
                .iter()
                .map(|d| {
                    let vs = &scores[&(m.clone(), d.clone())];
                    vs.iter().sum::<f64>() / vs.len() as f64
                })
                .collect()
        })
        .collect();
    let ranks = metrics::mean_ranks(&matrix)?;
    let mut pairs: Vec<(String, f64)> = method_list.into_iter().zip(ranks).collect();
    pairs.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(CompareReport {
        datasets,
        ranks: pairs,
    })
}
