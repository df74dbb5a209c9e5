//! Server-based baselines under the same data splits and accounting as
//! the decentralized protocol: FROCKS (per-round selection federation
//! over disjoint consecutively-seeded kernel sets, binary only) and
//! FedAvg over raw series values or a shared kernel feature set.
//!
//! Both baselines cost two messages per client per round (upload and
//! broadcast), twice the decentralized protocol's single handoff.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientData;
use crate::error::{Error, Result};
use crate::federation::{
    apply_dropout, check_clients, encode_handoff, ClientMetric, FederationConfig, HandoffMessage,
    RoundLog, CONVERGENCE_ABS_TOL, CONVERGENCE_REL_TOL,
};
use crate::linreg::{self, LinearModel};
use crate::metrics;
use crate::rng::{self, TAG_SHARED, TAG_SHUFFLE};
use crate::rocket::{transform, FeatureMatrix, KernelSeed, KernelSet};

/// Consecutive disjoint seed blocks: client `c` (0-indexed) owns seeds
/// `c*K ..= (c+1)*K - 1`.
pub fn frocks_initial_seeds(clients: usize, kernels: usize) -> Vec<Vec<KernelSeed>> {
    (0..clients)
        .map(|c| {
            ((c * kernels) as u64..((c + 1) * kernels) as u64)
                .map(KernelSeed)
                .collect()
        })
        .collect()
}

/// One client's upload: its top-p kernels with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FrocksSelection {
    pub kernel_seeds: Vec<KernelSeed>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// The server's merged view after one aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocksServerState {
    /// Union of client selections, ascending by seed.
    pub kernel_seeds: Vec<KernelSeed>,
    /// Per-seed mean over the clients that reported the seed.
    pub weights: Vec<f64>,
    /// How many clients reported each seed.
    pub contributors: Vec<usize>,
    /// Mean of client intercepts.
    pub intercept: f64,
}

/// Merges client selections: the global set is the union, a seed
/// reported by `m` clients gets the mean of the `m` weights.
pub fn frocks_aggregate(selections: &[FrocksSelection]) -> Result<FrocksServerState> {
    if selections.is_empty() {
        return Err(Error::InvalidInput("no selections to aggregate".into()));
    }
    let p = selections[0].kernel_seeds.len();
    for sel in selections {
        if sel.kernel_seeds.len() != p {
            return Err(Error::InvalidInput(format!(
                "selection sizes differ: {} vs {}",
                sel.kernel_seeds.len(),
                p
            )));
        }
        if sel.weights.len() != sel.kernel_seeds.len() {
            return Err(Error::InvalidInput(
                "selection weights misaligned with seeds".into(),
            ));
        }
    }
    let mut acc: BTreeMap<KernelSeed, (f64, usize)> = BTreeMap::new();
    for sel in selections {
        for (&seed, &w) in sel.kernel_seeds.iter().zip(&sel.weights) {
            let entry = acc.entry(seed).or_insert((0.0, 0));
            entry.0 += w;
            entry.1 += 1;
        }
    }
    let mut kernel_seeds = Vec::with_capacity(acc.len());
    let mut weights = Vec::with_capacity(acc.len());
    let mut contributors = Vec::with_capacity(acc.len());
    for (seed, (sum, m)) in acc {
        kernel_seeds.push(seed);
        weights.push(sum / m as f64);
        contributors.push(m);
    }
    let intercept =
        selections.iter().map(|s| s.intercept).sum::<f64>() / selections.len() as f64;
    Ok(FrocksServerState {
        kernel_seeds,
        weights,
        contributors,
        intercept,
    })
}

/// Seed sets equal and every seed-aligned weight within the entrywise
/// tolerance `1e-8 + 1e-5 * |current|`.
fn frocks_converged(prev: &FrocksServerState, cur: &FrocksServerState) -> bool {
    if prev.kernel_seeds != cur.kernel_seeds {
        return false;
    }
    prev.weights
        .iter()
        .zip(&cur.weights)
        .all(|(a, b)| (a - b).abs() <= CONVERGENCE_ABS_TOL + CONVERGENCE_REL_TOL * b.abs())
}

fn model_from_state(state: &FrocksServerState) -> LinearModel {
    LinearModel {
        task: crate::linreg::Task::Binary,
        class_count: 2,
        weights: vec![state.weights.clone()],
        intercepts: vec![state.intercept],
    }
}

/// Result of a server-based run: the final global model, the kernel set
/// it reads (absent for raw features), and per-round logs.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerRun {
    pub model: LinearModel,
    pub kernels: Option<KernelSet>,
    pub logs: Vec<RoundLog>,
    pub converged_at: Option<usize>,
}

fn shuffle_seed_for(cfg: &FederationConfig, round: usize, client: usize) -> u64 {
    rng::mix(cfg.master_seed, &[TAG_SHUFFLE, round as u64, client as u64])
}

fn eval_on_clients(
    model: &LinearModel,
    features: &[Option<FeatureMatrix>],
    active: &[usize],
    class_count: usize,
) -> Result<Vec<ClientMetric>> {
    let mut out = Vec::new();
    for &client in active {
        if let Some(f) = &features[client] {
            let pred = linreg::predict(f, model)?;
            let report = metrics::evaluate(f.labels(), &pred, class_count)?;
            out.push(ClientMetric {
                client,
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
            });
        }
    }
    Ok(out)
}

/// Runs the selection-federation baseline. Binary tasks only; each round
/// costs one upload and one broadcast per active client.
pub fn run_frocks(
    cfg: &FederationConfig,
    clients: &[ClientData],
    class_count: usize,
) -> Result<ServerRun> {
    cfg.validate()?;
    if clients.len() != cfg.clients {
        return Err(Error::InvalidConfig(format!(
            "config says {} clients but {} shards were provided",
            cfg.clients,
            clients.len()
        )));
    }
    if class_count != 2 {
        return Err(Error::UnsupportedTask(format!(
            "this baseline is binary-only; got {class_count} classes"
        )));
    }
    let series_len = check_clients(clients, class_count)?;
    let p = cfg.p();
    let initial = frocks_initial_seeds(cfg.clients, cfg.kernels);

    let all: Vec<usize> = (0..cfg.clients).collect();
    let mut global: Option<FrocksServerState> = None;
    let mut logs = Vec::new();
    let mut converged_at = None;

    for round in 1..=cfg.max_rounds {
        let active = apply_dropout(cfg, round, &all);
        let mut selections = Vec::with_capacity(active.len());
        let mut selected_seeds = Vec::with_capacity(active.len());
        let mut working_kernels = Vec::with_capacity(active.len());
        let mut bytes_sent = 0usize;

        for &client in &active {
            let (seeds, warm): (Vec<KernelSeed>, LinearModel) = match &global {
                None => {
                    let seeds = initial[client].clone();
                    let model = linreg::init_model(seeds.len(), 2)?;
                    (seeds, model)
                }
                Some(g) => (g.kernel_seeds.clone(), model_from_state(g)),
            };
            working_kernels.push(seeds.len());
            let ks = KernelSet::from_seeds(&seeds, series_len)?;
            let features = transform(&clients[client].train, &ks)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.shuffle_seed = shuffle_seed_for(cfg, round, client);
            let fitted = linreg::fit(&features, &warm, &train_cfg)?;

            let sel = linreg::select_top_p(&fitted, &ks, p)?;
            let upload = HandoffMessage {
                round,
                sender: client,
                kernel_seeds: sel.kernels.seeds(),
                weights: sel.weights.clone(),
                intercepts: sel.intercepts.clone(),
            };
            bytes_sent += encode_handoff(&upload)?.len();
            selected_seeds.push(upload.kernel_seeds.clone());
            selections.push(FrocksSelection {
                kernel_seeds: upload.kernel_seeds,
                weights: sel.weights[0].clone(),
                intercept: sel.intercepts[0],
            });
        }

        let new_global = frocks_aggregate(&selections)?;
        let broadcast_bytes = serde_json::to_vec(&new_global)
            .map_err(|e| Error::Protocol(format!("encode server state: {e}")))?
            .len();
        bytes_sent += broadcast_bytes * active.len();

        let client_metrics = if cfg.eval_every_round {
            let model = model_from_state(&new_global);
            let ks = KernelSet::from_seeds(&new_global.kernel_seeds, series_len)?;
            let mut test_features: Vec<Option<FeatureMatrix>> = vec![None; cfg.clients];
            for &client in &active {
                if !clients[client].test.is_empty() {
                    test_features[client] = Some(transform(&clients[client].test, &ks)?);
                }
            }
            eval_on_clients(&model, &test_features, &active, class_count)?
        } else {
            Vec::new()
        };

        logs.push(RoundLog {
            round,
            visiting_order: active.clone(),
            selected_seeds,
            working_kernels,
            client_metrics,
            messages_sent: 2 * active.len(),
            bytes_sent,
        });

        let done = global
            .as_ref()
            .map(|prev| frocks_converged(prev, &new_global))
            .unwrap_or(false);
        global = Some(new_global);
        if done {
            converged_at = Some(round);
            break;
        }
    }

    let state = global.expect("at least one round ran");
    let kernels = KernelSet::from_seeds(&state.kernel_seeds, series_len)?;
    Ok(ServerRun {
        model: model_from_state(&state),
        kernels: Some(kernels),
        logs,
        converged_at,
    })
}

/// Feature source for the model-averaging baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedAvgVariant {
    /// Features are the z-normalized series values themselves.
    Raw,
    /// One master-seeded kernel set broadcast to every client.
    RocketShared,
}

/// Global model plus the client sample counts it was averaged from.
#[derive(Debug, Clone, PartialEq)]
pub struct FedAvgState {
    pub model: LinearModel,
    pub sample_counts: Vec<usize>,
}

/// Sample-count-weighted mean of client models, entrywise.
pub fn fedavg_aggregate(models: &[LinearModel], counts: &[usize]) -> Result<LinearModel> {
    if models.is_empty() || models.len() != counts.len() {
        return Err(Error::InvalidInput(
            "aggregation needs one sample count per model".into(),
        ));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("aggregation needs at least one sample".into()));
    }
    let first = &models[0];
    for m in models {
        if m.task != first.task
            || m.class_count != first.class_count
            || m.c_eff() != first.c_eff()
            || m.k() != first.k()
        {
            return Err(Error::InvalidInput("client model shapes differ".into()));
        }
    }
    let mut out = first.clone();
    for row in &mut out.weights {
        row.iter_mut().for_each(|w| *w = 0.0);
    }
    out.intercepts.iter_mut().for_each(|b| *b = 0.0);
    for (m, &n) in models.iter().zip(counts) {
        let share = n as f64 / total as f64;
        for (orow, mrow) in out.weights.iter_mut().zip(&m.weights) {
            for (o, w) in orow.iter_mut().zip(mrow) {
                *o += share * w;
            }
        }
        for (o, b) in out.intercepts.iter_mut().zip(&m.intercepts) {
            *o += share * b;
        }
    }
    Ok(out)
}

/// The shared kernel set the rocket-features variant broadcasts once.
pub fn shared_kernel_set(master_seed: u64, kernels: usize, series_len: usize) -> Result<KernelSet> {
    let mut r = rng::stream(master_seed, &[TAG_SHARED]);
    let mut taken = std::collections::HashSet::new();
    let mut seeds = Vec::with_capacity(kernels);
    while seeds.len() < kernels {
        let s: u64 = r.random();
        if taken.insert(s) {
            seeds.push(KernelSeed(s));
        }
    }
    KernelSet::from_seeds(&seeds, series_len)
}

fn raw_features(series: &[crate::rocket::TimeSeries]) -> Result<FeatureMatrix> {
    let labels: Vec<usize> = series.iter().map(|x| x.label).collect();
    let cols = series.first().map(|x| x.len()).unwrap_or(0);
    let values: Vec<f64> = series.iter().flat_map(|x| x.values.iter().copied()).collect();
    FeatureMatrix::new(values, series.len(), cols, labels)
}

/// Runs federated averaging for exactly the configured number of rounds.
/// Kernel features are computed once per client; the kernel set never
/// changes, so rounds only exchange model parameters.
pub fn run_fedavg(
    variant: FedAvgVariant,
    cfg: &FederationConfig,
    clients: &[ClientData],
    class_count: usize,
) -> Result<ServerRun> {
    cfg.validate()?;
    if clients.len() != cfg.clients {
        return Err(Error::InvalidConfig(format!(
            "config says {} clients but {} shards were provided",
            cfg.clients,
            clients.len()
        )));
    }
    let series_len = check_clients(clients, class_count)?;

    let kernels = match variant {
        FedAvgVariant::Raw => None,
        FedAvgVariant::RocketShared => {
            Some(shared_kernel_set(cfg.master_seed, cfg.kernels, series_len)?)
        }
    };
    let width = match &kernels {
        None => series_len,
        Some(ks) => ks.len(),
    };

    let mut train_features = Vec::with_capacity(cfg.clients);
    let mut test_features: Vec<Option<FeatureMatrix>> = Vec::with_capacity(cfg.clients);
    for c in clients {
        match &kernels {
            None => {
                train_features.push(raw_features(&c.train)?);
                test_features.push(if c.test.is_empty() {
                    None
                } else {
                    Some(raw_features(&c.test)?)
                });
            }
            Some(ks) => {
                train_features.push(transform(&c.train, ks)?);
                test_features.push(if c.test.is_empty() {
                    None
                } else {
                    Some(transform(&c.test, ks)?)
                });
            }
        }
    }

    let all: Vec<usize> = (0..cfg.clients).collect();
    let mut global = linreg::init_model(width, class_count)?;
    let mut logs = Vec::new();

    for round in 1..=cfg.max_rounds {
        let active = apply_dropout(cfg, round, &all);
        let mut fitted = Vec::with_capacity(active.len());
        let mut counts = Vec::with_capacity(active.len());
        let mut bytes_sent = 0usize;
        for &client in &active {
            let mut train_cfg = cfg.train.clone();
            train_cfg.shuffle_seed = shuffle_seed_for(cfg, round, client);
            let model = linreg::fit(&train_features[client], &global, &train_cfg)?;
            bytes_sent += model.to_json().len();
            counts.push(train_features[client].rows());
            fitted.push(model);
        }
        global = fedavg_aggregate(&fitted, &counts)?;
        bytes_sent += global.to_json().len() * active.len();

        let client_metrics = if cfg.eval_every_round {
            eval_on_clients(&global, &test_features, &active, class_count)?
        } else {
            Vec::new()
        };

        logs.push(RoundLog {
            round,
            visiting_order: active.clone(),
            selected_seeds: Vec::new(),
            working_kernels: vec![width; active.len()],
            client_metrics,
            messages_sent: 2 * active.len(),
            bytes_sent,
        });
    }

    Ok(ServerRun {
        model: global,
        kernels,
        logs,
        converged_at: None,
    })
}
