//! Sequential decentralized training: one model travels client to client,
//! each hop fine-tunes it and forwards the best kernels.
//!
//! A round visits every active client exactly once. The visited client
//! draws fresh kernels to top its working set back up to `K`, places the
//! received weight columns in their kernel positions (fresh kernels start
//! at zero weight), fine-tunes on local data, keeps the `p = K / N`
//! kernels with the largest squared weights, and hands those seeds plus
//! their weight columns to the next client. One directed handoff per
//! visit makes the per-round message count equal to the number of active
//! clients, half of what a server round trip costs.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientData;
use crate::error::{Error, Result};
use crate::linreg::{self, LinearModel, TrainConfig};
use crate::metrics;
use crate::rng::{self, TAG_FRESH, TAG_INITIAL, TAG_SHUFFLE, TAG_TOPOLOGY};
use crate::rocket::{transform, KernelSeed, KernelSet};

/// Absolute floor of the convergence tolerance on handoff weights.
pub const CONVERGENCE_ABS_TOL: f64 = 1e-8;
/// Relative part of the convergence tolerance on handoff weights.
pub const CONVERGENCE_REL_TOL: f64 = 1e-5;

/// Client visiting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Ring,
    Random,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Topology::Ring),
            "random" => Ok(Topology::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown topology {other:?} (expected ring or random)"
            ))),
        }
    }
}

/// Removal of clients from the visiting order at a given round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub round: usize,
    pub clients: Vec<usize>,
}

/// Parameters of one decentralized training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// Client count `N`.
    pub clients: usize,
    /// Kernels per local fit, `K`.
    pub kernels: usize,
    /// Round cap `R`.
    pub max_rounds: usize,
    pub topology: Topology,
    pub dropout: Option<Dropout>,
    pub train: TrainConfig,
    pub master_seed: u64,
    /// Evaluate each visited client on its local test set every round.
    /// Disable to skip per-round transforms of the test shards.
    pub eval_every_round: bool,
    /// Overrides the seeded draw of the first client's `p` kernels.
    /// Intended for convergence fixtures and debugging.
    pub initial_seeds: Option<Vec<KernelSeed>>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            kernels: 100,
            max_rounds: 100,
            topology: Topology::Ring,
            dropout: None,
            train: TrainConfig::default(),
            master_seed: 0,
            eval_every_round: true,
            initial_seeds: None,
        }
    }
}

impl FederationConfig {
    /// Handoff size `p = floor(K / N)`.
    pub fn p(&self) -> usize {
        self.kernels / self.clients
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 1 {
            return Err(Error::InvalidConfig("client count must be at least 1".into()));
        }
        if self.kernels < self.clients {
            return Err(Error::InvalidConfig(format!(
                "kernel count {} below client count {} leaves no kernels to hand off",
                self.kernels, self.clients
            )));
        }
        if self.max_rounds < 1 {
            return Err(Error::InvalidConfig("round cap must be at least 1".into()));
        }
        self.train.validate()?;
        if let Some(d) = &self.dropout {
            if d.round < 1 {
                return Err(Error::InvalidConfig("dropout round must be at least 1".into()));
            }
            let distinct: HashSet<usize> = d.clients.iter().copied().collect();
            if distinct.len() != d.clients.len() {
                return Err(Error::InvalidConfig("dropout clients repeated".into()));
            }
            if let Some(&c) = d.clients.iter().find(|&&c| c >= self.clients) {
                return Err(Error::InvalidConfig(format!(
                    "dropout client {c} outside 0..{}",
                    self.clients
                )));
            }
            if distinct.len() >= self.clients {
                return Err(Error::InvalidConfig("dropout would remove every client".into()));
            }
        }
        if let Some(seeds) = &self.initial_seeds {
            if seeds.len() != self.p() {
                return Err(Error::InvalidConfig(format!(
                    "initial seed override has {} seeds, expected p = {}",
                    seeds.len(),
                    self.p()
                )));
            }
            let distinct: HashSet<KernelSeed> = seeds.iter().copied().collect();
            if distinct.len() != seeds.len() {
                return Err(Error::InvalidConfig("initial seed override repeats seeds".into()));
            }
        }
        Ok(())
    }
}

/// The single directed message between consecutive clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffMessage {
    pub round: usize,
    pub sender: usize,
    pub kernel_seeds: Vec<KernelSeed>,
    /// `C_eff` rows, one weight per kernel seed, aligned by position.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl HandoffMessage {
    fn validate(&self) -> Result<()> {
        if self.kernel_seeds.is_empty() {
            return Err(Error::Protocol("handoff carries no kernel seeds".into()));
        }
        let distinct: HashSet<KernelSeed> = self.kernel_seeds.iter().copied().collect();
        if distinct.len() != self.kernel_seeds.len() {
            return Err(Error::Protocol("handoff repeats kernel seeds".into()));
        }
        if self.weights.is_empty() || self.weights.len() != self.intercepts.len() {
            return Err(Error::Protocol(
                "handoff weight rows do not match intercepts".into(),
            ));
        }
        if self.weights.iter().any(|row| row.len() != self.kernel_seeds.len()) {
            return Err(Error::Protocol(
                "handoff weight columns do not match kernel seeds".into(),
            ));
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(self.intercepts.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Protocol("handoff carries non-finite values".into()));
        }
        Ok(())
    }
}

/// Canonical JSON encoding; the byte length is what communication
/// accounting charges per handoff.
pub fn encode_handoff(msg: &HandoffMessage) -> Result<Vec<u8>> {
    msg.validate()?;
    serde_json::to_vec(msg).map_err(|e| Error::Protocol(format!("encode: {e}")))
}

pub fn decode_handoff(bytes: &[u8]) -> Result<HandoffMessage> {
    let msg: HandoffMessage =
        serde_json::from_slice(bytes).map_err(|e| Error::Protocol(format!("decode: {e}")))?;
    msg.validate()?;
    Ok(msg)
}

/// End-of-round convergence test: seed sets equal as sets, and every
/// seed-aligned weight entry within `1e-8 + 1e-5 * |current|`.
pub fn converged(prev: &HandoffMessage, cur: &HandoffMessage) -> bool {
    if prev.kernel_seeds.len() != cur.kernel_seeds.len()
        || prev.weights.len() != cur.weights.len()
    {
        return false;
    }
    let prev_set: BTreeSet<KernelSeed> = prev.kernel_seeds.iter().copied().collect();
    let cur_set: BTreeSet<KernelSeed> = cur.kernel_seeds.iter().copied().collect();
    if prev_set != cur_set {
        return false;
    }
    let prev_pos: HashMap<KernelSeed, usize> = prev
        .kernel_seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    for (j_cur, seed) in cur.kernel_seeds.iter().enumerate() {
        let j_prev = prev_pos[seed];
        for c in 0..cur.weights.len() {
            let a = prev.weights[c][j_prev];
            let b = cur.weights[c][j_cur];
            if (a - b).abs() > CONVERGENCE_ABS_TOL + CONVERGENCE_REL_TOL * b.abs() {
                return false;
            }
        }
    }
    true
}

/// Cyclic successor of `current` among the active clients. `current`
/// itself need not be active (it may have just been dropped).
pub fn ring_successor(active: &[usize], current: usize) -> usize {
    debug_assert!(!active.is_empty());
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    *sorted.iter().find(|&&c| c > current).unwrap_or(&sorted[0])
}

/// The order in which a round visits the active clients.
///
/// Ring: ascending cyclic order starting at the successor of the previous
/// round's last visitee (the smallest active id when there is no previous
/// round). Random: a fresh seeded uniform permutation per round.
pub fn visiting_order(
    topology: Topology,
    master_seed: u64,
    round: usize,
    active: &[usize],
    prev_last: Option<usize>,
) -> Vec<usize> {
    debug_assert!(!active.is_empty());
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    match topology {
        Topology::Ring => {
            let start = match prev_last {
                None => sorted[0],
                Some(c) => ring_successor(&sorted, c),
            };
            let idx = sorted.iter().position(|&x| x == start).unwrap();
            sorted.rotate_left(idx);
            sorted
        }
        Topology::Random => {
            sorted.shuffle(&mut rng::stream(master_seed, &[TAG_TOPOLOGY, round as u64]));
            sorted
        }
    }
}

/// Active clients for a round: everyone, minus the configured dropout set
/// from its round onward.
pub fn apply_dropout(cfg: &FederationConfig, round: usize, all: &[usize]) -> Vec<usize> {
    match &cfg.dropout {
        Some(d) if round >= d.round => {
            let dropped: HashSet<usize> = d.clients.iter().copied().collect();
            all.iter().copied().filter(|c| !dropped.contains(c)).collect()
        }
        _ => all.to_vec(),
    }
}

/// Quality of one client's local test evaluation at one visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetric {
    pub client: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// What one round did: order, per-hop selections, per-hop working set
/// sizes, per-client metrics, and communication totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub visiting_order: Vec<usize>,
    /// Seeds each hop handed off, aligned with `visiting_order`.
    pub selected_seeds: Vec<Vec<KernelSeed>>,
    /// Kernel count at each local fit, aligned with `visiting_order`.
    pub working_kernels: Vec<usize>,
    pub client_metrics: Vec<ClientMetric>,
    pub messages_sent: usize,
    pub bytes_sent: usize,
}

/// Result of a decentralized run: the last visited client's full model
/// and kernel set, per-round logs, and the round the convergence latch
/// fired (if it did).
#[derive(Debug, Clone, PartialEq)]
pub struct DrocksRun {
    pub model: LinearModel,
    pub kernels: KernelSet,
    pub logs: Vec<RoundLog>,
    pub converged_at: Option<usize>,
}

/// The state a handoff carries into the next visit.
struct CarryState {
    seeds: Vec<KernelSeed>,
    weights: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
}

impl CarryState {
    fn from_handoff(msg: &HandoffMessage) -> Self {
        Self {
            seeds: msg.kernel_seeds.clone(),
            weights: msg.weights.clone(),
            intercepts: msg.intercepts.clone(),
        }
    }
}

fn draw_initial_seeds(cfg: &FederationConfig) -> Vec<KernelSeed> {
    if let Some(seeds) = &cfg.initial_seeds {
        return seeds.clone();
    }
    let mut r = rng::stream(cfg.master_seed, &[TAG_INITIAL]);
    let mut taken = HashSet::new();
    let mut seeds = Vec::with_capacity(cfg.p());
    while seeds.len() < cfg.p() {
        let s: u64 = r.random();
        if taken.insert(s) {
            seeds.push(KernelSeed(s));
        }
    }
    seeds
}

/// Rebuilds the received kernels, tops the set up to `K` with fresh
/// client-and-round-specific draws, and installs the received weights
/// (fresh kernels start at zero).
fn prepare_visit(
    cfg: &FederationConfig,
    state: &CarryState,
    client: usize,
    round: usize,
    class_count: usize,
    series_len: usize,
) -> Result<(KernelSet, LinearModel)> {
    let p = state.seeds.len();
    let mut seeds = state.seeds.clone();
    let mut taken: HashSet<u64> = seeds.iter().map(|s| s.0).collect();
    let mut r = rng::stream(cfg.master_seed, &[TAG_FRESH, round as u64, client as u64]);
    while seeds.len() < cfg.kernels {
        let s: u64 = r.random();
        if taken.insert(s) {
            seeds.push(KernelSeed(s));
        }
    }
    let kernels = KernelSet::from_seeds(&seeds, series_len)?;

    let mut model = linreg::init_model(cfg.kernels, class_count)?;
    if state.weights.len() != model.c_eff() {
        return Err(Error::Protocol(format!(
            "carried state has {} weight rows, model head needs {}",
            state.weights.len(),
            model.c_eff()
        )));
    }
    for c in 0..model.c_eff() {
        model.weights[c][..p].copy_from_slice(&state.weights[c]);
    }
    model.intercepts = state.intercepts.clone();
    Ok((kernels, model))
}

pub(crate) fn check_clients(clients: &[ClientData], class_count: usize) -> Result<usize> {
    let first = clients
        .iter()
        .flat_map(|c| c.train.first())
        .next()
        .ok_or_else(|| Error::InvalidInput("no client has training data".into()))?;
    let series_len = first.len();
    for (i, c) in clients.iter().enumerate() {
        if c.train.is_empty() {
            return Err(Error::InvalidInput(format!("client {i} has no training data")));
        }
        for x in c.train.iter().chain(c.test.iter()) {
            if x.len() != series_len {
                return Err(Error::InvalidInput(format!(
                    "client {i}: series length {} differs from {}",
                    x.len(),
                    series_len
                )));
            }
            if x.label >= class_count {
                return Err(Error::InvalidInput(format!(
                    "client {i}: label {} outside 0..{}",
                    x.label, class_count
                )));
            }
        }
    }
    Ok(series_len)
}

/// Runs the full decentralized protocol over the given client shards.
pub fn run_drocks(
    cfg: &FederationConfig,
    clients: &[ClientData],
    class_count: usize,
) -> Result<DrocksRun> {
    cfg.validate()?;
    if clients.len() != cfg.clients {
        return Err(Error::InvalidConfig(format!(
            "config says {} clients but {} shards were provided",
            cfg.clients,
            clients.len()
        )));
    }
    if class_count < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    let series_len = check_clients(clients, class_count)?;
    let p = cfg.p();

    let mut state = CarryState {
        seeds: draw_initial_seeds(cfg),
        weights: vec![vec![0.0; p]; if class_count == 2 { 1 } else { class_count }],
        intercepts: vec![0.0; if class_count == 2 { 1 } else { class_count }],
    };

    let all: Vec<usize> = (0..cfg.clients).collect();
    let mut logs = Vec::new();
    let mut prev_final: Option<HandoffMessage> = None;
    let mut prev_last: Option<usize> = None;
    let mut last_fit: Option<(LinearModel, KernelSet)> = None;
    let mut converged_at = None;

    for round in 1..=cfg.max_rounds {
        let active = apply_dropout(cfg, round, &all);
        let order = visiting_order(cfg.topology, cfg.master_seed, round, &active, prev_last);
        let mut selected_seeds = Vec::with_capacity(order.len());
        let mut working_kernels = Vec::with_capacity(order.len());
        let mut client_metrics = Vec::new();
        let mut bytes_sent = 0usize;
        let mut round_final: Option<HandoffMessage> = None;

        for &client in &order {
            let (kernels, model) =
                prepare_visit(cfg, &state, client, round, class_count, series_len)?;
            working_kernels.push(kernels.len());

            let features = transform(&clients[client].train, &kernels)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.shuffle_seed =
                rng::mix(cfg.master_seed, &[TAG_SHUFFLE, round as u64, client as u64]);
            let fitted = linreg::fit(&features, &model, &train_cfg)?;

            if cfg.eval_every_round && !clients[client].test.is_empty() {
                let test_features = transform(&clients[client].test, &kernels)?;
                let pred = linreg::predict(&test_features, &fitted)?;
                let report = metrics::evaluate(test_features.labels(), &pred, class_count)?;
                client_metrics.push(ClientMetric {
                    client,
                    accuracy: report.accuracy,
                    macro_f1: report.macro_f1,
                });
            }

            let sel = linreg::select_top_p(&fitted, &kernels, p)?;
            let msg = HandoffMessage {
                round,
                sender: client,
                kernel_seeds: sel.kernels.seeds(),
                weights: sel.weights,
                intercepts: sel.intercepts,
            };
            bytes_sent += encode_handoff(&msg)?.len();
            selected_seeds.push(msg.kernel_seeds.clone());
            state = CarryState::from_handoff(&msg);
            round_final = Some(msg);
            last_fit = Some((fitted, kernels));
        }

        logs.push(RoundLog {
            round,
            visiting_order: order.clone(),
            selected_seeds,
            working_kernels,
            client_metrics,
            messages_sent: order.len(),
            bytes_sent,
        });
        prev_last = order.last().copied();

        let cur = round_final.expect("round visits at least one client");
        if let Some(prev) = &prev_final {
            if converged(prev, &cur) {
                converged_at = Some(round);
                break;
            }
        }
        prev_final = Some(cur);
    }

    let (model, kernels) = last_fit.expect("at least one round ran");
    Ok(DrocksRun {
        model,
        kernels,
        logs,
        converged_at,
    })
}
