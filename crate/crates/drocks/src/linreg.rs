//! Logistic regression over PPV features: mini-batch Adam on
//! cross-entropy, warm starts, and squared-weight kernel importance.
//!
//! Binary tasks use a single-logit sigmoid head so a model over `K`
//! kernels has `K + 1` parameters; multiclass tasks use a `C`-row softmax
//! head with `C*K + C` parameters. Importance of kernel position `k` is
//! the sum over classes of the squared weight `beta_{c,k}^2`, which for
//! the binary head reduces to the squared weight itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_SHUFFLE};
use crate::rocket::{FeatureMatrix, KernelSet};

/// Classification head shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multiclass,
}

/// A linear classifier. `weights` is row-major `C_eff x K` where
/// `C_eff = 1` for binary and `C` for multiclass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub task: Task,
    pub class_count: usize,
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl LinearModel {
    /// Feature width `K`.
    pub fn k(&self) -> usize {
        self.weights[0].len()
    }

    /// Number of weight rows (1 for binary, `C` for multiclass).
    pub fn c_eff(&self) -> usize {
        self.weights.len()
    }

    /// Total trainable parameters: `C_eff * K + C_eff`.
    pub fn param_count(&self) -> usize {
        self.c_eff() * self.k() + self.c_eff()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|w| w.is_finite())
            && self.intercepts.iter().all(|b| b.is_finite())
    }

    /// Canonical JSON form: `{task, class_count, weights, intercepts}`
    /// with floats as shortest round-trip decimals.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: LinearModel = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("model JSON: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let c_eff = match self.task {
            Task::Binary => 1,
            Task::Multiclass => self.class_count,
        };
        if self.task == Task::Binary && self.class_count != 2 {
            return Err(Error::InvalidInput("binary model must have class_count 2".into()));
        }
        if self.task == Task::Multiclass && self.class_count < 3 {
            return Err(Error::InvalidInput(
                "multiclass model must have class_count >= 3".into(),
            ));
        }
        if self.weights.len() != c_eff || self.intercepts.len() != c_eff {
            return Err(Error::InvalidInput("model head shape mismatch".into()));
        }
        let k = self.weights[0].len();
        if k == 0 || self.weights.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidInput("model weight rows ragged or empty".into()));
        }
        if !self.is_finite() {
            return Err(Error::InvalidInput("model has non-finite parameters".into()));
        }
        Ok(())
    }
}

/// Local training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 4,
            local_epochs: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-kernel non-negative importance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
}

/// Zero-initialized model: binary head iff `C = 2`.
pub fn init_model(k: usize, c: usize) -> Result<LinearModel> {
    if k < 1 {
        return Err(Error::InvalidInput("kernel count must be at least 1".into()));
    }
    if c < 2 {
        return Err(Error::InvalidInput("class count must be at least 2".into()));
    }
    let (task, c_eff) = if c == 2 { (Task::Binary, 1) } else { (Task::Multiclass, c) };
    Ok(LinearModel {
        task,
        class_count: c,
        weights: vec![vec![0.0; k]; c_eff],
        intercepts: vec![0.0; c_eff],
    })
}

fn check_width(features: &FeatureMatrix, model: &LinearModel) -> Result<()> {
    if features.cols() != model.k() {
        return Err(Error::InvalidInput(format!(
            "feature width {} does not match model width {}",
            features.cols(),
            model.k()
        )));
    }
    Ok(())
}

fn check_labels(features: &FeatureMatrix, model: &LinearModel) -> Result<()> {
    if let Some(&l) = features.labels().iter().find(|&&l| l >= model.class_count) {
        return Err(Error::InvalidInput(format!(
            "label {} out of range for {} classes",
            l, model.class_count
        )));
    }
    Ok(())
}

/// Class-probability row for one feature vector.
fn proba_row(x: &[f64], model: &LinearModel) -> Vec<f64> {
    match model.task {
        Task::Binary => {
            let z = dot(&model.weights[0], x) + model.intercepts[0];
            let p = sigmoid(z);
            vec![1.0 - p, p]
        }
        Task::Multiclass => {
            let logits: Vec<f64> = model
                .weights
                .iter()
                .zip(&model.intercepts)
                .map(|(w, b)| dot(w, x) + b)
                .collect();
            softmax(&logits)
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Class-probability matrix, one row per sample, `C` columns.
/// Binary rows are `(1 - p, p)`.
pub fn predict_proba(features: &FeatureMatrix, model: &LinearModel) -> Result<Vec<Vec<f64>>> {
    check_width(features, model)?;
    Ok((0..features.rows())
        .map(|i| proba_row(features.row(i), model))
        .collect())
}

/// Argmax class per sample; ties resolve to the smaller class index.
pub fn predict(features: &FeatureMatrix, model: &LinearModel) -> Result<Vec<usize>> {
    let proba = predict_proba(features, model)?;
    Ok(proba
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect())
}

/// Mean cross-entropy over the given rows, computed from logits for
/// numerical stability.
pub fn cross_entropy_loss_rows(features: &FeatureMatrix, rows: &[usize], model: &LinearModel) -> Result<f64> {
    check_width(features, model)?;
    check_labels(features, model)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty row set for loss".into()));
    }
    let mut total = 0.0;
    for &i in rows {
        let x = features.row(i);
        let y = features.labels()[i];
        total += match model.task {
            Task::Binary => {
                let z = dot(&model.weights[0], x) + model.intercepts[0];
                // -[y ln p + (1-y) ln (1-p)] in terms of the logit.
                if y == 1 { softplus(-z) } else { softplus(z) }
            }
            Task::Multiclass => {
                let logits: Vec<f64> = model
                    .weights
                    .iter()
                    .zip(&model.intercepts)
                    .map(|(w, b)| dot(w, x) + b)
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                lse - logits[y]
            }
        };
    }
    Ok(total / rows.len() as f64)
}

/// Mean cross-entropy over the whole matrix.
pub fn cross_entropy_loss(features: &FeatureMatrix, model: &LinearModel) -> Result<f64> {
    let rows: Vec<usize> = (0..features.rows()).collect();
    cross_entropy_loss_rows(features, &rows, model)
}

/// Analytic gradient of the mean cross-entropy over `rows`, shaped like
/// `(weights, intercepts)`.
pub fn gradient(
    features: &FeatureMatrix,
    rows: &[usize],
    model: &LinearModel,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_width(features, model)?;
    check_labels(features, model)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty row set for gradient".into()));
    }
    let k = model.k();
    let c_eff = model.c_eff();
    let mut gw = vec![vec![0.0; k]; c_eff];
    let mut gb = vec![0.0; c_eff];
    let scale = 1.0 / rows.len() as f64;

    for &i in rows {
        let x = features.row(i);
        let y = features.labels()[i];
        match model.task {
            Task::Binary => {
                let z = dot(&model.weights[0], x) + model.intercepts[0];
                let delta = sigmoid(z) - if y == 1 { 1.0 } else { 0.0 };
                for (g, &xv) in gw[0].iter_mut().zip(x) {
                    *g += scale * delta * xv;
                }
                gb[0] += scale * delta;
            }
            Task::Multiclass => {
                let p = proba_row(x, model);
                for c in 0..c_eff {
                    let delta = p[c] - if c == y { 1.0 } else { 0.0 };
                    for (g, &xv) in gw[c].iter_mut().zip(x) {
                        *g += scale * delta * xv;
                    }
                    gb[c] += scale * delta;
                }
            }
        }
    }
    Ok((gw, gb))
}

struct AdamState {
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(c_eff: usize, k: usize) -> Self {
        Self {
            m_w: vec![vec![0.0; k]; c_eff],
            v_w: vec![vec![0.0; k]; c_eff],
            m_b: vec![0.0; c_eff],
            v_b: vec![0.0; c_eff],
            t: 0,
        }
    }

    fn update(&mut self, model: &mut LinearModel, gw: &[Vec<f64>], gb: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t as i32);
        for c in 0..model.c_eff() {
            for j in 0..model.k() {
                let g = gw[c][j];
                let m = &mut self.m_w[c][j];
                let v = &mut self.v_w[c][j];
                *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
                *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
                model.weights[c][j] -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
            }
            let g = gb[c];
            let m = &mut self.m_b[c];
            let v = &mut self.v_b[c];
            *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
            *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
            model.intercepts[c] -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains `local_epochs` epochs of mini-batch Adam on cross-entropy,
/// warm-starting from the incoming parameters. Optimizer state is fresh
/// per call; the per-epoch sample order comes from the shuffle seed, so
/// identical calls are bit-identical.
pub fn fit(features: &FeatureMatrix, model: &LinearModel, cfg: &TrainConfig) -> Result<LinearModel> {
    cfg.validate()?;
    check_width(features, model)?;
    check_labels(features, model)?;
    if features.rows() == 0 {
        return Err(Error::InvalidInput("cannot fit on an empty dataset".into()));
    }

    let mut model = model.clone();
    let mut adam = AdamState::new(model.c_eff(), model.k());
    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..features.rows()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(cfg.shuffle_seed, &[TAG_SHUFFLE, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let (gw, gb) = gradient(features, batch, &model)?;
            adam.update(&mut model, &gw, &gb, cfg);
        }
    }
    debug_assert!(model.is_finite());
    Ok(model)
}

/// Sum over classes of squared weights, per kernel position.
pub fn kernel_importance(model: &LinearModel) -> ImportanceVector {
    let k = model.k();
    let mut scores = vec![0.0; k];
    for row in &model.weights {
        for (s, w) in scores.iter_mut().zip(row) {
            *s += w * w;
        }
    }
    ImportanceVector { scores }
}

/// The `p` best kernels by importance with their aligned weight columns
/// and the model intercepts, importance-descending; ties break toward the
/// smaller kernel seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub kernels: KernelSet,
    /// `C_eff x p`, column `j` aligned with `kernels[j]`.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

pub fn select_top_p(model: &LinearModel, ks: &KernelSet, p: usize) -> Result<Selection> {
    if ks.len() != model.k() {
        return Err(Error::InvalidInput(format!(
            "kernel set size {} does not match model width {}",
            ks.len(),
            model.k()
        )));
    }
    if p < 1 || p > ks.len() {
        return Err(Error::InvalidInput(format!(
            "selection size {} out of range 1..={}",
            p,
            ks.len()
        )));
    }
    let importance = kernel_importance(model);
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|&a, &b| {
        importance.scores[b]
            .partial_cmp(&importance.scores[a])
            .unwrap()
            .then(ks.get(a).seed.cmp(&ks.get(b).seed))
    });
    order.truncate(p);

    let kernels = KernelSet::new(order.iter().map(|&i| ks.get(i).clone()).collect())?;
    let weights = model
        .weights
        .iter()
        .map(|row| order.iter().map(|&i| row[i]).collect())
        .collect();
    Ok(Selection {
        kernels,
        weights,
        intercepts: model.intercepts.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rocket::KernelSeed;
    use rand::Rng;

    fn matrix(values: Vec<Vec<f64>>, labels: Vec<usize>) -> FeatureMatrix {
        let rows = values.len();
        let cols = values[0].len();
        FeatureMatrix::new(values.into_iter().flatten().collect(), rows, cols, labels).unwrap()
    }

    fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, classes: usize) -> FeatureMatrix {
        let values: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
        matrix(values, labels)
    }

    fn random_model(r: &mut impl Rng, k: usize, c: usize) -> LinearModel {
        let mut m = init_model(k, c).unwrap();
        for row in &mut m.weights {
            for w in row.iter_mut() {
                *w = r.random_range(-1.0..1.0);
            }
        }
        for b in &mut m.intercepts {
            *b = r.random_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn param_counts() {
        assert_eq!(init_model(100, 2).unwrap().param_count(), 101);
        assert_eq!(init_model(10_000, 2).unwrap().param_count(), 10_001);
        assert_eq!(init_model(5, 3).unwrap().param_count(), 18);
    }

    #[test]
    fn zero_model_uniform_probabilities() {
        let m3 = init_model(4, 3).unwrap();
        let f = matrix(vec![vec![0.2, 0.4, 0.6, 0.8]], vec![0]);
        let p = predict_proba(&f, &m3).unwrap();
        for v in &p[0] {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        let m2 = init_model(4, 2).unwrap();
        let p = predict_proba(&f, &m2).unwrap();
        assert!((p[0][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut r = crate::rng::stream(1, &[70]);
        for _ in 0..20 {
            let m = random_model(&mut r, 6, 4);
            let f = random_matrix(&mut r, 10, 6, 4);
            for row in predict_proba(&f, &m).unwrap() {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn importance_examples() {
        let mut m = init_model(3, 2).unwrap();
        m.weights[0] = vec![0.5, -2.0, 0.0];
        assert_eq!(kernel_importance(&m).scores, vec![0.25, 4.0, 0.0]);

        let mut m = init_model(2, 3).unwrap();
        m.weights[0] = vec![1.0, 2.0];
        m.weights[1] = vec![1.0, 0.0];
        m.weights[2] = vec![0.0, 0.0];
        assert_eq!(kernel_importance(&m).scores, vec![2.0, 4.0]);

        let zero = init_model(4, 2).unwrap();
        assert!(kernel_importance(&zero).scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn importance_sign_invariant() {
        let mut r = crate::rng::stream(2, &[71]);
        let m = random_model(&mut r, 8, 3);
        let mut flipped = m.clone();
        for row in &mut flipped.weights {
            for w in row.iter_mut() {
                *w = -*w;
            }
        }
        assert_eq!(kernel_importance(&m).scores, kernel_importance(&flipped).scores);
    }

    fn toy_kernels(k: usize) -> KernelSet {
        let seeds: Vec<KernelSeed> = (0..k as u64).map(KernelSeed).collect();
        KernelSet::from_seeds(&seeds, 30).unwrap()
    }

    #[test]
    fn select_top_p_examples() {
        let ks = toy_kernels(3);
        let mut m = init_model(3, 2).unwrap();
        m.weights[0] = vec![2.0, 1.0, -3.0];

        let sel = select_top_p(&m, &ks, 2).unwrap();
        assert_eq!(
            sel.kernels.seeds(),
            vec![KernelSeed(2), KernelSeed(0)]
        );
        assert_eq!(sel.weights, vec![vec![-3.0, 2.0]]);

        let full = select_top_p(&m, &ks, 3).unwrap();
        assert_eq!(
            full.kernels.seeds(),
            vec![KernelSeed(2), KernelSeed(0), KernelSeed(1)]
        );
    }

    #[test]
    fn select_top_p_tie_breaks_to_smaller_seed() {
        let ks = toy_kernels(4);
        let mut m = init_model(4, 2).unwrap();
        m.weights[0] = vec![1.0, -1.0, 1.0, 2.0];
        let sel = select_top_p(&m, &ks, 3).unwrap();
        assert_eq!(
            sel.kernels.seeds(),
            vec![KernelSeed(3), KernelSeed(0), KernelSeed(1)]
        );
    }

    #[test]
    fn select_top_p_bounds() {
        let ks = toy_kernels(3);
        let m = init_model(3, 2).unwrap();
        assert!(select_top_p(&m, &ks, 0).is_err());
        assert!(select_top_p(&m, &ks, 4).is_err());
    }

    #[test]
    fn select_matches_full_sort_oracle() {
        let mut r = crate::rng::stream(3, &[72]);
        let ks = toy_kernels(20);
        for case in 0..1000 {
            let m = random_model(&mut r, 20, if case % 2 == 0 { 2 } else { 3 });
            let p = r.random_range(1..=20);
            let sel = select_top_p(&m, &ks, p).unwrap();

            let scores = kernel_importance(&m).scores;
            let mut pairs: Vec<(usize, f64)> =
                scores.iter().cloned().enumerate().collect();
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let want: Vec<KernelSeed> =
                pairs[..p].iter().map(|&(i, _)| KernelSeed(i as u64)).collect();
            assert_eq!(sel.kernels.seeds(), want, "case {case}");
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut r = crate::rng::stream(4, &[73]);
        let m = random_model(&mut r, 5, 2);
        let f = random_matrix(&mut r, 8, 5, 2);
        let cfg = TrainConfig { local_epochs: 0, ..TrainConfig::default() };
        assert_eq!(fit(&f, &m, &cfg).unwrap(), m);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut r = crate::rng::stream(5, &[74]);
        let m = random_model(&mut r, 5, 3);
        let f = random_matrix(&mut r, 12, 5, 3);
        let cfg = TrainConfig { shuffle_seed: 99, ..TrainConfig::default() };
        assert_eq!(fit(&f, &m, &cfg).unwrap(), fit(&f, &m, &cfg).unwrap());
    }

    #[test]
    fn fit_rejects_bad_labels() {
        let f = matrix(vec![vec![0.1], vec![0.2]], vec![0, 5]);
        let m = init_model(1, 2).unwrap();
        assert!(matches!(
            fit(&f, &m, &TrainConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn fit_rejects_width_mismatch() {
        let f = matrix(vec![vec![0.1, 0.2]], vec![0]);
        let m = init_model(3, 2).unwrap();
        assert!(matches!(
            predict_proba(&f, &m),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            fit(&f, &m, &TrainConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn separable_toy_reaches_perfect_training_accuracy() {
        let mut r = crate::rng::stream(6, &[75]);
        let values: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 2) as f64 + r.random_range(-0.05..0.05)])
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let f = matrix(values, labels.clone());
        let cfg = TrainConfig { local_epochs: 200, ..TrainConfig::default() };
        let m = fit(&f, &init_model(1, 2).unwrap(), &cfg).unwrap();
        assert_eq!(predict(&f, &m).unwrap(), labels);
    }

    #[test]
    fn warm_start_continues_from_incoming_parameters() {
        let mut r = crate::rng::stream(7, &[76]);
        let f = random_matrix(&mut r, 16, 4, 2);
        let cfg = TrainConfig::default();
        let zero = init_model(4, 2).unwrap();
        let once = fit(&f, &zero, &cfg).unwrap();
        let twice = fit(&f, &once, &cfg).unwrap();
        assert_ne!(once, twice);
        let loss_once = cross_entropy_loss(&f, &once).unwrap();
        let loss_twice = cross_entropy_loss(&f, &twice).unwrap();
        assert!(loss_twice < loss_once, "{loss_twice} vs {loss_once}");
    }

    fn finite_difference_check(k: usize, c: usize, seed: u64) -> f64 {
        let mut r = crate::rng::stream(seed, &[77]);
        let model = random_model(&mut r, k, c);
        let f = random_matrix(&mut r, 12, k, c);
        let rows: Vec<usize> = (0..f.rows()).collect();
        let (gw, gb) = gradient(&f, &rows, &model).unwrap();

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let mut check = |analytic: f64, perturb: &dyn Fn(&mut LinearModel, f64)| {
            let mut plus = model.clone();
            perturb(&mut plus, h);
            let mut minus = model.clone();
            perturb(&mut minus, -h);
            let fd = (cross_entropy_loss_rows(&f, &rows, &plus).unwrap()
                - cross_entropy_loss_rows(&f, &rows, &minus).unwrap())
                / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        };
        for ci in 0..model.c_eff() {
            for j in 0..k {
                check(gw[ci][j], &move |m: &mut LinearModel, d: f64| {
                    m.weights[ci][j] += d;
                });
            }
            check(gb[ci], &move |m: &mut LinearModel, d: f64| {
                m.intercepts[ci] += d;
            });
        }
        max_rel
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let rel2 = finite_difference_check(5, 2, seed);
            assert!(rel2 < 1e-4, "binary seed {seed}: max rel err {rel2}");
            let rel3 = finite_difference_check(4, 3, seed + 1000);
            assert!(rel3 < 1e-4, "3-class seed {seed}: max rel err {rel3}");
        }
    }

    #[test]
    fn model_json_round_trip() {
        let mut r = crate::rng::stream(8, &[78]);
        let m = random_model(&mut r, 3, 3);
        let json = m.to_json();
        assert!(json.starts_with("{\"task\":\"multiclass\",\"class_count\":3,\"weights\":"));
        assert_eq!(LinearModel::from_json(&json).unwrap(), m);

        let b = random_model(&mut r, 2, 2);
        assert!(b.to_json().starts_with("{\"task\":\"binary\""));
        assert_eq!(LinearModel::from_json(&b.to_json()).unwrap(), b);
    }

    #[test]
    fn model_json_rejects_bad_shape() {
        let text = r#"{"task":"binary","class_count":2,"weights":[[1.0],[2.0]],"intercepts":[0.0]}"#;
        assert!(LinearModel::from_json(text).is_err());
    }
}
