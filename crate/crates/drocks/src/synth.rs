//! Synthetic datasets with known learnable structure, for smoke tests
//! and protocol exercises that must not depend on external archives.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::Result;
use crate::rng::{self, TAG_SYNTH};
use crate::rocket::TimeSeries;

/// Cycle length of class-0 series.
pub const SLOW_PERIOD: f64 = 32.0;
/// Cycle length of class-1 series.
pub const FAST_PERIOD: f64 = 8.0;

/// A binary frequency-discrimination task: class 0 is a slow sine, class
/// 1 a fast sine, both with uniform random phase and Gaussian noise of
/// standard deviation 0.3. Convolutional kernels with different dilations
/// respond to the two periods differently, so positive-value proportions
/// separate the classes; the raw per-timestep values do not (the phase is
/// random), which keeps the task honest for feature-based pipelines.
pub fn frequency_dataset(
    train_per_class: usize,
    test_per_class: usize,
    series_len: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut r = rng::stream(seed, &[TAG_SYNTH]);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    let mut make = |label: usize| -> Result<TimeSeries> {
        let period = if label == 0 { SLOW_PERIOD } else { FAST_PERIOD };
        let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let values: Vec<f64> = (0..series_len)
            .map(|i| {
                (std::f64::consts::TAU * i as f64 / period + phase).sin() + noise.sample(&mut r)
            })
            .collect();
        TimeSeries::new(crate::data::znormalize(&values), label)
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for _ in 0..train_per_class {
        for label in 0..2 {
            train.push(make(label)?);
        }
    }
    for _ in 0..test_per_class {
        for label in 0..2 {
            test.push(make(label)?);
        }
    }
    Dataset::new("synthetic_frequency", train, test)
}
