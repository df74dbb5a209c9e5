//! Random convolutional kernel features for time-series classification.
//!
//! A kernel is a short weight vector with a bias, a dilation and an
//! optional zero-padding flag, applied to a series by sliding dot-product.
//! The only statistic extracted per kernel is the proportion of strictly
//! positive values (PPV) of the convolution output, so a dataset of `M`
//! series and a set of `K` kernels transform into an `M x K` matrix of
//! values in `[0, 1]`.
//!
//! Every kernel is a pure function of its 64-bit seed and the series
//! length it was generated for, which is what makes seed-only kernel
//! exchange possible: the wire carries integers, the receiver regenerates
//! bit-identical kernels locally.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_KERNEL};

/// Candidate kernel lengths, sampled uniformly.
pub const KERNEL_LENGTHS: [usize; 3] = [7, 9, 11];

/// Shortest series for which a kernel (L=7, d=1) still fits.
pub const MIN_SERIES_LEN: usize = 8;

/// A labelled univariate series. Values are finite, length >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub label: usize,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, label: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty time series".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "time series contains non-finite values".into(),
            ));
        }
        Ok(Self { values, label })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Seed that fully determines one kernel for a given series length.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct KernelSeed(pub u64);

/// A random convolutional kernel. `weights` are mean-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub seed: KernelSeed,
    pub length: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dilation: usize,
    pub padding: bool,
}

impl Kernel {
    /// Receptive field span: the distance between first and last tap.
    pub fn span(&self) -> usize {
        (self.length - 1) * self.dilation
    }

    /// Whether the kernel can be applied to a series of length `t`.
    pub fn fits(&self, t: usize) -> bool {
        self.padding || self.span() < t
    }
}

/// Generates the kernel determined by `(seed, series_len)`.
///
/// Draw order from the `(seed, series_len)` stream is fixed: length,
/// weights, bias, dilation exponent, padding flag. Parameters follow the
/// standard random-kernel distributions: length uniform over {7, 9, 11},
/// weights i.i.d. standard normal then mean-centered, bias uniform on
/// [-1, 1], dilation `floor(2^u)` with `u` uniform on
/// `[0, log2((T-1)/(L-1))]`, padding with probability 1/2.
///
/// For series shorter than 11 the candidate lengths are restricted to
/// those whose undilated receptive field fits, so the exponent interval
/// stays well-formed; series of length 11 and above (every dataset in
/// scope) see the full {7, 9, 11} distribution.
pub fn generate_kernel(seed: KernelSeed, series_len: usize) -> Result<Kernel> {
    if series_len < MIN_SERIES_LEN {
        return Err(Error::InvalidInput(format!(
            "series length {series_len} is too short for kernel generation (min {MIN_SERIES_LEN})"
        )));
    }
    let mut rng = rng::stream(seed.0, &[TAG_KERNEL, series_len as u64]);

    let candidates: Vec<usize> = KERNEL_LENGTHS
        .iter()
        .copied()
        .filter(|&l| l <= series_len)
        .collect();
    let length = candidates[rng.random_range(0..candidates.len())];

    let mut weights: Vec<f64> = (0..length).map(|_| rng.sample(StandardNormal)).collect();
    let mean = weights.iter().sum::<f64>() / length as f64;
    for w in &mut weights {
        *w -= mean;
    }

    let bias: f64 = rng.random_range(-1.0..=1.0);

    let max_exponent = ((series_len - 1) as f64 / (length - 1) as f64).log2();
    let u: f64 = rng.random_range(0.0..=max_exponent);
    let dilation = (2f64.powf(u).floor() as usize).max(1);

    let padding: bool = rng.random();

    debug_assert!((length - 1) * dilation < series_len);
    Ok(Kernel {
        seed,
        length,
        weights,
        bias,
        dilation,
        padding,
    })
}

/// An ordered collection of kernels with pairwise-distinct seeds.
///
/// Order is meaningful: feature columns and model weight columns align
/// with kernel positions.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    kernels: Vec<Kernel>,
}

impl KernelSet {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for k in &kernels {
            if !seen.insert(k.seed) {
                return Err(Error::InvalidInput(format!(
                    "duplicate kernel seed {}",
                    k.seed.0
                )));
            }
        }
        Ok(Self { kernels })
    }

    /// Regenerates a set from seeds; the external representation of a set
    /// is exactly this seed list.
    pub fn from_seeds(seeds: &[KernelSeed], series_len: usize) -> Result<Self> {
        let kernels = seeds
            .iter()
            .map(|&s| generate_kernel(s, series_len))
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels)
    }

    pub fn seeds(&self) -> Vec<KernelSeed> {
        self.kernels.iter().map(|k| k.seed).collect()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn get(&self, i: usize) -> &Kernel {
        &self.kernels[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Kernel> {
        self.kernels.iter()
    }
}

/// Row-major `M x K` feature matrix with per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, rows: usize, cols: usize, labels: Vec<usize>) -> Result<Self> {
        if values.len() != rows * cols || labels.len() != rows {
            return Err(Error::InvalidInput("feature matrix shape mismatch".into()));
        }
        Ok(Self {
            values,
            rows,
            cols,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// Sliding dot-product of `x` with kernel `k`, plus bias.
///
/// Without padding the output has length `T - (L-1)*d`. With padding the
/// series is zero-extended by `(L-1)*d` total, half on the left (rounded
/// down) and the remainder on the right, so the output has length `T`.
pub fn convolve(x: &TimeSeries, k: &Kernel) -> Result<Vec<f64>> {
    let t = x.len();
    let span = k.span();
    if !k.padding && span + 1 > t {
        return Err(Error::InvalidInput(format!(
            "kernel receptive field ({}) exceeds series length ({})",
            span + 1,
            t
        )));
    }

    let (left_pad, out_len) = if k.padding { (span / 2, t) } else { (0, t - span) };

    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let mut acc = k.bias;
        for (i, &w) in k.weights.iter().enumerate() {
            let pos = j + i * k.dilation;
            // Index into the virtual zero-padded series.
            if pos >= left_pad && pos - left_pad < t {
                acc += w * x.values[pos - left_pad];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Proportion of strictly positive values. Exact zeros do not count.
pub fn ppv(feature_map: &[f64]) -> Result<f64> {
    if feature_map.is_empty() {
        return Err(Error::InvalidInput("empty feature map".into()));
    }
    let positives = feature_map.iter().filter(|&&v| v > 0.0).count();
    Ok(positives as f64 / feature_map.len() as f64)
}

/// Transforms a dataset of equal-length series into an `M x K` PPV matrix.
pub fn transform(dataset: &[TimeSeries], ks: &KernelSet) -> Result<FeatureMatrix> {
    let labels: Vec<usize> = dataset.iter().map(|x| x.label).collect();
    if dataset.is_empty() {
        return FeatureMatrix::new(Vec::new(), 0, ks.len(), labels);
    }
    let t = dataset[0].len();
    if dataset.iter().any(|x| x.len() != t) {
        return Err(Error::InvalidInput(
            "series lengths differ within the dataset".into(),
        ));
    }
    for k in ks.iter() {
        if !k.fits(t) {
            return Err(Error::InvalidInput(format!(
                "kernel with seed {} does not fit series length {}",
                k.seed.0, t
            )));
        }
    }

    let cols = ks.len();
    let values: Vec<f64> = dataset
        .par_iter()
        .map(|x| {
            let mut row = Vec::with_capacity(cols);
            for k in ks.iter() {
                let fm = convolve(x, k).expect("validated above");
                row.push(ppv(&fm).expect("non-empty by construction"));
            }
            row
        })
        .flatten()
        .collect();

    FeatureMatrix::new(values, dataset.len(), cols, labels)
}
