//! UCR-format dataset ingestion, normalization, label encoding, and
//! i.i.d. client partitioning.
//!
//! Input files are tab-separated with the class label first on each line.
//! Labels are re-encoded to `0..C-1` by sorted original value; the train
//! split defines the class set. Every series is z-normalized at load time
//! so all downstream pipelines (kernel features and raw features alike)
//! consume the same values.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, TAG_PARTITION};
use crate::rocket::TimeSeries;

/// A named train/test split of equal-length labelled series.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
    pub class_count: usize,
    pub series_length: usize,
    /// Original label tokens, indexed by encoded label.
    pub original_labels: Vec<String>,
}

impl Dataset {
    /// Validates and assembles a dataset from already-encoded series.
    pub fn new(name: &str, train: Vec<TimeSeries>, test: Vec<TimeSeries>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Format("empty train split".into()));
        }
        let series_length = train[0].len();
        for x in train.iter().chain(test.iter()) {
            if x.len() != series_length {
                return Err(Error::Format(format!(
                    "series length {} differs from {}",
                    x.len(),
                    series_length
                )));
            }
        }
        let class_count = train.iter().map(|x| x.label).max().unwrap() + 1;
        let mut present = vec![false; class_count];
        for x in &train {
            present[x.label] = true;
        }
        if present.iter().any(|p| !p) {
            return Err(Error::Format(
                "encoded train labels do not cover 0..C-1".into(),
            ));
        }
        if let Some(x) = test.iter().find(|x| x.label >= class_count) {
            return Err(Error::Format(format!(
                "test label {} outside train class set",
                x.label
            )));
        }
        let original_labels = (0..class_count).map(|c| c.to_string()).collect();
        Ok(Self {
            name: name.to_string(),
            train,
            test,
            class_count,
            series_length,
            original_labels,
        })
    }

    /// Pairs of (original label token, encoded label) for run manifests.
    pub fn label_mapping(&self) -> Vec<(String, usize)> {
        self.original_labels
            .iter()
            .enumerate()
            .map(|(i, token)| (token.clone(), i))
            .collect()
    }
}

/// One parsed line: original label token plus raw values.
struct RawRow {
    label: String,
    values: Vec<f64>,
}

fn parse_file(path: &Path) -> Result<Vec<RawRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let label = fields
            .next()
            .ok_or_else(|| Error::Format(format!("{}: line {}: empty line", path.display(), lineno + 1)))?
            .to_string();
        let mut values = Vec::new();
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{}: line {}: unparseable value {:?}",
                    path.display(),
                    lineno + 1,
                    field
                ))
            })?;
            if v.is_nan() {
                return Err(Error::UnsupportedDataset(format!(
                    "{}: line {}: NaN value (missing data is out of scope)",
                    path.display(),
                    lineno + 1
                )));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Format(format!(
                "{}: line {}: no values after label",
                path.display(),
                lineno + 1
            )));
        }
        rows.push(RawRow { label, values });
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Loads a UCR-style TSV train/test pair.
///
/// The series length is inferred from the first train row and enforced
/// across both files. Labels are re-encoded to `0..C-1` by sorted numeric
/// value of the train tokens; a test label absent from the train split is
/// a format error. Each series is z-normalized.
pub fn load_ucr(path_train: &Path, path_test: &Path) -> Result<Dataset> {
    let train_rows = parse_file(path_train)?;
    let test_rows = parse_file(path_test)?;

    let series_length = train_rows[0].values.len();
    for (path, rows) in [(path_train, &train_rows), (path_test, &test_rows)] {
        if let Some(row) = rows.iter().find(|r| r.values.len() != series_length) {
            return Err(Error::Format(format!(
                "{}: ragged row ({} values, expected {})",
                path.display(),
                row.values.len(),
                series_length
            )));
        }
    }

    // Sort distinct train label tokens by numeric value to fix the encoding.
    let mut distinct: Vec<(f64, String)> = Vec::new();
    for row in &train_rows {
        let v: f64 = row.label.trim().parse().map_err(|_| {
            Error::Format(format!(
                "{}: unparseable label {:?}",
                path_train.display(),
                row.label
            ))
        })?;
        if v.is_nan() {
            return Err(Error::Format(format!("{}: NaN label", path_train.display())));
        }
        if !distinct.iter().any(|(dv, _)| *dv == v) {
            distinct.push((v, row.label.trim().to_string()));
        }
    }
    distinct.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let encode = |token: &str, path: &Path| -> Result<usize> {
        let v: f64 = token
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: unparseable label {:?}", path.display(), token)))?;
        distinct
            .iter()
            .position(|(dv, _)| *dv == v)
            .ok_or_else(|| Error::Format(format!("{}: label {:?} not in train split", path.display(), token)))
    };

    let build = |rows: &[RawRow], path: &Path| -> Result<Vec<TimeSeries>> {
        rows.iter()
            .map(|row| TimeSeries::new(znormalize(&row.values), encode(&row.label, path)?))
            .collect()
    };
    let train = build(&train_rows, path_train)?;
    let test = build(&test_rows, path_test)?;

    let name = path_train
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_suffix("_TRAIN").unwrap_or(s).to_string())
        .unwrap_or_else(|| "dataset".to_string());

    let mut ds = Dataset::new(&name, train, test)?;
    ds.original_labels = distinct.into_iter().map(|(_, token)| token).collect();
    Ok(ds)
}

/// Z-normalizes one series with the population standard deviation.
/// Near-constant series (std below 1e-8) map to all zeros.
pub fn znormalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Per-client train/test shards.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
}

/// Disjoint client shards covering a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientData>,
}

impl Partition {
    pub fn client_count(&self) -> usize {
        self.clients.len()
    }
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;

fn deal_split(split: &[TimeSeries], class_count: usize, n: usize, seed: u64, split_tag: u64) -> Vec<Vec<TimeSeries>> {
    let mut shards = vec![Vec::new(); n];
    for class in 0..class_count {
        let mut indices: Vec<usize> = (0..split.len())
            .filter(|&i| split[i].label == class)
            .collect();
        let mut r = rng::stream(seed, &[TAG_PARTITION, split_tag, class as u64]);
        indices.shuffle(&mut r);
        for (pos, &i) in indices.iter().enumerate() {
            shards[pos % n].push(split[i].clone());
        }
    }
    shards
}

/// Stratified shuffle-split: within each class, samples are shuffled by
/// the seed and dealt round-robin to the `n` clients; the same procedure
/// is applied independently to the train and test splits.
pub fn partition_iid(ds: &Dataset, n: usize, seed: u64) -> Result<Partition> {
    if n == 0 {
        return Err(Error::InvalidConfig("client count must be positive".into()));
    }
    if n > ds.train.len() {
        return Err(Error::InvalidConfig(format!(
            "client count {} exceeds train size {}",
            n,
            ds.train.len()
        )));
    }
    for class in 0..ds.class_count {
        let count = ds.train.iter().filter(|x| x.label == class).count();
        if count < n {
            log::warn!(
                "dataset {}: class {} has {} train samples for {} clients; some clients will miss it",
                ds.name,
                class,
                count,
                n
            );
        }
    }
    let train_shards = deal_split(&ds.train, ds.class_count, n, seed, SPLIT_TRAIN);
    let test_shards = deal_split(&ds.test, ds.class_count, n, seed, SPLIT_TEST);
    let clients = train_shards
        .into_iter()
        .zip(test_shards)
        .map(|(train, test)| ClientData { train, test })
        .collect();
    Ok(Partition { clients })
}
