//! Delimited-text ingestion, stratified splitting, standardization and
//! synthetic data with a known Bayes accuracy.

mod cache;
mod synthetic;

pub use cache::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use synthetic::{make_synthetic, SyntheticKind, SyntheticSpec};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scalar::Scalar;

/// Features and ±1 labels before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
}

/// Standardized train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset<T> {
    pub name: String,
    pub x_train: Array2<T>,
    pub y_train: Array1<T>,
    pub x_test: Array2<T>,
    pub y_test: Array1<T>,
    /// Fitted on the training rows only.
    pub feature_means: Vec<f64>,
    /// Fitted on the training rows only; constant columns get 1.
    pub feature_stds: Vec<f64>,
    /// Known for synthetic data.
    pub bayes_accuracy: Option<f64>,
}

impl<T: Scalar> SplitDataset<T> {
    pub fn n_features(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.x_test.nrows()
    }

    /// The same split in another precision.
    pub fn cast<U: Scalar>(&self) -> SplitDataset<U> {
        let c = |v: &T| U::from_f64_lossy(v.to_f64_lossy());
        SplitDataset {
            name: self.name.clone(),
            x_train: self.x_train.map(c),
            y_train: self.y_train.map(c),
            x_test: self.x_test.map(c),
            y_test: self.y_test.map(c),
            feature_means: self.feature_means.clone(),
            feature_stds: self.feature_stds.clone(),
            bayes_accuracy: self.bayes_accuracy,
        }
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    /// Header name, zero-based index, or `last`.
    pub label_column: String,
    /// Label value mapped to +1; every other value maps to -1.
    pub positive_label: String,
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: "last".into(),
            positive_label: "1".into(),
            delimiter: b',',
            has_header: true,
        }
    }
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<RawDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, opts)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, opts: &CsvOptions) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Option<Vec<String>> = if opts.has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec.map_err(|e| Error::Ingestion(e.to_string()))?);
    }
    if records.is_empty() {
        return Err(Error::Ingestion("file contains no data rows".into()));
    }
    let width = header.as_ref().map_or(records[0].len(), Vec::len);
    let label_idx = resolve_label_column(&opts.label_column, header.as_deref(), width)?;

    let d = width - 1;
    let mut flat = Vec::with_capacity(records.len() * d);
    let mut y = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row_no = i + 1 + usize::from(opts.has_header);
        if rec.len() != width {
            return Err(Error::Ingestion(format!(
                "row {row_no}: expected {width} fields, found {}",
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            if j == label_idx {
                y.push(if field == opts.positive_label { 1.0 } else { -1.0 });
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Ingestion(format!("row {row_no}, column {}: non-numeric value `{field}`", j + 1)))?;
            if !v.is_finite() {
                return Err(Error::Ingestion(format!("row {row_no}, column {}: non-finite value", j + 1)));
            }
            flat.push(v);
        }
    }
    let feature_names = match &header {
        Some(h) => h
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != label_idx)
            .map(|(_, s)| s.clone())
            .collect(),
        None => (0..width).filter(|j| *j != label_idx).map(|j| format!("x{j}")).collect(),
    };
    let x = Array2::from_shape_vec((y.len(), d), flat).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(RawDataset { x, y, feature_names })
}

fn resolve_label_column(spec: &str, header: Option<&[String]>, width: usize) -> Result<usize> {
    if width < 2 {
        return Err(Error::Ingestion("need at least one feature column besides the label".into()));
    }
    if spec == "last" {
        return Ok(width - 1);
    }
    if let Some(pos) = header.and_then(|h| h.iter().position(|c| c == spec)) {
        return Ok(pos);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < width => Ok(i),
        _ => Err(Error::Ingestion(format!("label column `{spec}` not found"))),
    }
}

/// Test-set sizes per class by the largest-remainder rule, so the total is
/// `round(n * test_fraction)` and each class gets its proportional share
/// within one sample.
fn stratified_test_counts(class_sizes: &[usize], test_fraction: f64) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let total = (n as f64 * test_fraction).round() as usize;
    let exact: Vec<f64> = class_sizes.iter().map(|&c| c as f64 * test_fraction).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            left -= 1;
        }
    }
    counts
}

/// Stratified split followed by standardization fitted on the train rows.
pub fn split_standardize(raw: &RawDataset, test_fraction: f64, seed: u64) -> Result<SplitDataset<f64>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    if raw.x.nrows() != raw.y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", raw.x.nrows(), raw.y.len())));
    }
    let mut by_class: BTreeMap<i8, Vec<usize>> = BTreeMap::new();
    for (i, &yi) in raw.y.iter().enumerate() {
        let key = if yi > 0.0 { 1 } else { -1 };
        by_class.entry(key).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Split("both classes must be present".into()));
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let test_counts = stratified_test_counts(&sizes, test_fraction);

    let mut rng = Rng::new(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for ((label, idx), &k) in by_class.iter().zip(&test_counts) {
        if k == 0 || k == idx.len() {
            return Err(Error::Split(format!("class {label:+} absent from one side of the split")));
        }
        let mut idx = idx.clone();
        rng.shuffle(&mut idx);
        test_idx.extend_from_slice(&idx[..k]);
        train_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let x_train = raw.x.select(Axis(0), &train_idx);
    let x_test = raw.x.select(Axis(0), &test_idx);
    let (means, stds) = fit_standardizer(&x_train);
    let standardize = |x: Array2<f64>| {
        let mut x = x;
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - means[j]) / stds[j]);
        }
        x
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| raw.y[i]).collect::<Array1<f64>>();
    Ok(SplitDataset {
        name: String::new(),
        y_train: pick(&train_idx),
        y_test: pick(&test_idx),
        x_train: standardize(x_train),
        x_test: standardize(x_test),
        feature_means: means,
        feature_stds: stds,
        bayes_accuracy: None,
    })
}

/// Column means and population standard deviations; zero deviations become 1.
pub fn fit_standardizer(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for col in x.axis_iter(Axis(1)) {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        means.push(m);
        stds.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
    }
    (means, stds)
}
