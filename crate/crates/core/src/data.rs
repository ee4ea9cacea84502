//! Labelled embedding datasets: synthetic generation, splitting, subsampling
//! and CSV persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Feature matrix with one task label and one protected-group label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    features: Matrix,
    labels: Vec<usize>,
    protected: Vec<usize>,
    class_count: usize,
    group_count: usize,
}

impl LabeledEmbeddings {
    /// Validates lengths, index ranges and that every class and every group
    /// occurs at least once.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        protected: Vec<usize>,
        class_count: usize,
        group_count: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || protected.len() != n {
            return Err(Error::Dimension(format!(
                "{n} feature rows, {} labels, {} protected values",
                labels.len(),
                protected.len()
            )));
        }
        check_presence(&labels, class_count, "class")?;
        check_presence(&protected, group_count, "group")?;
        Ok(Self {
            features,
            labels,
            protected,
            class_count,
            group_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn protected(&self) -> &[usize] {
        &self.protected
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in the given order. Class and group counts are kept.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.protected[i]).collect(),
            self.class_count,
            self.group_count,
        )
    }

    /// The first `fraction` of rows in stored order (at least one row).
    pub fn prefix(&self, fraction: f64) -> Result<Self> {
        check_fraction(fraction)?;
        let k = ((fraction * self.len() as f64).round() as usize).clamp(1, self.len());
        let idx: Vec<usize> = (0..k).collect();
        self.select(&idx)
            .map_err(|e| Error::Subsample(format!("prefix of {k} rows: {e}")))
    }

    /// Replaces the feature matrix, keeping labels (used for erased copies).
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(
            features,
            self.labels.clone(),
            self.protected.clone(),
            self.class_count,
            self.group_count,
        )
    }
}

fn check_presence(values: &[usize], count: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; count];
    for &v in values {
        if v >= count {
            return Err(Error::Dimension(format!(
                "{what} index {v} out of range 0..{count}"
            )));
        }
        seen[v] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InsufficientData(format!("{what} {missing} absent")));
    }
    Ok(())
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    Ok(())
}

/// Shape of the synthetic task. Mirrors the usual "make classification"
/// generator: informative Gaussian clusters on hypercube vertices, redundant
/// linear combinations of them, then pure noise columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_informative: usize,
    pub n_redundant: usize,
    pub n_noise: usize,
    pub clusters_per_class: usize,
    pub class_sep: f64,
    pub flip_y: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_informative: 5,
            n_redundant: 2,
            n_noise: 3,
            clusters_per_class: 2,
            class_sep: 1.0,
            flip_y: 0.01,
        }
    }
}

pub const SYNTHETIC_MIN_ROWS: usize = 100;

/// Binary synthetic task with default parameters; the protected attribute is
/// `1` where the first informative feature (column 0) is positive.
pub fn generate_synthetic(n_total: usize, seed: u64) -> Result<LabeledEmbeddings> {
    generate_synthetic_with(n_total, seed, &SyntheticParams::default())
}

pub fn generate_synthetic_with(
    n_total: usize,
    seed: u64,
    params: &SyntheticParams,
) -> Result<LabeledEmbeddings> {
    if n_total < SYNTHETIC_MIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "synthetic generation needs at least {SYNTHETIC_MIN_ROWS} rows, got {n_total}"
        )));
    }
    let inf = params.n_informative;
    if inf == 0 || inf > 30 {
        return Err(Error::Config("n_informative must be in 1..=30".into()));
    }
    let n_classes = 2;
    let n_clusters = n_classes * params.clusters_per_class;
    if n_clusters > 1 << inf {
        return Err(Error::Config(
            "more clusters than hypercube vertices".into(),
        ));
    }
    let d = inf + params.n_redundant + params.n_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Distinct hypercube vertices, one per cluster.
    let mut vertices: Vec<u64> = Vec::with_capacity(n_clusters);
    while vertices.len() < n_clusters {
        let v = rng.random_range(0..(1u64 << inf));
        if !vertices.contains(&v) {
            vertices.push(v);
        }
    }
    let centroids: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| {
            (0..inf)
                .map(|b| {
                    let bit = ((v >> b) & 1) as f64;
                    bit * 2.0 * params.class_sep - params.class_sep
                })
                .collect()
        })
        .collect();

    // Cluster sizes: equal shares, remainder to the first clusters.
    let mut sizes = vec![n_total / n_clusters; n_clusters];
    for s in sizes.iter_mut().take(n_total % n_clusters) {
        *s += 1;
    }

    let mut x = Matrix::zeros(n_total, d);
    let mut y = vec![0usize; n_total];
    let mut start = 0;
    for (k, &size) in sizes.iter().enumerate() {
        // Random linear mixing gives each cluster its own covariance.
        let mix: Vec<f64> = (0..inf * inf).map(|_| rng.random_range(-1.0..1.0)).collect();
        for r in start..start + size {
            let raw: Vec<f64> = (0..inf).map(|_| rng.sample(StandardNormal)).collect();
            let row = x.row_mut(r);
            for j in 0..inf {
                let mixed: f64 = (0..inf).map(|i| raw[i] * mix[i * inf + j]).sum();
                row[j] = mixed + centroids[k][j];
            }
            y[r] = k % n_classes;
        }
        start += size;
    }

    let redundant: Vec<f64> = (0..inf * params.n_redundant)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    for r in 0..n_total {
        let row = x.row_mut(r);
        for j in 0..params.n_redundant {
            row[inf + j] = (0..inf)
                .map(|i| row[i] * redundant[i * params.n_redundant + j])
                .sum();
        }
        for j in inf + params.n_redundant..d {
            row[j] = rng.sample(StandardNormal);
        }
    }

    for label in y.iter_mut() {
        if rng.random::<f64>() < params.flip_y {
            *label = rng.random_range(0..n_classes);
        }
    }

    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut rng);
    let features = x.select_rows(&order);
    let labels: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let protected: Vec<usize> = features
        .row_iter()
        .map(|r| usize::from(r[0] > 0.0))
        .collect();
    LabeledEmbeddings::new(features, labels, protected, n_classes, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Config(format!("split fractions {f:?} must lie in (0, 1)")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {f:?} must sum to 1")));
        }
        Ok(())
    }
}

/// Shuffled train/validation/test partition.
pub fn split(
    data: &LabeledEmbeddings,
    spec: &SplitSpec,
) -> Result<(LabeledEmbeddings, LabeledEmbeddings, LabeledEmbeddings)> {
    spec.validate()?;
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let n_val = ((spec.val_fraction * n as f64).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Split(format!(
            "{n} rows give an empty split ({n_train}/{n_val}/{n_test})"
        )));
    }
    let part = |name: &str, idx: &[usize]| {
        data.select(idx)
            .map_err(|e| Error::Split(format!("{name} split: {e}")))
    };
    Ok((
        part("train", &order[..n_train])?,
        part("validation", &order[n_train..n_train + n_val])?,
        part("test", &order[n_train + n_val..])?,
    ))
}

/// Uniform random subset of `fraction` of the rows, kept in stored order.
pub fn subsample_fraction(
    data: &LabeledEmbeddings,
    fraction: f64,
    seed: u64,
) -> Result<LabeledEmbeddings> {
    check_fraction(fraction)?;
    if fraction == 1.0 {
        return Ok(data.clone());
    }
    let n = data.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::Subsample(format!("{fraction} of {n} rows is empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    data.select(&chosen)
        .map_err(|e| Error::Subsample(format!("{k} of {n} rows: {e}")))
}

const LABEL_COLUMN: &str = "label";
const PROTECTED_COLUMN: &str = "protected";

/// Serialises to the `f0,...,f{d-1},label,protected` schema. Floats use the
/// shortest representation that parses back to the same value.
pub fn to_csv_string(data: &LabeledEmbeddings) -> String {
    let d = data.dim();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label,protected\n");
    for (i, row) in data.features.row_iter().enumerate() {
        for v in row {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", data.labels[i], data.protected[i]);
    }
    out
}

pub fn save_csv(data: &LabeledEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), to_csv_string(data).as_bytes())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledEmbeddings> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Parses the CSV schema. Row numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str) -> Result<LabeledEmbeddings> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        row: 1,
        msg: "empty file".into(),
    })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_at = names.iter().position(|c| *c == LABEL_COLUMN);
    let protected_at = names.iter().position(|c| *c == PROTECTED_COLUMN);
    let (Some(label_at), Some(protected_at)) = (label_at, protected_at) else {
        return Err(Error::Parse {
            row: 1,
            msg: "header must contain `label` and `protected` columns".into(),
        });
    };
    let d = names.len() - 2;
    if label_at != d || protected_at != d + 1 {
        return Err(Error::Parse {
            row: 1,
            msg: "`label` and `protected` must be the last two columns".into(),
        });
    }
    for (j, name) in names[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Parse {
                row: 1,
                msg: format!("expected feature column `f{j}`, found `{name}`"),
            });
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut protected = Vec::new();
    for (line_no, line) in lines {
        let row = line_no + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }
        for cell in &cells[..d] {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric feature `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("non-finite feature `{cell}`"),
                });
            }
            values.push(v);
        }
        let int = |cell: &str, what: &str| {
            cell.parse::<usize>().map_err(|_| Error::Parse {
                row,
                msg: format!("{what} `{cell}` is not a non-negative integer"),
            })
        };
        labels.push(int(cells[d], LABEL_COLUMN)?);
        protected.push(int(cells[d + 1], PROTECTED_COLUMN)?);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Parse {
            row: 2,
            msg: "no data rows".into(),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let groups = protected.iter().max().map_or(0, |m| m + 1);
    LabeledEmbeddings::new(Matrix::new(n, d, values)?, labels, protected, classes, groups)
}
