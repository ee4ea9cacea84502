//! Linear concept erasure.
//!
//! [`LeaceEraser`] is the closed-form least-squares eraser: whiten with the
//! inverse square root of the feature covariance, project out the span of the
//! whitened feature/concept cross-covariance, unwhiten, and subtract the
//! result from the centred input. [`InlpEraser`] is iterative nullspace
//! projection: repeatedly fit a linear probe for the concept and project the
//! features onto the probe's nullspace.
//!
//! [`Debiaser`] wires either eraser into a [`ClassifierHead`] forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cross_covariance, pinv, psd_sqrt, Matrix};
use crate::models::{accuracy, fit, ClassifierHead, TrainConfig};

/// Centred one-hot encoding of group indices (`n × G`).
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotEncoding {
    group_count: usize,
    encoding: Matrix,
}

impl OneHotEncoding {
    pub fn new(groups: &[usize], group_count: usize) -> Result<Self> {
        if let Some(&g) = groups.iter().find(|&&g| g >= group_count) {
            return Err(Error::Dimension(format!(
                "group {g} out of range 0..{group_count}"
            )));
        }
        let raw = one_hot(groups, group_count);
        let means = raw.column_means();
        let encoding = Matrix::from_fn(raw.rows(), group_count, |i, j| raw.get(i, j) - means[j]);
        Ok(Self {
            group_count,
            encoding,
        })
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn encoding(&self) -> &Matrix {
        &self.encoding
    }
}

pub fn one_hot(groups: &[usize], group_count: usize) -> Matrix {
    Matrix::from_fn(groups.len(), group_count, |i, j| {
        if groups[i] == j {
            1.0
        } else {
            0.0
        }
    })
}

fn distinct_groups(z: &[usize]) -> (usize, usize) {
    let count = z.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; count];
    z.iter().for_each(|&g| seen[g] = true);
    (count, seen.iter().filter(|s| **s).count())
}

/// Fitted LEACE operator: `x ↦ x − W⁺ P W (x − μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaceEraser {
    mean: Vec<f64>,
    whitener: Matrix,
    projector: Matrix,
    unwhitener: Matrix,
    dim: usize,
}

impl LeaceEraser {
    /// The eraser that changes nothing.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            whitener: Matrix::identity(dim),
            projector: Matrix::zeros(dim, dim),
            unwhitener: Matrix::identity(dim),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn whitener(&self) -> &Matrix {
        &self.whitener
    }

    pub fn projector(&self) -> &Matrix {
        &self.projector
    }

    pub fn unwhitener(&self) -> &Matrix {
        &self.unwhitener
    }

    fn check(&self) -> Result<()> {
        let d = self.dim;
        let square = |m: &Matrix| m.rows() == d && m.cols() == d;
        if self.mean.len() != d
            || !square(&self.whitener)
            || !square(&self.projector)
            || !square(&self.unwhitener)
        {
            return Err(Error::Dimension(format!("inconsistent LEACE eraser of dim {d}")));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eraser mean"));
        }
        Ok(())
    }

    /// `W⁺ P W`, the linear part that gets subtracted.
    pub fn correction(&self) -> Matrix {
        self.unwhitener
            .matmul(&self.projector)
            .and_then(|m| m.matmul(&self.whitener))
            .expect("shapes checked at construction")
    }

    pub fn erase(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of length {} for an eraser of dim {}",
                x.len(),
                self.dim
            )));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let w = self.whitener.matvec(&centered)?;
        let p = self.projector.matvec(&w)?;
        let u = self.unwhitener.matvec(&p)?;
        Ok(x.iter().zip(&u).map(|(a, b)| a - b).collect())
    }

    /// Erases every row of `x`.
    pub fn erase_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim {
            return Err(Error::Dimension(format!(
                "{} columns for an eraser of dim {}",
                x.cols(),
                self.dim
            )));
        }
        let a = self.correction();
        let mut out = x.clone();
        let mut centered = vec![0.0; self.dim];
        for r in 0..x.rows() {
            for (c, (v, m)) in centered.iter_mut().zip(x.row(r).iter().zip(&self.mean)) {
                *c = v - m;
            }
            let row = out.row_mut(r);
            for (i, o) in row.iter_mut().enumerate() {
                *o -= crate::linalg::dot(a.row(i), &centered);
            }
        }
        Ok(out)
    }
}

/// Fits LEACE for concept `z` (group indices) on the rows of `x`.
pub fn fit_leace(x: &Matrix, z: &[usize]) -> Result<LeaceEraser> {
    if x.rows() != z.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} concept labels",
            x.rows(),
            z.len()
        )));
    }
    let (group_count, present) = distinct_groups(z);
    if present < 2 {
        return Err(Error::DegenerateConcept(format!(
            "concept takes {present} distinct value(s); at least two are required"
        )));
    }
    if x.rows() < x.cols() {
        log::warn!(
            "fitting LEACE on {} rows of dimension {}; covariance is rank deficient",
            x.rows(),
            x.cols()
        );
    }
    let onehot = OneHotEncoding::new(z, group_count)?;
    let sigma_xx = cross_covariance(x, x)?;
    let sigma_xz = cross_covariance(x, onehot.encoding())?;
    let whitener = pinv(&psd_sqrt(&sigma_xx)?)?;
    let unwhitener = pinv(&whitener)?;
    let m = whitener.matmul(&sigma_xz)?;
    let projector = m.matmul(&pinv(&m)?)?;
    let eraser = LeaceEraser {
        mean: x.column_means(),
        whitener,
        projector,
        unwhitener,
        dim: x.cols(),
    };
    let finite = [&eraser.whitener, &eraser.projector, &eraser.unwhitener]
        .iter()
        .all(|m| m.data().iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite("LEACE covariance factors"));
    }
    Ok(eraser)
}

/// Accumulated orthogonal projection onto the nullspace of every probe
/// direction removed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlpEraser {
    projection: Matrix,
    iterations: usize,
    probe_accuracies: Vec<f64>,
    removed_directions: usize,
}

impl InlpEraser {
    pub fn identity(dim: usize) -> Self {
        Self {
            projection: Matrix::identity(dim),
            iterations: 0,
            probe_accuracies: Vec::new(),
            removed_directions: 0,
        }
    }

    /// Wraps an explicit projection matrix (must be symmetric idempotent).
    pub fn from_projection(projection: Matrix) -> Result<Self> {
        if !projection.is_square() {
            return Err(Error::Dimension("projection must be square".into()));
        }
        let d = projection.rows();
        let rank = projection.rank();
        Ok(Self {
            projection,
            iterations: 0,
            probe_accuracies: Vec::new(),
            removed_directions: d - rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn probe_accuracies(&self) -> &[f64] {
        &self.probe_accuracies
    }

    pub fn removed_directions(&self) -> usize {
        self.removed_directions
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.projection.matvec(x)
    }

    pub fn apply_batch(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.projection.transpose())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InlpConfig {
    pub max_iterations: usize,
    /// Stop once the probe is within `stop_margin` of the majority share.
    pub stop_on_accuracy: bool,
    pub stop_margin: f64,
    pub probe: TrainConfig,
}

impl Default for InlpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            stop_on_accuracy: true,
            stop_margin: 0.01,
            probe: default_probe_config(),
        }
    }
}

pub fn default_probe_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        epochs: 200,
        batch_size: usize::MAX,
        l2: 0.0,
        seed: 0,
    }
}

/// Share of the most frequent group.
pub fn majority_share(z: &[usize]) -> f64 {
    let (count, _) = distinct_groups(z);
    let mut counts = vec![0usize; count];
    z.iter().for_each(|&g| counts[g] += 1);
    counts.iter().copied().max().unwrap_or(0) as f64 / z.len().max(1) as f64
}

/// Multinomial logistic probe for `z`, started from all-zero parameters.
///
/// Starting at zero keeps the probe's weights inside the span the data
/// actually informs; a random start leaves arbitrary components in
/// uninformative directions.
pub fn fit_linear_probe(x: &Matrix, z: &[usize], cfg: &TrainConfig) -> Result<ClassifierHead> {
    let (group_count, _) = distinct_groups(z);
    let mut probe = ClassifierHead::init(&[x.cols(), group_count.max(2)], cfg.seed)?;
    for layer in probe.layers_mut() {
        layer.weight = Matrix::zeros(layer.weight.rows(), layer.weight.cols());
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let cfg = TrainConfig {
        batch_size: cfg.batch_size.min(z.len().max(1)),
        ..*cfg
    };
    fit(&mut probe, x, z, &cfg)?;
    Ok(probe)
}

/// Probe accuracy for `z` on `x` using a freshly fitted linear probe.
pub fn probe_accuracy(x: &Matrix, z: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let probe = fit_linear_probe(x, z, cfg)?;
    accuracy(&probe, x, z)
}

pub fn fit_inlp(x: &Matrix, z: &[usize], max_iterations: usize) -> Result<InlpEraser> {
    fit_inlp_with(
        x,
        z,
        &InlpConfig {
            max_iterations,
            ..InlpConfig::default()
        },
    )
}

pub fn fit_inlp_with(x: &Matrix, z: &[usize], cfg: &InlpConfig) -> Result<InlpEraser> {
    if cfg.max_iterations == 0 {
        return Err(Error::Config("INLP needs at least one iteration".into()));
    }
    if x.rows() != z.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} concept labels",
            x.rows(),
            z.len()
        )));
    }
    let (_, present) = distinct_groups(z);
    if present < 2 {
        return Err(Error::DegenerateConcept(
            "INLP needs at least two concept values".into(),
        ));
    }
    let d = x.cols();
    let majority = majority_share(z);
    let mut projection = Matrix::identity(d);
    // Removed directions as columns of a d × k matrix.
    let mut removed: Vec<Vec<f64>> = Vec::new();
    let mut accuracies = Vec::new();
    let mut iterations = 0;

    for iteration in 1..=cfg.max_iterations {
        iterations = iteration;
        let projected = x.matmul(&projection)?;
        let probe_cfg = TrainConfig {
            seed: cfg.probe.seed.wrapping_add(iteration as u64),
            ..cfg.probe
        };
        let probe = fit_linear_probe(&projected, z, &probe_cfg).map_err(|e| {
            Error::ProbeDivergence {
                iteration,
                source: Box::new(e),
            }
        })?;
        let acc = accuracy(&probe, &projected, z)?;
        accuracies.push(acc);
        if cfg.stop_on_accuracy && acc <= majority + cfg.stop_margin {
            break;
        }
        let w = &probe.layers()[0].weight;
        // Softmax rows are only identified up to a shared offset, so the
        // informative directions are differences against row 0.
        for g in 1..w.rows() {
            let diff: Vec<f64> = w.row(g).iter().zip(w.row(0)).map(|(a, b)| a - b).collect();
            let dir = projection.matvec(&diff)?;
            if crate::linalg::norm(&dir) > 1e-12 {
                removed.push(dir);
            }
        }
        projection = nullspace_projection(&removed, d)?;
        if removed.len() >= d {
            break;
        }
    }
    let rank = projection.rank();
    Ok(InlpEraser {
        projection,
        iterations,
        probe_accuracies: accuracies,
        removed_directions: d - rank,
    })
}

/// `I − B B⁺` for the directions stacked as columns of `B`.
fn nullspace_projection(directions: &[Vec<f64>], d: usize) -> Result<Matrix> {
    if directions.is_empty() {
        return Ok(Matrix::identity(d));
    }
    let b = Matrix::from_fn(d, directions.len(), |i, j| directions[j][i]);
    let range = b.matmul(&pinv(&b)?)?;
    let p = Matrix::identity(d).sub(&range)?;
    // Symmetrise away rounding so the projection is exactly symmetric.
    Ok(Matrix::from_fn(d, d, |i, j| 0.5 * (p.get(i, j) + p.get(j, i))))
}

/// LEACE erasers for every linear layer of an MLP head, fitted in order so
/// that eraser `k` sees the activations produced with erasers `0..k` applied.
pub fn fit_leace_cls(head: &ClassifierHead, x: &Matrix, z: &[usize]) -> Result<Vec<LeaceEraser>> {
    if !head.is_mlp() {
        return Err(Error::Unsupported(
            "LEACE-cls requires a multi-layer head".into(),
        ));
    }
    let mut acts = x.clone();
    let mut erasers = Vec::with_capacity(head.layers().len());
    for k in 0..head.layers().len() {
        let eraser = fit_leace(&acts, z)?;
        let erased = eraser.erase_batch(&acts)?;
        erasers.push(eraser);
        if k + 1 < head.layers().len() {
            acts = Matrix::from_rows(
                &erased
                    .row_iter()
                    .map(|r| head.layer_output(k, r))
                    .collect::<Vec<_>>(),
            )?;
        }
    }
    Ok(erasers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebiasMode {
    LeaceLast,
    LeaceCls,
    Inlp,
}

impl DebiasMode {
    pub const ALL: [DebiasMode; 3] = [DebiasMode::LeaceLast, DebiasMode::LeaceCls, DebiasMode::Inlp];

    pub fn name(self) -> &'static str {
        match self {
            DebiasMode::LeaceLast => "leace-last",
            DebiasMode::LeaceCls => "leace-cls",
            DebiasMode::Inlp => "inlp",
        }
    }
}

impl std::str::FromStr for DebiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leace-last" => Ok(DebiasMode::LeaceLast),
            "leace-cls" => Ok(DebiasMode::LeaceCls),
            "inlp" => Ok(DebiasMode::Inlp),
            other => Err(Error::Config(format!("unknown eraser mode `{other}`"))),
        }
    }
}

/// A fitted post-processing debiaser bound to one application mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Debiaser {
    LeaceLast { eraser: LeaceEraser },
    LeaceCls { erasers: Vec<LeaceEraser> },
    Inlp { eraser: InlpEraser },
}

/// Debiased forward pass result for a single input.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedOutput {
    pub probs: Vec<f64>,
    /// Input to the final layer along the debiased path.
    pub repr: Vec<f64>,
}

impl Debiaser {
    /// Fits the eraser(s) for `mode` on `x` with concept `z`. LEACE-last and
    /// INLP act on the input to the head's final layer (the raw features for
    /// a single-layer head).
    pub fn fit(
        head: &ClassifierHead,
        mode: DebiasMode,
        x: &Matrix,
        z: &[usize],
        inlp: &InlpConfig,
    ) -> Result<Self> {
        match mode {
            DebiasMode::LeaceCls => Ok(Debiaser::LeaceCls {
                erasers: fit_leace_cls(head, x, z)?,
            }),
            DebiasMode::LeaceLast | DebiasMode::Inlp => {
                let last = head
                    .layer_inputs_batch(x)?
                    .pop()
                    .expect("at least one layer");
                Ok(match mode {
                    DebiasMode::LeaceLast => Debiaser::LeaceLast {
                        eraser: fit_leace(&last, z)?,
                    },
                    _ => Debiaser::Inlp {
                        eraser: fit_inlp_with(&last, z, inlp)?,
                    },
                })
            }
        }
    }

    /// Identity debiaser for `mode` shaped to `head`.
    pub fn identity(head: &ClassifierHead, mode: DebiasMode) -> Result<Self> {
        let last_dim = head.layers().last().expect("non-empty").input_dim();
        Ok(match mode {
            DebiasMode::LeaceLast => Debiaser::LeaceLast {
                eraser: LeaceEraser::identity(last_dim),
            },
            DebiasMode::Inlp => Debiaser::Inlp {
                eraser: InlpEraser::identity(last_dim),
            },
            DebiasMode::LeaceCls => {
                if !head.is_mlp() {
                    return Err(Error::Unsupported(
                        "LEACE-cls requires a multi-layer head".into(),
                    ));
                }
                Debiaser::LeaceCls {
                    erasers: head
                        .layers()
                        .iter()
                        .map(|l| LeaceEraser::identity(l.input_dim()))
                        .collect(),
                }
            }
        })
    }

    pub fn mode(&self) -> DebiasMode {
        match self {
            Debiaser::LeaceLast { .. } => DebiasMode::LeaceLast,
            Debiaser::LeaceCls { .. } => DebiasMode::LeaceCls,
            Debiaser::Inlp { .. } => DebiasMode::Inlp,
        }
    }

    /// Checks that the eraser shapes fit `head`.
    pub fn check(&self, head: &ClassifierHead) -> Result<()> {
        let last_dim = head.layers().last().expect("non-empty").input_dim();
        let mismatch = |what: String| Err(Error::Dimension(format!("mode/eraser mismatch: {what}")));
        match self {
            Debiaser::LeaceLast { eraser } => {
                eraser.check()?;
                if eraser.dim() != last_dim {
                    return mismatch(format!(
                        "eraser dim {} vs final layer input {last_dim}",
                        eraser.dim()
                    ));
                }
            }
            Debiaser::Inlp { eraser } => {
                if eraser.dim() != last_dim || !eraser.projection.is_square() {
                    return mismatch(format!(
                        "projection dim {} vs final layer input {last_dim}",
                        eraser.dim()
                    ));
                }
            }
            Debiaser::LeaceCls { erasers } => {
                if erasers.len() != head.layers().len() {
                    return mismatch(format!(
                        "{} erasers for {} layers",
                        erasers.len(),
                        head.layers().len()
                    ));
                }
                for (e, l) in erasers.iter().zip(head.layers()) {
                    e.check()?;
                    if e.dim() != l.input_dim() {
                        return mismatch(format!("eraser dim {} vs layer input {}", e.dim(), l.input_dim()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Debiased prediction for one input.
    pub fn forward(&self, head: &ClassifierHead, x: &[f64]) -> Result<DebiasedOutput> {
        self.check(head)?;
        let depth = head.layers().len();
        let repr = match self {
            Debiaser::LeaceLast { eraser } => {
                let inputs = head.layer_inputs(x)?;
                eraser.erase(&inputs[depth - 1])?
            }
            Debiaser::Inlp { eraser } => {
                let inputs = head.layer_inputs(x)?;
                eraser.apply(&inputs[depth - 1])?
            }
            Debiaser::LeaceCls { erasers } => {
                if x.len() != head.input_dim() {
                    return Err(Error::Dimension(format!(
                        "input of length {} for a head expecting {}",
                        x.len(),
                        head.input_dim()
                    )));
                }
                let mut a = x.to_vec();
                for (k, e) in erasers.iter().enumerate().take(depth - 1) {
                    a = head.layer_output(k, &e.erase(&a)?);
                }
                erasers[depth - 1].erase(&a)?
            }
        };
        let probs = crate::models::softmax(&head.forward_from(depth - 1, &repr));
        Ok(DebiasedOutput { probs, repr })
    }

    pub fn predict(&self, head: &ClassifierHead, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(head, x).map(|o| o.probs)
    }

    /// Debiased probabilities and final-layer inputs for every row.
    pub fn forward_batch(&self, head: &ClassifierHead, x: &Matrix) -> Result<(Vec<Vec<f64>>, Matrix)> {
        self.check(head)?;
        let depth = head.layers().len();
        let repr = match self {
            Debiaser::LeaceLast { eraser } => {
                let last = head.layer_inputs_batch(x)?.pop().expect("non-empty");
                eraser.erase_batch(&last)?
            }
            Debiaser::Inlp { eraser } => {
                let last = head.layer_inputs_batch(x)?.pop().expect("non-empty");
                eraser.apply_batch(&last)?
            }
            Debiaser::LeaceCls { erasers } => {
                if x.cols() != head.input_dim() {
                    return Err(Error::Dimension(format!(
                        "{} feature columns for a head expecting {}",
                        x.cols(),
                        head.input_dim()
                    )));
                }
                let mut a = x.clone();
                for (k, e) in erasers.iter().enumerate().take(depth - 1) {
                    let erased = e.erase_batch(&a)?;
                    a = Matrix::from_rows(
                        &erased
                            .row_iter()
                            .map(|r| head.layer_output(k, r))
                            .collect::<Vec<_>>(),
                    )?;
                }
                erasers[depth - 1].erase_batch(&a)?
            }
        };
        let last = &head.layers()[depth - 1];
        let probs = repr
            .row_iter()
            .map(|r| crate::models::softmax(&last.forward(r)))
            .collect();
        Ok((probs, repr))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Debiaser = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        match &d {
            Debiaser::LeaceLast { eraser } => eraser.check()?,
            Debiaser::LeaceCls { erasers } => erasers.iter().try_for_each(LeaceEraser::check)?,
            Debiaser::Inlp { eraser } => {
                if !eraser.projection.is_square() {
                    return Err(Error::Dimension("INLP projection must be square".into()));
                }
            }
        }
        Ok(d)
    }
}
