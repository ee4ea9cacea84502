//! Threshold calibration and selective replacement of predictions.
//!
//! An instance takes the debiased prediction when its bias score is at least
//! the threshold `h`, and keeps the base prediction otherwise. `h` is the
//! score that selects the top `p`% of a calibration prefix.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvaluationReport};
use crate::models::argmax;
use crate::scoring::BiasScoreKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Ff,
    Dto,
}

impl Objective {
    pub fn value(self, report: &EvaluationReport) -> f64 {
        match self {
            Objective::Ff => report.ff_score,
            Objective::Dto => report.dto,
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Ff => a > b,
            Objective::Dto => a < b,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff" => Ok(Objective::Ff),
            "dto" => Ok(Objective::Dto),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

/// Default calibration grid: whole percentages 1 through 15.
pub fn default_grid() -> Vec<f64> {
    (1..=15).map(f64::from).collect()
}

/// Serialises infinite thresholds as the strings `"inf"` / `"-inf"`.
mod threshold_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom("NaN threshold"))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("bad threshold `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub score_kind: BiasScoreKind,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub calibrated_percentage: f64,
    pub objective: Objective,
    /// SHA-256 of the calibration inputs.
    pub calibration_digest: String,
}

/// Score that selects the top `percentage`% of `scores`.
///
/// `0` yields `+∞` (nothing selected) and `100` or more yields `−∞`
/// (everything selected, whatever the score).
pub fn threshold_for_percentage(scores: &[f64], percentage: f64) -> Result<f64> {
    if percentage.is_nan() || percentage < 0.0 {
        return Err(Error::Calibration(format!("bad percentage {percentage}")));
    }
    if percentage == 0.0 {
        return Ok(f64::INFINITY);
    }
    if percentage >= 100.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if scores.is_empty() {
        return Err(Error::Calibration("no calibration scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("bias scores"));
    }
    let n = scores.len();
    let k = ((percentage * n as f64 / 100.0) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(scores[order[k - 1]])
}

/// Per-instance outputs of both pipelines plus labels, for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub base_probs: Vec<Vec<f64>>,
    pub debiased_probs: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.labels.len();
        if self.base_probs.len() != n
            || self.debiased_probs.len() != n
            || self.scores.len() != n
            || self.groups.len() != n
        {
            return Err(Error::Dimension("scored set arrays differ in length".into()));
        }
        Ok(())
    }

    /// The first `count` instances.
    pub fn prefix(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            base_probs: self.base_probs[..count].to_vec(),
            debiased_probs: self.debiased_probs[..count].to_vec(),
            scores: self.scores[..count].to_vec(),
            labels: self.labels[..count].to_vec(),
            groups: self.groups[..count].to_vec(),
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (i, &y) in self.labels.iter().enumerate() {
            h.update((y as u64).to_le_bytes());
            h.update((self.groups[i] as u64).to_le_bytes());
            h.update(self.scores[i].to_bits().to_le_bytes());
            for v in self.base_probs[i].iter().chain(&self.debiased_probs[i]) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn apply(&self, threshold: f64) -> Result<SelectiveOutput> {
        apply_selective(threshold, &self.base_probs, &self.debiased_probs, &self.scores)
    }

    pub fn evaluate_at(&self, threshold: f64) -> Result<(SelectiveOutput, EvaluationReport)> {
        let out = self.apply(threshold)?;
        let report = evaluate(&out.predictions(), &self.labels, &self.groups)?;
        Ok((out, report))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveOutput {
    pub final_probs: Vec<Vec<f64>>,
    pub selected: Vec<bool>,
    pub selected_fraction: f64,
}

impl SelectiveOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.final_probs.iter().map(|p| argmax(p)).collect()
    }
}

/// Debiased output where `score ≥ threshold`, base output elsewhere.
pub fn apply_selective(
    threshold: f64,
    base_probs: &[Vec<f64>],
    debiased_probs: &[Vec<f64>],
    scores: &[f64],
) -> Result<SelectiveOutput> {
    if base_probs.len() != debiased_probs.len() || base_probs.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} base, {} debiased, {} scores",
            base_probs.len(),
            debiased_probs.len(),
            scores.len()
        )));
    }
    let selected: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let final_probs = selected
        .iter()
        .zip(base_probs.iter().zip(debiased_probs))
        .map(|(&sel, (b, d))| if sel { d.clone() } else { b.clone() })
        .collect();
    let count = selected.iter().filter(|&&s| s).count();
    Ok(SelectiveOutput {
        final_probs,
        selected_fraction: if scores.is_empty() { 0.0 } else { count as f64 / scores.len() as f64 },
        selected,
    })
}

/// Objective value at each grid percentage, in grid order.
pub fn grid_objectives(calibration: &ScoredSet, grid: &[f64], objective: Objective) -> Result<Vec<(f64, f64, f64)>> {
    grid.iter()
        .map(|&p| {
            let h = threshold_for_percentage(&calibration.scores, p)?;
            let (_, report) = calibration.evaluate_at(h).map_err(|e| match e {
                Error::UndefinedFairness(m) => Error::Calibration(m),
                other => other,
            })?;
            Ok((p, h, objective.value(&report)))
        })
        .collect()
}

/// Picks the grid percentage with the best objective on the calibration
/// set; ties go to the smaller percentage.
pub fn calibrate(
    calibration: &ScoredSet,
    kind: BiasScoreKind,
    grid: &[f64],
    objective: Objective,
) -> Result<SelectionPolicy> {
    calibration.check()?;
    if grid.is_empty() {
        return Err(Error::Calibration("empty percentage grid".into()));
    }
    if let Some(p) = grid.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
        return Err(Error::Calibration(format!("grid value {p} outside (0, 100]")));
    }
    let classes = calibration.base_probs.first().map_or(0, Vec::len);
    for c in 0..classes {
        if !calibration.labels.contains(&c) {
            return Err(Error::Calibration(format!("class {c} missing from calibration set")));
        }
    }
    for g in 0..=calibration.groups.iter().copied().max().unwrap_or(0) {
        if !calibration.groups.contains(&g) {
            return Err(Error::Calibration(format!("group {g} missing from calibration set")));
        }
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, f64)> = None;
    for (p, h, v) in grid_objectives(calibration, &sorted, objective)? {
        if best.is_none_or(|(_, _, bv)| objective.better(v, bv)) {
            best = Some((p, h, v));
        }
    }
    let (p, h, v) = best.expect("non-empty grid");
    log::debug!("calibrated {kind} at {p}% (objective {v:.6})");
    Ok(SelectionPolicy {
        score_kind: kind,
        threshold: h,
        calibrated_percentage: p,
        objective,
        calibration_digest: calibration.digest(),
    })
}

/// One row of a percentage sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub percentage: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub selected_fraction: f64,
    pub report: EvaluationReport,
}

/// Evaluates `test` at thresholds taken from `calibration_scores` for each
/// percentage, plus the calibrated policy as the `optimal` row.
pub fn sweep_percentages(
    test: &ScoredSet,
    calibration_scores: &[f64],
    percentages: &[f64],
    policy: Option<&SelectionPolicy>,
) -> Result<Vec<SweepRow>> {
    test.check()?;
    let mut rows = Vec::new();
    for &p in percentages {
        let h = threshold_for_percentage(calibration_scores, p)?;
        let (out, report) = test.evaluate_at(h)?;
        rows.push(SweepRow {
            label: format!("{p}"),
            percentage: p,
            threshold: h,
            selected_fraction: out.selected_fraction,
            report,
        });
    }
    if let Some(policy) = policy {
        let (out, report) = test.evaluate_at(policy.threshold)?;
        rows.push(SweepRow {
            label: "optimal".into(),
            percentage: policy.calibrated_percentage,
            threshold: policy.threshold,
            selected_fraction: out.selected_fraction,
            report,
        });
    }
    Ok(rows)
}
