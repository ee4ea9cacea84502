//! Accuracy, equal-opportunity fairness, their aggregates, and oracle
//! rejection curves.
//!
//! Everything here works on the fractional `[0, 1]` scale; only
//! [`DisplayRow`] multiplies by 100.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of budget points on a rejection curve.
pub const CURVE_POINTS: usize = 100;

/// True positive rate per `(class, group)`; `None` where the cell has no
/// ground-truth positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprTable {
    pub rates: Vec<Vec<Option<f64>>>,
}

/// Positive and true-positive counts per `(class, group)`.
#[derive(Debug, Clone, PartialEq)]
struct Counts {
    positives: Vec<Vec<usize>>,
    hits: Vec<Vec<usize>>,
}

impl Counts {
    fn new(preds: &[usize], labels: &[usize], groups: &[usize], classes: usize, group_count: usize) -> Self {
        let mut positives = vec![vec![0; group_count]; classes];
        let mut hits = vec![vec![0; group_count]; classes];
        for ((&p, &y), &g) in preds.iter().zip(labels).zip(groups) {
            positives[y][g] += 1;
            if p == y {
                hits[y][g] += 1;
            }
        }
        Self { positives, hits }
    }

    fn table(&self) -> TprTable {
        let rates = self
            .positives
            .iter()
            .zip(&self.hits)
            .map(|(pos, hit)| {
                pos.iter()
                    .zip(hit)
                    .map(|(&n, &h)| (n > 0).then(|| h as f64 / n as f64))
                    .collect()
            })
            .collect();
        TprTable { rates }
    }

    fn check(&self) -> Result<()> {
        for (c, pos) in self.positives.iter().enumerate() {
            let populated = pos.iter().filter(|&&n| n > 0).count();
            if populated < 2 {
                return Err(Error::UndefinedFairness(format!(
                    "class {c} has positives in {populated} group(s)"
                )));
            }
        }
        Ok(())
    }

    fn fairness(&self) -> f64 {
        let classes = self.positives.len();
        let mut total = 0.0;
        for (pos, hit) in self.positives.iter().zip(&self.hits) {
            let rates: Vec<f64> = pos
                .iter()
                .zip(hit)
                .filter(|(&n, _)| n > 0)
                .map(|(&n, &h)| h as f64 / n as f64)
                .collect();
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            total += rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>();
        }
        1.0 - (total / classes as f64).sqrt()
    }
}

fn check_lengths(preds: &[usize], labels: &[usize], groups: &[usize]) -> Result<()> {
    if preds.len() != labels.len() || labels.len() != groups.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels, {} groups",
            preds.len(),
            labels.len(),
            groups.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InsufficientData("no instances to evaluate".into()));
    }
    Ok(())
}

fn infer_counts(preds: &[usize], labels: &[usize], groups: &[usize]) -> (usize, usize) {
    let classes = labels.iter().chain(preds).max().map_or(0, |m| m + 1);
    let group_count = groups.iter().max().map_or(0, |m| m + 1);
    (classes, group_count)
}

/// Equal-opportunity fairness `1 − δ` with δ the root of the class-averaged
/// squared deviation of each group's TPR from its class mean.
pub fn equal_opportunity(preds: &[usize], labels: &[usize], groups: &[usize]) -> Result<(f64, TprTable)> {
    check_lengths(preds, labels, groups)?;
    let (classes, group_count) = infer_counts(preds, labels, groups);
    // Classes that only ever appear as predictions have no positives at all.
    let counts = trim_unlabelled(Counts::new(preds, labels, groups, classes, group_count), labels);
    counts.check()?;
    Ok((counts.fairness(), counts.table()))
}

fn trim_unlabelled(mut counts: Counts, labels: &[usize]) -> Counts {
    let labelled = labels.iter().max().map_or(0, |m| m + 1);
    counts.positives.truncate(labelled);
    counts.hits.truncate(labelled);
    counts
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::InsufficientData("no instances to evaluate".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Distance to the optimal point and harmonic mean of accuracy and fairness.
pub fn aggregate(accuracy: f64, fairness: f64) -> Result<(f64, f64)> {
    for (name, v) in [("accuracy", accuracy), ("fairness", fairness)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok((dto(accuracy, fairness), ff_score(accuracy, fairness)?))
}

pub fn dto(accuracy: f64, fairness: f64) -> f64 {
    ((1.0 - accuracy).powi(2) + (1.0 - fairness).powi(2)).sqrt()
}

pub fn ff_score(accuracy: f64, fairness: f64) -> Result<f64> {
    let sum = accuracy + fairness;
    if sum <= 0.0 {
        return Err(Error::Domain("FF-score undefined when accuracy and fairness are both 0".into()));
    }
    Ok(2.0 * accuracy * fairness / sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub fairness: f64,
    pub dto: f64,
    pub ff_score: f64,
    pub tpr_table: TprTable,
    pub n: usize,
}

/// Table-style rendering on the ×100 scale, one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayRow {
    pub fairness: f64,
    pub accuracy: f64,
    pub dto: f64,
    pub ff: f64,
}

pub fn display_value(v: f64) -> f64 {
    (v * 1000.0).round() / 10.0
}

impl EvaluationReport {
    pub fn display(&self) -> DisplayRow {
        DisplayRow {
            fairness: display_value(self.fairness),
            accuracy: display_value(self.accuracy),
            dto: display_value(self.dto),
            ff: display_value(self.ff_score),
        }
    }
}

pub fn evaluate(preds: &[usize], labels: &[usize], groups: &[usize]) -> Result<EvaluationReport> {
    let (fairness, tpr_table) = equal_opportunity(preds, labels, groups)?;
    let accuracy = accuracy(preds, labels)?;
    let (dto, ff_score) = aggregate(accuracy, fairness)?;
    Ok(EvaluationReport {
        accuracy,
        fairness,
        dto,
        ff_score,
        tpr_table,
        n: preds.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    /// `(k / 100, metric)` for `k` in `0..100`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RejectionCurve {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != CURVE_POINTS {
            return Err(Error::Dimension(format!(
                "a rejection curve has {CURVE_POINTS} points, got {}",
                values.len()
            )));
        }
        let auc = values.iter().sum::<f64>() / CURVE_POINTS as f64;
        let points = values
            .into_iter()
            .enumerate()
            .map(|(k, v)| (k as f64 / CURVE_POINTS as f64, v))
            .collect();
        Ok(Self { points, auc })
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn to_csv(&self, column: &str) -> String {
        let mut out = format!("fraction,{column}\n");
        for (f, v) in &self.points {
            out.push_str(&format!("{f},{v}\n"));
        }
        out
    }
}

/// Corrections allowed at curve point `k` out of `n_errors` errors.
pub fn budget(k: usize, n_errors: usize) -> usize {
    (k * n_errors).div_ceil(CURVE_POINTS)
}

/// Accuracy and fairness tracked along one oracle's correction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCurves {
    pub accuracy: RejectionCurve,
    pub fairness: RejectionCurve,
    /// Instance indices in correction order (all errors).
    pub order: Vec<usize>,
}

fn error_indices(preds: &[usize], labels: &[usize]) -> Vec<usize> {
    (0..preds.len()).filter(|&i| preds[i] != labels[i]).collect()
}

fn curves_for_order(preds: &[usize], labels: &[usize], groups: &[usize], order: Vec<usize>) -> Result<OracleCurves> {
    let mut fixed = preds.to_vec();
    let mut applied = 0;
    let mut acc = Vec::with_capacity(CURVE_POINTS);
    let mut fair = Vec::with_capacity(CURVE_POINTS);
    for k in 0..CURVE_POINTS {
        let b = budget(k, order.len());
        while applied < b {
            let i = order[applied];
            fixed[i] = labels[i];
            applied += 1;
        }
        acc.push(accuracy(&fixed, labels)?);
        fair.push(equal_opportunity(&fixed, labels, groups)?.0);
    }
    Ok(OracleCurves {
        accuracy: RejectionCurve::from_values(acc)?,
        fairness: RejectionCurve::from_values(fair)?,
        order,
    })
}

/// Corrects errors in instance-index order.
pub fn oracle_accuracy_curve(preds: &[usize], labels: &[usize], groups: &[usize]) -> Result<OracleCurves> {
    check_lengths(preds, labels, groups)?;
    let order = error_indices(preds, labels);
    curves_for_order(preds, labels, groups, order)
}

/// Greedy correction order: at each step fix the remaining error whose
/// correction gives the highest fairness, lowest index on ties.
pub fn greedy_fairness_order(preds: &[usize], labels: &[usize], groups: &[usize]) -> Result<Vec<usize>> {
    check_lengths(preds, labels, groups)?;
    let (classes, group_count) = infer_counts(preds, labels, groups);
    let mut counts = trim_unlabelled(Counts::new(preds, labels, groups, classes, group_count), labels);
    counts.check()?;
    // Correcting an error only raises the hit count of its own
    // (label, group) cell, so every error in a cell is interchangeable.
    let mut queues: Vec<Vec<std::collections::VecDeque<usize>>> =
        vec![vec![Default::default(); group_count]; counts.positives.len()];
    for i in error_indices(preds, labels) {
        queues[labels[i]][groups[i]].push_back(i);
    }
    let total: usize = queues.iter().flatten().map(|q| q.len()).sum();
    let mut order = Vec::with_capacity(total);
    while order.len() < total {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (c, row) in queues.iter().enumerate() {
            for (g, q) in row.iter().enumerate() {
                let Some(&i) = q.front() else { continue };
                counts.hits[c][g] += 1;
                let f = counts.fairness();
                counts.hits[c][g] -= 1;
                let better = match best {
                    None => true,
                    Some((bf, bi, _, _)) => f > bf || (f == bf && i < bi),
                };
                if better {
                    best = Some((f, i, c, g));
                }
            }
        }
        let (_, i, c, g) = best.expect("remaining errors");
        queues[c][g].pop_front();
        counts.hits[c][g] += 1;
        order.push(i);
    }
    Ok(order)
}

pub fn oracle_fairness_curve(preds: &[usize], labels: &[usize], groups: &[usize]) -> Result<OracleCurves> {
    let order = greedy_fairness_order(preds, labels, groups)?;
    curves_for_order(preds, labels, groups, order)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveAucs {
    pub fr_auc: f64,
    pub acc_auc: f64,
    pub ff_auc: f64,
}

pub fn curve_aucs(accuracy: &RejectionCurve, fairness: &RejectionCurve) -> Result<CurveAucs> {
    if accuracy.points.len() != fairness.points.len()
        || accuracy.points.iter().zip(&fairness.points).any(|(a, f)| a.0 != f.0)
    {
        return Err(Error::Dimension("curves do not share a grid".into()));
    }
    let ff = accuracy
        .values()
        .zip(fairness.values())
        .map(|(a, f)| ff_score(a, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveAucs {
        fr_auc: fairness.auc,
        acc_auc: accuracy.auc,
        ff_auc: RejectionCurve::from_values(ff)?.auc,
    })
}

impl OracleCurves {
    pub fn aucs(&self) -> Result<CurveAucs> {
        curve_aucs(&self.accuracy, &self.fairness)
    }
}
