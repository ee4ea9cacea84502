//! Per-instance bias scores over (base, debiased) prediction pairs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Floor applied to probabilities before logs and ratios.
pub const PROB_FLOOR: f64 = 1e-12;

const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasScoreKind {
    Kl,
    Sr,
    #[serde(rename = "euclid")]
    Euclidean,
    Cosine,
    Random(u64),
}

impl BiasScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            BiasScoreKind::Kl => "kl",
            BiasScoreKind::Sr => "sr",
            BiasScoreKind::Euclidean => "euclid",
            BiasScoreKind::Cosine => "cosine",
            BiasScoreKind::Random(_) => "random",
        }
    }

    /// Same kind with the random seed replaced; other kinds unchanged.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            BiasScoreKind::Random(_) => BiasScoreKind::Random(seed),
            other => other,
        }
    }
}

impl fmt::Display for BiasScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasScoreKind::Random(seed) => write!(f, "random:{seed}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Accepts `kl`, `sr`, `euclid`, `cosine`, `random` and `random:<seed>`.
impl FromStr for BiasScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, seed) = match s.split_once(':') {
            Some((n, seed)) => (
                n,
                Some(
                    seed.parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad random seed in `{s}`")))?,
                ),
            ),
            None => (s, None),
        };
        let kind = match name {
            "kl" => BiasScoreKind::Kl,
            "sr" => BiasScoreKind::Sr,
            "euclid" | "euclidean" => BiasScoreKind::Euclidean,
            "cosine" => BiasScoreKind::Cosine,
            "random" => return Ok(BiasScoreKind::Random(seed.unwrap_or(0))),
            other => return Err(Error::Config(format!("unknown score kind `{other}`"))),
        };
        if seed.is_some() {
            return Err(Error::Config(format!("only the random score takes a seed: `{s}`")));
        }
        Ok(kind)
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < -PROB_FLOOR) {
        return Err(Error::Domain(format!("{p:?} is not a probability vector")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Domain(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// KL divergence of the debiased distribution from the base one, natural log.
pub fn kl_score(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    if p.len() != p_hat.len() {
        return Err(Error::Dimension(format!(
            "{} vs {} classes",
            p.len(),
            p_hat.len()
        )));
    }
    check_simplex(p)?;
    check_simplex(p_hat)?;
    Ok(p.iter()
        .zip(p_hat)
        .map(|(&a, &b)| {
            let a = a.max(PROB_FLOOR);
            a * (a / b.max(PROB_FLOOR)).ln()
        })
        .sum())
}

/// Softmax response: one minus the top probability.
pub fn sr_score(p: &[f64]) -> Result<f64> {
    check_simplex(p)?;
    Ok(1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn euclidean_score(r: &[f64], r_hat: &[f64]) -> Result<f64> {
    if r.len() != r_hat.len() {
        return Err(Error::Dimension(format!("{} vs {}", r.len(), r_hat.len())));
    }
    Ok(r.iter()
        .zip(r_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Cosine distance on the uncentred vectors.
pub fn cosine_score(r: &[f64], r_hat: &[f64]) -> Result<f64> {
    if r.len() != r_hat.len() {
        return Err(Error::Dimension(format!("{} vs {}", r.len(), r_hat.len())));
    }
    let (a, b) = (norm(r), norm(r_hat));
    for n in [a, b] {
        if n.is_nan() || n < 1e-12 {
            return Err(Error::DegenerateVector(n));
        }
    }
    let cos = (dot(r, r_hat) / (a * b)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Base and debiased outputs of a whole batch: probabilities plus the input
/// to the head's final layer along each path.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutputs {
    pub base_probs: Vec<Vec<f64>>,
    pub debiased_probs: Vec<Vec<f64>>,
    pub base_repr: Matrix,
    pub debiased_repr: Matrix,
}

impl PipelineOutputs {
    pub fn len(&self) -> usize {
        self.base_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_probs.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.base_probs.len();
        if self.debiased_probs.len() != n || self.base_repr.rows() != n || self.debiased_repr.rows() != n {
            return Err(Error::Dimension(format!(
                "inconsistent batch: {n} base, {} debiased predictions, {}/{} representations",
                self.debiased_probs.len(),
                self.base_repr.rows(),
                self.debiased_repr.rows()
            )));
        }
        Ok(())
    }

    /// Bundles instance `i` with its score.
    pub fn scored(&self, i: usize, score: f64) -> ScoredPrediction {
        ScoredPrediction {
            base_probs: self.base_probs[i].clone(),
            debiased_probs: self.debiased_probs[i].clone(),
            base_repr: self.base_repr.row(i).to_vec(),
            debiased_repr: self.debiased_repr.row(i).to_vec(),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub base_probs: Vec<f64>,
    pub debiased_probs: Vec<f64>,
    pub base_repr: Vec<f64>,
    pub debiased_repr: Vec<f64>,
    pub score: f64,
}

/// Scores every instance of the batch.
pub fn score_batch(kind: BiasScoreKind, outputs: &PipelineOutputs) -> Result<Vec<f64>> {
    outputs.check()?;
    let n = outputs.len();
    match kind {
        BiasScoreKind::Kl => outputs
            .base_probs
            .iter()
            .zip(&outputs.debiased_probs)
            .map(|(p, q)| kl_score(p, q))
            .collect(),
        BiasScoreKind::Sr => outputs.base_probs.iter().map(|p| sr_score(p)).collect(),
        BiasScoreKind::Euclidean => (0..n)
            .map(|i| euclidean_score(outputs.base_repr.row(i), outputs.debiased_repr.row(i)))
            .collect(),
        BiasScoreKind::Cosine => (0..n)
            .map(|i| cosine_score(outputs.base_repr.row(i), outputs.debiased_repr.row(i)))
            .collect(),
        BiasScoreKind::Random(seed) => Ok(random_scores(n, seed)),
    }
}

pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_score(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let v = kl_score(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((v - 0.368064).abs() < 1e-6, "{v}");
        let clamped = kl_score(&[1.0 - 1e-12, 1e-12], &[0.5, 0.5]).unwrap();
        assert!(clamped.is_finite());
        assert!((clamped - 2f64.ln()).abs() < 1e-9);
        assert!(kl_score(&[0.0, 1.0], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn kl_rejects_non_simplex() {
        assert!(matches!(kl_score(&[0.7, 0.7], &[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(kl_score(&[f64::NAN, 1.0], &[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(kl_score(&[1.0], &[0.5, 0.5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn sr_examples() {
        assert_eq!(sr_score(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(sr_score(&[0.5, 0.5]).unwrap(), 0.5);
        assert!((sr_score(&[0.7, 0.2, 0.1]).unwrap() - 0.3).abs() < 1e-15);
        assert!(sr_score(&[0.2, 0.2]).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_score(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_score(&[0.0], &[3.0, 4.0]).is_err());
        assert!(cosine_score(&[1.0, 2.0], &[2.0, 4.0]).unwrap().abs() < 1e-15);
        assert!((cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_score(&[1.0, 1.0], &[-2.0, -2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            cosine_score(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
    }

    fn outputs(base: Vec<Vec<f64>>, deb: Vec<Vec<f64>>) -> PipelineOutputs {
        let br = Matrix::from_rows(&base).unwrap();
        let dr = Matrix::from_rows(&deb).unwrap();
        PipelineOutputs {
            base_probs: base,
            debiased_probs: deb,
            base_repr: br,
            debiased_repr: dr,
        }
    }

    #[test]
    fn batch_matches_elementwise() {
        let base = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.5, 0.5]];
        let deb = vec![vec![0.6, 0.4], vec![0.35, 0.65], vec![0.1, 0.9]];
        let out = outputs(base.clone(), deb.clone());
        let kl = score_batch(BiasScoreKind::Kl, &out).unwrap();
        let sr = score_batch(BiasScoreKind::Sr, &out).unwrap();
        let eu = score_batch(BiasScoreKind::Euclidean, &out).unwrap();
        let co = score_batch(BiasScoreKind::Cosine, &out).unwrap();
        for i in 0..3 {
            assert_eq!(kl[i], kl_score(&base[i], &deb[i]).unwrap());
            assert_eq!(sr[i], sr_score(&base[i]).unwrap());
            assert_eq!(eu[i], euclidean_score(&base[i], &deb[i]).unwrap());
            assert_eq!(co[i], cosine_score(&base[i], &deb[i]).unwrap());
        }
        assert_eq!(out.scored(1, kl[1]).score, kl[1]);
    }

    #[test]
    fn identical_outputs_score_zero_and_random_is_seeded() {
        let base = vec![vec![0.2, 0.8]; 4];
        let out = outputs(base.clone(), base);
        assert!(score_batch(BiasScoreKind::Kl, &out).unwrap().iter().all(|&s| s == 0.0));
        let a = score_batch(BiasScoreKind::Random(7), &out).unwrap();
        let b = score_batch(BiasScoreKind::Random(7), &out).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (0.0..1.0).contains(s)));
        assert_ne!(a, score_batch(BiasScoreKind::Random(8), &out).unwrap());
    }

    #[test]
    fn inconsistent_batch_rejected() {
        let mut out = outputs(vec![vec![0.5, 0.5]; 2], vec![vec![0.5, 0.5]; 2]);
        out.debiased_probs.pop();
        assert!(matches!(score_batch(BiasScoreKind::Kl, &out), Err(Error::Dimension(_))));
    }

    #[test]
    fn kind_parsing_and_serde() {
        assert_eq!("kl".parse::<BiasScoreKind>().unwrap(), BiasScoreKind::Kl);
        assert_eq!("euclid".parse::<BiasScoreKind>().unwrap(), BiasScoreKind::Euclidean);
        assert_eq!("random:9".parse::<BiasScoreKind>().unwrap(), BiasScoreKind::Random(9));
        assert!("kl:3".parse::<BiasScoreKind>().is_err());
        assert!("entropy".parse::<BiasScoreKind>().is_err());
        for k in [BiasScoreKind::Kl, BiasScoreKind::Euclidean, BiasScoreKind::Random(3)] {
            let s = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<BiasScoreKind>(&s).unwrap(), k);
            assert_eq!(k.to_string().parse::<BiasScoreKind>().unwrap(), k);
        }
    }

    fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, c).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn gibbs_inequality((p, q) in (2usize..6).prop_flat_map(|c| (simplex(c), simplex(c)))) {
            prop_assert!(kl_score(&p, &q).unwrap() >= -1e-12);
            prop_assert!(kl_score(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn sr_permutation_invariant(p in simplex(4), rot in 0usize..4) {
            let mut r = p.clone();
            r.rotate_left(rot);
            let mut rev = p.clone();
            rev.reverse();
            let s = sr_score(&p).unwrap();
            prop_assert_eq!(s, sr_score(&r).unwrap());
            prop_assert_eq!(s, sr_score(&rev).unwrap());
            prop_assert!((0.0..=1.0 - 1.0 / 4.0 + 1e-12).contains(&s));
        }

        #[test]
        fn cosine_in_range(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3)) {
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let c = cosine_score(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&c));
        }
    }
}
