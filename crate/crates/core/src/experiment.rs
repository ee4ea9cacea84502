//! End-to-end experiment driver: data, head training, eraser fitting,
//! calibration, evaluation and the files written for each run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, LabeledEmbeddings, SplitSpec};
use crate::erasure::{DebiasMode, Debiaser, InlpConfig};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::linalg::Matrix;
use crate::metrics::{self, display_value, evaluate, CurveAucs, EvaluationReport, OracleCurves};
use crate::models::{argmax, train_head, ClassifierHead, TrainConfig, DEFAULT_MLP_HIDDEN};
use crate::scoring::{score_batch, BiasScoreKind, PipelineOutputs};
use crate::selection::{calibrate, default_grid, sweep_percentages, Objective, ScoredSet, SelectionPolicy, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_total: usize,
    pub synth_seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            n_total: 10_000,
            synth_seed: 42,
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            split_seed: 0,
            train_path: None,
            val_path: None,
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Logreg,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub hidden: Vec<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Logreg,
            hidden: DEFAULT_MLP_HIDDEN.to_vec(),
        }
    }
}

impl HeadConfig {
    pub fn arch(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut arch = vec![input_dim];
        if self.kind == HeadKind::Mlp {
            arch.extend(&self.hidden);
        }
        arch.push(classes);
        arch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            l2: t.l2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasConfig {
    pub mode: DebiasMode,
    pub fit_fraction: f64,
    pub inlp_max_iterations: usize,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            mode: DebiasMode::LeaceLast,
            fit_fraction: 0.2,
            inlp_max_iterations: InlpConfig::default().max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub scores: Vec<String>,
    pub grid: Vec<f64>,
    pub fixed: Vec<f64>,
    pub calibration_fraction: f64,
    pub objective: Objective,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            scores: ["kl", "sr", "euclid", "cosine", "random"].map(String::from).to_vec(),
            grid: default_grid(),
            fixed: vec![5.0, 10.0, 15.0],
            calibration_fraction: 0.15,
            objective: Objective::Ff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("out"),
        }
    }
}

/// Full experiment configuration, read from a TOML document whose sections
/// mirror the fields. Every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub head: HeadConfig,
    pub train: TrainSection,
    pub debias: DebiasConfig,
    pub selection: SelectionConfig,
    pub run: RunConfig,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec()?;
        check_unit("debias.fit_fraction", self.debias.fit_fraction)?;
        check_unit("selection.calibration_fraction", self.selection.calibration_fraction)?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.selection.grid.is_empty() {
            return Err(Error::Config("selection.grid must not be empty".into()));
        }
        if let Some(p) = self.selection.grid.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
            return Err(Error::Config(format!("grid value {p} outside (0, 100]")));
        }
        if let Some(p) = self.selection.fixed.iter().find(|p| !(0.0..=100.0).contains(*p)) {
            return Err(Error::Config(format!("fixed percentage {p} outside [0, 100]")));
        }
        self.score_kinds()?;
        self.train_config(0).validate()?;
        if self.debias.mode == DebiasMode::LeaceCls && self.head.kind != HeadKind::Mlp {
            return Err(Error::Config("leace-cls requires head.kind = \"mlp\"".into()));
        }
        if self.debias.inlp_max_iterations == 0 {
            return Err(Error::Config("debias.inlp_max_iterations must be positive".into()));
        }
        if self.data.source == DataSource::Csv
            && (self.data.train_path.is_none() || self.data.val_path.is_none() || self.data.test_path.is_none())
        {
            return Err(Error::Config("csv source needs train_path, val_path and test_path".into()));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(
            self.data.train_fraction,
            self.data.val_fraction,
            self.data.test_fraction,
            self.data.split_seed,
        )
    }

    pub fn score_kinds(&self) -> Result<Vec<BiasScoreKind>> {
        self.selection.scores.iter().map(|s| s.parse()).collect()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            l2: self.train.l2,
            seed,
        }
    }

    pub fn inlp_config(&self) -> InlpConfig {
        InlpConfig {
            max_iterations: self.debias.inlp_max_iterations,
            ..InlpConfig::default()
        }
    }

    /// SHA-256 over the canonical JSON form of the configuration. The output
    /// directory is left out so relocated reruns share a digest.
    pub fn digest(&self) -> String {
        let mut cfg = self.clone();
        cfg.run.out = PathBuf::new();
        let canonical = serde_json::to_vec(&cfg).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledEmbeddings,
    pub val: LabeledEmbeddings,
    pub test: LabeledEmbeddings,
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let all = data::generate_synthetic(cfg.data.n_total, cfg.data.synth_seed)
                .map_err(|e| match e {
                    Error::InsufficientData(m) => Error::Split(m),
                    other => other,
                })?;
            let (train, val, test) = data::split(&all, &cfg.split_spec()?)?;
            Ok(Splits { train, val, test })
        }
        DataSource::Csv => {
            let load = |p: &Option<PathBuf>| data::load_csv(p.as_ref().expect("validated"));
            let splits = Splits {
                train: load(&cfg.data.train_path)?,
                val: load(&cfg.data.val_path)?,
                test: load(&cfg.data.test_path)?,
            };
            let d = splits.train.dim();
            if splits.val.dim() != d || splits.test.dim() != d {
                return Err(Error::Dimension("CSV splits differ in feature dimension".into()));
            }
            Ok(splits)
        }
    }
}

/// Writes `train.csv`, `val.csv` and `test.csv` into `out`.
pub fn cmd_gen_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Splits> {
    let mut synth = cfg.clone();
    synth.data.source = DataSource::Synthetic;
    let splits = load_splits(&synth)?;
    data::save_csv(&splits.train, out.join("train.csv"))?;
    data::save_csv(&splits.val, out.join("val.csv"))?;
    data::save_csv(&splits.test, out.join("test.csv"))?;
    Ok(splits)
}

/// A trained head and its fitted debiaser.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub head: ClassifierHead,
    pub debiaser: Debiaser,
}

impl Pipeline {
    pub fn train(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<Self> {
        let head = train_standard(cfg, &splits.train, seed)?;
        let fit_data = data::subsample_fraction(&splits.train, cfg.debias.fit_fraction, seed)?;
        let debiaser = Debiaser::fit(
            &head,
            cfg.debias.mode,
            fit_data.features(),
            fit_data.protected(),
            &cfg.inlp_config(),
        )?;
        Ok(Self { head, debiaser })
    }

    pub fn outputs(&self, x: &Matrix) -> Result<PipelineOutputs> {
        let base_repr = self.head.layer_inputs_batch(x)?.pop().expect("non-empty head");
        let base_probs = self.head.predict_proba_batch(x)?;
        let (debiased_probs, debiased_repr) = self.debiaser.forward_batch(&self.head, x)?;
        Ok(PipelineOutputs {
            base_probs,
            debiased_probs,
            base_repr,
            debiased_repr,
        })
    }

    pub fn scored_set(&self, data: &LabeledEmbeddings, kind: BiasScoreKind) -> Result<ScoredSet> {
        let out = self.outputs(data.features())?;
        let scores = score_batch(kind, &out)?;
        Ok(ScoredSet {
            base_probs: out.base_probs,
            debiased_probs: out.debiased_probs,
            scores,
            labels: data.labels().to_vec(),
            groups: data.protected().to_vec(),
        })
    }
}

pub fn train_standard(cfg: &ExperimentConfig, train: &LabeledEmbeddings, seed: u64) -> Result<ClassifierHead> {
    let arch = cfg.head.arch(train.dim(), train.class_count());
    train_head(train, &arch, &cfg.train_config(seed))
}

fn predictions(probs: &[Vec<f64>]) -> Vec<usize> {
    probs.iter().map(|p| argmax(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSweep {
    pub score: BiasScoreKind,
    pub policy: SelectionPolicy,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub mode: DebiasMode,
    pub standard: EvaluationReport,
    pub full_debias: EvaluationReport,
    pub sweeps: Vec<ScoreSweep>,
}

impl SeedReport {
    /// `(method label, report)` pairs in table order.
    pub fn rows(&self) -> Vec<(String, &EvaluationReport)> {
        let mut rows = vec![
            ("standard".to_string(), &self.standard),
            (format!("full:{}", self.mode.name()), &self.full_debias),
        ];
        for sweep in &self.sweeps {
            for row in &sweep.rows {
                rows.push((format!("{}@{}", sweep.score.name(), row.label), &row.report));
            }
        }
        rows
    }
}

/// Runs the whole protocol for one seed.
pub fn run_seed(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<(SeedReport, Pipeline)> {
    let pipeline = Pipeline::train(cfg, splits, seed)?;
    let test_out = pipeline.outputs(splits.test.features())?;
    let labels = splits.test.labels();
    let groups = splits.test.protected();
    let standard = evaluate(&predictions(&test_out.base_probs), labels, groups)?;
    let full_debias = evaluate(&predictions(&test_out.debiased_probs), labels, groups)?;

    let calibration = splits.val.prefix(cfg.selection.calibration_fraction)?;
    let calib_out = pipeline.outputs(calibration.features())?;
    let mut percentages = vec![0.0];
    percentages.extend(&cfg.selection.fixed);
    percentages.push(100.0);

    let mut sweeps = Vec::new();
    for kind in cfg.score_kinds()? {
        let kind = kind.with_seed(seed);
        let calib_set = ScoredSet {
            base_probs: calib_out.base_probs.clone(),
            debiased_probs: calib_out.debiased_probs.clone(),
            scores: score_batch(kind, &calib_out)?,
            labels: calibration.labels().to_vec(),
            groups: calibration.protected().to_vec(),
        };
        let policy = calibrate(&calib_set, kind, &cfg.selection.grid, cfg.selection.objective)?;
        // Random scores on the test split use a stream distinct from calibration.
        let test_kind = match kind {
            BiasScoreKind::Random(s) => BiasScoreKind::Random(s ^ 0x5eed_7e57),
            other => other,
        };
        let test_set = ScoredSet {
            base_probs: test_out.base_probs.clone(),
            debiased_probs: test_out.debiased_probs.clone(),
            scores: score_batch(test_kind, &test_out)?,
            labels: labels.to_vec(),
            groups: groups.to_vec(),
        };
        let rows = sweep_percentages(&test_set, &calib_set.scores, &percentages, Some(&policy))?;
        sweeps.push(ScoreSweep {
            score: kind,
            policy,
            rows,
        });
    }
    Ok((
        SeedReport {
            seed,
            mode: cfg.debias.mode,
            standard,
            full_debias,
            sweeps,
        },
        pipeline,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub seeds: usize,
    pub fairness: MeanStd,
    pub accuracy: MeanStd,
    pub dto: MeanStd,
    pub ff_score: MeanStd,
}

/// Mean ± std of every method row across seed reports.
pub fn aggregate_reports(reports: &[SeedReport]) -> Vec<AggregateRow> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<String, Vec<&EvaluationReport>> = BTreeMap::new();
    for r in reports {
        for (method, report) in r.rows() {
            if !cells.contains_key(&method) {
                order.push(method.clone());
            }
            cells.entry(method).or_default().push(report);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let rs = &cells[&method];
            let col = |f: fn(&EvaluationReport) -> f64| MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                seeds: rs.len(),
                fairness: col(|r| r.fairness),
                accuracy: col(|r| r.accuracy),
                dto: col(|r| r.dto),
                ff_score: col(|r| r.ff_score),
                method,
            }
        })
        .collect()
}

/// Plain-text table on the ×100 scale.
pub fn render_aggregate(rows: &[AggregateRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>5}  {:>12}  {:>12}  {:>12}  {:>12}\n",
        "method", "seeds", "fairness", "accuracy", "dto", "ff"
    );
    let cell = |m: MeanStd| format!("{:.1} ± {:.1}", display_value(m.mean), display_value(m.std));
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>5}  {:>12}  {:>12}  {:>12}  {:>12}\n",
            r.method,
            r.seeds,
            cell(r.fairness),
            cell(r.accuracy),
            cell(r.dto),
            cell(r.ff_score)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    /// Report path relative to the output directory; absent if the seed failed.
    pub report: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seeds: Vec<SeedEntry>,
    pub aggregate: Vec<AggregateRow>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// Runs every seed, writing per-seed artifacts, `aggregate.txt` and
/// `manifest.json` under `cfg.run.out`. A failing seed is logged and
/// recorded; the others still run.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let out = &cfg.run.out;
    let results: Vec<Result<(SeedReport, Pipeline)>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .run
            .seeds
            .iter()
            .map(|&seed| {
                let splits = &splits;
                s.spawn(move || run_seed(cfg, splits, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed thread panicked"))
            .collect()
    });

    let mut entries = Vec::new();
    let mut reports = Vec::new();
    for (&seed, result) in cfg.run.seeds.iter().zip(results) {
        match result {
            Ok((report, pipeline)) => {
                let dir = format!("seed-{seed}");
                let seed_dir = out.join(&dir);
                write_json(&seed_dir.join("report.json"), &report)?;
                write_atomic(&seed_dir.join("head.json"), pipeline.head.to_json()?.as_bytes())?;
                write_atomic(&seed_dir.join("eraser.json"), pipeline.debiaser.to_json()?.as_bytes())?;
                entries.push(SeedEntry {
                    seed,
                    report: Some(format!("{dir}/report.json")),
                    error: None,
                });
                reports.push(report);
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                entries.push(SeedEntry {
                    seed,
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::InsufficientData("every seed failed".into()));
    }
    let aggregate = aggregate_reports(&reports);
    write_atomic(&out.join("aggregate.txt"), render_aggregate(&aggregate).as_bytes())?;
    let manifest = RunManifest {
        config_digest: cfg.digest(),
        seeds: entries,
        aggregate,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub seed: u64,
    pub accuracy_oracle: CurveAucs,
    pub fairness_oracle: CurveAucs,
}

/// Both oracle curves for the standard head's test predictions.
pub fn oracle_curves(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<(OracleCurves, OracleCurves)> {
    let head = train_standard(cfg, &splits.train, seed)?;
    let preds = predictions(&head.predict_proba_batch(splits.test.features())?);
    let labels = splits.test.labels();
    let groups = splits.test.protected();
    Ok((
        metrics::oracle_accuracy_curve(&preds, labels, groups)?,
        metrics::oracle_fairness_curve(&preds, labels, groups)?,
    ))
}

fn curve_csv(c: &OracleCurves) -> Result<String> {
    let mut out = String::from("fraction,accuracy,fairness,ff\n");
    for ((f, a), (_, r)) in c.accuracy.points.iter().zip(&c.fairness.points) {
        out.push_str(&format!("{f},{a},{r},{}\n", metrics::ff_score(*a, *r)?));
    }
    Ok(out)
}

/// Writes `accuracy_oracle.csv`, `fairness_oracle.csv` and `oracle_summary.json`
/// into `out` for one seed.
pub fn cmd_oracle_curves(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<OracleSummary> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let (acc, fair) = oracle_curves(cfg, &splits, seed)?;
    write_atomic(&out.join("accuracy_oracle.csv"), curve_csv(&acc)?.as_bytes())?;
    write_atomic(&out.join("fairness_oracle.csv"), curve_csv(&fair)?.as_bytes())?;
    let summary = OracleSummary {
        seed,
        accuracy_oracle: acc.aucs()?,
        fairness_oracle: fair.aucs()?,
    };
    write_json(&out.join("oracle_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub repetitions: usize,
    pub instances: usize,
    pub standard_ms: MeanStd,
    pub selective_ms: MeanStd,
    pub overhead_percent: f64,
}

pub const TIMING_REPETITIONS: usize = 10;

/// Wall time of standard vs KL-selective prediction over the test split.
pub fn cmd_timing(cfg: &ExperimentConfig, seed: u64) -> Result<TimingReport> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let pipeline = Pipeline::train(cfg, &splits, seed)?;
    let calibration = splits.val.prefix(cfg.selection.calibration_fraction)?;
    let calib_set = pipeline.scored_set(&calibration, BiasScoreKind::Kl)?;
    let policy = calibrate(&calib_set, BiasScoreKind::Kl, &cfg.selection.grid, cfg.selection.objective)?;
    time_pipeline(&pipeline, &policy, splits.test.features())
}

pub fn time_pipeline(pipeline: &Pipeline, policy: &SelectionPolicy, x: &Matrix) -> Result<TimingReport> {
    let mut standard = Vec::with_capacity(TIMING_REPETITIONS);
    let mut selective = Vec::with_capacity(TIMING_REPETITIONS);
    for _ in 0..TIMING_REPETITIONS {
        let t = Instant::now();
        let preds = predictions(&pipeline.head.predict_proba_batch(x)?);
        standard.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(preds);

        let t = Instant::now();
        let out = pipeline.outputs(x)?;
        let scores = score_batch(policy.score_kind, &out)?;
        let sel = crate::selection::apply_selective(policy.threshold, &out.base_probs, &out.debiased_probs, &scores)?;
        let preds = sel.predictions();
        selective.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(preds);
    }
    let standard_ms = MeanStd::of(&standard);
    let selective_ms = MeanStd::of(&selective);
    Ok(TimingReport {
        repetitions: TIMING_REPETITIONS,
        instances: x.rows(),
        overhead_percent: 100.0 * (selective_ms.mean - standard_ms.mean) / standard_ms.mean.max(f64::MIN_POSITIVE),
        standard_ms,
        selective_ms,
    })
}

/// Applies a saved LEACE-last or INLP eraser directly to the features of a
/// CSV dataset.
pub fn erase_dataset(debiaser: &Debiaser, data: &LabeledEmbeddings) -> Result<LabeledEmbeddings> {
    let erased = match debiaser {
        Debiaser::LeaceLast { eraser } => eraser.erase_batch(data.features())?,
        Debiaser::Inlp { eraser } => {
            if eraser.dim() != data.dim() {
                return Err(Error::Dimension(format!(
                    "eraser of dim {} for data of dim {}",
                    eraser.dim(),
                    data.dim()
                )));
            }
            eraser.apply_batch(data.features())?
        }
        Debiaser::LeaceCls { .. } => {
            return Err(Error::Unsupported(
                "leace-cls erasers act inside the head and cannot be applied to raw features".into(),
            ))
        }
    };
    data.with_features(erased)
}

/// Per-instance scores for one split as `index,score[,selected]` CSV text.
pub fn scores_csv(scores: &[f64], selected: Option<&[bool]>) -> String {
    let mut out = String::from(if selected.is_some() { "index,score,selected\n" } else { "index,score\n" });
    for (i, s) in scores.iter().enumerate() {
        match selected {
            Some(sel) => out.push_str(&format!("{i},{s},{}\n", u8::from(sel[i]))),
            None => out.push_str(&format!("{i},{s}\n")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.n_total = 4000;
        cfg.train.epochs = 10;
        cfg.run.seeds = vec![1];
        cfg
    }

    #[test]
    fn defaults_parse_from_empty_toml() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.debias.fit_fraction, 0.2);
        assert_eq!(cfg.selection.calibration_fraction, 0.15);
        assert_eq!(cfg.run.seeds.len(), 5);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_configs_rejected() {
        for text in [
            "[run]\nseeds = []",
            "[debias]\nfit_fraction = 0.0",
            "[selection]\ngrid = [0.0]",
            "[selection]\nscores = [\"entropy\"]",
            "[debias]\nmode = \"leace-cls\"",
            "[data]\nsource = \"csv\"",
            "[data]\nunknown = 1",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn digest_tracks_config() {
        let a = small_config();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.run.out = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.run.seeds.push(2);
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn seed_report_has_all_rows() {
        let cfg = small_config();
        let splits = load_splits(&cfg).unwrap();
        let (report, _) = run_seed(&cfg, &splits, 1).unwrap();
        assert_eq!(report.sweeps.len(), 5);
        for sweep in &report.sweeps {
            let labels: Vec<&str> = sweep.rows.iter().map(|r| r.label.as_str()).collect();
            assert_eq!(labels, ["0", "5", "10", "15", "100", "optimal"]);
            assert_eq!(sweep.rows[0].report, report.standard);
            assert_eq!(sweep.rows[4].report, report.full_debias);
        }
        assert_eq!(report.rows().len(), 2 + 5 * 6);
    }

    #[test]
    fn aggregate_matches_manual_mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }
}
