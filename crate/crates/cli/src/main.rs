use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seldebias::data::{self, LabeledEmbeddings};
use seldebias::erasure::{DebiasMode, Debiaser};
use seldebias::experiment::{self, render_aggregate, ExperimentConfig, Pipeline};
use seldebias::io::{write_atomic, write_json};
use seldebias::scoring::BiasScoreKind;
use seldebias::selection::threshold_for_percentage;
use seldebias::{Error, ErrorClass};

/// Selective debiasing experiments over feature-vector classifiers.
///
/// Configuration is a TOML file with sections [data], [head], [train],
/// [debias], [selection] and [run]; every key is optional. Defaults:
/// synthetic data with 10000 rows (seed 42) split 0.6/0.2/0.2, logistic
/// regression head trained for 100 epochs (lr 0.1, batch 64), LEACE-last
/// fitted on 20% of the training split, scores kl/sr/euclid/cosine/random,
/// calibration grid 1..=15 % on the first 15% of validation maximising
/// FF-score, fixed sweep at 5/10/15 %, seeds 1..=5, output directory `out`.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
#[derive(Debug, Parser)]
#[command(name = "seldebias", version, verbatim_doc_comment)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset as train/val/test CSV files.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Train, debias, calibrate and evaluate every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Score kinds to sweep (repeatable); replaces the configured list.
        #[arg(long = "score", value_enum)]
        scores: Vec<ScoreArg>,
        /// Fixed sweep percentages (repeatable); replaces the configured list.
        #[arg(long = "percent")]
        percents: Vec<f64>,
    },
    /// Emit accuracy- and fairness-oracle rejection curves for one seed.
    OracleCurves {
        #[command(flatten)]
        common: Common,
    },
    /// Time standard vs selective prediction over the test split.
    Timing {
        #[command(flatten)]
        common: Common,
    },
    /// Apply a saved eraser to the features of a CSV dataset.
    Erase {
        /// Eraser JSON written by `run` (seed-N/eraser.json).
        #[arg(long)]
        eraser: PathBuf,
        /// Input CSV (f0..f{d-1},label,protected).
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-instance bias scores for one split as CSV.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ScoreArg::Kl)]
        score: ScoreArg,
        /// Also mark instances selected at this percentage of the
        /// calibration prefix.
        #[arg(long)]
        percent: Option<f64>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override. For `run` it is repeatable and replaces the seed list;
    /// for `gen-synth` it replaces the synthetic data seed.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory (a file for `score` and `timing`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Eraser application mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoreArg {
    Kl,
    Sr,
    Euclid,
    Cosine,
    Random,
}

impl ScoreArg {
    fn kind(self) -> BiasScoreKind {
        match self {
            ScoreArg::Kl => BiasScoreKind::Kl,
            ScoreArg::Sr => BiasScoreKind::Sr,
            ScoreArg::Euclid => BiasScoreKind::Euclidean,
            ScoreArg::Cosine => BiasScoreKind::Cosine,
            ScoreArg::Random => BiasScoreKind::Random(0),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    LeaceLast,
    LeaceCls,
    Inlp,
}

impl From<ModeArg> for DebiasMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::LeaceLast => DebiasMode::LeaceLast,
            ModeArg::LeaceCls => DebiasMode::LeaceCls,
            ModeArg::Inlp => DebiasMode::Inlp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

fn load_config(common: &Common) -> seldebias::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = common.mode {
        cfg.debias.mode = mode.into();
    }
    Ok(cfg)
}

fn single_seed(common: &Common, cfg: &ExperimentConfig) -> seldebias::Result<u64> {
    match common.seeds.as_slice() {
        [] => Ok(cfg.run.seeds[0]),
        [s] => Ok(*s),
        _ => Err(Error::Config("this command takes a single --seed".into())),
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.run.out.clone())
}

fn run(cli: Cli) -> seldebias::Result<()> {
    match cli.command {
        Command::GenSynth { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(&s) = common.seeds.first() {
                cfg.data.synth_seed = s;
            }
            cfg.validate()?;
            let out = out_dir(&common, &cfg);
            let splits = experiment::cmd_gen_synth(&cfg, &out)?;
            println!(
                "wrote {}/{{train,val,test}}.csv ({}/{}/{} rows)",
                out.display(),
                splits.train.len(),
                splits.val.len(),
                splits.test.len()
            );
        }
        Command::Run {
            common,
            scores,
            percents,
        } => {
            let mut cfg = load_config(&common)?;
            if !common.seeds.is_empty() {
                cfg.run.seeds = common.seeds.clone();
            }
            if let Some(out) = &common.out {
                cfg.run.out = out.clone();
            }
            if !scores.is_empty() {
                cfg.selection.scores = scores.iter().map(|s| s.kind().name().to_string()).collect();
            }
            if !percents.is_empty() {
                cfg.selection.fixed = percents;
            }
            cfg.validate()?;
            let manifest = experiment::cmd_run(&cfg)?;
            print!("{}", render_aggregate(&manifest.aggregate));
            let failed = manifest.seeds.iter().filter(|s| s.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} seed(s) failed; see manifest.json");
            }
            println!("manifest: {}", cfg.run.out.join("manifest.json").display());
        }
        Command::OracleCurves { common } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let seed = single_seed(&common, &cfg)?;
            let out = out_dir(&common, &cfg);
            let s = experiment::cmd_oracle_curves(&cfg, seed, &out)?;
            println!("oracle      FR-AUC  Acc-AUC  FF-AUC");
            for (name, a) in [("accuracy", s.accuracy_oracle), ("fairness", s.fairness_oracle)] {
                println!(
                    "{name:<10} {:>7.1}  {:>7.1}  {:>6.1}",
                    a.fr_auc * 100.0,
                    a.acc_auc * 100.0,
                    a.ff_auc * 100.0
                );
            }
        }
        Command::Timing { common } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let seed = single_seed(&common, &cfg)?;
            let report = experiment::cmd_timing(&cfg, seed)?;
            println!(
                "standard  {:.3} ± {:.3} ms\nselective {:.3} ± {:.3} ms\noverhead  {:.1}% ({} instances, {} repetitions)",
                report.standard_ms.mean,
                report.standard_ms.std,
                report.selective_ms.mean,
                report.selective_ms.std,
                report.overhead_percent,
                report.instances,
                report.repetitions
            );
            if let Some(out) = &common.out {
                write_json(out, &report)?;
            }
        }
        Command::Erase { eraser, data, out } => {
            let text = std::fs::read_to_string(&eraser).map_err(|e| io_error(&eraser, e))?;
            let debiaser = Debiaser::from_json(&text)?;
            let input = data::load_csv(&data)?;
            let erased = experiment::erase_dataset(&debiaser, &input)?;
            data::save_csv(&erased, &out)?;
            println!("wrote {} ({} rows)", out.display(), erased.len());
        }
        Command::Score {
            common,
            score,
            percent,
            split,
        } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let seed = single_seed(&common, &cfg)?;
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Config("score needs --out".into()))?;
            write_scores(&cfg, seed, score.kind().with_seed(seed), percent, split, &out)?;
        }
    }
    Ok(())
}

fn write_scores(
    cfg: &ExperimentConfig,
    seed: u64,
    kind: BiasScoreKind,
    percent: Option<f64>,
    split: SplitArg,
    out: &Path,
) -> seldebias::Result<()> {
    let splits = experiment::load_splits(cfg)?;
    let pipeline = Pipeline::train(cfg, &splits, seed)?;
    let target: &LabeledEmbeddings = match split {
        SplitArg::Val => &splits.val,
        SplitArg::Test => &splits.test,
    };
    let set = pipeline.scored_set(target, kind)?;
    let selected = match percent {
        Some(p) => {
            let calibration = splits.val.prefix(cfg.selection.calibration_fraction)?;
            let calib = pipeline.scored_set(&calibration, kind)?;
            let h = threshold_for_percentage(&calib.scores, p)?;
            Some(set.apply(h)?.selected)
        }
        None => None,
    };
    write_atomic(
        out,
        experiment::scores_csv(&set.scores, selected.as_deref()).as_bytes(),
    )?;
    println!("wrote {} ({} scores, {kind})", out.display(), set.scores.len());
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
