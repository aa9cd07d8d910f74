//! Repeated-split experiments and report files.
//!
//! Repeat `r` uses seed `base_seed + r` for its split and for every model it
//! trains, so any single repeat can be replayed on its own.
//!
//! Files written by [`emit_report`]:
//!
//! - `summary.json`: the whole [`EvaluationReport`]
//! - `auc_<mode>.csv`: `repeat,seed,test_auc,chosen_lambda`
//! - `roc_<mode>_<repeat>.csv`: test ROC curve (`threshold,fpr,tpr`)
//! - `history_<mode>_<repeat>_<lambda>.csv`: per-epoch training history
//! - `split_<repeat>.json`: index lists of the split used by that repeat

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_synthetic, load_csv, make_splits, preprocess, Dataset, LabelColumn, LabelScheme, Partition,
    SplitOptions, SplitSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{empirical_auc, roc_curve, RocCurve};
use crate::objective::{lambda_search, train, EpochRecord, Mode, TrainConfig, TrainResult};
use crate::scorer::{score_matrix, AutoencoderParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic,
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
        labels: LabelScheme,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DatasetSource,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub modes: Vec<Mode>,
    /// Train every lambda-dependent mode with this value instead of
    /// searching `train.lambda_grid`.
    pub fixed_lambda: Option<f64>,
    pub train: TrainConfig,
    pub split: SplitOptions,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic,
            n_repeats: 10,
            base_seed: 0,
            modes: Mode::ALL.to_vec(),
            fixed_lambda: None,
            train: TrainConfig::default(),
            split: SplitOptions::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::InvalidConfig("need at least one repeat".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig("no modes selected".into()));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(
                    "lambda must be finite and non-negative".into(),
                ));
            }
        } else if self.train.lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("empty lambda grid".into()));
        }
        self.train.validate()
    }
}

/// One training run inside a lambda search (or the single run of a mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRun {
    /// `None` for the infinite-lambda mode.
    pub lambda: Option<f64>,
    pub val_metric: f64,
    pub test_auc: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub history_file: String,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    /// Strict-inequality AUC on the test split (the metric of record).
    pub test_auc: f64,
    /// Trapezoidal ROC area, ties counted as one half.
    pub test_roc_area: f64,
    pub chosen_lambda: Option<f64>,
    pub val_metric: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub runs: Vec<LambdaRun>,
    pub roc_file: String,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub mean_test_auc: f64,
    pub std_error: f64,
    pub repeats: Vec<RepeatResult>,
}

impl ModeReport {
    pub fn test_aucs(&self) -> Vec<f64> {
        self.repeats.iter().map(|r| r.test_auc).collect()
    }

    /// Mean test AUC of the run trained with `lambda` in each repeat, when
    /// every repeat has such a run.
    pub fn mean_test_auc_at(&self, lambda: f64) -> Option<f64> {
        let values: Option<Vec<f64>> = self
            .repeats
            .iter()
            .map(|r| {
                r.runs
                    .iter()
                    .find(|run| run.lambda == Some(lambda))
                    .map(|run| run.test_auc)
            })
            .collect();
        values.map(|v| mean_and_std_error(&v).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub config: ExperimentConfig,
    pub modes: Vec<ModeReport>,
    pub total_seconds: f64,
}

impl EvaluationReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.total_seconds = 0.0;
        for m in &mut r.modes {
            for rep in &mut m.repeats {
                rep.train_seconds = 0.0;
                for run in &mut rep.runs {
                    run.train_seconds = 0.0;
                }
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Report plus the per-run data that goes into separate files.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvaluationReport,
    pub rocs: Vec<(String, RocCurve)>,
    pub histories: Vec<(String, Vec<EpochRecord>)>,
    pub splits: Vec<(String, SplitSpec)>,
}

pub fn lambda_label(lambda: Option<f64>) -> String {
    match lambda {
        Some(l) => format!("{l}"),
        None => "inf".to_string(),
    }
}

fn test_scores(params: &AutoencoderParams, part: &Partition) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        score_matrix(params, &part.test.anomalies)?,
        score_matrix(params, &part.test.normals)?,
    ))
}

fn test_auc(params: &AutoencoderParams, part: &Partition) -> Result<f64> {
    let (a, n) = test_scores(params, part)?;
    empirical_auc(&a, &n)
}

struct Prepared {
    name: String,
    dataset: Option<Dataset>,
}

fn prepare(source: &DatasetSource) -> Result<Prepared> {
    match source {
        DatasetSource::Synthetic => Ok(Prepared {
            name: "synthetic".into(),
            dataset: None,
        }),
        DatasetSource::Csv {
            path,
            label_column,
            labels,
        } => {
            let raw = load_csv(path, label_column, labels)?;
            let ds = preprocess(&raw);
            Ok(Prepared {
                name: ds.name.clone(),
                dataset: Some(ds),
            })
        }
    }
}

fn repeat_partition(
    prepared: &Prepared,
    split: &SplitOptions,
    seed: u64,
) -> Result<(SplitSpec, Partition)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &prepared.dataset {
        None => {
            let syn = gen_synthetic(&mut rng)?;
            let part = syn.partition()?;
            Ok((syn.split, part))
        }
        Some(ds) => {
            let spec = make_splits(ds, split, &mut rng)?;
            let part = spec.materialize(ds)?;
            Ok((spec, part))
        }
    }
}

fn run_mode(
    config: &ExperimentConfig,
    mode: Mode,
    repeat: usize,
    seed: u64,
    part: &Partition,
    out: &mut ExperimentOutput,
) -> Result<RepeatResult> {
    let started = Instant::now();
    let base = TrainConfig {
        mode,
        rng_seed: seed,
        ..config.train.clone()
    };
    let (runs, best_index): (Vec<TrainResult>, usize) =
        match (mode.uses_lambda(), config.fixed_lambda) {
            (true, None) => {
                let search = lambda_search(&part.train, &part.val, &base)?;
                (search.runs, search.best_index)
            }
            (true, Some(lambda)) => (
                vec![train(
                    &part.train,
                    &part.val,
                    &TrainConfig { lambda, ..base },
                )?],
                0,
            ),
            (false, _) => (
                vec![train(
                    &part.train,
                    &part.val,
                    &TrainConfig {
                        lambda: 0.0,
                        ..base
                    },
                )?],
                0,
            ),
        };

    let mut lambda_runs = Vec::with_capacity(runs.len());
    for run in &runs {
        let lambda = mode.effective_lambda(run.lambda);
        let history_file = format!("history_{mode}_{repeat}_{}.csv", lambda_label(lambda));
        out.histories
            .push((history_file.clone(), run.history.clone()));
        lambda_runs.push(LambdaRun {
            lambda,
            val_metric: run.best_val_metric,
            test_auc: test_auc(&run.best_params, part)?,
            best_epoch: run.best_epoch,
            stopped_epoch: run.stopped_epoch,
            history_file,
            train_seconds: run.seconds,
        });
    }

    let best = &runs[best_index];
    let (a, n) = test_scores(&best.best_params, part)?;
    let roc = roc_curve(&a, &n)?;
    let roc_file = format!("roc_{mode}_{repeat}.csv");
    let result = RepeatResult {
        repeat,
        seed,
        test_auc: lambda_runs[best_index].test_auc,
        test_roc_area: roc.auc,
        chosen_lambda: mode.effective_lambda(best.lambda),
        val_metric: best.best_val_metric,
        best_epoch: best.best_epoch,
        stopped_epoch: best.stopped_epoch,
        runs: lambda_runs,
        roc_file: roc_file.clone(),
        train_seconds: started.elapsed().as_secs_f64(),
    };
    out.rocs.push((roc_file, roc));
    Ok(result)
}

/// Runs every repeat and mode. On failure, returns the work completed so
/// far together with the error.
pub fn run_experiment_partial(config: &ExperimentConfig) -> (ExperimentOutput, Option<Error>) {
    let started = Instant::now();
    let mut out = ExperimentOutput {
        report: EvaluationReport {
            dataset: String::new(),
            n_repeats: 0,
            base_seed: config.base_seed,
            config: config.clone(),
            modes: Vec::new(),
            total_seconds: 0.0,
        },
        rocs: Vec::new(),
        histories: Vec::new(),
        splits: Vec::new(),
    };
    let mut per_mode: Vec<Vec<RepeatResult>> = vec![Vec::new(); config.modes.len()];
    let error = (|| -> Result<()> {
        config.validate()?;
        let prepared = prepare(&config.source)?;
        out.report.dataset = prepared.name.clone();
        for repeat in 0..config.n_repeats {
            let seed = config.base_seed.wrapping_add(repeat as u64);
            let mut results = Vec::with_capacity(config.modes.len());
            let (spec, part) =
                repeat_partition(&prepared, &config.split, seed).map_err(|e| Error::Run {
                    repeat,
                    mode: "split".into(),
                    source: Box::new(e),
                })?;
            for &mode in &config.modes {
                let r = run_mode(config, mode, repeat, seed, &part, &mut out).map_err(|e| {
                    Error::Run {
                        repeat,
                        mode: mode.to_string(),
                        source: Box::new(e),
                    }
                })?;
                results.push(r);
            }
            // A repeat only counts once every mode has finished it.
            for (slot, r) in per_mode.iter_mut().zip(results) {
                slot.push(r);
            }
            out.splits.push((format!("split_{repeat}.json"), spec));
            out.report.n_repeats = repeat + 1;
        }
        Ok(())
    })()
    .err();

    out.report.modes = config
        .modes
        .iter()
        .zip(per_mode)
        .map(|(&mode, repeats)| {
            let aucs: Vec<f64> = repeats.iter().map(|r| r.test_auc).collect();
            let (mean_test_auc, std_error) = mean_and_std_error(&aucs);
            ModeReport {
                mode,
                mean_test_auc,
                std_error,
                repeats,
            }
        })
        .collect();
    let done = out.report.n_repeats;
    out.rocs
        .retain(|(name, _)| repeat_of(name).is_some_and(|r| r < done));
    out.histories
        .retain(|(name, _)| repeat_of(name).is_some_and(|r| r < done));
    out.report.total_seconds = started.elapsed().as_secs_f64();
    (out, error)
}

/// Repeat index embedded in an artifact file name (`kind_mode_repeat...`).
fn repeat_of(name: &str) -> Option<usize> {
    name.trim_end_matches(".csv")
        .split('_')
        .nth(2)?
        .parse()
        .ok()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    match run_experiment_partial(config) {
        (out, None) => Ok(out),
        (_, Some(e)) => Err(e),
    }
}

fn write_file(
    dir: &Path,
    name: &str,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes all report files into `dir` (created if missing) and returns
/// their paths.
pub fn emit_report(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let json = output.report.to_json()?;
    written.push(write_file(dir, "summary.json", |w| {
        w.write_all(json.as_bytes())
    })?);
    for m in &output.report.modes {
        written.push(write_file(dir, &format!("auc_{}.csv", m.mode), |w| {
            writeln!(w, "repeat,seed,test_auc,chosen_lambda")?;
            for r in &m.repeats {
                let lambda = lambda_label(r.chosen_lambda);
                writeln!(w, "{},{},{},{}", r.repeat, r.seed, r.test_auc, lambda)?;
            }
            Ok(())
        })?);
    }
    for (name, roc) in &output.rocs {
        written.push(write_file(dir, name, |w| roc.write_csv(w))?);
    }
    for (name, history) in &output.histories {
        written.push(write_file(dir, name, |w| {
            writeln!(w, "epoch,train_objective,val_inexact_auc")?;
            for r in history {
                writeln!(w, "{},{},{}", r.epoch, r.train_objective, r.val_metric)?;
            }
            Ok(())
        })?);
    }
    for (name, split) in &output.splits {
        let text = split.to_json()?;
        written.push(write_file(dir, name, |w| w.write_all(text.as_bytes()))?);
    }
    Ok(written)
}
