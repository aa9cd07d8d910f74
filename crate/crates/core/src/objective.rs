//! Training objective, its gradient, Adam, and the training loop.
//!
//! The objective for the proposed mode is
//!
//! ```text
//! E = mean_j a(n_j) - lambda * mean_{k,j} sigmoid(max_{i in B_k} a(x_ki) - a(n_j))
//! ```
//!
//! where `a` is the reconstruction-error score, `B_k` are the inexact
//! anomaly sets and `n_j` the normal instances. The other modes are
//! variants of the same expression (see [`Mode`]).

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WeakLabelData;
use crate::error::{Error, Result};
use crate::metrics::{empirical_auc, empirical_inexact_auc};
use crate::scorer::{score_matrix, AutoencoderParams, ScoreTape, DEFAULT_CODE, DEFAULT_HIDDEN};
use crate::tensor::{sigmoid_stable, DenseMatrix};

pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Normal reconstruction error minus `lambda` times the smooth inexact AUC.
    Proposed,
    /// Normal reconstruction error only.
    Ae,
    /// Smooth inexact AUC only (the `lambda -> infinity` limit).
    Mil,
    /// Normal reconstruction error minus `lambda` times a smooth AUC that
    /// treats every set member as an anomaly.
    Sae,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Proposed, Mode::Ae, Mode::Mil, Mode::Sae];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::Ae => "ae",
            Mode::Mil => "mil",
            Mode::Sae => "sae",
        }
    }

    /// Whether `lambda` changes the objective.
    pub fn uses_lambda(self) -> bool {
        matches!(self, Mode::Proposed | Mode::Sae)
    }

    /// Whether validation scores sets by their maximum (inexact AUC) rather
    /// than treating every member as an anomaly (plain AUC).
    pub fn validates_with_inexact_auc(self) -> bool {
        matches!(self, Mode::Proposed | Mode::Mil)
    }

    fn reconstruction_weight(self) -> f64 {
        if self == Mode::Mil {
            0.0
        } else {
            1.0
        }
    }

    fn ranking_weight(self, lambda: f64) -> f64 {
        match self {
            Mode::Ae => 0.0,
            Mode::Mil => 1.0,
            Mode::Proposed | Mode::Sae => lambda,
        }
    }

    /// The `lambda` a run in this mode effectively uses, `None` for the
    /// infinite limit.
    pub fn effective_lambda(self, lambda: f64) -> Option<f64> {
        match self {
            Mode::Ae => Some(0.0),
            Mode::Mil => None,
            Mode::Proposed | Mode::Sae => Some(lambda),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(Mode::Proposed),
            "ae" => Ok(Mode::Ae),
            "mil" => Ok(Mode::Mil),
            "sae" => Ok(Mode::Sae),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub batch_sets: usize,
    pub batch_normals: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without a strict validation improvement before stopping.
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub rng_seed: u64,
    pub lambda_grid: Vec<f64>,
    pub hidden_units: usize,
    pub code_units: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Proposed,
            lambda: 1.0,
            batch_sets: 8,
            batch_normals: 128,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 1000,
            patience: Some(100),
            rng_seed: 0,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            hidden_units: DEFAULT_HIDDEN,
            code_units: DEFAULT_CODE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self
            .lambda_grid
            .iter()
            .any(|l| !(*l >= 0.0 && l.is_finite()))
        {
            return bad("lambda grid values must be finite and non-negative");
        }
        if self.batch_sets == 0 || self.batch_normals == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1 (use None to disable)");
        }
        if self.hidden_units == 0 || self.code_units == 0 {
            return bad("layer sizes must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

fn require_normals(normals: &DenseMatrix) -> Result<()> {
    if normals.rows() == 0 {
        return Err(Error::EmptyInput("normal instances"));
    }
    Ok(())
}

fn require_sets(sets: &[DenseMatrix]) -> Result<()> {
    if sets.is_empty() {
        return Err(Error::EmptyInput("inexact anomaly sets"));
    }
    if let Some(index) = sets.iter().position(|s| s.rows() == 0) {
        return Err(Error::EmptySet { index });
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn stack(blocks: &[&DenseMatrix], cols: usize) -> DenseMatrix {
    let rows: Vec<&[f64]> = blocks
        .iter()
        .flat_map(|b| (0..b.rows()).map(move |r| b.row(r)))
        .collect();
    DenseMatrix::from_rows(&rows, cols).expect("blocks share a width")
}

/// Which instances play the anomalous side of the ranking term.
fn ranking_uses_max(mode: Mode) -> bool {
    mode != Mode::Sae
}

/// Objective value from precomputed scores. `positive_scores` are the set
/// maxima (or every set member for [`Mode::Sae`]).
fn objective_from_scores(
    mode: Mode,
    lambda: f64,
    positive_scores: &[f64],
    normal_scores: &[f64],
) -> f64 {
    let n = normal_scores.len() as f64;
    let mut value = 0.0;
    let rw = mode.reconstruction_weight();
    if rw != 0.0 {
        value += rw * normal_scores.iter().sum::<f64>() / n;
    }
    let weight = mode.ranking_weight(lambda);
    if weight != 0.0 {
        let pairs: f64 = positive_scores
            .iter()
            .map(|p| {
                normal_scores
                    .iter()
                    .map(|q| sigmoid_stable(p - q))
                    .sum::<f64>()
            })
            .sum();
        value -= weight * pairs / (positive_scores.len() as f64 * n);
    }
    value
}

fn needs_sets(mode: Mode, lambda: f64) -> bool {
    mode.ranking_weight(lambda) != 0.0
}

/// Objective of `mode` over the given sets and normal instances.
pub fn mode_objective(
    mode: Mode,
    params: &AutoencoderParams,
    sets: &[DenseMatrix],
    normals: &DenseMatrix,
    lambda: f64,
) -> Result<f64> {
    require_normals(normals)?;
    let normal_scores = score_matrix(params, normals)?;
    let positives = if needs_sets(mode, lambda) {
        require_sets(sets)?;
        let mut out = Vec::new();
        for set in sets {
            let s = score_matrix(params, set)?;
            if ranking_uses_max(mode) {
                out.push(s[argmax(&s)]);
            } else {
                out.extend(s);
            }
        }
        out
    } else {
        Vec::new()
    };
    Ok(objective_from_scores(
        mode,
        lambda,
        &positives,
        &normal_scores,
    ))
}

/// The proposed objective.
pub fn objective_value(
    params: &AutoencoderParams,
    sets: &[DenseMatrix],
    normals: &DenseMatrix,
    lambda: f64,
) -> Result<f64> {
    mode_objective(Mode::Proposed, params, sets, normals, lambda)
}

/// Objective value and its exact gradient. The gradient of each set
/// maximum flows through a single member (lowest index on ties).
pub fn mode_objective_grad(
    mode: Mode,
    params: &AutoencoderParams,
    sets: &[DenseMatrix],
    normals: &DenseMatrix,
    lambda: f64,
) -> Result<(f64, AutoencoderParams)> {
    require_normals(normals)?;
    let dim = params.input_dim();
    let weight = mode.ranking_weight(lambda);

    // Rows that receive gradient: normals first, then the anomalous side.
    let positives: Vec<DenseMatrix> = if weight != 0.0 {
        require_sets(sets)?;
        if ranking_uses_max(mode) {
            let mut picked = Vec::with_capacity(sets.len());
            for set in sets {
                let s = score_matrix(params, set)?;
                picked.push(set.row(argmax(&s)).to_vec());
            }
            vec![DenseMatrix::from_rows(&picked, dim)?]
        } else {
            sets.to_vec()
        }
    } else {
        Vec::new()
    };
    let mut blocks = vec![normals];
    blocks.extend(positives.iter());
    let rows = stack(&blocks, dim);
    let tape = ScoreTape::record(params, &rows)?;
    let n_norm = normals.rows();
    let (normal_scores, positive_scores) = tape.scores.split_at(n_norm);

    let value = objective_from_scores(mode, lambda, positive_scores, normal_scores);
    let n = n_norm as f64;
    let mut upstream = vec![mode.reconstruction_weight() / n; rows.rows()];
    upstream[n_norm..].iter_mut().for_each(|u| *u = 0.0);
    if weight != 0.0 {
        let c = weight / (positive_scores.len() as f64 * n);
        for (k, p) in positive_scores.iter().enumerate() {
            for (j, q) in normal_scores.iter().enumerate() {
                let s = sigmoid_stable(p - q);
                let ds = c * s * (1.0 - s);
                upstream[j] += ds;
                upstream[n_norm + k] -= ds;
            }
        }
    }
    let grad = tape.backward(params, &upstream)?;
    Ok((value, grad))
}

/// Gradient of the proposed objective.
pub fn objective_grad(
    params: &AutoencoderParams,
    sets: &[DenseMatrix],
    normals: &DenseMatrix,
    lambda: f64,
) -> Result<AutoencoderParams> {
    Ok(mode_objective_grad(Mode::Proposed, params, sets, normals, lambda)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: AutoencoderParams,
    pub v: AutoencoderParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &AutoencoderParams) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut AutoencoderParams,
    grads: &AutoencoderParams,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::dims(
            "Adam parameter count",
            params.num_params(),
            grads.num_params(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (config.beta1, config.beta2);
    let values = params.layers_mut().flat_map(|l| l.values_mut());
    let g = grads.layers().flat_map(|l| l.values());
    let m = state.m.layers_mut().flat_map(|l| l.values_mut());
    let v = state.v.layers_mut().flat_map(|l| l.values_mut());
    for (((p, g), m), v) in values.zip(g).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// Indices into the training sets and normals for one update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sets: Vec<usize>,
    pub normals: Vec<usize>,
}

/// One epoch of batches: the sets are shuffled and cut into chunks of
/// `batch_sets`; each batch draws `batch_normals` normals with replacement.
/// With no sets the epoch is a single batch.
pub fn make_batches<R: Rng + ?Sized>(
    n_sets: usize,
    n_normals: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..n_sets).collect();
    order.shuffle(rng);
    let chunks: Vec<Vec<usize>> = if order.is_empty() {
        vec![Vec::new()]
    } else {
        order
            .chunks(config.batch_sets)
            .map(<[usize]>::to_vec)
            .collect()
    };
    chunks
        .into_iter()
        .map(|sets| Batch {
            sets,
            normals: (0..config.batch_normals)
                .map(|_| rng.random_range(0..n_normals.max(1)))
                .collect(),
        })
        .collect()
}

fn gather_rows(m: &DenseMatrix, idx: &[usize]) -> DenseMatrix {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| m.row(i)).collect();
    DenseMatrix::from_rows(&rows, m.cols()).expect("rows share a width")
}

/// Validation score used for early stopping and lambda selection.
pub fn validation_metric(
    mode: Mode,
    params: &AutoencoderParams,
    val: &WeakLabelData,
) -> Result<f64> {
    require_normals(&val.normals)?;
    require_sets(&val.sets)?;
    let normal_scores = score_matrix(params, &val.normals)?;
    let set_scores = val
        .sets
        .iter()
        .map(|s| score_matrix(params, s))
        .collect::<Result<Vec<_>>>()?;
    if mode.validates_with_inexact_auc() {
        empirical_inexact_auc(&set_scores, &normal_scores)
    } else {
        empirical_auc(&set_scores.concat(), &normal_scores)
    }
}

/// Stepwise trainer; [`train`] drives it with early stopping.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a WeakLabelData,
    params: AutoencoderParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a WeakLabelData, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        require_normals(&data.normals)?;
        if needs_sets(config.mode, config.lambda) {
            require_sets(&data.sets)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let params = AutoencoderParams::init_with_rng(
            data.dim(),
            config.hidden_units,
            config.code_units,
            &mut rng,
        )?;
        Ok(Self {
            config: config.clone(),
            data,
            adam: AdamState::new(&params),
            params,
            rng,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &AutoencoderParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let cfg = &self.config;
        let uses_sets = needs_sets(cfg.mode, cfg.lambda);
        let batches = make_batches(
            self.data.sets.len(),
            self.data.normals.rows(),
            cfg,
            &mut self.rng,
        );
        let adam = cfg.adam();
        for batch in batches {
            let normals = gather_rows(&self.data.normals, &batch.normals);
            let sets: Vec<DenseMatrix> = if uses_sets {
                batch
                    .sets
                    .iter()
                    .map(|&k| self.data.sets[k].clone())
                    .collect()
            } else {
                Vec::new()
            };
            let (_, grad) =
                mode_objective_grad(cfg.mode, &self.params, &sets, &normals, cfg.lambda)?;
            adam_step(&mut self.params, &grad, &mut self.adam, &adam)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Objective of the current parameters over all training data.
    pub fn full_objective(&self) -> Result<f64> {
        mode_objective(
            self.config.mode,
            &self.params,
            &self.data.sets,
            &self.data.normals,
            self.config.lambda,
        )
    }

    pub fn into_params(self) -> AutoencoderParams {
        self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub mode: Mode,
    pub lambda: f64,
    pub best_params: AutoencoderParams,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    /// Set when the run came out of a lambda search.
    pub chosen_lambda: Option<f64>,
    pub seconds: f64,
}

impl TrainResult {
    /// `epoch,train_objective,val_inexact_auc`, one row per epoch. For modes
    /// validated with plain AUC the last column holds that AUC.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_objective,val_inexact_auc")?;
        for r in &self.history {
            writeln!(out, "{},{},{}", r.epoch, r.train_objective, r.val_metric)?;
        }
        Ok(())
    }
}

/// Trains one model, evaluating the validation metric after every epoch and
/// returning the best snapshot.
pub fn train(
    train_data: &WeakLabelData,
    val_data: &WeakLabelData,
    config: &TrainConfig,
) -> Result<TrainResult> {
    let started = Instant::now();
    let mut trainer = Trainer::new(train_data, config)?;
    let mut best_params = trainer.params().clone();
    let mut best_val_metric = validation_metric(config.mode, &best_params, val_data)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut since_best = 0;

    while trainer.epoch() < config.max_epochs {
        trainer.run_epoch()?;
        let epoch = trainer.epoch();
        let val_metric = validation_metric(config.mode, trainer.params(), val_data)?;
        history.push(EpochRecord {
            epoch,
            train_objective: trainer.full_objective()?,
            val_metric,
        });
        if epoch == 1 || val_metric > best_val_metric {
            best_val_metric = val_metric;
            best_params = trainer.params().clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(TrainResult {
        mode: config.mode,
        lambda: config.lambda,
        best_params,
        best_epoch,
        best_val_metric,
        stopped_epoch: trainer.epoch(),
        history,
        chosen_lambda: None,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// All runs of a lambda grid, in grid order.
#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub runs: Vec<TrainResult>,
    pub best_index: usize,
}

impl LambdaSearch {
    pub fn best(&self) -> &TrainResult {
        &self.runs[self.best_index]
    }

    pub fn into_best(mut self) -> TrainResult {
        self.runs.swap_remove(self.best_index)
    }
}

/// Trains once per grid value (concurrently) and picks the highest
/// validation metric, preferring the smaller lambda on ties.
pub fn lambda_search(
    train_data: &WeakLabelData,
    val_data: &WeakLabelData,
    config: &TrainConfig,
) -> Result<LambdaSearch> {
    if config.lambda_grid.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    let mut runs = config
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let cfg = TrainConfig {
                lambda,
                ..config.clone()
            };
            train(train_data, val_data, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let best = &runs[best_index];
        if r.best_val_metric > best.best_val_metric
            || (r.best_val_metric == best.best_val_metric && r.lambda < best.lambda)
        {
            best_index = i;
        }
    }
    let chosen = runs[best_index].lambda;
    for r in &mut runs {
        r.chosen_lambda = Some(chosen);
    }
    Ok(LambdaSearch { runs, best_index })
}

pub fn select_lambda(
    train_data: &WeakLabelData,
    val_data: &WeakLabelData,
    config: &TrainConfig,
) -> Result<TrainResult> {
    Ok(lambda_search(train_data, val_data, config)?.into_best())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::scorer::score;
    use crate::tensor::finite_diff_grad;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows, rows[0].len()).unwrap()
    }

    fn small_params(seed: u64) -> AutoencoderParams {
        let mut p = AutoencoderParams::init(2, 6, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        for l in p.layers_mut() {
            for b in &mut l.bias {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    #[test]
    fn lambda_zero_is_mean_normal_score() {
        let p = small_params(1);
        let normals = mat(&[&[0.1, 0.2], &[0.5, -0.3], &[1.0, 1.0]]);
        let sets = vec![mat(&[&[3.0, 3.0]])];
        let expected = (0..3)
            .map(|r| score(&p, normals.row(r)).unwrap())
            .sum::<f64>()
            / 3.0;
        assert_eq!(objective_value(&p, &sets, &normals, 0.0).unwrap(), expected);
        assert_eq!(objective_value(&p, &[], &normals, 0.0).unwrap(), expected);
    }

    #[test]
    fn hand_evaluated_objective() {
        // Zero parameters: every score is the squared norm of the input.
        let p = AutoencoderParams::zeros(1, 4, 2);
        let normals = mat(&[&[0.2f64.sqrt()]]);
        let sets = vec![mat(&[&[0.6f64.sqrt()], &[0.1f64.sqrt()]])];
        let e = objective_value(&p, &sets, &normals, 1.0).unwrap();
        assert!((e - (-0.398_687_660_112_452)).abs() < 1e-12, "{e}");
    }

    #[test]
    fn zero_params_objective_matches_raw_norms() {
        let p = AutoencoderParams::zeros(2, 4, 2);
        let normals = mat(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let sets = vec![mat(&[&[1.0, 0.0], &[0.0, 0.5]]), mat(&[&[0.2, 0.2]])];
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let a: Vec<f64> = (0..2).map(|r| norm2(normals.row(r))).collect();
        let m = [1.0f64.max(0.25), 0.08];
        let lambda = 0.7;
        let mut pair = 0.0;
        for mk in m {
            for aj in &a {
                pair += 1.0 / (1.0 + (-(mk - aj)).exp());
            }
        }
        let expected = (a[0] + a[1]) / 2.0 - lambda * pair / 4.0;
        let got = objective_value(&p, &sets, &normals, lambda).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn objective_errors() {
        let p = small_params(2);
        let empty = DenseMatrix::zeros(0, 2);
        let sets = vec![mat(&[&[1.0, 1.0]])];
        assert!(matches!(
            objective_value(&p, &sets, &empty, 1.0),
            Err(Error::EmptyInput(_))
        ));
        let normals = mat(&[&[0.0, 0.0]]);
        assert!(objective_value(&p, &[], &normals, 1.0).is_err());
        assert!(objective_value(&p, &[DenseMatrix::zeros(0, 2)], &normals, 1.0).is_err());
        let wide = mat(&[&[0.0, 0.0, 0.0]]);
        assert!(matches!(
            objective_value(&p, &sets, &wide, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lambda_zero_grad_is_mean_score_grad() {
        let p = small_params(3);
        let normals = mat(&[&[0.1, 0.2], &[0.5, -0.3]]);
        let g = objective_grad(&p, &[], &normals, 0.0).unwrap();
        let mut expected = p.zeros_like();
        for r in 0..2 {
            let sg = crate::scorer::score_grad(&p, normals.row(r), 0.5).unwrap();
            expected.add_scaled(&sg.grad, 1.0);
        }
        for (a, b) in g.to_flat().iter().zip(expected.to_flat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn assert_grad_matches_fd(
        mode: Mode,
        p: &AutoencoderParams,
        sets: &[DenseMatrix],
        normals: &DenseMatrix,
        lambda: f64,
    ) {
        let (_, g) = mode_objective_grad(mode, p, sets, normals, lambda).unwrap();
        let numeric = finite_diff_grad(
            |flat| {
                mode_objective(mode, &p.from_flat(flat).unwrap(), sets, normals, lambda).unwrap()
            },
            &p.to_flat(),
            1e-5,
        );
        for (a, n) in g.to_flat().iter().zip(&numeric) {
            let err = (a - n).abs();
            assert!(
                err < 1e-7 || err / a.abs().max(n.abs()) < 1e-4,
                "{mode}: {a} vs {n}"
            );
        }
    }

    #[test]
    fn grad_matches_finite_differences_all_modes() {
        let p = small_params(4);
        let normals = mat(&[&[0.1, 0.2], &[0.5, -0.3], &[-0.4, 0.9]]);
        let single = vec![mat(&[&[1.2, -0.4]]), mat(&[&[0.3, 0.7]])];
        assert_grad_matches_fd(Mode::Proposed, &p, &single, &normals, 0.8);
        let multi = vec![
            mat(&[&[1.2, -0.4], &[0.0, 0.1]]),
            mat(&[&[0.3, 0.7], &[2.0, 2.0]]),
        ];
        for mode in Mode::ALL {
            assert_grad_matches_fd(mode, &p, &multi, &normals, 1.3);
        }
    }

    #[test]
    fn mode_relations() {
        let p = small_params(5);
        let normals = mat(&[&[0.1, 0.2], &[0.5, -0.3]]);
        let sets = vec![mat(&[&[1.2, -0.4], &[0.0, 0.1]]), mat(&[&[0.3, 0.7]])];
        let ae = mode_objective(Mode::Ae, &p, &sets, &normals, 5.0).unwrap();
        assert_eq!(ae, objective_value(&p, &sets, &normals, 0.0).unwrap());

        // MIL is the ranking term alone, negated, with unit weight.
        let mil = mode_objective(Mode::Mil, &p, &sets, &normals, 123.0).unwrap();
        let e0 = objective_value(&p, &sets, &normals, 0.0).unwrap();
        let e1 = objective_value(&p, &sets, &normals, 1.0).unwrap();
        assert!((mil - (e1 - e0)).abs() < 1e-14);

        let singletons = vec![mat(&[&[1.2, -0.4]]), mat(&[&[0.3, 0.7]])];
        assert_eq!(
            mode_objective(Mode::Sae, &p, &singletons, &normals, 0.4).unwrap(),
            objective_value(&p, &singletons, &normals, 0.4).unwrap()
        );
        assert_eq!("SAE".parse::<Mode>().unwrap(), Mode::Sae);
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = small_params(6);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    fn one_param() -> AutoencoderParams {
        // Smallest possible network: every value is one scalar parameter.
        AutoencoderParams::zeros(1, 1, 1)
    }

    #[test]
    fn adam_first_step() {
        let mut p = one_param();
        let mut g = p.zeros_like();
        g.encoder[0].weight.set(0, 0, 1.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert!((st.m.encoder[0].weight.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((st.v.encoder[0].weight.get(0, 0) - 0.001).abs() < 1e-15);
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.encoder[0].weight.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let mut p = one_param();
        let mut g = p.zeros_like();
        g.encoder[0].weight.set(0, 0, -0.37);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.encoder[0].weight.get(0, 0);
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
            last = p.encoder[0].weight.get(0, 0) - before;
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = one_param();
        let g = AutoencoderParams::zeros(2, 1, 1);
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn batches_cover_sets() {
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(10, 50, &cfg, &mut rng);
        assert_eq!(
            b.iter().map(|x| x.sets.len()).collect::<Vec<_>>(),
            vec![8, 2]
        );
        let mut all: Vec<usize> = b.iter().flat_map(|x| x.sets.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(b
            .iter()
            .all(|x| x.normals.len() == 128 && x.normals.iter().all(|&i| i < 50)));

        let b = make_batches(5, 50, &cfg, &mut rng);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].sets.len(), 5);

        let x = make_batches(10, 50, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let y = make_batches(10, 50, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(x, y);
    }

    fn tiny_config(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            hidden_units: 16,
            code_units: 4,
            max_epochs: 20,
            patience: Some(10),
            rng_seed: 3,
            ..TrainConfig::default()
        }
    }

    fn synthetic_partition(seed: u64) -> crate::data::Partition {
        gen_synthetic(&mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .partition()
            .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let part = synthetic_partition(1);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..tiny_config(Mode::Proposed)
        };
        let res = train(&part.train, &part.val, &cfg).unwrap();
        assert!(res.history.is_empty());
        assert_eq!(res.stopped_epoch, 0);
        let init = Trainer::new(&part.train, &cfg).unwrap().into_params();
        assert_eq!(res.best_params, init);
    }

    #[test]
    fn best_snapshot_tracks_history_max() {
        let part = synthetic_partition(2);
        let res = train(&part.train, &part.val, &tiny_config(Mode::Proposed)).unwrap();
        let max = res
            .history
            .iter()
            .map(|r| r.val_metric)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(res.best_val_metric, max);
        let rec = res.history[res.best_epoch - 1];
        assert_eq!(rec.val_metric, max);
        assert_eq!(
            validation_metric(Mode::Proposed, &res.best_params, &part.val).unwrap(),
            max
        );
        let first = res.history[0].val_metric;
        assert!(res.best_val_metric >= first);
    }

    #[test]
    fn training_is_deterministic() {
        let part = synthetic_partition(3);
        for mode in Mode::ALL {
            let a = train(&part.train, &part.val, &tiny_config(mode)).unwrap();
            let b = train(&part.train, &part.val, &tiny_config(mode)).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.best_params, b.best_params);
        }
    }

    #[test]
    fn lambda_zero_ignores_training_set_contents() {
        let part = synthetic_partition(4);
        let mut altered = part.train.clone();
        altered.sets.reverse();
        for s in &mut altered.sets {
            for v in s.as_mut_slice() {
                *v = -*v * 3.0;
            }
        }
        let cfg = TrainConfig {
            lambda: 0.0,
            patience: None,
            max_epochs: 5,
            ..tiny_config(Mode::Proposed)
        };
        let mut a = Trainer::new(&part.train, &cfg).unwrap();
        let mut b = Trainer::new(&altered, &cfg).unwrap();
        for _ in 0..5 {
            a.run_epoch().unwrap();
            b.run_epoch().unwrap();
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn select_lambda_single_value_matches_train() {
        let part = synthetic_partition(5);
        let cfg = TrainConfig {
            lambda_grid: vec![0.1],
            lambda: 0.1,
            ..tiny_config(Mode::Proposed)
        };
        let sel = select_lambda(&part.train, &part.val, &cfg).unwrap();
        let direct = train(&part.train, &part.val, &cfg).unwrap();
        assert_eq!(sel.chosen_lambda, Some(0.1));
        assert_eq!(sel.history, direct.history);
        assert_eq!(sel.best_params, direct.best_params);
    }

    #[test]
    fn select_lambda_picks_argmax() {
        let part = synthetic_partition(6);
        let cfg = TrainConfig {
            lambda_grid: vec![0.0, 10.0],
            ..tiny_config(Mode::Proposed)
        };
        let search = lambda_search(&part.train, &part.val, &cfg).unwrap();
        let best = search.best();
        for r in &search.runs {
            assert!(best.best_val_metric >= r.best_val_metric);
        }
        assert!(select_lambda(
            &part.train,
            &part.val,
            &TrainConfig {
                lambda_grid: vec![],
                ..cfg
            }
        )
        .is_err());
    }

    #[test]
    fn train_requires_data() {
        let part = synthetic_partition(7);
        let mut no_sets = part.train.clone();
        no_sets.sets.clear();
        assert!(train(&no_sets, &part.val, &tiny_config(Mode::Proposed)).is_err());
        // AE does not need training sets.
        let cfg = TrainConfig {
            max_epochs: 2,
            ..tiny_config(Mode::Ae)
        };
        assert!(train(&no_sets, &part.val, &cfg).is_ok());
        let mut no_val = part.val.clone();
        no_val.sets.clear();
        assert!(train(&part.train, &no_val, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lambda: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_sets: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: Some(0),
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn history_csv_layout() {
        let part = synthetic_partition(8);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: None,
            ..tiny_config(Mode::Mil)
        };
        let res = train(&part.train, &part.val, &cfg).unwrap();
        let mut buf = Vec::new();
        res.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next(),
            Some("epoch,train_objective,val_inexact_auc")
        );
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("1,"));
    }
}
