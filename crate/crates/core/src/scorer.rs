//! Reconstruction-error anomaly score of an autoencoder and its gradient.
//!
//! The score of `x` is `||x - g(f(x))||^2` where `f` is the encoder and `g`
//! the decoder. Both are ReLU networks with a linear output layer, so the
//! code layer is linear.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    check_chain, init_params_with_rng, mlp_backward_batch, mlp_forward_batch, DenseMatrix,
    ForwardCache, LayerParams,
};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_CODE: usize = 16;

/// Encoder and decoder parameters. Also used as the gradient container and
/// as optimizer moment storage, since all three share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
}

impl AutoencoderParams {
    pub fn new(encoder: Vec<LayerParams>, decoder: Vec<LayerParams>) -> Result<Self> {
        if encoder.is_empty() || decoder.is_empty() {
            return Err(Error::EmptyInput("encoder or decoder layers"));
        }
        check_chain(&encoder)?;
        check_chain(&decoder)?;
        let code = encoder.last().unwrap().out_dim();
        if decoder[0].in_dim() != code {
            return Err(Error::dims("decoder input", code, decoder[0].in_dim()));
        }
        let input = encoder[0].in_dim();
        let output = decoder.last().unwrap().out_dim();
        if output != input {
            return Err(Error::dims("decoder output", input, output));
        }
        Ok(Self { encoder, decoder })
    }

    /// `input -> hidden -> code` encoder mirrored by `code -> hidden -> input`.
    pub fn init(input_dim: usize, hidden: usize, code: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(input_dim, hidden, code, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        code: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = init_params_with_rng(&[input_dim, hidden, code], rng)?;
        let decoder = init_params_with_rng(&[code, hidden, input_dim], rng)?;
        Self::new(encoder, decoder)
    }

    pub fn zeros(input_dim: usize, hidden: usize, code: usize) -> Self {
        Self {
            encoder: vec![
                LayerParams::zeros(input_dim, hidden),
                LayerParams::zeros(hidden, code),
            ],
            decoder: vec![
                LayerParams::zeros(code, hidden),
                LayerParams::zeros(hidden, input_dim),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let blank = |ls: &[LayerParams]| {
            ls.iter()
                .map(|l| LayerParams::zeros(l.in_dim(), l.out_dim()))
                .collect()
        };
        Self {
            encoder: blank(&self.encoder),
            decoder: blank(&self.decoder),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.decoder[0].in_dim()
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(LayerParams::num_params).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.encoder.len() == other.encoder.len()
            && self.decoder.len() == other.decoder.len()
            && self
                .layers()
                .zip(other.layers())
                .all(|(a, b)| a.same_shape(b))
    }

    /// Encoder layers then decoder layers, each as weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers().flat_map(|l| l.values().copied()).collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::dims(
                "flat parameter vector",
                self.num_params(),
                flat.len(),
            ));
        }
        let mut out = self.clone();
        for (dst, src) in out.layers_mut().flat_map(|l| l.values_mut()).zip(flat) {
            *dst = *src;
        }
        Ok(out)
    }

    /// `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.layers_mut().zip(other.layers()) {
            for (x, y) in a.values_mut().zip(b.values()) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.layers_mut().flat_map(|l| l.values_mut()) {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .flat_map(|l| l.values())
            .all(|v| v.is_finite())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::dims("instance dimension", self.input_dim(), cols));
        }
        Ok(())
    }

    /// Reconstruction `g(f(x))` for every row.
    pub fn reconstruct(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x.cols())?;
        let (code, _) = mlp_forward_batch(&self.encoder, x)?;
        let (recon, _) = mlp_forward_batch(&self.decoder, &code)?;
        Ok(recon)
    }
}

fn squared_errors(x: &DenseMatrix, recon: &DenseMatrix) -> Vec<f64> {
    (0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(recon.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWithGrad {
    pub score: f64,
    pub grad: AutoencoderParams,
}

pub fn score(params: &AutoencoderParams, x: &[f64]) -> Result<f64> {
    let m = DenseMatrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(score_matrix(params, &m)?[0])
}

pub fn score_batch<R: AsRef<[f64]>>(params: &AutoencoderParams, rows: &[R]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let m = DenseMatrix::from_rows(rows, params.input_dim())?;
    score_matrix(params, &m)
}

pub fn score_matrix(params: &AutoencoderParams, x: &DenseMatrix) -> Result<Vec<f64>> {
    let recon = params.reconstruct(x)?;
    Ok(squared_errors(x, &recon))
}

pub fn score_grad(params: &AutoencoderParams, x: &[f64], upstream: f64) -> Result<ScoreWithGrad> {
    let m = DenseMatrix::from_vec(1, x.len(), x.to_vec())?;
    let (scores, grad) = score_grad_batch(params, &m, &[upstream])?;
    Ok(ScoreWithGrad {
        score: scores[0],
        grad,
    })
}

/// Scores every row of `x` and returns `sum_i upstream[i] * d score(x_i) / d params`.
pub fn score_grad_batch(
    params: &AutoencoderParams,
    x: &DenseMatrix,
    upstream: &[f64],
) -> Result<(Vec<f64>, AutoencoderParams)> {
    let tape = ScoreTape::record(params, x)?;
    let grad = tape.backward(params, upstream)?;
    Ok((tape.scores, grad))
}

/// Forward pass kept around so the gradient can be taken once the upstream
/// weights (which depend on the scores themselves) are known.
#[derive(Debug, Clone)]
pub struct ScoreTape {
    pub scores: Vec<f64>,
    x: DenseMatrix,
    recon: DenseMatrix,
    encoder_cache: ForwardCache,
    decoder_cache: ForwardCache,
}

impl ScoreTape {
    pub fn record(params: &AutoencoderParams, x: &DenseMatrix) -> Result<Self> {
        params.check_input(x.cols())?;
        let (code, encoder_cache) = mlp_forward_batch(&params.encoder, x)?;
        let (recon, decoder_cache) = mlp_forward_batch(&params.decoder, &code)?;
        Ok(Self {
            scores: squared_errors(x, &recon),
            x: x.clone(),
            recon,
            encoder_cache,
            decoder_cache,
        })
    }

    pub fn backward(
        &self,
        params: &AutoencoderParams,
        upstream: &[f64],
    ) -> Result<AutoencoderParams> {
        let x = &self.x;
        if upstream.len() != x.rows() {
            return Err(Error::dims(
                "upstream gradient count",
                x.rows(),
                upstream.len(),
            ));
        }
        let mut out_grad = DenseMatrix::zeros(x.rows(), x.cols());
        for (r, &u) in upstream.iter().enumerate() {
            let (xr, rr) = (x.row(r), self.recon.row(r));
            for ((g, a), b) in out_grad.row_mut(r).iter_mut().zip(xr).zip(rr) {
                *g = -2.0 * u * (a - b);
            }
        }
        let (decoder, code_grad) =
            mlp_backward_batch(&params.decoder, &self.decoder_cache, &out_grad)?;
        let (encoder, _) = mlp_backward_batch(&params.encoder, &self.encoder_cache, &code_grad)?;
        Ok(AutoencoderParams { encoder, decoder })
    }
}

const MODEL_MAGIC: &str = "inexact-auc-model 1";

/// Writes a model in the plain-text format read by [`read_model`].
///
/// ```text
/// inexact-auc-model 1
/// seed <u64 or ->
/// encoder <d0> <d1> ... <dk>
/// decoder <d0> <d1> ... <dk>
/// <one parameter per line, in `to_flat` order>
/// ```
///
/// Values use Rust's shortest round-trip float formatting, so a read after a
/// write reproduces every parameter bit for bit.
pub fn write_model<W: Write>(
    params: &AutoencoderParams,
    seed: Option<u64>,
    mut out: W,
) -> std::io::Result<()> {
    let dims = |ls: &[LayerParams]| {
        let mut d = vec![ls[0].in_dim()];
        d.extend(ls.iter().map(LayerParams::out_dim));
        d.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(out, "{MODEL_MAGIC}")?;
    match seed {
        Some(s) => writeln!(out, "seed {s}")?,
        None => writeln!(out, "seed -")?,
    }
    writeln!(out, "encoder {}", dims(&params.encoder))?;
    writeln!(out, "decoder {}", dims(&params.decoder))?;
    for v in params.to_flat() {
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(input: R) -> Result<(AutoencoderParams, Option<u64>)> {
    let bad = |message: String| Error::Format {
        path: "<model>".into(),
        message,
    };
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of model".into()))?
            .map_err(|e| Error::io("<model>", e))
    };
    if next()?.trim() != MODEL_MAGIC {
        return Err(bad("missing model header".into()));
    }
    let seed_line = next()?;
    let seed = match seed_line.trim().strip_prefix("seed ") {
        Some("-") => None,
        Some(s) => Some(s.parse().map_err(|_| bad(format!("bad seed {s:?}")))?),
        None => return Err(bad("missing seed line".into())),
    };
    let mut parse_dims = |tag: &str| -> Result<Vec<usize>> {
        let line = next()?;
        let rest = line
            .trim()
            .strip_prefix(tag)
            .ok_or_else(|| bad(format!("missing {tag} line")))?;
        rest.split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad dimension {t:?}"))))
            .collect()
    };
    let enc_dims = parse_dims("encoder")?;
    let dec_dims = parse_dims("decoder")?;
    let shape = |dims: &[usize]| -> Result<Vec<LayerParams>> {
        if dims.len() < 2 {
            return Err(bad("need at least two dimensions per network".into()));
        }
        Ok(dims
            .windows(2)
            .map(|w| LayerParams::zeros(w[0], w[1]))
            .collect())
    };
    let template = AutoencoderParams::new(shape(&enc_dims)?, shape(&dec_dims)?)?;
    let mut values = Vec::with_capacity(template.num_params());
    for line in lines {
        let line = line.map_err(|e| Error::io("<model>", e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|_| bad(format!("bad value {t:?}")))?,
        );
    }
    Ok((template.from_flat(&values)?, seed))
}
