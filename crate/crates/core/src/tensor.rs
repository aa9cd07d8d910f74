//! Dense row-major matrices and a small fully connected network.
//!
//! Networks are a sequence of affine layers with ReLU between them and a
//! linear output. Forward and backward passes work on whole batches (one
//! instance per row); the single-vector entry points are thin wrappers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("matrix data length", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally sized rows. An empty slice gives a `0 x cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::dims("matrix row length", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major strided view used to describe gemm operands without copying.
#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    fn plain(m: &'a DenseMatrix) -> Self {
        Self {
            data: &m.data,
            row_stride: m.cols as isize,
            col_stride: 1,
        }
    }

    fn transposed(m: &'a DenseMatrix) -> Self {
        Self {
            data: &m.data,
            row_stride: 1,
            col_stride: m.cols as isize,
        }
    }
}

/// `out = a (m x k) * b (k x n)`, overwriting `out`.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, out: &mut DenseMatrix) {
    assert_eq!(a.data.len(), m * k);
    assert_eq!(b.data.len(), k * n);
    assert_eq!((out.rows, out.cols), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.data.fill(0.0);
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the operand buffers, and `out` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// One affine layer: `weight` is `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::dims("layer bias length", weight.rows(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    /// Weights (row-major) followed by biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.as_slice().iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.data.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn same_shape(&self, other: &LayerParams) -> bool {
        self.in_dim() == other.in_dim() && self.out_dim() == other.out_dim()
    }
}

pub fn affine_forward(params: &LayerParams, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != params.in_dim() {
        return Err(Error::dims("affine input", params.in_dim(), input.len()));
    }
    Ok((0..params.out_dim())
        .map(|o| {
            let w = params.weight.row(o);
            w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + params.bias[o]
        })
        .collect())
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Logistic function evaluated on the branch that cannot overflow.
pub fn sigmoid_stable(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate state of a batched forward pass.
///
/// `activations[l]` is the input to layer `l` (so `activations[0]` is the
/// network input) and `pre_activations[l]` is that layer's affine output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<DenseMatrix>,
    pub pre_activations: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations.first().map_or(0, DenseMatrix::rows)
    }
}

pub fn check_chain(layers: &[LayerParams]) -> Result<()> {
    for pair in layers.windows(2) {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(Error::dims(
                "layer chain",
                pair[0].out_dim(),
                pair[1].in_dim(),
            ));
        }
    }
    Ok(())
}

fn layer_forward_batch(layer: &LayerParams, input: &DenseMatrix) -> DenseMatrix {
    let n = input.rows();
    let mut out = DenseMatrix::zeros(n, layer.out_dim());
    gemm(
        n,
        layer.in_dim(),
        layer.out_dim(),
        Operand::plain(input),
        Operand::transposed(&layer.weight),
        &mut out,
    );
    for r in 0..n {
        for (o, b) in out.row_mut(r).iter_mut().zip(&layer.bias) {
            *o += b;
        }
    }
    out
}

/// Forward pass over a batch, one instance per row.
pub fn mlp_forward_batch(
    layers: &[LayerParams],
    input: &DenseMatrix,
) -> Result<(DenseMatrix, ForwardCache)> {
    check_chain(layers)?;
    if let Some(first) = layers.first() {
        if input.cols() != first.in_dim() {
            return Err(Error::dims("network input", first.in_dim(), input.cols()));
        }
    }
    let mut activations = Vec::with_capacity(layers.len());
    let mut pre_activations = Vec::with_capacity(layers.len());
    let mut current = input.clone();
    for (l, layer) in layers.iter().enumerate() {
        let z = layer_forward_batch(layer, &current);
        let next = if l + 1 < layers.len() {
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            a
        } else {
            z.clone()
        };
        activations.push(std::mem::replace(&mut current, next));
        pre_activations.push(z);
    }
    Ok((
        current,
        ForwardCache {
            activations,
            pre_activations,
        },
    ))
}

/// Backward pass over a batch. Parameter gradients are summed over rows.
pub fn mlp_backward_batch(
    layers: &[LayerParams],
    cache: &ForwardCache,
    output_grad: &DenseMatrix,
) -> Result<(Vec<LayerParams>, DenseMatrix)> {
    if cache.activations.len() != layers.len() || cache.pre_activations.len() != layers.len() {
        return Err(Error::dims(
            "forward cache layers",
            layers.len(),
            cache.activations.len(),
        ));
    }
    let Some(last) = layers.last() else {
        return Ok((Vec::new(), output_grad.clone()));
    };
    let n = cache.batch_size();
    if output_grad.rows() != n {
        return Err(Error::dims("output gradient rows", n, output_grad.rows()));
    }
    if output_grad.cols() != last.out_dim() {
        return Err(Error::dims(
            "output gradient cols",
            last.out_dim(),
            output_grad.cols(),
        ));
    }

    let mut grads: Vec<LayerParams> = Vec::with_capacity(layers.len());
    let mut delta = output_grad.clone();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input = &cache.activations[l];
        if l + 1 < layers.len() {
            let z = &cache.pre_activations[l];
            for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let mut weight_grad = DenseMatrix::zeros(layer.out_dim(), layer.in_dim());
        gemm(
            layer.out_dim(),
            n,
            layer.in_dim(),
            Operand::transposed(&delta),
            Operand::plain(input),
            &mut weight_grad,
        );
        let mut bias_grad = vec![0.0; layer.out_dim()];
        for r in 0..n {
            for (b, d) in bias_grad.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        let mut input_grad = DenseMatrix::zeros(n, layer.in_dim());
        gemm(
            n,
            layer.out_dim(),
            layer.in_dim(),
            Operand::plain(&delta),
            Operand::plain(&layer.weight),
            &mut input_grad,
        );
        grads.push(LayerParams {
            weight: weight_grad,
            bias: bias_grad,
        });
        delta = input_grad;
    }
    grads.reverse();
    Ok((grads, delta))
}

pub fn mlp_forward(layers: &[LayerParams], input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let x = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
    let (out, cache) = mlp_forward_batch(layers, &x)?;
    Ok((out.into_vec(), cache))
}

pub fn mlp_backward(
    layers: &[LayerParams],
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<(Vec<LayerParams>, Vec<f64>)> {
    let g = DenseMatrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
    let (grads, input_grad) = mlp_backward_batch(layers, cache, &g)?;
    Ok((grads, input_grad.into_vec()))
}

/// Central-difference gradient of `loss` at `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = params.to_vec();
    (0..params.len())
        .map(|i| {
            point[i] = params[i] + step;
            let plus = loss(&point);
            point[i] = params[i] - step;
            let minus = loss(&point);
            point[i] = params[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn flatten_layers(layers: &[LayerParams]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.values().copied()).collect()
}

/// Rebuilds layers shaped like `template` from a flat parameter vector.
pub fn unflatten_layers(template: &[LayerParams], flat: &[f64]) -> Result<Vec<LayerParams>> {
    let total: usize = template.iter().map(LayerParams::num_params).sum();
    if flat.len() != total {
        return Err(Error::dims("flat parameter vector", total, flat.len()));
    }
    let mut out = template.to_vec();
    let mut it = flat.iter();
    for layer in &mut out {
        for (dst, src) in layer.values_mut().zip(&mut it) {
            *dst = *src;
        }
    }
    Ok(out)
}

/// Glorot-uniform weights and zero biases for consecutive `layer_dims`.
pub fn init_params(layer_dims: &[usize], rng_seed: u64) -> Result<Vec<LayerParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    init_params_with_rng(layer_dims, &mut rng)
}

pub fn init_params_with_rng<R: Rng + ?Sized>(
    layer_dims: &[usize],
    rng: &mut R,
) -> Result<Vec<LayerParams>> {
    if layer_dims.len() < 2 {
        return Err(Error::EmptyInput(
            "layer dimensions (need input and output)",
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "layer dimensions must be positive".into(),
        ));
    }
    Ok(layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            LayerParams {
                weight: DenseMatrix {
                    rows: fan_out,
                    cols: fan_in,
                    data,
                },
                bias: vec![0.0; fan_out],
            }
        })
        .collect())
}
