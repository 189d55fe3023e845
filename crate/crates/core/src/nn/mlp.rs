//! Dense feedforward networks with `tanh` hidden layers and a linear output.
//!
//! All parameters live in one flat [`ParamVector`]. Layer `l` occupies a
//! contiguous block: the `(out, in)` weight matrix in row-major order followed
//! by the `out` biases. Weight and bias views are borrowed straight out of that
//! buffer, so flattening is free and optimizers update the network in place.

use std::ops::{Deref, DerefMut};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Flat parameter (or gradient) buffer of a network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Orthogonal weights scaled by `hidden_gain` on hidden layers and
    /// `output_gain` on the final layer; zero biases.
    Orthogonal { hidden_gain: f64, output_gain: f64 },
}

impl Init {
    pub const POLICY: Init = Init::Orthogonal {
        hidden_gain: std::f64::consts::SQRT_2,
        output_gain: 0.01,
    };
    pub const CRITIC: Init = Init::Orthogonal {
        hidden_gain: std::f64::consts::SQRT_2,
        output_gain: 1.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerSlot {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Multilayer perceptron: `tanh` on every hidden layer, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    slots: Vec<LayerSlot>,
    params: ParamVector,
}

/// Layer outputs recorded by [`Mlp::forward_cached`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("cache holds the input").view()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], init: Init, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if let Init::Orthogonal {
            hidden_gain,
            output_gain,
        } = init
        {
            let last = net.slots.len() - 1;
            for (l, slot) in net.slots.clone().into_iter().enumerate() {
                let gain = if l == last { output_gain } else { hidden_gain };
                let w = orthogonal(slot.outputs, slot.inputs, gain, rng);
                net.params[slot.weight_offset..slot.weight_offset + w.len()]
                    .copy_from_slice(&w);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output sizes"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut slots = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for pair in sizes.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            slots.push(LayerSlot {
                inputs,
                outputs,
                weight_offset: offset,
                bias_offset: offset + inputs * outputs,
            });
            offset += inputs * outputs + outputs;
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            slots,
            params: ParamVector::zeros(offset),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Dimension {
                context: "Mlp::set_params",
                expected: self.params.len(),
                got: values.len(),
            });
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    fn weight(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        let w = &self.params[slot.weight_offset..slot.bias_offset];
        ArrayView2::from_shape((slot.outputs, slot.inputs), w).expect("layout is consistent")
    }

    fn bias(&self, slot: &LayerSlot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[slot.bias_offset..slot.bias_offset + slot.outputs])
    }

    fn check_batch(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "Mlp input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn layer(&self, slot: &LayerSlot, input: &ArrayView2<'_, f64>, hidden: bool) -> Array2<f64> {
        let mut out = Array2::zeros((input.nrows(), slot.outputs));
        out += &self.bias(slot);
        general_mat_mul(1.0, input, &self.weight(slot).t(), 1.0, &mut out);
        if hidden {
            out.mapv_inplace(f64::tanh);
        }
        out
    }

    /// Evaluates one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    /// Evaluates a batch of inputs, one per row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        let last = self.slots.len() - 1;
        let mut current = self.layer(&self.slots[0], &x, last != 0);
        for (l, slot) in self.slots.iter().enumerate().skip(1) {
            current = self.layer(slot, &current.view(), l != last);
        }
        Ok(current)
    }

    pub fn forward_cached(&self, x: Array2<f64>) -> Result<ForwardCache> {
        self.check_batch(&x.view())?;
        let last = self.slots.len() - 1;
        let mut activations = Vec::with_capacity(self.slots.len() + 1);
        activations.push(x);
        for (l, slot) in self.slots.iter().enumerate() {
            let next = self.layer(slot, &activations[l].view(), l != last);
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Accumulates `d(sum_rows upstream . output) / d(params)` into `grad`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::Dimension {
                context: "Mlp gradient buffer",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        if upstream.dim() != cache.output().dim() {
            return Err(Error::Dimension {
                context: "Mlp upstream",
                expected: self.output_dim(),
                got: upstream.ncols(),
            });
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.slots.len()).rev() {
            let slot = self.slots[l];
            let input = &cache.activations[l];
            {
                let (w_grad, rest) =
                    grad[slot.weight_offset..slot.bias_offset + slot.outputs].split_at_mut(slot.inputs * slot.outputs);
                let mut w_grad =
                    ArrayViewMut2::from_shape((slot.outputs, slot.inputs), w_grad).expect("layout is consistent");
                general_mat_mul(1.0, &delta.t(), input, 1.0, &mut w_grad);
                for (g, d) in rest.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = delta.dot(&self.weight(&slot));
                prev.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                delta = prev;
            }
        }
        Ok(())
    }

    /// Gradient of `upstream . forward(x)` with respect to the parameters.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<ParamVector> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "Mlp upstream",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        let cache = self.forward_cached(input)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let mut grad = ParamVector::zeros(self.num_params());
        self.backward_batch(&cache, up, &mut grad)?;
        Ok(grad)
    }
}

/// Row-major `(rows, cols)` matrix with orthonormal rows or columns, times `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // Columns of a `long x short` Gaussian matrix, orthonormalized.
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Array1<f64> = (0..long).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for q in &basis {
            let proj = q.dot(&v);
            v.scaled_add(-proj, q);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, q) in basis.iter().enumerate() {
        for (i, &value) in q.iter().enumerate() {
            // rows >= cols: column j of the result; otherwise row j.
            let idx = if rows >= cols { i * cols + j } else { j * cols + i };
            out[idx] = gain * value;
        }
    }
    out
}
