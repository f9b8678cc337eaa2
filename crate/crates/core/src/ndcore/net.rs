//! Dense feed-forward networks over flat parameter vectors.
//!
//! Parameters for layer `l` are laid out as a row-major weight matrix of shape
//! `(fan_out, fan_in)` followed by `fan_out` biases. Hidden layers use the
//! rectifier, the output layer is the identity.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{first_non_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    layer_widths: Vec<usize>,
}

impl NetSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a network needs at least 2 layers, got {}",
                layer_widths.len()
            )));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive: {layer_widths:?}"
            )));
        }
        Ok(Self { layer_widths })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of affine maps (one less than the number of layers).
    pub fn affine_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn activation(&self, affine: usize) -> Activation {
        if affine + 1 == self.affine_count() {
            Activation::Identity
        } else {
            Activation::Relu
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Offset of the first weight of affine map `affine`.
    pub fn layer_offset(&self, affine: usize) -> usize {
        self.layer_widths[..affine + 1]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn weight_index(&self, affine: usize, row: usize, col: usize) -> usize {
        let fan_in = self.layer_widths[affine];
        self.layer_offset(affine) + row * fan_in + col
    }

    pub fn bias_index(&self, affine: usize, row: usize) -> usize {
        let fan_in = self.layer_widths[affine];
        let fan_out = self.layer_widths[affine + 1];
        self.layer_offset(affine) + fan_in * fan_out + row
    }

    fn views<'a>(&self, params: &'a [f64], affine: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let fan_in = self.layer_widths[affine];
        let fan_out = self.layer_widths[affine + 1];
        let off = self.layer_offset(affine);
        let w = ArrayView2::from_shape((fan_out, fan_in), &params[off..off + fan_in * fan_out])
            .expect("layout matches spec");
        let b = &params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
        (w, b)
    }
}

/// Flat storage for every weight and bias of a [`NetSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn from_vec(spec: &NetSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has {} entries, spec needs {}",
                values.len(),
                spec.param_count()
            )));
        }
        if let Some(i) = first_non_finite(&values) {
            return Err(Error::numerical("parameter vector", Some(i)));
        }
        Ok(Self { values })
    }

    /// Symmetric fan-scaled uniform initialization, zero biases.
    pub fn init_uniform<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut values = vec![0.0; spec.param_count()];
        for affine in 0..spec.affine_count() {
            let fan_in = spec.layer_widths[affine];
            let fan_out = spec.layer_widths[affine + 1];
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = spec.layer_offset(affine);
            for v in &mut values[off..off + fan_in * fan_out] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Layer activations recorded by [`forward_batch`] for use in [`backward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    activations: Vec<Array2<f64>>,
}

impl ForwardTape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().unwrap()
    }
}

fn check_params(spec: &NetSpec, params: &[f64]) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has {} entries, spec needs {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Evaluates the network on every row of `inputs`.
pub fn forward_batch(spec: &NetSpec, params: &[f64], inputs: Array2<f64>) -> Result<ForwardTape> {
    check_params(spec, params)?;
    if inputs.ncols() != spec.input_width() {
        return Err(Error::InvalidArgument(format!(
            "input width {} does not match network input {}",
            inputs.ncols(),
            spec.input_width()
        )));
    }
    let mut activations = Vec::with_capacity(spec.layer_widths.len());
    activations.push(inputs);
    for affine in 0..spec.affine_count() {
        let (w, b) = spec.views(params, affine);
        let prev = activations.last().unwrap();
        let mut z = Array2::<f64>::zeros((prev.nrows(), w.nrows()));
        general_mat_mul(1.0, prev, &w.t(), 0.0, &mut z);
        let relu = spec.activation(affine) == Activation::Relu;
        for mut row in z.rows_mut() {
            for (v, &bias) in row.iter_mut().zip(b) {
                *v += bias;
                if relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        activations.push(z);
    }
    Ok(ForwardTape { activations })
}

/// Reverse pass for a recorded forward evaluation.
///
/// Accumulates `d(sum output * output_grad)/d params` into `grad` and returns
/// the gradient with respect to the inputs.
pub fn backward_batch(
    spec: &NetSpec,
    params: &[f64],
    tape: &ForwardTape,
    output_grad: &Array2<f64>,
    grad: &mut [f64],
) -> Result<Array2<f64>> {
    check_params(spec, params)?;
    if grad.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient buffer has {} entries, expected {}",
            grad.len(),
            params.len()
        )));
    }
    if output_grad.dim() != tape.output().dim() {
        return Err(Error::InvalidArgument(format!(
            "output gradient shape {:?} does not match output {:?}",
            output_grad.dim(),
            tape.output().dim()
        )));
    }
    let mut delta = output_grad.clone();
    for affine in (0..spec.affine_count()).rev() {
        if spec.activation(affine) == Activation::Relu {
            let post = &tape.activations[affine + 1];
            delta.zip_mut_with(post, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        let prev = &tape.activations[affine];
        let fan_in = spec.layer_widths[affine];
        let fan_out = spec.layer_widths[affine + 1];
        let off = spec.layer_offset(affine);
        {
            let (gw, gb) = grad[off..off + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).expect("layout");
            general_mat_mul(1.0, &delta.t(), prev, 1.0, &mut gw);
            for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                *g += s;
            }
        }
        let (w, _) = spec.views(params, affine);
        let mut next = Array2::<f64>::zeros((delta.nrows(), fan_in));
        general_mat_mul(1.0, &delta, &w, 0.0, &mut next);
        delta = next;
    }
    Ok(delta)
}

fn single_row(spec: &NetSpec, input: &[f64]) -> Result<Array2<f64>> {
    if input.len() != spec.input_width() {
        return Err(Error::InvalidArgument(format!(
            "input length {} does not match network input {}",
            input.len(),
            spec.input_width()
        )));
    }
    Ok(Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape"))
}

pub fn forward(spec: &NetSpec, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let tape = forward_batch(spec, params, single_row(spec, input)?)?;
    Ok(tape.into_output().into_raw_vec_and_offset().0)
}

/// Gradient of `output . output_gradient` with respect to parameters and input.
pub fn backward(
    spec: &NetSpec,
    params: &[f64],
    input: &[f64],
    output_gradient: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if output_gradient.len() != spec.output_width() {
        return Err(Error::InvalidArgument(format!(
            "output gradient length {} does not match network output {}",
            output_gradient.len(),
            spec.output_width()
        )));
    }
    let tape = forward_batch(spec, params, single_row(spec, input)?)?;
    let og = Array2::from_shape_vec((1, output_gradient.len()), output_gradient.to_vec())
        .expect("row shape");
    let mut grad = vec![0.0; params.len()];
    let input_grad = backward_batch(spec, params, &tape, &og, &mut grad)?;
    Ok((grad, input_grad.into_raw_vec_and_offset().0))
}
