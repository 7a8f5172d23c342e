//! Dense two-headed network: trunk → shared FC → {embedding head, attribute head}.
//!
//! Trunk and FC layers use ReLU. The embedding head is linear and the
//! attribute head applies a sigmoid followed by a clamp to
//! `[1e-7, 1 − 1e-7]`. Gradients are computed by hand; weights are stored as
//! `[fan_in][fan_out]` so a batch is propagated as `X · W + b`.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::similarity::PROB_EPS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub trunk_dims: Vec<usize>,
    pub fc_dim: usize,
    pub emb_dim: usize,
    pub attr_dim: usize,
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        let all = [self.input_dim, self.fc_dim, self.emb_dim, self.attr_dim];
        if all.iter().chain(&self.trunk_dims).any(|&d| d == 0) {
            return Err(Error::config(format!(
                "network dims must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Width of the trunk output (the input itself when the trunk is empty).
    pub fn trunk_out_dim(&self) -> usize {
        self.trunk_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// `(fan_in, fan_out)` of every layer: trunk layers, FC, embedding head, attribute head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.trunk_dims.len() + 3);
        let mut prev = self.input_dim;
        for &w in &self.trunk_dims {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.fc_dim));
        dims.push((self.fc_dim, self.emb_dim));
        dims.push((self.fc_dim, self.attr_dim));
        dims
    }

    /// `Σ (fan_in · fan_out + fan_out)`.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights and bias of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Gradients for this layer given its input and the gradient at its output.
    fn grads(input: &Array2<f64>, d_out: &Array2<f64>) -> Self {
        Self {
            weight: input.t().dot(d_out),
            bias: d_out.sum_axis(Axis(0)),
        }
    }
}

/// Parameters of every layer; the same layout holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub trunk: Vec<Dense>,
    pub fc: Dense,
    pub emb: Dense,
    pub attr: Dense,
}

impl NetworkParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let dims = shape.layer_dims();
        let n = dims.len();
        let mut layers = dims.iter().map(|&(i, o)| Dense::zeros(i, o));
        let trunk = layers.by_ref().take(n - 3).collect();
        Self {
            trunk,
            fc: layers.next().unwrap(),
            emb: layers.next().unwrap(),
            attr: layers.next().unwrap(),
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input_dim: self.first_fan_in(),
            trunk_dims: self.trunk.iter().map(|d| d.bias.len()).collect(),
            fc_dim: self.fc.bias.len(),
            emb_dim: self.emb.bias.len(),
            attr_dim: self.attr.bias.len(),
        }
    }

    fn first_fan_in(&self) -> usize {
        self.trunk.first().unwrap_or(&self.fc).weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain([&self.fc, &self.emb, &self.attr])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk
            .iter_mut()
            .chain([&mut self.fc, &mut self.emb, &mut self.attr])
    }

    /// Flat views of every weight matrix and bias vector, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|d| {
                [
                    d.weight.as_slice().expect("standard layout"),
                    d.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|d| {
                [
                    d.weight.as_slice_mut().expect("standard layout"),
                    d.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Fan-in/fan-out scaled uniform initialization, `U(−b, b)` with
/// `b = √(6 / (fan_in + fan_out))`; biases start at zero.
pub fn init_params(shape: &NetworkShape, rng: &mut SeededRng) -> Result<NetworkParams> {
    shape.validate()?;
    let mut params = NetworkParams::zeros(shape);
    for layer in params.layers_mut() {
        let (fan_in, fan_out) = layer.weight.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Row-aligned outputs of every stage of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub trunk_out: Array2<f64>,
    pub fc_out: Array2<f64>,
    pub embeddings: Array2<f64>,
    pub attr_probs: Array2<f64>,
}

/// Intermediate values retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    trunk_pre: Vec<Array2<f64>>,
    trunk_act: Vec<Array2<f64>>,
    fc_pre: Array2<f64>,
    fc_act: Array2<f64>,
    /// Sigmoid outputs before clamping.
    attr_sigmoid: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.nrows()
    }

    /// Which side of every non-smooth point each unit sits on: ReLU
    /// pre-activations `> 0`, then whether the attribute clamp is inactive.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.trunk_pre
            .iter()
            .chain(std::iter::once(&self.fc_pre))
            .flat_map(|z| z.iter().map(|&v| v > 0.0))
            .chain(
                self.attr_sigmoid
                    .iter()
                    .map(|&p| (PROB_EPS..=1.0 - PROB_EPS).contains(&p)),
            )
            .collect()
    }

    fn trunk_output(&self) -> &Array2<f64> {
        self.trunk_act.last().unwrap_or(&self.inputs)
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn forward(
    params: &NetworkParams,
    inputs: ArrayView2<'_, f64>,
) -> Result<(ForwardOutput, ForwardCache)> {
    let expected = params.first_fan_in();
    if inputs.ncols() != expected {
        return Err(Error::domain(format!(
            "forward: input width {} but network expects {expected}",
            inputs.ncols()
        )));
    }
    if inputs.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("forward: non-finite input"));
    }
    let inputs = inputs.to_owned();
    let mut trunk_pre = Vec::with_capacity(params.trunk.len());
    let mut trunk_act: Vec<Array2<f64>> = Vec::with_capacity(params.trunk.len());
    for layer in &params.trunk {
        let z = layer.apply(trunk_act.last().unwrap_or(&inputs));
        trunk_act.push(relu(&z));
        trunk_pre.push(z);
    }
    let trunk_out = trunk_act.last().unwrap_or(&inputs);
    let fc_pre = params.fc.apply(trunk_out);
    let fc_act = relu(&fc_pre);
    let embeddings = params.emb.apply(&fc_act);
    let attr_sigmoid = params.attr.apply(&fc_act).mapv(crate::loss::sigmoid);
    let attr_probs = attr_sigmoid.mapv(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS));
    let out = ForwardOutput {
        trunk_out: trunk_out.clone(),
        fc_out: fc_act.clone(),
        embeddings,
        attr_probs,
    };
    let cache = ForwardCache {
        inputs,
        trunk_pre,
        trunk_act,
        fc_pre,
        fc_act,
        attr_sigmoid,
    };
    Ok((out, cache))
}

fn relu_backward(d_act: Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    let mut d = d_act;
    Zip::from(&mut d).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

/// Parameter gradients of a scalar loss given its gradients with respect to
/// the embeddings and the (clamped) attribute probabilities.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    d_emb: ArrayView2<'_, f64>,
    d_probs: ArrayView2<'_, f64>,
) -> Result<NetworkParams> {
    let rows = cache.batch_size();
    if d_emb.dim() != (rows, params.emb.bias.len())
        || d_probs.dim() != (rows, params.attr.bias.len())
        || cache.fc_act.ncols() != params.fc.bias.len()
    {
        return Err(Error::Internal(format!(
            "backward: cache holds {rows} rows, upstream gradients are {:?} and {:?}",
            d_emb.dim(),
            d_probs.dim()
        )));
    }
    // sigmoid then clamp: zero derivative where the clamp is active
    let mut d_logits = d_probs.to_owned();
    Zip::from(&mut d_logits)
        .and(&cache.attr_sigmoid)
        .for_each(|g, &p| {
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                *g *= p * (1.0 - p);
            } else {
                *g = 0.0;
            }
        });
    let d_emb = d_emb.to_owned();
    let attr = Dense::grads(&cache.fc_act, &d_logits);
    let emb = Dense::grads(&cache.fc_act, &d_emb);
    let d_fc_act = d_emb.dot(&params.emb.weight.t()) + d_logits.dot(&params.attr.weight.t());
    let d_fc_pre = relu_backward(d_fc_act, &cache.fc_pre);
    let fc = Dense::grads(cache.trunk_output(), &d_fc_pre);

    let mut trunk = Vec::with_capacity(params.trunk.len());
    let mut d_out = d_fc_pre.dot(&params.fc.weight.t());
    for l in (0..params.trunk.len()).rev() {
        let d_pre = relu_backward(d_out, &cache.trunk_pre[l]);
        let input = if l == 0 {
            &cache.inputs
        } else {
            &cache.trunk_act[l - 1]
        };
        trunk.push(Dense::grads(input, &d_pre));
        if l == 0 {
            break;
        }
        d_out = d_pre.dot(&params.trunk[l].weight.t());
    }
    trunk.reverse();
    Ok(NetworkParams {
        trunk,
        fc,
        emb,
        attr,
    })
}
