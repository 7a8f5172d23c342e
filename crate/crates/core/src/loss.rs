//! Pair losses (binomial deviance and its attribute-modulated soft variant),
//! the multi-label attribute loss and the combined objective.
//!
//! Every loss returns its value together with closed-form partial derivatives
//! with respect to its scalar inputs, so callers can chain them into the
//! network's backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::clamp_prob;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    /// Scaling (steepness) of the deviance curves.
    pub alpha: f64,
    /// Translation of the deviance curves along the similarity axis.
    pub beta: f64,
    /// Weight of the attribute loss in the combined objective.
    pub lambda: f64,
    /// Cost factor for positive pairs, used by the plain binomial deviance only.
    pub cost_pos: f64,
    /// Cost factor for negative pairs, used by the plain binomial deviance only.
    pub cost_neg: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.5,
            lambda: 1.0,
            cost_pos: 1.0,
            cost_neg: 1.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.beta.is_finite()
            && self.alpha.is_finite()
            && self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.cost_pos > 0.0
            && self.cost_neg > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid loss parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One pair as seen by the metric loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    /// Embedding cosine similarity.
    pub s: f64,
    /// Attribute-space similarity (SGS).
    pub g: f64,
    pub polarity: Polarity,
}

/// A scalar loss and its partials with respect to `s` and `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_ds: f64,
    pub d_dg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLossKind {
    /// Plain binomial deviance; `g` is ignored.
    Binomial,
    /// Binomial deviance with the margin shifted by the pair's SGS value.
    SoftBinomial,
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn debug_check_pair(s: f64, g: f64) {
    debug_assert!(
        (-1.0 - 1e-9..=1.0 + 1e-9).contains(&s),
        "similarity {s} outside [-1, 1]"
    );
    debug_assert!((-1e-9..=1.0 + 1e-9).contains(&g), "sgs {g} outside [0, 1]");
}

/// Binomial deviance `log(1 + exp(−(2y−1)·α·(s−β)·C_y))`.
pub fn bdl(s: f64, polarity: Polarity, params: &LossParams) -> LossValue {
    debug_check_pair(s, 0.0);
    let (z, dz_ds) = match polarity {
        Polarity::Positive => (
            -(params.alpha * (s - params.beta) * params.cost_pos),
            -(params.alpha * params.cost_pos),
        ),
        Polarity::Negative => (
            params.alpha * (s - params.beta) * params.cost_neg,
            params.alpha * params.cost_neg,
        ),
    };
    LossValue {
        value: softplus(z),
        d_ds: sigmoid(z) * dz_ds,
        d_dg: 0.0,
    }
}

/// Positive-pair soft binomial deviance `log(1 + exp(−α·(s + g − β)))`.
pub fn sbdl_positive(s: f64, g: f64, params: &LossParams) -> LossValue {
    debug_check_pair(s, g);
    let z = -(params.alpha * (s + g - params.beta));
    let d = sigmoid(z) * -params.alpha;
    LossValue {
        value: softplus(z),
        d_ds: d,
        d_dg: d,
    }
}

/// Negative-pair soft binomial deviance `log(1 + exp(α·(s − g − β)))`.
pub fn sbdl_negative(s: f64, g: f64, params: &LossParams) -> LossValue {
    debug_check_pair(s, g);
    let z = params.alpha * (s - g - params.beta);
    let d = sigmoid(z) * params.alpha;
    LossValue {
        value: softplus(z),
        d_ds: d,
        d_dg: -d,
    }
}

pub fn pair_loss(kind: PairLossKind, pair: &PairSample, params: &LossParams) -> LossValue {
    match (kind, pair.polarity) {
        (PairLossKind::Binomial, pol) => bdl(pair.s, pol, params),
        (PairLossKind::SoftBinomial, Polarity::Positive) => sbdl_positive(pair.s, pair.g, params),
        (PairLossKind::SoftBinomial, Polarity::Negative) => sbdl_negative(pair.s, pair.g, params),
    }
}

/// Reduced pair loss over a mini-batch, with per-pair gradients in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub positive_mean: f64,
    pub negative_mean: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// `(∂L/∂s_i, ∂L/∂g_i)` for every input pair, already scaled by `1/M` or `1/N`.
    pub grads: Vec<(f64, f64)>,
}

/// Sum that does not depend on the order of `terms`: terms are sorted by value
/// before accumulation.
fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// `(1/M)·Σ positive losses + (1/N)·Σ negative losses`.
pub fn batch_pair_loss(
    kind: PairLossKind,
    pairs: &[PairSample],
    params: &LossParams,
) -> Result<BatchLoss> {
    let m = pairs
        .iter()
        .filter(|p| p.polarity == Polarity::Positive)
        .count();
    let n = pairs.len() - m;
    if m == 0 || n == 0 {
        return Err(Error::DegenerateBatch(format!(
            "{m} positive and {n} negative pairs"
        )));
    }
    let (inv_m, inv_n) = (1.0 / m as f64, 1.0 / n as f64);
    let mut pos = Vec::with_capacity(m);
    let mut neg = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(pairs.len());
    for p in pairs {
        let l = pair_loss(kind, p, params);
        let w = match p.polarity {
            Polarity::Positive => {
                pos.push(l.value);
                inv_m
            }
            Polarity::Negative => {
                neg.push(l.value);
                inv_n
            }
        };
        grads.push((l.d_ds * w, l.d_dg * w));
    }
    let positive_mean = order_free_sum(&mut pos) * inv_m;
    let negative_mean = order_free_sum(&mut neg) * inv_n;
    Ok(BatchLoss {
        value: positive_mean + negative_mean,
        positive_mean,
        negative_mean,
        n_positive: m,
        n_negative: n,
        grads,
    })
}

pub fn sbdl_batch(pairs: &[PairSample], params: &LossParams) -> Result<BatchLoss> {
    batch_pair_loss(PairLossKind::SoftBinomial, pairs, params)
}

pub fn bdl_batch(pairs: &[PairSample], params: &LossParams) -> Result<BatchLoss> {
    batch_pair_loss(PairLossKind::Binomial, pairs, params)
}

/// Attribute loss for one sample with its gradient with respect to each probability.
#[derive(Debug, Clone, PartialEq)]
pub struct AttrLoss {
    pub value: f64,
    pub grads: Vec<f64>,
}

/// Multi-label binary cross entropy, summed over the `K` attributes.
/// Probabilities are clamped to `[1e-7, 1 − 1e-7]` first.
pub fn bce(probs: &[f64], labels: &[u8]) -> Result<AttrLoss> {
    if probs.len() != labels.len() {
        return Err(Error::domain(format!(
            "bce: {} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (&p, &a) in probs.iter().zip(labels) {
        let p = clamp_prob(p);
        match a {
            1 => {
                value -= p.ln();
                grads.push(-1.0 / p);
            }
            0 => {
                value -= (1.0 - p).ln();
                grads.push(1.0 / (1.0 - p));
            }
            other => return Err(Error::domain(format!("bce: label {other} is not binary"))),
        }
    }
    Ok(AttrLoss { value, grads })
}

/// Value and gradients of `L_pairs + λ · mean_i BCE_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub metric: BatchLoss,
    /// Mean per-sample BCE before weighting by λ.
    pub attribute: f64,
    /// Gradients with respect to each attribute term's probabilities, including λ and the mean.
    pub attr_grads: Vec<Vec<f64>>,
}

/// Combined objective with the soft binomial deviance as metric term.
pub fn sgml_objective(
    pairs: &[PairSample],
    attr_terms: &[(Vec<f64>, Vec<u8>)],
    params: &LossParams,
) -> Result<ObjectiveValue> {
    if attr_terms.is_empty() {
        return Err(Error::domain("sgml objective: no attribute terms"));
    }
    let metric = sbdl_batch(pairs, params)?;
    let scale = params.lambda / attr_terms.len() as f64;
    let mut values = Vec::with_capacity(attr_terms.len());
    let mut attr_grads = Vec::with_capacity(attr_terms.len());
    for (p, a) in attr_terms {
        let l = bce(p, a)?;
        values.push(l.value);
        attr_grads.push(l.grads.into_iter().map(|g| g * scale).collect());
    }
    let attribute = values.iter().sum::<f64>() / attr_terms.len() as f64;
    Ok(ObjectiveValue {
        value: metric.value + params.lambda * attribute,
        metric,
        attribute,
        attr_grads,
    })
}
