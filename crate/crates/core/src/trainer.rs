//! Training loop and the four ablation variants.
//!
//! | variant       | pair term | attribute term | uses SGS |
//! |---------------|-----------|----------------|----------|
//! | `metric_only` | BDL       | none           | no       |
//! | `attr_only`   | none      | BCE            | no       |
//! | `multitask`   | BDL       | λ·BCE          | no       |
//! | `sgml`        | SBDL      | λ·BCE          | yes      |

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{feature_matrix, Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::loss::{batch_pair_loss, bce, LossParams, PairLossKind, PairSample, Polarity};
use crate::network::{
    adam_step, backward, forward, init_params, AdamState, Checkpoint, NetworkParams, NetworkShape,
};
use crate::rng::{derive, SeededRng, RNG_ALGORITHM};
use crate::sampling::{
    batch_wise_steps, sample_batch_wise, sample_image_wise, DatasetIndex, ImageWiseEpoch,
    MiniBatch, PairList,
};
use crate::similarity::{clamp_prob, cosine_with_grad, nudge_zero_norm};

/// Resampling attempts allowed for a batch without positives or negatives.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MetricOnly,
    AttrOnly,
    Multitask,
    Sgml,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::MetricOnly,
        Variant::AttrOnly,
        Variant::Multitask,
        Variant::Sgml,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MetricOnly => "metric_only",
            Variant::AttrOnly => "attr_only",
            Variant::Multitask => "multitask",
            Variant::Sgml => "sgml",
        }
    }

    fn pair_kind(self) -> Option<PairLossKind> {
        match self {
            Variant::MetricOnly | Variant::Multitask => Some(PairLossKind::Binomial),
            Variant::Sgml => Some(PairLossKind::SoftBinomial),
            Variant::AttrOnly => None,
        }
    }

    /// Weight of the mean BCE term in the total loss.
    fn attr_weight(self, loss: &LossParams) -> f64 {
        match self {
            Variant::MetricOnly => 0.0,
            Variant::AttrOnly => 1.0,
            Variant::Multitask | Variant::Sgml => loss.lambda,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    ImageWise {
        n_anchors: usize,
    },
    BatchWise {
        n_classes: usize,
        m_per_class: usize,
    },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::BatchWise {
            n_classes: 41,
            m_per_class: 4,
        }
    }
}

/// Where the attribute vectors fed to the SGS mapping come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SgsSource {
    /// The attribute head's current predictions.
    #[default]
    Predicted,
    /// The records' annotated attributes.
    GroundTruth,
    /// A constant value for every pair.
    Fixed(f64),
}

impl FromStr for SgsSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(SgsSource::Predicted),
            "truth" | "ground_truth" | "ground-truth" => Ok(SgsSource::GroundTruth),
            other => other
                .strip_prefix("fixed:")
                .and_then(|v| v.parse().ok())
                .map(SgsSource::Fixed)
                .ok_or_else(|| Error::config(format!("unknown SGS source {other:?}"))),
        }
    }
}

/// Hidden layer widths; the input and attribute widths come from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub trunk_dims: Vec<usize>,
    pub fc_dim: usize,
    pub emb_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            trunk_dims: vec![256, 2048],
            fc_dim: 1024,
            emb_dim: 512,
        }
    }
}

impl ModelDims {
    pub fn shape_for(&self, input_dim: usize, attr_dim: usize) -> NetworkShape {
        NetworkShape {
            input_dim,
            trunk_dims: self.trunk_dims.clone(),
            fc_dim: self.fc_dim,
            emb_dim: self.emb_dim,
            attr_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub sampling: Sampling,
    pub loss: LossParams,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many optimization steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub sgs_source: SgsSource,
    /// Backpropagate the SBDL gradient through `g` into the attribute head.
    pub sgs_backprop: bool,
    pub model: ModelDims,
    /// Split used for training; datasets without splits train on every record.
    pub train_split: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Sgml,
            sampling: Sampling::default(),
            loss: LossParams::default(),
            lr: 1e-4,
            epochs: 30,
            max_steps: None,
            seed: 0,
            sgs_source: SgsSource::Predicted,
            sgs_backprop: false,
            model: ModelDims::default(),
            train_split: "train".into(),
        }
    }
}

impl TrainConfig {
    /// Loss preset tuned for fine-grained bird species retrieval.
    pub fn cub_preset() -> Self {
        Self {
            loss: LossParams {
                alpha: 3.0,
                beta: 0.1,
                ..LossParams::default()
            },
            lr: 4e-6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be a positive finite number"));
        }
        match self.sampling {
            Sampling::ImageWise { n_anchors: 0 } => {
                return Err(Error::config("n_anchors must be >= 1"))
            }
            Sampling::BatchWise {
                n_classes,
                m_per_class,
            } if n_classes < 2 || m_per_class == 0 => {
                return Err(Error::config(
                    "batch-wise sampling needs n_classes >= 2 and m_per_class >= 1",
                ))
            }
            _ => {}
        }
        if let SgsSource::Fixed(g) = self.sgs_source {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::config("fixed SGS value must be in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form of the configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

/// One optimization step of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub metric_loss: f64,
    pub attribute_loss: f64,
    pub total_loss: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub steps: Vec<StepRecord>,
    /// Anchors skipped by the image-wise sampler (single-record classes).
    pub skipped_anchors: usize,
    /// Batches redrawn because they had no positive or no negative pair.
    pub resampled_batches: usize,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str =
        "step,epoch,metric_loss,attribute_loss,total_loss,n_positive,n_negative";

    /// CSV with full-precision (round-trip) reals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.steps {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?},{},{}\n",
                r.step,
                r.epoch,
                r.metric_loss,
                r.attribute_loss,
                r.total_loss,
                r.n_positive,
                r.n_negative
            ));
        }
        out
    }
}

/// Embedding cosine `s` and SGS `g` for every pair, positives first.
pub fn build_pair_samples(
    embeddings: ArrayView2<'_, f64>,
    attributes: ArrayView2<'_, f64>,
    pairs: &PairList,
) -> Result<Vec<PairSample>> {
    Ok(pair_terms(embeddings, Some(attributes), pairs, false)?
        .into_iter()
        .map(|t| t.sample)
        .collect())
}

struct PairTerm {
    sample: PairSample,
    i: usize,
    j: usize,
    ds_di: Vec<f64>,
    ds_dj: Vec<f64>,
    /// `(∂g/∂p_i, ∂g/∂p_j)` when requested.
    dg: Option<(Vec<f64>, Vec<f64>)>,
}

fn nudged_row(m: ArrayView2<'_, f64>, i: usize) -> Vec<f64> {
    let mut row = m.row(i).to_vec();
    nudge_zero_norm(&mut row);
    row
}

fn pair_terms(
    embeddings: ArrayView2<'_, f64>,
    attributes: Option<ArrayView2<'_, f64>>,
    pairs: &PairList,
    want_dg: bool,
) -> Result<Vec<PairTerm>> {
    let rows = embeddings.nrows();
    let emb: Vec<Vec<f64>> = (0..rows).map(|i| nudged_row(embeddings, i)).collect();
    let attrs: Option<Vec<Vec<f64>>> =
        attributes.map(|a| (0..a.nrows()).map(|i| a.row(i).to_vec()).collect());
    let tagged = pairs
        .positives
        .iter()
        .map(|&p| (p, Polarity::Positive))
        .chain(pairs.negatives.iter().map(|&p| (p, Polarity::Negative)));
    let mut out = Vec::with_capacity(pairs.len());
    for ((i, j), polarity) in tagged {
        if i >= rows || j >= rows {
            return Err(Error::domain(format!(
                "pair ({i}, {j}) out of range for {rows} rows"
            )));
        }
        let (s, ds_di, ds_dj) = cosine_with_grad(&emb[i], &emb[j])?;
        let (g, dg) = match &attrs {
            Some(a) => {
                let (g, dgi, dgj) = cosine_with_grad(&a[i], &a[j])?;
                (g.clamp(0.0, 1.0), want_dg.then_some((dgi, dgj)))
            }
            None => (0.0, None),
        };
        out.push(PairTerm {
            sample: PairSample {
                s: s.clamp(-1.0, 1.0),
                g,
                polarity,
            },
            i,
            j,
            ds_di,
            ds_dj,
            dg,
        });
    }
    Ok(out)
}

/// Inputs of one optimization step.
#[derive(Debug, Clone)]
pub struct BatchData {
    pub inputs: Array2<f64>,
    /// Annotated attributes, row-aligned with `inputs`.
    pub labels: Vec<Vec<u8>>,
    pub pairs: PairList,
}

impl BatchData {
    pub fn gather(features: &Array2<f64>, records: &[&ImageRecord], batch: &MiniBatch) -> Self {
        Self {
            inputs: features.select(Axis(0), &batch.records),
            labels: batch
                .records
                .iter()
                .map(|&r| records[r].attributes.clone())
                .collect(),
            pairs: batch.pairs.clone(),
        }
    }
}

/// Loss settings of a batch objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub variant: Variant,
    pub loss: LossParams,
    pub sgs_source: SgsSource,
    pub sgs_backprop: bool,
}

impl From<&TrainConfig> for ObjectiveSpec {
    fn from(c: &TrainConfig) -> Self {
        Self {
            variant: c.variant,
            loss: c.loss,
            sgs_source: c.sgs_source,
            sgs_backprop: c.sgs_backprop,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub metric: f64,
    /// Mean per-sample BCE, before weighting.
    pub attribute: f64,
    pub total: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// The SGS value used for each pair, positives first.
    pub g: Vec<f64>,
}

/// Loss of one batch under `spec` and, when `with_grads`, its gradient with
/// respect to every parameter.
///
/// `frozen_g` replaces the SGS values (one per pair, positives first) and
/// removes their dependence on the parameters.
pub fn batch_objective(
    params: &NetworkParams,
    spec: &ObjectiveSpec,
    batch: &BatchData,
    frozen_g: Option<&[f64]>,
    with_grads: bool,
) -> Result<(BatchEvaluation, Option<NetworkParams>)> {
    let (out, cache) = forward(params, batch.inputs.view())?;
    let rows = batch.inputs.nrows();
    let mut d_emb = Array2::<f64>::zeros(out.embeddings.raw_dim());
    let mut d_probs = Array2::<f64>::zeros(out.attr_probs.raw_dim());

    let (mut metric, mut n_positive, mut n_negative, mut g_used) = (0.0, 0, 0, Vec::new());
    if let Some(kind) = spec.variant.pair_kind() {
        let uses_sgs = kind == PairLossKind::SoftBinomial && frozen_g.is_none();
        let truth;
        let attr_view = match (uses_sgs, spec.sgs_source) {
            (true, SgsSource::Predicted) => Some(out.attr_probs.view()),
            (true, SgsSource::GroundTruth) => {
                truth = Array2::from_shape_fn((rows, out.attr_probs.ncols()), |(i, k)| {
                    clamp_prob(f64::from(batch.labels[i][k]))
                });
                Some(truth.view())
            }
            _ => None,
        };
        let want_dg = spec.sgs_backprop && spec.sgs_source == SgsSource::Predicted;
        let mut terms = pair_terms(out.embeddings.view(), attr_view, &batch.pairs, want_dg)?;
        match (frozen_g, spec.sgs_source) {
            (Some(g), _) => {
                if g.len() != terms.len() {
                    return Err(Error::Internal("frozen SGS length mismatch".into()));
                }
                for (t, &v) in terms.iter_mut().zip(g) {
                    t.sample.g = v;
                }
            }
            (None, SgsSource::Fixed(v)) => terms.iter_mut().for_each(|t| t.sample.g = v),
            _ => {}
        }
        let samples: Vec<PairSample> = terms.iter().map(|t| t.sample).collect();
        let bl = batch_pair_loss(kind, &samples, &spec.loss)?;
        metric = bl.value;
        n_positive = bl.n_positive;
        n_negative = bl.n_negative;
        g_used = samples.iter().map(|s| s.g).collect();
        if with_grads {
            for (t, &(dl_ds, dl_dg)) in terms.iter().zip(&bl.grads) {
                d_emb
                    .row_mut(t.i)
                    .scaled_add(dl_ds, &ndarray::aview1(&t.ds_di));
                d_emb
                    .row_mut(t.j)
                    .scaled_add(dl_ds, &ndarray::aview1(&t.ds_dj));
                if let Some((dgi, dgj)) = &t.dg {
                    d_probs
                        .row_mut(t.i)
                        .scaled_add(dl_dg, &ndarray::aview1(dgi));
                    d_probs
                        .row_mut(t.j)
                        .scaled_add(dl_dg, &ndarray::aview1(dgj));
                }
            }
        }
    }

    let weight = spec.variant.attr_weight(&spec.loss);
    let mut attribute = 0.0;
    if spec.variant != Variant::MetricOnly {
        if batch.labels.len() != rows {
            return Err(Error::Internal(
                "labels are not row-aligned with inputs".into(),
            ));
        }
        let mut values = Vec::with_capacity(rows);
        let scale = weight / rows as f64;
        for (i, labels) in batch.labels.iter().enumerate() {
            let probs = out.attr_probs.row(i).to_vec();
            let l = bce(&probs, labels)?;
            values.push(l.value);
            if with_grads {
                d_probs
                    .row_mut(i)
                    .scaled_add(scale, &ndarray::aview1(&l.grads));
            }
        }
        values.sort_by(f64::total_cmp);
        attribute = values.iter().sum::<f64>() / rows as f64;
    }
    let total = metric + weight * attribute;
    let eval = BatchEvaluation {
        metric,
        attribute,
        total,
        n_positive,
        n_negative,
        g: g_used,
    };
    let grads = if with_grads {
        Some(backward(params, &cache, d_emb.view(), d_probs.view())?)
    } else {
        None
    };
    Ok((eval, grads))
}

enum Sampler {
    Image {
        epoch: Option<ImageWiseEpoch>,
        n_anchors: usize,
    },
    Batch {
        n_classes: usize,
        m_per_class: usize,
    },
    /// Uniform record subsets, for attribute-only training on a single class.
    Uniform { size: usize },
}

impl Sampler {
    fn steps_per_epoch(&self, index: &DatasetIndex) -> usize {
        match self {
            Sampler::Image { n_anchors, .. } => index.len().div_ceil(*n_anchors),
            Sampler::Batch {
                n_classes,
                m_per_class,
            } => batch_wise_steps(index.len(), *n_classes, *m_per_class),
            Sampler::Uniform { size } => index.len().div_ceil(*size).max(1),
        }
    }

    fn start_epoch(&mut self, index: &DatasetIndex, rng: &mut SeededRng) -> Result<()> {
        if let Sampler::Image { epoch, n_anchors } = self {
            *epoch = Some(ImageWiseEpoch::new(index, *n_anchors, rng)?);
        }
        Ok(())
    }

    /// The next scheduled batch; `fresh` draws an unscheduled replacement.
    fn draw(
        &mut self,
        index: &DatasetIndex,
        rng: &mut SeededRng,
        fresh: bool,
        history: &mut TrainingHistory,
    ) -> Result<MiniBatch> {
        match self {
            Sampler::Image { epoch, n_anchors } => {
                let scheduled = match (fresh, epoch.as_mut()) {
                    (false, Some(e)) => {
                        let before = e.skipped;
                        let b = e.next_batch(index, rng)?;
                        history.skipped_anchors += e.skipped - before;
                        b
                    }
                    _ => None,
                };
                let batch = match scheduled {
                    Some(b) => b,
                    None => {
                        let b = sample_image_wise(index, *n_anchors, rng)?;
                        history.skipped_anchors += b.skipped_anchors;
                        b
                    }
                };
                Ok(MiniBatch::from_triplets(&batch))
            }
            Sampler::Batch {
                n_classes,
                m_per_class,
            } => {
                let records = sample_batch_wise(index, *n_classes, *m_per_class, rng)?;
                Ok(MiniBatch::from_records(index, records))
            }
            Sampler::Uniform { size } => {
                let records = index::sample(rng, index.len(), (*size).min(index.len())).into_vec();
                Ok(MiniBatch {
                    records,
                    pairs: PairList::default(),
                })
            }
        }
    }
}

fn training_records<'a>(
    config: &TrainConfig,
    dataset: &'a Dataset,
) -> Result<Vec<&'a ImageRecord>> {
    if dataset.splits.is_empty() {
        Ok(dataset.records.iter().collect())
    } else {
        dataset.split_records(&config.train_split)
    }
}

fn checkpoint(
    params: &NetworkParams,
    opt: &AdamState,
    config_json: &serde_json::Value,
    hash: &str,
) -> Checkpoint {
    Checkpoint::new(
        params.clone(),
        opt.clone(),
        config_json.clone(),
        hash.to_string(),
    )
}

fn abort(step: u64, reason: String, last_good: Checkpoint) -> Error {
    Error::TrainingAborted {
        step,
        reason,
        last_good: Box::new(last_good),
    }
}

/// Trains a fresh network on the training split of `dataset`.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<(Checkpoint, TrainingHistory)> {
    config.validate()?;
    let records = training_records(config, dataset)?;
    if records.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let labels: Vec<i64> = records.iter().map(|r| r.class_id).collect();
    let index = DatasetIndex::from_labels(&labels);
    let needs_pairs = config.variant != Variant::AttrOnly;
    if needs_pairs && index.n_classes() < 2 {
        return Err(Error::config(format!(
            "variant {} needs at least 2 training classes, found {}",
            config.variant,
            index.n_classes()
        )));
    }
    if dataset.n_attributes == 0 && config.variant != Variant::MetricOnly {
        return Err(Error::config("variant needs attribute labels but K = 0"));
    }
    let features = feature_matrix(&records);
    let shape = config
        .model
        .shape_for(dataset.feature_dim, dataset.n_attributes);
    shape.validate()?;

    let mut params = init_params(&shape, &mut derive(config.seed, "init"))?;
    let mut opt = AdamState::new(&params, config.lr);
    let mut rng = derive(config.seed, "sampler");
    let spec = ObjectiveSpec::from(config);
    let mut config_json = serde_json::to_value(config)?;
    config_json["rng"] = serde_json::Value::from(RNG_ALGORITHM);
    let hash = config.hash()?;

    let mut sampler = match config.sampling {
        _ if !needs_pairs && index.n_classes() < 2 => Sampler::Uniform {
            size: match config.sampling {
                Sampling::ImageWise { n_anchors } => 3 * n_anchors,
                Sampling::BatchWise {
                    n_classes,
                    m_per_class,
                } => n_classes * m_per_class,
            },
        },
        Sampling::ImageWise { n_anchors } => Sampler::Image {
            epoch: None,
            n_anchors,
        },
        Sampling::BatchWise {
            n_classes,
            m_per_class,
        } => Sampler::Batch {
            n_classes,
            m_per_class,
        },
    };
    let steps_per_epoch = sampler.steps_per_epoch(&index);
    let mut history = TrainingHistory::default();
    let mut step: u64 = 0;
    'epochs: for epoch in 0..config.epochs {
        sampler.start_epoch(&index, &mut rng)?;
        for _ in 0..steps_per_epoch {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let mut attempt = 0;
            let mut mb = sampler.draw(&index, &mut rng, false, &mut history)?;
            while needs_pairs && (mb.pairs.positives.is_empty() || mb.pairs.negatives.is_empty()) {
                attempt += 1;
                if attempt > MAX_RESAMPLES {
                    return Err(abort(
                        step,
                        format!("no usable batch after {MAX_RESAMPLES} resamples"),
                        checkpoint(&params, &opt, &config_json, &hash),
                    ));
                }
                history.resampled_batches += 1;
                mb = sampler.draw(&index, &mut rng, true, &mut history)?;
            }
            let batch = BatchData::gather(&features, &records, &mb);
            let (eval, grads) = match batch_objective(&params, &spec, &batch, None, true) {
                Ok((e, Some(g))) => (e, g),
                Ok((_, None)) => unreachable!("gradients requested"),
                Err(e @ (Error::Domain(_) | Error::NonFinite(_))) => {
                    return Err(abort(
                        step,
                        e.to_string(),
                        checkpoint(&params, &opt, &config_json, &hash),
                    ))
                }
                Err(e) => return Err(e),
            };
            if !eval.total.is_finite() {
                return Err(abort(
                    step,
                    format!("non-finite loss {}", eval.total),
                    checkpoint(&params, &opt, &config_json, &hash),
                ));
            }
            if let Err(e) = adam_step(&mut params, &grads, &mut opt) {
                return Err(abort(
                    step,
                    e.to_string(),
                    checkpoint(&params, &opt, &config_json, &hash),
                ));
            }
            step += 1;
            log::debug!("step {step}: total {:.6}", eval.total);
            history.steps.push(StepRecord {
                step,
                epoch,
                metric_loss: eval.metric,
                attribute_loss: eval.attribute,
                total_loss: eval.total,
                n_positive: eval.n_positive,
                n_negative: eval.n_negative,
            });
        }
    }
    if history.skipped_anchors > 0 {
        log::warn!(
            "{} anchors skipped (single-record classes)",
            history.skipped_anchors
        );
    }
    Ok((checkpoint(&params, &opt, &config_json, &hash), history))
}
