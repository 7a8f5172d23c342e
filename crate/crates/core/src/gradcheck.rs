//! Central finite-difference verification of every analytic derivative.
//!
//! The error measure is `|a − n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps
//! near-zero derivatives from turning rounding noise into large ratios.
//! Network parameters whose perturbation moves any unit across a ReLU or
//! clamp boundary are skipped, since the loss is not differentiable there.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{
    bce, bdl, sbdl_batch, sbdl_negative, sbdl_positive, LossParams, PairSample, Polarity,
};
use crate::network::{forward, init_params, NetworkParams, NetworkShape};
use crate::rng::{derive, SeededRng};
use crate::sampling::enumerate_pairs;
use crate::similarity::cosine_with_grad;
use crate::trainer::{batch_objective, BatchData, ObjectiveSpec, SgsSource, Variant};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    /// Derivatives compared.
    pub compared: usize,
    /// Network parameters skipped at a non-differentiable point.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<34} {:>6} {:>9} {:>7} {:>12}  result\n",
            "check", "cases", "compared", "skipped", "max rel err"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<34} {:>6} {:>9} {:>7} {:>12.4e}  {}",
                c.name,
                c.cases,
                c.compared,
                c.skipped,
                c.max_rel_error,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            out,
            "overall: {} (max rel err {:.4e}, tolerance {:.0e})",
            if self.passed() { "pass" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub scalar_cases: usize,
    pub network_cases: usize,
    /// Negate every analytic derivative before comparing, to confirm the
    /// checker reports failures.
    pub inject_sign_flip: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            scalar_cases: 1000,
            network_cases: 20,
            inject_sign_flip: false,
        }
    }
}

struct Tally {
    name: String,
    cases: usize,
    compared: usize,
    skipped: usize,
    max: f64,
    flip: f64,
}

impl Tally {
    fn new(name: impl Into<String>, flip: bool) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            compared: 0,
            skipped: 0,
            max: 0.0,
            flip: if flip { -1.0 } else { 1.0 },
        }
    }

    fn compare(&mut self, analytic: f64, numeric: f64) {
        self.compared += 1;
        let e = rel_error(self.flip * analytic, numeric);
        self.max = self.max.max(if e.is_nan() { f64::INFINITY } else { e });
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            passed: self.compared > 0 && self.max < REL_TOL,
            name: self.name,
            cases: self.cases,
            compared: self.compared,
            skipped: self.skipped,
            max_rel_error: self.max,
        }
    }
}

fn random_params(rng: &mut SeededRng) -> LossParams {
    LossParams {
        alpha: rng.random_range(0.5..5.0),
        beta: rng.random_range(-1.0..1.0),
        lambda: rng.random_range(0.0..2.0),
        cost_pos: rng.random_range(0.5..2.0),
        cost_neg: rng.random_range(0.5..2.0),
    }
}

/// Derivatives of every scalar loss and of the cosine kernel.
pub fn check_scalar_losses(opts: &GradcheckOptions) -> Vec<CheckResult> {
    let mut rng = derive(opts.seed, "gradcheck-scalar");
    let flip = opts.inject_sign_flip;
    let mut bdl_pos = Tally::new("bdl positive d/ds", flip);
    let mut bdl_neg = Tally::new("bdl negative d/ds", flip);
    let mut sp = Tally::new("sbdl positive d/ds, d/dg", flip);
    let mut sn = Tally::new("sbdl negative d/ds, d/dg", flip);
    let mut batch = Tally::new("sbdl batch per-pair d/ds, d/dg", flip);
    let mut bce_t = Tally::new("bce d/dp", flip);
    let mut cos = Tally::new("cosine d/du, d/dv", flip);
    for _ in 0..opts.scalar_cases {
        let p = random_params(&mut rng);
        let s = rng.random_range(-1.0..1.0);
        let g = rng.random_range(0.0..1.0);

        for (pol, t) in [
            (Polarity::Positive, &mut bdl_pos),
            (Polarity::Negative, &mut bdl_neg),
        ] {
            t.cases += 1;
            let a = bdl(s, pol, &p).d_ds;
            t.compare(a, central(|x| bdl(x, pol, &p).value, s));
        }

        type Sbdl = fn(f64, f64, &LossParams) -> crate::loss::LossValue;
        for (f, t) in [
            (sbdl_positive as Sbdl, &mut sp),
            (sbdl_negative as Sbdl, &mut sn),
        ] {
            t.cases += 1;
            let a = f(s, g, &p);
            t.compare(a.d_ds, central(|x| f(x, g, &p).value, s));
            t.compare(a.d_dg, central(|x| f(s, x, &p).value, g));
        }

        batch.cases += 1;
        let n = rng.random_range(2..7);
        let mut pairs: Vec<PairSample> = (0..n)
            .map(|i| PairSample {
                s: rng.random_range(-1.0..1.0),
                g: rng.random_range(0.0..1.0),
                polarity: if i % 2 == 0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
            })
            .collect();
        let bl = sbdl_batch(&pairs, &p).expect("both polarities present");
        for i in 0..n {
            let orig = pairs[i];
            let mut value_at = |s: f64, g: f64| {
                pairs[i] = PairSample { s, g, ..orig };
                let v = sbdl_batch(&pairs, &p).unwrap().value;
                pairs[i] = orig;
                v
            };
            let ds = (value_at(orig.s + FD_STEP, orig.g) - value_at(orig.s - FD_STEP, orig.g))
                / (2.0 * FD_STEP);
            let dg = (value_at(orig.s, orig.g + FD_STEP) - value_at(orig.s, orig.g - FD_STEP))
                / (2.0 * FD_STEP);
            batch.compare(bl.grads[i].0, ds);
            batch.compare(bl.grads[i].1, dg);
        }

        bce_t.cases += 1;
        let k = rng.random_range(1..9);
        let probs: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
        let labels: Vec<u8> = (0..k).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let l = bce(&probs, &labels).unwrap();
        for i in 0..k {
            let num = central(
                |x| {
                    let mut q = probs.clone();
                    q[i] = x;
                    bce(&q, &labels).unwrap().value
                },
                probs[i],
            );
            bce_t.compare(l.grads[i], num);
        }

        cos.cases += 1;
        let d = rng.random_range(1..9);
        let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok((_, du, dv)) = cosine_with_grad(&u, &v) {
            for i in 0..d {
                let f_u = |x: f64| {
                    let mut w = u.clone();
                    w[i] = x;
                    cosine_with_grad(&w, &v).unwrap().0
                };
                let f_v = |x: f64| {
                    let mut w = v.clone();
                    w[i] = x;
                    cosine_with_grad(&u, &w).unwrap().0
                };
                cos.compare(du[i], central(f_u, u[i]));
                cos.compare(dv[i], central(f_v, v[i]));
            }
        }
    }
    [bdl_pos, bdl_neg, sp, sn, batch, bce_t, cos]
        .into_iter()
        .map(Tally::finish)
        .collect()
}

/// Objective configurations covered by the network check.
pub fn network_objectives() -> Vec<(&'static str, ObjectiveSpec)> {
    let spec = |variant, sgs_source, sgs_backprop| ObjectiveSpec {
        variant,
        loss: LossParams::default(),
        sgs_source,
        sgs_backprop,
    };
    vec![
        (
            "network metric_only",
            spec(Variant::MetricOnly, SgsSource::Predicted, false),
        ),
        (
            "network attr_only",
            spec(Variant::AttrOnly, SgsSource::Predicted, false),
        ),
        (
            "network multitask",
            spec(Variant::Multitask, SgsSource::Predicted, false),
        ),
        (
            "network sgml (g detached)",
            spec(Variant::Sgml, SgsSource::Predicted, false),
        ),
        (
            "network sgml (g backprop)",
            spec(Variant::Sgml, SgsSource::Predicted, true),
        ),
        (
            "network sgml (ground-truth g)",
            spec(Variant::Sgml, SgsSource::GroundTruth, false),
        ),
    ]
}

struct NetCase {
    params: NetworkParams,
    batch: BatchData,
    loss: LossParams,
}

fn random_case(rng: &mut SeededRng) -> Result<NetCase> {
    let shape = NetworkShape {
        input_dim: rng.random_range(2..=8),
        trunk_dims: (0..rng.random_range(0..=2))
            .map(|_| rng.random_range(2..=16))
            .collect(),
        fc_dim: rng.random_range(2..=16),
        emb_dim: rng.random_range(2..=16),
        attr_dim: rng.random_range(1..=8),
    };
    let mut params = init_params(&shape, rng)?;
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let rows = rng.random_range(4..=8);
    let inputs = Array2::from_shape_fn((rows, shape.input_dim), |_| rng.sample(StandardNormal));
    let labels: Vec<Vec<u8>> = (0..rows)
        .map(|_| {
            (0..shape.attr_dim)
                .map(|_| u8::from(rng.random_bool(0.5)))
                .collect()
        })
        .collect();
    let classes: Vec<i64> = (0..rows).map(|i| (i % 2) as i64).collect();
    Ok(NetCase {
        params,
        batch: BatchData {
            inputs,
            labels,
            pairs: enumerate_pairs(&classes),
        },
        loss: random_params(rng),
    })
}

fn check_one_network(case: &NetCase, base: &ObjectiveSpec, tally: &mut Tally) -> Result<()> {
    let spec = ObjectiveSpec {
        loss: case.loss,
        ..*base
    };
    let (eval, grads) = batch_objective(&case.params, &spec, &case.batch, None, true)?;
    let grads = grads.expect("gradients requested");
    let detached = spec.variant == Variant::Sgml
        && spec.sgs_source == SgsSource::Predicted
        && !spec.sgs_backprop;
    let frozen = detached.then_some(eval.g.as_slice());
    let (_, base_cache) = forward(&case.params, case.batch.inputs.view())?;
    let pattern = base_cache.kink_pattern();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = case.params.clone();
    for (t, a_t) in analytic.iter().enumerate() {
        for (i, &a) in a_t.iter().enumerate() {
            let orig = probe.tensors()[t][i];
            let mut eval_at = |x: f64| -> Result<Option<f64>> {
                probe.tensors_mut()[t][i] = x;
                let (_, cache) = forward(&probe, case.batch.inputs.view())?;
                let v = if cache.kink_pattern() == pattern {
                    Some(
                        batch_objective(&probe, &spec, &case.batch, frozen, false)?
                            .0
                            .total,
                    )
                } else {
                    None
                };
                probe.tensors_mut()[t][i] = orig;
                Ok(v)
            };
            match (eval_at(orig + FD_STEP)?, eval_at(orig - FD_STEP)?) {
                (Some(up), Some(down)) => tally.compare(a, (up - down) / (2.0 * FD_STEP)),
                _ => tally.skipped += 1,
            }
        }
    }
    Ok(())
}

/// Full-network gradients of every objective configuration on random small
/// networks (input ≤ 8, widths ≤ 16, batch ≤ 8).
pub fn check_networks(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = derive(opts.seed, "gradcheck-network");
    let cases: Vec<NetCase> = (0..opts.network_cases)
        .map(|_| random_case(&mut rng))
        .collect::<Result<_>>()?;
    network_objectives()
        .into_iter()
        .map(|(name, spec)| {
            let mut tally = Tally::new(name, opts.inject_sign_flip);
            for case in &cases {
                tally.cases += 1;
                check_one_network(case, &spec, &mut tally)?;
            }
            Ok(tally.finish())
        })
        .collect()
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut checks = check_scalar_losses(opts);
    checks.extend(check_networks(opts)?);
    Ok(GradcheckReport {
        tolerance: REL_TOL,
        checks,
    })
}
