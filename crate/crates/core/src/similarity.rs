//! Cosine similarity between embeddings and the semantic granularity
//! similarity (SGS) between attribute-probability vectors.
//!
//! Both kernels normalize internally; nothing upstream is expected to store
//! unit-norm vectors.

use crate::error::{Error, Result};

/// Slack allowed on the `[-1, 1]` / `[0, 1]` ranges for accumulated rounding.
pub const RANGE_SLACK: f64 = 1e-12;

/// Lower/upper clamp applied to predicted attribute probabilities.
pub const PROB_EPS: f64 = 1e-7;

/// Offset added to the first coordinate of an all-zero vector so that cosine
/// similarity stays defined.
pub const ZERO_NORM_NUDGE: f64 = 1e-12;

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn check_pair(u: &[f64], v: &[f64], what: &str) -> Result<(f64, f64)> {
    if u.is_empty() {
        return Err(Error::domain(format!("{what}: empty vector")));
    }
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "{what}: length mismatch ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu.is_finite() && nv.is_finite()) {
        return Err(Error::domain(format!("{what}: non-finite entry")));
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain(format!("{what}: zero-norm vector")));
    }
    Ok((nu, nv))
}

/// `u·v / (‖u‖ ‖v‖)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v, "cosine similarity")?;
    Ok(dot(u, v) / (nu * nv))
}

/// Cosine similarity together with its gradients with respect to both inputs:
///
/// ∂s/∂u = v/(‖u‖‖v‖) − s·u/‖u‖²  (and symmetrically for v).
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (nu, nv) = check_pair(u, v, "cosine similarity")?;
    let inv = 1.0 / (nu * nv);
    let s = dot(u, v) / (nu * nv);
    let su = s / (nu * nu);
    let sv = s / (nv * nv);
    let du = u.iter().zip(v).map(|(a, b)| b * inv - su * a).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a * inv - sv * b).collect();
    Ok((s, du, dv))
}

/// Semantic granularity similarity: cosine of two attribute-probability
/// vectors. Entries must lie in `[0, 1]`, so the result lies in `[0, 1]`.
pub fn sgs_mapping(p: &[f64], q: &[f64]) -> Result<f64> {
    if let Some(x) = p.iter().chain(q).find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::domain(format!(
            "sgs mapping: probability {x} outside [0, 1]"
        )));
    }
    let (np, nq) = check_pair(p, q, "sgs mapping")?;
    Ok(dot(p, q) / (np * nq))
}

/// Pairwise cosine similarities. Only the upper triangle is computed; the
/// lower triangle is mirrored so the result is exactly symmetric.
pub fn similarity_matrix<V: AsRef<[f64]>>(embs: &[V]) -> Result<Vec<Vec<f64>>> {
    let n = embs.len();
    if n == 0 {
        return Err(Error::domain("similarity matrix: no vectors"));
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = cosine_similarity(embs[i].as_ref(), embs[j].as_ref())
                .map_err(|e| Error::domain(format!("similarity matrix entry ({i}, {j}): {e}")))?;
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    Ok(out)
}

/// Returns the vector unchanged unless it is all zeros, in which case the
/// first coordinate is nudged by [`ZERO_NORM_NUDGE`].
pub fn nudge_zero_norm(v: &mut [f64]) -> bool {
    if !v.is_empty() && v.iter().all(|x| *x == 0.0) {
        v[0] += ZERO_NORM_NUDGE;
        true
    } else {
        false
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}
