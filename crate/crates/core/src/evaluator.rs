//! Exhaustive cosine retrieval and Recall@K.
//!
//! Gallery items are ranked by descending cosine similarity to the query;
//! equal scores are ordered by ascending gallery index. All-zero feature rows
//! get the same first-coordinate nudge the trainer uses.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{feature_matrix, Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::network::{forward, NetworkParams};
use crate::similarity::{cosine_similarity, nudge_zero_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Emb,
    Fc,
    Trunk,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Emb, Layer::Fc, Layer::Trunk];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Emb => "emb",
            Layer::Fc => "fc",
            Layer::Trunk => "trunk",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layer::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown layer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Queries search a distinct gallery.
    Separate,
    /// Each query searches the remaining items of the same set.
    LeaveOneOut,
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(RetrievalMode::Separate),
            "leave-one-out" | "leave_one_out" | "loo" => Ok(RetrievalMode::LeaveOneOut),
            other => Err(Error::config(format!("unknown retrieval mode {other:?}"))),
        }
    }
}

/// Features of `records` from one layer of a frozen forward pass.
pub fn extract_features(
    params: &NetworkParams,
    records: &[&ImageRecord],
    layer: Layer,
) -> Result<Array2<f64>> {
    let (out, _) = forward(params, feature_matrix(records).view())?;
    Ok(match layer {
        Layer::Emb => out.embeddings,
        Layer::Fc => out.fc_out,
        Layer::Trunk => out.trunk_out,
    })
}

fn rows_nudged(m: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut v = r.to_vec();
            nudge_zero_norm(&mut v);
            v
        })
        .collect()
}

fn check_inputs(
    queries: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_labels: &[i64],
    gallery_labels: &[i64],
    ks: &[usize],
    mode: RetrievalMode,
) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::domain("every K must be >= 1"));
    }
    if queries.nrows() == 0 || gallery.nrows() == 0 {
        return Err(Error::domain("queries and gallery must be nonempty"));
    }
    if queries.nrows() != query_labels.len() || gallery.nrows() != gallery_labels.len() {
        return Err(Error::domain("labels are not row-aligned with features"));
    }
    if queries.ncols() != gallery.ncols() {
        return Err(Error::domain("query and gallery widths differ"));
    }
    if mode == RetrievalMode::LeaveOneOut && queries.nrows() != gallery.nrows() {
        return Err(Error::domain(
            "leave-one-out needs the gallery to be the query set",
        ));
    }
    Ok(())
}

/// Cosine scores of one query against every gallery row.
fn scores(query: &[f64], gallery: &[Vec<f64>]) -> Result<Vec<f64>> {
    gallery
        .iter()
        .map(|g| cosine_similarity(query, g))
        .collect()
}

/// Whether `a` ranks strictly ahead of `b`.
fn ahead(scores: &[f64], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && a < b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub layer: String,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub n_queries: usize,
    /// Leave-one-out queries without any other member of their class.
    pub excluded_queries: usize,
}

impl RecallReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }
}

/// Recall@K for every `k` in `ks`: the fraction of queries with at least one
/// same-class item among their top `k` gallery results.
pub fn recall_at_k(
    queries: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_labels: &[i64],
    gallery_labels: &[i64],
    ks: &[usize],
    mode: RetrievalMode,
) -> Result<RecallReport> {
    check_inputs(queries, gallery, query_labels, gallery_labels, ks, mode)?;
    let q = rows_nudged(queries);
    let g = rows_nudged(gallery);
    let mut hits = vec![0usize; ks.len()];
    let (mut n_queries, mut excluded) = (0, 0);
    for (qi, qv) in q.iter().enumerate() {
        let skip = (mode == RetrievalMode::LeaveOneOut).then_some(qi);
        let label = query_labels[qi];
        let sc = scores(qv, &g)?;
        // best same-class gallery item under the ranking order
        let best = (0..g.len())
            .filter(|&j| Some(j) != skip && gallery_labels[j] == label)
            .reduce(|a, b| if ahead(&sc, b, a) { b } else { a });
        let Some(best) = best else {
            if mode == RetrievalMode::LeaveOneOut {
                excluded += 1;
                continue;
            }
            n_queries += 1;
            continue;
        };
        n_queries += 1;
        let rank = (0..g.len())
            .filter(|&j| Some(j) != skip && ahead(&sc, j, best))
            .count();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank < k {
                *h += 1;
            }
        }
    }
    if n_queries == 0 {
        return Err(Error::domain("no query has a same-class item to retrieve"));
    }
    Ok(RecallReport {
        layer: String::new(),
        ks: ks.to_vec(),
        recall: hits.iter().map(|&h| h as f64 / n_queries as f64).collect(),
        n_queries,
        excluded_queries: excluded,
    })
}

/// One query's ranked gallery list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub ranked: Vec<String>,
    pub scores: Vec<f64>,
}

/// Top-`top` ranked gallery ids and scores for each query.
pub fn ranked_lists(
    queries: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_ids: &[String],
    gallery_ids: &[String],
    top: usize,
    mode: RetrievalMode,
) -> Result<Vec<RetrievalResult>> {
    let q = rows_nudged(queries);
    let g = rows_nudged(gallery);
    q.iter()
        .enumerate()
        .map(|(qi, qv)| {
            let sc = scores(qv, &g)?;
            let mut order: Vec<usize> = (0..g.len())
                .filter(|&j| !(mode == RetrievalMode::LeaveOneOut && j == qi))
                .collect();
            order.sort_by(|&a, &b| sc[b].total_cmp(&sc[a]).then(a.cmp(&b)));
            order.truncate(top);
            Ok(RetrievalResult {
                query: query_ids[qi].clone(),
                ranked: order.iter().map(|&j| gallery_ids[j].clone()).collect(),
                scores: order.iter().map(|&j| sc[j]).collect(),
            })
        })
        .collect()
}

pub fn ranked_lists_jsonl(results: &[RetrievalResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Query and gallery record sets of an evaluation protocol.
pub struct EvalSets<'a> {
    pub queries: Vec<&'a ImageRecord>,
    pub gallery: Vec<&'a ImageRecord>,
    pub mode: RetrievalMode,
}

/// Chooses the protocol from the dataset's splits: `query`/`gallery` for
/// separate retrieval, otherwise `test` for leave-one-out. `mode` overrides
/// the choice; leave-one-out over a query/gallery dataset uses the queries.
pub fn eval_sets(dataset: &Dataset, mode: Option<RetrievalMode>) -> Result<EvalSets<'_>> {
    let has_qg = dataset.has_split("query") && dataset.has_split("gallery");
    let mode = mode.unwrap_or(if has_qg {
        RetrievalMode::Separate
    } else {
        RetrievalMode::LeaveOneOut
    });
    match mode {
        RetrievalMode::Separate => {
            if !has_qg {
                return Err(Error::config(
                    "separate retrieval needs query and gallery splits",
                ));
            }
            Ok(EvalSets {
                queries: dataset.split_records("query")?,
                gallery: dataset.split_records("gallery")?,
                mode,
            })
        }
        RetrievalMode::LeaveOneOut => {
            let set = if dataset.has_split("test") {
                dataset.split_records("test")?
            } else if has_qg {
                dataset.split_records("query")?
            } else if dataset.splits.is_empty() {
                dataset.records.iter().collect()
            } else {
                return Err(Error::config("leave-one-out retrieval needs a test split"));
            };
            Ok(EvalSets {
                queries: set.clone(),
                gallery: set,
                mode,
            })
        }
    }
}

/// Recall@K of one layer on the given record sets.
pub fn evaluate_layer(
    params: &NetworkParams,
    sets: &EvalSets<'_>,
    layer: Layer,
    ks: &[usize],
) -> Result<RecallReport> {
    let qf = extract_features(params, &sets.queries, layer)?;
    let gf = extract_features(params, &sets.gallery, layer)?;
    let ql: Vec<i64> = sets.queries.iter().map(|r| r.class_id).collect();
    let gl: Vec<i64> = sets.gallery.iter().map(|r| r.class_id).collect();
    let mut report = recall_at_k(qf.view(), gf.view(), &ql, &gl, ks, sets.mode)?;
    report.layer = layer.to_string();
    Ok(report)
}

/// One report per requested layer over the same query set.
pub fn evaluate_all_layers(
    params: &NetworkParams,
    dataset: &Dataset,
    ks: &[usize],
    layers: &[Layer],
    mode: Option<RetrievalMode>,
) -> Result<Vec<RecallReport>> {
    let sets = eval_sets(dataset, mode)?;
    layers
        .iter()
        .map(|&l| evaluate_layer(params, &sets, l, ks))
        .collect()
}

/// `layer,k,recall,n_queries` rows with full-precision recall.
pub fn reports_csv(reports: &[RecallReport]) -> String {
    let mut out = String::from("layer,k,recall,n_queries\n");
    for r in reports {
        for (k, v) in r.ks.iter().zip(&r.recall) {
            let _ = writeln!(out, "{},{},{:?},{}", r.layer, k, v, r.n_queries);
        }
    }
    out
}

/// Aligned text table with one row per layer and four-decimal recalls.
pub fn reports_table(reports: &[RecallReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = format!("{:<8}", "layer");
    for k in &first.ks {
        let _ = write!(out, " {:>8}", format!("R@{k}"));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<8}", r.layer);
        for v in &r.recall {
            let _ = write!(out, " {v:>8.4}");
        }
        out.push('\n');
    }
    out
}
