//! Attributed datasets: synthetic generation, the `SGMLDATA v1` text format
//! and retrieval splits.
//!
//! File layout (UTF-8):
//!
//! ```text
//! SGMLDATA v1 K=<k> D=<d>
//! <id>\t<class_id>\t<k chars of 0/1>\t<d comma-separated reals>
//! ...
//! ```
//!
//! Reals are written with 17 significant digits. Split membership lives in a
//! sidecar `<path>.splits.json` holding `{split_name: [ids]}`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, SeededRng};

pub const HEADER_MAGIC: &str = "SGMLDATA v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub class_id: i64,
    pub attributes: Vec<u8>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_categories: usize,
    pub classes_per_category: usize,
    pub images_per_class: usize,
    /// Number of binary attributes `K`.
    pub n_attributes: usize,
    /// Feature dimension `D`.
    pub feature_dim: usize,
    /// Probability of flipping each attribute bit of an image.
    pub attribute_flip_noise: f64,
    /// Standard deviation of the per-image feature noise.
    pub feature_noise_sigma: f64,
    /// Standard deviation of the per-class feature offset.
    pub class_offset_sigma: f64,
    /// Probability that a style attribute is part of a class prototype.
    pub style_density: f64,
    /// Number of shared random feature directions carrying class-independent
    /// variation (pose, lighting and the like in real image features).
    pub nuisance_dims: usize,
    /// Standard deviation of the per-image coefficient on each nuisance direction.
    pub nuisance_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_categories: 8,
            classes_per_category: 25,
            images_per_class: 5,
            n_attributes: 64,
            feature_dim: 32,
            attribute_flip_noise: 0.05,
            feature_noise_sigma: 0.5,
            class_offset_sigma: 0.5,
            style_density: 0.3,
            nuisance_dims: 8,
            nuisance_sigma: 3.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_categories", self.n_categories),
            ("classes_per_category", self.classes_per_category),
            ("images_per_class", self.images_per_class),
            ("n_attributes", self.n_attributes),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::config(format!("{name} must be >= 1")));
        }
        if self.n_attributes < self.n_categories {
            return Err(Error::config(format!(
                "n_attributes ({}) must be >= n_categories ({})",
                self.n_attributes, self.n_categories
            )));
        }
        if !(0.0..1.0).contains(&self.attribute_flip_noise) {
            return Err(Error::config("attribute_flip_noise must be in [0, 1)"));
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err(Error::config("feature_noise_sigma must be >= 0"));
        }
        if !(self.class_offset_sigma >= 0.0 && self.class_offset_sigma.is_finite()) {
            return Err(Error::config("class_offset_sigma must be >= 0"));
        }
        if !(self.nuisance_sigma >= 0.0 && self.nuisance_sigma.is_finite()) {
            return Err(Error::config("nuisance_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.style_density) {
            return Err(Error::config("style_density must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_categories * self.classes_per_category
    }

    pub fn n_records(&self) -> usize {
        self.n_classes() * self.images_per_class
    }

    /// Width of each category's block of category-defining attributes.
    pub fn category_block_width(&self) -> usize {
        (self.n_attributes / (2 * self.n_categories)).max(1)
    }

    pub fn category_of(&self, class_id: i64) -> usize {
        class_id as usize / self.classes_per_category
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub n_attributes: usize,
    pub feature_dim: usize,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl Dataset {
    /// Validates record shapes and id uniqueness.
    pub fn new(records: Vec<ImageRecord>, n_attributes: usize, feature_dim: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.attributes.len() != n_attributes || r.features.len() != feature_dim {
                return Err(Error::config(format!(
                    "record {} has the wrong K or D",
                    r.id
                )));
            }
            if r.attributes.iter().any(|&a| a > 1) {
                return Err(Error::config(format!(
                    "record {} has non-binary attributes",
                    r.id
                )));
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!(
                    "record {} has non-finite features",
                    r.id
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::config(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(Self {
            records,
            n_attributes,
            feature_dim,
            splits: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of a named split, in dataset order.
    pub fn split_records(&self, name: &str) -> Result<Vec<&ImageRecord>> {
        let ids = self
            .splits
            .get(name)
            .ok_or_else(|| Error::config(format!("dataset has no split named {name:?}")))?;
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let out: Vec<&ImageRecord> = self
            .records
            .iter()
            .filter(|r| wanted.contains(r.id.as_str()))
            .collect();
        if out.len() != wanted.len() {
            return Err(Error::config(format!(
                "split {name:?} references ids missing from the dataset"
            )));
        }
        Ok(out)
    }

    pub fn has_split(&self, name: &str) -> bool {
        self.splits.contains_key(name)
    }

    /// Rejects ids that appear in more than one split.
    fn check_splits(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, ids) in &self.splits {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::config(format!(
                        "id {id} appears in more than one split (last: {name})"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn feature_matrix(records: &[&ImageRecord]) -> Array2<f64> {
    let d = records.first().map_or(0, |r| r.features.len());
    Array2::from_shape_fn((records.len(), d), |(i, j)| records[i].features[j])
}

pub fn attribute_matrix(records: &[&ImageRecord]) -> Array2<f64> {
    let k = records.first().map_or(0, |r| r.attributes.len());
    Array2::from_shape_fn((records.len(), k), |(i, j)| {
        f64::from(records[i].attributes[j])
    })
}

pub fn class_labels(records: &[&ImageRecord]) -> Vec<i64> {
    records.iter().map(|r| r.class_id).collect()
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Class attribute prototypes: category block bits plus random style bits,
/// distinct across all classes.
fn class_prototypes(spec: &DatasetSpec, rng: &mut SeededRng) -> Result<Vec<Vec<u8>>> {
    let k = spec.n_attributes;
    let width = spec.category_block_width();
    let style_start = (width * spec.n_categories).min(k);
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.n_classes());
    for class in 0..spec.n_classes() {
        let cat = class / spec.classes_per_category;
        let mut attempts = 0;
        let proto = loop {
            let mut a = vec![0u8; k];
            for bit in a.iter_mut().skip(cat * width).take(width) {
                *bit = 1;
            }
            for bit in a.iter_mut().skip(style_start) {
                *bit = u8::from(rng.random_bool(spec.style_density));
            }
            if seen.insert(a.clone()) {
                break a;
            }
            attempts += 1;
            if attempts >= 1000 {
                return Err(Error::config(format!(
                    "cannot draw {} distinct class prototypes from {} style attributes",
                    spec.classes_per_category,
                    k - style_start
                )));
            }
        };
        out.push(proto);
    }
    Ok(out)
}

/// Hierarchical synthetic dataset: categories own disjoint attribute blocks,
/// classes add style attributes, images carry noisy copies of their class's
/// attributes, and features are a fixed random projection of the class
/// prototype plus a class offset and per-image noise.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (k, d) = (spec.n_attributes, spec.feature_dim);
    let mut rng = derive(spec.seed, "generate");
    let width = spec.category_block_width();
    let expected_ones =
        width as f64 + spec.style_density * (k.saturating_sub(width * spec.n_categories)) as f64;
    let w_scale = 1.0 / expected_ones.max(1.0).sqrt();
    let projection: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..k).map(|_| normal(&mut rng) * w_scale).collect())
        .collect();
    let prototypes = class_prototypes(spec, &mut rng)?;
    let offsets: Vec<Vec<f64>> = (0..spec.n_classes())
        .map(|_| {
            (0..d)
                .map(|_| normal(&mut rng) * spec.class_offset_sigma)
                .collect()
        })
        .collect();
    let nuisance: Vec<Vec<f64>> = (0..spec.nuisance_dims)
        .map(|_| {
            let mut u: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let n = u
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            u.iter_mut().for_each(|x| *x /= n);
            u
        })
        .collect();
    let mut records = Vec::with_capacity(spec.n_records());
    for (class, proto) in prototypes.iter().enumerate() {
        let center: Vec<f64> = projection
            .iter()
            .zip(&offsets[class])
            .map(|(row, off)| {
                row.iter()
                    .zip(proto)
                    .map(|(w, &a)| w * f64::from(a))
                    .sum::<f64>()
                    + off
            })
            .collect();
        for img in 0..spec.images_per_class {
            let attributes = proto
                .iter()
                .map(|&a| {
                    if spec.attribute_flip_noise > 0.0 && rng.random_bool(spec.attribute_flip_noise)
                    {
                        1 - a
                    } else {
                        a
                    }
                })
                .collect();
            let mut features: Vec<f64> = center
                .iter()
                .map(|c| c + normal(&mut rng) * spec.feature_noise_sigma)
                .collect();
            for dir in &nuisance {
                let xi = normal(&mut rng) * spec.nuisance_sigma;
                features.iter_mut().zip(dir).for_each(|(f, u)| *f += xi * u);
            }
            records.push(ImageRecord {
                id: format!("c{class:05}-{img:03}"),
                class_id: class as i64,
                attributes,
                features,
            });
        }
    }
    Dataset::new(records, k, d)
}

fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Text form of a dataset in the `SGMLDATA v1` format.
pub fn to_text(dataset: &Dataset) -> String {
    let mut out = format!(
        "{HEADER_MAGIC} K={} D={}\n",
        dataset.n_attributes, dataset.feature_dim
    );
    for r in &dataset.records {
        let bits: String = r
            .attributes
            .iter()
            .map(|&a| if a == 1 { '1' } else { '0' })
            .collect();
        let feats: Vec<String> = r.features.iter().map(|&x| format_real(x)).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.id,
            r.class_id,
            bits,
            feats.join(",")
        );
    }
    out
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let rest = line.strip_prefix(HEADER_MAGIC).ok_or_else(|| {
        Error::parse(1, format!("expected header starting with {HEADER_MAGIC:?}"))
    })?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    let field = |s: Option<&&str>, key: &str| -> Result<usize> {
        s.and_then(|s| s.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(1, format!("malformed header field {key}")))
    };
    if parts.len() != 2 {
        return Err(Error::parse(1, "header must be `SGMLDATA v1 K=<k> D=<d>`"));
    }
    Ok((field(parts.first(), "K=")?, field(parts.get(1), "D=")?))
}

fn parse_row(line: &str, lineno: usize, k: usize, d: usize) -> Result<ImageRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(Error::parse(
            lineno,
            format!("expected 4 tab-separated fields, found {}", fields.len()),
        ));
    }
    let id = fields[0];
    if id.is_empty() {
        return Err(Error::parse(lineno, "empty id"));
    }
    let class_id: i64 = fields[1]
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad class id {:?}", fields[1])))?;
    let attributes: Vec<u8> = fields[2]
        .chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::parse(
                lineno,
                format!("attribute character {other:?} is not 0/1"),
            )),
        })
        .collect::<Result<_>>()?;
    if attributes.len() != k {
        return Err(Error::parse(
            lineno,
            format!("expected {k} attribute bits, found {}", attributes.len()),
        ));
    }
    let features: Vec<f64> = if d == 0 && fields[3].is_empty() {
        Vec::new()
    } else {
        fields[3]
            .split(',')
            .map(|s| {
                let x: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad real {s:?}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::parse(lineno, format!("non-finite feature {s:?}")))
                }
            })
            .collect::<Result<_>>()?
    };
    if features.len() != d {
        return Err(Error::parse(
            lineno,
            format!("expected {d} features, found {}", features.len()),
        ));
    }
    Ok(ImageRecord {
        id: id.to_string(),
        class_id,
        attributes,
        features,
    })
}

/// Parses the `SGMLDATA v1` text form (without splits).
pub fn from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let (k, d) = parse_header(header)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let rec = parse_row(line, lineno, k, d)?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(lineno, format!("duplicate id {}", rec.id)));
        }
        records.push(rec);
    }
    Ok(Dataset {
        records,
        n_attributes: k,
        feature_dim: d,
        splits: BTreeMap::new(),
    })
}

pub fn splits_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".splits.json");
    PathBuf::from(s)
}

/// Writes the dataset and, when it has splits, the sidecar splits file.
pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_text(dataset))?;
    if !dataset.splits.is_empty() {
        fs::write(
            splits_path(path),
            serde_json::to_string_pretty(&dataset.splits)? + "\n",
        )?;
    }
    Ok(())
}

/// Reads a dataset and its sidecar splits file if one exists.
pub fn load(path: &Path) -> Result<Dataset> {
    let mut ds = from_text(&fs::read_to_string(path)?)?;
    let sidecar = splits_path(path);
    if sidecar.exists() {
        ds.splits = serde_json::from_str(&fs::read_to_string(sidecar)?)?;
        ds.check_splits()?;
        let ids: HashSet<&str> = ds.records.iter().map(|r| r.id.as_str()).collect();
        if let Some(bad) = ds
            .splits
            .values()
            .flatten()
            .find(|id| !ids.contains(id.as_str()))
        {
            return Err(Error::config(format!(
                "splits file references unknown id {bad}"
            )));
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Every class contributes records to training; held-out records of each
    /// class are divided between query and gallery.
    InstanceRetrieval { train_fraction: f64 },
    /// Disjoint class sets for training and testing.
    ClassRetrieval { class_fraction: f64 },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::ClassRetrieval {
            class_fraction: 0.5,
        }
    }
}

/// Assigns every record to a named split: `train`/`query`/`gallery` for
/// instance retrieval, `train`/`test` for class retrieval.
pub fn split(dataset: &Dataset, policy: SplitPolicy, rng: &mut SeededRng) -> Result<Dataset> {
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        by_class.entry(r.class_id).or_default().push(i);
    }
    let mut assign: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    match policy {
        SplitPolicy::InstanceRetrieval { train_fraction } => {
            if !(0.0..1.0).contains(&train_fraction) {
                return Err(Error::config("train_fraction must be in [0, 1)"));
            }
            for name in ["train", "query", "gallery"] {
                assign.insert(name, Vec::new());
            }
            for (class, mut members) in by_class {
                members.shuffle(rng);
                let n = members.len();
                if n == 1 {
                    log::warn!("class {class} has a single record; placed in gallery");
                    assign.entry("gallery").or_default().push(members[0]);
                    continue;
                }
                let n_test = (((1.0 - train_fraction) * n as f64).round() as usize).clamp(2, n);
                let n_query = n_test - n_test / 2;
                let (test, train) = members.split_at(n_test);
                assign.entry("query").or_default().extend(&test[..n_query]);
                assign
                    .entry("gallery")
                    .or_default()
                    .extend(&test[n_query..]);
                assign.entry("train").or_default().extend(train);
            }
        }
        SplitPolicy::ClassRetrieval { class_fraction } => {
            let mut classes: Vec<i64> = by_class.keys().copied().collect();
            if classes.len() < 2 {
                return Err(Error::config(
                    "class retrieval split needs at least 2 classes",
                ));
            }
            if !(0.0..=1.0).contains(&class_fraction) {
                return Err(Error::config("class_fraction must be in [0, 1]"));
            }
            classes.shuffle(rng);
            let n_train = ((class_fraction * classes.len() as f64).round() as usize)
                .clamp(1, classes.len() - 1);
            for (pos, class) in classes.iter().enumerate() {
                let name = if pos < n_train { "train" } else { "test" };
                assign.entry(name).or_default().extend(&by_class[class]);
            }
        }
    }
    let mut out = dataset.clone();
    out.splits = assign
        .into_iter()
        .map(|(name, mut idx)| {
            idx.sort_unstable();
            (
                name.to_string(),
                idx.into_iter()
                    .map(|i| dataset.records[i].id.clone())
                    .collect(),
            )
        })
        .collect();
    Ok(out)
}
