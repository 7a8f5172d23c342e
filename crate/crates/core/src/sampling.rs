//! Mini-batch construction.
//!
//! Two strategies are provided:
//!
//! * image-wise: every record serves as an anchor once per epoch and is paired
//!   with one random positive and one random negative, so a batch of `N`
//!   anchors holds `3N` record slots and exactly `N` positive and `N` negative
//!   pairs;
//! * batch-wise: `N'` classes are drawn, `M'` records from each, and every
//!   unordered pair inside the batch is used.
//!
//! Pairs are always expressed as slot positions inside the batch, `(i, j)`
//! with `i < j`.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Records grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    class_to_records: BTreeMap<i64, Vec<usize>>,
    labels: Vec<i64>,
}

impl DatasetIndex {
    /// Builds the index from per-record class labels; record `i` has class `labels[i]`.
    pub fn from_labels(labels: &[i64]) -> Self {
        let mut class_to_records: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            class_to_records.entry(c).or_default().push(i);
        }
        Self {
            class_to_records,
            labels: labels.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_to_records.len()
    }

    pub fn class_of(&self, record: usize) -> i64 {
        self.labels[record]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn records_of(&self, class: i64) -> &[usize] {
        self.class_to_records
            .get(&class)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn classes(&self) -> impl Iterator<Item = (i64, &[usize])> {
        self.class_to_records
            .iter()
            .map(|(c, r)| (*c, r.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
    /// Anchors dropped because their class has a single record.
    pub skipped_anchors: usize,
}

impl TripletBatch {
    /// Record slots in the order `[a0, p0, n0, a1, p1, n1, ...]`.
    pub fn slots(&self) -> Vec<usize> {
        self.triplets
            .iter()
            .flat_map(|t| [t.anchor, t.positive, t.negative])
            .collect()
    }
}

/// Positive and negative pairs as slot positions `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairList {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Records of one optimization step plus the pairs formed between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    /// Record index for each slot.
    pub records: Vec<usize>,
    pub pairs: PairList,
}

impl MiniBatch {
    pub fn from_triplets(batch: &TripletBatch) -> Self {
        Self {
            records: batch.slots(),
            pairs: triplets_to_pairs(batch),
        }
    }

    pub fn from_records(index: &DatasetIndex, records: Vec<usize>) -> Self {
        let labels: Vec<i64> = records.iter().map(|&r| index.class_of(r)).collect();
        Self {
            pairs: enumerate_pairs(&labels),
            records,
        }
    }
}

fn check_two_classes(index: &DatasetIndex) -> Result<()> {
    if index.n_classes() < 2 {
        return Err(Error::config(format!(
            "image-wise sampling needs at least 2 classes, found {}",
            index.n_classes()
        )));
    }
    Ok(())
}

/// Completes a triplet for `anchor`, or `None` when its class has a single record.
fn triplet_for(index: &DatasetIndex, anchor: usize, rng: &mut SeededRng) -> Option<Triplet> {
    let class = index.class_of(anchor);
    let same = index.records_of(class);
    if same.len() < 2 {
        return None;
    }
    // uniform over the class minus the anchor
    let k = rng.random_range(0..same.len() - 1);
    let pos_in_class = same.iter().position(|&r| r == anchor).unwrap();
    let positive = same[if k >= pos_in_class { k + 1 } else { k }];
    // uniform over the union of all other classes
    let negative = loop {
        let r = rng.random_range(0..index.len());
        if index.class_of(r) != class {
            break r;
        }
    };
    Some(Triplet {
        anchor,
        positive,
        negative,
    })
}

/// Builds triplets for the given anchors, skipping anchors of singleton classes.
pub fn triplets_for_anchors(
    index: &DatasetIndex,
    anchors: &[usize],
    rng: &mut SeededRng,
) -> Result<TripletBatch> {
    check_two_classes(index)?;
    let mut batch = TripletBatch::default();
    for &a in anchors {
        match triplet_for(index, a, rng) {
            Some(t) => batch.triplets.push(t),
            None => batch.skipped_anchors += 1,
        }
    }
    Ok(batch)
}

/// One image-wise batch: `n_anchors` anchors drawn uniformly without
/// replacement among records whose class has at least two members.
pub fn sample_image_wise(
    index: &DatasetIndex,
    n_anchors: usize,
    rng: &mut SeededRng,
) -> Result<TripletBatch> {
    if n_anchors == 0 {
        return Err(Error::config("image-wise sampling needs n_anchors >= 1"));
    }
    check_two_classes(index)?;
    let eligible: Vec<usize> = (0..index.len())
        .filter(|&r| index.records_of(index.class_of(r)).len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(Error::config("no class has two or more records"));
    }
    let mut anchors = Vec::with_capacity(n_anchors);
    while anchors.len() < n_anchors {
        let take = (n_anchors - anchors.len()).min(eligible.len());
        anchors.extend(
            index::sample(rng, eligible.len(), take)
                .into_iter()
                .map(|i| eligible[i]),
        );
    }
    triplets_for_anchors(index, &anchors, rng)
}

/// Epoch-style image-wise sampler: each record is an anchor exactly once per
/// epoch, in a freshly shuffled order.
#[derive(Debug, Clone)]
pub struct ImageWiseEpoch {
    order: Vec<usize>,
    cursor: usize,
    n_anchors: usize,
    /// Anchors skipped so far because their class has a single record.
    pub skipped: usize,
}

impl ImageWiseEpoch {
    pub fn new(index: &DatasetIndex, n_anchors: usize, rng: &mut SeededRng) -> Result<Self> {
        if n_anchors == 0 {
            return Err(Error::config("image-wise sampling needs n_anchors >= 1"));
        }
        check_two_classes(index)?;
        let mut order: Vec<usize> = (0..index.len()).collect();
        order.shuffle(rng);
        Ok(Self {
            order,
            cursor: 0,
            n_anchors,
            skipped: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.order.len().div_ceil(self.n_anchors)
    }

    /// Next batch of the epoch, `None` once every record has been an anchor.
    pub fn next_batch(
        &mut self,
        index: &DatasetIndex,
        rng: &mut SeededRng,
    ) -> Result<Option<TripletBatch>> {
        if self.cursor >= self.order.len() {
            return Ok(None);
        }
        let end = (self.cursor + self.n_anchors).min(self.order.len());
        let anchors = &self.order[self.cursor..end];
        self.cursor = end;
        let batch = triplets_for_anchors(index, anchors, rng)?;
        self.skipped += batch.skipped_anchors;
        Ok(Some(batch))
    }
}

/// Draws `n_classes` distinct classes and up to `m_per_class` records from each.
/// Classes smaller than `m_per_class` contribute all of their records.
pub fn sample_batch_wise(
    index: &DatasetIndex,
    n_classes: usize,
    m_per_class: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::config("batch-wise sampling needs n_classes >= 2"));
    }
    if m_per_class == 0 {
        return Err(Error::config("batch-wise sampling needs m_per_class >= 1"));
    }
    if index.n_classes() < n_classes {
        return Err(Error::config(format!(
            "batch-wise sampling asks for {n_classes} classes but only {} exist",
            index.n_classes()
        )));
    }
    let classes: Vec<&[usize]> = index.classes().map(|(_, r)| r).collect();
    let mut out = Vec::with_capacity(n_classes * m_per_class);
    for c in index::sample(rng, classes.len(), n_classes) {
        let members = classes[c];
        let take = m_per_class.min(members.len());
        out.extend(
            index::sample(rng, members.len(), take)
                .into_iter()
                .map(|i| members[i]),
        );
    }
    Ok(out)
}

/// Number of batch-wise steps that make up one epoch over `n_records`.
pub fn batch_wise_steps(n_records: usize, n_classes: usize, m_per_class: usize) -> usize {
    n_records.div_ceil(n_classes * m_per_class).max(1)
}

/// Every unordered pair of slots: same label → positive, otherwise negative.
pub fn enumerate_pairs(labels: &[i64]) -> PairList {
    let mut pairs = PairList::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                pairs.positives.push((i, j));
            } else {
                pairs.negatives.push((i, j));
            }
        }
    }
    pairs
}

/// One positive `(a, p)` and one negative `(a, n)` per triplet, using the slot
/// layout of [`TripletBatch::slots`]. Repeated records stay separate terms.
pub fn triplets_to_pairs(batch: &TripletBatch) -> PairList {
    let mut pairs = PairList::default();
    for t in 0..batch.triplets.len() {
        let a = 3 * t;
        pairs.positives.push((a, a + 1));
        pairs.negatives.push((a, a + 2));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::HashSet;

    fn equal_classes(n_classes: usize, per: usize) -> DatasetIndex {
        let labels: Vec<i64> = (0..n_classes * per).map(|i| (i / per) as i64).collect();
        DatasetIndex::from_labels(&labels)
    }

    #[test]
    fn index_groups_records() {
        let idx = DatasetIndex::from_labels(&[3, 1, 3, 2]);
        assert_eq!(idx.n_classes(), 3);
        assert_eq!(idx.records_of(3), &[0, 2]);
        assert_eq!(idx.records_of(9), &[] as &[usize]);
        let total: usize = idx.classes().map(|(_, r)| r.len()).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn image_wise_slot_count() {
        let idx = equal_classes(20, 5);
        let b = sample_image_wise(&idx, 60, &mut seeded(1)).unwrap();
        assert_eq!(b.triplets.len(), 60);
        assert_eq!(b.slots().len(), 180);
    }

    #[test]
    fn image_wise_forced_triplet() {
        let idx = DatasetIndex::from_labels(&[0, 0, 1]);
        for seed in 0..20 {
            let b = sample_image_wise(&idx, 1, &mut seeded(seed)).unwrap();
            let t = b.triplets[0];
            assert!(t.anchor <= 1);
            assert_eq!(t.positive, 1 - t.anchor);
            assert_eq!(t.negative, 2);
        }
    }

    #[test]
    fn image_wise_triplet_invariants() {
        let idx = DatasetIndex::from_labels(&[0, 0, 0, 1, 1, 2, 2, 2, 2, 3]);
        let b = sample_image_wise(&idx, 25, &mut seeded(3)).unwrap();
        for t in &b.triplets {
            assert_ne!(t.anchor, t.positive);
            assert_eq!(idx.class_of(t.anchor), idx.class_of(t.positive));
            assert_ne!(idx.class_of(t.anchor), idx.class_of(t.negative));
        }
    }

    #[test]
    fn image_wise_needs_two_classes() {
        let idx = DatasetIndex::from_labels(&[0, 0, 0]);
        assert!(matches!(
            sample_image_wise(&idx, 1, &mut seeded(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn epoch_skips_singleton_anchors() {
        let idx = DatasetIndex::from_labels(&[0, 0, 1, 2, 2]);
        let mut rng = seeded(5);
        let mut epoch = ImageWiseEpoch::new(&idx, 2, &mut rng).unwrap();
        assert_eq!(epoch.steps(), 3);
        let mut anchors = Vec::new();
        while let Some(b) = epoch.next_batch(&idx, &mut rng).unwrap() {
            anchors.extend(b.triplets.iter().map(|t| t.anchor));
        }
        anchors.sort();
        assert_eq!(anchors, vec![0, 1, 3, 4]);
        assert_eq!(epoch.skipped, 1);
    }

    #[test]
    fn image_wise_negatives_uniform_over_other_classes() {
        // Anchor class 0; negatives should split evenly between classes 1 and 2.
        let idx = equal_classes(3, 4);
        let mut rng = seeded(11);
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            let t = triplets_for_anchors(&idx, &[0], &mut rng).unwrap().triplets[0];
            counts[idx.class_of(t.negative) as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let expected = 500.0;
        let chi2: f64 = counts[1..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // χ²(1) critical value at p = 0.001
        assert!(chi2 < 10.828, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn batch_wise_sizes() {
        let idx = equal_classes(100, 5);
        let b = sample_batch_wise(&idx, 41, 4, &mut seeded(2)).unwrap();
        assert_eq!(b.len(), 164);
        let idx = equal_classes(2, 3);
        let b = sample_batch_wise(&idx, 2, 3, &mut seeded(2)).unwrap();
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn batch_wise_truncates_small_classes() {
        let idx = DatasetIndex::from_labels(&[0, 0, 1, 1, 1, 1, 1]);
        let b = sample_batch_wise(&idx, 2, 4, &mut seeded(9)).unwrap();
        let from_small = b.iter().filter(|&&r| idx.class_of(r) == 0).count();
        assert_eq!(from_small, 2);
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn batch_wise_errors() {
        let idx = equal_classes(3, 2);
        assert!(matches!(
            sample_batch_wise(&idx, 4, 2, &mut seeded(0)),
            Err(Error::Config(_))
        ));
        assert!(sample_batch_wise(&idx, 1, 2, &mut seeded(0)).is_err());
    }

    #[test]
    fn batch_wise_no_duplicates_and_deterministic() {
        let idx = DatasetIndex::from_labels(&(0..300).map(|i| (i % 37) as i64).collect::<Vec<_>>());
        for seed in 0..20 {
            let a = sample_batch_wise(&idx, 10, 6, &mut seeded(seed)).unwrap();
            let b = sample_batch_wise(&idx, 10, 6, &mut seeded(seed)).unwrap();
            assert_eq!(a, b);
            let uniq: HashSet<_> = a.iter().collect();
            assert_eq!(uniq.len(), a.len());
        }
    }

    #[test]
    fn pair_enumeration_examples() {
        let p = enumerate_pairs(&[0, 0, 0, 1, 1, 1]);
        assert_eq!((p.positives.len(), p.negatives.len()), (6, 9));
        let p = enumerate_pairs(&[4; 5]);
        assert_eq!((p.positives.len(), p.negatives.len()), (10, 0));
        let labels: Vec<i64> = (0..164).map(|i| i / 4).collect();
        let p = enumerate_pairs(&labels);
        assert_eq!(p.positives.len(), 246);
        assert_eq!(p.negatives.len(), 164 * 163 / 2 - 246);
    }

    #[test]
    fn triplet_pairs() {
        let t = Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        };
        for n in [1usize, 2, 60] {
            let batch = TripletBatch {
                triplets: vec![t; n],
                skipped_anchors: 0,
            };
            let p = triplets_to_pairs(&batch);
            assert_eq!(p.positives.len(), n);
            assert_eq!(p.negatives.len(), n);
            let mb = MiniBatch::from_triplets(&batch);
            assert_eq!(mb.records.len(), 3 * n);
        }
    }

    #[test]
    fn epoch_steps_rounding() {
        assert_eq!(batch_wise_steps(500, 41, 4), 4);
        assert_eq!(batch_wise_steps(164, 41, 4), 1);
        assert_eq!(batch_wise_steps(0, 41, 4), 1);
    }
}
