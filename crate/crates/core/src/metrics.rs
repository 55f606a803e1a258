//! Edge panoptic quality.
//!
//! Segments are label-equivalence classes of nonzero pixels. A predicted and
//! a ground-truth segment of the same category are candidates when their
//! pixel-set IoU exceeds the threshold (10% by default). Candidates are matched
//! greedily by descending IoU; ties go to the smaller ground-truth label, then
//! the smaller predicted label. Per category:
//!
//! ```text
//! PQ = sum(IoU) / (TP + FP/2 + FN/2)
//! SQ = sum(IoU) / TP            (0 when TP = 0)
//! RQ = TP / (TP + FP/2 + FN/2)
//! ```
//!
//! Overall, thing and stuff rows are unweighted means over the categories that
//! appear on either side.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::label::{decode_label, CategoryTaxonomy, PanopticEdgeMap};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSegment {
    pub label: u32,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
}

impl EdgeSegment {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// One segment per distinct nonzero label, ordered by label.
pub fn segments_of(map: &PanopticEdgeMap) -> Vec<EdgeSegment> {
    let mut by_label: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &label) in map.as_slice().iter().enumerate() {
        if label != 0 {
            by_label.entry(label).or_default().push(i);
        }
    }
    by_label.into_iter().map(|(label, pixels)| EdgeSegment { label, pixels }).collect()
}

/// `|a ∩ b| / |a ∪ b|` over ascending index lists; 0 when both are empty.
pub fn edge_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub pred: u32,
    pub gt: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// In match order: descending IoU, then gt label, then pred label.
    pub true_positives: Vec<MatchedPair>,
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(threshold))
    }
}

/// Greedy one-to-one matching of same-category segments with IoU above `threshold`.
pub fn match_segments(
    pred: &[EdgeSegment],
    gt: &[EdgeSegment],
    threshold: f64,
    taxonomy: &CategoryTaxonomy,
) -> Result<Matching> {
    check_threshold(threshold)?;
    let mut candidates = Vec::new();
    for p in pred {
        for g in gt {
            if taxonomy.category_of(p.label) != taxonomy.category_of(g.label) {
                continue;
            }
            let iou = edge_iou(&p.pixels, &g.pixels);
            if iou > threshold {
                candidates.push(MatchedPair { pred: p.label, gt: g.label, iou });
            }
        }
    }
    candidates.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.gt.cmp(&b.gt)).then(a.pred.cmp(&b.pred)));
    let mut used_pred = BTreeSet::new();
    let mut used_gt = BTreeSet::new();
    let mut matching = Matching::default();
    for c in candidates {
        if used_pred.contains(&c.pred) || used_gt.contains(&c.gt) {
            continue;
        }
        used_pred.insert(c.pred);
        used_gt.insert(c.gt);
        matching.true_positives.push(c);
    }
    matching.false_positives = pred.iter().map(|s| s.label).filter(|l| !used_pred.contains(l)).collect();
    matching.false_negatives = gt.iter().map(|s| s.label).filter(|l| !used_gt.contains(l)).collect();
    Ok(matching)
}

/// Raw per-category counts; additive across images.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub sum_iou: f64,
}

impl CategoryStats {
    pub fn merge(&mut self, other: &CategoryStats) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.sum_iou += other.sum_iou;
    }

    pub fn quality(&self) -> Quality {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom == 0.0 {
            return Quality::default();
        }
        let sq = if self.tp == 0 { 0.0 } else { self.sum_iou / self.tp as f64 };
        Quality { pq: self.sum_iou / denom, sq, rq: self.tp as f64 / denom }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub is_thing: bool,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub sum_iou: f64,
}

/// Serialized with the stable key set `pq sq rq pq_th sq_th rq_th pq_st sq_st
/// rq_st per_category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PQReport {
    pub iou_threshold: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_th: f64,
    pub sq_th: f64,
    pub rq_th: f64,
    pub pq_st: f64,
    pub sq_st: f64,
    pub rq_st: f64,
    pub num_categories: usize,
    pub num_things: usize,
    pub num_stuff: usize,
    pub per_category: BTreeMap<u16, CategoryRow>,
}

fn mean(rows: &[&CategoryRow]) -> Quality {
    if rows.is_empty() {
        return Quality::default();
    }
    let n = rows.len() as f64;
    Quality {
        pq: rows.iter().map(|r| r.pq).sum::<f64>() / n,
        sq: rows.iter().map(|r| r.sq).sum::<f64>() / n,
        rq: rows.iter().map(|r| r.rq).sum::<f64>() / n,
    }
}

impl PQReport {
    /// Aggregates per-category counts. Categories with no segment on either
    /// side should not be present in `stats`.
    pub fn from_stats(stats: &BTreeMap<u16, CategoryStats>, taxonomy: &CategoryTaxonomy, threshold: f64) -> Self {
        let per_category: BTreeMap<u16, CategoryRow> = stats
            .iter()
            .map(|(&c, s)| {
                let q = s.quality();
                let row = CategoryRow {
                    is_thing: taxonomy.is_thing(c),
                    pq: q.pq,
                    sq: q.sq,
                    rq: q.rq,
                    tp: s.tp,
                    fp: s.fp,
                    fn_: s.fn_,
                    sum_iou: s.sum_iou,
                };
                (c, row)
            })
            .collect();
        let all: Vec<&CategoryRow> = per_category.values().collect();
        let things: Vec<&CategoryRow> = all.iter().copied().filter(|r| r.is_thing).collect();
        let stuff: Vec<&CategoryRow> = all.iter().copied().filter(|r| !r.is_thing).collect();
        let (o, t, s) = (mean(&all), mean(&things), mean(&stuff));
        PQReport {
            iou_threshold: threshold,
            pq: o.pq,
            sq: o.sq,
            rq: o.rq,
            pq_th: t.pq,
            sq_th: t.sq,
            rq_th: t.rq,
            pq_st: s.pq,
            sq_st: s.sq,
            rq_st: s.rq,
            num_categories: all.len(),
            num_things: things.len(),
            num_stuff: stuff.len(),
            per_category,
        }
    }

    pub fn overall(&self) -> Quality {
        Quality { pq: self.pq, sq: self.sq, rq: self.rq }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Chebyshev dilation applied to every segment before IoU; 0 keeps plain pixel sets.
    pub dilation: usize,
    /// Pixels set to `true` are removed from both maps before evaluation.
    pub ignore: Option<Grid<bool>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_IOU_THRESHOLD, dilation: 0, ignore: None }
    }
}

impl EvalOptions {
    pub fn with_threshold(threshold: f64) -> Self {
        Self { threshold, ..Self::default() }
    }
}

fn dilate(pixels: &[usize], height: usize, width: usize, radius: usize) -> Vec<usize> {
    if radius == 0 {
        return pixels.to_vec();
    }
    let mut mask = vec![false; height * width];
    for &i in pixels {
        let (y, x) = (i / width, i % width);
        for yy in y.saturating_sub(radius)..=(y + radius).min(height - 1) {
            for xx in x.saturating_sub(radius)..=(x + radius).min(width - 1) {
                mask[yy * width + xx] = true;
            }
        }
    }
    mask.iter().enumerate().filter_map(|(i, &on)| on.then_some(i)).collect()
}

fn prepare(
    map: &PanopticEdgeMap,
    options: &EvalOptions,
    taxonomy: &CategoryTaxonomy,
) -> Result<Vec<EdgeSegment>> {
    for &label in map.as_slice() {
        decode_label(label, taxonomy).map_err(|_| Error::TaxonomyMismatch)?;
    }
    let masked;
    let map = match &options.ignore {
        Some(ignore) => {
            map.check_shape(ignore)?;
            masked = Grid::from_fn(map.height(), map.width(), |y, x| {
                if ignore.get(y, x) {
                    0
                } else {
                    map.get(y, x)
                }
            });
            &masked
        }
        None => map,
    };
    let mut segments = segments_of(map);
    if options.dilation > 0 {
        for s in &mut segments {
            s.pixels = dilate(&s.pixels, map.height(), map.width(), options.dilation);
        }
    }
    Ok(segments)
}

/// Per-category counts for one image pair.
pub fn edge_pq_stats(
    pred: &PanopticEdgeMap,
    gt: &PanopticEdgeMap,
    taxonomy: &CategoryTaxonomy,
    options: &EvalOptions,
) -> Result<BTreeMap<u16, CategoryStats>> {
    check_threshold(options.threshold)?;
    gt.check_shape(pred)?;
    let pred_segments = prepare(pred, options, taxonomy)?;
    let gt_segments = prepare(gt, options, taxonomy)?;
    let matching = match_segments(&pred_segments, &gt_segments, options.threshold, taxonomy)?;
    let category = |label: u32| taxonomy.category_of(label) as u16;
    let mut stats: BTreeMap<u16, CategoryStats> = BTreeMap::new();
    for s in pred_segments.iter().chain(&gt_segments) {
        stats.entry(category(s.label)).or_default();
    }
    for m in &matching.true_positives {
        let e = stats.entry(category(m.gt)).or_default();
        e.tp += 1;
        e.sum_iou += m.iou;
    }
    for &l in &matching.false_positives {
        stats.entry(category(l)).or_default().fp += 1;
    }
    for &l in &matching.false_negatives {
        stats.entry(category(l)).or_default().fn_ += 1;
    }
    Ok(stats)
}

/// Edge PQ/SQ/RQ of one prediction against its ground truth.
pub fn edge_pq(
    pred: &PanopticEdgeMap,
    gt: &PanopticEdgeMap,
    taxonomy: &CategoryTaxonomy,
    options: &EvalOptions,
) -> Result<PQReport> {
    let stats = edge_pq_stats(pred, gt, taxonomy, options)?;
    Ok(PQReport::from_stats(&stats, taxonomy, options.threshold))
}

/// Merges per-image counts in the order given.
pub fn merge_stats<'a>(
    per_image: impl IntoIterator<Item = &'a BTreeMap<u16, CategoryStats>>,
) -> BTreeMap<u16, CategoryStats> {
    let mut total: BTreeMap<u16, CategoryStats> = BTreeMap::new();
    for stats in per_image {
        for (c, s) in stats {
            total.entry(*c).or_default().merge(s);
        }
    }
    total
}
