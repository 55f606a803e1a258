//! Independent reference implementations used by the integration and
//! acceptance suites. Nothing here calls the code paths it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use panedge::metrics::{CategoryRow, PQReport};
use panedge::{CategoryTaxonomy, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force edge rule: an edge pixel has an in-image pixel of another
/// label within Chebyshev distance `r`.
pub fn brute_force_edges(seg: &Grid<u32>, r: usize) -> Grid<u32> {
    let (h, w) = seg.shape();
    let r = r as i64;
    Grid::from_fn(h, w, |y, x| {
        let here = seg.get(y, x);
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                    continue;
                }
                if seg.get(yy as usize, xx as usize) != here {
                    return here;
                }
            }
        }
        0
    })
}

/// Random segmentation of axis-aligned blocks over stuff bands.
pub fn random_seg(rng: &mut ChaCha8Rng, taxonomy: &CategoryTaxonomy, max_side: usize) -> Grid<u32> {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let stride = taxonomy.stride();
    let stuff: Vec<u16> = taxonomy.stuff_categories().collect();
    let things: Vec<u16> = taxonomy.thing_categories().collect();
    let split = rng.random_range(0..=h);
    let (top, bottom) = (stuff[rng.random_range(0..stuff.len())], stuff[rng.random_range(0..stuff.len())]);
    let mut seg = Grid::from_fn(h, w, |y, _| u32::from(if y < split { top } else { bottom }) * stride);
    for i in 0..rng.random_range(0..6) {
        let (y0, y1) = ordered(rng.random_range(0..h), rng.random_range(0..h));
        let (x0, x1) = ordered(rng.random_range(0..w), rng.random_range(0..w));
        let label = u32::from(things[rng.random_range(0..things.len())]) * stride + 1 + i;
        for y in y0..=y1 {
            for x in x0..=x1 {
                seg.set(y, x, label);
            }
        }
    }
    seg
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Rectangle outline with the given label; clipped to the grid.
fn paint_outline(map: &mut Grid<u32>, label: u32, top: i64, left: i64, rows: i64, cols: i64) {
    let (h, w) = (map.height() as i64, map.width() as i64);
    for y in top..top + rows {
        for x in left..left + cols {
            let border = y == top || y == top + rows - 1 || x == left || x == left + cols - 1;
            if border && y >= 0 && x >= 0 && y < h && x < w {
                map.set(y as usize, x as usize, label);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Outline {
    label: u32,
    top: i64,
    left: i64,
    rows: i64,
    cols: i64,
}

/// A ground-truth / prediction pair of edge maps, at most 32x32 with at most
/// four segments per side. Predictions are shifted, relabeled, dropped or
/// invented copies of the ground truth outlines.
pub fn random_edge_pair(rng: &mut ChaCha8Rng, taxonomy: &CategoryTaxonomy) -> (Grid<u32>, Grid<u32>) {
    let h = rng.random_range(8..=32);
    let w = rng.random_range(8..=32);
    let stride = taxonomy.stride();
    let categories: [u16; 3] = [1, 2, 11];
    let mut next_id: HashMap<u16, u32> = HashMap::new();
    let mut make_label = |rng: &mut ChaCha8Rng| {
        let c = categories[rng.random_range(0..categories.len())];
        if taxonomy.is_stuff(c) {
            u32::from(c) * stride
        } else {
            let id = next_id.entry(c).or_insert(0);
            *id += 1;
            u32::from(c) * stride + *id
        }
    };
    let random_outline = |rng: &mut ChaCha8Rng, label| Outline {
        label,
        top: rng.random_range(0..h as i64 - 3),
        left: rng.random_range(0..w as i64 - 3),
        rows: rng.random_range(3..=(h as i64 / 2).max(3)),
        cols: rng.random_range(3..=(w as i64 / 2).max(3)),
    };
    let n_gt = rng.random_range(0..=4);
    let gt_outlines: Vec<Outline> = (0..n_gt).map(|_| {
        let l = make_label(rng);
        random_outline(rng, l)
    }).collect();

    let mut pred_outlines = Vec::new();
    for o in &gt_outlines {
        if rng.random_bool(0.15) {
            continue;
        }
        let label = if taxonomy.is_thing((o.label / stride) as u16) && rng.random_bool(0.5) {
            o.label + 500
        } else {
            o.label
        };
        pred_outlines.push(Outline {
            label,
            top: o.top + rng.random_range(-1..=1),
            left: o.left + rng.random_range(-1..=1),
            rows: (o.rows + rng.random_range(-1..=1)).max(2),
            cols: (o.cols + rng.random_range(-1..=1)).max(2),
        });
    }
    if pred_outlines.len() < 4 && rng.random_bool(0.3) {
        let l = make_label(rng) + 700 * u32::from(rng.random_bool(0.5));
        let l = if taxonomy.is_stuff((l / stride) as u16) { l / stride * stride } else { l };
        pred_outlines.push(random_outline(rng, l));
    }

    let paint = |outlines: &[Outline]| {
        let mut map = Grid::filled(h, w, 0u32);
        for o in outlines {
            paint_outline(&mut map, o.label, o.top, o.left, o.rows, o.cols);
        }
        map
    };
    (paint(&pred_outlines), paint(&gt_outlines))
}

pub fn labels_of(map: &Grid<u32>) -> BTreeSet<u32> {
    map.as_slice().iter().copied().filter(|&l| l != 0).collect()
}

/// IoU of two labels by scanning every pixel.
pub fn naive_iou(pred: &Grid<u32>, a: u32, gt: &Grid<u32>, b: u32) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let in_a = pred.get(y, x) == a;
            let in_b = gt.get(y, x) == b;
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// All candidate (pred, gt, iou) triples above threshold with equal category.
pub fn naive_candidates(
    pred: &Grid<u32>,
    gt: &Grid<u32>,
    taxonomy: &CategoryTaxonomy,
    threshold: f64,
) -> Vec<(u32, u32, f64)> {
    let stride = taxonomy.stride();
    let mut out = Vec::new();
    for &a in &labels_of(pred) {
        for &b in &labels_of(gt) {
            if a / stride != b / stride {
                continue;
            }
            let iou = naive_iou(pred, a, gt, b);
            if iou > threshold {
                out.push((a, b, iou));
            }
        }
    }
    out
}

/// Greedy matching and report built from scratch.
pub fn naive_edge_pq(pred: &Grid<u32>, gt: &Grid<u32>, taxonomy: &CategoryTaxonomy, threshold: f64) -> PQReport {
    let stride = taxonomy.stride();
    let mut candidates = naive_candidates(pred, gt, taxonomy, threshold);
    // descending IoU, then gt label, then pred label
    candidates.sort_by(|x, y| {
        y.2.partial_cmp(&x.2).unwrap().then(x.1.cmp(&y.1)).then(x.0.cmp(&y.0))
    });
    let mut pred_used = BTreeSet::new();
    let mut gt_used = BTreeSet::new();
    // category -> (tp, fp, fn, sum_iou)
    let mut table: BTreeMap<u16, (u64, u64, u64, f64)> = BTreeMap::new();
    for l in labels_of(pred).iter().chain(labels_of(gt).iter()) {
        table.entry((l / stride) as u16).or_insert((0, 0, 0, 0.0));
    }
    for (a, b, iou) in candidates {
        if pred_used.contains(&a) || gt_used.contains(&b) {
            continue;
        }
        pred_used.insert(a);
        gt_used.insert(b);
        let e = table.get_mut(&((b / stride) as u16)).unwrap();
        e.0 += 1;
        e.3 += iou;
    }
    for a in labels_of(pred) {
        if !pred_used.contains(&a) {
            table.get_mut(&((a / stride) as u16)).unwrap().1 += 1;
        }
    }
    for b in labels_of(gt) {
        if !gt_used.contains(&b) {
            table.get_mut(&((b / stride) as u16)).unwrap().2 += 1;
        }
    }
    let mut per_category = BTreeMap::new();
    for (&c, &(tp, fp, fn_, sum_iou)) in &table {
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        let (pq, sq, rq) = if denom == 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            (sum_iou / denom, if tp == 0 { 0.0 } else { sum_iou / tp as f64 }, tp as f64 / denom)
        };
        per_category.insert(
            c,
            CategoryRow { is_thing: taxonomy.is_thing(c), pq, sq, rq, tp, fp, fn_, sum_iou },
        );
    }
    let avg = |f: &dyn Fn(&CategoryRow) -> bool| {
        let rows: Vec<&CategoryRow> = per_category.values().filter(|r| f(r)).collect();
        if rows.is_empty() {
            return (0.0, 0.0, 0.0, 0);
        }
        let n = rows.len() as f64;
        let mut s = (0.0, 0.0, 0.0);
        for r in &rows {
            s.0 += r.pq;
            s.1 += r.sq;
            s.2 += r.rq;
        }
        (s.0 / n, s.1 / n, s.2 / n, rows.len())
    };
    let all = avg(&|_| true);
    let th = avg(&|r| r.is_thing);
    let st = avg(&|r| !r.is_thing);
    PQReport {
        iou_threshold: threshold,
        pq: all.0,
        sq: all.1,
        rq: all.2,
        pq_th: th.0,
        sq_th: th.1,
        rq_th: th.2,
        pq_st: st.0,
        sq_st: st.1,
        rq_st: st.2,
        num_categories: all.3,
        num_things: th.3,
        num_stuff: st.3,
        per_category,
    }
}

/// Maximum total IoU over all one-to-one matchings of candidate pairs.
pub fn exhaustive_max_iou(candidates: &[(u32, u32, f64)]) -> f64 {
    fn go(rest: &[(u32, u32, f64)], used_p: &mut Vec<u32>, used_g: &mut Vec<u32>) -> f64 {
        let Some((&(a, b, iou), tail)) = rest.split_first() else { return 0.0 };
        let skip = go(tail, used_p, used_g);
        if used_p.contains(&a) || used_g.contains(&b) {
            return skip;
        }
        used_p.push(a);
        used_g.push(b);
        let take = iou + go(tail, used_p, used_g);
        used_p.pop();
        used_g.pop();
        skip.max(take)
    }
    go(candidates, &mut Vec::new(), &mut Vec::new())
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
