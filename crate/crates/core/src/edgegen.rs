//! Ground-truth panoptic edges and instance training targets.
//!
//! Edges come from per-segment erosion followed by XOR with the segment mask:
//! a pixel is an edge pixel of its segment iff some in-image pixel within
//! Chebyshev distance `r` belongs to another segment. Out-of-image pixels
//! count as same-segment, so the frame border never produces edges.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::label::{decode_label, CategoryTaxonomy, PanopticEdgeMap, PanopticSegMap};

/// Full-resolution Gaussian sigma, in pixels, at a 1024-pixel short side.
pub const REFERENCE_SIGMA: f64 = 8.0;
pub const REFERENCE_SHORT_SIDE: f64 = 1024.0;

/// Edge half-width `r` used by the erosion (r >= 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeWidth(u32);

impl EdgeWidth {
    pub fn new(r: u32) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidEdgeWidth(r));
        }
        Ok(Self(r))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl Default for EdgeWidth {
    fn default() -> Self {
        Self(2)
    }
}

/// 1 x H x W center heatmap, values in [0, 1].
pub type CenterHeatmap = Grid<f64>;

/// Per-pixel offset from a pixel to its instance center (`center - pixel`).
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub dy: Grid<f64>,
    pub dx: Grid<f64>,
}

impl OffsetField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { dy: Grid::filled(height, width, 0.0), dx: Grid::filled(height, width, 0.0) }
    }

    pub fn new(dy: Grid<f64>, dx: Grid<f64>) -> Result<Self> {
        dy.check_shape(&dx)?;
        Ok(Self { dy, dx })
    }

    pub fn height(&self) -> usize {
        self.dy.height()
    }

    pub fn width(&self) -> usize {
        self.dy.width()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        (self.dy.get(row, col), self.dx.get(row, col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceCenter {
    pub category: u16,
    pub instance_id: u32,
    pub cy: f64,
    pub cx: f64,
}

/// Sigma for an image of the given size, scaled from 8 px at a 1024-pixel
/// short side and never below 1 px.
pub fn default_sigma(height: usize, width: usize) -> f64 {
    let short = height.min(width) as f64;
    (REFERENCE_SIGMA * short / REFERENCE_SHORT_SIDE).max(1.0)
}

fn check_segment_labels(seg: &PanopticSegMap, taxonomy: &CategoryTaxonomy) -> Result<()> {
    for (row, col, label) in seg.indexed() {
        let ok = match decode_label(label, taxonomy) {
            Ok(Some(l)) => !(taxonomy.is_stuff(l.category) && l.instance_id != 0),
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidSegmentLabel { label, row, col });
        }
    }
    Ok(())
}

/// Windowed min and max over the clipped (2r+1)^2 Chebyshev square.
fn window_min_max(seg: &Grid<u32>, r: usize) -> (Grid<u32>, Grid<u32>) {
    let (h, w) = seg.shape();
    let mut row_min = Grid::filled(h, w, 0u32);
    let mut row_max = Grid::filled(h, w, 0u32);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let (mut mn, mut mx) = (u32::MAX, 0);
            for xx in lo..=hi {
                let v = seg.get(y, xx);
                mn = mn.min(v);
                mx = mx.max(v);
            }
            row_min.set(y, x, mn);
            row_max.set(y, x, mx);
        }
    }
    let mut min = Grid::filled(h, w, 0u32);
    let mut max = Grid::filled(h, w, 0u32);
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let (mut mn, mut mx) = (u32::MAX, 0);
            for yy in lo..=hi {
                mn = mn.min(row_min.get(yy, x));
                mx = mx.max(row_max.get(yy, x));
            }
            min.set(y, x, mn);
            max.set(y, x, mx);
        }
    }
    (min, max)
}

/// Converts a panoptic segmentation map into a panoptic edge map of width `r`.
pub fn panoptic_to_edges(
    seg: &PanopticSegMap,
    width: EdgeWidth,
    taxonomy: &CategoryTaxonomy,
) -> Result<PanopticEdgeMap> {
    check_segment_labels(seg, taxonomy)?;
    let (h, w) = seg.shape();
    if h == 0 || w == 0 {
        return Ok(Grid::filled(h, w, 0));
    }
    // The window always contains the pixel itself, so the segment survives
    // erosion at p iff the window holds a single label.
    let (min, max) = window_min_max(seg, width.get() as usize);
    Ok(Grid::from_fn(h, w, |y, x| {
        if min.get(y, x) == max.get(y, x) {
            0
        } else {
            seg.get(y, x)
        }
    }))
}

/// Centroid of each thing instance's edge pixels, ordered by encoded label.
pub fn instance_centers(edges: &PanopticEdgeMap, taxonomy: &CategoryTaxonomy) -> Vec<InstanceCenter> {
    let mut sums: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for (row, col, label) in edges.indexed() {
        if let Ok(Some(l)) = decode_label(label, taxonomy) {
            if taxonomy.is_thing(l.category) {
                let e = sums.entry(label).or_insert((0.0, 0.0, 0));
                e.0 += row as f64;
                e.1 += col as f64;
                e.2 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(label, (sy, sx, n))| InstanceCenter {
            category: (label / taxonomy.stride()) as u16,
            instance_id: label % taxonomy.stride(),
            cy: sy / n as f64,
            cx: sx / n as f64,
        })
        .collect()
}

/// Per-pixel maximum of unnormalized Gaussians placed at the centers.
pub fn make_center_heatmap(
    centers: &[InstanceCenter],
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<CenterHeatmap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(Grid::from_fn(height, width, |y, x| {
        centers.iter().fold(0.0f64, |acc, c| {
            let dy = y as f64 - c.cy;
            let dx = x as f64 - c.cx;
            acc.max((-(dy * dy + dx * dx) / denom).exp())
        })
    }))
}

/// Offsets from each thing-edge pixel to its instance center; zero elsewhere.
pub fn make_offset_field(
    edges: &PanopticEdgeMap,
    centers: &[InstanceCenter],
    taxonomy: &CategoryTaxonomy,
) -> Result<OffsetField> {
    let lookup: BTreeMap<u32, (f64, f64)> = centers
        .iter()
        .map(|c| (u32::from(c.category) * taxonomy.stride() + c.instance_id, (c.cy, c.cx)))
        .collect();
    let mut field = OffsetField::zeros(edges.height(), edges.width());
    for (row, col, label) in edges.indexed() {
        let Ok(Some(l)) = decode_label(label, taxonomy) else { continue };
        if !taxonomy.is_thing(l.category) {
            continue;
        }
        let &(cy, cx) = lookup.get(&label).ok_or(Error::MissingCenter { label })?;
        field.dy.set(row, col, cy - row as f64);
        field.dx.set(row, col, cx - col as f64);
    }
    Ok(field)
}

/// Every ground-truth target derived from one segmentation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub edges: PanopticEdgeMap,
    pub semantic: crate::label::SemanticEdgeMap,
    pub centers: Vec<InstanceCenter>,
    pub heatmap: CenterHeatmap,
    pub offsets: OffsetField,
}

pub fn make_targets(
    seg: &PanopticSegMap,
    width: EdgeWidth,
    sigma: f64,
    taxonomy: &CategoryTaxonomy,
) -> Result<Targets> {
    let edges = panoptic_to_edges(seg, width, taxonomy)?;
    let centers = instance_centers(&edges, taxonomy);
    let heatmap = make_center_heatmap(&centers, seg.height(), seg.width(), sigma)?;
    let offsets = make_offset_field(&edges, &centers, taxonomy)?;
    let semantic = crate::label::semantic_of(&edges, taxonomy);
    Ok(Targets { edges, semantic, centers, heatmap, offsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::validate_map;

    fn tax() -> CategoryTaxonomy {
        CategoryTaxonomy::cityscapes()
    }

    fn square_scene() -> PanopticSegMap {
        Grid::from_fn(8, 8, |y, x| if (2..=5).contains(&y) && (2..=5).contains(&x) { 1001 } else { 11_000 })
    }

    fn count(map: &PanopticEdgeMap, label: u32) -> usize {
        map.as_slice().iter().filter(|&&l| l == label).count()
    }

    #[test]
    fn square_r1_ring_counts() {
        let edges = panoptic_to_edges(&square_scene(), EdgeWidth::new(1).unwrap(), &tax()).unwrap();
        assert_eq!(count(&edges, 1001), 12);
        assert_eq!(count(&edges, 11_000), 20);
        assert_eq!(edges.get(3, 3), 0);
        assert_eq!(edges.get(0, 0), 0);
        assert!(validate_map(&edges, &tax()).is_valid());
    }

    #[test]
    fn square_r2_consumes_whole_square() {
        let edges = panoptic_to_edges(&square_scene(), EdgeWidth::new(2).unwrap(), &tax()).unwrap();
        assert_eq!(count(&edges, 1001), 16);
    }

    #[test]
    fn uniform_map_has_no_edges() {
        let seg = Grid::filled(9, 7, 12_000u32);
        for r in 1..4 {
            let edges = panoptic_to_edges(&seg, EdgeWidth::new(r).unwrap(), &tax()).unwrap();
            assert!(edges.as_slice().iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn rejects_invalid_segment_labels() {
        let mut seg = Grid::filled(3, 3, 12_000u32);
        seg.set(1, 2, 0);
        assert!(matches!(
            panoptic_to_edges(&seg, EdgeWidth::default(), &tax()),
            Err(Error::InvalidSegmentLabel { label: 0, row: 1, col: 2 })
        ));
        seg.set(1, 2, 12_003);
        assert!(panoptic_to_edges(&seg, EdgeWidth::default(), &tax()).is_err());
        assert!(EdgeWidth::new(0).is_err());
    }

    #[test]
    fn ring_center_is_symmetric() {
        let edges = panoptic_to_edges(&square_scene(), EdgeWidth::new(1).unwrap(), &tax()).unwrap();
        let centers = instance_centers(&edges, &tax());
        assert_eq!(centers.len(), 1);
        assert_eq!((centers[0].category, centers[0].instance_id), (1, 1));
        assert_eq!((centers[0].cy, centers[0].cx), (3.5, 3.5));
    }

    #[test]
    fn no_thing_edges_no_centers() {
        let seg = Grid::from_fn(6, 6, |y, _| if y < 3 { 9_000 } else { 10_000 });
        let edges = panoptic_to_edges(&seg, EdgeWidth::new(1).unwrap(), &tax()).unwrap();
        assert!(instance_centers(&edges, &tax()).is_empty());
        let field = make_offset_field(&edges, &[], &tax()).unwrap();
        assert!(field.dy.as_slice().iter().chain(field.dx.as_slice()).all(|&v| v == 0.0));
    }

    #[test]
    fn two_instances_get_their_own_means() {
        let mut edges = Grid::filled(5, 5, 0u32);
        edges.set(0, 0, 2001);
        edges.set(0, 2, 2001);
        edges.set(4, 4, 2002);
        edges.set(3, 4, 2002);
        edges.set(2, 2, 11_000);
        let centers = instance_centers(&edges, &tax());
        assert_eq!(centers.len(), 2);
        assert_eq!((centers[0].cy, centers[0].cx), (0.0, 1.0));
        assert_eq!((centers[1].cy, centers[1].cx), (3.5, 4.0));
    }

    #[test]
    fn heatmap_values() {
        let c = InstanceCenter { category: 1, instance_id: 1, cy: 4.0, cx: 4.0 };
        let hm = make_center_heatmap(&[c], 9, 9, 2.0).unwrap();
        assert_eq!(hm.get(4, 4), 1.0);
        // distance sigma = 2 along a row
        assert!((hm.get(4, 6) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((hm.get(4, 6) - 0.60653).abs() < 1e-5);
        assert!(hm.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(matches!(make_center_heatmap(&[c], 3, 3, 0.0), Err(Error::NonPositiveSigma(_))));
        assert!(make_center_heatmap(&[], 3, 4, 1.0).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_two_centers_is_pointwise_max() {
        let a = InstanceCenter { category: 1, instance_id: 1, cy: 2.0, cx: 2.5 };
        let b = InstanceCenter { category: 2, instance_id: 1, cy: 7.3, cx: 6.0 };
        let both = make_center_heatmap(&[a, b], 10, 10, 1.7).unwrap();
        let ha = make_center_heatmap(&[a], 10, 10, 1.7).unwrap();
        let hb = make_center_heatmap(&[b], 10, 10, 1.7).unwrap();
        for i in 0..100 {
            assert_eq!(both.as_slice()[i], ha.as_slice()[i].max(hb.as_slice()[i]));
        }
    }

    #[test]
    fn offsets_point_to_centers() {
        let edges = panoptic_to_edges(&square_scene(), EdgeWidth::new(1).unwrap(), &tax()).unwrap();
        let centers = instance_centers(&edges, &tax());
        let field = make_offset_field(&edges, &centers, &tax()).unwrap();
        assert_eq!(field.at(2, 2), (1.5, 1.5));
        // stuff edge pixel
        assert_eq!(edges.get(1, 1), 11_000);
        assert_eq!(field.at(1, 1), (0.0, 0.0));
        assert!(matches!(make_offset_field(&edges, &[], &tax()), Err(Error::MissingCenter { label: 1001 })));
    }

    #[test]
    fn default_sigma_scales_with_size() {
        assert_eq!(default_sigma(1024, 2048), 8.0);
        assert_eq!(default_sigma(512, 1024), 4.0);
        assert_eq!(default_sigma(64, 64), 1.0);
    }
}
