//! Panoptic edge fusion.
//!
//! Heatmap peaks are clustered into discrete centers by thresholding and
//! windowed non-maximum suppression. Every thing-edge pixel then follows its
//! offset vector and joins the clustered center nearest the endpoint. The
//! result is merged with the semantic edge map into panoptic labels.

use crate::edgegen::{CenterHeatmap, OffsetField};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::label::{canonicalize_instance_ids, CategoryTaxonomy, PanopticEdgeMap, SemanticEdgeMap};

/// Instance index for pixels that are not thing edges.
pub const NO_INSTANCE: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    center_threshold: f64,
    nms_window: usize,
    max_instances: usize,
    taxonomy: CategoryTaxonomy,
}

impl FusionParams {
    pub const DEFAULT_THRESHOLD: f64 = 0.1;
    pub const DEFAULT_NMS_WINDOW: usize = 7;
    pub const DEFAULT_MAX_INSTANCES: usize = 200;

    pub fn new(
        center_threshold: f64,
        nms_window: usize,
        max_instances: usize,
        taxonomy: CategoryTaxonomy,
    ) -> Result<Self> {
        if !(center_threshold > 0.0 && center_threshold < 1.0) {
            return Err(Error::InvalidFusionParams(format!(
                "center threshold must lie in (0, 1), got {center_threshold}"
            )));
        }
        if nms_window % 2 == 0 {
            return Err(Error::InvalidFusionParams(format!("NMS window must be odd, got {nms_window}")));
        }
        if max_instances == 0 || max_instances as u64 >= u64::from(taxonomy.stride()) {
            return Err(Error::InvalidFusionParams(format!(
                "max instances must lie in 1..{}, got {max_instances}",
                taxonomy.stride()
            )));
        }
        Ok(Self { center_threshold, nms_window, max_instances, taxonomy })
    }

    pub fn with_taxonomy(taxonomy: CategoryTaxonomy) -> Self {
        let max = Self::DEFAULT_MAX_INSTANCES.min(taxonomy.stride().saturating_sub(1) as usize).max(1);
        Self::new(Self::DEFAULT_THRESHOLD, Self::DEFAULT_NMS_WINDOW, max, taxonomy)
            .expect("defaults are valid for any stride above 1")
    }

    pub fn center_threshold(&self) -> f64 {
        self.center_threshold
    }

    pub fn nms_window(&self) -> usize {
        self.nms_window
    }

    pub fn max_instances(&self) -> usize {
        self.max_instances
    }

    pub fn taxonomy(&self) -> &CategoryTaxonomy {
        &self.taxonomy
    }
}

impl Default for FusionParams {
    fn default() -> Self {
        Self::with_taxonomy(CategoryTaxonomy::cityscapes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteredCenter {
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Centers sorted by descending score.
pub type ClusteredCenters = Vec<ClusteredCenter>;

/// Pixels above threshold that dominate their NMS window. Equal values are
/// resolved in favor of the earlier pixel in row-major order.
pub fn extract_centers(heatmap: &CenterHeatmap, params: &FusionParams) -> ClusteredCenters {
    let (h, w) = heatmap.shape();
    let half = params.nms_window / 2;
    let mut out = Vec::new();
    for (row, col, v) in heatmap.indexed() {
        if !(v >= params.center_threshold) {
            continue;
        }
        let dominates = (row.saturating_sub(half)..=(row + half).min(h - 1)).all(|y| {
            (col.saturating_sub(half)..=(col + half).min(w - 1)).all(|x| {
                let other = heatmap.get(y, x);
                other < v || (other == v && (y, x) >= (row, col))
            })
        });
        if dominates {
            out.push(ClusteredCenter { row, col, score: v });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.row, a.col).cmp(&(b.row, b.col))));
    out.truncate(params.max_instances);
    out
}

fn check_inputs(semantic: &SemanticEdgeMap, offsets: &OffsetField, taxonomy: &CategoryTaxonomy) -> Result<()> {
    semantic.check_shape(&offsets.dy)?;
    semantic.check_shape(&offsets.dx)?;
    if let Some(&bad) = semantic.as_slice().iter().find(|&&c| c > taxonomy.num_categories()) {
        return Err(Error::CategoryOutOfRange { category: bad.into(), max: taxonomy.num_categories() });
    }
    Ok(())
}

/// Per-pixel 1-based index into `centers` for thing pixels, [`NO_INSTANCE`]
/// elsewhere. With no centers every thing pixel falls back to index 1.
pub fn assign_instances(
    semantic: &SemanticEdgeMap,
    offsets: &OffsetField,
    centers: &[ClusteredCenter],
    params: &FusionParams,
) -> Result<Grid<u32>> {
    let taxonomy = &params.taxonomy;
    check_inputs(semantic, offsets, taxonomy)?;
    Ok(Grid::from_fn(semantic.height(), semantic.width(), |row, col| {
        if !taxonomy.is_thing(semantic.get(row, col)) {
            return NO_INSTANCE;
        }
        if centers.is_empty() {
            return 1;
        }
        let (dy, dx) = offsets.at(row, col);
        let (qy, qx) = (row as f64 + dy, col as f64 + dx);
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        // centers are score-ordered, so strict < keeps the higher score on ties
        for (i, c) in centers.iter().enumerate() {
            let ey = qy - c.row as f64;
            let ex = qx - c.col as f64;
            let d = ey * ey + ex * ex;
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best as u32 + 1
    }))
}

/// Fuses semantic edges, the center heatmap and offsets into panoptic edges.
pub fn fuse_panoptic(
    semantic: &SemanticEdgeMap,
    heatmap: &CenterHeatmap,
    offsets: &OffsetField,
    params: &FusionParams,
) -> Result<PanopticEdgeMap> {
    let taxonomy = &params.taxonomy;
    check_inputs(semantic, offsets, taxonomy)?;
    semantic.check_shape(heatmap)?;
    let has_thing = semantic.as_slice().iter().any(|&c| taxonomy.is_thing(c));
    let centers = if has_thing { extract_centers(heatmap, params) } else { Vec::new() };
    let instances = assign_instances(semantic, offsets, &centers, params)?;
    let stride = taxonomy.stride();
    let raw = Grid::from_fn(semantic.height(), semantic.width(), |row, col| {
        let category = semantic.get(row, col);
        if category == 0 {
            0
        } else if taxonomy.is_thing(category) {
            u32::from(category) * stride + instances.get(row, col)
        } else {
            u32::from(category) * stride
        }
    });
    Ok(canonicalize_instance_ids(&raw, taxonomy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::validate_map;

    fn params(window: usize) -> FusionParams {
        FusionParams::new(0.1, window, 200, CategoryTaxonomy::cityscapes()).unwrap()
    }

    #[test]
    fn params_validation() {
        let t = CategoryTaxonomy::cityscapes();
        assert!(FusionParams::new(0.0, 7, 10, t.clone()).is_err());
        assert!(FusionParams::new(1.0, 7, 10, t.clone()).is_err());
        assert!(FusionParams::new(0.5, 6, 10, t.clone()).is_err());
        assert!(FusionParams::new(0.5, 7, 0, t.clone()).is_err());
        assert!(FusionParams::new(0.5, 7, 1000, t.clone()).is_err());
        assert!(FusionParams::new(0.5, 7, 999, t).is_ok());
        let d = FusionParams::default();
        assert_eq!((d.center_threshold(), d.nms_window(), d.max_instances()), (0.1, 7, 200));
    }

    #[test]
    fn lone_peak() {
        let mut hm = Grid::filled(11, 11, 0.0);
        hm.set(5, 5, 1.0);
        assert_eq!(extract_centers(&hm, &params(7)), vec![ClusteredCenter { row: 5, col: 5, score: 1.0 }]);
    }

    #[test]
    fn nearby_weaker_peak_suppressed() {
        let mut hm = Grid::filled(11, 11, 0.0);
        hm.set(5, 5, 0.9);
        hm.set(5, 7, 0.8);
        assert_eq!(extract_centers(&hm, &params(7)), vec![ClusteredCenter { row: 5, col: 5, score: 0.9 }]);
        // a 3-wide window no longer covers (5, 5) from (5, 7)
        assert_eq!(extract_centers(&hm, &params(3)).len(), 2);
    }

    #[test]
    fn below_threshold_is_empty() {
        let hm = Grid::from_fn(6, 6, |y, x| (y + x) as f64 * 0.005);
        assert!(extract_centers(&hm, &params(3)).is_empty());
    }

    #[test]
    fn plateau_keeps_first_pixel() {
        let mut hm = Grid::filled(6, 6, 0.0);
        for (y, x) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            hm.set(y, x, 0.7);
        }
        assert_eq!(extract_centers(&hm, &params(3)), vec![ClusteredCenter { row: 2, col: 2, score: 0.7 }]);
    }

    #[test]
    fn truncates_to_max_instances() {
        let mut hm = Grid::filled(1, 20, 0.0);
        for (i, x) in [0usize, 4, 8, 12, 16].iter().enumerate() {
            hm.set(0, *x, 0.5 + i as f64 * 0.1);
        }
        let p = FusionParams::new(0.1, 3, 2, CategoryTaxonomy::cityscapes()).unwrap();
        let c = extract_centers(&hm, &p);
        assert_eq!(c.iter().map(|c| c.col).collect::<Vec<_>>(), vec![16, 12]);
    }

    #[test]
    fn assignment_follows_offset() {
        let mut semantic = Grid::filled(50, 50, 0u16);
        semantic.set(10, 14, 1);
        semantic.set(20, 20, 12);
        let mut offsets = OffsetField::zeros(50, 50);
        offsets.dx.set(10, 14, -4.0);
        let centers = vec![
            ClusteredCenter { row: 10, col: 10, score: 0.9 },
            ClusteredCenter { row: 40, col: 40, score: 0.8 },
        ];
        let a = assign_instances(&semantic, &offsets, &centers, &params(7)).unwrap();
        assert_eq!(a.get(10, 14), 1);
        assert_eq!(a.get(20, 20), NO_INSTANCE);
        assert_eq!(a.get(0, 0), NO_INSTANCE);
    }

    #[test]
    fn equidistant_endpoint_goes_to_higher_score() {
        let mut semantic = Grid::filled(10, 10, 0u16);
        semantic.set(5, 5, 2);
        let offsets = OffsetField::zeros(10, 10);
        let centers = vec![
            ClusteredCenter { row: 5, col: 8, score: 0.9 },
            ClusteredCenter { row: 5, col: 2, score: 0.4 },
        ];
        let a = assign_instances(&semantic, &offsets, &centers, &params(3)).unwrap();
        assert_eq!(a.get(5, 5), 1);
        let swapped = vec![centers[1], centers[0]];
        // list order is score order; caller passing it unsorted gets first-listed
        assert_eq!(assign_instances(&semantic, &offsets, &swapped, &params(3)).unwrap().get(5, 5), 1);
    }

    #[test]
    fn empty_scene_fuses_to_zero() {
        let semantic = Grid::filled(8, 8, 0u16);
        let out = fuse_panoptic(&semantic, &Grid::filled(8, 8, 0.0), &OffsetField::zeros(8, 8), &params(7)).unwrap();
        assert!(out.as_slice().iter().all(|&l| l == 0));
    }

    #[test]
    fn stuff_only_scene_lifts_categories() {
        let semantic = Grid::from_fn(6, 6, |y, _| if y == 2 { 11 } else if y == 3 { 14 } else { 0 });
        let mut hm = Grid::filled(6, 6, 0.0);
        hm.set(1, 1, 1.0);
        let out = fuse_panoptic(&semantic, &hm, &OffsetField::zeros(6, 6), &params(7)).unwrap();
        assert_eq!(out.get(2, 0), 11_000);
        assert_eq!(out.get(3, 5), 14_000);
        assert_eq!(out.get(0, 0), 0);
    }

    #[test]
    fn fallback_when_no_centers() {
        let semantic = Grid::from_fn(4, 4, |y, x| if y == 0 { 3 } else if x == 0 { 5 } else { 0 });
        let out =
            fuse_panoptic(&semantic, &Grid::filled(4, 4, 0.0), &OffsetField::zeros(4, 4), &params(3)).unwrap();
        assert_eq!(out.get(0, 2), 3001);
        assert_eq!(out.get(2, 0), 5001);
        assert!(validate_map(&out, params(3).taxonomy()).is_valid());
    }

    #[test]
    fn rejects_shape_and_category_errors() {
        let semantic = Grid::filled(4, 4, 0u16);
        assert!(matches!(
            fuse_panoptic(&semantic, &Grid::filled(4, 5, 0.0), &OffsetField::zeros(4, 4), &params(3)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(fuse_panoptic(&semantic, &Grid::filled(4, 4, 0.0), &OffsetField::zeros(3, 4), &params(3)).is_err());
        let bad = Grid::filled(4, 4, 20u16);
        assert!(matches!(
            fuse_panoptic(&bad, &Grid::filled(4, 4, 0.0), &OffsetField::zeros(4, 4), &params(3)),
            Err(Error::CategoryOutOfRange { .. })
        ));
    }
}
