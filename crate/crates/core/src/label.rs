//! Category taxonomy and the panoptic edge label encoding.
//!
//! A panoptic edge label packs a semantic category and an instance id into one
//! integer, `category * stride + instance_id`. The value 0 is reserved for
//! non-edge pixels, categories run from 1 to K, and stuff categories always
//! carry instance id 0.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Instance-id stride used when none is configured.
pub const DEFAULT_STRIDE: u32 = 1000;

/// H x W grid of encoded edge labels, 0 = non-edge.
pub type PanopticEdgeMap = Grid<u32>;
/// H x W grid of encoded segment labels; every pixel is assigned.
pub type PanopticSegMap = Grid<u32>;
/// H x W grid of categories in 0..=K, 0 = non-edge.
pub type SemanticEdgeMap = Grid<u16>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTaxonomy {
    num_categories: u16,
    // indexed by category; slot 0 unused
    is_thing: Vec<bool>,
    stride: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFile {
    num_categories: u16,
    thing_categories: Vec<u16>,
    stuff_categories: Vec<u16>,
    #[serde(default = "default_stride")]
    instance_stride: u32,
}

fn default_stride() -> u32 {
    DEFAULT_STRIDE
}

impl CategoryTaxonomy {
    pub fn new(
        num_categories: u16,
        things: impl IntoIterator<Item = u16>,
        stuff: impl IntoIterator<Item = u16>,
        stride: u32,
    ) -> Result<Self> {
        if num_categories == 0 {
            return Err(Error::InvalidTaxonomy("K must be positive".into()));
        }
        if stride == 0 {
            return Err(Error::InvalidTaxonomy("instance stride must be positive".into()));
        }
        if (u64::from(num_categories) + 1) * u64::from(stride) > u64::from(u32::MAX) {
            return Err(Error::InvalidTaxonomy("K * stride overflows 32-bit labels".into()));
        }
        let mut is_thing = vec![false; usize::from(num_categories) + 1];
        let mut seen = vec![false; usize::from(num_categories) + 1];
        for (set, thing) in [(things.into_iter().collect::<Vec<_>>(), true), (stuff.into_iter().collect(), false)] {
            for c in set {
                if c == 0 || c > num_categories {
                    return Err(Error::InvalidTaxonomy(format!("category {c} outside 1..={num_categories}")));
                }
                let slot = usize::from(c);
                if seen[slot] {
                    return Err(Error::InvalidTaxonomy(format!("category {c} listed twice")));
                }
                seen[slot] = true;
                is_thing[slot] = thing;
            }
        }
        if let Some(missing) = (1..=num_categories).find(|&c| !seen[usize::from(c)]) {
            return Err(Error::InvalidTaxonomy(format!("category {missing} is neither thing nor stuff")));
        }
        Ok(Self { num_categories, is_thing, stride })
    }

    /// 19 categories: things 1..=8, stuff 9..=19, stride 1000.
    pub fn cityscapes() -> Self {
        Self::new(19, 1..=8, 9..=19, DEFAULT_STRIDE).expect("static taxonomy is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TaxonomyFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(file.num_categories, file.thing_categories, file.stuff_categories, file.instance_stride)
    }

    pub fn to_toml_string(&self) -> String {
        let file = TaxonomyFile {
            num_categories: self.num_categories,
            thing_categories: self.thing_categories().collect(),
            stuff_categories: self.stuff_categories().collect(),
            instance_stride: self.stride,
        };
        toml::to_string(&file).expect("taxonomy serializes")
    }

    pub fn num_categories(&self) -> u16 {
        self.num_categories
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn with_stride(&self, stride: u32) -> Result<Self> {
        Self::new(self.num_categories, self.thing_categories(), self.stuff_categories(), stride)
    }

    pub fn contains(&self, category: u16) -> bool {
        category >= 1 && category <= self.num_categories
    }

    pub fn is_thing(&self, category: u16) -> bool {
        self.contains(category) && self.is_thing[usize::from(category)]
    }

    pub fn is_stuff(&self, category: u16) -> bool {
        self.contains(category) && !self.is_thing[usize::from(category)]
    }

    pub fn thing_categories(&self) -> impl Iterator<Item = u16> + '_ {
        (1..=self.num_categories).filter(|&c| self.is_thing(c))
    }

    pub fn stuff_categories(&self) -> impl Iterator<Item = u16> + '_ {
        (1..=self.num_categories).filter(|&c| self.is_stuff(c))
    }

    pub fn encode(&self, category: u16, instance_id: u32) -> Result<u32> {
        encode_label(category, instance_id, self)
    }

    pub fn decode(&self, encoded: u32) -> Result<Option<PanopticEdgeLabel>> {
        decode_label(encoded, self)
    }

    /// Category component of a nonzero label, or 0 for non-edge. Does not validate.
    #[inline]
    pub fn category_of(&self, encoded: u32) -> u32 {
        encoded / self.stride
    }
}

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        Self::cityscapes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PanopticEdgeLabel {
    pub category: u16,
    pub instance_id: u32,
}

pub fn encode_label(category: u16, instance_id: u32, taxonomy: &CategoryTaxonomy) -> Result<u32> {
    if !taxonomy.contains(category) {
        return Err(Error::CategoryOutOfRange { category: category.into(), max: taxonomy.num_categories });
    }
    if instance_id >= taxonomy.stride {
        return Err(Error::InstanceIdOverflow { instance_id, stride: taxonomy.stride });
    }
    if taxonomy.is_stuff(category) && instance_id != 0 {
        return Err(Error::StuffWithNonzeroInstance { category, instance_id });
    }
    Ok(u32::from(category) * taxonomy.stride + instance_id)
}

/// Decodes a label. `Ok(None)` is the non-edge sentinel.
pub fn decode_label(encoded: u32, taxonomy: &CategoryTaxonomy) -> Result<Option<PanopticEdgeLabel>> {
    if encoded == 0 {
        return Ok(None);
    }
    let category = encoded / taxonomy.stride;
    if category == 0 || category > u32::from(taxonomy.num_categories) {
        return Err(Error::MalformedLabel(encoded));
    }
    Ok(Some(PanopticEdgeLabel { category: category as u16, instance_id: encoded % taxonomy.stride }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// Nonzero label whose category component is outside 1..=K.
    MalformedLabel,
    /// Stuff category with a nonzero instance id.
    StuffWithNonzeroInstance,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::MalformedLabel => f.write_str("malformed label"),
            ViolationKind::StuffWithNonzeroInstance => f.write_str("stuff label with nonzero instance id"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub row: usize,
    pub col: usize,
    pub label: u32,
    /// Number of pixels violating this invariant.
    pub count: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} at ({}, {}) [{} pixel(s)]",
            self.kind, self.label, self.row, self.col, self.count
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every pixel of an edge map against the taxonomy. One entry per
/// violated invariant, located at its first offending pixel in row-major order.
pub fn validate_map(map: &PanopticEdgeMap, taxonomy: &CategoryTaxonomy) -> ValidationReport {
    let mut found: Vec<Violation> = Vec::new();
    let mut record = |kind, row, col, label| match found.iter_mut().find(|v| v.kind == kind) {
        Some(v) => v.count += 1,
        None => found.push(Violation { kind, row, col, label, count: 1 }),
    };
    for (row, col, label) in map.indexed() {
        match decode_label(label, taxonomy) {
            Ok(None) => {}
            Ok(Some(l)) => {
                if taxonomy.is_stuff(l.category) && l.instance_id != 0 {
                    record(ViolationKind::StuffWithNonzeroInstance, row, col, label);
                }
            }
            Err(_) => record(ViolationKind::MalformedLabel, row, col, label),
        }
    }
    found.sort_by_key(|v| v.kind);
    ValidationReport { violations: found }
}

/// Renumbers thing instance ids to 1..=n per category, in order of first
/// row-major occurrence. Stuff, non-edge and undecodable labels pass through.
pub fn canonicalize_instance_ids(map: &PanopticEdgeMap, taxonomy: &CategoryTaxonomy) -> PanopticEdgeMap {
    let stride = taxonomy.stride;
    let mut renames: HashMap<u32, u32> = HashMap::new();
    let mut next_id: HashMap<u32, u32> = HashMap::new();
    map.map(|label| {
        let category = label / stride;
        if label == 0 || category > u32::from(u16::MAX) || !taxonomy.is_thing(category as u16) {
            return label;
        }
        *renames.entry(label).or_insert_with(|| {
            let n = next_id.entry(category).or_insert(0);
            *n += 1;
            category * stride + *n
        })
    })
}

/// Drops instance ids, keeping categories. Labels that do not decode map to 0.
pub fn semantic_of(map: &PanopticEdgeMap, taxonomy: &CategoryTaxonomy) -> SemanticEdgeMap {
    map.map(|label| match decode_label(label, taxonomy) {
        Ok(Some(l)) => l.category,
        _ => 0,
    })
}

/// Distinct nonzero labels in the map.
pub fn distinct_labels(map: &PanopticEdgeMap) -> BTreeSet<u32> {
    map.as_slice().iter().copied().filter(|&l| l != 0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> CategoryTaxonomy {
        CategoryTaxonomy::cityscapes()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_label(5, 3, &tax()).unwrap(), 5003);
        assert_eq!(encode_label(1, 0, &tax()).unwrap(), 1000);
        assert!(matches!(encode_label(11, 7, &tax()), Err(Error::StuffWithNonzeroInstance { .. })));
        assert!(matches!(encode_label(0, 1, &tax()), Err(Error::CategoryOutOfRange { .. })));
        assert!(matches!(encode_label(20, 1, &tax()), Err(Error::CategoryOutOfRange { .. })));
        assert!(matches!(encode_label(3, 1000, &tax()), Err(Error::InstanceIdOverflow { .. })));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_label(5003, &tax()).unwrap(), Some(PanopticEdgeLabel { category: 5, instance_id: 3 }));
        assert_eq!(decode_label(0, &tax()).unwrap(), None);
        assert!(matches!(decode_label(25000, &tax()), Err(Error::MalformedLabel(25000))));
        assert!(matches!(decode_label(999, &tax()), Err(Error::MalformedLabel(999))));
    }

    #[test]
    fn taxonomy_rejects_overlap_and_gaps() {
        assert!(CategoryTaxonomy::new(3, [1, 2], [2, 3], 1000).is_err());
        assert!(CategoryTaxonomy::new(3, [1], [3], 1000).is_err());
        assert!(CategoryTaxonomy::new(3, [1], [2, 3, 4], 1000).is_err());
        assert!(CategoryTaxonomy::new(3, [1], [2, 3], 0).is_err());
        let t = CategoryTaxonomy::new(3, [1], [2, 3], 10).unwrap();
        assert!(t.is_thing(1) && t.is_stuff(3) && !t.is_thing(0) && !t.is_stuff(0));
    }

    #[test]
    fn taxonomy_toml_round_trip() {
        let t = tax();
        let text = t.to_toml_string();
        assert_eq!(CategoryTaxonomy::from_toml_str(&text).unwrap(), t);
        let parsed = CategoryTaxonomy::from_toml_str(
            "num_categories = 3\nthing_categories = [1]\nstuff_categories = [2, 3]\n",
        )
        .unwrap();
        assert_eq!(parsed.stride(), DEFAULT_STRIDE);
    }

    #[test]
    fn all_zero_map_is_valid() {
        let map = Grid::filled(4, 5, 0u32);
        assert!(validate_map(&map, &tax()).is_valid());
    }

    #[test]
    fn stuff_with_instance_reported_once() {
        let mut map = Grid::filled(4, 4, 0u32);
        map.set(1, 2, 11_002);
        map.set(3, 3, 11_002);
        let report = validate_map(&map, &tax());
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!((v.kind, v.row, v.col, v.count), (ViolationKind::StuffWithNonzeroInstance, 1, 2, 2));
    }

    #[test]
    fn malformed_and_stuff_both_reported() {
        let mut map = Grid::filled(2, 2, 0u32);
        map.set(0, 1, 25_000);
        map.set(1, 0, 12_001);
        let report = validate_map(&map, &tax());
        let kinds: Vec<_> = report.violations.iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::MalformedLabel, ViolationKind::StuffWithNonzeroInstance]);
        assert_eq!((report.violations[0].row, report.violations[0].col), (0, 1));
    }

    #[test]
    fn canonicalize_relabels_in_first_occurrence_order() {
        let t = CategoryTaxonomy::new(19, 1..=13, 14..=19, 1000).unwrap();
        let map = Grid::from_vec(1, 4, vec![13_009, 0, 13_005, 13_009]).unwrap();
        let out = canonicalize_instance_ids(&map, &t);
        assert_eq!(out.as_slice(), &[13_001, 0, 13_002, 13_001]);
        assert_eq!(canonicalize_instance_ids(&out, &t), out);
    }

    #[test]
    fn canonicalize_is_per_category() {
        // Same raw id 7 in two categories; each category gets its own numbering.
        let map = Grid::from_vec(2, 3, vec![2_007, 3_004, 3_007, 2_009, 2_007, 11_000]).unwrap();
        let out = canonicalize_instance_ids(&map, &tax());
        assert_eq!(out.as_slice(), &[2_001, 3_001, 3_002, 2_002, 2_001, 11_000]);
    }
}
