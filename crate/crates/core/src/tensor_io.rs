//! On-disk tensor container and raster adapters.
//!
//! Tensor layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PET1"
//! 4       1           dtype: 0 = u16, 1 = f32, 2 = u32
//! 5       1           ndim (2 or 3)
//! 6       4 * ndim    dims, u32 each
//! ...     prod(dims) * sizeof(dtype)   payload, row-major, last dim fastest
//! ```
//!
//! A 2x3 u16 tensor starts with `50 45 54 31 00 02 02 00 00 00 03 00 00 00`
//! followed by 12 payload bytes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};

use crate::edgegen::{CenterHeatmap, OffsetField};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::label::{encode_label, CategoryTaxonomy, PanopticEdgeMap, PanopticSegMap, SemanticEdgeMap};
use crate::numerics::Tensor3;

pub const MAGIC: [u8; 4] = *b"PET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U16 = 0,
    F32 = 1,
    U32 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U16 => 2,
            DType::F32 | DType::U32 => 4,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::U16),
            1 => Ok(DType::F32),
            2 => Ok(DType::U32),
            other => Err(Error::UnknownDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U16(Vec<u16>),
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::U16(_) => DType::U16,
            TensorData::F32(_) => DType::F32,
            TensorData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U16(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<u32>,
    data: TensorData,
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d as usize).ok_or_else(|| Error::DimOverflow(format!("dims {dims:?} overflow")))
    })
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::UnexpectedTensor(format!("rank {} is not 2 or 3", dims.len())));
        }
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch { expected: vec![n], actual: vec![data.len()] });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 {
            return Err(Error::TruncatedPayload { expected: 6, actual: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let dtype = DType::from_code(bytes[4])?;
        let ndim = usize::from(bytes[5]);
        if !(2..=3).contains(&ndim) {
            return Err(Error::UnexpectedTensor(format!("rank {ndim} is not 2 or 3")));
        }
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(Error::TruncatedPayload { expected: header, actual: bytes.len() });
        }
        let dims: Vec<u32> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let n = element_count(&dims)?;
        let payload_len = n
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::DimOverflow(format!("payload of dims {dims:?} overflows")))?;
        let payload = &bytes[header..];
        if payload.len() < payload_len {
            return Err(Error::TruncatedPayload { expected: payload_len, actual: payload.len() });
        }
        if payload.len() > payload_len {
            return Err(Error::UnexpectedTensor(format!(
                "{} trailing bytes after payload",
                payload.len() - payload_len
            )));
        }
        let data = match dtype {
            DType::U16 => TensorData::U16(
                payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().expect("two bytes"))).collect(),
            ),
            DType::F32 => TensorData::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect(),
            ),
            DType::U32 => TensorData::U32(
                payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("four bytes"))).collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    /// Spatial size, treating a 3-D tensor as `channels x H x W`.
    fn plane(&self) -> (usize, usize, usize) {
        match self.dims[..] {
            [h, w] => (1, h as usize, w as usize),
            [c, h, w] => (c as usize, h as usize, w as usize),
            _ => unreachable!("rank checked on construction"),
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes)
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::DimOverflow(format!("dimension {n} exceeds u32")))
}

pub fn label_map_to_tensor(map: &Grid<u32>) -> Result<TensorFile> {
    TensorFile::new(vec![dim(map.height())?, dim(map.width())?], TensorData::U32(map.as_slice().to_vec()))
}

/// Reads an integer label map (u16 or u32; 2-D, or 3-D with one channel).
pub fn tensor_to_label_map(t: &TensorFile) -> Result<Grid<u32>> {
    let (c, h, w) = t.plane();
    if c != 1 {
        return Err(Error::UnexpectedTensor(format!("label map must have one channel, got {c}")));
    }
    let data = match &t.data {
        TensorData::U16(v) => v.iter().map(|&x| u32::from(x)).collect(),
        TensorData::U32(v) => v.clone(),
        TensorData::F32(_) => return Err(Error::UnexpectedTensor("label map must be integer".into())),
    };
    Grid::from_vec(h, w, data)
}

pub fn semantic_to_tensor(map: &SemanticEdgeMap) -> Result<TensorFile> {
    TensorFile::new(vec![dim(map.height())?, dim(map.width())?], TensorData::U16(map.as_slice().to_vec()))
}

pub fn tensor_to_semantic(t: &TensorFile) -> Result<SemanticEdgeMap> {
    let labels = tensor_to_label_map(t)?;
    if let Some(&bad) = labels.as_slice().iter().find(|&&v| v > u32::from(u16::MAX)) {
        return Err(Error::LabelOverflow(bad));
    }
    Ok(labels.map(|v| v as u16))
}

fn f32_tensor(channels: &[&[f64]], h: usize, w: usize) -> Result<TensorFile> {
    let data: Vec<f32> = channels.iter().flat_map(|c| c.iter().map(|&v| v as f32)).collect();
    TensorFile::new(vec![dim(channels.len())?, dim(h)?, dim(w)?], TensorData::F32(data))
}

fn f32_data(t: &TensorFile) -> Result<&[f32]> {
    match &t.data {
        TensorData::F32(v) => Ok(v),
        _ => Err(Error::UnexpectedTensor("expected a float tensor".into())),
    }
}

pub fn heatmap_to_tensor(heatmap: &CenterHeatmap) -> Result<TensorFile> {
    f32_tensor(&[heatmap.as_slice()], heatmap.height(), heatmap.width())
}

pub fn tensor_to_heatmap(t: &TensorFile) -> Result<CenterHeatmap> {
    let (c, h, w) = t.plane();
    if c != 1 {
        return Err(Error::UnexpectedTensor(format!("heatmap must have one channel, got {c}")));
    }
    Grid::from_vec(h, w, f32_data(t)?.iter().map(|&v| f64::from(v)).collect())
}

/// Offsets as a `2 x H x W` tensor, channel 0 = dy, channel 1 = dx.
pub fn offsets_to_tensor(offsets: &OffsetField) -> Result<TensorFile> {
    f32_tensor(&[offsets.dy.as_slice(), offsets.dx.as_slice()], offsets.height(), offsets.width())
}

pub fn tensor_to_offsets(t: &TensorFile) -> Result<OffsetField> {
    let (c, h, w) = t.plane();
    if t.dims.len() != 3 || c != 2 {
        return Err(Error::UnexpectedTensor(format!("offsets must be 2 x H x W, got {:?}", t.dims)));
    }
    let data = f32_data(t)?;
    let n = h * w;
    let dy = Grid::from_vec(h, w, data[..n].iter().map(|&v| f64::from(v)).collect())?;
    let dx = Grid::from_vec(h, w, data[n..].iter().map(|&v| f64::from(v)).collect())?;
    OffsetField::new(dy, dx)
}

pub fn logits_to_tensor(logits: &Tensor3) -> Result<TensorFile> {
    let [c, h, w] = logits.shape();
    let data = logits.as_slice().iter().map(|&v| v as f32).collect();
    TensorFile::new(vec![dim(c)?, dim(h)?, dim(w)?], TensorData::F32(data))
}

pub fn tensor_to_logits(t: &TensorFile) -> Result<Tensor3> {
    if t.dims.len() != 3 {
        return Err(Error::UnexpectedTensor(format!("logits must be C x H x W, got {:?}", t.dims)));
    }
    let (c, h, w) = t.plane();
    Tensor3::from_vec(c, h, w, f32_data(t)?.iter().map(|&v| f64::from(v)).collect())
}

/// Writes a label map as a 16-bit binary graymap. Labels must fit in 16 bits.
pub fn write_label_pgm(path: impl AsRef<Path>, map: &Grid<u32>) -> Result<()> {
    let path = path.as_ref();
    let mut pixels = Vec::with_capacity(map.as_slice().len());
    for &v in map.as_slice() {
        pixels.push(u16::try_from(v).map_err(|_| Error::LabelOverflow(v))?);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(dim(map.width())?, dim(map.height())?, pixels).expect("buffer sized to map");
    img.save_with_format(path, image::ImageFormat::Pnm)?;
    Ok(())
}

pub fn read_label_image(path: impl AsRef<Path>) -> Result<Grid<u32>> {
    let img = image::open(path.as_ref())?.into_luma16();
    let (w, h) = img.dimensions();
    Grid::from_vec(h as usize, w as usize, img.into_raw().into_iter().map(u32::from).collect())
}

/// Source-id to (category, instance id) lookup for RGB-encoded panoptic rasters.
pub type SourceTable = HashMap<u32, (u16, u32)>;

/// Reads a lossless RGB raster with `id = R + 256 G + 65536 B` and maps every
/// id through `table` into encoded panoptic labels.
pub fn read_panoptic_rgb(
    path: impl AsRef<Path>,
    table: &SourceTable,
    taxonomy: &CategoryTaxonomy,
) -> Result<PanopticSegMap> {
    let img = image::open(path.as_ref())?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut labels = Vec::with_capacity((w * h) as usize);
    for p in img.pixels() {
        let [r, g, b] = p.0;
        let id = u32::from(r) + 256 * u32::from(g) + 65536 * u32::from(b);
        let &(category, instance) = table.get(&id).ok_or(Error::UnknownSourceId(id))?;
        labels.push(encode_label(category, instance, taxonomy)?);
    }
    Grid::from_vec(h as usize, w as usize, labels)
}

/// Writes source ids (< 2^24) as an RGB PNG in the same encoding.
pub fn write_panoptic_rgb(path: impl AsRef<Path>, ids: &Grid<u32>) -> Result<()> {
    let mut img = RgbImage::new(dim(ids.width())?, dim(ids.height())?);
    for (row, col, id) in ids.indexed() {
        if id >= 1 << 24 {
            return Err(Error::DimOverflow(format!("source id {id} does not fit in 24 bits")));
        }
        img.put_pixel(col as u32, row as u32, Rgb([id as u8, (id >> 8) as u8, (id >> 16) as u8]));
    }
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}

fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    // splitmix-style scramble so neighbouring labels get unrelated colors
    let mut z = u64::from(label).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    [(z as u8) | 0x20, ((z >> 8) as u8) | 0x20, ((z >> 16) as u8) | 0x20]
}

/// Color-coded PNG with one color per distinct panoptic label; non-edge is black.
pub fn write_visualization(path: impl AsRef<Path>, map: &PanopticEdgeMap) -> Result<()> {
    let mut img = RgbImage::new(dim(map.width())?, dim(map.height())?);
    for (row, col, label) in map.indexed() {
        img.put_pixel(col as u32, row as u32, Rgb(label_color(label)));
    }
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}
