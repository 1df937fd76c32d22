//! TIL probability maps and thresholded binary maps.
//!
//! File format: one JSON header line, then `n_rows` lines of tab-separated
//! cell values. Probabilities are written with the shortest decimal that
//! round-trips the stored `f64` exactly, so a read map makes identical
//! decisions at every threshold. Background cells removed by the tissue
//! filter hold 0.0 and are listed in the header's `masked_cells`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::cancer::CancerType;
use crate::error::{check_unit, Result, TilError};
use crate::tiling::TileGrid;

const FORMAT_TAG: &str = "til-map";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TilMap {
    pub slide_id: String,
    pub patient_id: Option<String>,
    pub cancer_type: Option<CancerType>,
    pub patch_px: u32,
    pub n_cols: u32,
    pub n_rows: u32,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
    probs: Vec<f64>,
    mask: Vec<bool>,
}

impl TilMap {
    /// Builds a map from row-major probabilities. Every value must lie in
    /// [0, 1] and the length must equal `n_cols * n_rows`.
    pub fn new(
        slide_id: impl Into<String>,
        patch_px: u32,
        n_cols: u32,
        n_rows: u32,
        probs: Vec<f64>,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        let n = n_cols as usize * n_rows as usize;
        if probs.len() != n {
            return Err(TilError::GeometryMismatch {
                n_cols,
                n_rows,
                detail: format!("{} cells supplied", probs.len()),
            });
        }
        for &p in &probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(TilError::OutOfUnitRange {
                    what: "probability",
                    value: p,
                });
            }
        }
        Ok(Self {
            slide_id: slide_id.into(),
            patient_id: None,
            cancer_type: None,
            patch_px,
            n_cols,
            n_rows,
            model_id: model_id.into(),
            created_at: Utc::now(),
            probs,
            mask: vec![false; n],
        })
    }

    pub fn for_grid(grid: &TileGrid, probs: Vec<f64>, model_id: impl Into<String>) -> Result<Self> {
        TilMap::new(grid.slide_id.clone(), grid.patch_px, grid.n_cols, grid.n_rows, probs, model_id)
    }

    pub fn with_slide_meta(mut self, patient_id: impl Into<String>, cancer_type: CancerType) -> Self {
        self.patient_id = Some(patient_id.into());
        self.cancer_type = Some(cancer_type);
        self
    }

    pub fn with_created_at(mut self, at: DateTime<Utc>) -> Self {
        self.created_at = at;
        self
    }

    /// Marks background cells. Masked cells are forced to probability 0.0.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.probs.len() {
            return Err(TilError::GeometryMismatch {
                n_cols: self.n_cols,
                n_rows: self.n_rows,
                detail: format!("mask has {} cells", mask.len()),
            });
        }
        for (p, &m) in self.probs.iter_mut().zip(&mask) {
            if m {
                *p = 0.0;
            }
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn index(&self, grid_x: u32, grid_y: u32) -> usize {
        grid_y as usize * self.n_cols as usize + grid_x as usize
    }

    pub fn coords(&self, index: usize) -> (u32, u32) {
        let cols = self.n_cols as usize;
        ((index % cols) as u32, (index / cols) as u32)
    }

    pub fn prob(&self, grid_x: u32, grid_y: u32) -> f64 {
        self.probs[self.index(grid_x, grid_y)]
    }

    pub fn is_masked(&self, grid_x: u32, grid_y: u32) -> bool {
        self.mask[self.index(grid_x, grid_y)]
    }

    pub fn id(&self) -> String {
        format!("{}:{}", self.slide_id, self.model_id)
    }

    /// Thresholds every cell: positive iff probability ≥ `threshold`.
    pub fn threshold(&self, threshold: f64) -> Result<BinaryTilMap> {
        check_unit("threshold", threshold)?;
        Ok(BinaryTilMap {
            slide_id: self.slide_id.clone(),
            patient_id: self.patient_id.clone(),
            cancer_type: self.cancer_type,
            patch_px: self.patch_px,
            n_cols: self.n_cols,
            n_rows: self.n_rows,
            cells: self.probs.iter().map(|&p| p >= threshold).collect(),
            threshold,
            source_map_id: self.id(),
        })
    }

    pub fn positive_count(&self, threshold: f64) -> Result<usize> {
        check_unit("threshold", threshold)?;
        Ok(self.probs.iter().filter(|&&p| p >= threshold).count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTilMap {
    pub slide_id: String,
    pub patient_id: Option<String>,
    pub cancer_type: Option<CancerType>,
    pub patch_px: u32,
    pub n_cols: u32,
    pub n_rows: u32,
    pub cells: Vec<bool>,
    pub threshold: f64,
    pub source_map_id: String,
}

impl BinaryTilMap {
    pub fn positive_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyMap {
    Probability(TilMap),
    Binary(BinaryTilMap),
}

impl AnyMap {
    pub fn into_probability(self) -> Result<TilMap> {
        match self {
            AnyMap::Probability(m) => Ok(m),
            AnyMap::Binary(_) => Err(TilError::MalformedHeader(
                "expected a probability map, found a binary map".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MapKind {
    Probability,
    Binary,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapHeader {
    format: String,
    version: u32,
    kind: MapKind,
    slide_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patient_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cancer_type: Option<CancerType>,
    patch_px: u32,
    n_cols: u32,
    n_rows: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_map_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    masked_cells: Vec<usize>,
}

pub fn write_map(map: &TilMap, path: &Path) -> Result<()> {
    let bytes = map_to_bytes(&AnyMap::Probability(map.clone()))?;
    fs::write(path, bytes).map_err(|e| TilError::io(path, e))
}

pub fn write_binary_map(map: &BinaryTilMap, path: &Path) -> Result<()> {
    let bytes = map_to_bytes(&AnyMap::Binary(map.clone()))?;
    fs::write(path, bytes).map_err(|e| TilError::io(path, e))
}

pub fn map_to_bytes(map: &AnyMap) -> Result<Vec<u8>> {
    let mut out = BufWriter::new(Vec::new());
    let (header, cols) = match map {
        AnyMap::Probability(m) => (
            MapHeader {
                format: FORMAT_TAG.into(),
                version: FORMAT_VERSION,
                kind: MapKind::Probability,
                slide_id: m.slide_id.clone(),
                patient_id: m.patient_id.clone(),
                cancer_type: m.cancer_type,
                patch_px: m.patch_px,
                n_cols: m.n_cols,
                n_rows: m.n_rows,
                model_id: Some(m.model_id.clone()),
                created_at: Some(m.created_at),
                threshold: None,
                source_map_id: None,
                masked_cells: m
                    .mask
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &masked)| masked.then_some(i))
                    .collect(),
            },
            m.n_cols as usize,
        ),
        AnyMap::Binary(b) => (
            MapHeader {
                format: FORMAT_TAG.into(),
                version: FORMAT_VERSION,
                kind: MapKind::Binary,
                slide_id: b.slide_id.clone(),
                patient_id: b.patient_id.clone(),
                cancer_type: b.cancer_type,
                patch_px: b.patch_px,
                n_cols: b.n_cols,
                n_rows: b.n_rows,
                model_id: None,
                created_at: None,
                threshold: Some(b.threshold),
                source_map_id: Some(b.source_map_id.clone()),
                masked_cells: Vec::new(),
            },
            b.n_cols as usize,
        ),
    };
    let io_err = |e| TilError::io("<buffer>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io_err)?;
    let mut line = String::new();
    match map {
        AnyMap::Probability(m) => {
            for row in m.probs.chunks(cols) {
                line.clear();
                for (i, p) in row.iter().enumerate() {
                    if i > 0 {
                        line.push('\t');
                    }
                    line.push_str(&p.to_string());
                }
                line.push('\n');
                out.write_all(line.as_bytes()).map_err(io_err)?;
            }
        }
        AnyMap::Binary(b) => {
            for row in b.cells.chunks(cols) {
                line.clear();
                for (i, &c) in row.iter().enumerate() {
                    if i > 0 {
                        line.push('\t');
                    }
                    line.push(if c { '1' } else { '0' });
                }
                line.push('\n');
                out.write_all(line.as_bytes()).map_err(io_err)?;
            }
        }
    }
    out.into_inner().map_err(|e| io_err(e.into_error()))
}

pub fn read_map(path: &Path) -> Result<AnyMap> {
    let file = fs::File::open(path).map_err(|e| TilError::io(path, e))?;
    parse_map(BufReader::new(file), path)
}

pub fn read_probability_map(path: &Path) -> Result<TilMap> {
    read_map(path)?.into_probability()
}

pub fn parse_map(reader: impl BufRead, path: &Path) -> Result<AnyMap> {
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| TilError::MalformedHeader("empty file".into()))?
        .map_err(|e| TilError::io(path, e))?;
    let header: MapHeader = serde_json::from_str(&header_line)
        .map_err(|e| TilError::MalformedHeader(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(TilError::MalformedHeader(format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(TilError::MalformedHeader(format!("unsupported version {}", header.version)));
    }
    let (n_cols, n_rows) = (header.n_cols, header.n_rows);
    let mismatch = |detail: String| TilError::GeometryMismatch {
        n_cols,
        n_rows,
        detail,
    };

    let mut values: Vec<&str>;
    let mut probs = Vec::with_capacity(n_cols as usize * n_rows as usize);
    let mut cells = Vec::new();
    let mut row_count = 0u32;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| TilError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        row_count += 1;
        if row_count > n_rows {
            return Err(mismatch(format!("more than {n_rows} rows")));
        }
        values = line.split('\t').collect();
        if values.len() != n_cols as usize {
            return Err(mismatch(format!("row {} has {} cells", i, values.len())));
        }
        for v in values {
            match header.kind {
                MapKind::Probability => {
                    let p: f64 = v.parse().map_err(|_| TilError::Parse {
                        path: path.display().to_string(),
                        line: i + 2,
                        reason: format!("invalid probability {v:?}"),
                    })?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(TilError::OutOfUnitRange {
                            what: "probability",
                            value: p,
                        });
                    }
                    probs.push(p);
                }
                MapKind::Binary => cells.push(match v {
                    "1" => true,
                    "0" => false,
                    _ => {
                        return Err(TilError::Parse {
                            path: path.display().to_string(),
                            line: i + 2,
                            reason: format!("invalid binary cell {v:?}"),
                        })
                    }
                }),
            }
        }
    }
    if row_count != n_rows {
        return Err(mismatch(format!("{row_count} rows in payload")));
    }

    match header.kind {
        MapKind::Probability => {
            let mut mask = vec![false; probs.len()];
            for &i in &header.masked_cells {
                *mask
                    .get_mut(i)
                    .ok_or_else(|| mismatch(format!("masked cell {i} out of range")))? = true;
            }
            let mut map = TilMap::new(
                header.slide_id,
                header.patch_px,
                n_cols,
                n_rows,
                probs,
                header.model_id.unwrap_or_default(),
            )?;
            map.patient_id = header.patient_id;
            map.cancer_type = header.cancer_type;
            if let Some(at) = header.created_at {
                map.created_at = at;
            }
            map.mask = mask;
            Ok(AnyMap::Probability(map))
        }
        MapKind::Binary => {
            let threshold = header
                .threshold
                .ok_or_else(|| TilError::MalformedHeader("binary map without threshold".into()))?;
            check_unit("threshold", threshold)?;
            Ok(AnyMap::Binary(BinaryTilMap {
                slide_id: header.slide_id,
                patient_id: header.patient_id,
                cancer_type: header.cancer_type,
                patch_px: header.patch_px,
                n_cols,
                n_rows,
                cells,
                threshold,
                source_map_id: header.source_map_id.unwrap_or_default(),
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleImportMeta {
    pub slide_id: String,
    pub patch_px: u32,
    pub model_id: String,
    /// Channel to read from a multi-channel image.
    pub channel: Option<u8>,
}

/// Imports a grayscale map image where each pixel is one patch and an 8-bit
/// value `v` maps linearly to probability `v / 255`.
pub fn import_grayscale_map(image_path: &Path, meta: &GrayscaleImportMeta) -> Result<TilMap> {
    let img = image::open(image_path).map_err(|e| TilError::UnreadableSource {
        path: image_path.display().to_string(),
        reason: e.to_string(),
    })?;
    import_grayscale_image(&img, meta)
}

pub fn import_grayscale_image(img: &DynamicImage, meta: &GrayscaleImportMeta) -> Result<TilMap> {
    let (w, h) = (img.width(), img.height());
    let channels = img.color().channel_count();
    let values: Vec<u8> = match (img, meta.channel) {
        (DynamicImage::ImageLuma8(g), None | Some(0)) => g.as_raw().clone(),
        (_, None) if channels > 1 => return Err(TilError::MultiChannelImage { channels }),
        (_, Some(c)) if c >= channels => {
            return Err(TilError::InvalidArgument(format!(
                "channel {c} requested from a {channels}-channel image"
            )))
        }
        (DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_), Some(c)) => {
            let raw = img.as_bytes();
            raw.iter()
                .skip(c as usize)
                .step_by(channels as usize)
                .copied()
                .collect()
        }
        (other, _) => {
            return Err(TilError::NonRgbSource {
                path: meta.slide_id.clone(),
                color: format!("{:?}", other.color()),
            })
        }
    };
    let probs = values.iter().map(|&v| v as f64 / 255.0).collect();
    TilMap::new(meta.slide_id.clone(), meta.patch_px, w, h, probs, meta.model_id.clone())
}
