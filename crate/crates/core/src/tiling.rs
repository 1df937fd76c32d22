//! Non-overlapping patch grids over whole slide images.
//!
//! Slides are read through the narrow [`PixelSource`] interface so a real
//! slide reader and an in-memory synthetic image are interchangeable. Inputs
//! are assumed to already be at 20X-equivalent resolution (100 px = 50 µm);
//! trailing partial rows and columns are discarded, never padded.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::cancer::CancerType;
use crate::error::{Result, TilError};

pub const DEFAULT_PATCH_PX: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRef {
    pub slide_id: String,
    pub patient_id: String,
    pub cancer_type: CancerType,
    pub width_px: u32,
    pub height_px: u32,
    pub magnification: f64,
    pub microns_per_pixel: f64,
    pub pixel_source: String,
}

impl SlideRef {
    /// Derives a slide reference from an image file. The patient id follows
    /// the TCGA barcode convention (first 12 characters) when the slide id
    /// looks like one, otherwise it is the slide id itself.
    pub fn from_image(path: &Path, cancer_type: CancerType) -> Result<(Self, ImageFileSource)> {
        let source = ImageFileSource::open(path)?;
        let (width_px, height_px) = source.dimensions();
        let slide_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "slide".to_string());
        let slide = SlideRef {
            patient_id: patient_from_slide_id(&slide_id),
            slide_id,
            cancer_type,
            width_px,
            height_px,
            magnification: 20.0,
            microns_per_pixel: 0.5,
            pixel_source: path.to_string_lossy().into_owned(),
        };
        Ok((slide, source))
    }

    pub fn open_source(&self) -> Result<ImageFileSource> {
        ImageFileSource::open(Path::new(&self.pixel_source))
    }
}

pub fn patient_from_slide_id(slide_id: &str) -> String {
    if slide_id.starts_with("TCGA-") && slide_id.len() >= 12 {
        slide_id[..12].to_string()
    } else {
        slide_id.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Offset {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub slide_id: String,
    pub patch_px: u32,
    pub n_cols: u32,
    pub n_rows: u32,
    pub origin_offset: Offset,
}

impl TileGrid {
    pub fn n_cells(&self) -> usize {
        self.n_cols as usize * self.n_rows as usize
    }

    /// Top-left pixel of a cell; checks bounds.
    pub fn cell_origin(&self, grid_x: u32, grid_y: u32) -> Result<(u32, u32)> {
        if grid_x >= self.n_cols || grid_y >= self.n_rows {
            return Err(TilError::OutOfBounds {
                grid_x,
                grid_y,
                n_cols: self.n_cols,
                n_rows: self.n_rows,
            });
        }
        Ok((
            self.origin_offset.x + grid_x * self.patch_px,
            self.origin_offset.y + grid_y * self.patch_px,
        ))
    }

    /// Row-major cell coordinates.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_rows).flat_map(move |y| (0..self.n_cols).map(move |x| (x, y)))
    }
}

/// One square RGB patch at a grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchImage {
    pub grid_x: u32,
    pub grid_y: u32,
    pub pixels: RgbImage,
}

impl PatchImage {
    pub fn new(grid_x: u32, grid_y: u32, pixels: RgbImage) -> Result<Self> {
        if pixels.width() != pixels.height() || pixels.width() == 0 {
            return Err(TilError::InvalidArgument(format!(
                "patch pixels must be square and non-empty, got {}x{}",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Self {
            grid_x,
            grid_y,
            pixels,
        })
    }

    pub fn patch_px(&self) -> u32 {
        self.pixels.width()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| TilError::UnreadableSource {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rgb = to_rgb(img, path)?;
        PatchImage::new(0, 0, rgb)
    }
}

pub trait PixelSource: Send + Sync {
    /// (width, height) in pixels at the working magnification.
    fn dimensions(&self) -> (u32, u32);

    fn read_region(&self, x: u32, y: u32, width: u32, height: u32) -> Result<RgbImage>;
}

fn check_region(source: &dyn PixelSource, x: u32, y: u32, width: u32, height: u32) -> Result<()> {
    let (sw, sh) = source.dimensions();
    let fits = x.checked_add(width).is_some_and(|r| r <= sw)
        && y.checked_add(height).is_some_and(|b| b <= sh);
    if fits {
        Ok(())
    } else {
        Err(TilError::RegionOutOfBounds {
            x,
            y,
            width,
            height,
            source_width: sw,
            source_height: sh,
        })
    }
}

#[derive(Debug, Clone)]
pub struct InMemorySource {
    image: RgbImage,
}

impl InMemorySource {
    pub fn new(image: RgbImage) -> Self {
        Self { image }
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }
}

impl PixelSource for InMemorySource {
    fn dimensions(&self) -> (u32, u32) {
        self.image.dimensions()
    }

    fn read_region(&self, x: u32, y: u32, width: u32, height: u32) -> Result<RgbImage> {
        check_region(self, x, y, width, height)?;
        Ok(image::imageops::crop_imm(&self.image, x, y, width, height).to_image())
    }
}

/// A slide stored as an ordinary image file (PNG). The image is decoded once
/// when opened.
#[derive(Debug, Clone)]
pub struct ImageFileSource {
    path: PathBuf,
    inner: InMemorySource,
}

impl ImageFileSource {
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| TilError::UnreadableSource {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rgb = to_rgb(img, path)?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: InMemorySource::new(rgb),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl PixelSource for ImageFileSource {
    fn dimensions(&self) -> (u32, u32) {
        self.inner.dimensions()
    }

    fn read_region(&self, x: u32, y: u32, width: u32, height: u32) -> Result<RgbImage> {
        self.inner.read_region(x, y, width, height)
    }
}

// RGBA is accepted and the alpha channel dropped; anything else (grayscale,
// 16-bit) is a distinct non-RGB error.
fn to_rgb(img: DynamicImage, path: &Path) -> Result<RgbImage> {
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        DynamicImage::ImageRgba8(_) => Ok(img.to_rgb8()),
        other => Err(TilError::NonRgbSource {
            path: path.display().to_string(),
            color: format!("{:?}", other.color()),
        }),
    }
}

pub fn build_grid(slide: &SlideRef, patch_px: u32) -> Result<TileGrid> {
    build_grid_with_origin(slide, patch_px, Offset::default())
}

pub fn build_grid_with_origin(slide: &SlideRef, patch_px: u32, origin: Offset) -> Result<TileGrid> {
    if patch_px == 0 {
        return Err(TilError::InvalidPatchSize);
    }
    let usable_w = slide.width_px.saturating_sub(origin.x);
    let usable_h = slide.height_px.saturating_sub(origin.y);
    let n_cols = usable_w / patch_px;
    let n_rows = usable_h / patch_px;
    if n_cols == 0 || n_rows == 0 {
        return Err(TilError::EmptyGrid {
            slide_id: slide.slide_id.clone(),
            width: slide.width_px,
            height: slide.height_px,
            patch_px,
        });
    }
    Ok(TileGrid {
        slide_id: slide.slide_id.clone(),
        patch_px,
        n_cols,
        n_rows,
        origin_offset: origin,
    })
}

pub fn extract_patch(
    source: &dyn PixelSource,
    grid: &TileGrid,
    grid_x: u32,
    grid_y: u32,
) -> Result<PatchImage> {
    let (x, y) = grid.cell_origin(grid_x, grid_y)?;
    let pixels = source.read_region(x, y, grid.patch_px, grid.patch_px)?;
    PatchImage::new(grid_x, grid_y, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueFilterParams {
    /// A pixel is background when its darkest channel is at least this bright.
    pub background_intensity: u8,
    pub min_tissue_fraction: f64,
}

impl Default for TissueFilterParams {
    fn default() -> Self {
        Self {
            background_intensity: 220,
            min_tissue_fraction: 0.25,
        }
    }
}

pub fn tissue_fraction(patch: &PatchImage, background_intensity: u8) -> f64 {
    let total = patch.pixels.pixels().len();
    let tissue = patch
        .pixels
        .pixels()
        .filter(|p| p.0.iter().min().copied().unwrap_or(0) < background_intensity)
        .count();
    tissue as f64 / total as f64
}

pub fn tissue_filter(patch: &PatchImage, params: &TissueFilterParams) -> bool {
    tissue_fraction(patch, params.background_intensity) >= params.min_tissue_fraction
}

/// Grid metadata written next to the tiled patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub slide_id: String,
    pub patch_px: u32,
    pub n_cols: u32,
    pub n_rows: u32,
    pub origin_offset: Offset,
    pub microns_per_pixel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSummary {
    pub grid: TileGrid,
    pub written: usize,
    pub skipped_background: usize,
    pub metadata_path: PathBuf,
}

pub fn patch_file_name(slide_id: &str, grid_x: u32, grid_y: u32) -> String {
    format!("{slide_id}_{grid_x}_{grid_y}.png")
}

/// Tiles a slide into `out_dir`, one PNG per kept cell plus
/// `<slide_id>_grid.json`.
pub fn write_tiles(
    slide: &SlideRef,
    source: &dyn PixelSource,
    patch_px: u32,
    out_dir: &Path,
    tissue: Option<&TissueFilterParams>,
) -> Result<TileSummary> {
    let grid = build_grid(slide, patch_px)?;
    fs::create_dir_all(out_dir).map_err(|e| TilError::io(out_dir, e))?;
    let mut written = 0;
    let mut skipped_background = 0;
    for (gx, gy) in grid.cells() {
        let patch = extract_patch(source, &grid, gx, gy)?;
        if let Some(params) = tissue {
            if !tissue_filter(&patch, params) {
                skipped_background += 1;
                continue;
            }
        }
        let path = out_dir.join(patch_file_name(&slide.slide_id, gx, gy));
        patch.pixels.save(&path)?;
        written += 1;
    }
    let meta = GridMetadata {
        slide_id: slide.slide_id.clone(),
        patch_px,
        n_cols: grid.n_cols,
        n_rows: grid.n_rows,
        origin_offset: grid.origin_offset,
        microns_per_pixel: slide.microns_per_pixel,
    };
    let metadata_path = out_dir.join(format!("{}_grid.json", slide.slide_id));
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&metadata_path, json).map_err(|e| TilError::io(&metadata_path, e))?;
    Ok(TileSummary {
        grid,
        written,
        skipped_background,
        metadata_path,
    })
}
