//! Synthetic H&E-like stand-ins with known ground truth.
//!
//! Positive patches carry a cluster of small dark round blobs (the visual
//! signature of lymphocytes) on pink tissue; negative patches are the same
//! tissue background without blobs. Blobs never cross a cell boundary, so
//! every grid cell's label is exact by construction.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cancer::CancerType;
use crate::tiling::{SlideRef, DEFAULT_PATCH_PX};

pub const REGION_PX: u32 = 800;

fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// Fills one cell of `img` at `(ox, oy)` with synthetic tissue.
pub fn paint_cell(img: &mut RgbImage, ox: u32, oy: u32, size: u32, positive: bool, rng: &mut ChaCha8Rng) {
    let tint: i32 = rng.random_range(-12..=12);
    let base = [232 + tint / 2, 160 + tint, 205 + tint / 2];
    for y in 0..size {
        for x in 0..size {
            let n: i32 = rng.random_range(-14..=14);
            img.put_pixel(
                ox + x,
                oy + y,
                Rgb([clamp_u8(base[0] + n), clamp_u8(base[1] + n), clamp_u8(base[2] + n)]),
            );
        }
    }
    if !positive {
        return;
    }
    let scale = size as f64 / DEFAULT_PATCH_PX as f64;
    let n_blobs = rng.random_range(10..=18);
    for _ in 0..n_blobs {
        let r = rng.random_range(3.0..5.5) * scale;
        let margin = r.ceil() as u32 + 1;
        if size <= 2 * margin {
            continue;
        }
        let cx = rng.random_range(margin as f64..(size - margin) as f64);
        let cy = rng.random_range(margin as f64..(size - margin) as f64);
        let shade: i32 = rng.random_range(-15..=15);
        let color = [60 + shade, 35 + shade, 110 + shade];
        let (x0, x1) = ((cx - r).floor() as u32, (cx + r).ceil() as u32);
        let (y0, y1) = ((cy - r).floor() as u32, (cy + r).ceil() as u32);
        for y in y0..=y1.min(size - 1) {
            for x in x0..=x1.min(size - 1) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    let n: i32 = rng.random_range(-8..=8);
                    img.put_pixel(
                        ox + x,
                        oy + y,
                        Rgb([clamp_u8(color[0] + n), clamp_u8(color[1] + n), clamp_u8(color[2] + n)]),
                    );
                }
            }
        }
    }
}

pub fn synthetic_patch(positive: bool, size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let mut img = RgbImage::new(size, size);
    paint_cell(&mut img, 0, 0, size, positive, rng);
    img
}

#[derive(Debug, Clone)]
pub struct SyntheticSlide {
    pub slide: SlideRef,
    pub image: RgbImage,
    /// Row-major ground truth per grid cell.
    pub truth: Vec<bool>,
    pub n_cols: u32,
    pub n_rows: u32,
}

impl SyntheticSlide {
    pub fn is_positive(&self, grid_x: u32, grid_y: u32) -> bool {
        self.truth[(grid_y * self.n_cols + grid_x) as usize]
    }
}

pub struct SlideSpec<'a> {
    pub slide_id: &'a str,
    pub patient_id: &'a str,
    pub cancer_type: CancerType,
    pub n_cols: u32,
    pub n_rows: u32,
    pub patch_px: u32,
    pub seed: u64,
}

/// Paints a slide cell by cell; `layout(x, y)` decides each cell's label.
pub fn synthetic_slide(spec: &SlideSpec<'_>, layout: impl Fn(u32, u32) -> bool) -> SyntheticSlide {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.n_cols * spec.patch_px, spec.n_rows * spec.patch_px);
    let mut image = RgbImage::new(w, h);
    let mut truth = Vec::with_capacity((spec.n_cols * spec.n_rows) as usize);
    for gy in 0..spec.n_rows {
        for gx in 0..spec.n_cols {
            let positive = layout(gx, gy);
            paint_cell(&mut image, gx * spec.patch_px, gy * spec.patch_px, spec.patch_px, positive, &mut rng);
            truth.push(positive);
        }
    }
    SyntheticSlide {
        slide: SlideRef {
            slide_id: spec.slide_id.to_string(),
            patient_id: spec.patient_id.to_string(),
            cancer_type: spec.cancer_type,
            width_px: w,
            height_px: h,
            magnification: 20.0,
            microns_per_pixel: 0.5,
            pixel_source: String::new(),
        },
        image,
        truth,
        n_cols: spec.n_cols,
        n_rows: spec.n_rows,
    }
}

/// Random layout with a given positive fraction.
pub fn random_layout(n_cols: u32, n_rows: u32, positive_fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_cols * n_rows).map(|_| rng.random_bool(positive_fraction)).collect()
}

/// An 800×800 region whose 8×8 sub-patches follow `positive_cells`
/// (row-major).
pub fn synthetic_region(positive_cells: &[bool; 64], seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(REGION_PX, REGION_PX);
    for (i, &positive) in positive_cells.iter().enumerate() {
        let (gx, gy) = (i as u32 % 8, i as u32 / 8);
        paint_cell(&mut img, gx * 100, gy * 100, 100, positive, &mut rng);
    }
    img
}
