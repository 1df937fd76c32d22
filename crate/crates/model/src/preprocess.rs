use image::imageops::{self, FilterType};
use image::RgbImage;
use til_core::tiling::PatchImage;
use til_core::TilError;

use crate::elem::Elem;
use crate::tensor::{Shape, Tensor};

/// Bilinear resize to a `target_px` square.
pub fn resize_patch(patch: &PatchImage, target_px: u32) -> Result<PatchImage, TilError> {
    if target_px == 0 {
        return Err(TilError::InvalidArgument("target size must be at least 1 px".into()));
    }
    Ok(PatchImage {
        grid_x: patch.grid_x,
        grid_y: patch.grid_y,
        pixels: resize_image(&patch.pixels, target_px),
    })
}

pub fn resize_image(img: &RgbImage, target_px: u32) -> RgbImage {
    if img.dimensions() == (target_px, target_px) {
        img.clone()
    } else {
        imageops::resize(img, target_px, target_px, FilterType::Triangle)
    }
}

/// Packs images into an NCHW tensor scaled to `[-0.5, 0.5]`, resizing as
/// needed.
pub fn to_tensor<'a, E: Elem>(images: impl IntoIterator<Item = &'a RgbImage>, px: u32) -> Tensor<E> {
    let shape = Shape::new(3, px as usize, px as usize);
    let plane = shape.plane();
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        let resized;
        let img = if img.dimensions() == (px, px) {
            img
        } else {
            resized = resize_image(img, px);
            &resized
        };
        let start = data.len();
        data.resize(start + shape.len(), E::zero());
        let dst = &mut data[start..];
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                dst[c * plane + i] = E::of(p.0[c] as f64 / 255.0 - 0.5);
            }
        }
        n += 1;
    }
    Tensor::from_vec(n, shape, data)
}
