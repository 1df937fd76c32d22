use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use til_core::tiling::PatchImage;
use til_model::augment::{apply, augment, orient, shift, AugmentParams};
use til_model::AugmentationConfig;

fn image_from(seed: u64, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = (x as u64 * 31 + y as u64 * 17 + seed * 7919) % 251;
        Rgb([v as u8, (v * 3 % 256) as u8, (v * 7 % 256) as u8])
    })
}

fn sorted_pixels(img: &RgbImage) -> Vec<[u8; 3]> {
    let mut v: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn orientation_permutes_pixels(seed in 0u64..1000, turns in 0u8..4, flip: bool, side in 1u32..24) {
        let img = image_from(seed, side, side);
        let out = orient(&img, turns, flip);
        prop_assert_eq!(out.dimensions(), img.dimensions());
        prop_assert_eq!(sorted_pixels(&out), sorted_pixels(&img));
    }

    #[test]
    fn shift_copies_interior(seed in 0u64..1000, dx in -20i32..=20, dy in -20i32..=20) {
        let img = image_from(seed, 50, 50);
        let out = shift(&img, dx, dy);
        prop_assert_eq!(out.dimensions(), (50, 50));
        for y in 0..50i32 {
            for x in 0..50i32 {
                let (sx, sy) = (x + dx, y + dy);
                if (0..50).contains(&sx) && (0..50).contains(&sy) {
                    prop_assert_eq!(out.get_pixel(x as u32, y as u32), img.get_pixel(sx as u32, sy as u32));
                }
            }
        }
    }

    #[test]
    fn augment_keeps_size_and_coordinates(seed in 0u64..1000, gx in 0u32..100, gy in 0u32..100) {
        let patch = PatchImage::new(gx, gy, image_from(seed, 40, 40)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&patch, &AugmentationConfig::default(), &mut rng);
        prop_assert_eq!(out.pixels.dimensions(), (40, 40));
        prop_assert_eq!((out.grid_x, out.grid_y), (gx, gy));
    }

    #[test]
    fn identity_parameters_change_nothing(seed in 0u64..1000) {
        let img = image_from(seed, 30, 30);
        prop_assert_eq!(apply(&img, &AugmentParams::IDENTITY), img);
    }
}
