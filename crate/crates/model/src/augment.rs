//! Stochastic augmentation: shift with reflection padding, the eight
//! dihedral orientations, and small HSL jitter.
//!
//! Parameter drawing is separate from application so transforms can be
//! tested with fixed parameters.

use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use til_core::tiling::PatchImage;

use crate::config::AugmentationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Window offset: output pixel `(x, y)` reads input `(x + dx, y + dy)`.
    pub dx: i32,
    pub dy: i32,
    /// Quarter turns clockwise, 0..=3.
    pub quarter_turns: u8,
    /// Mirror left-right after rotating.
    pub flip: bool,
    pub hue_deg: f64,
    pub sat_scale: f64,
    pub light_scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        dx: 0,
        dy: 0,
        quarter_turns: 0,
        flip: false,
        hue_deg: 0.0,
        sat_scale: 1.0,
        light_scale: 1.0,
    };

    fn has_color_change(&self) -> bool {
        self.hue_deg != 0.0 || self.sat_scale != 1.0 || self.light_scale != 1.0
    }
}

fn symmetric(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Draws one parameter set. Always consumes the same number of random
/// values so the stream stays aligned across configurations.
pub fn draw_params(cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> AugmentParams {
    let s = cfg.shift_px_max as i32;
    let dx = rng.random_range(-s..=s);
    let dy = rng.random_range(-s..=s);
    let orientation: u8 = rng.random_range(0..8);
    let j = &cfg.hsl_jitter;
    let hue_deg = symmetric(rng, j.hue_deg_max);
    let sat_scale = 1.0 + symmetric(rng, j.sat_frac_max);
    let light_scale = 1.0 + symmetric(rng, j.light_frac_max);
    let (quarter_turns, flip) = if cfg.rotate_flip {
        (orientation % 4, orientation >= 4)
    } else {
        (0, false)
    };
    AugmentParams {
        dx,
        dy,
        quarter_turns,
        flip,
        hue_deg,
        sat_scale,
        light_scale,
    }
}

/// Reflects an out-of-range index back into `[0, n)` without repeating the
/// edge pixel.
fn reflect(i: i64, n: i64) -> u32 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as u32
}

pub fn shift(img: &RgbImage, dx: i32, dy: i32) -> RgbImage {
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let sx = reflect(x as i64 + dx as i64, w as i64);
        let sy = reflect(y as i64 + dy as i64, h as i64);
        *img.get_pixel(sx, sy)
    })
}

pub fn orient(img: &RgbImage, quarter_turns: u8, flip: bool) -> RgbImage {
    let rotated = match quarter_turns % 4 {
        0 => img.clone(),
        1 => imageops::rotate90(img),
        2 => imageops::rotate180(img),
        _ => imageops::rotate270(img),
    };
    if flip {
        imageops::flip_horizontal(&rotated)
    } else {
        rotated
    }
}

fn rgb_to_hsl(p: &Rgb<u8>) -> (f64, f64, f64) {
    let [r, g, b] = p.0.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return (0.0, 0.0, l);
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, s.min(1.0), l)
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> Rgb<u8> {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    Rgb([r, g, b].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8))
}

pub fn jitter_hsl(img: &RgbImage, hue_deg: f64, sat_scale: f64, light_scale: f64) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let (h, s, l) = rgb_to_hsl(p);
        *p = hsl_to_rgb(h + hue_deg, (s * sat_scale).clamp(0.0, 1.0), (l * light_scale).clamp(0.0, 1.0));
    }
    out
}

pub fn apply(img: &RgbImage, p: &AugmentParams) -> RgbImage {
    let mut out = orient(&shift(img, p.dx, p.dy), p.quarter_turns, p.flip);
    if p.has_color_change() {
        out = jitter_hsl(&out, p.hue_deg, p.sat_scale, p.light_scale);
    }
    out
}

/// Draws parameters and applies them. Grid coordinates are preserved.
pub fn augment(patch: &PatchImage, cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> PatchImage {
    let p = draw_params(cfg, rng);
    PatchImage {
        grid_x: patch.grid_x,
        grid_y: patch.grid_y,
        pixels: apply(&patch.pixels, &p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HslJitter;
    use rand::SeedableRng;

    fn marker(x: u32, y: u32) -> RgbImage {
        let mut img = RgbImage::from_pixel(100, 100, Rgb([200, 150, 190]));
        img.put_pixel(x, y, Rgb([0, 0, 0]));
        img
    }

    fn find_marker(img: &RgbImage) -> (u32, u32) {
        let hits: Vec<(u32, u32)> = img
            .enumerate_pixels()
            .filter(|(_, _, p)| p.0 == [0, 0, 0])
            .map(|(x, y, _)| (x, y))
            .collect();
        assert_eq!(hits.len(), 1);
        hits[0]
    }

    #[test]
    fn zero_config_is_identity() {
        let cfg = AugmentationConfig::none(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = marker(10, 20);
        for _ in 0..10 {
            assert_eq!(draw_params(&cfg, &mut rng), AugmentParams::IDENTITY);
        }
        let patch = PatchImage::new(4, 5, img.clone()).unwrap();
        let out = augment(&patch, &cfg, &mut rng);
        assert_eq!(out.pixels, img);
        assert_eq!((out.grid_x, out.grid_y), (4, 5));
    }

    #[test]
    fn shift_moves_content_opposite_the_window() {
        let out = shift(&marker(50, 50), 20, 0);
        assert_eq!(out.get_pixel(30, 50).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(50, 50).0, [200, 150, 190]);
    }

    #[test]
    fn shift_reflects_at_the_border() {
        let out = shift(&marker(1, 0), -3, 0);
        // Output x=2 reads input x=-1, which reflects to x=1.
        assert_eq!(out.get_pixel(2, 0).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(4, 0).0, [0, 0, 0]);
    }

    #[test]
    fn quarter_turn_moves_marker_clockwise() {
        let out = orient(&marker(10, 20), 1, false);
        assert_eq!(find_marker(&out), (100 - 1 - 20, 10));
        let out = orient(&marker(10, 20), 1, true);
        assert_eq!(find_marker(&out), (20, 10));
    }

    #[test]
    fn dihedral_variants_are_distinct_bijections() {
        let img = marker(10, 20);
        let mut seen = std::collections::HashSet::new();
        for t in 0..4 {
            for f in [false, true] {
                let out = orient(&img, t, f);
                seen.insert(find_marker(&out));
            }
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn hsl_round_trip_and_bounds() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]));
        assert_eq!(jitter_hsl(&img, 0.0, 1.0, 1.0), img);
        let cfg = AugmentationConfig {
            hsl_jitter: HslJitter::default(),
            ..AugmentationConfig::none(0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = draw_params(&cfg, &mut rng);
            assert!(p.hue_deg.abs() <= 5.0);
            assert!((p.sat_scale - 1.0).abs() <= 0.1);
            assert!((p.light_scale - 1.0).abs() <= 0.05);
        }
    }

    #[test]
    fn shifts_stay_within_bounds() {
        let cfg = AugmentationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<AugmentParams> = (0..500).map(|_| draw_params(&cfg, &mut rng)).collect();
        assert!(draws.iter().all(|p| p.dx.abs() <= 20 && p.dy.abs() <= 20));
        assert!(draws.iter().any(|p| p.dx == 20) && draws.iter().any(|p| p.dx == -20));
    }
}
