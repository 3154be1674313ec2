//! Procedural portrait corpus for tests, benchmarks and overfit runs.
//!
//! Each portrait is a flat-shaded head over a gradient backdrop with a
//! textured hair region whose colour is drawn from a fixed palette. The
//! hair mask is exact, so no segmentation step is needed.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{preprocess_sample, SampleRecord};
use crate::{imageio, Error, Result};

/// Base hair colours, cycled by portrait index.
pub const HAIR_PALETTE: [[u8; 3]; 8] = [
    [30, 22, 18],
    [96, 58, 32],
    [214, 182, 110],
    [160, 62, 30],
    [170, 170, 172],
    [60, 36, 24],
    [232, 214, 170],
    [110, 30, 70],
];

const SKIN: [[u8; 3]; 4] = [[236, 196, 170], [205, 160, 125], [160, 112, 80], [105, 70, 50]];

/// One generated image with its binary hair mask.
#[derive(Clone, Debug)]
pub struct Portrait {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub hair_color: [u8; 3],
}

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amount: i32) -> [u8; 3] {
    c.map(|v| (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

fn inside(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (a, b) = ((u - cx) / rx, (v - cy) / ry);
    a * a + b * b <= 1.0
}

/// Draws portrait `index` of the corpus identified by `seed`.
pub fn portrait(seed: u64, index: usize, size: u32) -> Portrait {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let hair_color = jitter(&mut rng, HAIR_PALETTE[index % HAIR_PALETTE.len()], 12);
    let skin_base = SKIN[rng.random_range(0..SKIN.len())];
    let skin = jitter(&mut rng, skin_base, 10);
    let bg_top = jitter(&mut rng, [120, 140, 170], 60);
    let bg_bottom = jitter(&mut rng, [200, 200, 190], 50);
    let shirt = jitter(&mut rng, [80, 90, 110], 70);

    let cx = 0.5 + rng.random_range(-0.05..0.05);
    let cy = 0.52 + rng.random_range(-0.04..0.04);
    let (rx, ry) = (rng.random_range(0.17..0.22), rng.random_range(0.23..0.28));
    let hair_rx = rx + rng.random_range(0.04..0.09);
    let hair_ry = ry + rng.random_range(0.03..0.08);
    let hair_cy = cy - rng.random_range(0.03..0.07);
    let hair_len = rng.random_range(-0.05..0.3);
    let fringe = cy - ry * rng.random_range(0.45..0.75);
    let strand_angle: f64 = rng.random_range(-0.5..0.5);
    let strand_freq = rng.random_range(40.0..80.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut image = RgbImage::new(size, size);
    let mut mask = GrayImage::new(size, size);
    let n = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = (bg_top[c] as f64 * (1.0 - v) + bg_bottom[c] as f64 * v) as u8;
            }
            if inside(u, v, cx, 1.08, 0.38, 0.3) {
                px = shirt;
            }
            let in_face = inside(u, v, cx, cy, rx, ry);
            let in_hair_shape = inside(u, v, cx, hair_cy, hair_rx, hair_ry) && v < cy + hair_len;
            let hair = in_hair_shape && (!in_face || v < fringe);
            if in_face && !hair {
                px = skin;
                let eye_y = cy - ry * 0.1;
                if inside(u, v, cx - rx * 0.4, eye_y, 0.022, 0.014) || inside(u, v, cx + rx * 0.4, eye_y, 0.022, 0.014) {
                    px = [40, 30, 30];
                }
                if inside(u, v, cx, cy + ry * 0.5, rx * 0.35, 0.015) {
                    px = [150, 60, 60];
                }
            }
            if hair {
                let t = (u * strand_angle.cos() + v * strand_angle.sin()) * strand_freq + phase;
                let shade = 0.82 + 0.18 * t.sin() + rng.random_range(-0.04..0.04);
                px = hair_color.map(|c| (c as f64 * shade).clamp(0.0, 255.0) as u8);
                mask.put_pixel(x, y, Luma([255]));
            }
            image.put_pixel(x, y, Rgb(px));
        }
    }
    Portrait { image, mask, hair_color }
}

/// Identifier of portrait `index`.
pub fn portrait_id(index: usize) -> String {
    format!("synth{index:05}")
}

/// `n` preprocessed records at the working resolution.
pub fn records(n: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    (0..n)
        .map(|i| {
            let p = portrait(seed, i, crate::IMAGE_SIZE as u32);
            preprocess_sample(&portrait_id(i), &p.image, &p.mask)
        })
        .collect()
}

/// Writes `n` portraits as `images/<id>.png` and `masks/<id>.png` under
/// `root`, returning the two directories.
pub fn write_corpus(root: &Path, n: usize, seed: u64, size: u32) -> Result<(PathBuf, PathBuf)> {
    if n == 0 {
        return Err(Error::InvalidArgument("corpus size must be positive".into()));
    }
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for i in 0..n {
        let p = portrait(seed, i, size);
        let id = portrait_id(i);
        imageio::save_rgb(&p.image, &images.join(format!("{id}.png")))?;
        imageio::save_gray(&p.mask, &masks.join(format!("{id}.png")))?;
    }
    Ok((images, masks))
}
