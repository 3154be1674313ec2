use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Pixel, Rgb, RgbImage};

use candle_core::Tensor;

use super::{ManifestEntry, SampleRecord};
use crate::imageio::{load_gray, load_rgb};
use crate::{device, Error, Result, IMAGE_SIZE};

/// Masks are re-binarized at this level (of the `[0, 1]`-scaled gray value)
/// after resampling; values at or above it count as hair.
pub const MASK_THRESHOLD: f32 = 0.5;

/// Bilinear (triangle-filter) resampling of a float image. When shrinking,
/// the filter support widens with the scale factor so every source pixel
/// contributes, which keeps thin mask structures from aliasing away.
pub fn resize_bilinear<P>(img: &ImageBuffer<P, Vec<f32>>, width: u32, height: u32) -> ImageBuffer<P, Vec<f32>>
where
    P: Pixel<Subpixel = f32> + 'static,
{
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    imageops::resize(img, width, height, FilterType::Triangle)
}

/// Turns a raw photo and its hair mask into a 128×128 [`SampleRecord`].
///
/// Pixels are mapped to `[-1, 1]` via `v / 127.5 − 1`; the mask is scaled to
/// `[0, 1]`, resized, and only then thresholded at [`MASK_THRESHOLD`] so the
/// binary mask stays aligned with the resampled image.
pub fn preprocess_sample(id: &str, raw_image: &RgbImage, raw_mask: &GrayImage) -> Result<SampleRecord> {
    if raw_image.dimensions() != raw_mask.dimensions() {
        return Err(Error::shape(
            "preprocess_sample",
            format!("mask dims {:?}", raw_image.dimensions()),
            format!("{:?}", raw_mask.dimensions()),
        ));
    }
    let (w, h) = raw_image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("image {id} is empty")));
    }
    let n = IMAGE_SIZE as u32;

    let rgb: ImageBuffer<Rgb<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w, h, |x, y| Rgb(raw_image.get_pixel(x, y).0.map(f32::from)));
    let rgb = resize_bilinear(&rgb, n, n);
    let gray: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w, h, |x, y| Luma([raw_mask.get_pixel(x, y).0[0] as f32 / 255.0]));
    let gray = resize_bilinear(&gray, n, n);

    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut image = vec![0f32; 3 * plane];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            image[c * plane + y as usize * IMAGE_SIZE + x as usize] = px.0[c] / 127.5 - 1.0;
        }
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("preprocessed image {id}")));
    }
    let mask: Vec<f32> = gray
        .pixels()
        .map(|p| if p.0[0] >= MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();

    let image = Tensor::from_vec(image, (1, 3, IMAGE_SIZE, IMAGE_SIZE), &device())?;
    let mask = Tensor::from_vec(mask, (1, 1, IMAGE_SIZE, IMAGE_SIZE), &device())?;
    SampleRecord::new(id, image, mask)
}

/// Reads and preprocesses one manifest entry.
pub fn load_record(entry: &ManifestEntry) -> Result<SampleRecord> {
    let image = load_rgb(&entry.image_path)?;
    let mask = load_gray(&entry.mask_path)?;
    preprocess_sample(&entry.id, &image, &mask)
}

pub fn load_records(entries: &[ManifestEntry]) -> Result<Vec<SampleRecord>> {
    entries.iter().map(load_record).collect()
}
