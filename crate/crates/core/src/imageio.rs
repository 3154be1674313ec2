//! Conversions between 8-bit images and `[-1, 1]` image tensors.

use std::io::Cursor;
use std::path::Path;

use candle_core::{DType, Tensor};
use image::{GrayImage, ImageFormat, RgbImage};

use crate::{device, Error, Result};

/// Maps an 8-bit RGB image to a `1×3×H×W` f32 tensor via `v / 127.5 − 1`.
pub fn rgb_to_tensor(img: &RgbImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = px.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (1, 3, h, w), &device())?)
}

/// Maps a binary mask image (0 = background, nonzero = hair) to `1×1×H×W`.
pub fn gray_to_mask(img: &GrayImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let data: Vec<f32> = img
        .pixels()
        .map(|p| if p.0[0] as f32 / 255.0 >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (1, 1, h as usize, w as usize), &device())?)
}

/// Inverse of [`rgb_to_tensor`] with clamping and rounding. Accepts `3×H×W`
/// or `1×3×H×W`.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let t = match t.rank() {
        4 => t.squeeze(0)?,
        3 => t.clone(),
        _ => return Err(Error::shape("tensor_to_rgb", "3×H×W", format!("{:?}", t.dims()))),
    };
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::shape("tensor_to_rgb", "3 channels", c));
    }
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let px = |ch: usize| {
            let v = (data[ch * h * w + y * w + x] + 1.0) * 127.5;
            v.round().clamp(0.0, 255.0) as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    }))
}

/// Renders a `{0,1}` mask tensor as a 0/255 grayscale image.
pub fn mask_to_gray(t: &Tensor) -> Result<GrayImage> {
    let dims = t.dims();
    if dims.len() < 2 || t.elem_count() != dims[dims.len() - 2] * dims[dims.len() - 1] {
        return Err(Error::shape("mask_to_gray", "1×1×H×W", format!("{dims:?}")));
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = data[y as usize * w + x as usize];
        image::Luma([if v >= 0.5 { 255 } else { 0 }])
    }))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// PNG-encodes an RGB image in memory.
pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(buf.into_inner())
}

pub fn encode_png_gray(img: &GrayImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(buf.into_inner())
}

/// Decodes an in-memory image (any format the `image` crate reads).
pub fn decode_image(bytes: &[u8]) -> Result<image::DynamicImage> {
    image::load_from_memory(bytes).map_err(|source| Error::Image {
        path: "<memory>".into(),
        source,
    })
}
