//! Corpus ingestion, preprocessing, splitting and evaluation filtering.

mod filter;
mod ingest;
mod preprocess;
mod split;

pub use filter::{eval_filter, DEFAULT_MIN_HAIR_FRACTION};
pub use ingest::{ingest_corpus, read_manifest, write_manifest, ManifestEntry};
pub use preprocess::{load_record, load_records, preprocess_sample, resize_bilinear, MASK_THRESHOLD};
pub use split::{
    make_split, read_split, shuffle, write_split, DatasetSplit, SplitRng, DEFAULT_TRAIN_FRACTION,
};

use candle_core::{DType, Tensor};

use crate::{ensure_finite, Error, Result, IMAGE_SIZE};

/// One preprocessed dataset item. Immutable after construction.
///
/// All tensors are f32 with a leading batch axis of one: the image and the
/// derived regions are `1×3×128×128` in `[-1, 1]`, the mask is `1×1×128×128`
/// with values in `{0, 1}`.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    id: String,
    image: Tensor,
    mask: Tensor,
    hair_region: Tensor,
    background: Tensor,
    hair_fraction: f64,
}

impl SampleRecord {
    /// Builds a record from an already normalized image and binary mask,
    /// deriving the hair region `image ⊙ M` and background `image ⊙ (1 − M)`.
    pub fn new(id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let n = IMAGE_SIZE;
        if image.dims() != [1, 3, n, n] {
            return Err(Error::shape("SampleRecord image", "1×3×128×128", format!("{:?}", image.dims())));
        }
        if mask.dims() != [1, 1, n, n] {
            return Err(Error::shape("SampleRecord mask", "1×1×128×128", format!("{:?}", mask.dims())));
        }
        let image = image.to_dtype(DType::F32)?;
        let mask = mask.to_dtype(DType::F32)?;
        ensure_finite(&image, "sample image")?;
        let values = mask.flatten_all()?.to_vec1::<f32>()?;
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("mask must be binary".into()));
        }
        let hair_fraction = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        let hair_region = image.broadcast_mul(&mask)?;
        let background = image.broadcast_mul(&mask.affine(-1.0, 1.0)?)?;
        Ok(Self {
            id: id.into(),
            image,
            mask,
            hair_region,
            background,
            hair_fraction,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn hair_region(&self) -> &Tensor {
        &self.hair_region
    }

    pub fn background(&self) -> &Tensor {
        &self.background
    }

    /// Mean of the mask, in `[0, 1]`.
    pub fn hair_fraction(&self) -> f64 {
        self.hair_fraction
    }
}
