//! Reconstruction, style transfer and shape editing over a trained model.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::model::{count_params, BlendOutput, HairGan, MaskPyramid};
use crate::{imageio, model, Error, Result, IMAGE_SIZE};

/// Noise seed used when a request does not name one.
pub const DEFAULT_TASK_SEED: u64 = 1234;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Reconstruct,
    Transfer,
    Edit,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Reconstruct => "reconstruct",
            TaskKind::Transfer => "transfer",
            TaskKind::Edit => "edit",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstruct" => Ok(TaskKind::Reconstruct),
            "transfer" => Ok(TaskKind::Transfer),
            "edit" => Ok(TaskKind::Edit),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// Anything that can synthesize hair with the style of `reference` under
/// `mask` over `background`.
pub trait Synthesizer: Send + Sync {
    fn synthesize(
        &self,
        source: &SampleRecord,
        reference: &SampleRecord,
        mask: &Tensor,
        background: &Tensor,
        seed: u64,
    ) -> Result<BlendOutput>;

    fn generator_param_count(&self) -> usize;
}

impl Synthesizer for HairGan {
    fn synthesize(
        &self,
        _source: &SampleRecord,
        reference: &SampleRecord,
        mask: &Tensor,
        background: &Tensor,
        seed: u64,
    ) -> Result<BlendOutput> {
        let dt = self.dtype();
        let z = model::sample_noise(1, self.config.noise_dim, Some(seed), dt)?;
        let style = self
            .encoder
            .forward(&reference.hair_region().to_dtype(dt)?, &reference.mask().to_dtype(dt)?)?;
        let pyramid = MaskPyramid::new(&mask.to_dtype(dt)?, &self.config.stage_resolutions)?;
        let out = self.generator.forward(&z, &style, &pyramid, &background.to_dtype(dt)?)?;
        Ok(BlendOutput {
            image: out.image.to_dtype(DType::F32)?,
            hair: out.hair.to_dtype(DType::F32)?,
            composite: out.composite.to_dtype(DType::F32)?,
        })
    }

    fn generator_param_count(&self) -> usize {
        count_params(self.generator.params())
    }
}

/// Returns the source image untouched: the metric optimum, used to test the
/// evaluation harness without trained weights.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentitySynthesizer;

impl Synthesizer for IdentitySynthesizer {
    fn synthesize(
        &self,
        source: &SampleRecord,
        _reference: &SampleRecord,
        mask: &Tensor,
        background: &Tensor,
        _seed: u64,
    ) -> Result<BlendOutput> {
        let hair = source.image().clone();
        let composite = model::composite(&hair, mask, background)?;
        Ok(BlendOutput { image: source.image().clone(), hair, composite })
    }

    fn generator_param_count(&self) -> usize {
        0
    }
}

/// Regenerates the source's own hair.
pub fn reconstruct(model: &dyn Synthesizer, source: &SampleRecord, seed: u64) -> Result<BlendOutput> {
    model.synthesize(source, source, source.mask(), source.background(), seed)
}

/// Renders the reference's hair style under the source's mask and background.
pub fn transfer_style(
    model: &dyn Synthesizer,
    source: &SampleRecord,
    reference: &SampleRecord,
    seed: u64,
) -> Result<BlendOutput> {
    if reference.hair_fraction() == 0.0 {
        return Err(Error::NoHairRegion);
    }
    model.synthesize(source, reference, source.mask(), source.background(), seed)
}

fn check_mask(mask: &Tensor) -> Result<Tensor> {
    let n = IMAGE_SIZE;
    if mask.dims() != [1, 1, n, n] {
        return Err(Error::shape("edited mask", "1×1×128×128", format!("{:?}", mask.dims())));
    }
    let mask = mask.to_dtype(DType::F32)?;
    let v = mask.flatten_all()?.to_vec1::<f32>()?;
    if v.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::InvalidArgument("edited mask must be binary".into()));
    }
    if v.iter().all(|&x| x == 1.0) {
        log::warn!("edited mask covers the whole image; no background is preserved");
    }
    Ok(mask)
}

/// Synthesizes hair under an edited mask. The background is recomputed as
/// `source ⊙ (1 − edited_mask)`, so pixels uncovered by a shrunken mask are
/// zero and left to the refining convolution.
pub fn edit_shape(
    model: &dyn Synthesizer,
    source: &SampleRecord,
    reference: Option<&SampleRecord>,
    edited_mask: &Tensor,
    seed: u64,
) -> Result<BlendOutput> {
    let mask = check_mask(edited_mask)?;
    let background = source.image().broadcast_mul(&mask.affine(-1.0, 1.0)?)?;
    let reference = match reference {
        Some(r) if r.hair_fraction() == 0.0 => return Err(Error::NoHairRegion),
        Some(r) => r,
        None => source,
    };
    model.synthesize(source, reference, &mask, &background, seed)
}

/// One synthesis job over loaded records.
#[derive(Clone, Debug)]
pub struct EditRequest<'a> {
    pub source: &'a SampleRecord,
    pub reference: Option<&'a SampleRecord>,
    pub edited_mask: Option<Tensor>,
    pub seed: Option<u64>,
}

impl EditRequest<'_> {
    /// Chooses the task implied by which fields are present.
    pub fn kind(&self) -> TaskKind {
        match (&self.edited_mask, self.reference) {
            (Some(_), _) => TaskKind::Edit,
            (None, Some(_)) => TaskKind::Transfer,
            (None, None) => TaskKind::Reconstruct,
        }
    }

    pub fn run(&self, model: &dyn Synthesizer) -> Result<BlendOutput> {
        let seed = self.seed.unwrap_or(DEFAULT_TASK_SEED);
        match (&self.edited_mask, self.reference) {
            (Some(m), r) => edit_shape(model, self.source, r, m, seed),
            (None, Some(r)) => transfer_style(model, self.source, r, seed),
            (None, None) => reconstruct(model, self.source, seed),
        }
    }
}

/// On-disk form of a request in a batch file, naming records by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub source: String,
    #[serde(default)]
    pub reference: Option<String>,
    /// Path to an 8-bit gray PNG, binarized at one half.
    #[serde(default)]
    pub edited_mask: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// `<source_id>__<ref_id>__<task>.png`, with the source as its own reference
/// when none is given.
pub fn output_name(source_id: &str, reference_id: Option<&str>, task: TaskKind) -> String {
    format!("{source_id}__{}__{}.png", reference_id.unwrap_or(source_id), task.as_str())
}

/// Reads a JSON list of [`RequestSpec`]s.
pub fn read_requests(path: &Path) -> Result<Vec<RequestSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs every request and writes one PNG per request into `out_dir`.
pub fn run_batch(
    model: &dyn Synthesizer,
    records: &[SampleRecord],
    requests: &[RequestSpec],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let by_id: HashMap<&str, &SampleRecord> = records.iter().map(|r| (r.id(), r)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no record with id {id:?}")))
    };
    let mut written = Vec::with_capacity(requests.len());
    for spec in requests {
        let source = lookup(&spec.source)?;
        let reference = spec.reference.as_deref().map(lookup).transpose()?;
        let edited_mask = match &spec.edited_mask {
            Some(p) => Some(load_binary_mask(p)?),
            None => None,
        };
        let req = EditRequest { source, reference, edited_mask, seed: spec.seed };
        let out = req.run(model)?;
        let path = out_dir.join(output_name(source.id(), spec.reference.as_deref(), req.kind()));
        imageio::save_rgb(&imageio::tensor_to_rgb(&out.image)?, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Loads a gray PNG as a binary `1×1×128×128` mask, resizing if needed.
pub fn load_binary_mask(path: &Path) -> Result<Tensor> {
    let gray = imageio::load_gray(path)?;
    mask_from_gray(&gray)
}

/// Square dilation of a binary mask by `radius` pixels.
pub fn dilate_mask(mask: &Tensor, radius: usize) -> Result<Tensor> {
    if radius == 0 {
        return Ok(mask.clone());
    }
    let padded = mask.pad_with_zeros(2, radius, radius)?.pad_with_zeros(3, radius, radius)?;
    Ok(padded.max_pool2d_with_stride(2 * radius + 1, 1)?)
}

/// Binarizes an 8-bit gray mask of any size to `1×1×128×128`.
pub fn mask_from_gray(gray: &image::GrayImage) -> Result<Tensor> {
    let n = IMAGE_SIZE as u32;
    let dummy = image::RgbImage::new(gray.width(), gray.height());
    let rec = crate::data::preprocess_sample("mask", &dummy, gray)?;
    debug_assert_eq!(rec.mask().dims(), &[1, 1, n as usize, n as usize]);
    Ok(rec.mask().clone())
}
