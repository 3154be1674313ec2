//! Safetensors checkpoints with JSON metadata.
//!
//! Parameters keep their store names (`generator.stage0.conv1.weight`, …).
//! Training checkpoints add Adam moments as `optim.<group>.<m|v>.<name>` and
//! carry the configs and step counter in the safetensors metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor};

use crate::model::{HairGan, ModelConfig, ParamStore};
use crate::{device, Error, Result};

pub const FORMAT: &str = "hairgan/1";
pub const KEY_FORMAT: &str = "format";
pub const KEY_MODEL_CONFIG: &str = "model_config";
pub const KEY_CHECKPOINT_ID: &str = "checkpoint_id";

/// Tensors and metadata of one file.
#[derive(Debug)]
pub struct Checkpoint {
    pub tensors: HashMap<String, Tensor>,
    pub metadata: HashMap<String, String>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {key:?}")))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg: ModelConfig = serde_json::from_str(self.meta(KEY_MODEL_CONFIG)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes to a sibling temporary file and renames it into place, so an
/// interrupted save never leaves a truncated checkpoint behind.
pub fn save(path: &Path, tensors: &[(String, Tensor)], metadata: HashMap<String, String>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("safetensors.partial");
    let mut metadata = metadata;
    metadata.insert(KEY_FORMAT.into(), FORMAT.into());
    let data = tensors.iter().map(|(k, t)| (k.as_str(), t));
    safetensors::serialize_to_file(data, Some(metadata), &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)?;
    let metadata = header.metadata().clone().unwrap_or_default();
    match metadata.get(KEY_FORMAT) {
        Some(f) if f == FORMAT => {}
        other => return Err(Error::Checkpoint(format!("{}: unsupported format {other:?}", path.display()))),
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &device())?;
    Ok(Checkpoint { tensors, metadata })
}

pub(crate) fn store_tensors(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
}

/// Identifier derived from the generator weights.
pub fn checkpoint_id(model: &HairGan) -> Result<String> {
    Ok(format!("{:016x}", model.generator.params().fingerprint()?))
}

pub(crate) fn model_metadata(model: &HairGan) -> Result<HashMap<String, String>> {
    Ok(HashMap::from([
        (KEY_MODEL_CONFIG.to_string(), serde_json::to_string(&model.config)?),
        (KEY_CHECKPOINT_ID.to_string(), checkpoint_id(model)?),
    ]))
}

/// Saves inference weights: generator and encoder only.
pub fn export_weights(model: &HairGan, path: &Path) -> Result<()> {
    let mut tensors = store_tensors(model.generator.params());
    tensors.extend(store_tensors(model.encoder.params()));
    save(path, &tensors, model_metadata(model)?)
}

/// Builds a model from any checkpoint with a model config. The
/// discriminator is restored when present and left at its initialization
/// otherwise.
pub fn load_model(path: &Path) -> Result<HairGan> {
    let ckpt = load(path)?;
    model_from_checkpoint(&ckpt)
}

pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<HairGan> {
    let config = ckpt.model_config()?;
    let model = HairGan::new(&config, DType::F32, 0)?;
    model.generator.params().load(&ckpt.tensors)?;
    model.encoder.params().load(&ckpt.tensors)?;
    if ckpt.tensors.keys().any(|k| k.starts_with("discriminator.")) {
        model.discriminator.params().load(&ckpt.tensors)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{reconstruct, Synthesizer};

    #[test]
    fn export_and_reload_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let model = HairGan::new(&ModelConfig::miniature(), DType::F32, 17).unwrap();
        export_weights(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(checkpoint_id(&model).unwrap(), checkpoint_id(&back).unwrap());
        assert_eq!(model.generator_param_count(), back.generator_param_count());
        let rec = &crate::synthetic::records(1, 2).unwrap()[0];
        let a = reconstruct(&model, rec, 5).unwrap().image.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = reconstruct(&back, rec, 5).unwrap().image.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn foreign_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        let t = Tensor::zeros(3, DType::F32, &device()).unwrap();
        candle_core::safetensors::save(&HashMap::from([("a".to_string(), t)]), &path).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
        assert!(load(&dir.path().join("missing.safetensors")).is_err());
    }
}
