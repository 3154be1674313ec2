use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One line of the manifest file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn find_mask(mask_dir: &Path, image_path: &Path, id: &str) -> Option<PathBuf> {
    let by_stem = mask_dir.join(format!("{id}.png"));
    if by_stem.is_file() {
        return Some(by_stem);
    }
    let same_name = mask_dir.join(image_path.file_name()?);
    same_name.is_file().then_some(same_name)
}

/// Pairs every image in `image_dir` with the same-named mask in `mask_dir`.
///
/// Pairs with a missing or undecodable file are skipped with a warning. The
/// result is sorted by id and, when `manifest_out` is given, written there
/// as JSON lines.
pub fn ingest_corpus(image_dir: &Path, mask_dir: &Path, manifest_out: Option<&Path>) -> Result<Vec<ManifestEntry>> {
    let listing = fs::read_dir(image_dir).map_err(|e| Error::io(image_dir, e))?;
    let mut images: Vec<PathBuf> = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(image_dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            images.push(path);
        }
    }
    images.sort();

    let mut entries = Vec::with_capacity(images.len());
    for image_path in images {
        let Some(id) = image_path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            log::warn!("skipping {}: file name is not valid UTF-8", image_path.display());
            continue;
        };
        let Some(mask_path) = find_mask(mask_dir, &image_path, &id) else {
            log::warn!("skipping {id}: no mask in {}", mask_dir.display());
            continue;
        };
        if let Err(e) = image::open(&image_path) {
            log::warn!("skipping {id}: unreadable image: {e}");
            continue;
        }
        if let Err(e) = image::open(&mask_path) {
            log::warn!("skipping {id}: unreadable mask: {e}");
            continue;
        }
        entries.push(ManifestEntry {
            id,
            image_path,
            mask_path,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if entries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(out) = manifest_out {
        write_manifest(&entries, out)?;
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
