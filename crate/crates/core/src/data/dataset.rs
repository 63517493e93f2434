//! On-disk dataset: `manifest.json`, `images/<id>.ppm`, `masks/<id>.pgm`.
//!
//! The manifest carries a SHA-256 over every image file followed by its mask
//! file, in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::keypatch::BinaryMask;
use crate::model::ImageTensor;
use crate::pnm;

use super::synth::{generate_samples, Sample, SyntheticSpec};
use super::DataError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub count: usize,
    pub samples: Vec<ManifestEntry>,
    pub content_hash: String,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn encode_sample(s: &Sample) -> (Vec<u8>, Vec<u8>) {
    let image = pnm::encode_ppm(s.image.width, s.image.height, &s.image.to_rgb8());
    (image, s.mask.to_pgm_bytes())
}

/// Writes `samples` under `root` and returns the manifest.
pub fn write_samples(root: &Path, spec: &SyntheticSpec, samples: &[Sample]) -> Result<Manifest, DataError> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    let mut hasher = Sha256::new();
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let entry = ManifestEntry {
            id: s.id.clone(),
            image: format!("images/{}.ppm", s.id),
            mask: format!("masks/{}.pgm", s.id),
        };
        let (img, mask) = encode_sample(s);
        hasher.update(&img);
        hasher.update(&mask);
        for (rel, bytes) in [(&entry.image, img), (&entry.mask, mask)] {
            let path = root.join(rel);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        entries.push(entry);
    }
    let manifest = Manifest {
        spec: spec.clone(),
        count: samples.len(),
        samples: entries,
        content_hash: hex::encode(hasher.finalize()),
    };
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

/// Generates every sample of `spec` and writes it under `root`.
pub fn write_dataset(root: &Path, spec: &SyntheticSpec) -> Result<Manifest, DataError> {
    let samples = generate_samples(spec)?;
    write_samples(root, spec, &samples)
}

fn count_files(dir: &Path, ext: &str) -> Result<usize, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut n = 0;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        if entry.path().extension().is_some_and(|e| e == ext) {
            n += 1;
        }
    }
    Ok(n)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DataError> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Reads and verifies a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<(Manifest, Vec<Sample>), DataError> {
    let manifest = read_manifest(root)?;
    if manifest.count != manifest.samples.len() {
        return Err(DataError::Integrity(format!(
            "manifest count {} but {} entries",
            manifest.count,
            manifest.samples.len()
        )));
    }
    for (sub, ext) in [("images", "ppm"), ("masks", "pgm")] {
        let on_disk = count_files(&root.join(sub), ext)?;
        if on_disk != manifest.count {
            return Err(DataError::Integrity(format!(
                "manifest lists {} samples but {sub}/ holds {on_disk} .{ext} files",
                manifest.count
            )));
        }
    }

    let mut hasher = Sha256::new();
    let mut samples = Vec::with_capacity(manifest.count);
    for entry in &manifest.samples {
        let image_path: PathBuf = root.join(&entry.image);
        let mask_path: PathBuf = root.join(&entry.mask);
        let image_bytes = fs::read(&image_path).map_err(|e| io_err(&image_path, e))?;
        let mask_bytes = fs::read(&mask_path).map_err(|e| io_err(&mask_path, e))?;
        hasher.update(&image_bytes);
        hasher.update(&mask_bytes);

        let raster = pnm::decode(&image_bytes, &image_path.display().to_string())?;
        if raster.channels != 3 {
            return Err(DataError::Parse {
                path: image_path.display().to_string(),
                reason: "expected an RGB PPM".into(),
            });
        }
        let image = ImageTensor::from_rgb8(raster.height, raster.width, &raster.data);
        let mask = BinaryMask::from_pgm_bytes(&mask_bytes, &mask_path.display().to_string())?;
        if (mask.height(), mask.width()) != (image.height, image.width) {
            return Err(DataError::Parse {
                path: mask_path.display().to_string(),
                reason: "mask and image dimensions differ".into(),
            });
        }
        samples.push(Sample {
            id: entry.id.clone(),
            image,
            mask,
        });
    }
    let digest = hex::encode(hasher.finalize());
    if digest != manifest.content_hash {
        return Err(DataError::Integrity(format!(
            "content hash mismatch: manifest {}, files {digest}",
            manifest.content_hash
        )));
    }
    Ok((manifest, samples))
}
