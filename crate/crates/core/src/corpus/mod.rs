//! Canonical data model: dataset manifests, class records, bird instances
//! and textual descriptor sets.
//!
//! Everything downstream (clustering, augmentation, perturbation, prompts,
//! evaluation) reads this module's types. Loading is single-threaded and the
//! loaded model is immutable, so it can be shared read-only across workers.

mod descriptors;
mod manifest;

pub use descriptors::{Descriptor, DescriptorKind, DescriptorSet, PEEB_PARTS};
pub use manifest::{BirdInstance, BoundingBox, ClassRecord, DatasetManifest, Split};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::composite::{BinaryMask, CompositeError, RasterImage};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("io error for {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate instance path: {0}")]
    DuplicatePath(String),
    #[error("class index {index} out of range (line {line}, {classes} classes)")]
    ClassIndexOutOfRange {
        line: usize,
        index: usize,
        classes: usize,
    },
    #[error("class name not resolvable against the manifest: {0}")]
    UnknownClassName(String),
    #[error("empty descriptor text at line {0}")]
    EmptyDescriptor(usize),
    #[error("name not found: {0}")]
    NameNotFound(String),
    #[error("class {0} has no scientific name")]
    MissingScientificName(String),
    #[error("bounding box {bbox} exceeds image bounds {width}x{height} for {path}")]
    BBoxOutOfBounds {
        path: String,
        bbox: String,
        width: u32,
        height: u32,
    },
    #[error("mask {mask} is {mask_w}x{mask_h} but image {image} is {img_w}x{img_h}")]
    MaskDimensionMismatch {
        image: String,
        mask: String,
        img_w: u32,
        img_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error(transparent)]
    Raster(#[from] CompositeError),
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

/// Direction of a common/scientific name lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameDirection {
    CommonToScientific,
    ScientificToCommon,
}

/// Translate a class name between the common and scientific columns.
///
/// On the subset of classes holding both names this is a bijection; applying
/// both directions round-trips to the original name.
pub fn resolve_name(
    manifest: &DatasetManifest,
    name: &str,
    direction: NameDirection,
) -> Result<String, CorpusError> {
    match direction {
        NameDirection::CommonToScientific => {
            let class = manifest
                .classes
                .iter()
                .find(|c| c.common_name == name)
                .ok_or_else(|| CorpusError::NameNotFound(name.to_string()))?;
            class
                .scientific_name
                .clone()
                .ok_or_else(|| CorpusError::MissingScientificName(name.to_string()))
        }
        NameDirection::ScientificToCommon => manifest
            .classes
            .iter()
            .find(|c| c.scientific_name.as_deref() == Some(name))
            .map(|c| c.common_name.clone())
            .ok_or_else(|| CorpusError::NameNotFound(name.to_string())),
    }
}

/// Class-name normalization used when joining descriptor files to manifests:
/// case-insensitive, with runs of whitespace, hyphens and underscores
/// collapsed to single spaces. Sources spell names inconsistently
/// ("Black-footed" vs "Black footed").
pub fn normalize_class_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_whitespace() || ch == '-' || ch == '_' {
            pending_sep = !out.is_empty();
        } else {
            if pending_sep {
                out.push(' ');
                pending_sep = false;
            }
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        }
    }
    out
}

/// Resolve a manifest-recorded path against the manifest's directory.
pub fn resolve_path(root: &Path, recorded: &Path) -> PathBuf {
    if recorded.is_absolute() {
        recorded.to_path_buf()
    } else {
        root.join(recorded)
    }
}

/// Load an instance's image plus optional mask, enforcing the geometric
/// invariants that can only be checked after decode: the mask must match the
/// image dimensions and the bounding box must lie within the image.
pub fn load_instance_rasters(
    root: &Path,
    instance: &BirdInstance,
) -> Result<(RasterImage, Option<BinaryMask>), CorpusError> {
    let image = RasterImage::load(&resolve_path(root, &instance.image_ref))?;
    if let Some(bbox) = &instance.bbox {
        if !bbox.fits_within(image.width, image.height) {
            return Err(CorpusError::BBoxOutOfBounds {
                path: instance.image_ref.display().to_string(),
                bbox: bbox.to_field(),
                width: image.width,
                height: image.height,
            });
        }
    }
    let mask = match &instance.mask_ref {
        Some(mask_ref) => {
            let mask = BinaryMask::load(&resolve_path(root, mask_ref))?;
            if mask.width != image.width || mask.height != image.height {
                return Err(CorpusError::MaskDimensionMismatch {
                    image: instance.image_ref.display().to_string(),
                    mask: mask_ref.display().to_string(),
                    img_w: image.width,
                    img_h: image.height,
                    mask_w: mask.width,
                    mask_h: mask.height,
                });
            }
            Some(mask)
        }
        None => None,
    };
    Ok((image, mask))
}
