//! The five evaluation variants of the robustness suite: original images,
//! birds on black (no habitat), habitat only (no bird), eight small black
//! boxes on the bird, and one big black box over the whole bird.
//!
//! Every transform is a pure per-image function; box placement draws from a
//! seeded generator so suites replay bit-exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::composite::{extract_only_bird, BinaryMask, CompositeError, Inpainter, RasterImage};
use crate::corpus::{BirdInstance, BoundingBox, CorpusError, DatasetManifest};
use crate::seedstream::rng_for;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("instance {0} has no mask")]
    MissingMask(String),
    #[error("instance {0} has no bounding box")]
    MissingBBox(String),
    #[error("inpainter failed for {instance}: {source}")]
    InpainterFailure {
        instance: String,
        source: CompositeError,
    },
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PerturbationKind {
    Original,
    BlackBackground,
    NoBird,
    BlackBoxes,
    BigBox,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::Original,
        PerturbationKind::BlackBackground,
        PerturbationKind::NoBird,
        PerturbationKind::BlackBoxes,
        PerturbationKind::BigBox,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbationKind::Original => "original",
            PerturbationKind::BlackBackground => "black-background",
            PerturbationKind::NoBird => "no-bird",
            PerturbationKind::BlackBoxes => "black-boxes",
            PerturbationKind::BigBox => "big-box",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Some(PerturbationKind::Original),
            "black-background" | "black_background" => Some(PerturbationKind::BlackBackground),
            "no-bird" | "no_bird" => Some(PerturbationKind::NoBird),
            "black-boxes" | "black_boxes" | "small-boxes" => Some(PerturbationKind::BlackBoxes),
            "big-box" | "big_box" => Some(PerturbationKind::BigBox),
            _ => None,
        }
    }

    fn needs_mask(&self) -> bool {
        matches!(
            self,
            PerturbationKind::BlackBackground | PerturbationKind::NoBird
        )
    }

    fn needs_bbox(&self) -> bool {
        matches!(
            self,
            PerturbationKind::BlackBoxes | PerturbationKind::BigBox
        )
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Suite knobs; the defaults (8 boxes at 15% of the bbox side) are recorded
/// in the run metadata of every output tree.
#[derive(Debug, Clone)]
pub struct PerturbOptions {
    pub seed: u64,
    pub box_count: usize,
    pub box_frac: f64,
    /// Use the bounding box as a rectangular mask when no pixel mask ships
    /// with an instance (some datasets have boxes only).
    pub bbox_as_mask: bool,
    /// Skip instances missing a prerequisite instead of failing the suite.
    pub skip_missing: bool,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            box_count: 8,
            box_frac: 0.15,
            bbox_as_mask: false,
            skip_missing: false,
        }
    }
}

/// Bird on black: identical to the compositing extraction.
pub fn black_background(
    image: &RasterImage,
    mask: &BinaryMask,
) -> Result<RasterImage, PerturbError> {
    Ok(extract_only_bird(image, mask)?)
}

/// Habitat only: the bird region is replaced by the inpainter's output;
/// every unmasked pixel stays bit-identical to the input.
pub fn no_bird(
    image: &RasterImage,
    mask: &BinaryMask,
    inpainter: &dyn Inpainter,
    instance: &str,
) -> Result<RasterImage, PerturbError> {
    if mask.count_ones() == 0 {
        return Ok(image.clone());
    }
    let filled =
        inpainter
            .inpaint(image, mask)
            .map_err(|source| PerturbError::InpainterFailure {
                instance: instance.to_string(),
                source,
            })?;
    if filled.width != image.width || filled.height != image.height {
        return Err(PerturbError::InpainterFailure {
            instance: instance.to_string(),
            source: CompositeError::DimensionMismatch(
                filled.width,
                filled.height,
                image.width,
                image.height,
            ),
        });
    }
    // Stitch: inpainter output inside the mask, input outside.
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            if mask.get(x, y) == 1 {
                out.set_pixel(x, y, filled.pixel(x, y));
            }
        }
    }
    Ok(out)
}

/// Black out the full bounding box.
pub fn big_box(image: &RasterImage, bbox: &BoundingBox) -> RasterImage {
    let mut out = image.clone();
    let x1 = (bbox.x + bbox.w).min(image.width);
    let y1 = (bbox.y + bbox.h).min(image.height);
    for y in bbox.y.min(image.height)..y1 {
        for x in bbox.x.min(image.width)..x1 {
            out.set_pixel(x, y, [0, 0, 0]);
        }
    }
    out
}

/// Box geometry drawn for one image; exposed so replays can be audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32, // exclusive
    pub y1: u32, // exclusive
}

/// The center draws for `count` boxes inside `bbox`; one `(cx, cy)` pair per
/// box, in draw order.
pub fn replay_box_centers(bbox: &BoundingBox, seed: u64, count: usize) -> Vec<(u32, u32)> {
    let mut rng = rng_for(seed, &["black-boxes"]);
    (0..count)
        .map(|_| {
            let cx = rng.random_range(bbox.x..bbox.x + bbox.w);
            let cy = rng.random_range(bbox.y..bbox.y + bbox.h);
            (cx, cy)
        })
        .collect()
}

fn boxes_from_centers(bbox: &BoundingBox, centers: &[(u32, u32)], frac: f64) -> Vec<PlacedBox> {
    let bw = ((frac * f64::from(bbox.w)).ceil() as u32).max(1);
    let bh = ((frac * f64::from(bbox.h)).ceil() as u32).max(1);
    centers
        .iter()
        .map(|&(cx, cy)| {
            let left = i64::from(cx) - i64::from(bw / 2);
            let top = i64::from(cy) - i64::from(bh / 2);
            // Clip to the bounding box.
            let x0 = left.max(i64::from(bbox.x)) as u32;
            let y0 = top.max(i64::from(bbox.y)) as u32;
            let x1 = ((left + i64::from(bw)).min(i64::from(bbox.x + bbox.w))).max(0) as u32;
            let y1 = ((top + i64::from(bh)).min(i64::from(bbox.y + bbox.h))).max(0) as u32;
            PlacedBox { x0, y0, x1, y1 }
        })
        .collect()
}

/// Stamp `count` black boxes of size `ceil(frac*w) x ceil(frac*h)` (at least
/// 1px) at centers drawn uniformly inside the bounding box, clipped to it.
pub fn black_boxes(
    image: &RasterImage,
    bbox: &BoundingBox,
    seed: u64,
    count: usize,
    frac: f64,
) -> RasterImage {
    let centers = replay_box_centers(bbox, seed, count);
    let boxes = boxes_from_centers(bbox, &centers, frac);
    let mut out = image.clone();
    for b in boxes {
        for y in b.y0..b.y1.min(image.height) {
            for x in b.x0..b.x1.min(image.width) {
                out.set_pixel(x, y, [0, 0, 0]);
            }
        }
    }
    out
}

/// One skipped instance in a suite run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipRecord {
    pub kind: PerturbationKind,
    pub instance: String,
    pub reason: String,
}

/// Suite-level bookkeeping: skips and bbox-as-mask degradations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuiteReport {
    pub skipped: Vec<SkipRecord>,
    pub degraded: Vec<(PerturbationKind, String)>,
}

impl SuiteReport {
    pub fn serialize(&self) -> String {
        let mut out = String::from("#perturb-report\n");
        for s in &self.skipped {
            out.push_str(&format!("skip\t{}\t{}\t{}\n", s.kind, s.instance, s.reason));
        }
        for (kind, instance) in &self.degraded {
            out.push_str(&format!("bbox-as-mask\t{kind}\t{instance}\n"));
        }
        out
    }
}

fn output_name(instance: &BirdInstance) -> String {
    let mut name = instance
        .image_ref
        .display()
        .to_string()
        .replace(['/', '\\'], "__");
    if let Some(dot) = name.rfind('.') {
        name.truncate(dot);
    }
    name.push_str(".png");
    name
}

fn effective_mask(
    instance: &BirdInstance,
    mask: Option<BinaryMask>,
    image: &RasterImage,
    options: &PerturbOptions,
) -> Option<(BinaryMask, bool)> {
    if let Some(m) = mask {
        return Some((m, false));
    }
    if options.bbox_as_mask {
        if let Some(bbox) = &instance.bbox {
            let mut m = BinaryMask::filled(image.width, image.height, 0);
            let x1 = (bbox.x + bbox.w).min(image.width);
            let y1 = (bbox.y + bbox.h).min(image.height);
            for y in bbox.y.min(image.height)..y1 {
                for x in bbox.x.min(image.width)..x1 {
                    m.set(x, y, 1);
                }
            }
            return Some((m, true));
        }
    }
    None
}

/// Build the requested test variants under `out_dir`, one subdirectory and
/// manifest per kind. Missing prerequisites either fail the run or, with
/// `skip_missing`, drop the instance from that kind and note it in the
/// report.
pub fn build_suite(
    manifest: &DatasetManifest,
    root: &Path,
    kinds: &[PerturbationKind],
    out_dir: &Path,
    options: &PerturbOptions,
    inpainter: &(dyn Inpainter + Sync),
) -> Result<(BTreeMap<PerturbationKind, DatasetManifest>, SuiteReport), PerturbError> {
    use rayon::prelude::*;

    let mut report = SuiteReport::default();
    let mut manifests = BTreeMap::new();

    for &kind in kinds {
        let kind_dir = out_dir.join(kind.as_str());
        let images_dir = kind_dir.join("images");
        std::fs::create_dir_all(&images_dir).map_err(|source| PerturbError::Io {
            path: images_dir.display().to_string(),
            source,
        })?;

        // Transform data-parallel; collect preserves manifest order, so the
        // report and manifests come out deterministic.
        let outcomes: Vec<Outcome> = manifest
            .instances
            .par_iter()
            .map(
                |instance| match perturb_instance(instance, root, kind, options, inpainter) {
                    Ok((image, degraded)) => Ok(Outcome::Done {
                        image: Box::new(image),
                        degraded,
                    }),
                    Err(e) if options.skip_missing && is_prerequisite_error(&e) => {
                        Ok(Outcome::Skipped {
                            reason: e.to_string(),
                        })
                    }
                    Err(e) => Err(e),
                },
            )
            .collect::<Result<Vec<_>, PerturbError>>()?;

        let mut instances = Vec::new();
        for (instance, outcome) in manifest.instances.iter().zip(outcomes) {
            match outcome {
                Outcome::Done { image, degraded } => {
                    let name = output_name(instance);
                    let rel = PathBuf::from("images").join(&name);
                    image.save(&kind_dir.join(&rel))?;
                    let mut out_instance = BirdInstance::new(rel, instance.class_index);
                    out_instance.bbox = instance.bbox;
                    instances.push(out_instance);
                    if degraded {
                        report.degraded.push((kind, instance.id()));
                    }
                }
                Outcome::Skipped { reason } => {
                    report.skipped.push(SkipRecord {
                        kind,
                        instance: instance.id(),
                        reason,
                    });
                }
            }
        }

        let out_manifest = DatasetManifest {
            dataset_name: format!("{}-{kind}", manifest.dataset_name),
            classes: manifest.classes.clone(),
            instances,
            split: manifest.split,
        };
        out_manifest
            .save(&kind_dir.join("manifest.txt"))
            .map_err(PerturbError::Corpus)?;
        manifests.insert(kind, out_manifest);
    }
    Ok((manifests, report))
}

enum Outcome {
    Done {
        image: Box<RasterImage>,
        degraded: bool,
    },
    Skipped {
        reason: String,
    },
}

fn is_prerequisite_error(e: &PerturbError) -> bool {
    matches!(
        e,
        PerturbError::MissingMask(_) | PerturbError::MissingBBox(_)
    )
}

fn perturb_instance(
    instance: &BirdInstance,
    root: &Path,
    kind: PerturbationKind,
    options: &PerturbOptions,
    inpainter: &dyn Inpainter,
) -> Result<(RasterImage, bool), PerturbError> {
    // Check cheap prerequisites before decoding any pixels.
    if kind.needs_bbox() && instance.bbox.is_none() {
        return Err(PerturbError::MissingBBox(instance.id()));
    }
    if kind.needs_mask()
        && instance.mask_ref.is_none()
        && !(options.bbox_as_mask && instance.bbox.is_some())
    {
        return Err(PerturbError::MissingMask(instance.id()));
    }

    let (image, mask) = crate::corpus::load_instance_rasters(root, instance)?;
    match kind {
        PerturbationKind::Original => Ok((image, false)),
        PerturbationKind::BigBox => {
            let bbox = instance
                .bbox
                .ok_or_else(|| PerturbError::MissingBBox(instance.id()))?;
            Ok((big_box(&image, &bbox), false))
        }
        PerturbationKind::BlackBoxes => {
            let bbox = instance
                .bbox
                .ok_or_else(|| PerturbError::MissingBBox(instance.id()))?;
            let seed = crate::seedstream::derive_seed(options.seed, &["instance", &instance.id()]);
            Ok((
                black_boxes(&image, &bbox, seed, options.box_count, options.box_frac),
                false,
            ))
        }
        PerturbationKind::BlackBackground | PerturbationKind::NoBird => {
            let (mask, degraded) = effective_mask(instance, mask, &image, options)
                .ok_or_else(|| PerturbError::MissingMask(instance.id()))?;
            let out = match kind {
                PerturbationKind::BlackBackground => black_background(&image, &mask)?,
                _ => no_bird(&image, &mask, inpainter, &instance.id())?,
            };
            Ok((out, degraded))
        }
    }
}
