//! FlyBird / Non-FlyBird partitioning from panoptic label maps.
//!
//! A panoptic segmenter (external to this crate) produces per-pixel category
//! ids; an image counts as a flying-bird shot when enough sky is visible and
//! not too much ground habitat (rocks, grass, water). The default rule is
//! literal sky presence: any sky pixel marks the image FlyBird.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{resolve_path, BirdInstance, DatasetManifest};

#[derive(Debug, Error)]
pub enum FlyBirdError {
    #[error("label id {0} missing from the legend")]
    UnknownId(u16),
    #[error("instance {0} has no panoptic label map")]
    MissingPanoptic(String),
    #[error("label map {path}: {message}")]
    BadLabelMap { path: String, message: String },
    #[error("sky and ground id sets overlap on id {0}")]
    OverlappingRule(u16),
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Per-pixel category ids with a legend naming each id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticLabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
    pub legend: BTreeMap<u16, String>,
}

impl PanopticLabelMap {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u16>,
        legend: BTreeMap<u16, String>,
    ) -> Result<Self, FlyBirdError> {
        assert_eq!(labels.len(), width as usize * height as usize);
        for &id in &labels {
            if !legend.contains_key(&id) {
                return Err(FlyBirdError::UnknownId(id));
            }
        }
        Ok(Self {
            width,
            height,
            labels,
            legend,
        })
    }

    /// Load a 16-bit single-channel raster plus its `id<TAB>name` legend
    /// sidecar (`<map>.legend` next to the map file).
    pub fn load(map_path: &Path) -> Result<Self, FlyBirdError> {
        let img = image::open(map_path)
            .map_err(|e| FlyBirdError::BadLabelMap {
                path: map_path.display().to_string(),
                message: e.to_string(),
            })?
            .to_luma16();
        let (width, height) = (img.width(), img.height());
        let labels: Vec<u16> = img.into_raw();

        let legend_path = legend_path_for(map_path);
        let legend_text =
            std::fs::read_to_string(&legend_path).map_err(|source| FlyBirdError::Io {
                path: legend_path.display().to_string(),
                source,
            })?;
        let legend = parse_legend(&legend_text, &legend_path)?;
        Self::new(width, height, labels, legend)
    }

    pub fn frac_of(&self, ids: &BTreeSet<u16>) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let hits = self.labels.iter().filter(|id| ids.contains(id)).count();
        hits as f64 / self.labels.len() as f64
    }
}

/// Sidecar legend path: `<map>.legend`.
pub fn legend_path_for(map_path: &Path) -> std::path::PathBuf {
    let mut s = map_path.as_os_str().to_os_string();
    s.push(".legend");
    std::path::PathBuf::from(s)
}

pub fn parse_legend(text: &str, path: &Path) -> Result<BTreeMap<u16, String>, FlyBirdError> {
    let mut legend = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id_str, name) = line.split_once('\t').ok_or(FlyBirdError::BadLabelMap {
            path: path.display().to_string(),
            message: format!("legend line {} needs `id<TAB>name`", idx + 1),
        })?;
        let id: u16 = id_str
            .trim()
            .parse()
            .map_err(|_| FlyBirdError::BadLabelMap {
                path: path.display().to_string(),
                message: format!("bad legend id {id_str:?}"),
            })?;
        legend.insert(id, name.trim().to_string());
    }
    Ok(legend)
}

/// Threshold rule deciding FlyBird membership.
#[derive(Debug, Clone, PartialEq)]
pub struct FlyBirdRule {
    pub sky_ids: BTreeSet<u16>,
    pub ground_ids: BTreeSet<u16>,
    /// Minimum sky-pixel fraction; the default (machine epsilon) makes any
    /// sky pixel count, i.e. literal "sky present".
    pub sky_min_frac: f64,
    /// Maximum ground-pixel fraction; 1.0 disables the ground check.
    pub ground_max_frac: f64,
}

impl FlyBirdRule {
    pub fn new(sky_ids: BTreeSet<u16>, ground_ids: BTreeSet<u16>) -> Result<Self, FlyBirdError> {
        if let Some(&id) = sky_ids.intersection(&ground_ids).next() {
            return Err(FlyBirdError::OverlappingRule(id));
        }
        Ok(Self {
            sky_ids,
            ground_ids,
            sky_min_frac: f64::EPSILON,
            ground_max_frac: 1.0,
        })
    }

    pub fn with_thresholds(mut self, sky_min_frac: f64, ground_max_frac: f64) -> Self {
        self.sky_min_frac = sky_min_frac;
        self.ground_max_frac = ground_max_frac;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlyBirdVerdict {
    FlyBird,
    NonFlyBird,
}

/// FlyBird iff sky fraction >= `sky_min_frac` and ground fraction <=
/// `ground_max_frac`. Monotone in `sky_min_frac`: raising the threshold
/// never turns NonFlyBird into FlyBird.
pub fn classify(
    labelmap: &PanopticLabelMap,
    rule: &FlyBirdRule,
) -> Result<FlyBirdVerdict, FlyBirdError> {
    for &id in &labelmap.labels {
        if !labelmap.legend.contains_key(&id) {
            return Err(FlyBirdError::UnknownId(id));
        }
    }
    let sky = labelmap.frac_of(&rule.sky_ids);
    let ground = labelmap.frac_of(&rule.ground_ids);
    if sky >= rule.sky_min_frac && ground <= rule.ground_max_frac {
        Ok(FlyBirdVerdict::FlyBird)
    } else {
        Ok(FlyBirdVerdict::NonFlyBird)
    }
}

/// Split statistics reported alongside a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionStats {
    pub total: usize,
    pub fly: usize,
    pub nonfly: usize,
}

impl PartitionStats {
    pub fn fly_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.fly as f64 / self.total as f64
        }
    }
}

/// Partition a manifest into FlyBird / Non-FlyBird manifests.
///
/// Every instance must carry a `panoptic_ref`; the two output manifests are
/// disjoint and cover the input.
pub fn partition(
    manifest: &DatasetManifest,
    root: &Path,
    rule: &FlyBirdRule,
) -> Result<(DatasetManifest, DatasetManifest, PartitionStats), FlyBirdError> {
    let mut fly: Vec<BirdInstance> = Vec::new();
    let mut nonfly: Vec<BirdInstance> = Vec::new();
    for instance in &manifest.instances {
        let panoptic = instance
            .panoptic_ref
            .as_ref()
            .ok_or_else(|| FlyBirdError::MissingPanoptic(instance.id()))?;
        let map = PanopticLabelMap::load(&resolve_path(root, panoptic))?;
        match classify(&map, rule)? {
            FlyBirdVerdict::FlyBird => fly.push(instance.clone()),
            FlyBirdVerdict::NonFlyBird => nonfly.push(instance.clone()),
        }
    }
    let stats = PartitionStats {
        total: manifest.instances.len(),
        fly: fly.len(),
        nonfly: nonfly.len(),
    };
    let make = |name_suffix: &str, instances: Vec<BirdInstance>| DatasetManifest {
        dataset_name: format!("{}-{name_suffix}", manifest.dataset_name),
        classes: manifest.classes.clone(),
        instances,
        split: manifest.split,
    };
    Ok((make("flybird", fly), make("nonflybird", nonfly), stats))
}
