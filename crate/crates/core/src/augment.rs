//! Habitat-mixing augmentation: plan which habitat background each training
//! bird receives, then execute the plan into an augmented image tree.
//!
//! Three strategies: Mixed-Same draws the background from the bird's own
//! class, Mixed-Group from its habitat group, Mixed-Irrelevant from any
//! class outside its group. Planning is a single seeded stream over birds
//! sorted by instance id with source pools sorted the same way, so a plan
//! survives manifest reordering; execution is data-parallel per pairing with
//! deterministic output naming.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::composite::{
    extract_only_bird, overlay, resize, resize_mask, BinaryMask, CompositeError,
    DiffusionInpainter, Inpainter, RasterImage,
};
use crate::corpus::{resolve_path, BirdInstance, CorpusError, DatasetManifest};
use crate::seedstream::rng_from;
use crate::textcluster::HabitatGroups;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("instance {0} has no mask")]
    MissingMask(String),
    #[error("no eligible {strategy} source for instance {bird}")]
    NoEligibleSource { strategy: Strategy, bird: String },
    #[error("habitat groups required for {0}")]
    GroupsMissing(Strategy),
    #[error("class {0:?} not covered by the habitat groups")]
    UncoveredClass(String),
    #[error("plan does not match the manifest: {0}")]
    PlanMismatch(String),
    #[error("malformed plan at line {line}: {message}")]
    MalformedPlan { line: usize, message: String },
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    MixedS,
    MixedG,
    MixedI,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::MixedS => "mixed-s",
            Strategy::MixedG => "mixed-g",
            Strategy::MixedI => "mixed-i",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mixed-s" | "mixed_s" | "mixeds" | "mixed-same" => Some(Strategy::MixedS),
            "mixed-g" | "mixed_g" | "mixedg" | "mixed-group" => Some(Strategy::MixedG),
            "mixed-i" | "mixed_i" | "mixedi" | "mixed-irrelevant" => Some(Strategy::MixedI),
            _ => None,
        }
    }

    fn needs_groups(&self) -> bool {
        matches!(self, Strategy::MixedG | Strategy::MixedI)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A deterministic list of (bird, habitat source) pairings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationPlan {
    pub strategy: Strategy,
    pub seed: u64,
    /// (bird instance id, habitat source instance id) pairs.
    pub pairings: Vec<(String, String)>,
    /// Content hash of the habitat groups used (Mixed-G / Mixed-I).
    pub groups_ref: Option<String>,
}

/// Group index per class index, resolved through normalized names.
fn class_groups(
    manifest: &DatasetManifest,
    groups: &HabitatGroups,
) -> Result<Vec<usize>, AugmentError> {
    manifest
        .classes
        .iter()
        .map(|c| {
            groups
                .group_of(&c.common_name)
                .ok_or_else(|| AugmentError::UncoveredClass(c.common_name.clone()))
        })
        .collect()
}

/// Plan one habitat pairing per training instance (times `copies`), sources
/// drawn uniformly from the strategy's eligible pool by the seeded stream.
pub fn plan(
    manifest: &DatasetManifest,
    strategy: Strategy,
    groups: Option<&HabitatGroups>,
    seed: u64,
    copies: usize,
) -> Result<AugmentationPlan, AugmentError> {
    for instance in &manifest.instances {
        if instance.mask_ref.is_none() {
            return Err(AugmentError::MissingMask(instance.id()));
        }
    }
    let group_by_class: Option<Vec<usize>> = match (strategy.needs_groups(), groups) {
        (true, Some(g)) => Some(class_groups(manifest, g)?),
        (true, None) => return Err(AugmentError::GroupsMissing(strategy)),
        (false, _) => None,
    };

    let mut birds: Vec<&BirdInstance> = manifest.instances.iter().collect();
    birds.sort_by_key(|b| b.id());

    let mut rng = rng_from(seed);
    let mut pairings = Vec::with_capacity(birds.len() * copies);
    for bird in &birds {
        let bird_group = group_by_class.as_ref().map(|g| g[bird.class_index]);
        let mut pool: Vec<&&BirdInstance> = birds
            .iter()
            .filter(|src| {
                if src.id() == bird.id() {
                    return false;
                }
                match strategy {
                    Strategy::MixedS => src.class_index == bird.class_index,
                    Strategy::MixedG => {
                        let g = group_by_class.as_ref().expect("groups checked");
                        g[src.class_index] == bird_group.expect("groups checked")
                    }
                    Strategy::MixedI => {
                        let g = group_by_class.as_ref().expect("groups checked");
                        g[src.class_index] != bird_group.expect("groups checked")
                    }
                }
            })
            .collect();
        pool.sort_by_key(|src| src.id());
        if pool.is_empty() {
            return Err(AugmentError::NoEligibleSource {
                strategy,
                bird: bird.id(),
            });
        }
        for _ in 0..copies {
            let pick = rng.random_range(0..pool.len());
            pairings.push((bird.id(), pool[pick].id()));
        }
    }

    Ok(AugmentationPlan {
        strategy,
        seed,
        pairings,
        groups_ref: groups.map(HabitatGroups::content_hash),
    })
}

/// Check a plan's pairings against the manifest (and groups, when the
/// strategy uses them): ids resolve, and every pairing satisfies its
/// strategy invariant.
pub fn validate_plan(
    plan: &AugmentationPlan,
    manifest: &DatasetManifest,
    groups: Option<&HabitatGroups>,
) -> Result<(), AugmentError> {
    let by_id: BTreeMap<String, &BirdInstance> =
        manifest.instances.iter().map(|i| (i.id(), i)).collect();
    let group_by_class: Option<Vec<usize>> = match (plan.strategy.needs_groups(), groups) {
        (true, Some(g)) => {
            if let Some(expected) = &plan.groups_ref {
                let actual = g.content_hash();
                if *expected != actual {
                    return Err(AugmentError::PlanMismatch(format!(
                        "groups hash {actual} does not match plan reference {expected}"
                    )));
                }
            }
            Some(class_groups(manifest, g)?)
        }
        (true, None) => return Err(AugmentError::GroupsMissing(plan.strategy)),
        (false, _) => None,
    };

    for (bird_id, source_id) in &plan.pairings {
        let bird = by_id
            .get(bird_id)
            .ok_or_else(|| AugmentError::PlanMismatch(format!("unknown bird {bird_id:?}")))?;
        let source = by_id
            .get(source_id)
            .ok_or_else(|| AugmentError::PlanMismatch(format!("unknown source {source_id:?}")))?;
        if bird_id == source_id {
            return Err(AugmentError::PlanMismatch(format!(
                "bird {bird_id:?} paired with itself"
            )));
        }
        let ok = match plan.strategy {
            Strategy::MixedS => bird.class_index == source.class_index,
            Strategy::MixedG => {
                let g = group_by_class.as_ref().expect("groups checked");
                g[bird.class_index] == g[source.class_index]
            }
            Strategy::MixedI => {
                let g = group_by_class.as_ref().expect("groups checked");
                g[bird.class_index] != g[source.class_index]
            }
        };
        if !ok {
            return Err(AugmentError::PlanMismatch(format!(
                "pairing {bird_id:?} <- {source_id:?} violates {}",
                plan.strategy
            )));
        }
    }
    Ok(())
}

impl AugmentationPlan {
    pub fn serialize(&self) -> String {
        let mut out = String::from("#augmentation-plan\n");
        out.push_str(&format!("#strategy {}\n", self.strategy));
        out.push_str(&format!("#seed {}\n", self.seed));
        out.push_str(&format!(
            "#groups-sha256 {}\n",
            self.groups_ref.as_deref().unwrap_or("-")
        ));
        for (bird, source) in &self.pairings {
            out.push_str(&format!("{bird}\t{source}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let mut strategy = None;
        let mut seed = 0u64;
        let mut groups_ref = None;
        let mut pairings = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line == "#augmentation-plan" {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#strategy ") {
                strategy =
                    Some(
                        Strategy::parse(rest).ok_or_else(|| AugmentError::MalformedPlan {
                            line: line_no,
                            message: format!("unknown strategy {rest:?}"),
                        })?,
                    );
            } else if let Some(rest) = line.strip_prefix("#seed ") {
                seed = rest
                    .trim()
                    .parse()
                    .map_err(|_| AugmentError::MalformedPlan {
                        line: line_no,
                        message: format!("bad seed {rest:?}"),
                    })?;
            } else if let Some(rest) = line.strip_prefix("#groups-sha256 ") {
                let rest = rest.trim();
                groups_ref = (rest != "-").then(|| rest.to_string());
            } else if line.starts_with('#') {
                continue;
            } else {
                let (bird, source) =
                    line.split_once('\t')
                        .ok_or_else(|| AugmentError::MalformedPlan {
                            line: line_no,
                            message: "pairing line needs `<bird>\\t<source>`".into(),
                        })?;
                pairings.push((bird.to_string(), source.to_string()));
            }
        }
        Ok(Self {
            strategy: strategy.ok_or(AugmentError::MalformedPlan {
                line: 0,
                message: "missing #strategy header".into(),
            })?,
            seed,
            pairings,
            groups_ref,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AugmentError> {
        std::fs::write(path, self.serialize()).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// Execution knobs. The canvas is the common size both operands are resized
/// to before overlay; no further rescaling of the bird is performed.
#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub canvas: (u32, u32),
    pub inpaint_iterations: usize,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            canvas: (256, 256),
            inpaint_iterations: 8,
        }
    }
}

fn sanitize(id: &str) -> String {
    let mut name = id.replace(['/', '\\'], "__");
    if let Some(dot) = name.rfind('.') {
        name.truncate(dot);
    }
    name
}

/// Produce one augmented image per pairing and a manifest blending the
/// original instances with the augmented ones.
///
/// For each pairing the habitat image is the source instance's supplied
/// bird-removed image when present, otherwise the diffusion fallback applied
/// to the source; the bird is extracted onto black and overlaid. Outputs land
/// under `out_dir` (which must live under `root` so the blended manifest can
/// reference originals and augmentations through one root).
pub fn execute(
    plan: &AugmentationPlan,
    manifest: &DatasetManifest,
    root: &Path,
    out_dir: &Path,
    options: &ExecuteOptions,
) -> Result<DatasetManifest, AugmentError> {
    // Structural check; strategy invariants are validated by the caller via
    // `validate_plan`, which needs the groups for Mixed-G / Mixed-I.
    {
        let ids: std::collections::BTreeSet<String> =
            manifest.instances.iter().map(|i| i.id()).collect();
        for (bird, source) in &plan.pairings {
            for id in [bird, source] {
                if !ids.contains(id) {
                    return Err(AugmentError::PlanMismatch(format!(
                        "unknown instance {id:?}"
                    )));
                }
            }
        }
    }
    let rel_out = out_dir.strip_prefix(root).map_err(|_| AugmentError::Io {
        path: out_dir.display().to_string(),
        source: std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!(
                "output dir must live under the manifest root {}",
                root.display()
            ),
        ),
    })?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    for dir in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(dir).map_err(|source| AugmentError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    let by_id: BTreeMap<String, &BirdInstance> =
        manifest.instances.iter().map(|i| (i.id(), i)).collect();
    let inpainter = DiffusionInpainter {
        iterations: options.inpaint_iterations,
    };

    let augmented: Vec<BirdInstance> = plan
        .pairings
        .par_iter()
        .enumerate()
        .map(|(idx, (bird_id, source_id))| {
            let bird = by_id[bird_id];
            let source = by_id[source_id];
            let composed = compose_pairing(bird, source, root, options, &inpainter)?;

            let name = format!("aug_{idx:05}_{}.png", sanitize(bird_id));
            let image_rel = rel_out.join("images").join(&name);
            let mask_rel = rel_out.join("masks").join(&name);
            composed.image.save(&out_dir.join("images").join(&name))?;
            composed.mask.save(&out_dir.join("masks").join(&name))?;

            let mut instance = BirdInstance::new(image_rel, bird.class_index);
            instance.mask_ref = Some(mask_rel);
            Ok(instance)
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;

    // Blend originals and augmentations; an empty plan reproduces the input
    // manifest exactly.
    let mut instances = manifest.instances.clone();
    instances.extend(augmented);
    let out_manifest = DatasetManifest {
        dataset_name: manifest.dataset_name.clone(),
        classes: manifest.classes.clone(),
        instances,
        split: manifest.split,
    };
    out_manifest
        .save(&out_dir.join("manifest.txt"))
        .map_err(AugmentError::Corpus)?;
    Ok(out_manifest)
}

struct Composed {
    image: RasterImage,
    mask: BinaryMask,
}

fn compose_pairing(
    bird: &BirdInstance,
    source: &BirdInstance,
    root: &Path,
    options: &ExecuteOptions,
    inpainter: &dyn Inpainter,
) -> Result<Composed, AugmentError> {
    let (cw, ch) = options.canvas;

    let (bird_img, bird_mask) = crate::corpus::load_instance_rasters(root, bird)?;
    let bird_mask = bird_mask.ok_or_else(|| AugmentError::MissingMask(bird.id()))?;
    let bird_img = resize(&bird_img, cw, ch)?;
    let bird_mask = resize_mask(&bird_mask, cw, ch)?;

    let habitat = match &source.habitat_ref {
        Some(habitat_ref) => {
            let img = RasterImage::load(&resolve_path(root, habitat_ref))?;
            resize(&img, cw, ch)?
        }
        None => {
            let (src_img, src_mask) = crate::corpus::load_instance_rasters(root, source)?;
            let src_mask = src_mask.ok_or_else(|| AugmentError::MissingMask(source.id()))?;
            let src_img = resize(&src_img, cw, ch)?;
            let src_mask = resize_mask(&src_mask, cw, ch)?;
            inpainter.inpaint(&src_img, &src_mask)?
        }
    };

    let only_bird = extract_only_bird(&bird_img, &bird_mask)?;
    let image = overlay(&only_bird, &habitat, &bird_mask)?;
    Ok(Composed {
        image,
        mask: bird_mask,
    })
}
