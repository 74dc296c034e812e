//! Dataset manifest parsing and canonical serialization.
//!
//! A manifest is a line-delimited UTF-8 document:
//!
//! ```text
//! #dataset <name>
//! #split <train|test>
//! #class <index> <common_name>[ | <scientific_name>]
//! <image_path>\t<class_index>\t[mask_path]\t[x,y,w,h]\t[panoptic_path]\t[habitat_path]
//! ```
//!
//! Header directives start with `#`; other `#` lines are comments. Each
//! remaining nonblank line is one instance record with tab-separated fields;
//! optional fields may be empty, and trailing empty fields may be omitted.
//! The serializer emits a canonical form (directives, classes by ascending
//! index, instances in order, trailing empties trimmed), so loading a
//! canonical file and re-serializing reproduces it byte for byte.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use super::{read_to_string, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRecord {
    pub index: usize,
    pub common_name: String,
    pub scientific_name: Option<String>,
}

/// Pixel-space box, `(x, y)` top-left inclusive, `w`/`h` at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }

    pub fn to_field(&self) -> String {
        format!("{},{},{},{}", self.x, self.y, self.w, self.h)
    }

    fn parse(field: &str, line: usize) -> Result<Self, CorpusError> {
        let parts: Vec<&str> = field.split(',').collect();
        if parts.len() != 4 {
            return Err(CorpusError::MalformedRecord {
                line,
                message: format!("bbox must be x,y,w,h, got {field:?}"),
            });
        }
        let mut vals = [0u32; 4];
        for (slot, part) in vals.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| CorpusError::MalformedRecord {
                    line,
                    message: format!("bbox component {part:?} is not a nonnegative integer"),
                })?;
        }
        let [x, y, w, h] = vals;
        if w == 0 || h == 0 {
            return Err(CorpusError::MalformedRecord {
                line,
                message: format!("bbox width/height must be >= 1, got {field:?}"),
            });
        }
        Ok(Self { x, y, w, h })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BirdInstance {
    pub image_ref: PathBuf,
    pub class_index: usize,
    pub mask_ref: Option<PathBuf>,
    pub bbox: Option<BoundingBox>,
    pub panoptic_ref: Option<PathBuf>,
    /// Precomputed bird-removed (inpainted) counterpart of `image_ref`,
    /// used as the habitat source when present.
    pub habitat_ref: Option<PathBuf>,
}

impl BirdInstance {
    pub fn new(image_ref: impl Into<PathBuf>, class_index: usize) -> Self {
        Self {
            image_ref: image_ref.into(),
            class_index,
            mask_ref: None,
            bbox: None,
            panoptic_ref: None,
            habitat_ref: None,
        }
    }

    /// Instance identifier: the (unique) image path as recorded.
    pub fn id(&self) -> String {
        self.image_ref.display().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub classes: Vec<ClassRecord>,
    pub instances: Vec<BirdInstance>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, index: usize) -> &ClassRecord {
        &self.classes[index]
    }

    pub fn class_by_common_name(&self, name: &str) -> Option<&ClassRecord> {
        self.classes.iter().find(|c| c.common_name == name)
    }

    /// Lookup by normalized name (see [`super::normalize_class_name`]).
    pub fn class_by_normalized_name(&self, name: &str) -> Option<&ClassRecord> {
        let wanted = super::normalize_class_name(name);
        self.classes
            .iter()
            .find(|c| super::normalize_class_name(&c.common_name) == wanted)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut dataset_name = String::from("dataset");
        let mut split = Split::Train;
        let mut classes: Vec<ClassRecord> = Vec::new();
        let mut instances: Vec<BirdInstance> = Vec::new();
        let mut body_lines = 0usize;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#dataset ") {
                dataset_name = rest.trim().to_string();
                continue;
            }
            if let Some(rest) = line.strip_prefix("#split ") {
                split = match rest.trim() {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(CorpusError::MalformedRecord {
                            line: line_no,
                            message: format!("unknown split {other:?}"),
                        })
                    }
                };
                continue;
            }
            if let Some(rest) = line.strip_prefix("#class ") {
                classes.push(parse_class_line(rest, line_no)?);
                continue;
            }
            if line.starts_with('#') {
                continue; // comment
            }
            body_lines += 1;
            instances.push(parse_instance_line(line, line_no, classes.len())?);
        }

        if instances.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: text.lines().count(),
                message: "manifest body is empty (no instance records)".into(),
            });
        }
        debug_assert_eq!(instances.len(), body_lines);

        let manifest = Self {
            dataset_name,
            classes,
            instances,
            split,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Enforce the structural invariants: dense unique class indices, unique
    /// nonempty class names, in-range instance class indices, unique paths.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let c = self.classes.len();
        let mut seen_index = vec![false; c];
        let mut seen_names = HashSet::new();
        for class in &self.classes {
            if class.index >= c || seen_index[class.index] {
                return Err(CorpusError::MalformedRecord {
                    line: 0,
                    message: format!(
                        "class indices must be dense 0..{c} without duplicates (offending index {})",
                        class.index
                    ),
                });
            }
            seen_index[class.index] = true;
            if class.common_name.trim().is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: 0,
                    message: format!("class {} has an empty common name", class.index),
                });
            }
            if !seen_names.insert(class.common_name.clone()) {
                return Err(CorpusError::MalformedRecord {
                    line: 0,
                    message: format!("duplicate class name {:?}", class.common_name),
                });
            }
        }
        let mut seen_paths = HashSet::new();
        for inst in &self.instances {
            if inst.class_index >= c {
                return Err(CorpusError::ClassIndexOutOfRange {
                    line: 0,
                    index: inst.class_index,
                    classes: c,
                });
            }
            if !seen_paths.insert(inst.id()) {
                return Err(CorpusError::DuplicatePath(inst.id()));
            }
        }
        Ok(())
    }

    /// Canonical serialization; `parse(serialize(m)) == m`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("#dataset {}\n", self.dataset_name));
        out.push_str(&format!("#split {}\n", self.split));
        let mut classes: Vec<&ClassRecord> = self.classes.iter().collect();
        classes.sort_by_key(|c| c.index);
        for class in classes {
            match &class.scientific_name {
                Some(sci) => out.push_str(&format!(
                    "#class {} {} | {}\n",
                    class.index, class.common_name, sci
                )),
                None => out.push_str(&format!("#class {} {}\n", class.index, class.common_name)),
            }
        }
        for inst in &self.instances {
            let fields = [
                inst.image_ref.display().to_string(),
                inst.class_index.to_string(),
                inst.mask_ref
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                inst.bbox
                    .as_ref()
                    .map(BoundingBox::to_field)
                    .unwrap_or_default(),
                inst.panoptic_ref
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                inst.habitat_ref
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ];
            let mut last = fields.len();
            while last > 2 && fields[last - 1].is_empty() {
                last -= 1;
            }
            out.push_str(&fields[..last].join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.serialize()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn parse_class_line(rest: &str, line: usize) -> Result<ClassRecord, CorpusError> {
    let rest = rest.trim();
    let (index_str, names) = rest.split_once(' ').ok_or(CorpusError::MalformedRecord {
        line,
        message: "class line needs `<index> <common_name>`".into(),
    })?;
    let index = index_str
        .parse()
        .map_err(|_| CorpusError::MalformedRecord {
            line,
            message: format!("class index {index_str:?} is not an integer"),
        })?;
    let (common, scientific) = match names.split_once(" | ") {
        Some((c, s)) => (c.trim().to_string(), Some(s.trim().to_string())),
        None => (names.trim().to_string(), None),
    };
    if common.is_empty() {
        return Err(CorpusError::MalformedRecord {
            line,
            message: "empty common name".into(),
        });
    }
    if let Some(s) = &scientific {
        if s.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                message: "empty scientific name after `|`".into(),
            });
        }
    }
    Ok(ClassRecord {
        index,
        common_name: common,
        scientific_name: scientific,
    })
}

fn parse_instance_line(
    line: &str,
    line_no: usize,
    class_count: usize,
) -> Result<BirdInstance, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 2 || fields.len() > 6 {
        return Err(CorpusError::MalformedRecord {
            line: line_no,
            message: format!(
                "instance record needs 2..=6 tab-separated fields, got {}",
                fields.len()
            ),
        });
    }
    let image_ref = fields[0].trim();
    if image_ref.is_empty() {
        return Err(CorpusError::MalformedRecord {
            line: line_no,
            message: "empty image path".into(),
        });
    }
    let class_index: usize =
        fields[1]
            .trim()
            .parse()
            .map_err(|_| CorpusError::MalformedRecord {
                line: line_no,
                message: format!("class index {:?} is not an integer", fields[1]),
            })?;
    if class_index >= class_count {
        return Err(CorpusError::ClassIndexOutOfRange {
            line: line_no,
            index: class_index,
            classes: class_count,
        });
    }
    let opt_path = |i: usize| -> Option<PathBuf> {
        fields
            .get(i)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
    };
    let bbox = match fields.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        Some(field) => Some(BoundingBox::parse(field, line_no)?),
        None => None,
    };
    Ok(BirdInstance {
        image_ref: PathBuf::from(image_ref),
        class_index,
        mask_ref: opt_path(2),
        bbox,
        panoptic_ref: opt_path(4),
        habitat_ref: opt_path(5),
    })
}
