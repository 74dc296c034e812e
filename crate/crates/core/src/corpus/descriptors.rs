//! Descriptor-set parsing: per-class textual descriptions in the four
//! source formats (M&V, PEEB, SSC, habitat).
//!
//! The on-disk grammar is tab-separated, one descriptor per line:
//!
//! ```text
//! #kind <MV|PEEB|SSC|HABITAT>
//! <class_name>\t<field>\t<connector>\t<text>
//! ```
//!
//! Exactly four columns; `field` and `connector` may be empty. `field` holds
//! the part key for PEEB records (`back`, `beak`, ...) or the SSC field
//! (`shape`, `size`, `color`). `#` lines are comments, the optional `#kind`
//! directive must agree with the kind declared by the caller. The canonical
//! serialization lists classes in sorted order, so canonical files round-trip
//! byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::{read_to_string, CorpusError, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    /// LLM-generated free-form visual descriptions.
    MV,
    /// Twelve-part anatomical descriptions.
    PEEB,
    /// Human-annotated shape / size / color fields.
    SSC,
    /// Habitat descriptions.
    Habitat,
}

impl DescriptorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DescriptorKind::MV => "MV",
            DescriptorKind::PEEB => "PEEB",
            DescriptorKind::SSC => "SSC",
            DescriptorKind::Habitat => "HABITAT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MV" | "M&V" => Some(DescriptorKind::MV),
            "PEEB" => Some(DescriptorKind::PEEB),
            "SSC" => Some(DescriptorKind::SSC),
            "HABITAT" => Some(DescriptorKind::Habitat),
            _ => None,
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The twelve anatomical part keys a PEEB entry must carry, canonical form.
pub const PEEB_PARTS: [&str; 12] = [
    "wings", "tail", "eyes", "back", "forehead", "nape", "crown", "leg", "breast", "throat",
    "belly", "beak",
];

/// Canonicalize a PEEB part key; source files sometimes pluralize `leg`.
fn canonical_part(field: &str) -> String {
    let lower = field.trim().to_ascii_lowercase();
    if lower == "legs" {
        "leg".to_string()
    } else {
        lower
    }
}

/// One textual descriptor: the text body, an optional prompt connector
/// ("is", "has", ...) and an optional field key (PEEB part or SSC field).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub text: String,
    pub connector: Option<String>,
    pub field: Option<String>,
}

impl Descriptor {
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            connector: None,
            field: None,
        }
    }

    pub fn with_connector(text: impl Into<String>, connector: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            connector: Some(connector.into()),
            field: None,
        }
    }
}

/// All descriptors of one kind, keyed by class name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorSet {
    pub kind: DescriptorKind,
    pub entries: BTreeMap<String, Vec<Descriptor>>,
}

impl DescriptorSet {
    pub fn new(kind: DescriptorKind) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path, kind: DescriptorKind) -> Result<Self, CorpusError> {
        Self::parse(&read_to_string(path)?, kind)
    }

    pub fn parse(text: &str, kind: DescriptorKind) -> Result<Self, CorpusError> {
        let mut entries: BTreeMap<String, Vec<Descriptor>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#kind ") {
                match DescriptorKind::parse(rest) {
                    Some(declared) if declared == kind => continue,
                    Some(declared) => {
                        return Err(CorpusError::MalformedRecord {
                            line: line_no,
                            message: format!(
                                "file declares kind {declared} but {kind} was requested"
                            ),
                        })
                    }
                    None => {
                        return Err(CorpusError::MalformedRecord {
                            line: line_no,
                            message: format!("unknown descriptor kind {:?}", rest.trim()),
                        })
                    }
                }
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(CorpusError::MalformedRecord {
                    line: line_no,
                    message: format!(
                        "descriptor record needs 4 tab-separated fields, got {}",
                        fields.len()
                    ),
                });
            }
            let class = fields[0].trim();
            if class.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: line_no,
                    message: "empty class name".into(),
                });
            }
            let body = fields[3].trim();
            if body.is_empty() {
                return Err(CorpusError::EmptyDescriptor(line_no));
            }
            let field = {
                let f = fields[1].trim();
                if f.is_empty() {
                    None
                } else if kind == DescriptorKind::PEEB {
                    Some(canonical_part(f))
                } else {
                    Some(f.to_string())
                }
            };
            let connector = {
                let c = fields[2].trim();
                (!c.is_empty()).then(|| c.to_string())
            };
            entries
                .entry(class.to_string())
                .or_default()
                .push(Descriptor {
                    text: body.to_string(),
                    connector,
                    field,
                });
        }

        let set = Self { kind, entries };
        set.validate()?;
        Ok(set)
    }

    /// Structural invariants: nonempty texts (enforced during parse) and,
    /// for PEEB, exactly the twelve part keys per class.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (class, descriptors) in &self.entries {
            if descriptors.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: 0,
                    message: format!("class {class:?} has no descriptors"),
                });
            }
            if self.kind == DescriptorKind::PEEB {
                let mut keys: Vec<&str> = descriptors
                    .iter()
                    .filter_map(|d| d.field.as_deref())
                    .collect();
                keys.sort_unstable();
                keys.dedup();
                let mut wanted: Vec<&str> = PEEB_PARTS.to_vec();
                wanted.sort_unstable();
                if descriptors.len() != 12 || keys != wanted {
                    return Err(CorpusError::MalformedRecord {
                        line: 0,
                        message: format!(
                            "PEEB entry for {class:?} must carry exactly the twelve part keys, got {keys:?}"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Check every class key resolves against the manifest (normalized name
    /// match); return the manifest classes this set does not cover. Habitat
    /// sets are inputs, so gaps surface as a warning list rather than
    /// generated text.
    pub fn validate_against(&self, manifest: &DatasetManifest) -> Result<Vec<String>, CorpusError> {
        for class in self.entries.keys() {
            if manifest.class_by_normalized_name(class).is_none() {
                return Err(CorpusError::UnknownClassName(class.clone()));
            }
        }
        let covered: std::collections::HashSet<String> = self
            .entries
            .keys()
            .map(|k| super::normalize_class_name(k))
            .collect();
        Ok(manifest
            .classes
            .iter()
            .filter(|c| !covered.contains(&super::normalize_class_name(&c.common_name)))
            .map(|c| c.common_name.clone())
            .collect())
    }

    /// Canonical serialization; classes sorted, descriptors in file order.
    pub fn serialize(&self) -> String {
        let mut out = format!("#kind {}\n", self.kind);
        for (class, descriptors) in &self.entries {
            for d in descriptors {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    class,
                    d.field.as_deref().unwrap_or(""),
                    d.connector.as_deref().unwrap_or(""),
                    d.text
                ));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.serialize()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn descriptors_for(&self, class: &str) -> Option<&[Descriptor]> {
        self.entries.get(class).map(Vec::as_slice)
    }
}
