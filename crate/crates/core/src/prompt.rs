//! Prompt assembly for the text side of the zero-shot classifier.
//!
//! Two templates: the baseline `A photo of a {c}.` and the description form
//! `{c}, which {connector} {description}.`. Connectors are data carried per
//! descriptor, defaulting to `has`; descriptors with a field key (SSC fields,
//! PEEB parts) get their connector and rendering from the normalization
//! table below. Habitat prompts are appended after visual prompts, in stable
//! order, to form per-class ensembles.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{
    normalize_class_name, DatasetManifest, Descriptor, DescriptorKind, DescriptorSet, NameDirection,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("empty class name")]
    EmptyName,
    #[error("empty descriptor text")]
    EmptyDescriptor,
    #[error("class {0:?} not covered by the descriptor set")]
    UncoveredClass(String),
    #[error("class {0:?} has no scientific name")]
    MissingScientificName(String),
    #[error("ambiguous name {0:?} maps to more than one class")]
    AmbiguousMatch(String),
}

/// Connector table for field-keyed descriptors. SSC fields map to a phrase
/// connector; PEEB part bodies are rendered as "a <part> that is ..."
/// ("<part> that are ..." for plural parts) behind the `has` connector.
fn field_connector_and_body(field: &str, text: &str) -> (String, String) {
    match field {
        "shape" => ("has the shape of".into(), text.to_string()),
        "size" => ("has the size of".into(), text.to_string()),
        "color" => ("has the color pattern of".into(), text.to_string()),
        part @ ("wings" | "eyes") => ("has".into(), format!("{part} that are {text}")),
        part => ("has".into(), format!("a {part} that is {text}")),
    }
}

fn normalize_terminal_period(mut s: String) -> String {
    while s.ends_with('.') || s.ends_with(char::is_whitespace) {
        s.pop();
    }
    s.push('.');
    s
}

/// The standard zero-shot prompt: `A photo of a {c}.`
pub fn baseline_prompt(class_name: &str) -> Result<String, PromptError> {
    if class_name.trim().is_empty() {
        return Err(PromptError::EmptyName);
    }
    Ok(format!("A photo of a {class_name}."))
}

/// The description prompt: `{c}, which {connector} {description}.` with the
/// connector taken from the descriptor (default `has`) and the terminal
/// period normalized to exactly one.
pub fn description_prompt(
    class_name: &str,
    descriptor: &Descriptor,
) -> Result<String, PromptError> {
    if class_name.trim().is_empty() {
        return Err(PromptError::EmptyName);
    }
    if descriptor.text.trim().is_empty() {
        return Err(PromptError::EmptyDescriptor);
    }
    let (connector, body) = match (&descriptor.connector, &descriptor.field) {
        (Some(c), _) => (c.clone(), descriptor.text.clone()),
        (None, Some(field)) => field_connector_and_body(field, &descriptor.text),
        (None, None) => ("has".to_string(), descriptor.text.clone()),
    };
    Ok(normalize_terminal_period(format!(
        "{class_name}, which {connector} {body}"
    )))
}

/// Per-class prompt list with provenance, ordered visual then habitat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEnsemble {
    pub class_name: String,
    pub prompts: Vec<String>,
    pub provenance: Vec<(DescriptorKind, usize)>,
}

impl PromptEnsemble {
    fn push(&mut self, prompt: String, kind: DescriptorKind, index: usize) {
        debug_assert!(
            prompt.starts_with(&self.class_name),
            "description prompts begin with the class name"
        );
        self.prompts.push(prompt);
        self.provenance.push((kind, index));
    }
}

/// What to do when the habitat set does not cover a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingHabitatPolicy {
    /// Fail loudly; silent coverage gaps corrupt ablations.
    #[default]
    Error,
    /// Emit the visual-only ensemble for uncovered classes.
    VisualOnly,
}

/// Build per-class ensembles: every visual-descriptor prompt, then every
/// habitat-descriptor prompt when a habitat set is supplied.
pub fn build_ensembles(
    classes: &[String],
    visual: &DescriptorSet,
    habitat: Option<&DescriptorSet>,
    policy: MissingHabitatPolicy,
) -> Result<BTreeMap<String, PromptEnsemble>, PromptError> {
    let visual_by_norm = index_by_normalized(visual);
    let habitat_by_norm = habitat.map(index_by_normalized);

    let mut out = BTreeMap::new();
    for class in classes {
        let norm = normalize_class_name(class);
        let visual_descs = visual_by_norm
            .get(norm.as_str())
            .ok_or_else(|| PromptError::UncoveredClass(class.clone()))?;
        let mut ensemble = PromptEnsemble {
            class_name: class.clone(),
            prompts: Vec::new(),
            provenance: Vec::new(),
        };
        for (i, d) in visual_descs.iter().enumerate() {
            ensemble.push(description_prompt(class, d)?, visual.kind, i);
        }
        if let (Some(habitat), Some(by_norm)) = (habitat, &habitat_by_norm) {
            match by_norm.get(norm.as_str()) {
                Some(habitat_descs) => {
                    for (i, d) in habitat_descs.iter().enumerate() {
                        ensemble.push(description_prompt(class, d)?, habitat.kind, i);
                    }
                }
                None => match policy {
                    MissingHabitatPolicy::Error => {
                        return Err(PromptError::UncoveredClass(class.clone()))
                    }
                    MissingHabitatPolicy::VisualOnly => {}
                },
            }
        }
        out.insert(class.clone(), ensemble);
    }
    Ok(out)
}

fn index_by_normalized(set: &DescriptorSet) -> BTreeMap<String, &[Descriptor]> {
    set.entries
        .iter()
        .map(|(k, v)| (normalize_class_name(k), v.as_slice()))
        .collect()
}

/// Swap common and scientific names throughout a descriptor set: class keys
/// are re-keyed and whole-word occurrences inside descriptor texts replaced,
/// longest name first. A trailing plural `s` on a matched name is preserved
/// on the replacement so the swap round-trips exactly.
pub fn swap_descriptor_names(
    descriptors: &DescriptorSet,
    manifest: &DatasetManifest,
    direction: NameDirection,
) -> Result<DescriptorSet, PromptError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for class in &manifest.classes {
        if let Some(sci) = &class.scientific_name {
            match direction {
                NameDirection::CommonToScientific => {
                    pairs.push((class.common_name.clone(), sci.clone()))
                }
                NameDirection::ScientificToCommon => {
                    pairs.push((sci.clone(), class.common_name.clone()))
                }
            }
        }
    }
    // Exact duplicates on the source side are unresolvable.
    {
        let mut sources: Vec<&str> = pairs.iter().map(|(s, _)| s.as_str()).collect();
        sources.sort_unstable();
        for w in sources.windows(2) {
            if w[0] == w[1] {
                return Err(PromptError::AmbiguousMatch(w[0].to_string()));
            }
        }
    }
    // Longest match first; lexicographic tie-break keeps this deterministic.
    pairs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    let rekey = |class_key: &str| -> Result<String, PromptError> {
        let norm = normalize_class_name(class_key);
        let record = manifest
            .classes
            .iter()
            .find(|c| match direction {
                NameDirection::CommonToScientific => normalize_class_name(&c.common_name) == norm,
                NameDirection::ScientificToCommon => c
                    .scientific_name
                    .as_deref()
                    .is_some_and(|s| normalize_class_name(s) == norm),
            })
            .ok_or_else(|| PromptError::UncoveredClass(class_key.to_string()))?;
        match direction {
            NameDirection::CommonToScientific => record
                .scientific_name
                .clone()
                .ok_or_else(|| PromptError::MissingScientificName(class_key.to_string())),
            NameDirection::ScientificToCommon => Ok(record.common_name.clone()),
        }
    };

    let mut out = DescriptorSet::new(descriptors.kind);
    for (class_key, descs) in &descriptors.entries {
        let new_key = rekey(class_key)?;
        let new_descs = descs
            .iter()
            .map(|d| Descriptor {
                text: replace_names(&d.text, &pairs),
                connector: d.connector.clone(),
                field: d.field.clone(),
            })
            .collect();
        out.entries.insert(new_key, new_descs);
    }
    Ok(out)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Replace whole-word occurrences of each `(source, target)` pair, leftmost
/// position first and longest source first at equal positions. A match may
/// carry a trailing `s`, which is re-attached to the target.
fn replace_names(text: &str, pairs: &[(String, String)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut prev_char: Option<char> = None;
    'outer: while !rest.is_empty() {
        if prev_char.is_none_or(|c| !is_word_char(c)) {
            for (source, target) in pairs {
                if let Some(after) = rest.strip_prefix(source.as_str()) {
                    let (plural, after) = match after.strip_prefix('s') {
                        Some(a) => (true, a),
                        None => (false, after),
                    };
                    if after.chars().next().is_none_or(|c| !is_word_char(c)) {
                        out.push_str(target);
                        if plural {
                            out.push('s');
                        }
                        prev_char = Some('s'); // replaced span ends in a word char
                        rest = after;
                        continue 'outer;
                    }
                }
            }
        }
        let c = rest.chars().next().expect("rest is nonempty");
        out.push(c);
        prev_char = Some(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub class: String,
    pub provenance: String,
    pub prompt: String,
}

/// Baseline records for a class list, provenance `BASELINE`.
pub fn baseline_records(classes: &[String]) -> Result<Vec<PromptRecord>, PromptError> {
    classes
        .iter()
        .map(|c| {
            Ok(PromptRecord {
                class: c.clone(),
                provenance: "BASELINE".to_string(),
                prompt: baseline_prompt(c)?,
            })
        })
        .collect()
}

/// Flatten ensembles into prompt records, classes in sorted order.
pub fn ensemble_records(ensembles: &BTreeMap<String, PromptEnsemble>) -> Vec<PromptRecord> {
    let mut out = Vec::new();
    for (class, ensemble) in ensembles {
        for (prompt, (kind, index)) in ensemble.prompts.iter().zip(&ensemble.provenance) {
            out.push(PromptRecord {
                class: class.clone(),
                provenance: format!("{}:{index}", kind.as_str()),
                prompt: prompt.clone(),
            });
        }
    }
    out
}

/// Serialize prompt records: `<class>\t<provenance>\t<prompt>` per line.
pub fn write_prompt_file(records: &[PromptRecord]) -> String {
    let mut out = String::from("#prompts\n");
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\n", r.class, r.provenance, r.prompt));
    }
    out
}

/// Parse a prompt file written by [`write_prompt_file`].
pub fn read_prompt_file(text: &str) -> Result<Vec<PromptRecord>, PromptError> {
    let mut out = Vec::new();
    for raw in text.lines() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let class = fields.next().unwrap_or_default();
        let provenance = fields.next().unwrap_or_default();
        let prompt = fields.next().unwrap_or_default();
        if class.is_empty() || provenance.is_empty() || prompt.is_empty() {
            return Err(PromptError::EmptyDescriptor);
        }
        out.push(PromptRecord {
            class: class.to_string(),
            provenance: provenance.to_string(),
            prompt: prompt.to_string(),
        });
    }
    Ok(out)
}
