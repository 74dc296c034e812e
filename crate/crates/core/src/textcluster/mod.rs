//! Habitat-group construction from textual habitat descriptions.
//!
//! The pipeline: TF-IDF vectorization of per-class habitat texts (stop words
//! excluded), k-means for every cluster count in a scan range, silhouette
//! scoring of each assignment, and selection of the count with the highest
//! score (ties to the smaller k). The result partitions the covered classes
//! into habitat groups that drive the Mixed-Group and Mixed-Irrelevant
//! augmentation strategies.

mod kmeans;
mod silhouette;
mod stopwords;
mod tfidf;

pub use kmeans::{kmeans, ClusterAssignment, MAX_ITERS};
pub use silhouette::silhouette;
pub use stopwords::{is_stop_word, stoplist_hash, STOP_WORDS};
pub use tfidf::{tokenize, vectorize, DocumentVectors};

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{normalize_class_name, DescriptorSet};
use crate::scalar::Real;
use crate::seedstream::derive_seed;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least 2 documents to vectorize, got {0}")]
    TooFewDocuments(usize),
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("k = {k} out of range for {n} documents")]
    KOutOfRange { k: usize, n: usize },
    #[error("empty scan range: k_min {k_min} > k_max {k_max}")]
    RangeEmpty { k_min: usize, k_max: usize },
    #[error("class name {0:?} cannot be serialized into a groups file")]
    InvalidClassName(String),
    #[error("malformed groups file at line {line}: {message}")]
    MalformedGroups { line: usize, message: String },
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A partition of classes into habitat groups, with the silhouette table
/// that justified the chosen cluster count.
#[derive(Debug, Clone, PartialEq)]
pub struct HabitatGroups {
    /// Member class names per group, sorted within each group.
    pub groups: Vec<Vec<String>>,
    pub class_to_group: BTreeMap<String, usize>,
    pub chosen_k: usize,
    pub silhouette_by_k: BTreeMap<usize, f64>,
    pub seed: u64,
    pub stoplist_hash: String,
}

impl HabitatGroups {
    /// Group index for a class, matching exactly first and then by
    /// normalized name.
    pub fn group_of(&self, class: &str) -> Option<usize> {
        if let Some(&g) = self.class_to_group.get(class) {
            return Some(g);
        }
        let wanted = normalize_class_name(class);
        self.class_to_group
            .iter()
            .find(|(name, _)| normalize_class_name(name) == wanted)
            .map(|(_, &g)| g)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Header (chosen k, seed, stop-list hash, silhouette table), then one
    /// line per group listing member class names.
    pub fn serialize(&self) -> String {
        let mut out = String::from("#habitat-groups\n");
        out.push_str(&format!("#chosen-k {}\n", self.chosen_k));
        out.push_str(&format!("#seed {}\n", self.seed));
        out.push_str(&format!("#stoplist-sha256 {}\n", self.stoplist_hash));
        for (k, score) in &self.silhouette_by_k {
            out.push_str(&format!("#silhouette {k} {score}\n"));
        }
        for group in &self.groups {
            out.push_str(&group.join(" | "));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the serialized form; augmentation plans reference it.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.serialize().as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        std::fs::write(path, self.serialize()).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ClusterError> {
        let mut chosen_k = None;
        let mut seed = 0u64;
        let mut stoplist = String::new();
        let mut silhouette_by_k = BTreeMap::new();
        let mut groups: Vec<Vec<String>> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line == "#habitat-groups" {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#chosen-k ") {
                chosen_k =
                    Some(
                        rest.trim()
                            .parse()
                            .map_err(|_| ClusterError::MalformedGroups {
                                line: line_no,
                                message: format!("bad chosen-k {rest:?}"),
                            })?,
                    );
            } else if let Some(rest) = line.strip_prefix("#seed ") {
                seed = rest
                    .trim()
                    .parse()
                    .map_err(|_| ClusterError::MalformedGroups {
                        line: line_no,
                        message: format!("bad seed {rest:?}"),
                    })?;
            } else if let Some(rest) = line.strip_prefix("#stoplist-sha256 ") {
                stoplist = rest.trim().to_string();
            } else if let Some(rest) = line.strip_prefix("#silhouette ") {
                let (k_str, score_str) =
                    rest.trim()
                        .split_once(' ')
                        .ok_or(ClusterError::MalformedGroups {
                            line: line_no,
                            message: "silhouette line needs `<k> <score>`".into(),
                        })?;
                let k = k_str.parse().map_err(|_| ClusterError::MalformedGroups {
                    line: line_no,
                    message: format!("bad k {k_str:?}"),
                })?;
                let score: f64 = score_str
                    .parse()
                    .map_err(|_| ClusterError::MalformedGroups {
                        line: line_no,
                        message: format!("bad score {score_str:?}"),
                    })?;
                silhouette_by_k.insert(k, score);
            } else if line.starts_with('#') {
                continue;
            } else {
                let members: Vec<String> =
                    line.split(" | ").map(|s| s.trim().to_string()).collect();
                if members.iter().any(String::is_empty) {
                    return Err(ClusterError::MalformedGroups {
                        line: line_no,
                        message: "empty class name in group line".into(),
                    });
                }
                groups.push(members);
            }
        }

        let chosen_k = chosen_k.ok_or(ClusterError::MalformedGroups {
            line: 0,
            message: "missing #chosen-k header".into(),
        })?;
        let mut class_to_group = BTreeMap::new();
        for (g, members) in groups.iter().enumerate() {
            for name in members {
                if class_to_group.insert(name.clone(), g).is_some() {
                    return Err(ClusterError::MalformedGroups {
                        line: 0,
                        message: format!("class {name:?} appears in two groups"),
                    });
                }
            }
        }
        Ok(Self {
            groups,
            class_to_group,
            chosen_k,
            silhouette_by_k,
            seed,
            stoplist_hash: stoplist,
        })
    }
}

/// Classes whose habitat text is all stop words (zero TF-IDF rows); callers
/// surface these as warnings rather than errors.
pub fn all_stop_word_classes(habitat: &DescriptorSet) -> Vec<String> {
    habitat
        .entries
        .iter()
        .filter(|(_, descriptors)| descriptors.iter().all(|d| tokenize(&d.text).is_empty()))
        .map(|(class, _)| class.clone())
        .collect()
}

/// Run the full habitat-group construction over a habitat descriptor set.
///
/// For every k in `[k_min, k_max]` this runs k-means (seeded from a per-k
/// derived stream) and silhouette scoring, then picks the k with the highest
/// score, ties to the smallest k. Deterministic given (texts, range, seed).
pub fn build_habitat_groups<T: Real>(
    habitat: &DescriptorSet,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<HabitatGroups, ClusterError> {
    let n = habitat.entries.len();
    if n < 3 {
        return Err(ClusterError::TooFewDocuments(n));
    }
    if k_min > k_max {
        return Err(ClusterError::RangeEmpty { k_min, k_max });
    }
    if k_min < 2 || k_max > n - 1 {
        return Err(ClusterError::KOutOfRange {
            k: if k_min < 2 { k_min } else { k_max },
            n,
        });
    }
    for name in habitat.entries.keys() {
        if name.contains('|') || name.contains('\n') || name.contains('\t') {
            return Err(ClusterError::InvalidClassName(name.clone()));
        }
    }

    let texts: Vec<(String, String)> = habitat
        .entries
        .iter()
        .map(|(class, descriptors)| {
            let joined = descriptors
                .iter()
                .map(|d| d.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            (class.clone(), joined)
        })
        .collect();
    let vectors = vectorize::<T>(&texts)?;

    let mut best: Option<(usize, T, ClusterAssignment<T>)> = None;
    let mut silhouette_by_k = BTreeMap::new();
    for k in k_min..=k_max {
        let k_seed = derive_seed(seed, &["kmeans", &k.to_string()]);
        let assignment = kmeans(&vectors, k, k_seed)?;
        let score = silhouette(&vectors, &assignment)?;
        silhouette_by_k.insert(k, score.to_f64().expect("silhouette is finite"));
        let replace = match &best {
            None => true,
            Some((_, best_score, _)) => score > *best_score,
        };
        if replace {
            best = Some((k, score, assignment));
        }
    }
    let (chosen_k, _, assignment) = best.expect("scan range is nonempty");

    let mut groups: Vec<Vec<String>> = vec![Vec::new(); chosen_k];
    for (doc, &label) in vectors.doc_ids.iter().zip(&assignment.labels) {
        groups[label].push(doc.clone());
    }
    for group in &mut groups {
        group.sort();
    }
    let mut class_to_group = BTreeMap::new();
    for (g, members) in groups.iter().enumerate() {
        for name in members {
            class_to_group.insert(name.clone(), g);
        }
    }

    Ok(HabitatGroups {
        groups,
        class_to_group,
        chosen_k,
        silhouette_by_k,
        seed,
        stoplist_hash: stoplist_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Descriptor, DescriptorKind};

    fn habitat_set(entries: &[(&str, &str)]) -> DescriptorSet {
        let mut set = DescriptorSet::new(DescriptorKind::Habitat);
        for (class, text) in entries {
            set.entries
                .insert(class.to_string(), vec![Descriptor::plain(*text)]);
        }
        set
    }

    #[test]
    fn duplicated_pairs_choose_k_two() {
        let set = habitat_set(&[
            ("Desert Wren", "desert scrub cactus arid"),
            ("Desert Thrasher", "desert scrub cactus arid"),
            ("Marsh Sparrow", "salt marsh wetland reeds"),
            ("Marsh Tern", "salt marsh wetland reeds"),
        ]);
        let groups = build_habitat_groups::<f64>(&set, 2, 3, 42).unwrap();
        assert_eq!(groups.chosen_k, 2);
        // Exact silhouettes derivable by hand: k=2 gives perfect clusters
        // (a = 0 for every point -> score 1); k=3 splits one duplicate pair
        // into two singletons (two zero terms, two ones -> 0.5).
        assert!((groups.silhouette_by_k[&2] - 1.0).abs() < 1e-12);
        assert!((groups.silhouette_by_k[&3] - 0.5).abs() < 1e-12);
        let mut sorted_groups = groups.groups.clone();
        sorted_groups.sort();
        assert_eq!(
            sorted_groups,
            vec![
                vec!["Desert Thrasher".to_string(), "Desert Wren".to_string()],
                vec!["Marsh Sparrow".to_string(), "Marsh Tern".to_string()],
            ]
        );
    }

    #[test]
    fn chosen_k_is_argmax_ties_to_smallest() {
        let set = habitat_set(&[
            ("A", "desert scrub cactus"),
            ("B", "desert scrub cactus"),
            ("C", "salt marsh reeds"),
            ("D", "salt marsh reeds"),
            ("E", "alpine cliff snowfield"),
            ("F", "alpine cliff snowfield"),
        ]);
        let groups = build_habitat_groups::<f64>(&set, 2, 5, 7).unwrap();
        let best = groups
            .silhouette_by_k
            .iter()
            .fold(None::<(usize, f64)>, |acc, (&k, &s)| match acc {
                None => Some((k, s)),
                Some((_, bs)) if s > bs => Some((k, s)),
                Some((bk, bs)) => Some((bk, bs)),
            })
            .unwrap();
        assert_eq!(groups.chosen_k, best.0);
        // Three duplicated triples: k=3 is the perfect partition.
        assert_eq!(groups.chosen_k, 3);
    }

    #[test]
    fn groups_partition_the_class_set() {
        let set = habitat_set(&[
            ("A", "desert scrub"),
            ("B", "desert cactus"),
            ("C", "salt marsh"),
            ("D", "marsh reeds"),
            ("E", "open ocean offshore"),
        ]);
        let groups = build_habitat_groups::<f64>(&set, 2, 4, 3).unwrap();
        let mut all: Vec<&String> = groups.groups.iter().flatten().collect();
        all.sort();
        assert_eq!(all.len(), 5);
        assert_eq!(groups.class_to_group.len(), 5);
        for (name, &g) in &groups.class_to_group {
            assert!(groups.groups[g].contains(name));
        }
    }

    #[test]
    fn byte_determinism_and_round_trip() {
        let set = habitat_set(&[
            ("A", "desert scrub cactus"),
            ("B", "desert arid foothills"),
            ("C", "salt marsh reeds"),
            ("D", "wetland marsh ponds"),
        ]);
        let g1 = build_habitat_groups::<f64>(&set, 2, 3, 99).unwrap();
        let g2 = build_habitat_groups::<f64>(&set, 2, 3, 99).unwrap();
        assert_eq!(g1.serialize(), g2.serialize());
        let parsed = HabitatGroups::parse(&g1.serialize()).unwrap();
        assert_eq!(parsed, g1);
    }

    #[test]
    fn range_and_size_validation() {
        let small = habitat_set(&[("A", "x y"), ("B", "z w")]);
        assert!(matches!(
            build_habitat_groups::<f64>(&small, 2, 2, 0),
            Err(ClusterError::TooFewDocuments(2))
        ));
        let set = habitat_set(&[("A", "a b"), ("B", "c d"), ("C", "e f"), ("D", "g h")]);
        assert!(matches!(
            build_habitat_groups::<f64>(&set, 3, 2, 0),
            Err(ClusterError::RangeEmpty { .. })
        ));
        assert!(matches!(
            build_habitat_groups::<f64>(&set, 2, 4, 0),
            Err(ClusterError::KOutOfRange { .. })
        ));
    }

    #[test]
    fn stop_word_only_classes_are_flagged() {
        let set = habitat_set(&[
            ("A", "desert scrub"),
            ("B", "the and of"),
            ("C", "marsh reeds"),
        ]);
        assert_eq!(all_stop_word_classes(&set), vec!["B".to_string()]);
    }

    #[test]
    fn group_lookup_uses_normalized_names() {
        let set = habitat_set(&[
            ("Black-footed Albatross", "sandy islands offshore ocean"),
            ("Heermann Gull", "rocky islands ocean coast"),
            ("Cactus Wren", "desert scrub cactus thorny"),
        ]);
        let groups = build_habitat_groups::<f64>(&set, 2, 2, 5).unwrap();
        let exact = groups.group_of("Black-footed Albatross");
        assert!(exact.is_some());
        assert_eq!(groups.group_of("black footed albatross"), exact);
        assert_eq!(groups.group_of("Passenger Pigeon"), None);
    }
}
