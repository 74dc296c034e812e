//! Embedding-side evaluation: averaged-similarity scoring over per-class
//! descriptor ensembles, accuracy reports, few-shot extension and run
//! comparison.
//!
//! Scoring follows the ensemble rule: for each class, the cosine
//! similarities between the image embedding and every ensemble member are
//! averaged, the per-class means go through a softmax, and the class with
//! the highest probability is predicted (ties to the lowest class index).
//! Support-image embeddings added in few-shot mode are ordinary ensemble
//! members under the same rule.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::scalar::{dot, norm, Real};
use crate::seedstream::rng_for;
use crate::textcluster::HabitatGroups;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding dims mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector for {0:?} cannot be normalized")]
    ZeroVector(String),
    #[error("no label for image id {0:?}")]
    MissingLabel(String),
    #[error("label class {0:?} is not in the ensemble")]
    UnknownClass(String),
    #[error("class sets differ between the two reports")]
    ClassSetMismatch,
    #[error("class {class:?} has {available} unused support embeddings, needs {needed}")]
    InsufficientSupport {
        class: String,
        available: usize,
        needed: usize,
    },
    #[error("class {0:?} not covered by the habitat groups")]
    UncoveredClass(String),
    #[error("embedding file {path}: {message}")]
    BadEmbeddingFile { path: String, message: String },
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed report at line {line}: {message}")]
    MalformedReport { line: usize, message: String },
}

const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Row-major embedding matrix with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T: Real> {
    pub dims: usize,
    pub data: Vec<T>,
    pub ids: Vec<String>,
}

impl<T: Real> EmbeddingMatrix<T> {
    pub fn new(dims: usize, data: Vec<T>, ids: Vec<String>) -> Result<Self, EvalError> {
        if data.len() != dims * ids.len() {
            return Err(EvalError::DimMismatch(data.len(), dims * ids.len()));
        }
        let m = Self { dims, data, ids };
        m.validate()?;
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    fn validate(&self) -> Result<(), EvalError> {
        if let Some(v) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(EvalError::BadEmbeddingFile {
                path: String::new(),
                message: format!("non-finite entry {v}"),
            });
        }
        let unique: BTreeSet<&String> = self.ids.iter().collect();
        if unique.len() != self.ids.len() {
            return Err(EvalError::BadEmbeddingFile {
                path: String::new(),
                message: "duplicate row ids".into(),
            });
        }
        Ok(())
    }

    /// Read the binary format: magic `EMB1`, little-endian u32 row count and
    /// dim, `N*D` little-endian f32 values row-major, then `N`
    /// newline-terminated UTF-8 ids.
    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let mut file = std::fs::File::open(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })?;
        let bad = |message: String| EvalError::BadEmbeddingFile {
            path: path.display().to_string(),
            message,
        };
        if bytes.len() < 12 || &bytes[0..4] != EMB_MAGIC {
            return Err(bad("missing EMB1 magic".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dims = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let float_bytes = rows
            .checked_mul(dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("size overflow".into()))?;
        if bytes.len() < 12 + float_bytes {
            return Err(bad(format!(
                "truncated: need {} value bytes, have {}",
                float_bytes,
                bytes.len() - 12
            )));
        }
        let mut data = Vec::with_capacity(rows * dims);
        for chunk in bytes[12..12 + float_bytes].chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            data.push(T::from_f32(v).ok_or_else(|| bad(format!("unrepresentable value {v}")))?);
        }
        let tail = std::str::from_utf8(&bytes[12 + float_bytes..])
            .map_err(|e| bad(format!("ids are not UTF-8: {e}")))?;
        let ids: Vec<String> = tail
            .split_inclusive('\n')
            .map(|line| line.strip_suffix('\n').map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("last id not newline-terminated".into()))?;
        if ids.len() != rows {
            return Err(bad(format!("expected {rows} ids, found {}", ids.len())));
        }
        Self::new(dims, data, ids).map_err(|e| match e {
            EvalError::BadEmbeddingFile { message, .. } => bad(message),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        for v in &self.data {
            let f = v.to_f32().expect("finite embedding value");
            out.extend_from_slice(&f.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(&out).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Where an ensemble member came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    Text,
    SupportImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember<T: Real> {
    pub embedding: Vec<T>,
    pub kind: MemberKind,
}

/// Per-class sets of unit-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEnsemble<T: Real> {
    pub classes: Vec<String>,
    pub members: Vec<Vec<EnsembleMember<T>>>,
    pub dims: usize,
}

fn unit<T: Real>(v: &[T], what: &str) -> Result<Vec<T>, EvalError> {
    let n = norm(v);
    if n <= T::zero() {
        return Err(EvalError::ZeroVector(what.to_string()));
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

impl<T: Real> ClassifierEnsemble<T> {
    /// Group text embeddings by class. `row_classes[i]` names the class of
    /// embedding row `i`; classes are ordered by first appearance.
    pub fn from_text_embeddings(
        embeddings: &EmbeddingMatrix<T>,
        row_classes: &[String],
    ) -> Result<Self, EvalError> {
        if row_classes.len() != embeddings.rows() {
            return Err(EvalError::DimMismatch(row_classes.len(), embeddings.rows()));
        }
        let mut classes: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut members: Vec<Vec<EnsembleMember<T>>> = Vec::new();
        for (i, class) in row_classes.iter().enumerate() {
            let slot = match index.get(class) {
                Some(&s) => s,
                None => {
                    classes.push(class.clone());
                    members.push(Vec::new());
                    index.insert(class.clone(), classes.len() - 1);
                    classes.len() - 1
                }
            };
            members[slot].push(EnsembleMember {
                embedding: unit(embeddings.row(i), &embeddings.ids[i])?,
                kind: MemberKind::Text,
            });
        }
        Ok(Self {
            classes,
            members,
            dims: embeddings.dims,
        })
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    fn support_count(&self, class_idx: usize) -> usize {
        self.members[class_idx]
            .iter()
            .filter(|m| m.kind == MemberKind::SupportImage)
            .count()
    }
}

/// Mean-cosine class scores for one image embedding, before softmax.
fn class_means<T: Real>(
    image: &[T],
    ensemble: &ClassifierEnsemble<T>,
) -> Result<Vec<T>, EvalError> {
    if image.len() != ensemble.dims {
        return Err(EvalError::DimMismatch(image.len(), ensemble.dims));
    }
    let image_unit = unit(image, "image embedding")?;
    Ok(ensemble
        .members
        .iter()
        .map(|members| {
            let sum: T = members.iter().map(|m| dot(&image_unit, &m.embedding)).sum();
            sum / T::from_count(members.len())
        })
        .collect())
}

fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-class probabilities for an image: softmax over mean cosines.
pub fn score<T: Real>(image: &[T], ensemble: &ClassifierEnsemble<T>) -> Result<Vec<T>, EvalError> {
    Ok(softmax(&class_means(image, ensemble)?))
}

/// Predicted class index: argmax probability, ties to the lowest index.
pub fn predict<T: Real>(image: &[T], ensemble: &ClassifierEnsemble<T>) -> Result<usize, EvalError> {
    let means = class_means(image, ensemble)?;
    let mut best = 0;
    for (i, &m) in means.iter().enumerate().skip(1) {
        if m > means[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Accuracy of one evaluation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    /// (class, images seen, images correct), in ensemble class order.
    pub per_class: Vec<(String, usize, usize)>,
    pub n_images: usize,
    pub config_hash: String,
}

impl EvalReport {
    pub fn top1(&self) -> f64 {
        let correct: usize = self.per_class.iter().map(|(_, _, c)| c).sum();
        if self.n_images == 0 {
            0.0
        } else {
            correct as f64 / self.n_images as f64
        }
    }

    pub fn per_class_acc(&self) -> BTreeMap<String, f64> {
        self.per_class
            .iter()
            .map(|(class, n, correct)| {
                let acc = if *n == 0 {
                    0.0
                } else {
                    *correct as f64 / *n as f64
                };
                (class.clone(), acc)
            })
            .collect()
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.per_class.iter().map(|(c, _, _)| c.as_str()).collect()
    }

    pub fn serialize(&self) -> String {
        let mut out = String::from("#eval-report\n");
        out.push_str(&format!("#config-sha256 {}\n", self.config_hash));
        out.push_str(&format!("#n-images {}\n", self.n_images));
        out.push_str(&format!("#top1 {}\n", self.top1()));
        for (class, n, correct) in &self.per_class {
            let acc = if *n == 0 {
                0.0
            } else {
                *correct as f64 / *n as f64
            };
            out.push_str(&format!("{class}\t{n}\t{correct}\t{acc}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.serialize()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut config_hash = String::from("-");
        let mut n_images = 0usize;
        let mut per_class = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line == "#eval-report" {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#config-sha256 ") {
                config_hash = rest.trim().to_string();
            } else if let Some(rest) = line.strip_prefix("#n-images ") {
                n_images = rest
                    .trim()
                    .parse()
                    .map_err(|_| EvalError::MalformedReport {
                        line: line_no,
                        message: format!("bad n-images {rest:?}"),
                    })?;
            } else if line.starts_with('#') {
                continue;
            } else {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 4 {
                    return Err(EvalError::MalformedReport {
                        line: line_no,
                        message: format!("class line needs 4 fields, got {}", fields.len()),
                    });
                }
                let n = fields[1].parse().map_err(|_| EvalError::MalformedReport {
                    line: line_no,
                    message: format!("bad support {:?}", fields[1]),
                })?;
                let correct = fields[2].parse().map_err(|_| EvalError::MalformedReport {
                    line: line_no,
                    message: format!("bad correct {:?}", fields[2]),
                })?;
                per_class.push((fields[0].to_string(), n, correct));
            }
        }
        Ok(Self {
            per_class,
            n_images,
            config_hash,
        })
    }
}

/// Score every image and tally top-1 accuracy overall and per class.
///
/// Scoring is read-only and data-parallel across images; the reduction sums
/// counts, so worker count never changes the report.
pub fn evaluate<T: Real>(
    images: &EmbeddingMatrix<T>,
    labels: &BTreeMap<String, String>,
    ensemble: &ClassifierEnsemble<T>,
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    use rayon::prelude::*;

    let outcomes: Vec<(usize, bool)> = (0..images.rows())
        .into_par_iter()
        .map(|i| {
            let id = &images.ids[i];
            let label = labels
                .get(id)
                .ok_or_else(|| EvalError::MissingLabel(id.clone()))?;
            let truth = ensemble
                .class_index(label)
                .ok_or_else(|| EvalError::UnknownClass(label.clone()))?;
            let predicted = predict(images.row(i), ensemble)?;
            Ok((truth, predicted == truth))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let mut per_class: Vec<(String, usize, usize)> =
        ensemble.classes.iter().map(|c| (c.clone(), 0, 0)).collect();
    for (truth, correct) in outcomes {
        per_class[truth].1 += 1;
        if correct {
            per_class[truth].2 += 1;
        }
    }
    Ok(EvalReport {
        per_class,
        n_images: images.rows(),
        config_hash: config_hash.to_string(),
    })
}

/// Append `shots` randomly sampled support-image embeddings per class.
///
/// Sampling takes the next `shots` entries of a per-class seeded permutation
/// of the class's support rows (sorted by id), skipping entries consumed by
/// earlier calls, so extending by `s` then `s'` equals one `s + s'` call
/// under the same seed.
pub fn few_shot_extend<T: Real>(
    ensemble: &ClassifierEnsemble<T>,
    support: &EmbeddingMatrix<T>,
    support_labels: &BTreeMap<String, String>,
    shots: usize,
    seed: u64,
) -> Result<ClassifierEnsemble<T>, EvalError> {
    let mut out = ensemble.clone();
    if shots == 0 {
        return Ok(out);
    }
    if support.dims != ensemble.dims {
        return Err(EvalError::DimMismatch(support.dims, ensemble.dims));
    }
    for (class_idx, class) in ensemble.classes.iter().enumerate() {
        let mut pool: Vec<usize> = (0..support.rows())
            .filter(|&i| {
                support_labels.get(&support.ids[i]).map(String::as_str) == Some(class.as_str())
            })
            .collect();
        pool.sort_by(|&a, &b| support.ids[a].cmp(&support.ids[b]));

        let taken = ensemble.support_count(class_idx);
        if pool.len() < taken + shots {
            return Err(EvalError::InsufficientSupport {
                class: class.clone(),
                available: pool.len().saturating_sub(taken),
                needed: shots,
            });
        }
        let mut rng = rng_for(seed, &["few-shot", class]);
        pool.shuffle(&mut rng);
        for &row in &pool[taken..taken + shots] {
            out.members[class_idx].push(EnsembleMember {
                embedding: unit(support.row(row), &support.ids[row])?,
                kind: MemberKind::SupportImage,
            });
        }
    }
    Ok(out)
}

/// Class-wise accuracy improvement from run `a` to run `b`, sorted
/// descending, ties by class index; the first `top_k` entries.
pub fn compare_runs(
    a: &EvalReport,
    b: &EvalReport,
    top_k: usize,
) -> Result<Vec<(String, f64)>, EvalError> {
    let a_classes: BTreeSet<&str> = a.class_names().into_iter().collect();
    let b_classes: BTreeSet<&str> = b.class_names().into_iter().collect();
    if a_classes != b_classes {
        return Err(EvalError::ClassSetMismatch);
    }
    let b_acc = b.per_class_acc();
    let mut deltas: Vec<(usize, String, f64)> = a
        .per_class
        .iter()
        .enumerate()
        .map(|(idx, (class, n, correct))| {
            let a_acc = if *n == 0 {
                0.0
            } else {
                *correct as f64 / *n as f64
            };
            (idx, class.clone(), b_acc[class] - a_acc)
        })
        .collect();
    deltas.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap().then(x.0.cmp(&y.0)));
    Ok(deltas
        .into_iter()
        .take(top_k)
        .map(|(_, class, d)| (class, d))
        .collect())
}

/// Among the ranked classes, those sharing a habitat group with at least one
/// other ranked class, with their group index.
pub fn group_overlap(
    ranking: &[(String, f64)],
    groups: &HabitatGroups,
) -> Result<Vec<(String, usize)>, EvalError> {
    let mut with_groups = Vec::with_capacity(ranking.len());
    for (class, _) in ranking {
        let g = groups
            .group_of(class)
            .ok_or_else(|| EvalError::UncoveredClass(class.clone()))?;
        with_groups.push((class.clone(), g));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, g) in &with_groups {
        *counts.entry(*g).or_insert(0) += 1;
    }
    Ok(with_groups
        .into_iter()
        .filter(|(_, g)| counts[g] >= 2)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(dims: usize, rows: Vec<(&str, Vec<f64>)>) -> EmbeddingMatrix<f64> {
        let ids = rows.iter().map(|(id, _)| id.to_string()).collect();
        let data = rows.into_iter().flat_map(|(_, v)| v).collect();
        EmbeddingMatrix::new(dims, data, ids).unwrap()
    }

    fn ensemble_from(rows: Vec<(&str, Vec<f64>)>) -> ClassifierEnsemble<f64> {
        let classes: Vec<String> = rows.iter().map(|(c, _)| c.to_string()).collect();
        let dims = rows[0].1.len();
        let with_ids: Vec<(String, Vec<f64>)> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (_, v))| (format!("r{i}"), v))
            .collect();
        let ids = with_ids.iter().map(|(id, _)| id.clone()).collect();
        let data = with_ids.into_iter().flat_map(|(_, v)| v).collect();
        let m = EmbeddingMatrix::new(dims, data, ids).unwrap();
        ClassifierEnsemble::from_text_embeddings(&m, &classes).unwrap()
    }

    #[test]
    fn shared_member_gives_uniform_probabilities() {
        let shared = vec![0.3, -0.4, 0.5, 0.1];
        let ens = ensemble_from(vec![
            ("A", shared.clone()),
            ("B", shared.clone()),
            ("C", shared.clone()),
        ]);
        let probs = score(&[1.0, 2.0, 3.0, 4.0], &ens).unwrap();
        for p in &probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // Ties resolve to the lowest class index.
        assert_eq!(predict(&[1.0, 2.0, 3.0, 4.0], &ens).unwrap(), 0);
    }

    #[test]
    fn matching_member_wins() {
        let ens = ensemble_from(vec![
            ("A", vec![1.0, 0.0, 0.0, 0.0]),
            ("B", vec![0.0, 1.0, 0.0, 0.0]),
            ("C", vec![0.0, 0.0, 1.0, 0.0]),
        ]);
        assert_eq!(predict(&[0.0, 0.0, 2.5, 0.0], &ens).unwrap(), 2);
    }

    /// Brute-force oracle: cosines, mean, softmax, written from scratch.
    fn oracle_probs(image: &[f64], classes: &[Vec<Vec<f64>>]) -> Vec<f64> {
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let means: Vec<f64> = classes
            .iter()
            .map(|members| {
                members.iter().map(|m| cos(image, m)).sum::<f64>() / members.len() as f64
            })
            .collect();
        let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = means.iter().map(|m| (m - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    #[test]
    fn three_class_two_member_case_matches_oracle() {
        let raw = vec![
            vec![vec![0.3, 0.1, -0.2, 0.9], vec![0.5, 0.5, 0.5, 0.5]],
            vec![vec![-1.0, 0.2, 0.0, 0.1], vec![0.0, -0.3, 0.8, 0.2]],
            vec![vec![0.7, 0.7, 0.0, 0.0], vec![0.1, 0.9, 0.2, -0.4]],
        ];
        let m = matrix(
            4,
            vec![
                ("a0", raw[0][0].clone()),
                ("a1", raw[0][1].clone()),
                ("b0", raw[1][0].clone()),
                ("b1", raw[1][1].clone()),
                ("c0", raw[2][0].clone()),
                ("c1", raw[2][1].clone()),
            ],
        );
        let classes: Vec<String> = ["A", "A", "B", "B", "C", "C"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ens = ClassifierEnsemble::from_text_embeddings(&m, &classes).unwrap();
        let image = [0.2, -0.7, 0.4, 0.5];
        let got = score(&image, &ens).unwrap();
        let want = oracle_probs(&image, &raw);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn score_is_invariant_to_image_rescaling() {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.2, 0.0]), ("B", vec![0.0, 1.0, 0.4])]);
        let image = [0.3, 0.5, -0.2];
        let scaled: Vec<f64> = image.iter().map(|v| v * 137.0).collect();
        let p1 = score(&image, &ens).unwrap();
        let p2 = score(&scaled, &ens).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_image_and_dim_mismatch_are_errors() {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.0])]);
        assert!(matches!(
            score(&[0.0, 0.0], &ens),
            Err(EvalError::ZeroVector(_))
        ));
        assert!(matches!(
            score(&[1.0, 0.0, 0.0], &ens),
            Err(EvalError::DimMismatch(3, 2))
        ));
    }

    fn labels(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn perfect_match_gives_top1_one() {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.0]), ("B", vec![0.0, 1.0])]);
        let images = matrix(2, vec![("img0", vec![1.0, 0.0])]);
        let report = evaluate(&images, &labels(&[("img0", "A")]), &ens, "-").unwrap();
        assert_eq!(report.top1(), 1.0);
        assert_eq!(
            report.per_class,
            vec![("A".into(), 1, 1), ("B".into(), 0, 0)]
        );
    }

    #[test]
    fn uniform_ties_favor_class_zero() {
        // Every class has the same single member, so every image predicts
        // class 0; accuracy = support of class 0 / N.
        let shared = vec![0.6, 0.8];
        let ens = ensemble_from(vec![
            ("A", shared.clone()),
            ("B", shared.clone()),
            ("C", shared.clone()),
        ]);
        let images = matrix(
            2,
            vec![
                ("i0", vec![1.0, 0.0]),
                ("i1", vec![0.0, 1.0]),
                ("i2", vec![1.0, 1.0]),
                ("i3", vec![-1.0, 0.3]),
            ],
        );
        let lab = labels(&[("i0", "A"), ("i1", "B"), ("i2", "C"), ("i3", "B")]);
        let report = evaluate(&images, &lab, &ens, "-").unwrap();
        assert_eq!(report.top1(), 0.25); // only i0 (class A = index 0)
    }

    #[test]
    fn top1_equals_support_weighted_mean_exactly() {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.0]), ("B", vec![0.0, 1.0])]);
        let images = matrix(
            2,
            vec![
                ("i0", vec![1.0, 0.1]),
                ("i1", vec![1.0, -0.1]),
                ("i2", vec![0.1, 1.0]),
                ("i3", vec![1.0, 0.2]), // labeled B but looks like A
            ],
        );
        let lab = labels(&[("i0", "A"), ("i1", "A"), ("i2", "B"), ("i3", "B")]);
        let report = evaluate(&images, &lab, &ens, "-").unwrap();
        let weighted: f64 = report
            .per_class
            .iter()
            .map(|(_, n, c)| {
                if *n == 0 {
                    0.0
                } else {
                    (*c as f64 / *n as f64) * *n as f64
                }
            })
            .sum::<f64>()
            / report.n_images as f64;
        assert_eq!(report.top1(), weighted);
        assert_eq!(report.top1(), 0.75);
    }

    #[test]
    fn missing_label_is_an_error() {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.0])]);
        let images = matrix(2, vec![("img0", vec![1.0, 0.0])]);
        assert!(matches!(
            evaluate(&images, &labels(&[]), &ens, "-"),
            Err(EvalError::MissingLabel(_))
        ));
    }

    #[test]
    fn report_round_trips() {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.0]), ("B", vec![0.0, 1.0])]);
        let images = matrix(2, vec![("i0", vec![1.0, 0.0]), ("i1", vec![0.0, 1.0])]);
        let lab = labels(&[("i0", "A"), ("i1", "B")]);
        let report = evaluate(&images, &lab, &ens, "cfg123").unwrap();
        let parsed = EvalReport::parse(&report.serialize()).unwrap();
        assert_eq!(parsed, report);
    }

    fn support_fixture() -> (
        ClassifierEnsemble<f64>,
        EmbeddingMatrix<f64>,
        BTreeMap<String, String>,
    ) {
        let ens = ensemble_from(vec![("A", vec![1.0, 0.0, 0.0]), ("B", vec![0.0, 1.0, 0.0])]);
        let support = matrix(
            3,
            vec![
                ("sa0", vec![0.9, 0.1, 0.0]),
                ("sa1", vec![0.8, 0.0, 0.2]),
                ("sa2", vec![1.0, 0.1, 0.1]),
                ("sa3", vec![0.7, 0.2, 0.0]),
                ("sb0", vec![0.0, 0.9, 0.1]),
                ("sb1", vec![0.1, 0.8, 0.0]),
                ("sb2", vec![0.0, 1.0, 0.2]),
                ("sb3", vec![0.2, 0.7, 0.1]),
            ],
        );
        let lab = labels(&[
            ("sa0", "A"),
            ("sa1", "A"),
            ("sa2", "A"),
            ("sa3", "A"),
            ("sb0", "B"),
            ("sb1", "B"),
            ("sb2", "B"),
            ("sb3", "B"),
        ]);
        (ens, support, lab)
    }

    #[test]
    fn zero_shots_is_identity() {
        let (ens, support, lab) = support_fixture();
        let extended = few_shot_extend(&ens, &support, &lab, 0, 42).unwrap();
        assert_eq!(extended, ens);
    }

    #[test]
    fn all_available_shots_take_the_full_pool() {
        let (ens, support, lab) = support_fixture();
        let extended = few_shot_extend(&ens, &support, &lab, 4, 42).unwrap();
        for class_idx in 0..2 {
            let support_members: Vec<&EnsembleMember<f64>> = extended.members[class_idx]
                .iter()
                .filter(|m| m.kind == MemberKind::SupportImage)
                .collect();
            assert_eq!(support_members.len(), 4);
        }
    }

    #[test]
    fn composition_matches_single_call() {
        let (ens, support, lab) = support_fixture();
        let two_then_one = few_shot_extend(
            &few_shot_extend(&ens, &support, &lab, 2, 7).unwrap(),
            &support,
            &lab,
            1,
            7,
        )
        .unwrap();
        let three = few_shot_extend(&ens, &support, &lab, 3, 7).unwrap();
        assert_eq!(two_then_one, three);
    }

    #[test]
    fn insufficient_support_is_an_error() {
        let (ens, support, lab) = support_fixture();
        assert!(matches!(
            few_shot_extend(&ens, &support, &lab, 5, 42),
            Err(EvalError::InsufficientSupport { .. })
        ));
    }

    fn report_from(classes: &[(&str, usize, usize)]) -> EvalReport {
        EvalReport {
            per_class: classes
                .iter()
                .map(|(c, n, k)| (c.to_string(), *n, *k))
                .collect(),
            n_images: classes.iter().map(|(_, n, _)| n).sum(),
            config_hash: "-".into(),
        }
    }

    #[test]
    fn equal_reports_give_zero_deltas() {
        let a = report_from(&[("A", 4, 2), ("B", 4, 3)]);
        let ranking = compare_runs(&a, &a, 10).unwrap();
        assert!(ranking.iter().all(|(_, d)| *d == 0.0));
        // Ties keep class order.
        assert_eq!(ranking[0].0, "A");
    }

    #[test]
    fn improved_class_ranks_first() {
        let a = report_from(&[("A", 4, 2), ("B", 4, 2)]);
        let b = report_from(&[("A", 4, 2), ("B", 4, 4)]);
        let ranking = compare_runs(&a, &b, 1).unwrap();
        assert_eq!(ranking, vec![("B".to_string(), 0.5)]);
    }

    #[test]
    fn ten_class_ranking_matches_sort_oracle() {
        let a_rows: Vec<(String, usize, usize)> =
            (0..10).map(|i| (format!("c{i}"), 10, i)).collect();
        let b_rows: Vec<(String, usize, usize)> = (0..10)
            .map(|i| (format!("c{i}"), 10, ((i * 3) % 11).min(10)))
            .collect();
        let a = EvalReport {
            per_class: a_rows,
            n_images: 100,
            config_hash: "-".into(),
        };
        let b = EvalReport {
            per_class: b_rows,
            n_images: 100,
            config_hash: "-".into(),
        };
        let ranking = compare_runs(&a, &b, 10).unwrap();
        let a_acc = a.per_class_acc();
        let b_acc = b.per_class_acc();
        let mut oracle: Vec<(String, f64)> = a
            .class_names()
            .iter()
            .map(|c| (c.to_string(), b_acc[*c] - a_acc[*c]))
            .collect();
        oracle.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        for (got, want) in ranking.iter().zip(&oracle) {
            assert_eq!(got.1, want.1);
        }
    }

    #[test]
    fn class_set_mismatch_is_an_error() {
        let a = report_from(&[("A", 1, 1)]);
        let b = report_from(&[("B", 1, 1)]);
        assert!(matches!(
            compare_runs(&a, &b, 5),
            Err(EvalError::ClassSetMismatch)
        ));
    }

    fn planted_groups(groups: &[&[&str]]) -> HabitatGroups {
        let mut class_to_group = BTreeMap::new();
        let groups: Vec<Vec<String>> = groups
            .iter()
            .map(|g| g.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            .collect();
        for (gi, g) in groups.iter().enumerate() {
            for c in g {
                class_to_group.insert(c.clone(), gi);
            }
        }
        HabitatGroups {
            groups,
            class_to_group,
            chosen_k: 2,
            silhouette_by_k: BTreeMap::new(),
            seed: 0,
            stoplist_hash: String::new(),
        }
    }

    #[test]
    fn group_overlap_lists_shared_groups_only() {
        let groups = planted_groups(&[&["A", "B", "C"], &["D"], &["E"]]);
        let ranking = vec![
            ("A".to_string(), 0.5),
            ("B".to_string(), 0.4),
            ("D".to_string(), 0.3),
        ];
        let overlap = group_overlap(&ranking, &groups).unwrap();
        assert_eq!(overlap, vec![("A".to_string(), 0), ("B".to_string(), 0)]);

        let distinct = vec![("A".to_string(), 0.5), ("D".to_string(), 0.3)];
        assert!(group_overlap(&distinct, &groups).unwrap().is_empty());

        let uncovered = vec![("Z".to_string(), 0.1)];
        assert!(matches!(
            group_overlap(&uncovered, &groups),
            Err(EvalError::UncoveredClass(_))
        ));
    }

    #[test]
    fn embedding_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.emb");
        let m = matrix(
            3,
            vec![
                ("row a", vec![1.0, 2.5, -3.0]),
                ("row b", vec![0.5, 0.0, 9.0]),
            ],
        );
        m.write(&path).unwrap();
        let back: EmbeddingMatrix<f64> = EmbeddingMatrix::read(&path).unwrap();
        assert_eq!(back, m);
        // Spot-check the layout: magic, then rows=2, dims=3.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1.0);
    }

    #[test]
    fn truncated_embedding_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.emb");
        std::fs::write(&path, b"EMB1\x02\x00\x00\x00\x03\x00\x00\x00short").unwrap();
        assert!(matches!(
            EmbeddingMatrix::<f64>::read(&path),
            Err(EvalError::BadEmbeddingFile { .. })
        ));
    }

    #[test]
    fn non_finite_embeddings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.emb");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(b"row\n");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            EmbeddingMatrix::<f64>::read(&path),
            Err(EvalError::BadEmbeddingFile { .. })
        ));
    }
}
