//! TF-IDF vectorization of habitat descriptions.
//!
//! Tokenization is lowercase, split on non-alphanumeric characters, tokens
//! shorter than two characters dropped, stop words excluded before counting.
//! Weights are `tf(t,d) * idf(t)` with raw term counts and smoothed
//! `idf(t) = ln((1+N)/(1+df(t))) + 1`; rows are L2-normalized. A document
//! consisting solely of stop words yields the zero vector and is reported as
//! a warning row rather than an error.

use std::collections::{BTreeMap, BTreeSet};

use crate::scalar::Real;

use super::stopwords::is_stop_word;
use super::ClusterError;

/// TF-IDF document-term matrix; rows parallel `doc_ids`, columns parallel
/// the sorted `vocabulary`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentVectors<T: Real> {
    pub vocabulary: Vec<String>,
    pub rows: Vec<Vec<T>>,
    pub doc_ids: Vec<String>,
}

impl<T: Real> DocumentVectors<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.vocabulary.len()
    }

    /// Ids of all-stop-word documents (zero rows).
    pub fn zero_rows(&self) -> Vec<&str> {
        self.rows
            .iter()
            .zip(&self.doc_ids)
            .filter(|(row, _)| row.iter().all(|&v| v == T::zero()))
            .map(|(_, id)| id.as_str())
            .collect()
    }
}

/// Lowercase alphanumeric tokens of length >= 2, stop words removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2 && !is_stop_word(t))
        .map(str::to_string)
        .collect()
}

/// Vectorize `(doc_id, text)` pairs into the TF-IDF space.
pub fn vectorize<T: Real>(texts: &[(String, String)]) -> Result<DocumentVectors<T>, ClusterError> {
    if texts.len() < 2 {
        return Err(ClusterError::TooFewDocuments(texts.len()));
    }
    for (id, text) in texts {
        if text.trim().is_empty() {
            return Err(ClusterError::EmptyDocument(id.clone()));
        }
    }

    let token_lists: Vec<Vec<String>> = texts.iter().map(|(_, t)| tokenize(t)).collect();

    let vocabulary: Vec<String> = token_lists
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let term_index: BTreeMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let n_docs = texts.len();
    let mut df = vec![0usize; vocabulary.len()];
    let mut counts: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(n_docs);
    for tokens in &token_lists {
        let mut doc_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for token in tokens {
            let idx = term_index[token.as_str()];
            *doc_counts.entry(idx).or_insert(0) += 1;
        }
        for &idx in doc_counts.keys() {
            df[idx] += 1;
        }
        counts.push(doc_counts);
    }

    let idf: Vec<T> = df
        .iter()
        .map(|&d| {
            let ratio = T::from_count(1 + n_docs) / T::from_count(1 + d);
            ratio.ln() + T::one()
        })
        .collect();

    let mut rows = Vec::with_capacity(n_docs);
    for doc_counts in &counts {
        let mut row = vec![T::zero(); vocabulary.len()];
        for (&idx, &count) in doc_counts {
            row[idx] = T::from_count(count) * idf[idx];
        }
        let norm = crate::scalar::norm(&row);
        if norm > T::zero() {
            for v in &mut row {
                *v = *v / norm;
            }
        }
        rows.push(row);
    }

    Ok(DocumentVectors {
        vocabulary,
        rows,
        doc_ids: texts.iter().map(|(id, _)| id.clone()).collect(),
    })
}
