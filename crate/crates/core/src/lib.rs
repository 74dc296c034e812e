//! Habitat-aware dataset tooling for fine-grained bird classification.
//!
//! The crate covers the full data side of a habitat-augmentation study:
//!
//! - [`corpus`] — dataset manifests, segmentation masks, bounding boxes and
//!   the four textual descriptor formats (M&V, PEEB, SSC, habitat).
//! - [`textcluster`] — TF-IDF vectorization of habitat descriptions, k-means,
//!   silhouette-based model selection and the resulting habitat groups.
//! - [`composite`] — pixel-level compositing: bird extraction, diffusion
//!   inpainting fallback, resizing and mask-disjoint overlay.
//! - [`augment`] — Mixed-Same / Mixed-Group / Mixed-Irrelevant augmentation
//!   planning and execution.
//! - [`perturb`] — the five evaluation variants (original, black background,
//!   no bird, black boxes, big box).
//! - [`flybird`] — sky-based FlyBird / Non-FlyBird partitioning from panoptic
//!   label maps.
//! - [`prompt`] — zero-shot prompt templates, descriptor ensembles, and
//!   common/scientific name substitution.
//! - [`zseval`] — averaged-similarity scoring over descriptor-embedding
//!   ensembles, accuracy reports, few-shot extension and run comparison.
//! - [`report`] — aligned text / machine-readable accuracy tables.
//!
//! Numeric kernels (vectorization, clustering, scoring) are generic over the
//! scalar type via [`scalar::Real`]; pixel operations are fixed 8-bit RGB.
//! All randomized stages are driven by explicit 64-bit seeds through
//! [`seedstream`], so every pipeline output is reproducible byte for byte.

pub mod augment;
pub mod composite;
pub mod corpus;
pub mod flybird;
pub mod perturb;
pub mod prompt;
pub mod report;
pub mod scalar;
pub mod seedstream;
pub mod textcluster;
pub mod treehash;
pub mod zseval;

pub use scalar::Real;

/// Document vectors over `f32`.
pub type DocumentVectors32 = textcluster::DocumentVectors<f32>;
/// Document vectors over `f64`.
pub type DocumentVectors64 = textcluster::DocumentVectors<f64>;
/// Cluster assignment over `f32`.
pub type ClusterAssignment32 = textcluster::ClusterAssignment<f32>;
/// Cluster assignment over `f64`.
pub type ClusterAssignment64 = textcluster::ClusterAssignment<f64>;
/// Embedding matrix over `f32` (the on-disk element type).
pub type EmbeddingMatrix32 = zseval::EmbeddingMatrix<f32>;
/// Embedding matrix over `f64`.
pub type EmbeddingMatrix64 = zseval::EmbeddingMatrix<f64>;
/// Classifier ensemble over `f32`.
pub type ClassifierEnsemble32 = zseval::ClassifierEnsemble<f32>;
/// Classifier ensemble over `f64`.
pub type ClassifierEnsemble64 = zseval::ClassifierEnsemble<f64>;

/// Crate version, stamped into run metadata by the command-line tool.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
