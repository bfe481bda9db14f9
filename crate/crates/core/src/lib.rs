//! Label-distribution amendment for classification under noisy one-hot labels.
//!
//! A semantic autoencoder anchors sample embeddings to word vectors of the
//! class names. Each sample's similarities to all classes in that semantic
//! space and in the classifier's feature space form two class-relation graphs;
//! their optimal-transport distance scores how far the sample's label can be
//! trusted. Confidence-weighted class prototypes then turn one-hot labels into
//! label distributions that are mixed into the training loss.

pub mod amend;
pub mod datagen;
pub mod embeddings;
pub mod error;
pub mod nn;
pub mod semantic;
pub mod transport;

pub use error::{Error, Result};
