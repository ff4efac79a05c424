//! Exemplar-based image classification with patch-level re-ranking,
//! visual-correspondence explanations, and human-AI team analytics.
//!
//! Features are extracted offline and loaded from binary banks
//! ([`store`]). Classification is a cosine kNN over global embeddings
//! ([`knn`]), optionally re-ranked by optimal transport between patch sets or
//! by correspondence-map similarity ([`corr`]). [`explain`] turns predictions
//! into user-facing documents, [`eval`] measures accuracy and explanation
//! diversity, and [`team`] analyses accept/reject study logs. [`extract`]
//! and [`display`] hold the contracts with the offline extractor and the
//! study frontend.

pub mod classify;
pub mod corr;
pub mod display;
pub mod error;
pub mod eval;
pub mod explain;
pub mod extract;
pub mod knn;
pub mod ot;
pub mod store;
pub mod study;
pub mod team;
pub mod weights;

pub use classify::{ChmCorrClassifier, ChmCorrPlusClassifier, Classification, Classifier, EmdCorrClassifier, KnnClassifier};
pub use error::{Error, Result};
pub use explain::ExplanationRecord;
pub use knn::{Method, Prediction, RankedNeighbor};
pub use store::{DatasetManifest, Dims, FeatureRecord, GalleryIndex, ManifestEntry, Split};
pub use team::TrialLog;
