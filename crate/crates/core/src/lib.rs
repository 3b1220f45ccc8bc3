//! Blind image quality assessment from statistics of self-similarity.
//!
//! An image is compared against four translated and four Gaussian-smoothed
//! copies of itself. Each comparison yields a local similarity map, the maps
//! are summarized into a fixed-length feature vector, and an ε-SVR maps the
//! features to a quality score.

pub mod error;
pub mod imgproc;
pub mod similarity;
pub mod features;
pub mod rng;
pub mod svr;
pub mod eval;
pub mod bench;

pub use bench::{BenchmarkReport, ManifestRecord, Method, ScoreKind, SplitSpec};
pub use error::{Error, Result};
pub use eval::{EvalReport, LogisticParams};
pub use features::{extract_features, FeatureKind, SosFeatureVector};
pub use imgproc::{load_gray, GrayImage, Grid};
pub use similarity::{LocalSimilarityMap, SimilarityConfig, SimilarityFn};
pub use svr::{GridSpec, QualityModel, SvrConfig, SvrModel};
