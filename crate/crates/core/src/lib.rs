//! Multi-view deep discriminant learning.
//!
//! Per-view networks map each data view to a shared-size latent space where a
//! coupled eigenvalue objective rewards class separation within views and
//! association between views. On top of the trained embedding sit a nearest
//! centroid classifier and a bootstrap permutation procedure that ranks input
//! features by how often permuting them degrades out-of-bag accuracy.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod net;
pub mod objective;
pub mod ranking;
pub mod seeding;
pub mod simgen;
pub mod trainer;

pub use dataset::{ClassLabels, MultiViewDataset};
pub use error::{DeepIdaError, Result};
