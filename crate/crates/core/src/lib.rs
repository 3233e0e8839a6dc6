//! Procedural synthetic face data: a parametric face rig and its learned
//! identity model, scene randomization, label rendering, augmentation,
//! landmark label adaptation, evaluation metrics and dataset persistence.

pub mod adapt;
pub mod augment;
pub mod classes;
pub mod config;
pub mod dataset;
pub mod desk;
pub mod error;
pub mod face_model;
pub mod learning;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod seed;

pub use classes::SemanticClass;
pub use config::GenerationConfig;
pub use desk::ModelAssets;
pub use error::{Error, Result};
pub use face_model::{ExpressionParams, FaceRig, IdentityParams, Mesh, PoseParams};
pub use raster::{Camera, LabelBundle, Landmark};
pub use scene::SceneDescription;
