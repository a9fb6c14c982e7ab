//! Procedural (input video, instruction, edited video) triplets.
//!
//! A scene is one coloured square or circle bouncing over a flat
//! background. Instructions come from a closed three-template grammar and
//! every edit is applied exactly, so the edited video is a noise-free target.

mod dataset;
mod edit;
mod error;
mod grammar;
mod scene;

pub use dataset::{gen_dataset, read_dataset, write_dataset, Dataset, DATASET_MAGIC};
pub use edit::{apply_edit, apply_style, EditSpec, EditType, Style};
pub use error::DataError;
pub use grammar::{gen_instruction, Grammar, PALETTE};
pub use scene::{gen_triplet, gen_video, Color, SceneConfig, SceneSpec, ShapeKind, Triplet};

pub type Result<T, E = DataError> = std::result::Result<T, E>;
