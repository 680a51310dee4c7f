//! Hierarchical shifted-window video transformer with hand-written gradients.

pub mod attention;
pub mod block;
mod config;
pub mod embed;
pub mod grid;
pub mod layers;
pub mod merge;
mod model;
pub mod params;

pub use config::{BackboneConfig, StageConfig};
pub use model::{Backbone, BackboneOutput, Tape};
pub use params::{Init, ParamEntry, ParamLayout};
