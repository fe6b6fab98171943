//! The network modules: backbone, location, positional encoding,
//! classification and feature weighting.

pub mod backbone;
pub mod layers;
pub mod location;
pub mod model;
pub mod params;
pub mod positional;
pub mod weighting;

pub use backbone::{Backbone, BackboneSpec, FeatureShape, Features, LayerSpec, LayerTrace};
pub use layers::{Conv, Dense, SqueezeExcite};
pub use location::{cell_coordinates, ContextMode, LocationModule, LocationSpec};
pub use model::{Model, ModelSpec};
pub use params::{Gradients, Graph, Param, ParamId, ParamStore};
pub use positional::{PositionalMode, PositionalModule, PositionalSpec};
pub use weighting::{mean_aggregate, FeatureWeighting};
