//! Reconstruction networks and their parameters.

mod backbone;
mod params;

pub use backbone::{
    build_backbone, coordinate_grid, Backbone, BackboneKind, BackboneSpec, InrSpec, Network,
    UnetSpec, UnrolledSpec,
};
pub use params::{Bound, LoraAdapter, LoraConfig, ParamLayout, ParamStore, Segment};
