//! Channel deduction networks and their baselines.
//!
//! Complex stages are CMixers (alternating antenna-axis and subcarrier-axis
//! complex MLPs). Between them, past and present channels are flattened to
//! real vectors, reduced to a common width, fused by a recurrent or attention
//! core, and recovered to full size.

pub mod layers;
mod model;
mod params;
mod spec;

pub use model::{
    batch_major, complex_batch, detailed_representation, flatten, forward, interaction_attention,
    interaction_recurrent, matrices_from, preliminary_mapping, time_major, unflatten, Model, Network,
    Sample,
};
pub use params::{init_params, Bound, ParameterSet};
pub use spec::{ModelSpec, Variant};
