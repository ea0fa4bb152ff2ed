//! Route search over a reactant catalog with sequential Monte Carlo and a
//! learned energy surrogate.

pub mod analysis;
pub mod catalog;
pub mod evaluate;
pub mod forward;
pub mod kmeans;
pub mod neighbors;
pub mod pipeline;
pub mod posterior;
pub mod resample;
pub mod routes;
pub mod smc;
pub mod space;
pub mod stats;
pub mod synth;
pub mod surrogate;
pub mod templates;
pub mod wire;
