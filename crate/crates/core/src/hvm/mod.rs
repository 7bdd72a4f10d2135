//! Spatio-temporal graph encoder over observed pose windows.

pub mod adjacency;
pub mod encoder;
pub mod layers;
pub mod scales;

pub use adjacency::{build_static_adjacency, normalize_adjacency, AdjacencyPack, SCALES};
pub use encoder::{Encoder, EncoderKind, EncoderLayer};
pub use layers::{gcn_layer, ra_layer, va_layer, Activation, GcnParams, RaParams, VaParams};
pub use scales::{pool_to_scale, unpool_from_scale, ScaleMaps};
