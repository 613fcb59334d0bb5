pub(crate) mod bytes;
pub mod corpus;
pub mod crossmodal;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod matrix;
pub mod model;
pub mod params;
pub mod retrieval;
pub mod rng;
pub mod tape;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;
