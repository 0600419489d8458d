pub mod baseline;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod growth;
pub mod hierarchy;
pub mod io;
pub mod kalman;
pub mod lna;
pub mod mcmc;
pub mod rng;
pub mod sde;

#[cfg(test)]
mod testutil;
