//! Built-in benchmark models for the experiment pipeline.

pub mod gk;
pub mod toy;
pub mod varsel;
