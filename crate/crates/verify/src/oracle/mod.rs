//! Reference implementations written without the library's code paths.

pub mod confusion;
pub mod kmeans;
pub mod rank;
pub mod smoothing;
