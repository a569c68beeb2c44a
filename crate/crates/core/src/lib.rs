//! Learning data-augmentation parameters jointly with a classifier through
//! online bilevel optimization and truncated hypergradients.

pub mod bilevel;
pub mod checks;
pub mod data;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod vision;
