//! Robustness toolkit for language-conditioned manipulation policies.

pub mod builder;
pub mod camera;
pub mod canon;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod language;
pub mod patch;
pub mod perturbation;
pub mod report;
pub mod rng;
pub mod scene;
pub mod scene_perturb;
pub mod stats;
