//! PCA morphable face models, texture-to-geometry coupling, template alignment and
//! evaluation harnesses for synthesized faces.

pub mod alignment;
pub mod binio;
pub mod config;
pub mod corpus;
pub mod coupling;
pub mod error;
pub mod evaluation;
pub mod mesh;
pub mod morphable;
pub mod report;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
