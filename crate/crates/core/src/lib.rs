//! Explainable image classification workbench.
//!
//! A small residual CNN black box and a progressive-growing adversarial autoencoder are trained
//! on procedurally generated 8-class lesion-like images. Explanations for a query image are
//! built in the autoencoder's latent space: a genetic neighbourhood, a surrogate decision tree,
//! decision and counterfactual rules, exemplars, a counter-exemplar and a saliency map. The
//! latent atlas projects encoded data to 2D with SMACOF and measures pairwise class separation
//! with random forests.

pub mod atlas;
pub mod autodiff;
pub mod container;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod image;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod run;
pub mod tensor;
pub mod tree;

pub use error::{LxlError, Result, Stage};
pub use image::Image;
pub use tensor::{Element, Tensor};
