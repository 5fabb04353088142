//! Grayscale image inpainting by belief propagation over Gaussian mixtures.
//!
//! The library models an image as a Markov random field whose cliques are the
//! 2x2 pixel windows. Each clique carries a product-of-experts potential built
//! from learned linear filters with 1-D Gaussian-mixture response models, and
//! missing pixels are estimated by propagating Gaussian-mixture messages
//! between the cliques that contain them.
//!
//! Modules:
//!
//! - [`imageio`]: grayscale image and mask containers, PGM/PNG input/output,
//!   patch extraction, and the PSNR/SSIM quality metrics.
//! - [`gaussmix`]: multivariate Gaussian mixtures in canonical (information)
//!   form, with the product / marginalize / condition / prune / mode-scan
//!   operations that the propagation engine is built on.
//! - [`prior`]: PCA filter learning, 1-D EM mixture fitting, and the lift of
//!   1-D response models into clique-sized Gaussian potentials.
//! - [`graph`]: clique-graph construction from an image mask, forest
//!   detection, and message schedules.
//! - [`engine`]: the belief-propagation inpainting engine.
//! - [`baseline`]: gradient-ascent inpainting under a Student-t
//!   product-of-experts prior, used as a comparison baseline.

pub mod baseline;
pub mod engine;
pub mod gaussmix;
pub mod graph;
pub mod imageio;
pub mod prior;
