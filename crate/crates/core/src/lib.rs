//! Musical score inpainting by traversing the latent space of a
//! measure-level VAE.
//!
//! * [`codec`]: the 24-token-per-measure grid encoding and vocabulary.
//! * [`abc`] and [`corpus`]: ABC ingestion, filtering, windowing and splits.
//! * [`nn`]: tensors, reverse-mode tape, GRU/linear layers, Adam.
//! * [`vae`]: the measure VAE (bi-GRU encoder, beat/tick hierarchical decoder).
//! * [`latent`]: the context/generation RNNs and the inpainting loss.
//! * [`train`], [`checkpoint`]: training loops, evaluation, checkpoint files.
//! * [`service`]: the HTTP inpainting API.

pub mod abc;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod nn;
pub mod service;
pub mod train;
pub mod latent;
pub mod vae;
