//! Self-supervised spatio-temporal grounding at feature level.
//!
//! The crate covers optimal-transport frame selection ([`otselect`]), the
//! global/local contrastive model with attention rollout ([`groundnet`]),
//! untrimmed-video inference ([`infer`]), the grounding metrics ([`metrics`])
//! and benchmark-construction arithmetic ([`benchtools`]). Everything runs on
//! precomputed or synthetic embeddings ([`datamodel`]).

pub mod benchtools;
pub mod config;
pub mod datamodel;
pub mod error;
pub mod groundnet;
pub mod infer;
pub mod metrics;
pub mod numcore;
pub mod otselect;

pub use error::{Error, Result};
