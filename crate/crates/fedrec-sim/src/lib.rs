//! Deterministic simulator of federated recommendation under gradient
//! poisoning attacks.
//!
//! A neural collaborative filtering model is trained by federated SGD:
//! item embeddings and MLP weights live on a central server, each user's
//! embedding and interactions stay on their own client, and clients upload
//! only shared-parameter gradients. On top of that protocol the crate
//! implements gradient poisoning strategies (random-approximation and
//! hard-user-mining attacks, plus fake-profile and explicit-boosting
//! baselines) and measures their effect as the exposure ratio of target
//! items in benign users' top-K recommendations.
//!
//! Everything is a pure function of the inputs and a master seed: two runs
//! with the same configuration produce byte-identical result files.

pub mod attacks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
