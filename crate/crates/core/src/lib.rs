//! Deterministic simulator of federated learning under dynamic backdoor
//! attacks.
//!
//! Malicious clients train a persistent local model against a blend of
//! classification loss and distance-to-global loss, weighted by how well the
//! current global model already serves their poisoned data. The server can
//! aggregate with plain federated averaging or with a boosted Reptile-style
//! meta update. Everything is seeded; the same config always produces the
//! same metrics.

pub mod attack;
pub mod client;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod seed;
pub mod server;

pub use error::{Error, Result};
