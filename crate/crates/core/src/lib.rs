//! Event-driven simulator of drift-aware asynchronous federated learning.
//!
//! The crate models a fleet of streaming edge devices coordinated by a
//! central server. Devices receive the global model, score it on newly
//! arrived samples, test the score history for concept drift, adapt a
//! proximal regularization weight, train locally and upload. The server
//! aggregates each upload on arrival, keeps a per-device update ledger and
//! schedules the next dispatch to the idle device with the fewest updates,
//! capped at a fraction `gamma` of concurrently training devices.
//!
//! Everything is driven by a deterministic discrete-event loop in simulated
//! seconds: identical configuration and seeds produce bit-identical outputs
//! on every platform. Four protocols share the machinery: `fedcond` (the
//! full drift-aware protocol), `async-broadcast` (per-update aggregation
//! that broadcasts to every device, fixed lambda, detection off), and the
//! synchronous `fedavg` / `fedprox` baselines.

pub mod client;
pub mod config;
pub mod drift;
pub mod error;
pub mod ingest;
pub mod model;
pub mod report;
pub mod rng;
pub mod server;
pub mod sim;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
