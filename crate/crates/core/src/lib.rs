//! Deterministic discrete-event simulator of an LTE backhaul carried over a
//! geostationary satellite link with demand-assigned return capacity and
//! optional split-TCP proxies.

pub mod apps;
pub mod cli;
pub mod dama;
pub mod error;
pub mod metrics;
pub mod net;
pub mod pep;
pub mod scenario;
pub mod sim;
pub mod transport;
pub mod world;
