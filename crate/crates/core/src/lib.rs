//! Deterministic discrete-event simulator of HFCS, a hybrid hierarchical /
//! peer-to-peer metadata exchange system for geo-distributed fog computing,
//! together with a hierarchical and a broadcast baseline.

pub mod baselines;
pub mod experiment;
pub mod geo;
pub mod ids;
pub mod metadata;
pub mod metrics;
pub mod protocol;
pub mod sim;
pub mod topology;
