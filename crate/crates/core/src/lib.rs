//! Consensus inference over random partitions from vertically sharded data.
//!
//! The data's columns are split into shards, a Dirichlet-process mixture is
//! fit to each shard in parallel, and the shard posteriors over partitions
//! are aggregated into a consensus posterior: the entropic-regularized
//! Wasserstein barycenter under a ground metric on partitions (variation of
//! information or Binder loss), with principled shard weights. A
//! brute-force checker verifies the variational bound that justifies the
//! construction on enumerable instances.

pub mod barycenter;
pub mod config;
pub mod error;
pub mod io;
pub mod ot;
pub mod partition;
pub mod pipeline;
pub mod posterior;
pub mod report;
pub mod sampler;
pub mod theory;
pub mod weights;

pub use error::{Error, Result};
pub use ot::Metric;
pub use partition::{binder, mutual_information, voi, Partition};
pub use posterior::EmpiricalPartitionPosterior;
