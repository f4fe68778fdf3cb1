//! Expected communication cost of batched embedding-table lookups.
//!
//! The crate is organised around a small set of closed-form models and the
//! machinery needed to check them empirically:
//!
//! - [`cost_model`]: presence probabilities, expected unique embeddings per
//!   batch, and per-epoch cost with coalescing and caching.
//! - [`cache_planner`]: the memory-constrained trade-off between cache size
//!   and batch size, the marginal caching condition, and the cache-size
//!   search.
//! - [`distributions`]: Zipf, exponential and half-normal access
//!   distributions, plus empirical ones.
//! - [`trace`]: lookup traces, skew tables, hot/normal sample classification
//!   and hot-only batch schedules.
//! - [`simulator`]: seeded Monte Carlo validation of the analytics.
//! - [`cli`] and [`report`]: the `embcomm` command line and its
//!   reproducible JSON/CSV outputs.

pub mod cache_planner;
pub mod cli;
pub mod cost_model;
pub mod distributions;
mod error;
mod numeric;
pub mod report;
pub mod simulator;
pub mod trace;

pub use cache_planner::{CachePlan, DatasetShape, DeviceModel, MarginalReport, SearchMethod};
pub use cost_model::{CostBreakdown, EmbeddingDistribution, WorkloadSpec};
pub use distributions::DistributionSpec;
pub use error::{Error, Result};
pub use simulator::{SimConfig, SimResult, Source};
pub use trace::{BatchSchedule, SkewTable, Trace};
