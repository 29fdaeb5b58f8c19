//! The backend: idempotent batch ingestion into an append-only log, trait
//! computation, cohort evaluation and metric queries. [`Platform`] bundles
//! these with the experiment orchestrator behind one consistent state.

pub mod cohort;
pub mod log;
pub mod metric;
mod service;
pub mod traits;

pub use cohort::{evaluate_cohort, CmpOp, CohortDefinition, CohortError, Constant, Predicate};
pub use log::{export_segments, EventLog, IngestError, OpenError, ReactionEvent, DEFAULT_SEGMENT_LINES};
pub use metric::{query_metric, Aggregation, MetricDefinition, MetricError};
pub use service::{Platform, PlatformError, PlatformLink};
pub use traits::{compute_trait, TraitDefinition, TraitDescriptor, TraitError, TraitRegistry};
