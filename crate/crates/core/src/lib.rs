//! Primal-dual natural actor-critic (PDNAC) for infinite-horizon average-reward
//! constrained MDPs.
//!
//! The learner side ([`critic`], [`actor`], [`driver`]) only ever touches the
//! environment through [`cmdp::sample_trajectory`]. The [`oracle`] module holds
//! exact tabular ground truth for every quantity the learner estimates and is
//! used by tests, telemetry and the experiment harness.

pub mod actor;
pub mod cmdp;
pub mod critic;
pub mod driver;
pub mod experiments;
pub mod error;
pub mod features;
pub mod inner;
pub mod linalg;
pub mod mlmc;
pub mod oracle;
pub mod policy;
pub mod recursion;
pub mod rng;
pub mod summary;
pub mod telemetry;

pub use cmdp::{ChainCursor, Signal, TabularCmdp, Transition};
pub use error::{Error, Result};
pub use features::FeatureMap;
pub use policy::{ParamPolicy, PolicyFamily};
