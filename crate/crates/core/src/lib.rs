//! Promotion hierarchies as finite-capacity birth-death queues, a seeded
//! discrete-event simulator that cross-checks them, and an XML authority
//! database updated as employees move between levels.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod policy;
pub mod queue;
pub mod sim;

pub use pipeline::{analyze_pipeline, authority_grant, Coupling, LevelConfig, PipelineModel};
pub use policy::{AuthorityDatabase, AuthorizationRequest, Decision, PolicyDocument};
pub use queue::{
    expected_in_system, mm1k_distribution, performance_metrics, stationary_distribution,
    BirthDeathSpec, PerformanceMetrics, StationaryDistribution,
};
pub use sim::{simulate_level, simulate_pipeline, SimulationConfig, SimulationResult};
