pub mod checks;
pub mod cli;
pub mod delegation;
pub mod error;
pub mod game;
pub mod generate;
pub mod instance;
mod linalg;
pub mod measures;
pub mod oracles;

pub use delegation::{
    assemble_matrix, augment, delegation_cycles, is_delegation_cycle, partition_agents,
    validate_profile, AgentPartition, AugmentedMatrix, DelegationMatrix, DelegationProfile,
    WeightSource,
};
pub use error::{Error, ReductionClause, Result};
pub use measures::{
    classic_power, delegation_reduction, delta_delegation_constant, mixed_strategy_power,
    power_eps, power_exact, power_series, standard_generalization, MeasureResult, Method,
    PowerVector, ReductionSpec,
};
pub use game::{
    best_response, br_dynamics, utility, verify_equilibrium, BestResponse, DynamicsConfig,
    PreferenceProfile, RegretReport, Status, StrategySpace, Trajectory,
};
pub use oracles::{
    enumerate_pure_support, grid_best_response, particle_estimate, GridOptimum, ParticleEstimate,
    PureOutcome,
};
pub use instance::{Instance, InstanceFile, LoadError};
pub use checks::{check_instance, generate_instance, run_suite, Suite, SuiteConfig, SuiteReport};
