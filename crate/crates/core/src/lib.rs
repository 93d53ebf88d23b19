//! Reward-based content delivery in delay tolerant networks as a
//! satisfaction-form game: closed-form equilibria, distributed learning and
//! Monte Carlo validation.

pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod learning;
pub mod model;
pub mod montecarlo;
pub mod output;

pub use equilibrium::{
    EseSolution, MseSolution, PseEntry, PseSolution, PureEquilibrium, RegionAxis,
};
pub use error::{Error, Result};
pub use experiments::{
    emit_csv, parse_config, run_scenario, Mode, ResultTable, ScenarioConfig, Sweep, SweepVar,
};
pub use learning::{
    Action, LearnOptions, RateSchedule, RelayLearnerState, Schedules, SourceLearnerState,
    SourceRule, Trajectory, TrajectoryRecord,
};
pub use model::{ContactModel, EnergyModel, GameParams, StrategyProfile};
pub use montecarlo::{ContactMode, EpisodeOutcome, EstimateWithCI};
