//! Multi-agent research testbed: a shared blackboard, a synthetic task
//! landscape, reward mechanisms, simulated agents, and a trainer for the
//! learned mechanism.

pub mod agents;
pub mod blackboard;
pub mod canonical;
pub mod error;
pub mod incentive;
pub mod mechanism_opt;
pub mod net;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod task;

pub use agents::{AgentId, AgentSpec, Policy, PolicyKind};
pub use blackboard::{Blackboard, Submission, SubmissionId, SubmissionKind, Verdict};
pub use canonical::Hash256;
pub use error::{Error, Result};
pub use incentive::{InstitutionParams, Mechanism, MechanismTheta, RewardEntry};
pub use scenario::{load_scenario, parse_scenario};
pub use sim::{Metrics, Mode, RunOutput, Scenario, Simulation, Trajectory};
pub use task::{Config, TaskSpec};
