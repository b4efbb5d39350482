//! Multi-robot area search: a deterministic gridworld, hierarchical
//! role/primitive policies, a dual PPO learner, baselines and metrics.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod learner;
pub mod nn;
pub mod observation;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod world;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use error::{Error, Result};
pub use eval::{
    coverage_percentage, evaluate, exploration_percentage, metrics_csv, role_proportions, run_episode, run_world,
    time_to_90, EpisodeLog, EpisodeObserver, MetricsReport, ScenarioPreset,
};
pub use learner::{gae, ppo_loss, Agent, LossCoefficients, NetId, TrainConfig, TrainLogRow, Trainer};
pub use nn::{Adam, Mlp, MlpSpec};
pub use observation::{observe_team, JointScope, RobotFeatures};
pub use policy::{
    GoalMode, GreedyTeam, LearnedTeam, PolicyBundle, PrimitiveAction, RandomTeam, RoleAction, ScriptedTeam,
    TeamDecision, TeamPolicy,
};
pub use reward::{exploration_ability, primitive_rewards, role_reward, AbilityMode, RewardRecord, RewardWeights};
pub use world::{generate_map, CellKind, Coord, GridWorld, Heading, RobotPose, ScenarioConfig, SpawnMode, StepEvents};
