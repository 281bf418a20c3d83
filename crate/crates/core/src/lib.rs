//! Goal-conditioned contrastive reinforcement learning with visited-state
//! augmentation.
//!
//! The crate is split bottom-up:
//!
//! * [`numerics`]: MLPs, a reverse-mode tape, Adam, gradient checking.
//! * [`env`]: desk-scale goal-conditioned environments.
//! * [`replay`]: trajectory buffer and every visited/augmented-state sampler.
//! * [`contrastive`]: encoders, critics and mutual-information estimators.
//! * [`actor`]: tanh-Gaussian goal-conditioned policy and its loss.
//! * [`oracle`]: exact occupancy measures and discrete/Gaussian MI.
//! * [`trainer`]: the training loop, evaluation, ablations, MI benchmark,
//!   embedding dumps, and the file formats they write.

pub mod actor;
pub mod contrastive;
pub mod env;
pub mod error;
pub mod numerics;
pub mod oracle;
pub mod replay;
pub mod trainer;

pub use actor::PolicyParams;
pub use contrastive::{CriticScores, EncoderSet, SafeConvention};
pub use env::{EnvKind, GoalEnv, GoalEnvSpec, StepResult};
pub use error::{Error, Result};
pub use numerics::{OptState, ParamSet};
pub use replay::{AugmentationSpec, AugmentationTag, ContrastiveBatch, ReplayBuffer, Trajectory};
pub use trainer::{Method, MetricsRow, TrainConfig};
