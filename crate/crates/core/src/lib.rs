//! Verifier-free policy-gradient laboratory.
//!
//! Small autoregressive policies whose trace space can be enumerated exactly,
//! so that estimator means, variances and objective identities are checked
//! against ground truth. The crate provides the sequence and task model
//! ([`seqcore`]), softmax policies ([`policy`]), rewards ([`rewards`]),
//! gradient estimators ([`estimators`]), enumeration oracles ([`oracle`]), a
//! toy merge tokenizer with answer patching ([`patchtok`]) and the training
//! loop ([`trainer`]).

pub mod error;
pub mod estimators;
pub mod oracle;
pub mod patchtok;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod seqcore;
pub mod trainer;

pub use error::{Error, Result};
pub use estimators::{AnswerTarget, Baseline, EstimatorKind, GradEstimate, GroupOptions, LengthNorm};
pub use oracle::{ObjectiveMode, VarianceReport};
pub use policy::{ParamVector, Parameterization, Policy, Rollout};
pub use rewards::{RewardKind, RewardValue};
pub use seqcore::{FamilyKind, TaskFamily, TaskInstance, TokenId, TokenSeq, Vocab};
