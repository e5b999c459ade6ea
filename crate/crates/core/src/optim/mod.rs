//! Learning mixing weights for a target style: differential evolution over
//! the penalized reward objective, and a group-relative policy gradient that
//! uses the joint score as reward.

mod evolution;
mod grpo;
mod reward;
mod trace;

pub use evolution::{differential_evolution, es_optimize, EsConfig, EvolutionOutcome};
pub use grpo::{grpo_advantages, grpo_optimize, grpo_weight_gradient, GrpoConfig};
pub use reward::{objective_lh, reward, RewardContext, SourceText, MAX_NEW_TOKENS};
pub use trace::{trace_to_csv, TraceRow, TRACE_CSV_HEADER};
