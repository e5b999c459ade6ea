//! Small decoder-only character language model with low-rank adapter slots
//! on the query and value projections of every block.
//!
//! The forward pass applies adapters dynamically through their factors; the
//! backward pass is hand-written and can produce base, effective query/value
//! or adapter-factor gradients.

mod backward;
mod config;
mod forward;
mod infer;
mod lora;
mod params;
mod tokenizer;
mod train;

pub use backward::{backward, completion_nll, param_gradients, BaseGrad};
pub use config::ModelConfig;
pub use forward::{forward, forward_logits, DecodeState, ForwardCache};
pub use infer::{decode, decode_group, generate, generate_ids, merge_scaled, sequence_log_prob, Decoding, Sampled};
pub use lora::{AdaptedModule, AuthorAdapter, LayerAdapter, LowRankDelta, ScaledAdapter, DEFAULT_ALPHA, DEFAULT_RANK};
pub use params::{BaseModel, BlockParams};
pub use tokenizer::{encode_completion, encode_prompt, prompt_text, Tokenizer, EOT, INSTRUCTION};
pub use train::{mean_loss, sft_train_adapter, train_base, Adam, TrainConfig, TrainExample, TrainReport};
