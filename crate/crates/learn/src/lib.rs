//! Transformer actor-critic networks over the Da Vinci Code token encoding, with
//! self-play PPO training and a greedy agent backed by a trained checkpoint.
//!
//! The numeric substrate is deliberately small: dense layers with hand-written
//! backward passes on top of a strided matrix product, generic over `f32`/`f64`.

pub mod adam;
pub mod agent;
pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod ppo;
pub mod scalar;
pub mod train;

pub use encoder::{Batch, EncoderConfig};
pub use network::{ActorCritic, Head, Network, NetworkConfig, PolicyOutput};
pub use ppo::{compute_gae, PpoConfig};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("action mask has no legal entry")]
    EmptyMask,
    #[error("non-finite {what} during update {update}")]
    NonFinite { what: String, update: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoding(#[from] davinci_core::encoding::EncodingError),
    #[error(transparent)]
    Engine(#[from] davinci_core::engine::EngineError),
    #[error(transparent)]
    Eval(#[from] davinci_core::evaluation::EvalError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}
