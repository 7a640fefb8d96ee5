pub mod linalg;
pub mod networks;
pub mod ppo;

pub use networks::{Network, NetworkSpec};
pub use ppo::{Agent, Trainer, TrainerConfig};
