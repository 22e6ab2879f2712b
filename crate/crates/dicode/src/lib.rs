//! Agent-environment co-design with critic-guided constrained diffusion.
//!
//! The crate couples a denoising diffusion generator of environment designs
//! with multi-agent PPO: the agent critic is distilled into an environment
//! critic, which steers constrained diffusion sampling (projected universal
//! guidance) toward designs on which the current policy earns high returns.

pub mod analysis;
pub mod codesign;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod guidance;
pub mod marl;
pub mod nn;
pub mod projection;
pub mod rng;

pub use error::{DicodeError, Result};
