//! Gust-rejection reinforcement learning on a surrogate camber-morphing wing:
//! a calibrated wind-tunnel stand-in plant, a from-scratch PPO implementation,
//! gust-rejection metrics, and a reproducible experiment harness.

pub mod actuator;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod plant;
pub mod ppo;
pub mod records;
pub mod settings;
pub mod stats;
