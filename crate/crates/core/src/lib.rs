//! Guided policy optimization for partially observable control.

pub mod nn;
pub mod envs;
pub mod objectives;
pub mod rollout;
pub mod trainer;
pub mod verify;
