//! Hysteresis-based hybrid reinforcement learning.
//!
//! A baseline policy is trained, the states where its closed loop splits
//! between two behaviours are located, the state space is divided into two
//! overlapping regions, one policy is trained per region, and the policies
//! are combined by a logic variable that only switches when the state leaves
//! the active region.

pub mod config;
pub mod critical;
pub mod envs;
pub mod error;
pub mod extend;
pub mod harness;
pub mod hybrid;
pub mod nn;
pub mod region;
pub mod rl;
