//! Core of a learning-by-asking embodied agent.
//!
//! Everything in this crate is pure computation over owned values: a
//! deterministic household gridworld, a small differentiable network
//! library, the policy (actioner), uncertainty measures, sub-goal planning,
//! question-answer generation and ranking, the asking episode loop and the
//! evaluation metrics. IO, configuration and the command line live in the
//! `elba` crate.
//!
//! The crate is `no_std` and only needs `alloc`. Floating point math goes
//! through `libm` so results are bit-identical across platforms.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod actioner;
pub mod agent;
pub mod confusion;
pub mod lexicon;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod qaeval;
pub mod qagen;
pub mod rng;
pub mod text;
pub mod world;

pub use actioner::{Actioner, ActionerConfig, HiddenState, PolicyOutput, StateInfo};
pub use agent::{AgentConfig, Models, QaArm, Trajectory};
pub use confusion::{ConfusionConfig, ConfusionMeasure, ConfusionMode};
pub use lexicon::{Category, Color, Material};
pub use planner::PlannerModel;
pub use qaeval::QaEvaluator;
pub use qagen::{QaPair, QaType};
pub use text::Vocab;
pub use world::{Action, ActionKind, Episode, GridWorld, RoomSpec, SubGoal, Task, TaskType};
