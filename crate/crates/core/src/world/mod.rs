//! Deterministic household gridworld: rooms, objects, task compilation,
//! expert demonstrations, templated dialog and ground-truth answers.

mod action;
mod dialog;
mod dynamics;
mod episode;
mod expert;
mod grid;
mod observe;
mod oracle;
mod task;

pub use action::{Action, ActionKind, ParseActionError, NUM_ACTION_KINDS};
pub use dialog::{instruction_phrase, synthesize_dialog, DialogConfig};
pub use dynamics::{step, StepOutcome};
#[cfg(test)]
pub(crate) use dynamics::toy_world;
pub use episode::{
    build_episode, generate_dataset, generate_layouts, make_splits, DatasetConfig, Episode,
    SplitRatios, SplitTag,
};
pub use expert::{action_for_subgoal, expert_rollout, shortest_path, PoseDistances, SubgoalSpan};
pub use grid::{generate_world, Cell, Facing, Flags, GridWorld, ObjectInstance, Pose, RoomSpec};
pub use observe::{observe, ObsPatch, OBS_FEATURES, PATCH_COLS, PATCH_ROWS};
pub use oracle::{oracle_lookup, AnswerFacts, Intent, RelDir, Turn};
pub use task::{
    check_goal_conditions, compile_task, GoalCondition, ParseSubGoalError, Subject, SubGoal,
    SubGoalVerb, Task, TaskType, NUM_TASK_TYPES,
};

use crate::lexicon::Category;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("room spec infeasible: {0}")]
    SpecInfeasible(&'static str),
    #[error("task references category {0} absent from the world")]
    MissingCategory(Category),
    #[error("task infeasible: {0}")]
    TaskInfeasible(&'static str),
    #[error("no path to any {0}")]
    NoPath(Category),
    #[error("no {0} in the world")]
    NoSuchObject(Category),
    #[error("need at least 4 distinct room layouts, found {0}")]
    TooFewRooms(usize),
    #[error("expert failed to execute {0}")]
    ExpertFailed(&'static str),
}
