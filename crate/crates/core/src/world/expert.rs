use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::action::{Action, ActionKind};
use super::dynamics::{step, StepOutcome};
use super::grid::{Facing, Flags, GridWorld, Pose};
use super::task::{check_goal_conditions, GoalCondition, SubGoal, SubGoalVerb, Subject, Task, TaskType};
use super::WorldError;
/// Steps `[start, end)` of an expert trajectory spent on one gold sub-goal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalSpan {
    pub subgoal: SubGoal,
    pub start: usize,
    pub end: usize,
}

const EXPANSION: [ActionKind; 3] = [ActionKind::Forward, ActionKind::TurnLeft, ActionKind::TurnRight];

/// Breadth-first search over agent poses from a start pose. Successors are
/// expanded in the order Forward < TurnLeft < TurnRight and each pose keeps
/// its first discoverer, so `order` lists poses by (depth, lexicographic path).
pub struct PoseDistances {
    width: i32,
    dist: Vec<u32>,
    parent: Vec<Option<(usize, ActionKind)>>,
    order: Vec<usize>,
}

impl PoseDistances {
    pub fn from(world: &GridWorld, start: Pose) -> PoseDistances {
        let n = (world.width * world.height) as usize * 4;
        let mut dist = vec![u32::MAX; n];
        let mut parent = vec![None; n];
        let mut order = Vec::new();
        let width = world.width;
        let idx = |p: &Pose| ((p.y * width + p.x) as usize) * 4 + p.facing.index();
        let s = idx(&start);
        dist[s] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let i = idx(&p);
            order.push(i);
            for kind in EXPANSION {
                let next = match kind {
                    ActionKind::Forward => {
                        let (x, y) = p.facing_cell();
                        if !world.is_walkable(x, y) {
                            continue;
                        }
                        Pose { x, y, facing: p.facing }
                    }
                    ActionKind::TurnLeft => Pose { facing: p.facing.left(), ..p },
                    _ => Pose { facing: p.facing.right(), ..p },
                };
                let j = idx(&next);
                if dist[j] == u32::MAX {
                    dist[j] = dist[i] + 1;
                    parent[j] = Some((i, kind));
                    queue.push_back(next);
                }
            }
        }
        PoseDistances {
            width,
            dist,
            parent,
            order,
        }
    }

    fn pose_of(&self, i: usize) -> Pose {
        let cell = (i / 4) as i32;
        Pose {
            x: cell % self.width,
            y: cell / self.width,
            facing: Facing::ALL[i % 4],
        }
    }

    /// Lexicographically smallest shortest path to a pose facing any target cell.
    pub fn path_to_facing(&self, targets: &[(i32, i32)]) -> Option<Vec<ActionKind>> {
        let goal = self
            .order
            .iter()
            .copied()
            .find(|&i| targets.contains(&self.pose_of(i).facing_cell()))?;
        let mut path = Vec::new();
        let mut cur = goal;
        while let Some((prev, kind)) = self.parent[cur] {
            path.push(kind);
            cur = prev;
        }
        path.reverse();
        Some(path)
    }

    /// Number of steps until the agent faces `cell`, if reachable.
    pub fn steps_to_face(&self, cell: (i32, i32)) -> Option<u32> {
        self.order
            .iter()
            .find(|&&i| self.pose_of(i).facing_cell() == cell)
            .map(|&i| self.dist[i])
    }
}

/// Shortest action sequence from the agent's pose to facing one of `targets`.
pub fn shortest_path(world: &GridWorld, targets: &[(i32, i32)]) -> Option<Vec<ActionKind>> {
    PoseDistances::from(world, world.agent).path_to_facing(targets)
}

fn receptacle_target(task: &Task) -> Option<u32> {
    if task.task_type != TaskType::PlaceAllXInY {
        return None;
    }
    task.goal_conditions.iter().find_map(|g| match g {
        GoalCondition::InContainer {
            container: Subject::Object(id),
            ..
        } => Some(*id),
        _ => None,
    })
}

fn find_targets(world: &GridWorld, task: &Task, idx: usize) -> Vec<(i32, i32)> {
    let sg = task.gold_subgoals[idx];
    let c = sg.noun1;
    let next = task.gold_subgoals.get(idx + 1);
    let bound = receptacle_target(task);
    let satisfied = |id: u32| task.goal_conditions.iter().any(|g| match g {
        GoalCondition::InContainer {
            subject: Subject::Object(s),
            ..
        } => *s == id && g.holds(world),
        _ => false,
    });
    let mut cells: Vec<(i32, i32)> = world
        .instances(c)
        .filter(|o| !world.is_held(o.id))
        .filter(|o| match next.map(|n| n.verb) {
            Some(SubGoalVerb::Pickup) => world.is_accessible(o) && !satisfied(o.id),
            Some(SubGoalVerb::Slice) => world.is_accessible(o) && !o.flags.contains(Flags::SLICED),
            Some(SubGoalVerb::Place) | Some(SubGoalVerb::Open) => match bound {
                Some(b) if world.object(b).category == c => o.id == b,
                _ => true,
            },
            Some(SubGoalVerb::ToggleOn) => !o.flags.contains(Flags::TOGGLED_ON),
            _ => true,
        })
        .map(|o| o.position)
        .collect();
    cells.dedup();
    cells
}

/// The interaction action that accomplishes a non-`Find` sub-goal.
pub fn action_for_subgoal(sg: &SubGoal) -> Option<Action> {
    let kind = match sg.verb {
        SubGoalVerb::Find => return None,
        SubGoalVerb::Pickup => ActionKind::Pickup,
        SubGoalVerb::Place => ActionKind::Place,
        SubGoalVerb::Slice => ActionKind::Slice,
        SubGoalVerb::Open => ActionKind::Open,
        SubGoalVerb::Close => ActionKind::Close,
        SubGoalVerb::ToggleOn => ActionKind::ToggleOn,
    };
    Some(Action::interact(kind, sg.target()))
}

/// Executes the gold sub-goals with shortest-path navigation, then `Stop`.
pub fn expert_rollout(
    world: &GridWorld,
    task: &Task,
) -> Result<(Vec<Action>, Vec<SubgoalSpan>), WorldError> {
    let mut cur = world.clone();
    let mut actions = Vec::new();
    let mut spans = Vec::new();
    for (i, sg) in task.gold_subgoals.iter().enumerate() {
        let start = actions.len();
        match action_for_subgoal(sg) {
            None => {
                let targets = find_targets(&cur, task, i);
                let path = shortest_path(&cur, &targets).ok_or(WorldError::NoPath(sg.noun1))?;
                for kind in path {
                    let a = Action::nav(kind);
                    let (next, outcome) = step(&cur, &a);
                    if outcome != StepOutcome::Ok {
                        return Err(WorldError::ExpertFailed("navigation"));
                    }
                    cur = next;
                    actions.push(a);
                }
            }
            Some(a) => {
                let (next, outcome) = step(&cur, &a);
                if outcome != StepOutcome::Ok {
                    return Err(WorldError::ExpertFailed("interaction"));
                }
                cur = next;
                actions.push(a);
            }
        }
        spans.push(SubgoalSpan {
            subgoal: *sg,
            start,
            end: actions.len(),
        });
    }
    actions.push(Action::STOP);
    match spans.last_mut() {
        Some(last) => last.end = actions.len(),
        None => spans.push(SubgoalSpan {
            subgoal: SubGoal::new(SubGoalVerb::Find, task.primary_category()),
            start: 0,
            end: 1,
        }),
    }
    if !check_goal_conditions(&cur, task).iter().all(|&b| b) {
        return Err(WorldError::ExpertFailed("goal conditions unmet after rollout"));
    }
    Ok((actions, spans))
}
