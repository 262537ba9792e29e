use serde::{Deserialize, Serialize};

use super::action::{Action, ActionKind};
use super::grid::{Flags, GridWorld};
use crate::lexicon::Category;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepOutcome {
    Ok,
    Blocked,
    InvalidTarget,
}

/// Applies one action. Failures are outcomes and leave the world unchanged.
///
/// Interaction targets resolve to the lowest-id instance of the requested
/// category resting in the cell the agent faces.
pub fn step(world: &GridWorld, action: &Action) -> (GridWorld, StepOutcome) {
    let mut next = world.clone();
    let outcome = apply(&mut next, action);
    if outcome == StepOutcome::Ok {
        (next, outcome)
    } else {
        (world.clone(), outcome)
    }
}

fn apply(w: &mut GridWorld, action: &Action) -> StepOutcome {
    let pose = w.agent;
    let (fx, fy) = pose.facing_cell();
    match action.kind() {
        ActionKind::Stop => StepOutcome::Ok,
        ActionKind::TurnLeft => {
            w.agent.facing = pose.facing.left();
            StepOutcome::Ok
        }
        ActionKind::TurnRight => {
            w.agent.facing = pose.facing.right();
            StepOutcome::Ok
        }
        ActionKind::Forward => move_to(w, fx, fy),
        ActionKind::PanLeft | ActionKind::PanRight => {
            let side = if action.kind() == ActionKind::PanLeft {
                pose.facing.left()
            } else {
                pose.facing.right()
            };
            let (dx, dy) = side.delta();
            move_to(w, pose.x + dx, pose.y + dy)
        }
        ActionKind::Pickup => {
            let Some(category) = action.object() else {
                return StepOutcome::InvalidTarget;
            };
            if w.held.is_some() || !category.is_pickupable() {
                return StepOutcome::InvalidTarget;
            }
            let target = w
                .objects_at(fx, fy)
                .find(|o| o.category == category && w.is_accessible(o))
                .map(|o| o.id);
            match target {
                Some(id) => {
                    let o = &mut w.objects[id as usize];
                    o.container = None;
                    o.position = (pose.x, pose.y);
                    w.held = Some(id);
                    StepOutcome::Ok
                }
                None => StepOutcome::InvalidTarget,
            }
        }
        ActionKind::Place => {
            let (Some(category), Some(held)) = (action.object(), w.held) else {
                return StepOutcome::InvalidTarget;
            };
            let Some(rec) = w.furniture_at(fx, fy) else {
                return StepOutcome::InvalidTarget;
            };
            let item = w.object(held).category;
            let open_ok = !rec.category.is_openable() || rec.flags.contains(Flags::OPEN);
            if rec.category != category
                || !rec.category.accepts(item)
                || !open_ok
                || w.contents_of(rec.id).count() >= rec.category.capacity()
            {
                return StepOutcome::InvalidTarget;
            }
            let (rec_id, rec_pos) = (rec.id, rec.position);
            let heats = rec.category == Category::Pot && rec.flags.contains(Flags::TOGGLED_ON);
            let o = &mut w.objects[held as usize];
            o.position = rec_pos;
            o.container = Some(rec_id);
            if heats && item.is_boilable() {
                o.flags |= Flags::BOILED;
            }
            w.held = None;
            StepOutcome::Ok
        }
        ActionKind::Slice => {
            let Some(category) = action.object() else {
                return StepOutcome::InvalidTarget;
            };
            let has_knife = w
                .held
                .map(|h| w.object(h).category == Category::Knife)
                .unwrap_or(false);
            if !has_knife || !category.is_sliceable() {
                return StepOutcome::InvalidTarget;
            }
            let target = w
                .objects_at(fx, fy)
                .find(|o| o.category == category && w.is_accessible(o))
                .map(|o| o.id);
            match target {
                Some(id) => {
                    w.objects[id as usize].flags |= Flags::SLICED;
                    StepOutcome::Ok
                }
                None => StepOutcome::InvalidTarget,
            }
        }
        ActionKind::Open | ActionKind::Close | ActionKind::ToggleOn | ActionKind::ToggleOff => {
            let Some(category) = action.object() else {
                return StepOutcome::InvalidTarget;
            };
            let (flag, set) = match action.kind() {
                ActionKind::Open => (Flags::OPEN, true),
                ActionKind::Close => (Flags::OPEN, false),
                ActionKind::ToggleOn => (Flags::TOGGLED_ON, true),
                _ => (Flags::TOGGLED_ON, false),
            };
            let Some(rec) = w.furniture_at(fx, fy) else {
                return StepOutcome::InvalidTarget;
            };
            if rec.category != category
                || !Flags::allowed_for(category).contains(flag)
                || rec.flags.contains(flag) == set
            {
                return StepOutcome::InvalidTarget;
            }
            let id = rec.id as usize;
            w.objects[id].flags.set(flag, set);
            StepOutcome::Ok
        }
    }
}

fn move_to(w: &mut GridWorld, x: i32, y: i32) -> StepOutcome {
    if !w.is_walkable(x, y) {
        return StepOutcome::Blocked;
    }
    w.agent.x = x;
    w.agent.y = y;
    if let Some(h) = w.held {
        w.objects[h as usize].position = (x, y);
    }
    StepOutcome::Ok
}


#[cfg(test)]
pub(crate) use tests::toy_world;
