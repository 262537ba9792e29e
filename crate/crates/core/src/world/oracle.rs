use serde::{Deserialize, Serialize};

use super::action::ActionKind;
use super::expert::PoseDistances;
use super::grid::{GridWorld, ObjectInstance};
use super::WorldError;
use crate::lexicon::{Category, Color, Material};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intent {
    LocationOf(Category),
    AppearanceOf(Category),
    DirectionTo(Category),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelDir {
    Left,
    Right,
    Front,
    Behind,
}

impl RelDir {
    pub fn word(self) -> &'static str {
        match self {
            RelDir::Left => "left",
            RelDir::Right => "right",
            RelDir::Front => "front",
            RelDir::Behind => "behind",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Turn {
    Left,
    Right,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerFacts {
    /// `container` is `None` when the object rests on the floor.
    Location {
        direction: RelDir,
        container: Option<Category>,
    },
    Appearance {
        color: Color,
        material: Material,
    },
    Direction {
        turn: Turn,
    },
}

/// Nearest non-held instance by navigation distance, then Manhattan distance, then id.
fn nearest<'a>(world: &'a GridWorld, dists: &PoseDistances, c: Category) -> Option<&'a ObjectInstance> {
    let (ax, ay) = (world.agent.x, world.agent.y);
    world
        .instances(c)
        .filter(|o| !world.is_held(o.id))
        .min_by_key(|o| {
            let nav = dists.steps_to_face(o.position).unwrap_or(u32::MAX);
            let manhattan = (o.position.0 - ax).abs() + (o.position.1 - ay).abs();
            (nav, manhattan, o.id)
        })
}

fn relative_direction(world: &GridWorld, target: (i32, i32)) -> RelDir {
    let pose = world.agent;
    let (dx, dy) = (target.0 - pose.x, target.1 - pose.y);
    let (fx, fy) = pose.facing.delta();
    let (rx, ry) = pose.facing.right().delta();
    let fwd = dx * fx + dy * fy;
    let lat = dx * rx + dy * ry;
    if fwd >= lat.abs() {
        RelDir::Front
    } else if -fwd >= lat.abs() {
        RelDir::Behind
    } else if lat > 0 {
        RelDir::Right
    } else {
        RelDir::Left
    }
}

/// Ground-truth facts behind the oracle question templates.
pub fn oracle_lookup(world: &GridWorld, intent: Intent) -> Result<AnswerFacts, WorldError> {
    match intent {
        Intent::AppearanceOf(c) => {
            let dists = PoseDistances::from(world, world.agent);
            let obj = nearest(world, &dists, c)
                .or_else(|| world.instances(c).next())
                .ok_or(WorldError::NoSuchObject(c))?;
            Ok(AnswerFacts::Appearance {
                color: obj.color,
                material: obj.material,
            })
        }
        Intent::LocationOf(c) => {
            let dists = PoseDistances::from(world, world.agent);
            let obj = nearest(world, &dists, c).ok_or(WorldError::NoSuchObject(c))?;
            Ok(AnswerFacts::Location {
                direction: relative_direction(world, obj.position),
                container: obj.container.map(|r| world.object(r).category),
            })
        }
        Intent::DirectionTo(c) => {
            let cells: alloc::vec::Vec<(i32, i32)> = world
                .instances(c)
                .filter(|o| !world.is_held(o.id))
                .map(|o| o.position)
                .collect();
            if cells.is_empty() {
                return Err(WorldError::NoSuchObject(c));
            }
            let dists = PoseDistances::from(world, world.agent);
            let turn = match dists.path_to_facing(&cells).and_then(|p| p.first().copied()) {
                Some(ActionKind::TurnLeft) => Turn::Left,
                Some(ActionKind::TurnRight) => Turn::Right,
                _ => Turn::None,
            };
            Ok(AnswerFacts::Direction { turn })
        }
    }
}
