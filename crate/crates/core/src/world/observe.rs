use alloc::vec::Vec;

use super::grid::{Cell, GridWorld};
use crate::lexicon::Category;

pub const PATCH_ROWS: usize = 5;
pub const PATCH_COLS: usize = 5;
const CODES_PER_CELL: usize = 3 + 7 + 8;
const HELD_BASE: usize = PATCH_ROWS * PATCH_COLS * CODES_PER_CELL;

/// Size of the observation feature vocabulary.
pub const OBS_FEATURES: usize = HELD_BASE + 1 + Category::ITEMS.len();

/// Symbolic egocentric view: the 5x5 cells from the agent's row forward,
/// two columns to each side, plus the held item. Stored as sorted feature ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ObsPatch {
    pub features: Vec<u16>,
}

fn item_code(c: Category) -> usize {
    3 + 7 + (c.index() - Category::FURNITURE.len())
}

pub fn observe(world: &GridWorld) -> ObsPatch {
    let pose = world.agent;
    let (fx, fy) = pose.facing.delta();
    let (rx, ry) = pose.facing.right().delta();
    let mut features = Vec::with_capacity(PATCH_ROWS * PATCH_COLS * 2 + 1);
    for row in 0..PATCH_ROWS as i32 {
        for col in 0..PATCH_COLS as i32 {
            let lateral = col - 2;
            let x = pose.x + fx * row + rx * lateral;
            let y = pose.y + fy * row + ry * lateral;
            let base = (row as usize * PATCH_COLS + col as usize) * CODES_PER_CELL;
            let structure = match world.cell(x, y) {
                None => 0,
                Some(Cell::Wall) => 1,
                Some(Cell::Floor) => match world.furniture_at(x, y) {
                    Some(f) => 3 + f.category.index(),
                    None => 2,
                },
            };
            features.push((base + structure) as u16);
            if let Some(item) = world
                .objects_at(x, y)
                .find(|o| o.category.is_pickupable() && world.is_accessible(o))
            {
                features.push((base + item_code(item.category)) as u16);
            }
        }
    }
    let held = match world.held {
        None => 0,
        Some(h) => 1 + world.object(h).category.index() - Category::FURNITURE.len(),
    };
    features.push((HELD_BASE + held) as u16);
    ObsPatch { features }
}
