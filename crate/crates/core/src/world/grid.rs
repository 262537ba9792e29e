use alloc::vec::Vec;

use bitflags::bitflags;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::lexicon::{Category, Color, Material};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Facing {
    N,
    E,
    S,
    W,
}

impl Facing {
    pub const ALL: [Facing; 4] = [Facing::N, Facing::E, Facing::S, Facing::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn left(self) -> Facing {
        Facing::ALL[(self.index() + 3) % 4]
    }

    pub fn right(self) -> Facing {
        Facing::ALL[(self.index() + 1) % 4]
    }

    /// Unit step; y grows southwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Facing::N => (0, -1),
            Facing::E => (1, 0),
            Facing::S => (0, 1),
            Facing::W => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    pub facing: Facing,
}

impl Pose {
    pub fn facing_cell(&self) -> (i32, i32) {
        let (dx, dy) = self.facing.delta();
        (self.x + dx, self.y + dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Floor,
    Wall,
}

bitflags! {
    #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct Flags: u8 {
        const SLICED = 1;
        const BOILED = 1 << 1;
        const OPEN = 1 << 2;
        const TOGGLED_ON = 1 << 3;
    }
}

impl Flags {
    /// Flags an object of `category` is allowed to carry.
    pub fn allowed_for(category: Category) -> Flags {
        let mut f = Flags::empty();
        if category.is_sliceable() {
            f |= Flags::SLICED;
        }
        if category.is_boilable() {
            f |= Flags::BOILED;
        }
        if category.is_openable() {
            f |= Flags::OPEN;
        }
        if category.is_toggleable() {
            f |= Flags::TOGGLED_ON;
        }
        f
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: Category,
    pub color: Color,
    pub material: Material,
    pub position: (i32, i32),
    pub container: Option<u32>,
    pub flags: Flags,
}

/// Layout of one room. Walls and furniture placement depend only on
/// `layout_seed`; item placement and the agent start depend on the episode
/// seed passed to [`generate_world`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoomSpec {
    pub width: u32,
    pub height: u32,
    pub wall_segments: u32,
    pub layout_seed: u64,
    pub contents: Vec<(Category, u32)>,
}

impl RoomSpec {
    pub fn count(&self, category: Category) -> u32 {
        self.contents
            .iter()
            .filter(|(c, _)| *c == category)
            .map(|(_, n)| *n)
            .sum()
    }
}

/// Object ids equal their index in `objects`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridWorld {
    pub width: i32,
    pub height: i32,
    pub cells: Vec<Cell>,
    pub objects: Vec<ObjectInstance>,
    pub agent: Pose,
    pub held: Option<u32>,
    pub rng_seed: u64,
}

impl GridWorld {
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn cell(&self, x: i32, y: i32) -> Option<Cell> {
        if self.in_bounds(x, y) {
            Some(self.cells[(y * self.width + x) as usize])
        } else {
            None
        }
    }

    pub fn object(&self, id: u32) -> &ObjectInstance {
        &self.objects[id as usize]
    }

    pub fn is_held(&self, id: u32) -> bool {
        self.held == Some(id)
    }

    /// Objects resting at a cell (furniture, items on the floor or inside receptacles).
    pub fn objects_at(&self, x: i32, y: i32) -> impl Iterator<Item = &ObjectInstance> + '_ {
        let held = self.held;
        self.objects
            .iter()
            .filter(move |o| o.position == (x, y) && Some(o.id) != held)
    }

    pub fn furniture_at(&self, x: i32, y: i32) -> Option<&ObjectInstance> {
        self.objects_at(x, y).find(|o| o.category.is_furniture())
    }

    /// Floor cell with nothing resting on it.
    pub fn is_walkable(&self, x: i32, y: i32) -> bool {
        self.cell(x, y) == Some(Cell::Floor) && self.objects_at(x, y).next().is_none()
    }

    /// An item is reachable by hand unless it sits in a closed receptacle.
    pub fn is_accessible(&self, obj: &ObjectInstance) -> bool {
        if self.is_held(obj.id) {
            return false;
        }
        match obj.container {
            None => true,
            Some(c) => {
                let rec = self.object(c);
                !rec.category.is_openable() || rec.flags.contains(Flags::OPEN)
            }
        }
    }

    pub fn contents_of(&self, container: u32) -> impl Iterator<Item = &ObjectInstance> + '_ {
        self.objects
            .iter()
            .filter(move |o| o.container == Some(container))
    }

    pub fn has_category(&self, category: Category) -> bool {
        self.objects.iter().any(|o| o.category == category)
    }

    pub fn instances(&self, category: Category) -> impl Iterator<Item = &ObjectInstance> + '_ {
        self.objects.iter().filter(move |o| o.category == category)
    }

    /// Checks the structural invariants; used by tests and generation.
    pub fn validate(&self) -> bool {
        if !self.is_walkable(self.agent.x, self.agent.y) {
            return false;
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.id as usize != i {
                return false;
            }
            if !(Flags::allowed_for(o.category).contains(o.flags)) {
                return false;
            }
            if self.is_held(o.id) {
                if o.container.is_some() {
                    return false;
                }
                continue;
            }
            if self.cell(o.position.0, o.position.1) != Some(Cell::Floor) {
                return false;
            }
            if let Some(c) = o.container {
                let rec = match self.objects.get(c as usize) {
                    Some(r) => r,
                    None => return false,
                };
                if !rec.category.is_furniture() || rec.position != o.position {
                    return false;
                }
            }
        }
        true
    }

    fn floor_cells(&self) -> Vec<(i32, i32)> {
        let mut v = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.cell(x, y) == Some(Cell::Floor) {
                    v.push((x, y));
                }
            }
        }
        v
    }

    /// All walkable cells form one 4-connected region and every occupied
    /// floor cell touches it.
    fn is_connected(&self) -> bool {
        let walkable: Vec<(i32, i32)> = self
            .floor_cells()
            .into_iter()
            .filter(|&(x, y)| self.is_walkable(x, y))
            .collect();
        let Some(&start) = walkable.first() else {
            return false;
        };
        let w = self.width as usize;
        let mut seen = alloc::vec![false; (self.width * self.height) as usize];
        let mut stack = alloc::vec![start];
        seen[start.1 as usize * w + start.0 as usize] = true;
        let mut count = 0;
        while let Some((x, y)) = stack.pop() {
            count += 1;
            for f in Facing::ALL {
                let (dx, dy) = f.delta();
                let (nx, ny) = (x + dx, y + dy);
                if self.is_walkable(nx, ny) && !seen[ny as usize * w + nx as usize] {
                    seen[ny as usize * w + nx as usize] = true;
                    stack.push((nx, ny));
                }
            }
        }
        if count != walkable.len() {
            return false;
        }
        self.floor_cells()
            .into_iter()
            .filter(|&(x, y)| !self.is_walkable(x, y))
            .all(|(x, y)| {
                Facing::ALL.iter().any(|f| {
                    let (dx, dy) = f.delta();
                    self.is_walkable(x + dx, y + dy)
                })
            })
    }
}

const PLACEMENT_ATTEMPTS: usize = 64;

/// Builds a world for `(seed, spec)`. Deterministic for fixed inputs.
pub fn generate_world(seed: u64, spec: &RoomSpec) -> Result<GridWorld, WorldError> {
    if spec.width < 5 || spec.height < 5 {
        return Err(WorldError::SpecInfeasible("room must be at least 5x5"));
    }
    let interior = ((spec.width - 2) * (spec.height - 2)) as usize;
    let n_furniture: usize = spec
        .contents
        .iter()
        .filter(|(c, _)| c.is_furniture())
        .map(|(_, n)| *n as usize)
        .sum();
    let n_items: usize = spec
        .contents
        .iter()
        .filter(|(c, _)| !c.is_furniture())
        .map(|(_, n)| *n as usize)
        .sum();
    let surface_capacity: usize = spec
        .contents
        .iter()
        .filter(|(c, _)| c.is_surface())
        .map(|(c, n)| c.capacity() * *n as usize)
        .sum();
    // One interior cell must stay free for the agent.
    let floor_slots = interior.saturating_sub(n_furniture + 1);
    if n_furniture + 1 > interior || n_items > surface_capacity + floor_slots {
        return Err(WorldError::SpecInfeasible("objects do not fit in the room"));
    }

    let mut layout_rng = substream(spec.layout_seed, "world/layout");
    for _ in 0..PLACEMENT_ATTEMPTS {
        if let Some(world) = try_layout(spec, &mut layout_rng) {
            let mut item_rng = substream(seed ^ spec.layout_seed.rotate_left(17), "world/items");
            for _ in 0..PLACEMENT_ATTEMPTS {
                if let Some(mut w) = try_items(&world, spec, &mut item_rng) {
                    w.rng_seed = seed;
                    debug_assert!(w.validate());
                    return Ok(w);
                }
            }
            return Err(WorldError::SpecInfeasible("items cannot be placed"));
        }
    }
    Err(WorldError::SpecInfeasible("furniture cannot be placed"))
}

fn try_layout(spec: &RoomSpec, rng: &mut impl Rng) -> Option<GridWorld> {
    let (w, h) = (spec.width as i32, spec.height as i32);
    let mut cells = alloc::vec![Cell::Floor; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                cells[(y * w + x) as usize] = Cell::Wall;
            }
        }
    }
    let mut world = GridWorld {
        width: w,
        height: h,
        cells,
        objects: Vec::new(),
        agent: Pose {
            x: 1,
            y: 1,
            facing: Facing::N,
        },
        held: None,
        rng_seed: 0,
    };
    for _ in 0..spec.wall_segments {
        let horizontal = rng.random_bool(0.5);
        let len = rng.random_range(2..=3);
        let x0 = rng.random_range(2..(w - 2).max(3));
        let y0 = rng.random_range(2..(h - 2).max(3));
        let mut trial = world.clone();
        for i in 0..len {
            let (x, y) = if horizontal { (x0 + i, y0) } else { (x0, y0 + i) };
            if x > 0 && y > 0 && x < w - 1 && y < h - 1 {
                trial.cells[(y * w + x) as usize] = Cell::Wall;
            }
        }
        if trial.is_connected() {
            world = trial;
        }
    }
    let mut next_id = 0u32;
    for &(category, count) in spec.contents.iter().filter(|(c, _)| c.is_furniture()) {
        for _ in 0..count {
            let free: Vec<(i32, i32)> = world
                .floor_cells()
                .into_iter()
                .filter(|&(x, y)| world.is_walkable(x, y))
                .collect();
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let &(x, y) = free.choose(rng)?;
                let color = *category.palette().choose(rng)?;
                let mut trial = world.clone();
                trial.objects.push(ObjectInstance {
                    id: next_id,
                    category,
                    color,
                    material: category.material(),
                    position: (x, y),
                    container: None,
                    flags: Flags::empty(),
                });
                if trial.is_connected() {
                    world = trial;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return None;
            }
            next_id += 1;
        }
    }
    Some(world)
}

fn try_items(base: &GridWorld, spec: &RoomSpec, rng: &mut impl Rng) -> Option<GridWorld> {
    let mut world = base.clone();
    let mut next_id = world.objects.len() as u32;
    for &(category, count) in spec.contents.iter().filter(|(c, _)| !c.is_furniture()) {
        for _ in 0..count {
            let surfaces: Vec<u32> = world
                .objects
                .iter()
                .filter(|o| {
                    o.category.is_surface()
                        && world.contents_of(o.id).count() < o.category.capacity()
                })
                .map(|o| o.id)
                .collect();
            let color = *category.palette().choose(rng)?;
            let mut obj = ObjectInstance {
                id: next_id,
                category,
                color,
                material: category.material(),
                position: (0, 0),
                container: None,
                flags: Flags::empty(),
            };
            if let Some(&s) = surfaces.choose(rng) {
                obj.position = world.object(s).position;
                obj.container = Some(s);
                world.objects.push(obj);
            } else {
                let free: Vec<(i32, i32)> = world
                    .floor_cells()
                    .into_iter()
                    .filter(|&(x, y)| world.is_walkable(x, y))
                    .collect();
                let &(x, y) = free.choose(rng)?;
                obj.position = (x, y);
                world.objects.push(obj);
                if !world.is_connected() {
                    return None;
                }
            }
            next_id += 1;
        }
    }
    let free: Vec<(i32, i32)> = world
        .floor_cells()
        .into_iter()
        .filter(|&(x, y)| world.is_walkable(x, y))
        .collect();
    let &(x, y) = free.choose(rng)?;
    let facing = *Facing::ALL.choose(rng)?;
    world.agent = Pose { x, y, facing };
    Some(world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_spec() -> RoomSpec {
        RoomSpec {
            width: 7,
            height: 7,
            wall_segments: 0,
            layout_seed: 3,
            contents: vec![
                (Category::Countertop, 1),
                (Category::Potato, 1),
                (Category::Knife, 1),
            ],
        }
    }

    #[test]
    fn generates_exactly_the_requested_objects() {
        let w = generate_world(1, &small_spec()).unwrap();
        assert_eq!(w.objects.len(), 3);
        assert!(w.validate());
        for c in [Category::Countertop, Category::Potato, Category::Knife] {
            assert_eq!(w.instances(c).count(), 1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(1, &small_spec()).unwrap();
        let b = generate_world(1, &small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_world(2, &small_spec()).unwrap();
        // Same layout, so furniture stays put.
        assert_eq!(a.objects[0].position, c.objects[0].position);
    }

    #[test]
    fn overfull_spec_is_infeasible() {
        let spec = RoomSpec {
            width: 5,
            height: 5,
            wall_segments: 0,
            layout_seed: 1,
            contents: vec![(Category::Potato, 100)],
        };
        assert!(matches!(
            generate_world(1, &spec),
            Err(WorldError::SpecInfeasible(_))
        ));
    }

    #[test]
    fn items_without_surfaces_lie_on_the_floor() {
        let spec = RoomSpec {
            width: 6,
            height: 6,
            wall_segments: 0,
            layout_seed: 9,
            contents: vec![(Category::Mug, 2)],
        };
        let w = generate_world(4, &spec).unwrap();
        assert!(w.objects.iter().all(|o| o.container.is_none()));
        assert!(w.validate());
    }

    #[test]
    fn rotation_helpers() {
        assert_eq!(Facing::N.right(), Facing::E);
        assert_eq!(Facing::N.left(), Facing::W);
        assert_eq!(Facing::W.right(), Facing::N);
    }
}
