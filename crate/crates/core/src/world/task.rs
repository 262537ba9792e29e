use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::grid::{Flags, GridWorld};
use super::WorldError;
use crate::lexicon::Category;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskType {
    PlaceAllXInY,
    SliceX,
    BoilX,
    MakeCoffee,
    CleanX,
}

pub const NUM_TASK_TYPES: usize = 5;

impl TaskType {
    pub const ALL: [TaskType; NUM_TASK_TYPES] = [
        TaskType::PlaceAllXInY,
        TaskType::SliceX,
        TaskType::BoilX,
        TaskType::MakeCoffee,
        TaskType::CleanX,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn arity(self) -> usize {
        match self {
            TaskType::PlaceAllXInY => 2,
            TaskType::MakeCoffee => 0,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subject {
    Category(Category),
    Object(u32),
}

impl Subject {
    fn matches(&self, world: &GridWorld, id: u32) -> bool {
        match *self {
            Subject::Category(c) => world.object(id).category == c,
            Subject::Object(o) => o == id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalCondition {
    InContainer { subject: Subject, container: Subject },
    HasFlag { subject: Subject, flag: Flags },
    Holding { subject: Subject },
}

impl GoalCondition {
    pub fn holds(&self, world: &GridWorld) -> bool {
        match self {
            GoalCondition::InContainer { subject, container } => world.objects.iter().any(|o| {
                subject.matches(world, o.id)
                    && o.container.map(|c| container.matches(world, c)).unwrap_or(false)
            }),
            GoalCondition::HasFlag { subject, flag } => world
                .objects
                .iter()
                .any(|o| subject.matches(world, o.id) && o.flags.contains(*flag)),
            GoalCondition::Holding { subject } => world
                .held
                .map(|h| subject.matches(world, h))
                .unwrap_or(false),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubGoalVerb {
    Find,
    Pickup,
    Place,
    Slice,
    Open,
    Close,
    ToggleOn,
}

impl SubGoalVerb {
    pub const ALL: [SubGoalVerb; 7] = [
        SubGoalVerb::Find,
        SubGoalVerb::Pickup,
        SubGoalVerb::Place,
        SubGoalVerb::Slice,
        SubGoalVerb::Open,
        SubGoalVerb::Close,
        SubGoalVerb::ToggleOn,
    ];

    pub fn word(self) -> &'static str {
        match self {
            SubGoalVerb::Find => "find",
            SubGoalVerb::Pickup => "pickup",
            SubGoalVerb::Place => "place",
            SubGoalVerb::Slice => "slice",
            SubGoalVerb::Open => "open",
            SubGoalVerb::Close => "close",
            SubGoalVerb::ToggleOn => "toggleon",
        }
    }
}

/// A high-level step such as "pickup potato" or "place potato on desk".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubGoal {
    pub verb: SubGoalVerb,
    pub noun1: Category,
    pub noun2: Option<Category>,
}

impl SubGoal {
    pub fn new(verb: SubGoalVerb, noun1: Category) -> SubGoal {
        SubGoal {
            verb,
            noun1,
            noun2: None,
        }
    }

    pub fn place(item: Category, receptacle: Category) -> SubGoal {
        SubGoal {
            verb: SubGoalVerb::Place,
            noun1: item,
            noun2: Some(receptacle),
        }
    }

    /// Category of the object the sub-goal's action is applied to.
    pub fn target(&self) -> Category {
        self.noun2.unwrap_or(self.noun1)
    }

    pub fn nouns(&self) -> impl Iterator<Item = Category> {
        core::iter::once(self.noun1).chain(self.noun2)
    }
}

impl fmt::Display for SubGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.noun2 {
            Some(r) => write!(
                f,
                "{} {} {} {}",
                self.verb.word(),
                self.noun1.noun(),
                r.preposition(),
                r.noun()
            ),
            None => write!(f, "{} {}", self.verb.word(), self.noun1.noun()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid sub-goal {0:?}")]
pub struct ParseSubGoalError(pub String);

impl FromStr for SubGoal {
    type Err = ParseSubGoalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseSubGoalError(s.into());
        let words: Vec<&str> = s.split_whitespace().collect();
        let verb = SubGoalVerb::ALL
            .iter()
            .copied()
            .find(|v| Some(&v.word()) == words.first())
            .ok_or_else(err)?;
        let noun1 = words.get(1).and_then(|w| Category::parse(w)).ok_or_else(err)?;
        match (verb, words.len()) {
            (SubGoalVerb::Place, 4) => {
                let r = Category::parse(words[3]).ok_or_else(err)?;
                if words[2] != r.preposition() {
                    return Err(err());
                }
                Ok(SubGoal::place(noun1, r))
            }
            (SubGoalVerb::Place, _) => Err(err()),
            (_, 2) => Ok(SubGoal::new(verb, noun1)),
            _ => Err(err()),
        }
    }
}

impl Serialize for SubGoal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubGoal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_type: TaskType,
    pub params: Vec<Category>,
    pub goal_conditions: Vec<GoalCondition>,
    pub gold_subgoals: Vec<SubGoal>,
}

impl Task {
    /// The category the task is mostly about; names the span of an empty plan.
    pub fn primary_category(&self) -> Category {
        match self.task_type {
            TaskType::MakeCoffee => Category::Mug,
            _ => self.params[0],
        }
    }
}

pub fn check_goal_conditions(world: &GridWorld, task: &Task) -> Vec<bool> {
    task.goal_conditions.iter().map(|g| g.holds(world)).collect()
}

fn require(world: &GridWorld, c: Category) -> Result<(), WorldError> {
    if world.has_category(c) {
        Ok(())
    } else {
        Err(WorldError::MissingCategory(c))
    }
}

/// Derives goal conditions and the ordered gold sub-goal chain. Sub-goals are
/// emitted only for conditions not already met in `world`.
pub fn compile_task(
    task_type: TaskType,
    params: &[Category],
    world: &GridWorld,
) -> Result<Task, WorldError> {
    use SubGoalVerb::*;
    if params.len() != task_type.arity() {
        return Err(WorldError::TaskInfeasible("wrong number of parameters"));
    }
    for &p in params {
        require(world, p)?;
    }
    let mut goals = Vec::new();
    let mut subgoals = Vec::new();
    match task_type {
        TaskType::PlaceAllXInY => {
            let (item, rec) = (params[0], params[1]);
            if !item.is_pickupable() || !rec.is_furniture() || !rec.accepts(item) {
                return Err(WorldError::TaskInfeasible("receptacle cannot hold the item"));
            }
            let items: Vec<u32> = world.instances(item).map(|o| o.id).collect();
            let target = world
                .instances(rec)
                .find(|r| {
                    let foreign = world
                        .contents_of(r.id)
                        .filter(|o| o.category != item)
                        .count();
                    foreign + items.len() <= rec.capacity()
                })
                .ok_or(WorldError::TaskInfeasible("no receptacle with enough room"))?;
            let mut opened = target.flags.contains(Flags::OPEN);
            for &id in &items {
                let cond = GoalCondition::InContainer {
                    subject: Subject::Object(id),
                    container: Subject::Object(target.id),
                };
                if !cond.holds(world) {
                    subgoals.push(SubGoal::new(Find, item));
                    subgoals.push(SubGoal::new(Pickup, item));
                    subgoals.push(SubGoal::new(Find, rec));
                    if rec.is_openable() && !opened {
                        subgoals.push(SubGoal::new(Open, rec));
                        opened = true;
                    }
                    subgoals.push(SubGoal::place(item, rec));
                }
                goals.push(cond);
            }
        }
        TaskType::SliceX => {
            let item = params[0];
            if !item.is_sliceable() {
                return Err(WorldError::TaskInfeasible("item is not sliceable"));
            }
            require(world, Category::Knife)?;
            let cond = GoalCondition::HasFlag {
                subject: Subject::Category(item),
                flag: Flags::SLICED,
            };
            if !cond.holds(world) {
                subgoals.extend([
                    SubGoal::new(Find, Category::Knife),
                    SubGoal::new(Pickup, Category::Knife),
                    SubGoal::new(Find, item),
                    SubGoal::new(Slice, item),
                ]);
            }
            goals.push(cond);
        }
        TaskType::BoilX => {
            let item = params[0];
            if !item.is_boilable() {
                return Err(WorldError::TaskInfeasible("item cannot be boiled"));
            }
            require(world, Category::Pot)?;
            let cond = GoalCondition::HasFlag {
                subject: Subject::Category(item),
                flag: Flags::BOILED,
            };
            if !cond.holds(world) {
                let pot_on = world
                    .instances(Category::Pot)
                    .any(|p| p.flags.contains(Flags::TOGGLED_ON));
                if !pot_on {
                    subgoals.push(SubGoal::new(Find, Category::Pot));
                    subgoals.push(SubGoal::new(ToggleOn, Category::Pot));
                }
                subgoals.extend([
                    SubGoal::new(Find, item),
                    SubGoal::new(Pickup, item),
                    SubGoal::new(Find, Category::Pot),
                    SubGoal::place(item, Category::Pot),
                ]);
            }
            goals.push(cond);
        }
        TaskType::MakeCoffee | TaskType::CleanX => {
            let (item, appliance) = if task_type == TaskType::MakeCoffee {
                (Category::Mug, Category::CoffeeMachine)
            } else {
                (params[0], Category::Sink)
            };
            if !item.is_pickupable() {
                return Err(WorldError::TaskInfeasible("item cannot be carried"));
            }
            require(world, item)?;
            require(world, appliance)?;
            let inside = GoalCondition::InContainer {
                subject: Subject::Category(item),
                container: Subject::Category(appliance),
            };
            let on = GoalCondition::HasFlag {
                subject: Subject::Category(appliance),
                flag: Flags::TOGGLED_ON,
            };
            if !inside.holds(world) {
                subgoals.extend([
                    SubGoal::new(Find, item),
                    SubGoal::new(Pickup, item),
                    SubGoal::new(Find, appliance),
                    SubGoal::place(item, appliance),
                ]);
            }
            if !on.holds(world) {
                if inside.holds(world) {
                    subgoals.push(SubGoal::new(Find, appliance));
                }
                subgoals.push(SubGoal::new(ToggleOn, appliance));
            }
            goals.push(inside);
            goals.push(on);
        }
    }
    Ok(Task {
        task_type,
        params: params.to_vec(),
        goal_conditions: goals,
        gold_subgoals: subgoals,
    })
}
