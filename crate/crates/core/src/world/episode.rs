use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::action::Action;
use super::dialog::{synthesize_dialog, DialogConfig};
use super::expert::{expert_rollout, SubgoalSpan};
use super::grid::{generate_world, GridWorld, RoomSpec};
use super::task::{compile_task, SubGoal, Task, TaskType};
use super::WorldError;
use crate::lexicon::Category;
use crate::rng::{derive_seed, substream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Valid,
    TestSeen,
    TestUnseen,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [SplitTag::Train, SplitTag::Valid, SplitTag::TestSeen, SplitTag::TestUnseen];

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::TestSeen => "test_seen",
            SplitTag::TestUnseen => "test_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<SplitTag> {
        SplitTag::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub room_spec: RoomSpec,
    pub world0: GridWorld,
    pub task: Task,
    pub dialog: Vec<String>,
    pub expert_actions: Vec<Action>,
    pub subgoal_spans: Vec<SubgoalSpan>,
    pub split_tag: SplitTag,
}

impl Episode {
    /// Index of the span covering step `t`; steps past the end map to the last span.
    pub fn active_span_index(&self, t: usize) -> usize {
        self.subgoal_spans
            .iter()
            .position(|s| t < s.end)
            .unwrap_or(self.subgoal_spans.len() - 1)
    }

    pub fn active_subgoal(&self, t: usize) -> SubGoal {
        self.subgoal_spans[self.active_span_index(t)].subgoal
    }

    /// World before each expert action, followed by the final world.
    pub fn replay_worlds(&self) -> Vec<GridWorld> {
        let mut out = Vec::with_capacity(self.expert_actions.len() + 1);
        out.push(self.world0.clone());
        for a in &self.expert_actions {
            let next = super::dynamics::step(out.last().unwrap(), a).0;
            out.push(next);
        }
        out
    }

    /// Sub-goals from the one active at step `t` to the end of the plan.
    pub fn remaining_subgoals(&self, t: usize) -> Vec<SubGoal> {
        self.subgoal_spans[self.active_span_index(t)..]
            .iter()
            .map(|s| s.subgoal)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test_seen: f64,
    pub test_unseen: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 5.0,
            valid: 1.0,
            test_seen: 3.0,
            test_unseen: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_layouts: usize,
    pub episodes_per_layout: usize,
    pub min_size: u32,
    pub max_size: u32,
    pub dialog: DialogConfig,
    pub ratios: SplitRatios,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            n_layouts: 30,
            episodes_per_layout: 50,
            min_size: 8,
            max_size: 11,
            dialog: DialogConfig { hint_rate: 0.0 },
            ratios: SplitRatios::default(),
        }
    }
}

fn candidate_tasks(world: &GridWorld) -> Vec<(TaskType, Vec<Category>)> {
    let has = |c| world.has_category(c);
    let mut out = Vec::new();
    for item in Category::ITEMS {
        for rec in [Category::Cabinet, Category::Countertop, Category::Table, Category::Desk, Category::Sink] {
            if has(item) && has(rec) && rec.accepts(item) {
                out.push((TaskType::PlaceAllXInY, alloc::vec![item, rec]));
            }
        }
        if has(item) && item.is_sliceable() && has(Category::Knife) {
            out.push((TaskType::SliceX, alloc::vec![item]));
        }
        if has(item) && item.is_boilable() && has(Category::Pot) {
            out.push((TaskType::BoilX, alloc::vec![item]));
        }
        if has(item) && Category::Sink.accepts(item) && has(Category::Sink) && item != Category::Knife {
            out.push((TaskType::CleanX, alloc::vec![item]));
        }
    }
    if has(Category::Mug) && has(Category::CoffeeMachine) {
        out.push((TaskType::MakeCoffee, alloc::vec![]));
    }
    out
}

/// Instantiates the world, draws a feasible task and records the expert demonstration.
pub fn build_episode(seed: u64, spec: &RoomSpec, dialog: &DialogConfig) -> Result<Episode, WorldError> {
    let world0 = generate_world(seed, spec)?;
    let mut tried = candidate_tasks(&world0);
    let mut rng = substream(seed, "episode/task");
    while !tried.is_empty() {
        // Uniform over task types first so frequent parameterizations do not dominate.
        let mut types: Vec<TaskType> = tried.iter().map(|(t, _)| *t).collect();
        types.dedup();
        types.sort_by_key(|t| t.index());
        types.dedup();
        let ty = types[rng.random_range(0..types.len())];
        let of_type: Vec<usize> = (0..tried.len()).filter(|&i| tried[i].0 == ty).collect();
        let pick = of_type[rng.random_range(0..of_type.len())];
        let (task_type, params) = tried.remove(pick);
        let Ok(task) = compile_task(task_type, &params, &world0) else {
            continue;
        };
        if task.gold_subgoals.is_empty() {
            continue;
        }
        let Ok((expert_actions, subgoal_spans)) = expert_rollout(&world0, &task) else {
            continue;
        };
        let dialog = synthesize_dialog(&task, &task.gold_subgoals, seed, dialog);
        return Ok(Episode {
            seed,
            room_spec: spec.clone(),
            world0,
            task,
            dialog,
            expert_actions,
            subgoal_spans,
            split_tag: SplitTag::Train,
        });
    }
    Err(WorldError::TaskInfeasible("no feasible task for this room"))
}

/// Room layouts with randomized size, interior walls and contents.
pub fn generate_layouts(cfg: &DatasetConfig) -> Vec<RoomSpec> {
    (0..cfg.n_layouts)
        .map(|i| {
            let mut rng = substream(cfg.seed, &format!("layout/{i}"));
            let width = rng.random_range(cfg.min_size..=cfg.max_size);
            let height = rng.random_range(cfg.min_size..=cfg.max_size);
            let wall_segments = rng.random_range(0..=2);
            let layout_seed = derive_seed(cfg.seed, &format!("layout_seed/{i}"));
            let mut contents = Vec::new();
            let mut add = |c: Category, n: u32| {
                if n > 0 {
                    contents.push((c, n));
                }
            };
            add(Category::Countertop, rng.random_range(1..=2));
            add(Category::Table, 1);
            add(Category::Desk, rng.random_range(0..=1));
            add(Category::Cabinet, rng.random_range(1..=2));
            add(Category::Sink, rng.random_bool(0.8) as u32);
            add(Category::CoffeeMachine, rng.random_bool(0.7) as u32);
            add(Category::Pot, rng.random_bool(0.7) as u32);
            add(Category::Potato, rng.random_range(1..=2));
            add(Category::Apple, rng.random_range(0..=1));
            add(Category::Tomato, rng.random_range(0..=1));
            add(Category::Bread, rng.random_range(0..=1));
            add(Category::Knife, 1);
            add(Category::Mug, 1);
            add(Category::SaltShaker, rng.random_range(1..=3));
            add(Category::Sponge, rng.random_range(0..=1));
            RoomSpec {
                width,
                height,
                wall_segments,
                layout_seed,
                contents,
            }
        })
        .collect()
}

/// Generates every layout's episodes and assigns split tags.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Episode>, WorldError> {
    if cfg.min_size > cfg.max_size {
        return Err(WorldError::SpecInfeasible("min_size exceeds max_size"));
    }
    let mut episodes = Vec::new();
    for (i, spec) in generate_layouts(cfg).iter().enumerate() {
        for j in 0..cfg.episodes_per_layout {
            let mut built = None;
            for attempt in 0..4 {
                let seed = derive_seed(cfg.seed, &format!("episode/{i}/{j}/{attempt}"));
                match build_episode(seed, spec, &cfg.dialog) {
                    Ok(ep) => {
                        built = Some(ep);
                        break;
                    }
                    Err(e @ WorldError::SpecInfeasible(_)) => return Err(e),
                    Err(_) => {}
                }
            }
            if let Some(ep) = built {
                episodes.push(ep);
            }
        }
    }
    make_splits(episodes, cfg.seed, &cfg.ratios)
}

fn round_share(n: usize, part: f64, total: f64) -> usize {
    if total <= 0.0 {
        return 0;
    }
    libm::round(n as f64 * part / total) as usize
}

/// Whole layouts go to `test_unseen`; the remaining episodes are shuffled
/// into train, valid and test_seen by the given ratios.
pub fn make_splits(mut episodes: Vec<Episode>, seed: u64, ratios: &SplitRatios) -> Result<Vec<Episode>, WorldError> {
    let mut layouts: Vec<RoomSpec> = episodes.iter().map(|e| e.room_spec.clone()).collect();
    layouts.sort();
    layouts.dedup();
    if layouts.len() < 4 {
        return Err(WorldError::TooFewRooms(layouts.len()));
    }
    let total = ratios.train + ratios.valid + ratios.test_seen + ratios.test_unseen;
    let n_unseen = round_share(layouts.len(), ratios.test_unseen, total).clamp(1, layouts.len() - 1);
    layouts.shuffle(&mut substream(seed, "split/layouts"));
    let unseen: BTreeMap<RoomSpec, ()> = layouts[..n_unseen].iter().map(|l| (l.clone(), ())).collect();

    let mut seen_idx = Vec::new();
    for (i, e) in episodes.iter_mut().enumerate() {
        if unseen.contains_key(&e.room_spec) {
            e.split_tag = SplitTag::TestUnseen;
        } else {
            seen_idx.push(i);
        }
    }
    seen_idx.shuffle(&mut substream(seed, "split/episodes"));
    let seen_total = ratios.train + ratios.valid + ratios.test_seen;
    let m = seen_idx.len();
    let n_valid = round_share(m, ratios.valid, seen_total);
    let n_test = round_share(m, ratios.test_seen, seen_total).min(m - n_valid.min(m));
    for (rank, &i) in seen_idx.iter().enumerate() {
        episodes[i].split_tag = if rank < n_valid {
            SplitTag::Valid
        } else if rank < n_valid + n_test {
            SplitTag::TestSeen
        } else {
            SplitTag::Train
        };
    }
    Ok(episodes)
}
