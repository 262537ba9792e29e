use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::task::{SubGoal, Task, TaskType};
use crate::lexicon::Category;
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DialogConfig {
    /// Probability that a gold sub-goal is announced as a hint utterance.
    pub hint_rate: f64,
}

impl Default for DialogConfig {
    fn default() -> Self {
        DialogConfig { hint_rate: 0.0 }
    }
}

fn with_article(c: Category) -> String {
    let p = c.phrase();
    let article = match p.as_bytes()[0] {
        b'a' | b'e' | b'i' | b'o' | b'u' => "an",
        _ => "a",
    };
    format!("{article} {p}")
}

/// The task phrase following "please", e.g. "put all salt shakers in one cabinet".
pub fn instruction_phrase(task: &Task) -> String {
    let p = &task.params;
    match task.task_type {
        TaskType::PlaceAllXInY => format!("put all {} in one {}", p[0].plural(), p[1].phrase()),
        TaskType::SliceX => format!("slice {}", with_article(p[0])),
        TaskType::BoilX => format!("boil {}", with_article(p[0])),
        TaskType::MakeCoffee => String::from("make coffee"),
        TaskType::CleanX => format!("clean {}", with_article(p[0])),
    }
}

const HINTS: [&str; 3] = ["you need to {}", "next {}", "then {}"];

/// The instruction followed by optional sub-goal hints, in gold order.
pub fn synthesize_dialog(task: &Task, gold_subgoals: &[SubGoal], seed: u64, cfg: &DialogConfig) -> Vec<String> {
    let mut rng = substream(seed, "dialog");
    let mut out = Vec::with_capacity(1 + gold_subgoals.len());
    out.push(format!("please {}", instruction_phrase(task)));
    for sg in gold_subgoals {
        if cfg.hint_rate > 0.0 && rng.random::<f64>() < cfg.hint_rate {
            let template = HINTS[rng.random_range(0..HINTS.len())];
            out.push(template.replacen("{}", &format!("{sg}"), 1));
        }
    }
    out
}
