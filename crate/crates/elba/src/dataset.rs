//! Line-delimited episode files and the split manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use elba_core::world::{check_goal_conditions, generate_world, Action, Episode, RoomSpec, SplitTag, SubgoalSpan, Task};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub room_spec: RoomSpec,
    pub task: Task,
    pub dialog: Vec<String>,
    pub expert_actions: Vec<Action>,
    pub subgoal_spans: Vec<SubgoalSpan>,
    pub split_tag: SplitTag,
}

impl EpisodeRecord {
    pub fn from_episode(ep: &Episode) -> EpisodeRecord {
        EpisodeRecord {
            schema_version: SCHEMA_VERSION,
            seed: ep.seed,
            room_spec: ep.room_spec.clone(),
            task: ep.task.clone(),
            dialog: ep.dialog.clone(),
            expert_actions: ep.expert_actions.clone(),
            subgoal_spans: ep.subgoal_spans.clone(),
            split_tag: ep.split_tag,
        }
    }

    /// Rebuilds the start world and checks that the demonstration solves the task.
    pub fn into_episode(self) -> Result<Episode> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {}", self.schema_version);
        }
        let world0 = generate_world(self.seed, &self.room_spec)?;
        let covered = self.subgoal_spans.last().map(|s| s.end);
        if self.subgoal_spans.is_empty() || covered != Some(self.expert_actions.len()) {
            bail!("sub-goal spans do not cover the expert actions of episode {}", self.seed);
        }
        let ep = Episode {
            seed: self.seed,
            room_spec: self.room_spec,
            world0,
            task: self.task,
            dialog: self.dialog,
            expert_actions: self.expert_actions,
            subgoal_spans: self.subgoal_spans,
            split_tag: self.split_tag,
        };
        let end = ep.replay_worlds().pop().expect("replay includes the start world");
        if !check_goal_conditions(&end, &ep.task).iter().all(|&b| b) {
            bail!("expert actions of episode {} do not reach the goal", ep.seed);
        }
        Ok(ep)
    }
}

pub fn split_path(dir: &Path, tag: SplitTag) -> std::path::PathBuf {
    dir.join(format!("{}.jsonl", tag.name()))
}

pub fn encode_episodes(episodes: &[Episode]) -> Result<String> {
    let mut s = String::new();
    for ep in episodes {
        s.push_str(&serde_json::to_string(&EpisodeRecord::from_episode(ep))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn decode_episodes(text: &str) -> Result<Vec<Episode>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: EpisodeRecord = serde_json::from_str(l).with_context(|| format!("line {}", i + 1))?;
            rec.into_episode().with_context(|| format!("line {}", i + 1))
        })
        .collect()
}

pub fn read_split(dir: &Path, tag: SplitTag) -> Result<Vec<Episode>> {
    let path = split_path(dir, tag);
    let text = fs::read_to_string(&path).with_context(|| format!("reading dataset {}", path.display()))?;
    let eps = decode_episodes(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(bad) = eps.iter().find(|e| e.split_tag != tag) {
        bail!("episode {} in {} is tagged {}", bad.seed, path.display(), bad.split_tag.name());
    }
    Ok(eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub splits: BTreeMap<String, SplitEntry>,
    /// Layouts held out of every split except test_unseen.
    pub unseen_layouts: usize,
    pub layouts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub file: String,
    pub episodes: usize,
    pub sha256: String,
}

pub fn layout_counts(episodes: &[Episode]) -> (usize, usize) {
    let mut all: Vec<&RoomSpec> = episodes.iter().map(|e| &e.room_spec).collect();
    all.sort();
    all.dedup();
    let mut unseen: Vec<&RoomSpec> = episodes
        .iter()
        .filter(|e| e.split_tag == SplitTag::TestUnseen)
        .map(|e| &e.room_spec)
        .collect();
    unseen.sort();
    unseen.dedup();
    (all.len(), unseen.len())
}
