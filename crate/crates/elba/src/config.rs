//! Run configuration: flat dotted keys with file and `--set` overrides.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use elba_core::actioner::BcConfig;
use elba_core::agent::{AgentConfig, QaArm};
use elba_core::metrics::AblationKind;
use elba_core::nn::TrainConfig;
use elba_core::planner::PlannerConfig;
use elba_core::qaeval::QaEvalConfig;
use elba_core::world::{DatasetConfig, DialogConfig, SplitRatios, SplitTag};
use elba_core::{ActionerConfig, ConfusionConfig};

pub const SEED_ENV: &str = "ELBA_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_layouts: usize,
    pub episodes_per_layout: usize,
    pub min_size: u32,
    pub max_size: u32,
    pub hint_rate: f64,
    pub ratios: SplitRatios,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionerSection {
    pub embed: usize,
    pub d: usize,
    pub window: usize,
    pub head_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub qa_episode_rate: f64,
    pub qa_step_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub max_len: usize,
    pub rollout_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaEvalSection {
    pub token_embed: usize,
    pub e: usize,
    pub state_hidden: usize,
    pub tau_init: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Every n-th expert step yields a training pair.
    pub pair_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub qa_mode: QaArm,
    pub k: usize,
    pub candidate_cap: usize,
    pub horizon: usize,
    pub malform_rate: f64,
    pub tau_sample: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub splits: Vec<String>,
    pub arms: Vec<String>,
    pub n_seeds: usize,
    /// Zero evaluates every episode of a split.
    pub max_episodes: usize,
    pub write_trajectories: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub kind: String,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub actioner: ActionerSection,
    pub planner: PlannerSection,
    pub qaeval: QaEvalSection,
    pub agent: AgentSection,
    pub confusion: ConfusionConfig,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

/// Evaluation arms and the agent configuration each one runs.
pub const EVAL_ARMS: [&str; 5] = ["baseline", "elba_e", "elba_g", "elba_f", "elba"];

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetConfig::default();
        let bc = BcConfig::default();
        let planner = PlannerConfig::default();
        let qa = QaEvalConfig::default();
        let agent = AgentConfig::default();
        RunConfig {
            seed: 0,
            data: DataSection {
                n_layouts: data.n_layouts,
                episodes_per_layout: data.episodes_per_layout,
                min_size: data.min_size,
                max_size: data.max_size,
                hint_rate: data.dialog.hint_rate,
                ratios: data.ratios,
            },
            actioner: ActionerSection {
                embed: bc.model.embed,
                d: bc.model.d,
                window: bc.model.window,
                head_hidden: bc.model.head_hidden,
                lr: bc.train.learning_rate,
                batch_size: bc.train.batch_size,
                epochs: bc.train.epochs,
                clip_norm: bc.train.clip_norm,
                qa_episode_rate: bc.qa_episode_rate,
                qa_step_rate: bc.qa_step_rate,
            },
            planner: PlannerSection {
                hidden: planner.hidden,
                lr: planner.train.learning_rate,
                batch_size: planner.train.batch_size,
                epochs: planner.train.epochs,
                clip_norm: planner.train.clip_norm,
                max_len: planner.max_len,
                rollout_cap: planner.rollout_cap,
            },
            qaeval: QaEvalSection {
                token_embed: qa.token_embed,
                e: qa.e,
                state_hidden: qa.state_hidden,
                tau_init: qa.tau_init,
                lr: qa.train.learning_rate,
                batch_size: qa.train.batch_size,
                epochs: qa.train.epochs,
                clip_norm: qa.train.clip_norm,
                pair_stride: 4,
            },
            agent: AgentSection {
                qa_mode: agent.qa_mode,
                k: agent.k,
                candidate_cap: agent.candidate_cap,
                horizon: agent.horizon,
                malform_rate: agent.malform_rate,
                tau_sample: agent.tau_sample,
            },
            confusion: agent.confusion,
            eval: EvalSection {
                splits: vec!["test_seen".into(), "test_unseen".into()],
                arms: vec!["baseline".into(), "elba_e".into(), "elba_g".into()],
                n_seeds: 3,
                max_episodes: 0,
                write_trajectories: true,
            },
            ablate: AblateSection {
                kind: "question_type".into(),
                split: "test_seen".into(),
            },
        }
    }
}

fn train_config(lr: f64, batch_size: usize, epochs: usize, clip_norm: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size,
        epochs,
        seed,
        clip_norm,
        ..TrainConfig::default()
    }
}

/// Keys whose values define the produced data.
pub const DATA_SCOPE: &[&str] = &["seed", "data"];
pub const ACTIONER_SCOPE: &[&str] = &["seed", "data", "actioner"];
pub const PLANNER_SCOPE: &[&str] = &["seed", "data", "planner"];
pub const QAEVAL_SCOPE: &[&str] = &["seed", "data", "actioner", "qaeval"];
/// Keys that determine one metrics row given its split.
pub const RESULT_SCOPE: &[&str] = &[
    "seed",
    "data",
    "actioner",
    "planner",
    "qaeval",
    "agent",
    "confusion",
    "eval.n_seeds",
    "eval.max_episodes",
];

impl RunConfig {
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            n_layouts: self.data.n_layouts,
            episodes_per_layout: self.data.episodes_per_layout,
            min_size: self.data.min_size,
            max_size: self.data.max_size,
            dialog: DialogConfig {
                hint_rate: self.data.hint_rate,
            },
            ratios: self.data.ratios,
        }
    }

    pub fn bc(&self) -> BcConfig {
        let a = &self.actioner;
        BcConfig {
            model: ActionerConfig {
                embed: a.embed,
                d: a.d,
                window: a.window,
                head_hidden: a.head_hidden,
                seed: self.seed,
            },
            train: train_config(a.lr, a.batch_size, a.epochs, a.clip_norm, self.seed),
            qa_episode_rate: a.qa_episode_rate,
            qa_step_rate: a.qa_step_rate,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let p = &self.planner;
        PlannerConfig {
            hidden: p.hidden,
            train: train_config(p.lr, p.batch_size, p.epochs, p.clip_norm, self.seed),
            max_len: p.max_len,
            rollout_cap: p.rollout_cap,
        }
    }

    pub fn qaeval_config(&self) -> QaEvalConfig {
        let q = &self.qaeval;
        QaEvalConfig {
            token_embed: q.token_embed,
            e: q.e,
            state_hidden: q.state_hidden,
            tau_init: q.tau_init,
            tau_sample: self.agent.tau_sample,
            k: self.agent.k,
            train: train_config(q.lr, q.batch_size, q.epochs, q.clip_norm, self.seed),
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            confusion: self.confusion,
            qa_mode: a.qa_mode,
            k: a.k,
            candidate_cap: a.candidate_cap,
            horizon: a.horizon,
            seed: self.seed,
            malform_rate: a.malform_rate,
            tau_sample: a.tau_sample,
        }
    }

    /// The same run with the agent and confusion sections taken from `cfg`.
    pub fn with_agent(&self, cfg: &AgentConfig) -> RunConfig {
        let mut out = self.clone();
        out.confusion = cfg.confusion;
        out.agent = AgentSection {
            qa_mode: cfg.qa_mode,
            k: cfg.k,
            candidate_cap: cfg.candidate_cap,
            horizon: cfg.horizon,
            malform_rate: cfg.malform_rate,
            tau_sample: cfg.tau_sample,
        };
        out
    }

    /// Agent configuration of a named evaluation arm.
    pub fn arm_config(&self, arm: &str) -> Result<AgentConfig> {
        let base = self.agent_config();
        let mut c = base;
        match arm {
            "baseline" => c.qa_mode = QaArm::None,
            "elba_e" => c.confusion.mode = elba_core::ConfusionMode::Entropy,
            "elba_g" => c.confusion.mode = elba_core::ConfusionMode::Gradient,
            "elba_f" => c.confusion.mode = elba_core::ConfusionMode::Fixed,
            "elba" => {}
            other => bail!("unknown eval arm {other:?}; expected one of {EVAL_ARMS:?}"),
        }
        if arm != "baseline" && c.qa_mode == QaArm::None {
            c.qa_mode = QaArm::Oracle;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let r = &self.data.ratios;
        if ![r.train, r.valid, r.test_seen, r.test_unseen].iter().all(|x| x.is_finite() && *x >= 0.0) {
            bail!("data.ratios must be finite and non-negative");
        }
        if !unit(self.data.hint_rate) {
            bail!("data.hint_rate must lie in [0, 1]");
        }
        if self.seed > i64::MAX as u64 {
            bail!("seed must not exceed {}", i64::MAX);
        }
        let a = &self.actioner;
        for (name, lr, bs, epochs) in [
            ("actioner", a.lr, a.batch_size, a.epochs),
            ("planner", self.planner.lr, self.planner.batch_size, self.planner.epochs),
            ("qaeval", self.qaeval.lr, self.qaeval.batch_size, self.qaeval.epochs),
        ] {
            if !(lr > 0.0 && lr.is_finite()) || bs == 0 || epochs == 0 {
                bail!("{name}: lr must be positive and batch_size, epochs at least 1");
            }
        }
        if a.embed == 0 || a.d == 0 || a.window == 0 || a.head_hidden == 0 {
            bail!("actioner dimensions must be positive");
        }
        if !unit(a.qa_episode_rate) || !unit(a.qa_step_rate) {
            bail!("actioner qa rates must lie in [0, 1]");
        }
        if self.planner.hidden == 0 || self.planner.max_len == 0 {
            bail!("planner.hidden and planner.max_len must be positive");
        }
        let q = &self.qaeval;
        if q.token_embed == 0 || q.e == 0 || q.state_hidden == 0 || q.pair_stride == 0 || q.tau_init <= 0.0 {
            bail!("qaeval dimensions, pair_stride and tau_init must be positive");
        }
        if !self.agent_config().is_valid() {
            bail!("invalid agent or confusion settings");
        }
        if self.eval.n_seeds == 0 {
            bail!("eval.n_seeds must be at least 1");
        }
        for s in self.eval.splits.iter().chain([&self.ablate.split]) {
            if SplitTag::parse(s).is_none() {
                bail!("unknown split {s:?}");
            }
        }
        if self.eval.arms.is_empty() {
            bail!("eval.arms must not be empty");
        }
        for arm in &self.eval.arms {
            self.arm_config(arm)?;
        }
        if AblationKind::parse(&self.ablate.kind).is_none() {
            bail!("unknown ablate.kind {:?}", self.ablate.kind);
        }
        Ok(())
    }

    fn flat(&self) -> BTreeMap<String, Value> {
        let v = Value::try_from(self).expect("config serializes");
        let mut out = BTreeMap::new();
        flatten("", v, &mut out);
        out
    }

    /// One `key = value` line per leaf, sorted by key.
    pub fn to_flat_toml(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.flat() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Hex sha256 over the keys under the given prefixes.
    pub fn scoped_hash(&self, scope: &[&str]) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.flat() {
            if scope.iter().any(|p| k == *p || k.starts_with(&format!("{p}."))) {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn result_hash(&self) -> String {
        self.scoped_hash(RESULT_SCOPE)
    }
}

fn flatten(prefix: &str, v: Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf);
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = toml::Table::new();
    for (k, v) in flat {
        let parts: Vec<&str> = k.split('.').collect();
        let mut t = &mut root;
        for p in &parts[..parts.len() - 1] {
            t = t
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("config keys nest consistently");
        }
        t.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Table(root)
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

fn assign(flat: &mut BTreeMap<String, Value>, key: &str, value: Value) -> Result<()> {
    let slot = flat.get_mut(key).ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
    let value = match (&*slot, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::Array(_), Value::String(s)) => {
            Value::Array(s.split(',').filter(|p| !p.is_empty()).map(|p| Value::String(p.trim().into())).collect())
        }
        (_, v) => v,
    };
    if std::mem::discriminant(&*slot) != std::mem::discriminant(&value) {
        bail!("config key {key:?} expects a {}, got a {}", type_name(slot), type_name(&value));
    }
    *slot = value;
    Ok(())
}

fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("override {raw:?} is not of the form key=value"))?;
    let k = k.trim();
    let v = v.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), parsed))
}

/// Defaults, then `ELBA_SEED`, then the config file, then `--set` overrides.
pub fn resolve(file_text: Option<&str>, overrides: &[String], env_seed: Option<&str>) -> Result<RunConfig> {
    let mut flat = RunConfig::default().flat();
    if let Some(s) = env_seed {
        let seed: i64 = s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not a seed"))?;
        assign(&mut flat, "seed", Value::Integer(seed))?;
    }
    if let Some(text) = file_text {
        let table: toml::Table = toml::from_str(text).context("parsing config file")?;
        let mut file_flat = BTreeMap::new();
        flatten("", Value::Table(table), &mut file_flat);
        for (k, v) in file_flat {
            assign(&mut flat, &k, v)?;
        }
    }
    for raw in overrides {
        let (k, v) = parse_override(raw)?;
        assign(&mut flat, &k, v)?;
    }
    let cfg: RunConfig = unflatten(&flat).try_into().context("config values out of range")?;
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves using the process environment for the seed default.
pub fn resolve_with_env(file_text: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let env = std::env::var(SEED_ENV).ok();
    resolve(file_text, overrides, env.as_deref())
}
