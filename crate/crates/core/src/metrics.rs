//! Success and goal-condition metrics, trajectory-length weighting, arm and ablation drivers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent::{count_stats, run_episode, AgentConfig, AgentError, Models, QaArm, Trajectory};
use crate::confusion::ConfusionMode;
use crate::math::order_invariant_sum;
use crate::qagen::QaType;
use crate::world::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("trajectory lengths must be at least 1 (reference {reference}, inferred {inferred})")]
    InvalidLength { reference: usize, inferred: usize },
    #[error("nothing to aggregate")]
    Empty,
}

pub fn task_success(traj: &Trajectory) -> u8 {
    u8::from(traj.goal_flags.iter().all(|&b| b))
}

pub fn goal_condition_rate(traj: &Trajectory) -> f64 {
    if traj.goal_flags.is_empty() {
        return 0.0;
    }
    traj.goal_flags.iter().filter(|&&b| b).count() as f64 / traj.goal_flags.len() as f64
}

/// `value * |L| / max(|L|, |L^|)`.
pub fn tlw(value: f64, reference: usize, inferred: usize) -> Result<f64, MetricsError> {
    if reference == 0 || inferred == 0 {
        return Err(MetricsError::InvalidLength { reference, inferred });
    }
    if inferred <= reference {
        return Ok(value);
    }
    Ok(value * reference as f64 / inferred as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arm: String,
    pub split: String,
    /// `None` for an aggregate over seeds.
    pub seed: Option<u64>,
    pub sr: f64,
    pub sr_tlw: f64,
    pub gc: f64,
    pub gc_tlw: f64,
    pub mean_q: f64,
    pub std_q: f64,
    pub n_episodes: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricsReport>,
}

impl MetricsReport {
    pub fn is_consistent(&self) -> bool {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        unit(self.sr)
            && unit(self.gc)
            && unit(self.sr_tlw)
            && unit(self.gc_tlw)
            && self.sr_tlw <= self.sr + 1e-12
            && self.gc_tlw <= self.gc + 1e-12
    }
}

/// Per-episode averages over one seed's trajectories.
pub fn report_from_trajectories(
    arm: &str,
    split: &str,
    seed: u64,
    trajs: &[Trajectory],
) -> Result<MetricsReport, MetricsError> {
    if trajs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = trajs.len() as f64;
    let mut sr = Vec::with_capacity(trajs.len());
    let mut sr_w = Vec::with_capacity(trajs.len());
    let mut gc = Vec::with_capacity(trajs.len());
    let mut gc_w = Vec::with_capacity(trajs.len());
    for t in trajs {
        let s = task_success(t) as f64;
        let g = goal_condition_rate(t);
        let steps = t.steps.len().max(1);
        sr.push(s);
        gc.push(g);
        sr_w.push(tlw(s, t.expert_len, steps)?);
        gc_w.push(tlw(g, t.expert_len, steps)?);
    }
    let counts: Vec<usize> = trajs.iter().map(|t| t.questions_asked).collect();
    let (mean_q, std_q) = count_stats(&counts).ok_or(MetricsError::Empty)?;
    Ok(MetricsReport {
        arm: String::from(arm),
        split: String::from(split),
        seed: Some(seed),
        sr: order_invariant_sum(&sr) / n,
        sr_tlw: order_invariant_sum(&sr_w) / n,
        gc: order_invariant_sum(&gc) / n,
        gc_tlw: order_invariant_sum(&gc_w) / n,
        mean_q,
        std_q,
        n_episodes: trajs.len(),
        seeds: Vec::from([seed]),
        per_seed: Vec::new(),
    })
}

/// Arithmetic mean of per-seed reports; the sub-reports are kept.
pub fn mean_of_reports(per_seed: Vec<MetricsReport>) -> Result<MetricsReport, MetricsError> {
    let first = per_seed.first().ok_or(MetricsError::Empty)?;
    let n = per_seed.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| order_invariant_sum(&per_seed.iter().map(f).collect::<Vec<_>>()) / n;
    Ok(MetricsReport {
        arm: first.arm.clone(),
        split: first.split.clone(),
        seed: None,
        sr: avg(|r| r.sr),
        sr_tlw: avg(|r| r.sr_tlw),
        gc: avg(|r| r.gc),
        gc_tlw: avg(|r| r.gc_tlw),
        mean_q: avg(|r| r.mean_q),
        std_q: avg(|r| r.std_q),
        n_episodes: first.n_episodes,
        seeds: per_seed.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        per_seed,
    })
}

/// Seeds for `n` repetitions derived from a base seed.
pub fn arm_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Runs every episode under each seed sequentially and aggregates.
pub fn run_arm(
    arm: &str,
    split: &str,
    episodes: &[Episode],
    models: &Models,
    cfg: &AgentConfig,
    seeds: &[u64],
) -> Result<(MetricsReport, Vec<Vec<Trajectory>>), ArmError> {
    if episodes.is_empty() || seeds.is_empty() {
        return Err(ArmError::Metrics(MetricsError::Empty));
    }
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for &seed in seeds {
        let c = AgentConfig { seed, ..*cfg };
        let trajs = episodes
            .iter()
            .map(|ep| run_episode(models, ep, &c))
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(report_from_trajectories(arm, split, seed, &trajs)?);
        all.push(trajs);
    }
    Ok((mean_of_reports(reports)?, all))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArmError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    QuestionType,
    Timing,
    Thresholds,
    KSweep,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::QuestionType,
        AblationKind::Timing,
        AblationKind::Thresholds,
        AblationKind::KSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::QuestionType => "question_type",
            AblationKind::Timing => "timing",
            AblationKind::Thresholds => "thresholds",
            AblationKind::KSweep => "k_sweep",
        }
    }

    pub fn parse(s: &str) -> Option<AblationKind> {
        AblationKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

pub const TIMING_PERIODS: [usize; 4] = [1, 3, 5, 10];
pub const ENTROPY_GRID: [f64; 3] = [0.7, 0.9, 1.1];
pub const GRADIENT_GRID: [f64; 3] = [0.8, 1.2, 1.6];
pub const K_GRID: [usize; 4] = [1, 3, 5, 8];

/// A labelled configuration in an ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub cfg: AgentConfig,
}

fn cell(label: String, cfg: AgentConfig) -> Cell {
    Cell { label, cfg }
}

/// The grid for one ablation kind, built around `base`.
pub fn ablation_cells(kind: AblationKind, base: &AgentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    match kind {
        AblationKind::QuestionType => {
            for arm in QaArm::ALL {
                out.push(cell(format!("qa={}", arm.name()), AgentConfig { qa_mode: arm, ..*base }));
            }
        }
        AblationKind::Timing => {
            for p in TIMING_PERIODS {
                let mut c = *base;
                c.confusion.mode = ConfusionMode::Fixed;
                c.confusion.fixed_period = p;
                out.push(cell(format!("fixed/{p}"), c));
            }
            out.push(cell(format!("confusion/{}", base.confusion.mode.name()), *base));
        }
        AblationKind::Thresholds => {
            for ea in ENTROPY_GRID {
                for eo in ENTROPY_GRID {
                    let mut c = *base;
                    c.confusion.mode = ConfusionMode::Entropy;
                    c.confusion.entropy_action_threshold = ea;
                    c.confusion.entropy_object_threshold = eo;
                    out.push(cell(format!("entropy/{ea}/{eo}"), c));
                }
            }
            for always in [false, true] {
                for eg in GRADIENT_GRID {
                    let mut c = *base;
                    c.confusion.mode = ConfusionMode::Gradient;
                    c.confusion.grad_norm_threshold = eg;
                    c.confusion.grad_includes_object_always = always;
                    let tag = if always { "/object_always" } else { "" };
                    out.push(cell(format!("gradient/{eg}{tag}"), c));
                }
            }
        }
        AblationKind::KSweep => {
            for k in K_GRID {
                out.push(cell(format!("k={k}"), AgentConfig { k, ..*base }));
            }
        }
    }
    out
}

/// Mean over episodes of the per-type committed-question count divided by
/// trajectory length, in `QaType::ALL` order.
pub fn question_type_distribution(trajs: &[Trajectory]) -> [f64; 6] {
    let mut per_type: [Vec<f64>; 6] = Default::default();
    for t in trajs {
        let len = t.steps.len().max(1) as f64;
        let mut counts = [0usize; 6];
        for s in &t.steps {
            for a in s.committed() {
                let i = QaType::ALL.iter().position(|&q| q == a.pair.qa_type).expect("listed type");
                counts[i] += 1;
            }
        }
        for (acc, c) in per_type.iter_mut().zip(counts) {
            acc.push(c as f64 / len);
        }
    }
    let n = trajs.len().max(1) as f64;
    let mut out = [0.0; 6];
    for (o, v) in out.iter_mut().zip(&per_type) {
        *o = order_invariant_sum(v) / n;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub report: MetricsReport,
    /// Only filled for the question-type ablation.
    pub type_distribution: Option<[f64; 6]>,
}

/// Runs one ablation sequentially: one report per cell.
pub fn run_ablation(
    kind: AblationKind,
    split: &str,
    episodes: &[Episode],
    models: &Models,
    base: &AgentConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, ArmError> {
    let mut rows = Vec::new();
    for c in ablation_cells(kind, base) {
        let (report, trajs) = run_arm(&c.label, split, episodes, models, &c.cfg, seeds)?;
        let type_distribution = (kind == AblationKind::QuestionType).then(|| {
            let flat: Vec<Trajectory> = trajs.into_iter().flatten().collect();
            question_type_distribution(&flat)
        });
        rows.push(AblationRow {
            label: c.label,
            report,
            type_distribution,
        });
    }
    Ok(rows)
}
