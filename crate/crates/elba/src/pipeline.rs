//! The pipeline stages behind each subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use elba_core::actioner::{action_accuracy, bc_examples, train_bc, BcConfig, BcProgress};
use elba_core::agent::run_episode;
use elba_core::metrics::{
    ablation_cells, arm_seeds, mean_of_reports, question_type_distribution, report_from_trajectories, AblationKind,
    MetricsReport,
};
use elba_core::planner::{mid_episode_rouge, rouge_l, train_planner};
use elba_core::qaeval::{retrieval_accuracy, train_contrastive, training_pairs};
use elba_core::text::tokenize;
use elba_core::world::{generate_dataset, SplitTag, WorldError};
use elba_core::{AgentConfig, Episode, Models, Trajectory, Vocab};

use crate::config::{RunConfig, ACTIONER_SCOPE, DATA_SCOPE, PLANNER_SCOPE, QAEVAL_SCOPE};
use crate::dataset::{encode_episodes, layout_counts, read_split, split_path, DataManifest, SplitEntry, SCHEMA_VERSION};
use crate::io::{display_rel, under, write_file};
use crate::models::{self, expect_hash, load_actioner, load_planner, load_qaeval, ManifestInfo, ModelFiles};
use crate::report::{rows_for, type_map, write_report, Summary};
use crate::trajlog;

/// Directory layout under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Layout {
        Layout { out: out.to_path_buf() }
    }

    pub fn data(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn models(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn eval(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn ablate(&self) -> PathBuf {
        self.out.join("ablate")
    }

    pub fn report(&self) -> PathBuf {
        self.out.join("report")
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.data().join("manifest.json")
    }

    pub fn model(&self, component: &'static str) -> ModelFiles {
        ModelFiles::new(&self.models(), component)
    }
}

fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(path, cfg.to_flat_toml().as_bytes())
}

fn note(layout: &Layout, path: &Path, what: &str) {
    eprintln!("wrote {} ({what})", display_rel(&layout.out, path));
}

pub fn cmd_gen(cfg: &RunConfig, layout: &Layout) -> Result<DataManifest> {
    let episodes = generate_dataset(&cfg.dataset()).map_err(|e| match e {
        WorldError::SpecInfeasible(msg) => anyhow!("SpecInfeasible: {msg}"),
        other => anyhow!(other),
    })?;
    let dir = layout.data();
    let mut splits = BTreeMap::new();
    for tag in SplitTag::ALL {
        let part: Vec<Episode> = episodes.iter().filter(|e| e.split_tag == tag).cloned().collect();
        let text = encode_episodes(&part)?;
        let path = split_path(&dir, tag);
        write_file(&path, text.as_bytes())?;
        note(layout, &path, &format!("{} episodes", part.len()));
        splits.insert(
            tag.name().to_string(),
            SplitEntry {
                file: format!("{}.jsonl", tag.name()),
                episodes: part.len(),
                sha256: models::sha256_hex(text.as_bytes()),
            },
        );
    }
    let (layouts, unseen_layouts) = layout_counts(&episodes);
    let manifest = DataManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.scoped_hash(DATA_SCOPE),
        splits,
        unseen_layouts,
        layouts,
    };
    write_file(
        &layout.data_manifest(),
        format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes(),
    )?;
    write_config(&dir.join("config.toml"), cfg)?;
    let back = read_data_manifest(layout)?;
    for tag in SplitTag::ALL {
        let bytes = fs::read(split_path(&dir, tag))?;
        if models::sha256_hex(&bytes) != back.splits[tag.name()].sha256 {
            bail!("{} does not match the manifest", split_path(&dir, tag).display());
        }
    }
    Ok(manifest)
}

pub fn read_data_manifest(layout: &Layout) -> Result<DataManifest> {
    let p = layout.data_manifest();
    let bytes = fs::read(&p).with_context(|| format!("reading {}; run `elba gen` first", p.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
}

/// Loads a split after checking the dataset was generated under this configuration.
pub fn load_split(cfg: &RunConfig, layout: &Layout, tag: SplitTag) -> Result<Vec<Episode>> {
    let manifest = read_data_manifest(layout)?;
    let expected = cfg.scoped_hash(DATA_SCOPE);
    if manifest.config_hash != expected {
        bail!(
            "dataset in {} was generated under config hash {} but the current configuration hashes to {expected}",
            layout.data().display(),
            manifest.config_hash
        );
    }
    let path = split_path(&layout.data(), tag);
    let entry = manifest
        .splits
        .get(tag.name())
        .ok_or_else(|| anyhow!("manifest lists no {} split", tag.name()))?;
    let bytes = fs::read(&path).with_context(|| format!("reading dataset {}", path.display()))?;
    if models::sha256_hex(&bytes) != entry.sha256 {
        bail!("{} does not match the dataset manifest", path.display());
    }
    read_split(&layout.data(), tag)
}

fn qa_free(bc: &BcConfig) -> BcConfig {
    BcConfig {
        qa_episode_rate: 0.0,
        ..*bc
    }
}

pub fn cmd_train_actioner(cfg: &RunConfig, layout: &Layout, resume_from: Option<&Path>) -> Result<()> {
    let train = load_split(cfg, layout, SplitTag::Train)?;
    let valid = load_split(cfg, layout, SplitTag::Valid)?;
    let vocab = Vocab::standard();
    let bc = cfg.bc();
    let resume = match resume_from {
        Some(p) => {
            let p = under(&layout.out, p);
            let manifest: models::ModelManifest = serde_json::from_slice(
                &fs::read(models::manifest_for(&p)).with_context(|| format!("reading the manifest of {}", p.display()))?,
            )?;
            let (_, ck) = models::load_with_manifest(&p, manifest.clone(), &vocab)?;
            let a = elba_core::Actioner::from_checkpoint(&ck)?;
            let prog = BcProgress::from_checkpoint(&ck)?;
            let mut at = cfg.clone();
            at.actioner.epochs = prog.epochs_done;
            expect_hash(&manifest, &at.scoped_hash(ACTIONER_SCOPE))?;
            if prog.epochs_done > bc.train.epochs {
                bail!(
                    "{} already has {} epochs, more than actioner.epochs = {}",
                    p.display(),
                    prog.epochs_done,
                    bc.train.epochs
                );
            }
            Some((a, prog))
        }
        None => None,
    };
    let examples = bc_examples(&train, &vocab, &bc);
    let (actioner, progress) = train_bc(&examples, vocab.len(), &bc, resume)?;
    let acc = action_accuracy(&actioner, &bc_examples(&valid, &vocab, &qa_free(&bc)));
    let mut ck = actioner.to_checkpoint();
    progress.write_to(&mut ck);
    let files = layout.model("actioner");
    models::save(
        &files,
        &ck,
        &vocab,
        ManifestInfo {
            config_hash: cfg.scoped_hash(ACTIONER_SCOPE),
            d: actioner.d(),
            window: Some(cfg.actioner.window),
            metrics: BTreeMap::from([
                ("valid_action_accuracy".to_string(), acc),
                ("epochs_done".to_string(), progress.epochs_done as f64),
                ("train_examples".to_string(), examples.len() as f64),
            ]),
        },
    )?;
    write_config(&files.config(), cfg)?;
    load_actioner(&files, &vocab)?;
    note(layout, &files.checkpoint(), &format!("valid action accuracy {acc:.3}"));
    Ok(())
}

pub fn cmd_train_planner(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let train = load_split(cfg, layout, SplitTag::Train)?;
    let valid = load_split(cfg, layout, SplitTag::Valid)?;
    let vocab = Vocab::standard();
    let planner = train_planner(&train, &vocab, &cfg.planner_config())?;
    let rouge = mid_episode_rouge(&planner, &valid);
    let files = layout.model("planner");
    write_file(
        &files.tables(),
        format!("{}\n", serde_json::to_string_pretty(&planner.tables)?).as_bytes(),
    )?;
    models::save(
        &files,
        &planner.to_checkpoint(),
        &vocab,
        ManifestInfo {
            config_hash: cfg.scoped_hash(PLANNER_SCOPE),
            d: cfg.planner.hidden,
            window: None,
            metrics: BTreeMap::from([("valid_mid_episode_rouge_l".to_string(), rouge)]),
        },
    )?;
    write_config(&files.config(), cfg)?;
    load_planner(&files, &vocab)?;
    note(layout, &files.checkpoint(), &format!("valid Rouge-L {rouge:.3}"));
    Ok(())
}

fn trained_actioner(cfg: &RunConfig, layout: &Layout, vocab: &Vocab) -> Result<elba_core::Actioner> {
    let (m, a, progress) = load_actioner(&layout.model("actioner"), vocab)?;
    expect_hash(&m, &cfg.scoped_hash(ACTIONER_SCOPE))?;
    if progress.epochs_done != cfg.actioner.epochs {
        bail!("actioner checkpoint has {} of {} epochs", progress.epochs_done, cfg.actioner.epochs);
    }
    Ok(a)
}

pub fn cmd_train_qaeval(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let train = load_split(cfg, layout, SplitTag::Train)?;
    let valid = load_split(cfg, layout, SplitTag::Valid)?;
    let vocab = Vocab::standard();
    let actioner = trained_actioner(cfg, layout, &vocab)?;
    let pairs = training_pairs(&actioner, &vocab, &train, cfg.qaeval.pair_stride);
    let model = train_contrastive(&vocab, &pairs, actioner.d(), &cfg.qaeval_config())?;
    let held = training_pairs(&actioner, &vocab, &valid, cfg.qaeval.pair_stride);
    let acc = retrieval_accuracy(&model, &vocab, &held, 16);
    let files = layout.model("qaeval");
    models::save(
        &files,
        &model.to_checkpoint(),
        &vocab,
        ManifestInfo {
            config_hash: cfg.scoped_hash(QAEVAL_SCOPE),
            d: actioner.d(),
            window: Some(cfg.actioner.window),
            metrics: BTreeMap::from([
                ("valid_top1_retrieval_n16".to_string(), acc),
                ("temperature".to_string(), model.temperature()),
                ("train_pairs".to_string(), pairs.len() as f64),
            ]),
        },
    )?;
    write_config(&files.config(), cfg)?;
    load_qaeval(&files, &vocab)?;
    note(layout, &files.checkpoint(), &format!("valid top-1 retrieval {acc:.3}"));
    Ok(())
}

/// Loads all three models, checking each was trained under this configuration.
pub fn load_models(cfg: &RunConfig, layout: &Layout) -> Result<Models> {
    let vocab = Vocab::standard();
    let actioner = trained_actioner(cfg, layout, &vocab)?;
    let (pm, planner) = load_planner(&layout.model("planner"), &vocab)?;
    expect_hash(&pm, &cfg.scoped_hash(PLANNER_SCOPE))?;
    let (qm, qaeval) = load_qaeval(&layout.model("qaeval"), &vocab)?;
    expect_hash(&qm, &cfg.scoped_hash(QAEVAL_SCOPE))?;
    Ok(Models {
        actioner,
        planner,
        qaeval,
        vocab,
    })
}

/// Same result as the sequential arm runner, with episodes spread over the current pool.
pub fn par_run_arm(
    arm: &str,
    split: &str,
    episodes: &[Episode],
    models: &Models,
    cfg: &AgentConfig,
    seeds: &[u64],
) -> Result<(MetricsReport, Vec<Vec<Trajectory>>)> {
    if episodes.is_empty() || seeds.is_empty() {
        bail!("arm {arm} on {split}: nothing to evaluate");
    }
    let jobs: Vec<(u64, &Episode)> = seeds.iter().flat_map(|&s| episodes.iter().map(move |e| (s, e))).collect();
    let trajs: Vec<Trajectory> = jobs
        .par_iter()
        .map(|(seed, ep)| run_episode(models, ep, &AgentConfig { seed: *seed, ..*cfg }))
        .collect::<Result<Vec<_>, _>>()?;
    let per_seed: Vec<Vec<Trajectory>> = trajs.chunks(episodes.len()).map(|c| c.to_vec()).collect();
    let reports = seeds
        .iter()
        .zip(&per_seed)
        .map(|(&s, t)| report_from_trajectories(arm, split, s, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((mean_of_reports(reports)?, per_seed))
}

fn eval_episodes(cfg: &RunConfig, layout: &Layout, split: &str) -> Result<Vec<Episode>> {
    let tag = SplitTag::parse(split).ok_or_else(|| anyhow!("unknown split {split:?}"))?;
    let mut eps = load_split(cfg, layout, tag)?;
    if cfg.eval.max_episodes > 0 {
        eps.truncate(cfg.eval.max_episodes);
    }
    if eps.is_empty() {
        bail!("split {split} has no episodes");
    }
    Ok(eps)
}

pub fn trajectory_path(layout: &Layout, split: &str, arm: &str, seed: u64) -> PathBuf {
    layout.eval().join("trajectories").join(split).join(format!("{arm}.seed{seed}.jsonl"))
}

pub fn cmd_eval(cfg: &RunConfig, layout: &Layout) -> Result<Summary> {
    let models = load_models(cfg, layout)?;
    let seeds = arm_seeds(cfg.seed, cfg.eval.n_seeds);
    let mut rows = Vec::new();
    for split in &cfg.eval.splits {
        let eps = eval_episodes(cfg, layout, split)?;
        for arm in &cfg.eval.arms {
            let agent = cfg.arm_config(arm)?;
            let (report, trajs) = par_run_arm(arm, split, &eps, &models, &agent, &seeds)?;
            eprintln!(
                "{split} {arm}: SR {:.3} GC {:.3} questions {:.2} ± {:.2}",
                report.sr, report.gc, report.mean_q, report.std_q
            );
            if cfg.eval.write_trajectories {
                for (seed, t) in seeds.iter().zip(&trajs) {
                    let path = trajectory_path(layout, split, arm, *seed);
                    let text = trajlog::encode(t)?;
                    write_file(&path, text.as_bytes())?;
                    if trajlog::decode(&text, &eps)? != *t {
                        bail!("{} does not read back", path.display());
                    }
                }
            }
            rows.extend(rows_for(&report, &cfg.with_agent(&agent).result_hash()));
        }
    }
    let summary = Summary {
        command: "eval".into(),
        n_seeds: cfg.eval.n_seeds,
        rows,
        question_types: BTreeMap::new(),
    };
    write_report(&layout.eval(), "report", &summary)?;
    write_config(&layout.eval().join("config.toml"), cfg)?;
    note(layout, &layout.eval().join("report.csv"), &format!("{} rows", summary.rows.len()));
    Ok(summary)
}

pub fn cmd_ablate(cfg: &RunConfig, layout: &Layout) -> Result<Summary> {
    let kind = AblationKind::parse(&cfg.ablate.kind).ok_or_else(|| anyhow!("unknown ablation {:?}", cfg.ablate.kind))?;
    let models = load_models(cfg, layout)?;
    let seeds = arm_seeds(cfg.seed, cfg.eval.n_seeds);
    let split = &cfg.ablate.split;
    let eps = eval_episodes(cfg, layout, split)?;
    let mut rows = Vec::new();
    let mut question_types = BTreeMap::new();
    for cell in ablation_cells(kind, &cfg.agent_config()) {
        let (report, trajs) = par_run_arm(&cell.label, split, &eps, &models, &cell.cfg, &seeds)?;
        eprintln!("{}: GC {:.3} questions {:.2}", cell.label, report.gc, report.mean_q);
        if kind == AblationKind::QuestionType {
            let flat: Vec<Trajectory> = trajs.into_iter().flatten().collect();
            question_types.insert(cell.label.clone(), type_map(&question_type_distribution(&flat)));
        }
        rows.extend(rows_for(&report, &cfg.with_agent(&cell.cfg).result_hash()));
    }
    let summary = Summary {
        command: format!("ablate {}", kind.name()),
        n_seeds: cfg.eval.n_seeds,
        rows,
        question_types,
    };
    let dir = layout.ablate();
    write_report(&dir, kind.name(), &summary)?;
    write_config(&dir.join(format!("{}.config.toml", kind.name())), cfg)?;
    note(layout, &dir.join(format!("{}.csv", kind.name())), &format!("{} rows", summary.rows.len()));
    Ok(summary)
}

pub fn cmd_report(cfg: &RunConfig, layout: &Layout, inputs: &[PathBuf]) -> Result<Summary> {
    if inputs.is_empty() {
        bail!("report needs at least one csv file");
    }
    let tables = inputs
        .iter()
        .map(|p| crate::report::read_csv(&under(&layout.out, p)))
        .collect::<Result<Vec<_>>>()?;
    let rows = crate::report::merge_rows(&tables)?;
    let summary = Summary {
        command: "report".into(),
        n_seeds: cfg.eval.n_seeds,
        rows,
        question_types: BTreeMap::new(),
    };
    write_report(&layout.report(), "merged", &summary)?;
    write_config(&layout.report().join("config.toml"), cfg)?;
    note(layout, &layout.report().join("merged.csv"), &format!("{} rows", summary.rows.len()));
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RougeScores {
    pub n: usize,
    pub mean: f64,
    pub scores: Vec<f64>,
}

/// Line-aligned word-level Rouge-L F1 between two text files.
pub fn cmd_rouge_l(layout: &Layout, reference: &Path, hypothesis: &Path) -> Result<RougeScores> {
    let read = |p: &Path| {
        let p = under(&layout.out, p);
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    };
    let refs = read(reference)?;
    let hyps = read(hypothesis)?;
    let refs: Vec<&str> = refs.lines().collect();
    let hyps: Vec<&str> = hyps.lines().collect();
    if refs.len() != hyps.len() {
        bail!("reference has {} lines, hypothesis has {}", refs.len(), hyps.len());
    }
    if refs.is_empty() {
        bail!("no lines to score");
    }
    let scores: Vec<f64> = refs
        .iter()
        .zip(&hyps)
        .map(|(r, h)| rouge_l(&tokenize(r), &tokenize(h)))
        .collect();
    let mean = elba_core::math::order_invariant_sum(&scores) / scores.len() as f64;
    let out = RougeScores {
        n: scores.len(),
        mean,
        scores,
    };
    let path = layout.out.join("rouge_l.json");
    write_file(&path, format!("{}\n", serde_json::to_string_pretty(&out)?).as_bytes())?;
    Ok(out)
}
