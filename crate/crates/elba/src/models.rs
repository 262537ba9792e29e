//! Checkpoint files with their sidecar manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use elba_core::actioner::BcProgress;
use elba_core::lexicon::Category;
use elba_core::nn::{decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use elba_core::planner::TypeTable;
use elba_core::{ActionKind, Actioner, PlannerModel, QaEvaluator, Vocab};

use crate::io::write_file;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub component: String,
    pub format: String,
    pub format_version: u32,
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    /// Hash of the configuration keys the model depends on.
    pub config_hash: String,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub d: usize,
    pub window: Option<usize>,
    pub action_vocab: Vec<String>,
    pub object_vocab: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

pub fn action_vocab() -> Vec<String> {
    ActionKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

pub fn object_vocab() -> Vec<String> {
    Category::ALL
        .iter()
        .map(|c| c.name().to_string())
        .chain(["none".to_string()])
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn vocab_hash(v: &Vocab) -> String {
    format!("{:016x}", v.hash())
}

pub struct ModelFiles {
    pub dir: PathBuf,
    pub component: &'static str,
}

impl ModelFiles {
    pub fn new(dir: &Path, component: &'static str) -> ModelFiles {
        ModelFiles {
            dir: dir.to_path_buf(),
            component,
        }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(format!("{}.tnn", self.component))
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join(format!("{}.manifest.json", self.component))
    }

    pub fn tables(&self) -> PathBuf {
        self.dir.join(format!("{}.tables.json", self.component))
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join(format!("{}.config.toml", self.component))
    }
}

pub struct ManifestInfo {
    pub config_hash: String,
    pub d: usize,
    pub window: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
}

pub fn save(files: &ModelFiles, ck: &Checkpoint, vocab: &Vocab, info: ManifestInfo) -> Result<ModelManifest> {
    let bytes = encode_checkpoint(ck);
    write_file(&files.checkpoint(), &bytes)?;
    let manifest = ModelManifest {
        component: files.component.to_string(),
        format: "tinynn".into(),
        format_version: CHECKPOINT_VERSION,
        checkpoint: files
            .checkpoint()
            .file_name()
            .expect("checkpoint path has a file name")
            .to_string_lossy()
            .into_owned(),
        checkpoint_sha256: sha256_hex(&bytes),
        config_hash: info.config_hash,
        vocab_hash: vocab_hash(vocab),
        vocab_size: vocab.len(),
        d: info.d,
        window: info.window,
        action_vocab: action_vocab(),
        object_vocab: object_vocab(),
        metrics: info.metrics,
    };
    write_file(&files.manifest(), format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes())?;
    Ok(manifest)
}

/// Reads the manifest and checkpoint and checks that they belong together.
pub fn load(files: &ModelFiles, vocab: &Vocab) -> Result<(ModelManifest, Checkpoint)> {
    let mpath = files.manifest();
    let manifest: ModelManifest = serde_json::from_slice(
        &fs::read(&mpath).with_context(|| format!("reading manifest {}", mpath.display()))?,
    )
    .with_context(|| format!("parsing {}", mpath.display()))?;
    load_with_manifest(&files.checkpoint(), manifest, vocab)
}

pub fn load_with_manifest(ck_path: &Path, manifest: ModelManifest, vocab: &Vocab) -> Result<(ModelManifest, Checkpoint)> {
    let bytes = fs::read(ck_path).with_context(|| format!("reading checkpoint {}", ck_path.display()))?;
    if sha256_hex(&bytes) != manifest.checkpoint_sha256 {
        bail!("{} does not match its manifest", ck_path.display());
    }
    if manifest.vocab_hash != vocab_hash(vocab) || manifest.vocab_size != vocab.len() {
        bail!("{} was built for a different vocabulary", ck_path.display());
    }
    if manifest.action_vocab != action_vocab() || manifest.object_vocab != object_vocab() {
        bail!("{} was built for different action or object vocabularies", ck_path.display());
    }
    let ck = decode_checkpoint(&bytes).with_context(|| format!("decoding {}", ck_path.display()))?;
    Ok((manifest, ck))
}

/// Manifest sibling of an arbitrary checkpoint path.
pub fn manifest_for(ck_path: &Path) -> PathBuf {
    let stem = ck_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ck_path.with_file_name(format!("{stem}.manifest.json"))
}

pub fn expect_hash(manifest: &ModelManifest, expected: &str) -> Result<()> {
    if manifest.config_hash != expected {
        bail!(
            "{} was trained under config hash {} but the current configuration hashes to {expected}; retrain it or pass its training configuration",
            manifest.checkpoint,
            manifest.config_hash
        );
    }
    Ok(())
}

pub fn load_actioner(files: &ModelFiles, vocab: &Vocab) -> Result<(ModelManifest, Actioner, BcProgress)> {
    let (m, ck) = load(files, vocab)?;
    let a = Actioner::from_checkpoint(&ck)?;
    let p = BcProgress::from_checkpoint(&ck)?;
    Ok((m, a, p))
}

pub fn load_planner(files: &ModelFiles, vocab: &Vocab) -> Result<(ModelManifest, PlannerModel)> {
    let (m, ck) = load(files, vocab)?;
    let tpath = files.tables();
    let tables: Vec<TypeTable> = serde_json::from_slice(
        &fs::read(&tpath).with_context(|| format!("reading {}", tpath.display()))?,
    )
    .with_context(|| format!("parsing {}", tpath.display()))?;
    let p = PlannerModel::from_parts(&ck, vocab.clone(), tables)?;
    Ok((m, p))
}

pub fn load_qaeval(files: &ModelFiles, vocab: &Vocab) -> Result<(ModelManifest, QaEvaluator)> {
    let (m, ck) = load(files, vocab)?;
    Ok((m, QaEvaluator::from_checkpoint(&ck)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use elba_core::ActionerConfig;

    fn info() -> ManifestInfo {
        ManifestInfo {
            config_hash: "abc".into(),
            d: 8,
            window: Some(4),
            metrics: BTreeMap::new(),
        }
    }

    #[test]
    fn checkpoint_and_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::standard();
        let cfg = ActionerConfig {
            embed: 4,
            d: 8,
            window: 4,
            head_hidden: 8,
            seed: 1,
        };
        let a = Actioner::new(&cfg, vocab.len());
        let files = ModelFiles::new(dir.path(), "actioner");
        let mut ck = a.to_checkpoint();
        let opt = elba_core::nn::Optimizer::new(&elba_core::nn::TrainConfig::default(), &a);
        BcProgress {
            optimizer: opt.clone(),
            epochs_done: 2,
        }
        .write_to(&mut ck);
        let m = save(&files, &ck, &vocab, info()).unwrap();
        assert_eq!(m.object_vocab.len(), Category::ALL.len() + 1);
        let (m2, a2, p2) = load_actioner(&files, &vocab).unwrap();
        assert_eq!(m, m2);
        assert_eq!(a, a2);
        assert_eq!(p2.epochs_done, 2);
        assert_eq!(p2.optimizer, opt);
        assert!(expect_hash(&m2, "abc").is_ok());
        assert!(expect_hash(&m2, "abd").is_err());
        assert_eq!(manifest_for(&files.checkpoint()), files.manifest());
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::standard();
        let files = ModelFiles::new(dir.path(), "x");
        let a = Actioner::new(&ActionerConfig::default(), vocab.len());
        save(&files, &a.to_checkpoint(), &vocab, info()).unwrap();
        let mut bytes = fs::read(files.checkpoint()).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        fs::write(files.checkpoint(), bytes).unwrap();
        assert!(load(&files, &vocab).is_err());
        assert!(load(&ModelFiles::new(dir.path(), "missing"), &vocab).is_err());
    }
}
