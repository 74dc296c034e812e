//! Run configuration: a single TOML file supplies defaults, command-line
//! flags override it, and every stage stamps its outputs with a hash of the
//! effective settings plus the tool version.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub ingest: IngestCfg,
    #[serde(default)]
    pub cluster: ClusterCfg,
    #[serde(default)]
    pub augment: AugmentCfg,
    #[serde(default)]
    pub perturb: PerturbCfg,
    #[serde(default)]
    pub flybird: FlyBirdCfg,
    #[serde(default)]
    pub prompts: PromptsCfg,
    #[serde(default)]
    pub eval: EvalCfg,
    #[serde(default)]
    pub compare: CompareCfg,
    #[serde(default)]
    pub report: ReportCfg,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestCfg {
    pub manifest: Option<PathBuf>,
    pub habitat: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterCfg {
    pub habitat: Option<PathBuf>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentCfg {
    pub manifest: Option<PathBuf>,
    pub strategy: Option<String>,
    pub groups: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub root: Option<PathBuf>,
    pub copies: Option<usize>,
    pub canvas: Option<u32>,
    pub inpaint_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbCfg {
    pub manifest: Option<PathBuf>,
    pub kinds: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub box_frac: Option<f64>,
    pub boxes: Option<usize>,
    pub inpaint_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub root: Option<PathBuf>,
    pub bbox_as_mask: Option<bool>,
    pub skip_missing: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlyBirdCfg {
    pub manifest: Option<PathBuf>,
    pub rule: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub root: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsCfg {
    pub manifest: Option<PathBuf>,
    pub visual: Option<PathBuf>,
    pub visual_kind: Option<String>,
    pub habitat: Option<PathBuf>,
    pub direction: Option<String>,
    pub policy: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCfg {
    pub images: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub support: Option<PathBuf>,
    pub support_labels: Option<PathBuf>,
    pub shots: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareCfg {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub top: Option<usize>,
    pub groups: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportCfg {
    pub reports: Option<Vec<PathBuf>>,
    pub labels: Option<Vec<String>>,
    pub layout: Option<String>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
            }
        }
    }
}

/// Effective settings of one stage, for stamping and hashing.
#[derive(Debug, Default)]
pub struct ResolvedSettings {
    entries: BTreeMap<String, String>,
}

impl ResolvedSettings {
    pub fn new(stage: &str) -> Self {
        let mut s = Self::default();
        s.put("stage", stage);
        s.put("tool-version", habitat_forge_core::TOOL_VERSION);
        s
    }

    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn put_path(&mut self, key: &str, value: &Path) {
        self.put(key, value.display());
    }

    pub fn put_opt_path(&mut self, key: &str, value: &Option<PathBuf>) {
        if let Some(p) = value {
            self.put_path(key, p);
        }
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} {v}\n"));
        }
        out
    }

    pub fn config_hash(&self) -> String {
        habitat_forge_core::treehash::hash_str(&self.canonical())
    }

    /// Write the metadata sidecar: `<target>.meta` for files,
    /// `<target>/run.meta` for directories.
    pub fn write_meta(&self, target: &Path) -> anyhow::Result<()> {
        let meta_path = if target.is_dir() {
            target.join("run.meta")
        } else {
            let mut s = target.as_os_str().to_os_string();
            s.push(".meta");
            PathBuf::from(s)
        };
        let mut body = String::from("#habitat-forge-meta\n");
        body.push_str(&format!("config-sha256 {}\n", self.config_hash()));
        body.push_str(&self.canonical());
        std::fs::write(&meta_path, body)
            .with_context(|| format!("writing {}", meta_path.display()))?;
        Ok(())
    }
}

/// Flag, then config, then default.
pub fn pick<T: Clone>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

/// Flag, then config; error when neither is given.
pub fn require<T: Clone>(flag: Option<T>, cfg: Option<T>, what: &str) -> anyhow::Result<T> {
    flag.or(cfg)
        .ok_or_else(|| anyhow::anyhow!("missing required setting `{what}` (flag or config)"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_and_sections_default() {
        let cfg: FileConfig = toml::from_str(
            "seed = 7\n[cluster]\nk_min = 2\nk_max = 10\n[augment]\nstrategy = \"mixed-g\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.cluster.k_min, Some(2));
        assert_eq!(cfg.augment.strategy.as_deref(), Some("mixed-g"));
        assert!(cfg.perturb.manifest.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("nonsense = 1\n").is_err());
    }

    #[test]
    fn resolution_order_is_flag_config_default() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick::<u64>(None, None, 3), 3);
        assert!(require::<u64>(None, None, "x").is_err());
    }

    #[test]
    fn settings_hash_is_order_independent_and_sensitive() {
        let mut a = ResolvedSettings::new("cluster");
        a.put("k-min", 2);
        a.put("seed", 42);
        let mut b = ResolvedSettings::new("cluster");
        b.put("seed", 42);
        b.put("k-min", 2);
        assert_eq!(a.config_hash(), b.config_hash());
        b.put("k-max", 9);
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
