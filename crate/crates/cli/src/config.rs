//! Run configuration: a JSON file, command-line flags and one environment
//! variable, merged with the precedence
//! `flag > BAYESFLOW_OUTPUT_DIR (output directory only) > config file > default`.

use std::path::{Path, PathBuf};

use bayesflow::analyze::{EffectMode, PairwiseOptions, ProjectMode};
use bayesflow::data::{LogPolicy, PrepareOptions};
use bayesflow::{SamplerConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// The only environment variable the tool reads.
pub const OUTPUT_DIR_ENV: &str = "BAYESFLOW_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "bayesflow-out";
pub const DEFAULT_N_SIMS: usize = 100;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub draws: Option<usize>,
    pub target_accept: Option<f64>,
    pub max_tree_depth: Option<usize>,
}

impl SamplerSettings {
    /// Values set here win over `other`.
    pub fn or(&self, other: &SamplerSettings) -> SamplerSettings {
        SamplerSettings {
            chains: self.chains.or(other.chains),
            warmup: self.warmup.or(other.warmup),
            draws: self.draws.or(other.draws),
            target_accept: self.target_accept.or(other.target_accept),
            max_tree_depth: self.max_tree_depth.or(other.max_tree_depth),
        }
    }

    pub fn apply(&self, base: SamplerConfig, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: self.chains.unwrap_or(base.n_chains),
            n_warmup: self.warmup.unwrap_or(base.n_warmup),
            n_draws: self.draws.unwrap_or(base.n_draws),
            target_accept: self.target_accept.unwrap_or(base.target_accept),
            max_tree_depth: self.max_tree_depth.unwrap_or(base.max_tree_depth),
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairwiseSettings {
    pub mode: Option<EffectMode>,
    pub project: Option<ProjectMode>,
}

/// Contents of a `--config` JSON file. Every field is optional; relative
/// paths are resolved against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: Option<Variant>,
    pub models: Option<Vec<Variant>>,
    pub seed: Option<u64>,
    pub sampler: SamplerSettings,
    pub output_dir: Option<PathBuf>,
    pub log_offset: Option<bool>,
    pub center: Option<bool>,
    pub pairwise: PairwiseSettings,
    pub n_sims: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data, &mut config.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn load_optional(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn prepare_options(&self, log_offset_flag: bool, center_flag: bool) -> PrepareOptions {
        PrepareOptions {
            policy: if log_offset_flag || self.log_offset.unwrap_or(false) {
                LogPolicy::Offset
            } else {
                LogPolicy::Strict
            },
            center: center_flag || self.center.unwrap_or(false),
        }
    }

    pub fn pairwise_options(
        &self,
        mode: Option<EffectMode>,
        project: Option<ProjectMode>,
    ) -> PairwiseOptions {
        PairwiseOptions {
            mode: mode.or(self.pairwise.mode).unwrap_or_default(),
            project: project.or(self.pairwise.project).unwrap_or_default(),
            max_draws: None,
        }
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn n_sims(&self, flag: Option<usize>) -> usize {
        flag.or(self.n_sims).unwrap_or(DEFAULT_N_SIMS)
    }

    pub fn data_path(&self, flag: Option<&Path>) -> CliResult<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data.clone())
            .ok_or_else(|| {
                CliError::Usage("a dataset is required (--data or config `data`)".into())
            })
    }

    pub fn model(&self, flag: Option<Variant>) -> CliResult<Variant> {
        flag.or(self.model).ok_or_else(|| {
            CliError::Usage("a model is required (--model or config `model`)".into())
        })
    }

    /// `env` is the value of [`OUTPUT_DIR_ENV`], passed in so that callers
    /// control the single environment read.
    pub fn output_dir(&self, flag: Option<&Path>, env: Option<PathBuf>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or(env)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

pub fn output_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_env_beat_file() {
        let config = RunConfig {
            output_dir: Some("from-file".into()),
            seed: Some(9),
            ..RunConfig::default()
        };
        let flag = Path::new("from-flag");
        assert_eq!(
            config.output_dir(Some(flag), Some("from-env".into())),
            PathBuf::from("from-flag")
        );
        assert_eq!(
            config.output_dir(None, Some("from-env".into())),
            PathBuf::from("from-env")
        );
        assert_eq!(config.output_dir(None, None), PathBuf::from("from-file"));
        assert_eq!(
            RunConfig::default().output_dir(None, None),
            PathBuf::from(DEFAULT_OUTPUT_DIR)
        );
        assert_eq!(config.seed(Some(3)), 3);
        assert_eq!(config.seed(None), 9);
    }

    #[test]
    fn sampler_settings_merge() {
        let flags = SamplerSettings {
            chains: Some(2),
            ..SamplerSettings::default()
        };
        let file = SamplerSettings {
            chains: Some(8),
            draws: Some(300),
            ..SamplerSettings::default()
        };
        let c = flags.or(&file).apply(SamplerConfig::default(), 5);
        assert_eq!(
            (c.n_chains, c.n_draws, c.n_warmup, c.seed),
            (2, 300, 1000, 5)
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"modle": "m1"}"#);
        assert!(err.is_err());
        let ok: RunConfig =
            serde_json::from_str(r#"{"model": "M3", "sampler": {"chains": 2}}"#).unwrap();
        assert_eq!(ok.model, Some(Variant::M3));
    }
}
