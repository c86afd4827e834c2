//! Run configuration, merged from flags, an optional TOML file, `HUNKMARK_*`
//! environment variables and defaults, in that order of precedence.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hunkmark::diff::DEFAULT_CONTEXT_WIDTH;
use hunkmark::llm::BackendConfig;
use hunkmark::LabelerMode;

pub const ENV_PREFIX: &str = "HUNKMARK_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// A chat-completion endpoint over HTTP.
    Http,
    /// Answers from the ground truth; needs `ground_truth`.
    Oracle,
    /// Canned replies from a script file; needs `script`.
    Scripted,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "oracle" => Ok(BackendKind::Oracle),
            "scripted" => Ok(BackendKind::Scripted),
            other => Err(format!("unknown backend {other:?} (expected http, oracle or scripted)")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Oracle => "oracle",
            BackendKind::Scripted => "scripted",
        })
    }
}

/// One source of settings. Every field is optional so layers can be stacked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub mode: Option<LabelerMode>,
    pub backend: Option<BackendKind>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    /// Name of the variable holding the API token, never the token itself.
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub temperature: Option<f64>,
    pub context_lines: Option<usize>,
    pub parallel: Option<usize>,
    pub diff: Option<PathBuf>,
    pub files_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub labeler_output: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub skip_refiner: Option<bool>,
    pub dry_run: Option<bool>,
}

macro_rules! merge_fields {
    ($self:ident, $lower:ident; $($f:ident),* $(,)?) => {
        ConfigLayer { $($f: $self.$f.or($lower.$f)),* }
    };
}

impl ConfigLayer {
    /// Fields set here win; the rest come from `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        merge_fields!(self, lower;
            mode, backend, model, endpoint, api_key_env, timeout_secs, max_retries, temperature,
            context_lines, parallel, diff, files_dir, ground_truth, out, script, predictions,
            labeler_output, templates_dir, skip_refiner, dry_run,
        )
    }

    pub fn from_toml_file(path: &Path) -> Result<ConfigLayer> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut layer: ConfigLayer =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // Relative paths in a config file are relative to the file.
        if let Some(base) = path.parent() {
            layer.rebase_paths(base);
        }
        Ok(layer)
    }

    fn rebase_paths(&mut self, base: &Path) {
        for p in [
            &mut self.diff,
            &mut self.files_dir,
            &mut self.ground_truth,
            &mut self.out,
            &mut self.script,
            &mut self.predictions,
            &mut self.labeler_output,
            &mut self.templates_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Read `HUNKMARK_<FIELD>` variables through `get`, so tests can supply
    /// their own environment.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<ConfigLayer> {
        fn parsed<T: FromStr>(get: &impl Fn(&str) -> Option<String>, name: &str) -> Result<Option<T>>
        where
            T::Err: fmt::Display,
        {
            let key = format!("{ENV_PREFIX}{name}");
            match get(&key).filter(|v| !v.trim().is_empty()) {
                None => Ok(None),
                Some(v) => match v.trim().parse() {
                    Ok(x) => Ok(Some(x)),
                    Err(e) => bail!("{key}={v:?}: {e}"),
                },
            }
        }
        let path = |name: &str| parsed::<PathBuf>(&get, name);
        Ok(ConfigLayer {
            mode: parsed(&get, "MODE")?,
            backend: parsed(&get, "BACKEND")?,
            model: parsed(&get, "MODEL")?,
            endpoint: parsed(&get, "ENDPOINT")?,
            api_key_env: parsed(&get, "API_KEY_ENV")?,
            timeout_secs: parsed(&get, "TIMEOUT_SECS")?,
            max_retries: parsed(&get, "MAX_RETRIES")?,
            temperature: parsed(&get, "TEMPERATURE")?,
            context_lines: parsed(&get, "CONTEXT_LINES")?,
            parallel: parsed(&get, "PARALLEL")?,
            diff: path("DIFF")?,
            files_dir: path("FILES_DIR")?,
            ground_truth: path("GROUND_TRUTH")?,
            out: path("OUT")?,
            script: path("SCRIPT")?,
            predictions: path("PREDICTIONS")?,
            labeler_output: path("LABELER_OUTPUT")?,
            templates_dir: path("TEMPLATES_DIR")?,
            skip_refiner: parsed(&get, "SKIP_REFINER")?,
            dry_run: parsed(&get, "DRY_RUN")?,
        })
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: LabelerMode,
    pub backend: BackendKind,
    pub http: BackendConfig,
    pub context_lines: usize,
    /// Upper bound on concurrent labeler requests.
    pub parallel: usize,
    pub diff: Option<PathBuf>,
    pub files_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out: PathBuf,
    pub script: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub labeler_output: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub skip_refiner: bool,
    pub dry_run: bool,
}

impl RunConfig {
    pub fn from_layer(layer: ConfigLayer) -> Result<RunConfig> {
        let defaults = BackendConfig::default();
        let http = BackendConfig {
            endpoint: layer.endpoint.unwrap_or(defaults.endpoint),
            model: layer.model.unwrap_or(defaults.model),
            api_key_env: layer.api_key_env.unwrap_or(defaults.api_key_env),
            timeout_secs: layer.timeout_secs.unwrap_or(defaults.timeout_secs),
            max_retries: layer.max_retries.unwrap_or(defaults.max_retries),
            temperature: layer.temperature.unwrap_or(defaults.temperature),
        };
        let parallel = layer.parallel.unwrap_or(1);
        if parallel == 0 {
            bail!("parallel must be at least 1");
        }
        Ok(RunConfig {
            mode: layer.mode.unwrap_or(LabelerMode::File),
            backend: layer.backend.unwrap_or(BackendKind::Http),
            http,
            context_lines: layer.context_lines.unwrap_or(DEFAULT_CONTEXT_WIDTH),
            parallel,
            diff: layer.diff,
            files_dir: layer.files_dir,
            ground_truth: layer.ground_truth,
            out: layer.out.unwrap_or_else(|| PathBuf::from("hunkmark-out")),
            script: layer.script,
            predictions: layer.predictions,
            labeler_output: layer.labeler_output,
            templates_dir: layer.templates_dir,
            skip_refiner: layer.skip_refiner.unwrap_or(false),
            dry_run: layer.dry_run.unwrap_or(false),
        })
    }

    /// Stack flags over the config file (if any) over the environment.
    pub fn resolve(
        flags: ConfigLayer,
        config_file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<RunConfig> {
        let file = match config_file {
            Some(p) => ConfigLayer::from_toml_file(p)?,
            None => ConfigLayer::default(),
        };
        RunConfig::from_layer(flags.over(file).over(ConfigLayer::from_env(env)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::resolve(ConfigLayer::default(), None, env(&[])).unwrap();
        assert_eq!(cfg.mode, LabelerMode::File);
        assert_eq!(cfg.context_lines, 5);
        assert_eq!(cfg.parallel, 1);
        assert_eq!(cfg.http.api_key_env, "HUNKMARK_API_KEY");
        assert!(!cfg.dry_run);
    }

    #[test]
    fn flags_beat_file_beat_env() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("hunkmark.toml");
        fs::write(&file, "mode = \"patch\"\nmodel = \"from-file\"\ncontext_lines = 3\nout = \"results\"\n").unwrap();
        let flags = ConfigLayer { mode: Some(LabelerMode::Hunk), ..Default::default() };
        let e = env(&[
            ("HUNKMARK_MODE", "file"),
            ("HUNKMARK_MODEL", "from-env"),
            ("HUNKMARK_PARALLEL", "4"),
            ("HUNKMARK_CONTEXT_LINES", "9"),
        ]);
        let cfg = RunConfig::resolve(flags, Some(&file), e).unwrap();
        assert_eq!(cfg.mode, LabelerMode::Hunk);
        assert_eq!(cfg.http.model, "from-file");
        assert_eq!(cfg.context_lines, 3);
        assert_eq!(cfg.parallel, 4);
        assert_eq!(cfg.out, dir.path().join("results"));
    }

    #[test]
    fn bad_values_are_reported() {
        let err = RunConfig::resolve(ConfigLayer::default(), None, env(&[("HUNKMARK_PARALLEL", "many")])).unwrap_err();
        assert!(err.to_string().contains("HUNKMARK_PARALLEL"));
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "api_key = \"sk-oops\"\n").unwrap();
        assert!(RunConfig::resolve(ConfigLayer::default(), Some(&file), env(&[])).is_err());
        let zero = ConfigLayer { parallel: Some(0), ..Default::default() };
        assert!(RunConfig::from_layer(zero).is_err());
    }
}
