//! Flag / config-file / default resolution.
//!
//! A config file holds `key = value` lines; keys are the long flag names
//! (`-` or `_` both accepted) and `#` starts a comment. Flags win over the
//! file, the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use hercules::training::TrainConfig;
use hercules::{CurvatureSpec, Execution};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Atth,
    Hercules,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureArg {
    Relation,
    RelationTime,
    RelationTimeDot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Valid,
    Test,
}

/// Flags shared by every command. All are optional so that unset flags fall
/// through to the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// Dataset directory with train / valid / test quadruple files
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Embedding dimension (even)
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, value_enum, global = true)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum, global = true)]
    pub curvature: Option<CurvatureArg>,
    /// Add a per-timestamp Möbius translation (relation-time curvature only)
    #[arg(long, global = true)]
    pub time_translation: bool,
    /// Negative samples per training fact
    #[arg(long, global = true)]
    pub neg: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validation cadence in epochs (0 disables validation)
    #[arg(long, global = true)]
    pub valid_every: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key = value` file supplying defaults for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Sequential, bit-reproducible accumulation
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Model checkpoint to read
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Split to evaluate
    #[arg(long, value_enum, global = true)]
    pub split: Option<SplitArg>,
}

/// Fully resolved settings, echoed into the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub command: String,
    pub data: Option<PathBuf>,
    pub dim: usize,
    pub model: Option<ModelArg>,
    pub curvature: Option<CurvatureArg>,
    pub time_translation: bool,
    pub spec: String,
    pub neg: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub valid_every: usize,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub checkpoint: Option<PathBuf>,
    pub split: SplitArg,
    /// Command-specific settings.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub curvature_spec: CurvatureSpec,
    #[serde(skip)]
    pub model_explicit: bool,
}

impl Resolved {
    pub fn execution(&self) -> Execution {
        if self.deterministic {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            negatives: self.neg,
            learning_rate: self.lr,
            seed: self.seed,
            valid_every: self.valid_every,
            dim: self.dim,
            spec: self.curvature_spec,
            execution: self.execution(),
            ..TrainConfig::default()
        }
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow!("--data is required for `{}`", self.command))
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| anyhow!("--checkpoint is required for `{}`", self.command))
    }
}

/// Config-file entries not yet consumed.
pub struct FileValues {
    path: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl FileValues {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    anyhow!("{}:{}: expected `key = value`", path.display(), i + 1)
                })?;
                let key = k.trim().replace('_', "-");
                if values.insert(key.clone(), v.trim().to_owned()).is_some() {
                    bail!("{}:{}: duplicate key `{key}`", path.display(), i + 1);
                }
            }
        }
        Ok(Self {
            path: path.map(Path::to_path_buf),
            values,
        })
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}` = `{v}`: {e}")),
        }
    }

    pub fn take_enum<T: ValueEnum>(&mut self, key: &str) -> Result<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => T::from_str(&v, true)
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}` = `{v}`: {e}")),
        }
    }

    pub fn take_bool(&mut self, key: &str) -> Result<bool> {
        Ok(self.take::<bool>(key)?.unwrap_or(false))
    }

    /// Fails on keys nobody consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(key) = self.values.keys().next() {
            let file = self
                .path
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            bail!("{file}: unknown config key `{key}`");
        }
        Ok(())
    }
}

pub fn resolve_spec(
    model: Option<ModelArg>,
    curvature: Option<CurvatureArg>,
    translation: bool,
) -> Result<CurvatureSpec> {
    let base = match (model, curvature) {
        (Some(ModelArg::Atth), None | Some(CurvatureArg::Relation)) => CurvatureSpec::RelationOnly,
        (Some(ModelArg::Atth), Some(c)) => {
            bail!(
                "--model atth uses relation curvature; `--curvature {}` needs --model hercules",
                c.name()
            )
        }
        (_, Some(CurvatureArg::Relation)) => CurvatureSpec::RelationOnly,
        (_, Some(CurvatureArg::RelationTimeDot)) => CurvatureSpec::RelationTimeDotProduct,
        (_, Some(CurvatureArg::RelationTime) | None) => CurvatureSpec::RelationTime,
    };
    if !translation {
        return Ok(base);
    }
    match base {
        CurvatureSpec::RelationTime => Ok(CurvatureSpec::RelationTimePlusTranslation),
        other => {
            bail!("--time-translation combines only with relation-time curvature, not `{other}`")
        }
    }
}

impl CurvatureArg {
    fn name(self) -> &'static str {
        match self {
            CurvatureArg::Relation => "relation",
            CurvatureArg::RelationTime => "relation-time",
            CurvatureArg::RelationTimeDot => "relation-time-dot",
        }
    }
}

/// Merges flags, the config file and defaults. `file` keeps any
/// command-specific keys for the caller to consume.
pub fn resolve(command: &str, flags: &CommonFlags, file: &mut FileValues) -> Result<Resolved> {
    let defaults = TrainConfig::default();
    let model = flags.model.or(file.take_enum("model")?);
    let curvature = flags.curvature.or(file.take_enum("curvature")?);
    let time_translation = flags.time_translation | file.take_bool("time-translation")?;
    let curvature_spec = resolve_spec(model, curvature, time_translation)?;
    let dim = flags.dim.or(file.take("dim")?).unwrap_or(defaults.dim);
    if dim == 0 || !dim.is_multiple_of(2) {
        bail!("--dim must be a positive even number, got {dim}");
    }
    let threads = flags.threads.or(file.take("threads")?);
    if threads == Some(0) {
        bail!("--threads must be positive");
    }
    let deterministic = flags.deterministic | file.take_bool("deterministic")?;
    let resolved = Resolved {
        command: command.to_owned(),
        data: flags.data.clone().or(file.take("data")?),
        dim,
        model,
        curvature,
        time_translation,
        spec: curvature_spec.to_string(),
        neg: flags
            .neg
            .or(file.take("neg")?)
            .unwrap_or(defaults.negatives),
        epochs: flags
            .epochs
            .or(file.take("epochs")?)
            .unwrap_or(defaults.epochs),
        batch: flags
            .batch
            .or(file.take("batch")?)
            .unwrap_or(defaults.batch_size),
        lr: flags
            .lr
            .or(file.take("lr")?)
            .unwrap_or(defaults.learning_rate),
        seed: flags.seed.or(file.take("seed")?).unwrap_or(defaults.seed),
        valid_every: flags
            .valid_every
            .or(file.take("valid-every")?)
            .unwrap_or(defaults.valid_every),
        out: flags
            .out
            .clone()
            .or(file.take("out")?)
            .unwrap_or_else(|| PathBuf::from("runs")),
        config: flags.config.clone(),
        threads: if deterministic { Some(1) } else { threads },
        deterministic,
        checkpoint: flags.checkpoint.clone().or(file.take("checkpoint")?),
        split: flags
            .split
            .or(file.take_enum("split")?)
            .unwrap_or(SplitArg::Test),
        extra: BTreeMap::new(),
        curvature_spec,
        model_explicit: model.is_some() || curvature.is_some() || time_translation,
    };
    resolved
        .train_config()
        .validate()
        .map_err(|e| anyhow!("{e}"))?;
    Ok(resolved)
}
