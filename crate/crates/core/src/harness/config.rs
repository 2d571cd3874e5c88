//! `key = value` configuration files and the typed run configuration.
//!
//! One entry per line, `#` starts a comment, nested keys are dotted
//! (`schedule.gamma0 = 0.003`). Later entries override earlier ones, so
//! command-line overrides are simply appended.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::optim::{ClipSpec, EntropySgdConfig, NoiseKind, Schedule};

/// Flat dotted-key map with typed getters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Usage(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                ))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let valid = !key.is_empty()
            && key.split('.').all(|part| {
                !part.is_empty()
                    && part
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            });
        if !valid {
            return Err(HarnessError::Usage(format!("malformed key `{key}`")));
        }
        self.entries
            .insert(key.replace('-', "_"), value.to_string());
        Ok(())
    }

    /// Applies `key=value` / `--key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), HarnessError> {
        for o in overrides {
            let o = o.as_ref();
            let body = o.trim_start_matches('-');
            let (k, v) = body.split_once('=').ok_or_else(|| {
                HarnessError::Usage(format!("override `{o}` must look like --key=value"))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| HarnessError::Usage(format!("bad value for `{key}` (`{v}`): {e}"))),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| HarnessError::Usage(format!("bad value for `{key}` (`{v}`): {e}")))
            })
            .transpose()
    }

    /// Fails on any key outside `known` (prefix match for `prefix.*` entries).
    pub fn check_known(&self, known: &[&str]) -> Result<(), HarnessError> {
        for k in self.keys() {
            let ok = known.iter().any(|pat| match pat.strip_suffix(".*") {
                Some(prefix) => k.starts_with(prefix) && k[prefix.len()..].starts_with('.'),
                None => *pat == k,
            });
            if !ok {
                return Err(HarnessError::Usage(format!(
                    "unknown configuration key `{k}`"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        dim: usize,
        separation: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerChoice {
    Gld,
    Sgld { batch: usize },
    Momentum { batch: usize, coefficient: f64 },
    Nag { batch: usize, coefficient: f64 },
    EntropySgd(EntropySgdConfig),
}

impl OptimizerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gld => "gld",
            Self::Sgld { .. } => "sgld",
            Self::Momentum { .. } => "momentum",
            Self::Nag { .. } => "nag",
            Self::EntropySgd(_) => "entropy-sgd",
        }
    }
}

/// How the SGLD bound constant is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundModeChoice {
    /// From the step-size condition, with the current Lipschitz estimate.
    Auto,
    Strict,
    Relaxed,
}

impl FromStr for BoundModeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "strict" => Ok(Self::Strict),
            "relaxed" => Ok(Self::Relaxed),
            other => Err(format!("expected auto|strict|relaxed, got `{other}`")),
        }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    /// Seeds synthetic generation and subsampling.
    pub data_seed: u64,
    /// Training-set size after subsampling.
    pub n: usize,
    /// Held-out pool size (synthetic data) or cap on it (IDX).
    pub test_n: usize,
    pub corruption: f64,
    pub corruption_seed: u64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerChoice,
    pub schedule: Schedule,
    pub clip: ClipSpec,
    pub noise: NoiseKind,
    pub steps: usize,
    pub estimation_batch: usize,
    pub eval_interval: usize,
    pub eval_size: usize,
    /// Also evaluate the running average of the iterates.
    pub trajectory_average: bool,
    /// Stop once training accuracy reaches this value.
    pub stop_train_accuracy: Option<f64>,
    pub bound_c: f64,
    pub bound_mode: BoundModeChoice,
    pub init_seed: u64,
    pub noise_seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic {
                classes: 2,
                dim: 2,
                separation: 3.0,
            },
            data_seed: 0,
            n: 1000,
            test_n: 1000,
            corruption: 0.0,
            corruption_seed: 0,
            hidden: vec![32],
            optimizer: OptimizerChoice::Sgld { batch: 500 },
            schedule: Schedule::random_label_default(),
            clip: ClipSpec::disabled(),
            noise: NoiseKind::Gaussian,
            steps: 3000,
            estimation_batch: 200,
            eval_interval: 50,
            eval_size: 1000,
            trajectory_average: false,
            stop_train_accuracy: None,
            bound_c: 1.0,
            bound_mode: BoundModeChoice::Auto,
            init_seed: 0,
            noise_seed: 0,
            output: None,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "data.source",
    "data.classes",
    "data.dim",
    "data.separation",
    "data.seed",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.n",
    "data.test_n",
    "corruption.p",
    "corruption.seed",
    "model.hidden",
    "optimizer.kind",
    "optimizer.batch",
    "optimizer.momentum",
    "entropy.*",
    "schedule.*",
    "clip.max_norm",
    "noise.kind",
    "steps",
    "estimation.batch",
    "eval.interval",
    "eval.size",
    "eval.trajectory_average",
    "stop.train_accuracy",
    "bound.c",
    "bound.mode",
    "seed",
    "seed.init",
    "seed.noise",
    "output",
];

pub(crate) fn parse_widths(s: &str) -> Result<Vec<usize>, HarnessError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|e| HarnessError::Usage(format!("bad layer width `{w}`: {e}")))
        })
        .collect()
}

pub(crate) fn schedule_from(kv: &KvConfig, base: Schedule) -> Result<Schedule, HarnessError> {
    Schedule::new(
        kv.get("schedule.gamma0", base.gamma0)?,
        kv.get("schedule.decay", base.decay)?,
        kv.get("schedule.period", base.period)?,
        kv.get("schedule.floor", base.floor)?,
        kv.get("schedule.sigma_coupling", base.sigma_coupling)?,
    )
    .map_err(|e| HarnessError::Usage(e.to_string()))
}

impl RunConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, HarnessError> {
        kv.check_known(RUN_KEYS)?;
        let d = Self::default();
        let data = match kv.raw("data.source").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic {
                classes: kv.get("data.classes", 2)?,
                dim: kv.get("data.dim", 2)?,
                separation: kv.get("data.separation", 3.0)?,
            },
            "idx" => {
                let path = |k: &str| {
                    kv.raw(k).map(PathBuf::from).ok_or_else(|| {
                        HarnessError::Usage(format!("data.source = idx requires `{k}`"))
                    })
                };
                DataSource::Idx {
                    train_images: path("data.train_images")?,
                    train_labels: path("data.train_labels")?,
                    test_images: path("data.test_images")?,
                    test_labels: path("data.test_labels")?,
                }
            }
            other => {
                return Err(HarnessError::Usage(format!(
                    "unknown data.source `{other}`"
                )))
            }
        };
        let batch = kv.get("optimizer.batch", 500)?;
        let coefficient = kv.get("optimizer.momentum", 0.9)?;
        let optimizer = match kv.raw("optimizer.kind").unwrap_or("sgld") {
            "gld" => OptimizerChoice::Gld,
            "sgld" => OptimizerChoice::Sgld { batch },
            "momentum" => OptimizerChoice::Momentum { batch, coefficient },
            "nag" => OptimizerChoice::Nag { batch, coefficient },
            "entropy-sgd" | "entropy_sgd" => {
                let cfg = EntropySgdConfig {
                    scope: kv.get("entropy.scope", 0.03)?,
                    inner_step: kv.get("entropy.inner_step", 0.1)?,
                    inner_steps: kv.get("entropy.inner_steps", 5)?,
                    averaging: kv.get("entropy.alpha", EntropySgdConfig::DEFAULT_AVERAGING)?,
                    thermal_noise: kv.get("entropy.epsilon", 1e-3)?,
                    outer_rate: kv.get("entropy.outer_rate", 1.0)?,
                    batch_size: batch,
                };
                cfg.validate()
                    .map_err(|e| HarnessError::Usage(e.to_string()))?;
                OptimizerChoice::EntropySgd(cfg)
            }
            other => {
                return Err(HarnessError::Usage(format!(
                    "unknown optimizer.kind `{other}`"
                )))
            }
        };
        let clip = match kv.get_opt::<f64>("clip.max_norm")? {
            Some(c) if c > 0.0 => ClipSpec::with_max_norm(c),
            Some(0.0) => ClipSpec::disabled(),
            Some(c) => {
                return Err(HarnessError::Usage(format!(
                    "clip.max_norm must be >= 0, got {c}"
                )))
            }
            None => ClipSpec::disabled(),
        };
        let noise: NoiseKind = kv.get("noise.kind", NoiseKind::Gaussian)?;
        let seed: u64 = kv.get("seed", 0)?;
        let corruption: f64 = kv.get("corruption.p", 0.0)?;
        if !(0.0..=1.0).contains(&corruption) {
            return Err(HarnessError::Usage(format!(
                "corruption.p must lie in [0, 1], got {corruption}"
            )));
        }
        let cfg = Self {
            data,
            data_seed: kv.get("data.seed", seed)?,
            n: kv.get("data.n", d.n)?,
            test_n: kv.get("data.test_n", d.test_n)?,
            corruption,
            corruption_seed: kv.get("corruption.seed", seed)?,
            hidden: match kv.raw("model.hidden") {
                Some(s) => parse_widths(s)?,
                None => d.hidden.clone(),
            },
            optimizer,
            schedule: schedule_from(kv, Schedule::random_label_default())?,
            clip,
            noise,
            steps: kv.get("steps", d.steps)?,
            estimation_batch: kv.get("estimation.batch", d.estimation_batch)?,
            eval_interval: kv.get("eval.interval", d.eval_interval)?,
            eval_size: kv.get("eval.size", d.eval_size)?,
            trajectory_average: kv.get("eval.trajectory_average", false)?,
            stop_train_accuracy: kv.get_opt("stop.train_accuracy")?,
            bound_c: kv.get("bound.c", 1.0)?,
            bound_mode: kv.get("bound.mode", BoundModeChoice::Auto)?,
            init_seed: kv.get("seed.init", seed)?,
            noise_seed: kv.get("seed.noise", seed)?,
            output: kv.raw("output").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Usage(m));
        if self.n == 0 {
            return bad("data.n must be >= 1".into());
        }
        if self.eval_interval == 0 || self.eval_size == 0 || self.estimation_batch == 0 {
            return bad("eval.interval, eval.size and estimation.batch must be >= 1".into());
        }
        if !(self.bound_c > 0.0) {
            return bad(format!("bound.c must be positive, got {}", self.bound_c));
        }
        if let Some(batch) = match &self.optimizer {
            OptimizerChoice::Gld => None,
            OptimizerChoice::Sgld { batch }
            | OptimizerChoice::Momentum { batch, .. }
            | OptimizerChoice::Nag { batch, .. } => Some(*batch),
            OptimizerChoice::EntropySgd(c) => Some(c.batch_size),
        } {
            if batch == 0 || batch > self.n {
                return bad(format!(
                    "optimizer.batch must lie in [1, {}], got {batch}",
                    self.n
                ));
            }
        }
        if let OptimizerChoice::Momentum { coefficient, .. }
        | OptimizerChoice::Nag { coefficient, .. } = &self.optimizer
        {
            if !(0.0..=1.0).contains(coefficient) {
                return bad(format!(
                    "optimizer.momentum must lie in [0, 1], got {coefficient}"
                ));
            }
        }
        if let DataSource::Synthetic {
            classes,
            dim,
            separation,
        } = &self.data
        {
            if *classes < 2 || *dim == 0 || !(*separation >= 0.0) {
                return bad("synthetic data needs classes >= 2, dim >= 1, separation >= 0".into());
            }
        }
        Ok(())
    }
}
