//! Training configuration and its flat `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::contrastive::{SafeConfig, SafeConvention};
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::replay::{AugmentationSpec, AugmentationTag, MIDDLE_UNBIAS_EXPONENT};

/// Critic objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Factorized objective over visited and augmented states.
    Visa,
    /// InfoNCE on visited states only.
    CrlCpc,
    /// Binary NCE on visited states only.
    CrlNce,
    /// Boosted joint critic alone.
    OnlyAugment,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Visa, Method::CrlCpc, Method::CrlNce, Method::OnlyAugment];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Visa => "visa",
            Method::CrlCpc => "crl_cpc",
            Method::CrlNce => "crl_nce",
            Method::OnlyAugment => "only_augment",
        }
    }

    /// Whether the method consumes augmented states.
    pub fn uses_augmentation(&self) -> bool {
        matches!(self, Method::Visa | Method::OnlyAugment)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub method: Method,
    pub aug: AugmentationTag,
    pub gamma: f64,
    pub gamma_aug: f64,
    pub safe_convention: SafeConvention,
    pub lambda_club: f64,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub alpha: f64,
    pub total_env_steps: usize,
    /// May be fractional: `0.25` runs one update every four env steps.
    pub updates_per_step: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub warmup_steps: usize,
    pub bo_detach_base: bool,
    /// Freeze the actor and act uniformly at random.
    pub critic_only: bool,
    /// `0` keeps the environment's default horizon.
    pub episode_len: usize,
    pub middle_exponent: f64,
    /// Double the visited-state batch so the sample count matches methods
    /// that draw one augmented state per visited state.
    pub match_sample_count: bool,
    /// Weight of the squared row-logsumexp penalty on `ψφᵀ`.
    pub logsumexp_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointReach,
            method: Method::Visa,
            aug: AugmentationTag::StrongUnbias,
            gamma: 0.99,
            gamma_aug: 0.99,
            safe_convention: SafeConvention::Prose,
            lambda_club: 1.0,
            batch_size: 256,
            embed_dim: 16,
            hidden: vec![64, 64],
            lr_critic: 3e-4,
            lr_actor: 3e-4,
            alpha: 0.05,
            total_env_steps: 200_000,
            updates_per_step: 1.0,
            eval_every: 5_000,
            eval_episodes: 50,
            buffer_capacity: 1_000,
            seed: 0,
            warmup_steps: 2_000,
            bo_detach_base: false,
            critic_only: false,
            episode_len: 0,
            middle_exponent: MIDDLE_UNBIAS_EXPONENT,
            match_sample_count: false,
            logsumexp_penalty: 0.1,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`], in file order.
pub const CONFIG_KEYS: [&str; 26] = [
    "env",
    "method",
    "aug",
    "gamma",
    "gamma_aug",
    "safe_convention",
    "lambda_club",
    "batch_size",
    "embed_dim",
    "hidden",
    "lr_critic",
    "lr_actor",
    "alpha",
    "total_env_steps",
    "updates_per_step",
    "eval_every",
    "eval_episodes",
    "buffer_capacity",
    "seed",
    "warmup_steps",
    "bo_detach_base",
    "critic_only",
    "episode_len",
    "middle_exponent",
    "match_sample_count",
    "logsumexp_penalty",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

impl TrainConfig {
    /// Parses a config file; unspecified keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got '{raw}'", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `KEY=VALUE` overrides in order, then validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not KEY=VALUE")))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    /// Sets one key without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = EnvKind::from_tag(value)?,
            "method" => self.method = value.parse()?,
            "aug" => self.aug = value.parse()?,
            "gamma" => self.gamma = parse(key, value)?,
            "gamma_aug" => self.gamma_aug = parse(key, value)?,
            "safe_convention" => self.safe_convention = value.parse()?,
            "lambda_club" => self.lambda_club = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_critic" => self.lr_critic = parse(key, value)?,
            "lr_actor" => self.lr_actor = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "total_env_steps" => self.total_env_steps = parse(key, value)?,
            "updates_per_step" => self.updates_per_step = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "bo_detach_base" => self.bo_detach_base = parse_bool(key, value)?,
            "critic_only" => self.critic_only = parse_bool(key, value)?,
            "episode_len" => self.episode_len = parse(key, value)?,
            "middle_exponent" => self.middle_exponent = parse(key, value)?,
            "match_sample_count" => self.match_sample_count = parse_bool(key, value)?,
            "logsumexp_penalty" => self.logsumexp_penalty = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// The value of `key` as it would appear in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "env" => self.env.tag().to_string(),
            "method" => self.method.to_string(),
            "aug" => self.aug.to_string(),
            "gamma" => self.gamma.to_string(),
            "gamma_aug" => self.gamma_aug.to_string(),
            "safe_convention" => self.safe_convention.to_string(),
            "lambda_club" => self.lambda_club.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden" => self
                .hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "lr_critic" => self.lr_critic.to_string(),
            "lr_actor" => self.lr_actor.to_string(),
            "alpha" => self.alpha.to_string(),
            "total_env_steps" => self.total_env_steps.to_string(),
            "updates_per_step" => self.updates_per_step.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "buffer_capacity" => self.buffer_capacity.to_string(),
            "seed" => self.seed.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "bo_detach_base" => self.bo_detach_base.to_string(),
            "critic_only" => self.critic_only.to_string(),
            "episode_len" => self.episode_len.to_string(),
            "middle_exponent" => self.middle_exponent.to_string(),
            "match_sample_count" => self.match_sample_count.to_string(),
            "logsumexp_penalty" => self.logsumexp_penalty.to_string(),
            _ => return None,
        })
    }

    /// Serialises to the file format; `from_text(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.env.validate()?;
        match (self.method.uses_augmentation(), self.aug == AugmentationTag::None) {
            (true, true) => {
                return bad(format!("method {} needs an augmentation tag other than none", self.method))
            }
            (false, false) => {
                return bad(format!("method {} requires aug = none, got {}", self.method, self.aug))
            }
            _ => {}
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.aug != AugmentationTag::None {
            self.augmentation().validate()?;
        }
        if !(0.0..=1.0).contains(&self.lambda_club) {
            return bad(format!("lambda_club must lie in [0, 1], got {}", self.lambda_club));
        }
        if !(self.logsumexp_penalty >= 0.0 && self.logsumexp_penalty.is_finite()) {
            return bad(format!("logsumexp_penalty must be >= 0, got {}", self.logsumexp_penalty));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.embed_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return bad("layer widths must be positive".into());
        }
        for (name, lr) in [("lr_critic", self.lr_critic), ("lr_actor", self.lr_actor)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.updates_per_step >= 0.0 && self.updates_per_step.is_finite()) {
            return bad("updates_per_step must be >= 0".into());
        }
        if self.total_env_steps == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("total_env_steps, eval_every and eval_episodes must be positive".into());
        }
        if self.buffer_capacity < 2 {
            return bad("buffer_capacity must be at least 2".into());
        }
        if self.episode_len == 1 {
            return bad("episode_len must be 0 (default) or at least 2".into());
        }
        if !(self.middle_exponent > 0.0 && self.middle_exponent <= 1.0) {
            return bad(format!("middle_exponent must lie in (0, 1], got {}", self.middle_exponent));
        }
        if !self.env.continuous_actions() && !self.critic_only {
            return bad(format!("env {} has discrete actions and needs critic_only = true", self.env.tag()));
        }
        Ok(())
    }

    /// Horizon actually used for rollouts.
    pub fn horizon(&self) -> usize {
        if self.episode_len == 0 {
            self.env.spec().episode_len
        } else {
            self.episode_len
        }
    }

    /// Rows drawn per critic batch.
    pub fn critic_batch(&self) -> usize {
        if self.match_sample_count && !self.method.uses_augmentation() {
            2 * self.batch_size
        } else {
            self.batch_size
        }
    }

    pub fn augmentation(&self) -> AugmentationSpec {
        AugmentationSpec {
            tag: self.aug,
            gamma_aug: self.gamma_aug,
            middle_exponent: self.middle_exponent,
        }
    }

    pub fn safe_config(&self) -> SafeConfig {
        SafeConfig {
            convention: self.safe_convention,
            lambda_club: self.lambda_club,
            detach_base: self.bo_detach_base,
        }
    }
}
