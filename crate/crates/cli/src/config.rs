//! Line-oriented `section.key = value` experiment config.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use verifree_core::oracle::FixtureSpec;
use verifree_core::trainer::{Arm, CompareConfig, OptimizerKind, PolicySpec, TrainConfig};
use verifree_core::{EstimatorKind, FamilyKind, LengthNorm, Parameterization, RewardKind, TaskFamily};

/// Every accepted key with its default. `None` marks keys with no default;
/// commands that need them fail with the key name.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("task.family", None),
    ("task.seed", Some("0")),
    ("task.symbols", Some("4")),
    ("task.keys", Some("")),
    ("task.distractors", Some("0")),
    ("task.bits", Some("3")),
    ("task.trace_budget", Some("3")),
    ("task.holdout", Some("0")),
    ("policy.kind", Some("tabular")),
    ("policy.order", Some("2")),
    ("policy.init_scale", Some("0")),
    ("estimator.kind", None),
    ("estimator.reward", Some("")),
    ("estimator.clip_eps", Some("0.2")),
    ("estimator.length_norm", Some("sum")),
    ("rollout.group_size", Some("8")),
    ("rollout.prompts_per_step", Some("16")),
    ("rollout.temperature", Some("1")),
    ("trainer.seed", Some("0")),
    ("trainer.steps", Some("300")),
    ("trainer.learning_rate", Some("0.05")),
    ("trainer.optimizer", Some("adam")),
    ("trainer.beta1", Some("0.9")),
    ("trainer.beta2", Some("0.999")),
    ("trainer.adam_eps", Some("1e-8")),
    ("trainer.eval_every", Some("10")),
    ("trainer.eval_samples", Some("8")),
    ("trainer.reuse_epochs", Some("1")),
    ("oracle.fixtures", Some("50")),
    ("oracle.vocab", Some("4")),
    ("oracle.order", Some("2")),
    ("oracle.budget", Some("3")),
    ("oracle.answer_len", Some("1")),
    ("oracle.prompt_len", Some("1")),
    ("oracle.equivalents", Some("1")),
    ("oracle.kind", Some("tabular")),
    ("oracle.logit_scale", Some("1")),
    ("compare.arms", Some("verifree-rloo,verifree-no-rloo,shaped-verifier,jlb,latro,verifree-ppo")),
    ("compare.seeds", Some("5")),
    ("compare.threshold", Some("0.9")),
    ("compare.ppo_epochs", Some("2")),
    ("compare.reseed_family", Some("true")),
    ("patch.merges", Some("")),
    ("patch.alphabet", Some("")),
    ("patch.texts", Some("")),
    ("output.dir", Some("")),
    ("output.timing", Some("false")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Option<Option<&'static str>> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

impl ExperimentConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        Self { values }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::defaults();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `section.key = value`, got {raw:?}", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if known(key).is_none() {
            bail!("unknown config key `{key}`");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{spec}`"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key).is_some(), "{key}");
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| anyhow!("missing required key `{key}`"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        v.parse().map_err(|e| anyhow!("{key}: cannot parse `{v}`: {e}"))
    }

    fn with_key<T>(&self, key: &str, r: verifree_core::Result<T>) -> Result<T> {
        r.map_err(|e| {
            let msg = e.to_string();
            if msg.contains(key) {
                anyhow!(msg)
            } else {
                anyhow!("{key}: {msg}")
            }
        })
    }

    /// Resolved key/value pairs in key order, for headers and hashing.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// SHA-256 over the command and the resolved config.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(format!("command={command}\n"));
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n"));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn family(&self) -> Result<TaskFamily> {
        let kind = self.with_key("task.family", FamilyKind::parse(self.require("task.family")?))?;
        let symbols: usize = self.get("task.symbols")?;
        let keys = match self.raw("task.keys") {
            Some(_) => self.get("task.keys")?,
            None => symbols,
        };
        let fam = TaskFamily::build(
            kind,
            self.get("task.seed")?,
            symbols,
            keys,
            self.get("task.distractors")?,
            self.get("task.bits")?,
            self.get("task.trace_budget")?,
        );
        self.with_key("task.family", fam)
    }

    pub fn policy_spec(&self) -> Result<PolicySpec> {
        let spec = PolicySpec {
            kind: self.with_key("policy.kind", Parameterization::parse(self.require("policy.kind")?))?,
            order: self.get("policy.order")?,
            init_scale: self.get("policy.init_scale")?,
        };
        if !(spec.init_scale >= 0.0 && spec.init_scale.is_finite()) {
            bail!("policy.init_scale: must be finite and >= 0");
        }
        Ok(spec)
    }

    /// Trainer settings; `estimator.kind` is read only when `need_kind`.
    pub fn train_config(&self, need_kind: bool) -> Result<TrainConfig> {
        let kind = match (need_kind, self.raw("estimator.kind")) {
            (true, _) => self.with_key("estimator.kind", EstimatorKind::parse(self.require("estimator.kind")?))?,
            (false, Some(k)) => self.with_key("estimator.kind", EstimatorKind::parse(k))?,
            (false, None) => EstimatorKind::VerifreeRloo,
        };
        let mut c = TrainConfig::new(kind);
        if let Some(r) = self.raw("estimator.reward") {
            c.reward = self.with_key("estimator.reward", RewardKind::parse(r))?;
        }
        c.clip_eps = self.get("estimator.clip_eps")?;
        c.length_norm = match self.require("estimator.length_norm")? {
            "sum" => LengthNorm::Sum,
            "token-mean" => LengthNorm::TokenMean,
            other => bail!("estimator.length_norm: `{other}` (expected sum or token-mean)"),
        };
        c.group_size = self.get("rollout.group_size")?;
        c.prompts_per_step = self.get("rollout.prompts_per_step")?;
        c.temperature = self.get("rollout.temperature")?;
        c.seed = self.get("trainer.seed")?;
        c.steps = self.get("trainer.steps")?;
        c.learning_rate = self.get("trainer.learning_rate")?;
        c.optimizer = self.with_key("trainer.optimizer", OptimizerKind::parse(self.require("trainer.optimizer")?))?;
        c.beta1 = self.get("trainer.beta1")?;
        c.beta2 = self.get("trainer.beta2")?;
        c.adam_eps = self.get("trainer.adam_eps")?;
        c.eval_every = self.get("trainer.eval_every")?;
        c.eval_samples = self.get("trainer.eval_samples")?;
        c.reuse_epochs = self.get("trainer.reuse_epochs")?;
        c.holdout = self.get("task.holdout")?;
        c.timing = self.get("output.timing")?;
        c.validate().map_err(|e| anyhow!(e.to_string().trim_start_matches("configuration error: ").to_string()))?;
        Ok(c)
    }

    pub fn compare_config(&self) -> Result<CompareConfig> {
        let arms = self
            .require("compare.arms")?
            .split(',')
            .map(|a| self.with_key("compare.arms", Arm::parse(a.trim())))
            .collect::<Result<Vec<_>>>()?;
        let n: u64 = self.get("compare.seeds")?;
        if n == 0 {
            bail!("compare.seeds: must be >= 1");
        }
        let first: u64 = self.get("trainer.seed")?;
        let base = self.train_config(false)?;
        for arm in &arms {
            arm.configure(&base, self.get("compare.ppo_epochs")?)
                .validate()
                .map_err(|e| anyhow!("compare.arms: arm `{}`: {e}", arm.name()))?;
        }
        Ok(CompareConfig {
            base,
            family: self.family()?,
            policy: self.policy_spec()?,
            arms,
            seeds: (first..first + n).collect(),
            reseed_family: self.get("compare.reseed_family")?,
            threshold: self.get("compare.threshold")?,
            ppo_epochs: self.get("compare.ppo_epochs")?,
        })
    }

    pub fn fixture_spec(&self) -> Result<FixtureSpec> {
        let spec = FixtureSpec {
            vocab: self.get("oracle.vocab")?,
            order: self.get("oracle.order")?,
            budget: self.get("oracle.budget")?,
            answer_len: self.get("oracle.answer_len")?,
            prompt_len: self.get("oracle.prompt_len")?,
            equivalents: self.get("oracle.equivalents")?,
            kind: self.with_key("oracle.kind", Parameterization::parse(self.require("oracle.kind")?))?,
            logit_scale: self.get("oracle.logit_scale")?,
        };
        if spec.vocab < 3 {
            bail!("oracle.vocab: must be >= 3 (answer-open, stop and one plain token)");
        }
        if spec.budget < 1 || spec.answer_len < 1 || spec.equivalents < 1 {
            bail!("oracle.budget, oracle.answer_len and oracle.equivalents must be >= 1");
        }
        Ok(spec)
    }
}
