//! Group-sampling training loop, evaluation and estimator comparison.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{self, AnswerTarget, Baseline, EstimatorKind, GradEstimate, GroupOptions, LengthNorm};
use crate::oracle::{self, ObjectiveMode};
use crate::policy::{axpy, norm, Parameterization, Policy, Rollout};
use crate::rewards::{self, RewardKind};
use crate::rng;
use crate::seqcore::{TaskFamily, TaskInstance};

// stream tags keep prompt choice and evaluation off the rollout streams
const PROMPT_STREAM: u64 = 0xA000_0000_0000_0001;
const EVAL_STREAM: u64 = 0xA000_0000_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" | "adam-like" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown trainer.optimizer `{other}` (expected sgd or adam)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    pub reward: RewardKind,
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub temperature: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Optimizer steps per sampling step; above 1 only for the PPO estimator.
    pub reuse_epochs: usize,
    pub clip_eps: f64,
    pub length_norm: LengthNorm,
    /// Held-out instances excluded from training.
    pub holdout: usize,
    /// Sampled traces per held-out instance for accuracy and confidence.
    pub eval_samples: usize,
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(EstimatorKind::VerifreeRloo)
    }
}

/// Reward paired with each estimator when none is configured.
pub fn default_reward(kind: EstimatorKind) -> RewardKind {
    match kind {
        EstimatorKind::Verifier => RewardKind::Verifier,
        EstimatorKind::Verifree | EstimatorKind::VerifreeRloo | EstimatorKind::VerifreePpo => RewardKind::Verifree,
        EstimatorKind::Jlb => RewardKind::Jlb,
        EstimatorKind::Latro => RewardKind::Latro,
    }
}

impl TrainConfig {
    pub fn new(estimator: EstimatorKind) -> Self {
        Self {
            estimator,
            reward: default_reward(estimator),
            group_size: 8,
            prompts_per_step: 16,
            steps: 300,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            temperature: 1.0,
            seed: 0,
            eval_every: 10,
            reuse_epochs: 1,
            clip_eps: estimators::DEFAULT_CLIP_EPS,
            length_norm: LengthNorm::Sum,
            holdout: 0,
            eval_samples: 8,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("{key}: {msg}")));
        let loo = matches!(self.estimator, EstimatorKind::VerifreeRloo | EstimatorKind::VerifreePpo);
        if self.group_size < 1 || (loo && self.group_size < 2) {
            return bad("rollout.group_size", "must be >= 2 for leave-one-out estimators");
        }
        if self.estimator == EstimatorKind::Verifier && self.group_size < 2 {
            return bad("rollout.group_size", "must be >= 2 for the group-mean verifier baseline");
        }
        if self.prompts_per_step < 1 {
            return bad("rollout.prompts_per_step", "must be >= 1");
        }
        if self.steps < 1 {
            return bad("trainer.steps", "must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("trainer.learning_rate", "must be finite and >= 0");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("rollout.temperature", "must be positive");
        }
        if self.eval_every < 1 {
            return bad("trainer.eval_every", "must be >= 1");
        }
        if self.reuse_epochs < 1 {
            return bad("trainer.reuse_epochs", "must be >= 1");
        }
        if self.reuse_epochs > 1 && self.estimator != EstimatorKind::VerifreePpo {
            return bad("trainer.reuse_epochs", "values above 1 require estimator.kind = verifree-ppo");
        }
        if !(self.clip_eps > 0.0) {
            return bad("estimator.clip_eps", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("trainer.beta1", "adam moments need betas in [0, 1) and eps > 0");
        }
        let ok = match self.estimator {
            EstimatorKind::Verifier => matches!(self.reward, RewardKind::Verifier | RewardKind::ShapedVerifier),
            EstimatorKind::Verifree | EstimatorKind::VerifreeRloo | EstimatorKind::VerifreePpo => {
                matches!(self.reward, RewardKind::Verifree | RewardKind::VerifreeEquiv)
            }
            EstimatorKind::Jlb => self.reward == RewardKind::Jlb,
            EstimatorKind::Latro => self.reward == RewardKind::Latro,
        };
        if !ok {
            return Err(Error::Config(format!(
                "estimator.reward: `{}` cannot be used with estimator.kind `{}`",
                self.reward.name(),
                self.estimator.name()
            )));
        }
        Ok(())
    }

    /// Label used for arms and metric streams.
    pub fn label(&self) -> String {
        match (self.estimator, self.reward) {
            (EstimatorKind::Verifier, RewardKind::ShapedVerifier) => "shaped-verifier".into(),
            (k, RewardKind::VerifreeEquiv) => format!("{}+equiv", k.name()),
            (k, _) => k.name().into(),
        }
    }

    fn group_options(&self) -> GroupOptions {
        GroupOptions {
            baseline: match self.estimator {
                EstimatorKind::Verifree => Baseline::None,
                _ => Baseline::LeaveOneOut,
            },
            length_norm: self.length_norm,
            target: match self.reward {
                RewardKind::VerifreeEquiv => AnswerTarget::Equivalents,
                _ => AnswerTarget::Reference,
            },
        }
    }
}

/// Initial policy shape for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicySpec {
    pub kind: Parameterization,
    pub order: usize,
    /// Standard deviation of initial logits; zero gives the uniform policy.
    pub init_scale: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self { kind: Parameterization::Tabular, order: 2, init_scale: 0.0 }
    }
}

impl PolicySpec {
    pub fn build(&self, family: &TaskFamily, seed: u64) -> Policy {
        let vocab = family.vocab();
        if self.init_scale == 0.0 {
            Policy::uniform(vocab, self.kind, self.order)
        } else {
            let (mut r, _) = rng::stream(seed, &[0xA000_0000_0000_0003]);
            Policy::random(vocab, self.kind, self.order, self.init_scale, &mut r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Which reward the reward fields are measured in.
    pub reward_kind: RewardKind,
    pub expected_reward: f64,
    /// Mean `pi(y*|x,z)` over the step's rollouts.
    pub confidence: f64,
    pub mean_trace_length: f64,
    pub reward_variance: f64,
    pub grad_norm: f64,
    pub clip_fraction: Option<f64>,
    /// Exact mean objective over training instances, at eval steps.
    pub objective: Option<f64>,
    pub heldout_objective: Option<f64>,
    pub heldout_accuracy: Option<f64>,
    pub heldout_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// One training run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    family: TaskFamily,
    train: Vec<TaskInstance>,
    heldout: Vec<TaskInstance>,
    policy: Policy,
    ref_policy: Option<Policy>,
    adam: Option<Adam>,
    step: usize,
    last_gradient: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, family: TaskFamily, policy: Policy) -> Result<Self> {
        config.validate()?;
        if *policy.vocab() != family.vocab() {
            return Err(Error::Config("policy vocabulary does not match the task family".into()));
        }
        let policy = policy.with_temperature(config.temperature)?;
        let (train_idx, held_idx) = family.split(config.holdout);
        let train = train_idx.iter().map(|&i| family.make_task(i)).collect::<Result<Vec<_>>>()?;
        let heldout = held_idx.iter().map(|&i| family.make_task(i)).collect::<Result<Vec<_>>>()?;
        if train.is_empty() {
            return Err(Error::Config("task family has no training instances".into()));
        }
        let ref_policy = (config.estimator == EstimatorKind::Latro).then(|| policy.clone());
        let adam = (config.optimizer == OptimizerKind::Adam).then(|| Adam {
            m: vec![0.0; policy.num_params()],
            v: vec![0.0; policy.num_params()],
            t: 0,
        });
        Ok(Self {
            last_gradient: vec![0.0; policy.num_params()],
            config,
            family,
            train,
            heldout,
            policy,
            ref_policy,
            adam,
            step: 0,
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn family(&self) -> &TaskFamily {
        &self.family
    }

    pub fn train_tasks(&self) -> &[TaskInstance] {
        &self.train
    }

    pub fn heldout_tasks(&self) -> &[TaskInstance] {
        &self.heldout
    }

    /// Ascent direction used by the most recent update.
    pub fn last_gradient(&self) -> &[f64] {
        &self.last_gradient
    }

    /// Exact mean objective of the current policy on the training instances.
    pub fn objective(&self) -> Result<f64> {
        oracle::mean_objective(&self.policy, &self.train, ObjectiveMode::Verifier)
    }

    fn pick_prompts(&self) -> Vec<usize> {
        let (mut r, _) = rng::stream(self.config.seed, &[PROMPT_STREAM, self.step as u64]);
        (0..self.config.prompts_per_step).map(|_| r.gen_range(0..self.train.len())).collect()
    }

    fn rollouts(&self, slot: usize, task: &TaskInstance) -> Result<Vec<Rollout>> {
        let wants_answer = self.config.estimator == EstimatorKind::Verifier;
        (0..self.config.group_size)
            .map(|g| {
                let (mut r, id) = rng::stream(self.config.seed, &[self.step as u64, slot as u64, g as u64]);
                let mut ro = self.policy.sample_trace(&task.prompt, task.trace_budget, &mut r, id)?;
                if wants_answer {
                    ro.answer = Some(self.policy.sample_answer(&task.prompt, &ro.trace, task.answer_len(), &mut r));
                }
                Ok(ro)
            })
            .collect()
    }

    fn estimate(&self, sampler: &Policy, task: &TaskInstance, rollouts: &[Rollout]) -> Result<GradEstimate> {
        let cfg = &self.config;
        match cfg.estimator {
            EstimatorKind::Verifree | EstimatorKind::VerifreeRloo => {
                estimators::estimate_verifree_group(&self.policy, task, rollouts, cfg.group_options())
            }
            EstimatorKind::VerifreePpo => estimators::estimate_verifree_ppo(
                &self.policy,
                sampler,
                task,
                rollouts,
                cfg.clip_eps,
                cfg.group_options(),
            ),
            EstimatorKind::Verifier => {
                estimators::estimate_verifier_group(&self.policy, task, rollouts, cfg.reward, Baseline::GroupMean)
            }
            EstimatorKind::Jlb | EstimatorKind::Latro => {
                estimators::estimate_log_reward_group(cfg.estimator, &self.policy, self.ref_policy.as_ref(), task, rollouts)
            }
        }
    }

    fn apply(&mut self, grad: &[f64]) -> Result<()> {
        let lr = self.config.learning_rate;
        match &mut self.adam {
            None => axpy(&mut self.policy.params.values, lr, grad),
            Some(a) => {
                a.t += 1;
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.adam_eps);
                let c1 = 1.0 - b1.powi(a.t);
                let c2 = 1.0 - b2.powi(a.t);
                for k in 0..grad.len() {
                    a.m[k] = b1 * a.m[k] + (1.0 - b1) * grad[k];
                    a.v[k] = b2 * a.v[k] + (1.0 - b2) * grad[k] * grad[k];
                    self.policy.params.values[k] += lr * (a.m[k] / c1) / ((a.v[k] / c2).sqrt() + eps);
                }
            }
        }
        if let Some(k) = self.policy.params.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!(
                    "parameter {k} became {}; gradient norm {:.6e}, lr {lr:e}",
                    self.policy.params.values[k],
                    norm(grad)
                ),
            });
        }
        Ok(())
    }

    /// Samples one batch of groups, updates the policy and reports metrics.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let start = Instant::now();
        self.step += 1;
        let prompts = self.pick_prompts();
        let sampled: Vec<(usize, Vec<Rollout>)> = prompts
            .par_iter()
            .enumerate()
            .map(|(slot, &ti)| Ok((ti, self.rollouts(slot, &self.train[ti])?)))
            .collect::<Result<_>>()?;

        let sampler = self.policy.clone();
        let epochs = self.config.reuse_epochs;
        let n = sampled.len() as f64;
        let mut first: Option<(Vec<GradEstimate>, f64)> = None;
        let mut clip_sum = 0.0;
        let mut clip_count = 0usize;
        for _ in 0..epochs {
            let ests = sampled
                .par_iter()
                .map(|(ti, ros)| self.estimate(&sampler, &self.train[*ti], ros))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; self.policy.num_params()];
            for e in &ests {
                axpy(&mut grad, 1.0 / n, &e.vector.values);
                if let Some(c) = e.diagnostics.clip_fraction {
                    clip_sum += c;
                    clip_count += 1;
                }
            }
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Diverged { step: self.step, detail: "non-finite gradient estimate".into() });
            }
            let gnorm = norm(&grad);
            self.apply(&grad)?;
            self.last_gradient = grad;
            if first.is_none() {
                first = Some((ests, gnorm));
            }
        }
        let (ests, grad_norm) = first.expect("at least one epoch");

        let mut reward_sum = 0.0;
        let mut var_sum = 0.0;
        let mut conf_sum = 0.0;
        let mut len_sum = 0.0;
        let mut count = 0.0;
        for ((ti, ros), e) in sampled.iter().zip(&ests) {
            let rs = &e.diagnostics.rewards;
            let mean = rs.iter().sum::<f64>() / rs.len() as f64;
            reward_sum += mean;
            var_sum += rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rs.len() as f64;
            for ro in ros {
                conf_sum += rewards::reward_verifree(&sampler, &self.train[*ti], &ro.trace)?.value;
                len_sum += ro.trace.len() as f64;
                count += 1.0;
            }
        }
        let eval = self.step % self.config.eval_every == 0 || self.step == self.config.steps;
        let mut m = StepMetrics {
            step: self.step,
            reward_kind: self.config.reward,
            expected_reward: reward_sum / n,
            confidence: conf_sum / count,
            mean_trace_length: len_sum / count,
            reward_variance: var_sum / n,
            grad_norm,
            clip_fraction: (clip_count > 0).then(|| clip_sum / clip_count as f64),
            objective: None,
            heldout_objective: None,
            heldout_accuracy: None,
            heldout_confidence: None,
            wall_time_ms: None,
        };
        if eval {
            m.objective = Some(self.objective()?);
            if !self.heldout.is_empty() {
                m.heldout_objective = Some(oracle::mean_objective(&self.policy, &self.heldout, ObjectiveMode::Verifier)?);
                let (acc, conf) = eval_confidence_accuracy(
                    &self.policy,
                    &self.heldout,
                    self.config.eval_samples,
                    rng::stream_id(self.config.seed, &[EVAL_STREAM, self.step as u64]),
                )?;
                m.heldout_accuracy = Some(acc);
                m.heldout_confidence = Some(conf);
            }
        }
        if self.config.timing {
            m.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(m)
    }
}

/// Finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub initial_objective: f64,
    pub metrics: Vec<StepMetrics>,
}

impl TrainOutcome {
    pub fn final_objective(&self) -> f64 {
        self.metrics.iter().rev().find_map(|m| m.objective).unwrap_or(self.initial_objective)
    }

    /// First evaluated step whose objective reaches `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        if self.initial_objective >= threshold {
            return Some(0);
        }
        self.metrics.iter().find(|m| m.objective.is_some_and(|o| o >= threshold)).map(|m| m.step)
    }

    /// Aligned (held-out accuracy, held-out confidence) pairs at eval steps.
    pub fn accuracy_confidence(&self) -> (Vec<f64>, Vec<f64>) {
        self.metrics
            .iter()
            .filter_map(|m| Some((m.heldout_accuracy?, m.heldout_confidence?)))
            .unzip()
    }
}

pub fn train(config: &TrainConfig, family: &TaskFamily, policy: Policy) -> Result<TrainOutcome> {
    train_with(config, family, policy, |_| Ok(()))
}

/// As [`train`], handing each step's metrics to `sink` as they are produced.
pub fn train_with<F>(config: &TrainConfig, family: &TaskFamily, policy: Policy, mut sink: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepMetrics) -> Result<()>,
{
    let mut t = Trainer::new(config.clone(), family.clone(), policy)?;
    let initial_objective = t.objective()?;
    let mut metrics = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let m = t.step()?;
        sink(&m)?;
        metrics.push(m);
    }
    Ok(TrainOutcome { policy: t.policy, initial_objective, metrics })
}

/// Held-out accuracy of the greedy answer after a sampled trace, and the
/// mean reference probability after that trace. `samples` traces per task.
pub fn eval_confidence_accuracy(policy: &Policy, tasks: &[TaskInstance], samples: usize, seed: u64) -> Result<(f64, f64)> {
    if tasks.is_empty() || samples == 0 {
        return Ok((0.0, 0.0));
    }
    let per_task = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let mut hits = 0.0;
            let mut conf = 0.0;
            for s in 0..samples {
                let (mut r, id) = rng::stream(seed, &[i as u64, s as u64]);
                let ro = policy.sample_trace(&task.prompt, task.trace_budget, &mut r, id)?;
                let y = policy.greedy_answer(&task.prompt, &ro.trace, task.answer_len());
                hits += task.is_correct(&y) as u8 as f64;
                conf += rewards::reward_verifree(policy, task, &ro.trace)?.value;
            }
            Ok((hits, conf))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = (tasks.len() * samples) as f64;
    let (h, c) = per_task.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok((h / n, c / n))
}

/// Sample Pearson correlation; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    VerifreeRloo,
    /// Verifier-free estimator with `A_i = R_i`.
    VerifreeNoRloo,
    ShapedVerifier,
    Verifier,
    Jlb,
    Latro,
    VerifreePpo,
    /// RLOO estimator with the equivalence-class reward.
    VerifreeEquiv,
}

impl Arm {
    pub const STANDARD: [Arm; 6] =
        [Arm::VerifreeRloo, Arm::VerifreeNoRloo, Arm::ShapedVerifier, Arm::Jlb, Arm::Latro, Arm::VerifreePpo];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "verifree-rloo" => Self::VerifreeRloo,
            "verifree" | "verifree-no-rloo" => Self::VerifreeNoRloo,
            "shaped-verifier" => Self::ShapedVerifier,
            "verifier" => Self::Verifier,
            "jlb" => Self::Jlb,
            "latro" => Self::Latro,
            "verifree-ppo" => Self::VerifreePpo,
            "verifree-equiv" => Self::VerifreeEquiv,
            other => return Err(Error::Config(format!("unknown arm `{other}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::VerifreeRloo => "verifree-rloo",
            Self::VerifreeNoRloo => "verifree-no-rloo",
            Self::ShapedVerifier => "shaped-verifier",
            Self::Verifier => "verifier",
            Self::Jlb => "jlb",
            Self::Latro => "latro",
            Self::VerifreePpo => "verifree-ppo",
            Self::VerifreeEquiv => "verifree-equiv",
        }
    }

    /// The base config specialised to this arm. PPO gets at least
    /// `ppo_epochs` reuse epochs; every other arm runs on-policy.
    pub fn configure(self, base: &TrainConfig, ppo_epochs: usize) -> TrainConfig {
        let (kind, reward) = match self {
            Self::VerifreeRloo => (EstimatorKind::VerifreeRloo, RewardKind::Verifree),
            Self::VerifreeNoRloo => (EstimatorKind::Verifree, RewardKind::Verifree),
            Self::ShapedVerifier => (EstimatorKind::Verifier, RewardKind::ShapedVerifier),
            Self::Verifier => (EstimatorKind::Verifier, RewardKind::Verifier),
            Self::Jlb => (EstimatorKind::Jlb, RewardKind::Jlb),
            Self::Latro => (EstimatorKind::Latro, RewardKind::Latro),
            Self::VerifreePpo => (EstimatorKind::VerifreePpo, RewardKind::Verifree),
            Self::VerifreeEquiv => (EstimatorKind::VerifreeRloo, RewardKind::VerifreeEquiv),
        };
        TrainConfig {
            estimator: kind,
            reward,
            reuse_epochs: if self == Self::VerifreePpo { ppo_epochs.max(base.reuse_epochs) } else { 1 },
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub base: TrainConfig,
    pub family: TaskFamily,
    pub policy: PolicySpec,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// Regenerate the task family from each seed instead of sharing one.
    pub reseed_family: bool,
    pub threshold: f64,
    pub ppo_epochs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub steps_to_threshold: Option<usize>,
    pub final_confidence: f64,
    #[serde(skip)]
    pub metrics: Vec<StepMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub threshold: f64,
    pub runs: Vec<ArmRun>,
}

impl CompareReport {
    pub fn run(&self, arm: Arm, seed: u64) -> Option<&ArmRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }

    /// Number of seeds on which `better(a_run, b_run)` holds.
    pub fn count_seeds<F>(&self, a: Arm, b: Arm, better: F) -> usize
    where
        F: Fn(&ArmRun, &ArmRun) -> bool,
    {
        let mut seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
            .iter()
            .filter(|&&s| matches!((self.run(a, s), self.run(b, s)), (Some(x), Some(y)) if better(x, y)))
            .count()
    }
}

/// Runs every arm on every seed with identical tasks and rollout streams.
/// Runs execute in parallel; the report is ordered by arm, then seed.
pub fn compare_estimators(cfg: &CompareConfig) -> Result<CompareReport> {
    let jobs: Vec<(Arm, u64)> = cfg.arms.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            let family = if cfg.reseed_family { cfg.family.with_seed(seed)? } else { cfg.family.clone() };
            let mut tc = arm.configure(&cfg.base, cfg.ppo_epochs);
            tc.seed = seed;
            let out = train(&tc, &family, cfg.policy.build(&family, seed))?;
            Ok(ArmRun {
                arm,
                seed,
                initial_objective: out.initial_objective,
                final_objective: out.final_objective(),
                steps_to_threshold: out.steps_to(cfg.threshold),
                final_confidence: out.metrics.last().map_or(0.0, |m| m.confidence),
                metrics: out.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { threshold: cfg.threshold, runs })
}
