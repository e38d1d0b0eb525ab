//! Policy-gradient estimators.
//!
//! Every estimator returns an ascent direction in parameter space. The
//! single-sample forms score one trace (and, for the verifier, one answer);
//! the group forms average over `G` rollouts of the same prompt.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{norm, ParamVector, Policy, Rollout};
use crate::rewards::{self, RewardKind};
use crate::seqcore::{TaskInstance, TokenSeq};

/// Default PPO clip range.
pub const DEFAULT_CLIP_EPS: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Verifier,
    Verifree,
    Jlb,
    Latro,
    VerifreeRloo,
    VerifreePpo,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "verifier" => Self::Verifier,
            "verifree" => Self::Verifree,
            "jlb" => Self::Jlb,
            "latro" => Self::Latro,
            "verifree-rloo" => Self::VerifreeRloo,
            "verifree-ppo" => Self::VerifreePpo,
            other => {
                return Err(Error::Config(format!(
                    "estimator.kind `{other}` (expected verifier, verifree, jlb, latro, verifree-rloo or verifree-ppo)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Verifier => "verifier",
            Self::Verifree => "verifree",
            Self::Jlb => "jlb",
            Self::Latro => "latro",
            Self::VerifreeRloo => "verifree-rloo",
            Self::VerifreePpo => "verifree-ppo",
        }
    }
}

/// Baseline subtracted from the reasoning-term reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    /// Mean reward of the other `G - 1` group members.
    LeaveOneOut,
    /// Mean reward of the whole group, self included.
    GroupMean,
}

/// How token-level score terms are aggregated within one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthNorm {
    /// Sum over tokens, no division by response length.
    Sum,
    /// Divide each response's contribution by its token count (ablation only).
    TokenMean,
}

/// Which answers the probability reward is summed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerTarget {
    Reference,
    Equivalents,
}

impl AnswerTarget {
    pub fn answers(self, task: &TaskInstance) -> Result<&[TokenSeq]> {
        match self {
            Self::Reference => Ok(std::slice::from_ref(&task.reference)),
            Self::Equivalents => {
                if task.equivalents.is_empty() {
                    Err(Error::Precondition(format!("task {} has no equivalence class", task.id)))
                } else {
                    Ok(&task.equivalents)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupOptions {
    pub baseline: Baseline,
    pub length_norm: LengthNorm,
    pub target: AnswerTarget,
}

impl Default for GroupOptions {
    fn default() -> Self {
        Self { baseline: Baseline::LeaveOneOut, length_norm: LengthNorm::Sum, target: AnswerTarget::Reference }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimateDiagnostics {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub clip_fraction: Option<f64>,
    /// Norm of the reasoning-term part of the estimate.
    pub reasoning_norm: f64,
    /// Norm of the answer-term part of the estimate.
    pub answer_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradEstimate {
    pub vector: ParamVector,
    pub kind: EstimatorKind,
    pub group_size: usize,
    pub diagnostics: EstimateDiagnostics,
}

impl GradEstimate {
    fn from_parts(
        kind: EstimatorKind,
        reasoning: ParamVector,
        answer: Vec<f64>,
        rewards: Vec<f64>,
        advantages: Vec<f64>,
        clip_fraction: Option<f64>,
    ) -> Self {
        let reasoning_norm = reasoning.norm();
        let answer_norm = norm(&answer);
        let mut vector = reasoning;
        for (v, a) in vector.values.iter_mut().zip(&answer) {
            *v += a;
        }
        Self {
            vector,
            kind,
            group_size: rewards.len(),
            diagnostics: EstimateDiagnostics { rewards, advantages, clip_fraction, reasoning_norm, answer_norm },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vector.is_finite()
    }
}

/// Leave-one-out advantages `A_i = R_i - mean_{j != i} R_j`.
///
/// Computed as `sum_{j != i} (R_i - R_j) / (G - 1)` so equal rewards give
/// exactly zero.
pub fn rloo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Precondition(format!("leave-one-out baseline needs G >= 2, got {g}")));
    }
    Ok(rewards
        .iter()
        .map(|&ri| rewards.iter().map(|&rj| ri - rj).sum::<f64>() / (g - 1) as f64)
        .collect())
}

fn advantages(rewards: &[f64], baseline: Baseline) -> Result<Vec<f64>> {
    match baseline {
        Baseline::None => Ok(rewards.to_vec()),
        Baseline::LeaveOneOut => rloo_advantages(rewards),
        Baseline::GroupMean => {
            let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
            Ok(rewards.iter().map(|r| r - mean).collect())
        }
    }
}

/// Adds `sum_{y in targets} scale * pi(y|x,z) * grad log pi(y|x,z)` to `out`
/// and returns the summed probability.
fn accumulate_answer_term(
    policy: &Policy,
    context: &TokenSeq,
    targets: &[TokenSeq],
    scale: f64,
    out: &mut [f64],
) -> Result<f64> {
    let mut total = 0.0;
    for y in targets {
        let p = policy.logprob(context, y)?.exp();
        total += p;
        policy.accumulate_grad_logprob(context, y, scale * p, out)?;
    }
    Ok(total)
}

/// Single-sample verifier estimator: `R(y) [grad log pi(z|x) + grad log pi(y|x,z)]`.
pub fn estimate_verifier(policy: &Policy, task: &TaskInstance, trace: &TokenSeq, answer: &TokenSeq) -> Result<GradEstimate> {
    let r = rewards::reward_verifier(answer, task).value;
    let mut reasoning = ParamVector::zeros(policy.layout());
    let mut answer_part = vec![0.0; policy.num_params()];
    if r != 0.0 {
        policy.accumulate_grad_logprob(&task.prompt, trace, r, &mut reasoning.values)?;
        policy.accumulate_grad_logprob(&task.prompt.concat(trace), answer, r, &mut answer_part)?;
    }
    Ok(GradEstimate::from_parts(EstimatorKind::Verifier, reasoning, answer_part, vec![r], vec![r], None))
}

fn verifree_single(policy: &Policy, task: &TaskInstance, trace: &TokenSeq, target: AnswerTarget) -> Result<GradEstimate> {
    let context = task.prompt.concat(trace);
    let mut answer_part = vec![0.0; policy.num_params()];
    let r = accumulate_answer_term(policy, &context, target.answers(task)?, 1.0, &mut answer_part)?;
    let mut reasoning = ParamVector::zeros(policy.layout());
    policy.accumulate_grad_logprob(&task.prompt, trace, r, &mut reasoning.values)?;
    Ok(GradEstimate::from_parts(EstimatorKind::Verifree, reasoning, answer_part, vec![r], vec![r], None))
}

/// Single-sample verifier-free estimator:
/// `pi(y*|x,z) [grad log pi(z|x) + grad log pi(y*|x,z)]`.
pub fn estimate_verifree(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<GradEstimate> {
    verifree_single(policy, task, trace, AnswerTarget::Reference)
}

/// Equivalence-class form: `sum_y pi(y|x,z) [grad log pi(z|x) + grad log pi(y|x,z)]`
/// over the task's equivalents.
pub fn estimate_verifree_equiv(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<GradEstimate> {
    verifree_single(policy, task, trace, AnswerTarget::Equivalents)
}

fn log_reward_estimate(
    kind: EstimatorKind,
    policy: &Policy,
    task: &TaskInstance,
    trace: &TokenSeq,
    coef: f64,
) -> Result<GradEstimate> {
    let mut reasoning = ParamVector::zeros(policy.layout());
    policy.accumulate_grad_logprob(&task.prompt, trace, coef, &mut reasoning.values)?;
    let mut answer_part = vec![0.0; policy.num_params()];
    policy.accumulate_grad_logprob(&task.prompt.concat(trace), &task.reference, 1.0, &mut answer_part)?;
    Ok(GradEstimate::from_parts(kind, reasoning, answer_part, vec![coef], vec![coef], None))
}

/// `log pi(y*|x,z) grad log pi(z|x) + grad log pi(y*|x,z)`.
pub fn estimate_jlb(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<GradEstimate> {
    let coef = rewards::reward_jlb(policy, task, trace)?.value;
    log_reward_estimate(EstimatorKind::Jlb, policy, task, trace, coef)
}

/// JLB with the reasoning reward corrected by `log pi(z|x)/pi_ref(z|x)`.
pub fn estimate_latro(policy: &Policy, ref_policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<GradEstimate> {
    let coef = rewards::reward_latro(policy, ref_policy, task, trace)?.value;
    log_reward_estimate(EstimatorKind::Latro, policy, task, trace, coef)
}

fn response_scale(norm: LengthNorm, trace_len: usize, answer_len: usize) -> f64 {
    match norm {
        LengthNorm::Sum => 1.0,
        LengthNorm::TokenMean => 1.0 / (trace_len + answer_len).max(1) as f64,
    }
}

/// Group estimator
/// `(1/G) sum_i [A_i grad log pi(z_i|x) + grad_theta sum_{y in targets} pi(y|x,z_i)]`
/// where `R_i = sum_{y in targets} pi(y|x,z_i)` and `A_i` is `R_i` minus the
/// configured baseline. With the reference target and the leave-one-out
/// baseline this is the on-policy RLOO estimator.
pub fn estimate_verifree_group(
    policy: &Policy,
    task: &TaskInstance,
    rollouts: &[Rollout],
    opts: GroupOptions,
) -> Result<GradEstimate> {
    let g = rollouts.len();
    if g < 2 && opts.baseline == Baseline::LeaveOneOut {
        return Err(Error::Precondition(format!("leave-one-out baseline needs G >= 2, got {g}")));
    }
    if g == 0 {
        return Err(Error::Precondition("empty rollout group".into()));
    }
    let targets = opts.target.answers(task)?;
    let inv_g = 1.0 / g as f64;
    let mut answer_part = vec![0.0; policy.num_params()];
    let mut rewards = Vec::with_capacity(g);
    for ro in rollouts {
        let context = task.prompt.concat(&ro.trace);
        let s = inv_g * response_scale(opts.length_norm, ro.trace.len(), task.answer_len());
        rewards.push(accumulate_answer_term(policy, &context, targets, s, &mut answer_part)?);
    }
    let adv = advantages(&rewards, opts.baseline)?;
    let mut reasoning = ParamVector::zeros(policy.layout());
    for (ro, &a) in rollouts.iter().zip(&adv) {
        let s = inv_g * response_scale(opts.length_norm, ro.trace.len(), task.answer_len());
        policy.accumulate_grad_logprob(&task.prompt, &ro.trace, a * s, &mut reasoning.values)?;
    }
    let kind = match opts.baseline {
        Baseline::None => EstimatorKind::Verifree,
        _ => EstimatorKind::VerifreeRloo,
    };
    Ok(GradEstimate::from_parts(kind, reasoning, answer_part, rewards, adv, None))
}

/// Adds the clipped-surrogate gradient of one token and reports whether the
/// token was clipped.
fn ppo_token(
    policy: &Policy,
    history: &[u32],
    token: u32,
    old_logprob: f64,
    weight: f64,
    clip_eps: f64,
    out: &mut [f64],
) -> bool {
    let new_logprob = policy.next_log_probs(history)[token as usize];
    let ratio = (new_logprob - old_logprob).exp();
    let clipped = (weight > 0.0 && ratio > 1.0 + clip_eps) || (weight < 0.0 && ratio < 1.0 - clip_eps);
    if !clipped && weight != 0.0 {
        policy.accumulate_token_grad(history, token, weight * ratio, out);
    }
    clipped
}

/// Off-policy clipped estimator for rollouts drawn from `old_policy`.
///
/// Rewards and advantages are frozen under the sampling policy. Each trace
/// token contributes `A_i * clip(ratio)` and each answer token
/// `pi_old(y|x,z_i) * clip(ratio)`, with the pessimistic PPO rule deciding when
/// the clipped branch (zero gradient) is active.
pub fn estimate_verifree_ppo(
    policy: &Policy,
    old_policy: &Policy,
    task: &TaskInstance,
    rollouts: &[Rollout],
    clip_eps: f64,
    opts: GroupOptions,
) -> Result<GradEstimate> {
    if !(clip_eps > 0.0) {
        return Err(Error::Precondition(format!("clip_eps must be positive, got {clip_eps}")));
    }
    policy.same_layout(old_policy)?;
    for (i, ro) in rollouts.iter().enumerate() {
        if ro.per_token_logprob.len() != ro.trace.len() {
            return Err(Error::MissingOldLogprobs { index: i });
        }
    }
    let g = rollouts.len();
    if g == 0 || (g < 2 && opts.baseline == Baseline::LeaveOneOut) {
        return Err(Error::Precondition(format!("leave-one-out baseline needs G >= 2, got {g}")));
    }
    let targets = opts.target.answers(task)?;
    let inv_g = 1.0 / g as f64;

    // rewards and per-answer weights under the sampling policy
    let mut rewards = Vec::with_capacity(g);
    let mut answer_weights = Vec::with_capacity(g);
    for ro in rollouts {
        let context = task.prompt.concat(&ro.trace);
        let mut ws = Vec::with_capacity(targets.len());
        for y in targets {
            let lps = old_policy.token_logprobs(&context, y)?;
            ws.push((lps.iter().sum::<f64>().exp(), lps));
        }
        rewards.push(ws.iter().map(|(w, _)| w).sum::<f64>());
        answer_weights.push(ws);
    }
    let adv = advantages(&rewards, opts.baseline)?;

    let mut reasoning = ParamVector::zeros(policy.layout());
    let mut answer_part = vec![0.0; policy.num_params()];
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    for ((ro, &a), ws) in rollouts.iter().zip(&adv).zip(&answer_weights) {
        let s = inv_g * response_scale(opts.length_norm, ro.trace.len(), task.answer_len());
        let mut history = task.prompt.0.clone();
        for (&t, &old_lp) in ro.trace.iter().zip(&ro.per_token_logprob) {
            clipped += ppo_token(policy, &history, t, old_lp, a * s, clip_eps, &mut reasoning.values) as usize;
            tokens += 1;
            history.push(t);
        }
        let context = history;
        for (y, (w, old_lps)) in targets.iter().zip(ws) {
            let mut h = context.clone();
            for (&t, &old_lp) in y.iter().zip(old_lps) {
                clipped += ppo_token(policy, &h, t, old_lp, w * s, clip_eps, &mut answer_part) as usize;
                tokens += 1;
                h.push(t);
            }
        }
    }
    let frac = if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 };
    Ok(GradEstimate::from_parts(EstimatorKind::VerifreePpo, reasoning, answer_part, rewards, adv, Some(frac)))
}

/// Group verifier estimator on sampled answers:
/// `(1/G) sum_i A_i [grad log pi(z_i|x) + grad log pi(y_i|x,z_i)]`, with the
/// binary or shaped verifier reward. A trace that never opens the answer
/// counts as a format failure for the shaped reward.
pub fn estimate_verifier_group(
    policy: &Policy,
    task: &TaskInstance,
    rollouts: &[Rollout],
    reward: RewardKind,
    baseline: Baseline,
) -> Result<GradEstimate> {
    if !reward.needs_answer() {
        return Err(Error::Config(format!(
            "estimator.reward `{}` is not a verifier reward",
            reward.name()
        )));
    }
    let g = rollouts.len();
    if g == 0 || (g < 2 && baseline == Baseline::LeaveOneOut) {
        return Err(Error::Precondition(format!("group of {g} rollouts is too small")));
    }
    let open = policy.vocab().answer_open_id();
    let mut rewards = Vec::with_capacity(g);
    for (i, ro) in rollouts.iter().enumerate() {
        let answer = ro
            .answer
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("rollout {i} has no sampled answer")))?;
        let r = match reward {
            RewardKind::ShapedVerifier => {
                rewards::reward_shaped_verifier(answer, task, ro.trace.last() == Some(open)).value
            }
            _ => rewards::reward_verifier(answer, task).value,
        };
        rewards.push(r);
    }
    let adv = advantages(&rewards, baseline)?;
    let inv_g = 1.0 / g as f64;
    let mut reasoning = ParamVector::zeros(policy.layout());
    let mut answer_part = vec![0.0; policy.num_params()];
    for (ro, &a) in rollouts.iter().zip(&adv) {
        if a == 0.0 {
            continue;
        }
        let answer = ro.answer.as_ref().expect("checked above");
        policy.accumulate_grad_logprob(&task.prompt, &ro.trace, a * inv_g, &mut reasoning.values)?;
        policy.accumulate_grad_logprob(&task.prompt.concat(&ro.trace), answer, a * inv_g, &mut answer_part)?;
    }
    Ok(GradEstimate::from_parts(EstimatorKind::Verifier, reasoning, answer_part, rewards, adv, None))
}

/// Mean of single-sample JLB or LaTRO estimates over a group.
pub fn estimate_log_reward_group(
    kind: EstimatorKind,
    policy: &Policy,
    ref_policy: Option<&Policy>,
    task: &TaskInstance,
    rollouts: &[Rollout],
) -> Result<GradEstimate> {
    if rollouts.is_empty() {
        return Err(Error::Precondition("empty rollout group".into()));
    }
    let inv_g = 1.0 / rollouts.len() as f64;
    let mut reasoning = ParamVector::zeros(policy.layout());
    let mut answer_part = vec![0.0; policy.num_params()];
    let mut rewards = Vec::with_capacity(rollouts.len());
    for ro in rollouts {
        let coef = match (kind, ref_policy) {
            (EstimatorKind::Jlb, _) => rewards::reward_jlb(policy, task, &ro.trace)?.value,
            (EstimatorKind::Latro, Some(r)) => rewards::reward_latro(policy, r, task, &ro.trace)?.value,
            (EstimatorKind::Latro, None) => {
                return Err(Error::Precondition("latro needs a reference policy".into()))
            }
            (other, _) => {
                return Err(Error::Precondition(format!("{} is not a log-reward estimator", other.name())))
            }
        };
        rewards.push(coef);
        policy.accumulate_grad_logprob(&task.prompt, &ro.trace, coef * inv_g, &mut reasoning.values)?;
        policy.accumulate_grad_logprob(&task.prompt.concat(&ro.trace), &task.reference, inv_g, &mut answer_part)?;
    }
    let adv = rewards.clone();
    Ok(GradEstimate::from_parts(kind, reasoning, answer_part, rewards, adv, None))
}
