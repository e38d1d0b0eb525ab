//! Scalar rewards: the verifier indicator, the policy's own probability of the
//! reference answer, its equivalence-class extension, the variational
//! log-likelihood rewards and the shaped verifier reward used by the baseline.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::seqcore::{TaskInstance, TokenSeq};

/// Penalty added when the response format is broken.
pub const FORMAT_PENALTY: f64 = -0.5;
/// Per-token penalty on the answer length mismatch.
pub const LENGTH_PENALTY_PER_TOKEN: f64 = -0.05;
/// Length mismatch beyond which the penalty stops growing.
pub const LENGTH_PENALTY_CAP: usize = 10;

/// Tolerance on equivalence-class probability mass exceeding one.
const EQUIV_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Verifier,
    Verifree,
    VerifreeEquiv,
    Jlb,
    Latro,
    ShapedVerifier,
}

impl RewardKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "verifier" => Self::Verifier,
            "verifree" => Self::Verifree,
            "verifree-equiv" => Self::VerifreeEquiv,
            "jlb" => Self::Jlb,
            "latro" => Self::Latro,
            "shaped-verifier" => Self::ShapedVerifier,
            other => return Err(Error::Config(format!("estimator.reward `{other}` is not a reward kind"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Verifier => "verifier",
            Self::Verifree => "verifree",
            Self::VerifreeEquiv => "verifree-equiv",
            Self::Jlb => "jlb",
            Self::Latro => "latro",
            Self::ShapedVerifier => "shaped-verifier",
        }
    }

    /// Binary-valued (before shaping) rewards that need a sampled answer.
    pub fn needs_answer(self) -> bool {
        matches!(self, Self::Verifier | Self::ShapedVerifier)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RewardDiagnostics {
    pub correctness: Option<f64>,
    pub format_penalty: Option<f64>,
    pub length_penalty: Option<f64>,
    /// log pi(y*|x,z) for the log-likelihood rewards.
    pub answer_logprob: Option<f64>,
    /// log pi(z|x) - log pi_ref(z|x).
    pub kl_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardValue {
    pub value: f64,
    pub kind: RewardKind,
    pub diagnostics: RewardDiagnostics,
}

impl RewardValue {
    fn plain(value: f64, kind: RewardKind) -> Self {
        Self { value, kind, diagnostics: RewardDiagnostics::default() }
    }
}

pub fn reward_verifier(answer: &TokenSeq, task: &TaskInstance) -> RewardValue {
    let value = if task.is_correct(answer) { 1.0 } else { 0.0 };
    RewardValue::plain(value, RewardKind::Verifier)
}

/// pi(y* | x, z): the expected verifier reward given the trace when the
/// reference is the only correct answer.
pub fn reward_verifree(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<RewardValue> {
    let lp = policy.logprob(&task.prompt.concat(trace), &task.reference)?;
    let mut r = RewardValue::plain(lp.exp(), RewardKind::Verifree);
    r.diagnostics.answer_logprob = Some(lp);
    Ok(r)
}

/// Sum of pi(y | x, z) over the task's equivalence class.
pub fn reward_verifree_equiv(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<RewardValue> {
    if task.equivalents.is_empty() {
        return Err(Error::Precondition(format!("task {} has no equivalence class", task.id)));
    }
    let context = task.prompt.concat(trace);
    let mut total = 0.0;
    for y in &task.equivalents {
        total += policy.logprob(&context, y)?.exp();
    }
    if total > 1.0 + EQUIV_MASS_TOL {
        return Err(Error::MassNotConserved { mass: total, tol: EQUIV_MASS_TOL });
    }
    Ok(RewardValue::plain(total, RewardKind::VerifreeEquiv))
}

pub fn reward_jlb(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<RewardValue> {
    let lp = policy.logprob(&task.prompt.concat(trace), &task.reference)?;
    let mut r = RewardValue::plain(lp, RewardKind::Jlb);
    r.diagnostics.answer_logprob = Some(lp);
    Ok(r)
}

/// log pi(y*|x,z) - log(pi(z|x) / pi_ref(z|x)).
pub fn reward_latro(policy: &Policy, ref_policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<RewardValue> {
    if policy.vocab() != ref_policy.vocab() {
        return Err(Error::LayoutMismatch("policy and reference policy use different vocabularies".into()));
    }
    let answer_lp = policy.logprob(&task.prompt.concat(trace), &task.reference)?;
    let log_ratio = policy.logprob(&task.prompt, trace)? - ref_policy.logprob(&task.prompt, trace)?;
    Ok(RewardValue {
        value: answer_lp - log_ratio,
        kind: RewardKind::Latro,
        diagnostics: RewardDiagnostics {
            answer_logprob: Some(answer_lp),
            kl_term: Some(log_ratio),
            ..Default::default()
        },
    })
}

/// Verifier reward with a format penalty and a capped length penalty.
pub fn reward_shaped_verifier(answer: &TokenSeq, task: &TaskInstance, format_ok: bool) -> RewardValue {
    let correctness = reward_verifier(answer, task).value;
    let format = if format_ok { 0.0 } else { FORMAT_PENALTY };
    let diff = task.reference.len().abs_diff(answer.len()).min(LENGTH_PENALTY_CAP);
    let length = LENGTH_PENALTY_PER_TOKEN * diff as f64;
    RewardValue {
        value: correctness + format + length,
        kind: RewardKind::ShapedVerifier,
        diagnostics: RewardDiagnostics {
            correctness: Some(correctness),
            format_penalty: Some(format),
            length_penalty: Some(length),
            ..Default::default()
        },
    }
}
