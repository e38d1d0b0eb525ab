//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rayon::prelude::*;
use verifree_core::oracle::FixtureSpec;
use verifree_core::policy::log_softmax;
use verifree_core::seqcore::{enumerate_answers, enumerate_traces};
use verifree_core::{Parameterization, Policy, TaskInstance, TokenId, TokenSeq};

/// Fixture shape for sweep index `i`. Shapes cycle through vocab sizes,
/// context orders, budgets, answer lengths and both parameterizations.
pub fn shape(i: usize, equivalents: bool) -> FixtureSpec {
    let vocab = 3 + i % 3;
    let answer_len = 1 + usize::from(i % 4 == 3);
    let space = vocab.pow(answer_len as u32);
    FixtureSpec {
        vocab,
        order: 1 + (i / 3) % 2,
        budget: 2 + (i / 2) % 2,
        answer_len,
        prompt_len: 1 + i % 2,
        equivalents: if equivalents { (1 + i % 3).min(space) } else { 1 },
        kind: if i % 5 == 4 { Parameterization::Linear } else { Parameterization::Tabular },
        logit_scale: 0.5 + 0.5 * (i % 3) as f64,
    }
}

/// Forward-mode derivative of a sequence probability with respect to one
/// parameter coordinate: `(P, dP/dtheta_c)`.
fn seq_prob_dual(policy: &Policy, coord: usize, prompt: &[TokenId], cont: &[TokenId]) -> (f64, f64) {
    let v = policy.vocab().size();
    let (row, tok) = (coord / v, coord % v);
    let layout = policy.layout();
    let mut history = prompt.to_vec();
    let mut rows = Vec::new();
    let (mut p, mut dp) = (1.0, 0.0);
    for &t in cont {
        let lp = log_softmax(&policy.logits(&history));
        layout.active_rows(&history, &mut rows);
        let hits = rows.iter().filter(|&&r| r == row).count() as f64;
        // d p_t = p_t * (dl_t - sum_j p_j dl_j), dl = hits * onehot(tok)
        let pt = lp[t as usize].exp();
        let dpt = pt * hits * (f64::from(u8::from(t as usize == tok)) - lp[tok].exp());
        dp = dp * pt + p * dpt;
        p *= pt;
        history.push(t);
    }
    (p, dp)
}

/// Gradient of the enumerated verifier objective
/// `sum_z sum_{y correct} pi(z|x) pi(y|x,z)` by forward-mode differentiation,
/// one coordinate at a time. Shares no code with the estimators.
pub fn forward_mode_gradient(policy: &Policy, task: &TaskInstance) -> Vec<f64> {
    let traces = enumerate_traces(policy.vocab(), task.trace_budget).unwrap();
    let correct: Vec<TokenSeq> = enumerate_answers(policy.vocab(), task.answer_len(), 1 << 20)
        .unwrap()
        .into_iter()
        .filter(|y| task.is_correct(y))
        .collect();
    (0..policy.num_params())
        .into_par_iter()
        .map(|c| {
            let mut d = 0.0;
            for z in &traces {
                let (pz, dpz) = seq_prob_dual(policy, c, &task.prompt.0, &z.0);
                let ctx = task.prompt.concat(z).0;
                for y in &correct {
                    let (py, dpy) = seq_prob_dual(policy, c, &ctx, &y.0);
                    d += dpz * py + pz * dpy;
                }
            }
            d
        })
        .collect()
}

/// Objective by direct products of softmax probabilities.
pub fn direct_objective(policy: &Policy, task: &TaskInstance) -> f64 {
    let traces = enumerate_traces(policy.vocab(), task.trace_budget).unwrap();
    let answers = enumerate_answers(policy.vocab(), task.answer_len(), 1 << 20).unwrap();
    let mut j = 0.0;
    for z in &traces {
        let (pz, _) = seq_prob_dual(policy, 0, &task.prompt.0, &z.0);
        let ctx = task.prompt.concat(z).0;
        for y in answers.iter().filter(|y| task.is_correct(y)) {
            j += pz * seq_prob_dual(policy, 0, &ctx, &y.0).0;
        }
    }
    j
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
