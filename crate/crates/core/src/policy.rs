//! Autoregressive softmax policies with exact log-probabilities and analytic
//! score functions.
//!
//! Both parameterizations store a `rows x vocab` matrix of logit weights. The
//! context of a step is the last `order` tokens of the history, left-padded
//! with a pad symbol (index `vocab`). A tabular policy activates one row per
//! context; a linear policy activates one row per context position plus a bias
//! row and sums them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seqcore::{TokenId, TokenSeq, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    Tabular,
    Linear,
}

impl Parameterization {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(Self::Tabular),
            "linear" | "linear-features" => Ok(Self::Linear),
            other => Err(Error::Config(format!(
                "policy.kind `{other}` (expected tabular or linear)"
            ))),
        }
    }
}

/// Maps flat parameter coordinates onto (row, token) slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub kind: Parameterization,
    pub vocab: usize,
    pub order: usize,
}

/// What one parameter coordinate controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Logit of `token` in the tabular context with index `context`.
    Context { context: usize, token: TokenId },
    /// Weight from `feature` to the logit of `token`.
    Feature { feature: usize, token: TokenId },
}

impl Layout {
    pub fn new(kind: Parameterization, vocab: usize, order: usize) -> Self {
        Self { kind, vocab, order }
    }

    fn radix(&self) -> usize {
        self.vocab + 1
    }

    pub fn rows(&self) -> usize {
        match self.kind {
            Parameterization::Tabular => self.radix().pow(self.order as u32),
            Parameterization::Linear => self.order * self.radix() + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.rows() * self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot(&self, coord: usize) -> Option<Slot> {
        if coord >= self.len() {
            return None;
        }
        let row = coord / self.vocab;
        let token = (coord % self.vocab) as TokenId;
        Some(match self.kind {
            Parameterization::Tabular => Slot::Context { context: row, token },
            Parameterization::Linear => Slot::Feature { feature: row, token },
        })
    }

    /// Rows active for the next-token distribution after `history`.
    pub fn active_rows(&self, history: &[TokenId], rows: &mut Vec<usize>) {
        rows.clear();
        let pad = self.vocab;
        let ctx = |i: usize| -> usize {
            // i-th of the last `order` positions, oldest first
            let back = self.order - i;
            if back <= history.len() {
                history[history.len() - back] as usize
            } else {
                pad
            }
        };
        match self.kind {
            Parameterization::Tabular => {
                let idx = (0..self.order).fold(0usize, |acc, i| acc * self.radix() + ctx(i));
                rows.push(idx);
            }
            Parameterization::Linear => {
                for i in 0..self.order {
                    rows.push(i * self.radix() + ctx(i));
                }
                rows.push(self.order * self.radix());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of {} coordinates",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// In-place `y += a * x`.
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// One sampled reasoning trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    pub trace: TokenSeq,
    /// Scoring log-probabilities (temperature 1) of each trace token.
    pub per_token_logprob: Vec<f64>,
    pub total_logprob: f64,
    /// Log-probabilities under the sampling temperature.
    pub sampling_logprob: Vec<f64>,
    pub temperature: f64,
    pub rng_stream_id: u64,
    /// Sampled answer, for verifier-scored rollouts.
    pub answer: Option<TokenSeq>,
}

impl Rollout {
    pub fn ends_with_open(&self, vocab: &Vocab) -> bool {
        self.trace.last() == Some(vocab.answer_open_id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    pub params: ParamVector,
    vocab: Vocab,
    pub temperature: f64,
}

impl Policy {
    /// Uniform policy (all logits zero).
    pub fn uniform(vocab: Vocab, kind: Parameterization, order: usize) -> Self {
        let layout = Layout::new(kind, vocab.size(), order);
        Self { params: ParamVector::zeros(layout), vocab, temperature: 1.0 }
    }

    /// Policy with i.i.d. Gaussian-ish logit weights of the given scale.
    pub fn random(vocab: Vocab, kind: Parameterization, order: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::uniform(vocab, kind, order);
        for v in p.params.values.iter_mut() {
            // sum of uniforms: cheap, bounded, roughly normal
            let u: f64 = (0..4).map(|_| rng.gen::<f64>() - 0.5).sum();
            *v = scale * u * (3.0f64).sqrt();
        }
        p
    }

    pub fn from_params(vocab: Vocab, params: ParamVector) -> Result<Self> {
        if params.layout.vocab != vocab.size() {
            return Err(Error::LayoutMismatch(format!(
                "layout vocab {} vs vocabulary size {}",
                params.layout.vocab,
                vocab.size()
            )));
        }
        Ok(Self { params, vocab, temperature: 1.0 })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layout(&self) -> Layout {
        self.params.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn same_layout(&self, other: &Policy) -> Result<()> {
        if self.layout() == other.layout() && self.vocab == other.vocab {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!("{:?} vs {:?}", self.layout(), other.layout())))
        }
    }

    fn logits_into(&self, history: &[TokenId], rows: &mut Vec<usize>, logits: &mut [f64]) {
        let v = self.vocab.size();
        self.params.layout.active_rows(history, rows);
        logits.iter_mut().for_each(|l| *l = 0.0);
        for &r in rows.iter() {
            let w = &self.params.values[r * v..(r + 1) * v];
            for (l, x) in logits.iter_mut().zip(w) {
                *l += x;
            }
        }
    }

    pub fn logits(&self, history: &[TokenId]) -> Vec<f64> {
        let mut rows = Vec::with_capacity(self.params.layout.order + 1);
        let mut logits = vec![0.0; self.vocab.size()];
        self.logits_into(history, &mut rows, &mut logits);
        logits
    }

    /// Temperature-1 next-token log-probabilities.
    pub fn next_log_probs(&self, history: &[TokenId]) -> Vec<f64> {
        log_softmax(&self.logits(history))
    }

    fn check(&self, seq: &TokenSeq) -> Result<()> {
        seq.iter().try_for_each(|&t| self.vocab.check_token(t))
    }

    /// Per-token log-probabilities of `continuation` given `prompt`.
    pub fn token_logprobs(&self, prompt: &TokenSeq, continuation: &TokenSeq) -> Result<Vec<f64>> {
        self.check(prompt)?;
        self.check(continuation)?;
        let mut history = prompt.0.clone();
        let mut out = Vec::with_capacity(continuation.len());
        for &t in continuation.iter() {
            let lp = self.next_log_probs(&history);
            out.push(lp[t as usize]);
            history.push(t);
        }
        Ok(out)
    }

    /// log pi(continuation | prompt). An empty continuation has log-probability 0.
    pub fn logprob(&self, prompt: &TokenSeq, continuation: &TokenSeq) -> Result<f64> {
        if continuation.is_empty() {
            log::warn!("logprob of an empty continuation; returning 0");
        }
        Ok(self.token_logprobs(prompt, continuation)?.iter().sum())
    }

    /// Adds `scale * grad log pi(token | history)` into `out`.
    pub fn accumulate_token_grad(&self, history: &[TokenId], token: TokenId, scale: f64, out: &mut [f64]) {
        let v = self.vocab.size();
        let mut rows = Vec::with_capacity(self.params.layout.order + 1);
        let mut logits = vec![0.0; v];
        self.logits_into(history, &mut rows, &mut logits);
        let lp = log_softmax(&logits);
        for &r in &rows {
            let g = &mut out[r * v..(r + 1) * v];
            for (j, (gj, lpj)) in g.iter_mut().zip(&lp).enumerate() {
                let onehot = if j == token as usize { 1.0 } else { 0.0 };
                *gj += scale * (onehot - lpj.exp());
            }
        }
    }

    /// Adds `scale * grad log pi(continuation | prompt)` into `out`.
    pub fn accumulate_grad_logprob(
        &self,
        prompt: &TokenSeq,
        continuation: &TokenSeq,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        self.check(prompt)?;
        self.check(continuation)?;
        if out.len() != self.num_params() {
            return Err(Error::LayoutMismatch(format!(
                "gradient buffer of {} for {} parameters",
                out.len(),
                self.num_params()
            )));
        }
        let mut history = prompt.0.clone();
        for &t in continuation.iter() {
            self.accumulate_token_grad(&history, t, scale, out);
            history.push(t);
        }
        Ok(())
    }

    pub fn grad_logprob(&self, prompt: &TokenSeq, continuation: &TokenSeq) -> Result<ParamVector> {
        let mut g = ParamVector::zeros(self.layout());
        self.accumulate_grad_logprob(prompt, continuation, 1.0, &mut g.values)?;
        Ok(g)
    }

    fn sample_token(&self, history: &[TokenId], rng: &mut ChaCha8Rng) -> (TokenId, f64, f64) {
        let logits = self.logits(history);
        let score = log_softmax(&logits);
        let sampling = if self.temperature == 1.0 {
            score.clone()
        } else {
            log_softmax(&logits.iter().map(|l| l / self.temperature).collect::<Vec<_>>())
        };
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = sampling.len() - 1;
        for (j, lp) in sampling.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                pick = j;
                break;
            }
        }
        (pick as TokenId, score[pick], sampling[pick])
    }

    /// Samples a trace, stopping at the answer-open token or the budget.
    pub fn sample_trace(&self, prompt: &TokenSeq, budget: usize, rng: &mut ChaCha8Rng, stream_id: u64) -> Result<Rollout> {
        if budget < 1 {
            return Err(Error::Precondition("trace budget must be >= 1".into()));
        }
        self.check(prompt)?;
        let open = self.vocab.answer_open_id();
        let mut history = prompt.0.clone();
        let mut trace = Vec::new();
        let mut per_token = Vec::new();
        let mut sampling = Vec::new();
        while trace.len() < budget {
            let (t, lp, slp) = self.sample_token(&history, rng);
            trace.push(t);
            history.push(t);
            per_token.push(lp);
            sampling.push(slp);
            if t == open {
                break;
            }
        }
        Ok(Rollout {
            total_logprob: per_token.iter().sum(),
            trace: TokenSeq(trace),
            per_token_logprob: per_token,
            sampling_logprob: sampling,
            temperature: self.temperature,
            rng_stream_id: stream_id,
            answer: None,
        })
    }

    /// Samples a fixed-length answer after `prompt ++ trace`.
    pub fn sample_answer(&self, prompt: &TokenSeq, trace: &TokenSeq, len: usize, rng: &mut ChaCha8Rng) -> TokenSeq {
        let mut history = prompt.concat(trace).0;
        let mut answer = Vec::with_capacity(len);
        for _ in 0..len {
            let (t, _, _) = self.sample_token(&history, rng);
            answer.push(t);
            history.push(t);
        }
        TokenSeq(answer)
    }

    /// Greedy answer decode; ties go to the lowest token index.
    pub fn greedy_answer(&self, prompt: &TokenSeq, trace: &TokenSeq, len: usize) -> TokenSeq {
        let mut history = prompt.concat(trace).0;
        let mut answer = Vec::with_capacity(len);
        for _ in 0..len {
            let logits = self.logits(&history);
            let mut best = 0;
            for (j, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = j;
                }
            }
            answer.push(best as TokenId);
            history.push(best as TokenId);
        }
        TokenSeq(answer)
    }
}
