//! Tokens, sequences, vocabularies and task definitions, plus the exhaustive
//! enumeration of trace space used by the oracle.
//!
//! A trace is sampled token by token until the answer-open token is emitted or
//! the trace budget is exhausted. Budget-exhausted traces are kept as leaves, so
//! the enumerated set is prefix-free and carries all of the probability mass.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Default cap on the number of sequences an enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vocab {
    size: usize,
    stop_id: TokenId,
    answer_open_id: TokenId,
    display: Vec<String>,
}

impl Vocab {
    /// Vocabulary with distinct answer-open and stop tokens.
    pub fn new(size: usize, answer_open_id: TokenId, stop_id: TokenId) -> Result<Self> {
        if stop_id == answer_open_id {
            return Err(Error::InvalidVocab(
                "stop_id equals answer_open_id; use with_combined_terminator".into(),
            ));
        }
        Self::build(size, answer_open_id, stop_id)
    }

    /// Vocabulary where one token both opens the answer and ends the trace.
    pub fn with_combined_terminator(size: usize, terminator: TokenId) -> Result<Self> {
        Self::build(size, terminator, terminator)
    }

    fn build(size: usize, answer_open_id: TokenId, stop_id: TokenId) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocab(format!("size {size} < 2")));
        }
        for (name, id) in [("answer_open_id", answer_open_id), ("stop_id", stop_id)] {
            if id as usize >= size {
                return Err(Error::InvalidVocab(format!("{name} {id} out of range for size {size}")));
            }
        }
        let display = (0..size as TokenId)
            .map(|t| {
                if t == answer_open_id {
                    "<answer".to_string()
                } else if t == stop_id {
                    "</answer>".to_string()
                } else {
                    format!("s{t}")
                }
            })
            .collect();
        Ok(Self { size, stop_id, answer_open_id, display })
    }

    pub fn with_display(mut self, display: Vec<String>) -> Result<Self> {
        if display.len() != self.size {
            return Err(Error::InvalidVocab(format!(
                "{} display labels for {} tokens",
                display.len(),
                self.size
            )));
        }
        self.display = display;
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stop_id(&self) -> TokenId {
        self.stop_id
    }

    pub fn answer_open_id(&self) -> TokenId {
        self.answer_open_id
    }

    pub fn label(&self, token: TokenId) -> &str {
        &self.display[token as usize]
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.size {
            Ok(())
        } else {
            Err(Error::InvalidToken { token, vocab: self.size })
        }
    }

    pub fn render(&self, seq: &TokenSeq) -> String {
        seq.iter().map(|&t| self.label(t)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TokenId> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        TokenSeq(v)
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }

    /// Checks the trace invariant: the answer-open token may only appear last.
    pub fn is_valid_trace(&self, vocab: &Vocab, budget: usize) -> bool {
        if self.is_empty() || self.len() > budget {
            return false;
        }
        let open = vocab.answer_open_id();
        let body = &self.0[..self.len() - 1];
        body.iter().all(|&t| t != open && (t as usize) < vocab.size())
            && (self.0[self.len() - 1] as usize) < vocab.size()
            && (self.last() == Some(open) || self.len() == budget)
    }

    pub fn is_prefix_of(&self, other: &TokenSeq) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskInstance {
    pub id: usize,
    pub prompt: TokenSeq,
    pub reference: TokenSeq,
    /// Alternate correct answers; includes `reference` whenever non-empty.
    pub equivalents: Vec<TokenSeq>,
    pub trace_budget: usize,
}

impl TaskInstance {
    pub fn new(
        id: usize,
        prompt: TokenSeq,
        reference: TokenSeq,
        equivalents: Vec<TokenSeq>,
        trace_budget: usize,
    ) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::InvalidTask("reference is empty".into()));
        }
        if trace_budget < 1 {
            return Err(Error::InvalidTask("trace_budget must be >= 1".into()));
        }
        if !equivalents.is_empty() && !equivalents.contains(&reference) {
            return Err(Error::InvalidTask("equivalents must include the reference".into()));
        }
        // Answers are scored over a fixed-length answer slot.
        if let Some(bad) = equivalents.iter().find(|e| e.len() != reference.len()) {
            return Err(Error::InvalidTask(format!(
                "equivalent {bad} has length {} but the reference has length {}",
                bad.len(),
                reference.len()
            )));
        }
        let mut seen = HashSet::new();
        if !equivalents.iter().all(|e| seen.insert(e)) {
            return Err(Error::InvalidTask("duplicate equivalents".into()));
        }
        Ok(Self { id, prompt, reference, equivalents, trace_budget })
    }

    pub fn answer_len(&self) -> usize {
        self.reference.len()
    }

    /// The set of answers the verifier accepts.
    pub fn correct_answers(&self) -> &[TokenSeq] {
        if self.equivalents.is_empty() {
            std::slice::from_ref(&self.reference)
        } else {
            &self.equivalents
        }
    }

    pub fn is_correct(&self, answer: &TokenSeq) -> bool {
        self.correct_answers().contains(answer)
    }

    pub fn check_tokens(&self, vocab: &Vocab) -> Result<()> {
        for seq in std::iter::once(&self.prompt)
            .chain(std::iter::once(&self.reference))
            .chain(self.equivalents.iter())
        {
            for &t in seq.iter() {
                vocab.check_token(t)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Lookup,
    Parity,
    MultiAnswer,
}

impl FamilyKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "lookup" => Ok(Self::Lookup),
            "parity" => Ok(Self::Parity),
            "multi-answer" => Ok(Self::MultiAnswer),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lookup => "lookup",
            Self::Parity => "parity",
            Self::MultiAnswer => "multi-answer",
        }
    }
}

/// Deterministic generator of task instances.
///
/// Vocabulary layout: `symbols` plain tokens `0..symbols`, then the answer-open
/// token, then the stop token. Lookup and multi-answer prompts are `[key]`, or
/// `[key, distractor]` when `distractors > 0`; instance `i` has key
/// `i % keys` and distractor `i / keys`. Parity prompts are `bits` binary
/// tokens and the reference is their XOR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskFamily {
    pub kind: FamilyKind,
    pub seed: u64,
    pub symbols: usize,
    pub keys: usize,
    pub distractors: usize,
    pub bits: usize,
    pub trace_budget: usize,
    table: Vec<TokenId>,
    alt_table: Vec<TokenId>,
    parity_order: Vec<u64>,
}

impl TaskFamily {
    pub fn lookup(seed: u64, symbols: usize, trace_budget: usize) -> Result<Self> {
        Self::build(FamilyKind::Lookup, seed, symbols, symbols, 0, 0, trace_budget)
    }

    pub fn multi_answer(seed: u64, symbols: usize, trace_budget: usize) -> Result<Self> {
        Self::build(FamilyKind::MultiAnswer, seed, symbols, symbols, 0, 0, trace_budget)
    }

    pub fn parity(seed: u64, bits: usize, trace_budget: usize) -> Result<Self> {
        Self::build(FamilyKind::Parity, seed, 2, 0, 0, bits, trace_budget)
    }

    /// General constructor. `keys` and `distractors` apply to lookup and
    /// multi-answer; `bits` applies to parity (where `symbols` is forced to 2).
    pub fn build(
        kind: FamilyKind,
        seed: u64,
        symbols: usize,
        keys: usize,
        distractors: usize,
        bits: usize,
        trace_budget: usize,
    ) -> Result<Self> {
        if trace_budget < 1 {
            return Err(Error::Config("task.trace_budget must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fam = Self {
            kind,
            seed,
            symbols,
            keys,
            distractors,
            bits,
            trace_budget,
            table: Vec::new(),
            alt_table: Vec::new(),
            parity_order: Vec::new(),
        };
        match kind {
            FamilyKind::Lookup | FamilyKind::MultiAnswer => {
                if symbols < 2 {
                    return Err(Error::Config("task.symbols must be >= 2".into()));
                }
                if keys < 1 || keys > symbols {
                    return Err(Error::Config(format!(
                        "task.keys must be in 1..={symbols}, got {keys}"
                    )));
                }
                if distractors > symbols {
                    return Err(Error::Config(format!(
                        "task.distractors must be <= task.symbols ({symbols})"
                    )));
                }
                fam.table = (0..keys).map(|_| rng.gen_range(0..symbols as TokenId)).collect();
                fam.alt_table = fam
                    .table
                    .iter()
                    .map(|&a| {
                        let shift = rng.gen_range(1..symbols as TokenId);
                        (a + shift) % symbols as TokenId
                    })
                    .collect();
            }
            FamilyKind::Parity => {
                if !(1..=16).contains(&bits) {
                    return Err(Error::Config("task.bits must be in 1..=16".into()));
                }
                fam.symbols = 2;
                let mut order: Vec<u64> = (0..(1u64 << bits)).collect();
                order.shuffle(&mut rng);
                fam.parity_order = order;
            }
        }
        Ok(fam)
    }

    /// Same structure, regenerated from another seed.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        Self::build(self.kind, seed, self.symbols, self.keys, self.distractors, self.bits, self.trace_budget)
    }

    /// Replaces the lookup table (lookup and multi-answer families).
    pub fn with_table(mut self, table: Vec<TokenId>) -> Result<Self> {
        if self.kind == FamilyKind::Parity {
            return Err(Error::Config("parity family has no lookup table".into()));
        }
        if table.iter().any(|&a| a as usize >= self.symbols) {
            return Err(Error::Config("lookup table entry out of symbol range".into()));
        }
        self.keys = table.len();
        self.alt_table = table.iter().map(|&a| (a + 1) % self.symbols as TokenId).collect();
        self.table = table;
        Ok(self)
    }

    pub fn table(&self) -> &[TokenId] {
        &self.table
    }

    pub fn vocab(&self) -> Vocab {
        let n = self.symbols as TokenId;
        let mut display: Vec<String> = match self.kind {
            FamilyKind::Parity => vec!["0".into(), "1".into()],
            _ => (0..n).map(|t| format!("s{t}")).collect(),
        };
        display.push("<answer".into());
        display.push("</answer>".into());
        Vocab::new(self.symbols + 2, n, n + 1)
            .and_then(|v| v.with_display(display))
            .expect("family vocabulary is well-formed")
    }

    pub fn instance_count(&self) -> usize {
        match self.kind {
            FamilyKind::Lookup | FamilyKind::MultiAnswer => self.keys * self.distractors.max(1),
            FamilyKind::Parity => self.parity_order.len(),
        }
    }

    pub fn make_task(&self, index: usize) -> Result<TaskInstance> {
        if index >= self.instance_count() {
            return Err(Error::Precondition(format!(
                "instance index {index} >= instance count {}",
                self.instance_count()
            )));
        }
        match self.kind {
            FamilyKind::Lookup | FamilyKind::MultiAnswer => {
                let key = index % self.keys;
                let mut prompt = vec![key as TokenId];
                if self.distractors > 0 {
                    prompt.push((index / self.keys) as TokenId);
                }
                let reference = TokenSeq(vec![self.table[key]]);
                let equivalents = if self.kind == FamilyKind::MultiAnswer {
                    vec![reference.clone(), TokenSeq(vec![self.alt_table[key]])]
                } else {
                    Vec::new()
                };
                TaskInstance::new(index, TokenSeq(prompt), reference, equivalents, self.trace_budget)
            }
            FamilyKind::Parity => {
                let code = self.parity_order[index];
                let bits: Vec<TokenId> =
                    (0..self.bits).map(|b| ((code >> (self.bits - 1 - b)) & 1) as TokenId).collect();
                self.parity_task(index, &bits)
            }
        }
    }

    /// Parity instance for an explicit bit string.
    pub fn parity_task(&self, id: usize, bits: &[TokenId]) -> Result<TaskInstance> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidTask("parity prompt must be binary".into()));
        }
        let parity = bits.iter().fold(0, |acc, &b| acc ^ b);
        TaskInstance::new(id, TokenSeq(bits.to_vec()), TokenSeq(vec![parity]), Vec::new(), self.trace_budget)
    }

    pub fn tasks(&self) -> Result<Vec<TaskInstance>> {
        (0..self.instance_count()).map(|i| self.make_task(i)).collect()
    }

    /// Deterministic train / held-out partition of instance indices.
    pub fn split(&self, holdout: usize) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.instance_count()).collect();
        if holdout == 0 {
            return (idx, Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5711_7000_0001);
        idx.shuffle(&mut rng);
        let holdout = holdout.min(idx.len().saturating_sub(1));
        let held = idx.split_off(idx.len() - holdout);
        let mut train = idx;
        train.sort_unstable();
        let mut held = held;
        held.sort_unstable();
        (train, held)
    }
}

fn count_traces(branch: u128, budget: usize) -> u128 {
    // sum_{k<budget} branch^k + branch^budget, saturating
    let mut total: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 0..budget {
        total = total.saturating_add(pow);
        pow = pow.saturating_mul(branch);
    }
    total.saturating_add(pow)
}

/// Every trace of length at most `budget`: sequences ending in the answer-open
/// token, plus the budget-length sequences that never emit it.
pub fn enumerate_traces(vocab: &Vocab, budget: usize) -> Result<Vec<TokenSeq>> {
    enumerate_traces_capped(vocab, budget, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_traces_capped(vocab: &Vocab, budget: usize, cap: usize) -> Result<Vec<TokenSeq>> {
    if budget < 1 {
        return Err(Error::Precondition("trace budget must be >= 1".into()));
    }
    let open = vocab.answer_open_id();
    let body: Vec<TokenId> = (0..vocab.size() as TokenId).filter(|&t| t != open).collect();
    let count = count_traces(body.len() as u128, budget);
    if count > cap as u128 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    for depth in 0..budget {
        let mut next = Vec::with_capacity(frontier.len() * body.len());
        for prefix in &frontier {
            let mut closed = prefix.clone();
            closed.push(open);
            out.push(TokenSeq(closed));
            for &t in &body {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        frontier = next;
        if depth + 1 == budget {
            out.extend(frontier.drain(..).map(TokenSeq));
        }
    }
    Ok(out)
}

/// All answers of a fixed length over the full vocabulary.
pub fn enumerate_answers(vocab: &Vocab, len: usize, cap: usize) -> Result<Vec<TokenSeq>> {
    let count = (vocab.size() as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    let mut out = vec![Vec::with_capacity(len)];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p: Vec<TokenId>| {
                (0..vocab.size() as TokenId).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    Ok(out.into_iter().map(TokenSeq).collect())
}
