//! Ground truth by exhaustive enumeration of trace and answer space.
//!
//! Every quantity here is an exact probability-weighted sum. Sums over traces
//! are split into fixed-size chunks that may run on any number of threads;
//! partial results are always combined in chunk order, so reports are
//! bit-reproducible regardless of worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{self, AnswerTarget};
use crate::policy::{axpy, norm, ParamVector, Parameterization, Policy};
use crate::seqcore::{
    enumerate_answers, enumerate_traces_capped, TaskInstance, TokenId, TokenSeq, Vocab, DEFAULT_ENUMERATION_CAP,
};

/// Tolerance on the total enumerated trace mass.
pub const MASS_TOL: f64 = 1e-12;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Absolute floor in the relative-error denominator.
pub const FD_FLOOR: f64 = 1e-8;

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    /// Expected verifier reward over sampled (trace, answer) pairs.
    Verifier,
    /// Expected probability of the reference answer over sampled traces.
    Verifree,
    /// Expected equivalence-class probability over sampled traces.
    VerifreeEquiv,
}

/// Enumerated traces with their probabilities under `policy`.
#[derive(Debug, Clone)]
pub struct TraceSupport {
    pub traces: Vec<TokenSeq>,
    pub probs: Vec<f64>,
}

impl TraceSupport {
    pub fn new(policy: &Policy, task: &TaskInstance) -> Result<Self> {
        Self::with_cap(policy, task, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(policy: &Policy, task: &TaskInstance, cap: usize) -> Result<Self> {
        let traces = enumerate_traces_capped(policy.vocab(), task.trace_budget, cap)?;
        let probs = traces
            .par_iter()
            .map(|z| policy.logprob(&task.prompt, z).map(f64::exp))
            .collect::<Result<Vec<_>>>()?;
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::MassNotConserved { mass, tol: MASS_TOL });
        }
        Ok(Self { traces, probs })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Ordered, chunked reduction of `f(trace, prob)` vectors of length `dim`.
    fn reduce<F>(&self, dim: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&TokenSeq, f64, &mut [f64]) -> Result<()> + Sync,
    {
        let idx: Vec<usize> = (0..self.len()).collect();
        let partials = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = vec![0.0; dim];
                for &i in chunk {
                    f(&self.traces[i], self.probs[i], &mut acc)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = vec![0.0; dim];
        for p in &partials {
            axpy(&mut total, 1.0, p);
        }
        Ok(total)
    }
}

fn answer_space(policy: &Policy, task: &TaskInstance) -> Result<Vec<TokenSeq>> {
    enumerate_answers(policy.vocab(), task.answer_len(), DEFAULT_ENUMERATION_CAP)
}

fn target_for(task: &TaskInstance) -> AnswerTarget {
    if task.equivalents.is_empty() {
        AnswerTarget::Reference
    } else {
        AnswerTarget::Equivalents
    }
}

pub fn exact_objective(policy: &Policy, task: &TaskInstance, mode: ObjectiveMode) -> Result<f64> {
    let support = TraceSupport::new(policy, task)?;
    exact_objective_on(&support, policy, task, mode)
}

pub fn exact_objective_on(support: &TraceSupport, policy: &Policy, task: &TaskInstance, mode: ObjectiveMode) -> Result<f64> {
    let answers = match mode {
        ObjectiveMode::Verifier => answer_space(policy, task)?,
        ObjectiveMode::Verifree => vec![task.reference.clone()],
        ObjectiveMode::VerifreeEquiv => AnswerTarget::Equivalents.answers(task)?.to_vec(),
    };
    let total = support.reduce(1, |z, pz, acc| {
        let ctx = task.prompt.concat(z);
        let mut inner = 0.0;
        for y in &answers {
            let hit = match mode {
                ObjectiveMode::Verifier => task.is_correct(y),
                _ => true,
            };
            if hit {
                inner += policy.logprob(&ctx, y)?.exp();
            }
        }
        acc[0] += pz * inner;
        Ok(())
    })?;
    Ok(total[0])
}

/// Mean exact objective over a set of tasks.
pub fn mean_objective(policy: &Policy, tasks: &[TaskInstance], mode: ObjectiveMode) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for t in tasks {
        sum += exact_objective(policy, t, mode)?;
    }
    Ok(sum / tasks.len() as f64)
}

/// Probability-weighted sum of the single-sample estimator over the sample
/// space: all (trace, answer) pairs for the verifier, all traces otherwise.
pub fn exact_gradient(policy: &Policy, task: &TaskInstance, mode: ObjectiveMode) -> Result<ParamVector> {
    let support = TraceSupport::new(policy, task)?;
    exact_gradient_on(&support, policy, task, mode)
}

pub fn exact_gradient_on(
    support: &TraceSupport,
    policy: &Policy,
    task: &TaskInstance,
    mode: ObjectiveMode,
) -> Result<ParamVector> {
    let answers = if mode == ObjectiveMode::Verifier { answer_space(policy, task)? } else { Vec::new() };
    let values = support.reduce(policy.num_params(), |z, pz, acc| {
        match mode {
            ObjectiveMode::Verifier => {
                let ctx = task.prompt.concat(z);
                for y in &answers {
                    let w = pz * policy.logprob(&ctx, y)?.exp();
                    let g = estimators::estimate_verifier(policy, task, z, y)?;
                    axpy(acc, w, &g.vector.values);
                }
            }
            ObjectiveMode::Verifree => {
                axpy(acc, pz, &estimators::estimate_verifree(policy, task, z)?.vector.values);
            }
            ObjectiveMode::VerifreeEquiv => {
                axpy(acc, pz, &estimators::estimate_verifree_equiv(policy, task, z)?.vector.values);
            }
        }
        Ok(())
    })?;
    ParamVector::from_values(policy.layout(), values)
}

/// `E_{y ~ pi(.|x,z)}` of the verifier estimator for a fixed trace, by
/// enumerating one answer step.
pub fn conditional_verifier_expectation(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<Vec<f64>> {
    let ctx = task.prompt.concat(trace);
    let mut acc = vec![0.0; policy.num_params()];
    for y in answer_space(policy, task)? {
        let w = policy.logprob(&ctx, &y)?.exp();
        axpy(&mut acc, w, &estimators::estimate_verifier(policy, task, trace, &y)?.vector.values);
    }
    Ok(acc)
}

/// Verifier-free estimator on the task's correct-answer set (the reference
/// alone, or the equivalence class when present).
fn verifree_on_correct_set(policy: &Policy, task: &TaskInstance, trace: &TokenSeq) -> Result<Vec<f64>> {
    let est = match target_for(task) {
        AnswerTarget::Reference => estimators::estimate_verifree(policy, task, trace)?,
        AnswerTarget::Equivalents => estimators::estimate_verifree_equiv(policy, task, trace)?,
    };
    Ok(est.vector.values)
}

/// Largest per-trace deviation between the conditional expectation of the
/// verifier estimator and the verifier-free estimator.
pub fn rao_blackwell_max_deviation(policy: &Policy, task: &TaskInstance) -> Result<f64> {
    let support = TraceSupport::new(policy, task)?;
    let devs = support
        .traces
        .par_iter()
        .map(|z| {
            let a = conditional_verifier_expectation(policy, task, z)?;
            let b = verifree_on_correct_set(policy, task, z)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerCoordinate {
    pub verifier: Vec<f64>,
    pub verifree: Vec<f64>,
    pub inner: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub task_id: usize,
    pub policy_seed: Option<u64>,
    /// Trace of the covariance of the single-sample verifier estimator.
    pub var_verifier_trace: f64,
    /// Trace of the covariance of the single-sample verifier-free estimator.
    pub var_verifree_trace: f64,
    /// `E_z[ trace Var_{y|z} ]` of the verifier estimator.
    pub decomposition_inner: f64,
    /// Largest coordinate difference between the two estimator means.
    pub mean_gap: f64,
    pub per_coordinate: Option<PerCoordinate>,
}

/// Slack on the variance inequality for round-off in separately summed traces.
pub const VARIANCE_SLACK: f64 = 1e-12;
pub const DECOMPOSITION_TOL: f64 = 1e-10;

impl VarianceReport {
    pub fn gap(&self) -> f64 {
        self.var_verifier_trace - self.var_verifree_trace
    }

    pub fn inequality_ok(&self) -> bool {
        self.var_verifree_trace <= self.var_verifier_trace + VARIANCE_SLACK * self.var_verifier_trace.max(1.0)
            && self.var_verifier_trace >= 0.0
            && self.var_verifree_trace >= 0.0
    }

    pub fn decomposition_error(&self) -> f64 {
        (self.gap() - self.decomposition_inner).abs()
    }

    pub fn decomposition_ok(&self) -> bool {
        self.decomposition_error() <= DECOMPOSITION_TOL
    }
}

/// Exact covariance traces of the verifier and verifier-free single-sample
/// estimators, plus the inner conditional-variance term, all by enumeration.
pub fn exact_estimator_covariance(policy: &Policy, task: &TaskInstance, per_coordinate: bool) -> Result<VarianceReport> {
    let support = TraceSupport::new(policy, task)?;
    let answers = answer_space(policy, task)?;
    let p = policy.num_params();

    // pass 1: means
    let means = support.reduce(2 * p, |z, pz, acc| {
        let ctx = task.prompt.concat(z);
        let (mv, mf) = acc.split_at_mut(p);
        for y in &answers {
            let w = pz * policy.logprob(&ctx, y)?.exp();
            axpy(mv, w, &estimators::estimate_verifier(policy, task, z, y)?.vector.values);
        }
        axpy(mf, pz, &verifree_on_correct_set(policy, task, z)?);
        Ok(())
    })?;
    let (mean_v, mean_f) = means.split_at(p);

    // pass 2: centred second moments, diagonal per coordinate
    let moments = support.reduce(3 * p, |z, pz, acc| {
        let ctx = task.prompt.concat(z);
        let (dv, rest) = acc.split_at_mut(p);
        let (df, di) = rest.split_at_mut(p);
        let mut outcomes = Vec::with_capacity(answers.len());
        let mut cond_mean = vec![0.0; p];
        for y in &answers {
            let wy = policy.logprob(&ctx, y)?.exp();
            let g = estimators::estimate_verifier(policy, task, z, y)?.vector.values;
            axpy(&mut cond_mean, wy, &g);
            outcomes.push((wy, g));
        }
        for (wy, g) in &outcomes {
            let w = pz * wy;
            for k in 0..p {
                let d = g[k] - mean_v[k];
                dv[k] += w * d * d;
                let c = g[k] - cond_mean[k];
                di[k] += w * c * c;
            }
        }
        let gf = verifree_on_correct_set(policy, task, z)?;
        for k in 0..p {
            let d = gf[k] - mean_f[k];
            df[k] += pz * d * d;
        }
        Ok(())
    })?;
    let (dv, rest) = moments.split_at(p);
    let (df, di) = rest.split_at(p);
    let mean_gap = mean_v.iter().zip(mean_f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(VarianceReport {
        task_id: task.id,
        policy_seed: None,
        var_verifier_trace: dv.iter().sum(),
        var_verifree_trace: df.iter().sum(),
        decomposition_inner: di.iter().sum(),
        mean_gap,
        per_coordinate: per_coordinate.then(|| PerCoordinate {
            verifier: dv.to_vec(),
            verifree: df.to_vec(),
            inner: di.to_vec(),
        }),
    })
}

/// Central finite differences of `f` at `params`.
pub fn finite_difference<F>(params: &ParamVector, step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    (0..params.len())
        .into_par_iter()
        .map(|k| {
            let mut plus = params.clone();
            plus.values[k] += step;
            let mut minus = params.clone();
            minus.values[k] -= step;
            Ok((f(&plus)? - f(&minus)?) / (2.0 * step))
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`; zero for empty vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    if analytic.is_empty() {
        return 0.0;
    }
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(floor)
}

/// Compares an analytic gradient with central differences of `f`.
pub fn check_gradient<F>(params: &ParamVector, analytic: &[f64], f: F) -> Result<f64>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    let numeric = finite_difference(params, FD_STEP, f)?;
    Ok(relative_error(analytic, &numeric, FD_FLOOR))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub task_id: usize,
    /// Worst relative error of `grad_logprob` over the checked continuations.
    pub logprob: f64,
    pub objective_verifier: f64,
    pub objective_verifree: f64,
    pub mass_error: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.logprob.max(self.objective_verifier).max(self.objective_verifree)
    }
}

/// Finite-difference checks of `grad_logprob` and `exact_gradient`. Failures
/// show up as large errors in the report rather than as `Err`.
pub fn check_gradients(policy: &Policy, task: &TaskInstance) -> Result<GradCheckReport> {
    let support = TraceSupport::new(policy, task)?;
    let mass_error = (support.probs.iter().sum::<f64>() - 1.0).abs();
    let picks = [0, support.len() / 2, support.len() - 1];
    let mut logprob_err: f64 = 0.0;
    for &i in &picks {
        let cont = support.traces[i].concat(&task.reference);
        let analytic = policy.grad_logprob(&task.prompt, &cont)?;
        let err = check_gradient(&policy.params, &analytic.values, |theta| {
            Policy::from_params(policy.vocab().clone(), theta.clone())?.logprob(&task.prompt, &cont)
        })?;
        logprob_err = logprob_err.max(err);
    }
    let mut objective = [0.0; 2];
    for (slot, mode) in objective.iter_mut().zip([ObjectiveMode::Verifier, ObjectiveMode::Verifree]) {
        let analytic = exact_gradient_on(&support, policy, task, mode)?;
        *slot = check_gradient(&policy.params, &analytic.values, |theta| {
            let p = Policy::from_params(policy.vocab().clone(), theta.clone())?;
            exact_objective(&p, task, mode)
        })?;
    }
    Ok(GradCheckReport {
        task_id: task.id,
        logprob: logprob_err,
        objective_verifier: objective[0],
        objective_verifree: objective[1],
        mass_error,
    })
}

/// Shape of a randomly generated (policy, task) fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixtureSpec {
    /// Vocabulary size; the last two tokens are answer-open and stop.
    pub vocab: usize,
    pub order: usize,
    pub budget: usize,
    pub answer_len: usize,
    pub prompt_len: usize,
    /// Number of correct answers; 1 means a unique reference.
    pub equivalents: usize,
    pub kind: Parameterization,
    pub logit_scale: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            vocab: 4,
            order: 2,
            budget: 3,
            answer_len: 1,
            prompt_len: 1,
            equivalents: 1,
            kind: Parameterization::Tabular,
            logit_scale: 1.0,
        }
    }
}

/// Deterministic random (policy, task) pair for oracle sweeps.
pub fn random_fixture(seed: u64, spec: FixtureSpec) -> Result<(Policy, TaskInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.vocab as TokenId;
    let vocab = Vocab::new(spec.vocab, n - 2, n - 1)?;
    let policy = Policy::random(vocab.clone(), spec.kind, spec.order, spec.logit_scale, &mut rng);
    let prompt = TokenSeq((0..spec.prompt_len).map(|_| rng.gen_range(0..n - 2)).collect());
    let mut answers: Vec<TokenSeq> = Vec::new();
    let space = (spec.vocab as u128).pow(spec.answer_len as u32);
    if spec.equivalents as u128 > space {
        return Err(Error::Precondition("more equivalents than possible answers".into()));
    }
    while answers.len() < spec.equivalents {
        let y = TokenSeq((0..spec.answer_len).map(|_| rng.gen_range(0..n)).collect());
        if !answers.contains(&y) {
            answers.push(y);
        }
    }
    let reference = answers[0].clone();
    let equivalents = if spec.equivalents > 1 { answers } else { Vec::new() };
    let task = TaskInstance::new(seed as usize, prompt, reference, equivalents, spec.budget)?;
    Ok((policy, task))
}

/// Per-coordinate running mean and standard error (Welford).
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MonteCarlo {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for k in 0..x.len() {
            let d = x[k] - self.mean[k];
            self.mean[k] += d / n;
            self.m2[k] += d * (x[k] - self.mean[k]);
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|m| (m / (n - 1.0)).sqrt() / n.sqrt()).collect()
    }

    /// Worst `|mean - truth| / se` over coordinates; coordinates with zero
    /// sample spread must match `truth` to within `abs_floor`.
    pub fn worst_z(&self, truth: &[f64], abs_floor: f64) -> f64 {
        let se = self.standard_errors();
        let mut worst: f64 = 0.0;
        for k in 0..truth.len() {
            let d = (self.mean[k] - truth[k]).abs();
            let z = if se[k] > 0.0 {
                d / se[k]
            } else if d <= abs_floor {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_fixture(equivalents: usize) -> (Policy, TaskInstance) {
        let vocab = Vocab::new(4, 2, 3).unwrap();
        let p = Policy::uniform(vocab, Parameterization::Tabular, 2);
        let eq = if equivalents > 1 { vec![TokenSeq(vec![1]), TokenSeq(vec![0])] } else { vec![] };
        let t = TaskInstance::new(0, TokenSeq(vec![0]), TokenSeq(vec![1]), eq, 2).unwrap();
        (p, t)
    }

    #[test]
    fn uniform_objectives() {
        let (p, t) = uniform_fixture(1);
        assert!((exact_objective(&p, &t, ObjectiveMode::Verifier).unwrap() - 0.25).abs() < 1e-15);
        assert!((exact_objective(&p, &t, ObjectiveMode::Verifree).unwrap() - 0.25).abs() < 1e-15);
        let (p, t) = uniform_fixture(2);
        assert!((exact_objective(&p, &t, ObjectiveMode::Verifier).unwrap() - 0.5).abs() < 1e-15);
        assert!((exact_objective(&p, &t, ObjectiveMode::VerifreeEquiv).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn objectives_agree_on_random_unique_answer_tasks() {
        for seed in 0..20 {
            let (p, t) = random_fixture(seed, FixtureSpec::default()).unwrap();
            let a = exact_objective(&p, &t, ObjectiveMode::Verifier).unwrap();
            let b = exact_objective(&p, &t, ObjectiveMode::Verifree).unwrap();
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn gradients_agree_and_match_finite_differences() {
        for seed in 0..5 {
            let spec = FixtureSpec { answer_len: 2, ..Default::default() };
            let (p, t) = random_fixture(seed, spec).unwrap();
            let gv = exact_gradient(&p, &t, ObjectiveMode::Verifier).unwrap();
            let gf = exact_gradient(&p, &t, ObjectiveMode::Verifree).unwrap();
            let d = gv.values.iter().zip(&gf.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-10);
            let report = check_gradients(&p, &t).unwrap();
            assert!(report.max_error() < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn saturated_policy_is_stationary() {
        // always answer the reference: objective is 1 everywhere nearby
        let vocab = Vocab::new(4, 2, 3).unwrap();
        let mut p = Policy::uniform(vocab, Parameterization::Tabular, 0);
        p.params.values[1] = 60.0;
        let t = TaskInstance::new(0, TokenSeq(vec![0]), TokenSeq(vec![1]), vec![], 2).unwrap();
        for mode in [ObjectiveMode::Verifier, ObjectiveMode::Verifree] {
            assert!(exact_gradient(&p, &t, mode).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn sign_flip_is_detected() {
        let (p, t) = random_fixture(3, FixtureSpec::default()).unwrap();
        let cont = TokenSeq(vec![0, 2, 1]);
        let mut g = p.grad_logprob(&t.prompt, &cont).unwrap();
        g.values.iter_mut().for_each(|v| *v = -*v);
        let err = check_gradient(&p.params, &g.values, |theta| {
            Policy::from_params(p.vocab().clone(), theta.clone())?.logprob(&t.prompt, &cont)
        })
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn parameter_free_check_reports_zero() {
        let layout = crate::policy::Layout::new(Parameterization::Tabular, 0, 0);
        let empty = ParamVector::zeros(layout);
        assert_eq!(check_gradient(&empty, &[], |_| Ok(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_policy_has_zero_variance() {
        // one-token budget, open always emitted, answer always the reference
        let vocab = Vocab::new(3, 1, 2).unwrap();
        let mut p = Policy::uniform(vocab, Parameterization::Tabular, 1);
        let rows = p.layout().rows();
        for row in 0..rows {
            p.params.values[row * 3 + 1] = 60.0;
        }
        let t = TaskInstance::new(0, TokenSeq(vec![0]), TokenSeq(vec![1]), vec![], 1).unwrap();
        let r = exact_estimator_covariance(&p, &t, false).unwrap();
        assert!(r.var_verifier_trace < 1e-20 && r.var_verifree_trace < 1e-20, "{r:?}");
    }

    #[test]
    fn variance_inequality_and_decomposition() {
        for seed in 0..10 {
            let spec = FixtureSpec { equivalents: 1 + (seed as usize % 2), ..Default::default() };
            let (p, t) = random_fixture(seed, spec).unwrap();
            let r = exact_estimator_covariance(&p, &t, true).unwrap();
            assert!(r.inequality_ok(), "{r:?}");
            assert!(r.decomposition_ok(), "{r:?}");
            assert!(r.mean_gap < 1e-10);
            let pc = r.per_coordinate.unwrap();
            for k in 0..pc.inner.len() {
                assert!((pc.verifier[k] - pc.verifree[k] - pc.inner[k]).abs() < 1e-10);
            }
            assert!(rao_blackwell_max_deviation(&p, &t).unwrap() < 1e-10);
        }
    }

    #[test]
    fn monte_carlo_accumulator() {
        let mut mc = MonteCarlo::new(2);
        for x in [[1.0, 5.0], [3.0, 5.0]] {
            mc.push(&x);
        }
        assert_eq!(mc.mean(), &[2.0, 5.0]);
        let se = mc.standard_errors();
        assert!((se[0] - 1.0).abs() < 1e-15);
        assert_eq!(se[1], 0.0);
        assert_eq!(mc.worst_z(&[2.0, 5.0], 1e-12), 0.0);
        assert_eq!(mc.worst_z(&[2.0, 5.1], 1e-12), f64::INFINITY);
    }
}
