use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use verifree_core::oracle::{self, ObjectiveMode, MASS_TOL};
use verifree_core::patchtok::{self, ToyTokenizer, FIXTURE_ALPHABET};
use verifree_core::trainer::{self, StepMetrics};

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const GRAD_TOL: f64 = 1e-5;
const EXACT_TOL: f64 = 1e-10;

/// A check that ran and failed; exits with code 2.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// Resolved config plus where output goes.
pub struct Run {
    pub command: &'static str,
    pub cfg: ExperimentConfig,
    pub out_dir: Option<PathBuf>,
}

impl Run {
    fn seed(&self) -> Result<u64> {
        self.cfg.get("trainer.seed")
    }

    fn open(&self, name: &str) -> Result<Box<dyn Write>> {
        match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(name);
                let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                Ok(Box::new(BufWriter::new(f)))
            }
            None => Ok(Box::new(BufWriter::new(io::stdout()))),
        }
    }

    fn header_lines(&self) -> Result<Vec<String>> {
        let mut lines = vec![
            format!("config_hash={}", self.cfg.hash(self.command)),
            format!("seed={}", self.seed()?),
            format!("version=verifree-lab {VERSION}"),
            format!("command={}", self.command),
        ];
        lines.extend(self.cfg.resolved().iter().map(|(k, v)| format!("config {k} = {v}")));
        Ok(lines)
    }

    /// Opens `name` and writes a `#`-prefixed header block.
    fn text_file(&self, name: &str) -> Result<Box<dyn Write>> {
        let mut w = self.open(name)?;
        for l in self.header_lines()? {
            writeln!(w, "# {l}")?;
        }
        Ok(w)
    }

    /// Opens `name` and writes the header object as the first line.
    fn jsonl_file(&self, name: &str) -> Result<Box<dyn Write>> {
        let mut w = self.open(name)?;
        let header = json!({
            "header": true,
            "config_hash": self.cfg.hash(self.command),
            "seed": self.seed()?,
            "version": format!("verifree-lab {VERSION}"),
            "command": self.command,
            "config": self.cfg.resolved(),
        });
        writeln!(w, "{header}")?;
        Ok(w)
    }

    fn fixtures(&self) -> Result<Vec<u64>> {
        let n: u64 = self.cfg.get("oracle.fixtures")?;
        let base = self.seed()?;
        Ok((0..n).map(|i| base + i).collect())
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

struct CheckRow {
    seed: u64,
    check: &'static str,
    value: f64,
    tol: f64,
}

impl CheckRow {
    fn passed(&self) -> bool {
        self.value <= self.tol
    }
}

/// Oracle suite over random fixtures: normalization, gradients, objective
/// equivalence, Rao-Blackwell identity and the variance decomposition.
pub fn check(run: &Run) -> Result<()> {
    let spec = run.cfg.fixture_spec()?;
    let rows = run
        .fixtures()?
        .par_iter()
        .map(|&seed| -> verifree_core::Result<Vec<CheckRow>> {
            let (policy, task) = oracle::random_fixture(seed, spec)?;
            let g = oracle::check_gradients(&policy, &task)?;
            let jv = oracle::exact_objective(&policy, &task, ObjectiveMode::Verifier)?;
            let jf = oracle::exact_objective(&policy, &task, ObjectiveMode::Verifree)?;
            let rb = oracle::rao_blackwell_max_deviation(&policy, &task)?;
            let var = oracle::exact_estimator_covariance(&policy, &task, false)?;
            // excess of the verifier-free variance over the verifier one
            let excess = if var.inequality_ok() { 0.0 } else { var.var_verifree_trace - var.var_verifier_trace };
            let row = |check, value, tol| CheckRow { seed, check, value, tol };
            Ok(vec![
                row("trace_mass", g.mass_error, MASS_TOL),
                row("grad_logprob", g.logprob, GRAD_TOL),
                row("grad_objective_verifier", g.objective_verifier, GRAD_TOL),
                row("grad_objective_verifree", g.objective_verifree, GRAD_TOL),
                row("objective_equivalence", (jv - jf).abs(), EXACT_TOL),
                row("rao_blackwell", rb, EXACT_TOL),
                row("variance_excess", excess, 0.0),
                row("variance_decomposition", var.decomposition_error(), oracle::DECOMPOSITION_TOL),
            ])
        })
        .collect::<verifree_core::Result<Vec<_>>>()?;
    let mut w = run.text_file("check.csv")?;
    writeln!(w, "fixture_seed,check,value,tolerance,ok")?;
    let mut failed = Vec::new();
    for r in rows.iter().flatten() {
        writeln!(w, "{},{},{:e},{:e},{}", r.seed, r.check, r.value, r.tol, ok(r.passed()))?;
        if !r.passed() {
            failed.push(format!("{} on fixture {} ({:e} > {:e})", r.check, r.seed, r.value, r.tol));
        }
    }
    w.flush()?;
    let total = rows.iter().map(Vec::len).sum::<usize>();
    eprintln!("check: {}/{} checks passed over {} fixtures", total - failed.len(), total, rows.len());
    if let Some(first) = failed.first() {
        return Err(NumericalFailure(format!("{} checks failed, first: {first}", failed.len())).into());
    }
    Ok(())
}

pub fn variance(run: &Run) -> Result<()> {
    let spec = run.cfg.fixture_spec()?;
    let reports = run
        .fixtures()?
        .par_iter()
        .map(|&seed| {
            let (policy, task) = oracle::random_fixture(seed, spec)?;
            let mut r = oracle::exact_estimator_covariance(&policy, &task, false)?;
            r.policy_seed = Some(seed);
            Ok(r)
        })
        .collect::<verifree_core::Result<Vec<_>>>()?;
    let mut w = run.text_file("variance.csv")?;
    writeln!(w, "task_id,policy_seed,var_verifier,var_verifree,gap,decomposition_inner,inequality_ok")?;
    for r in &reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.task_id,
            r.policy_seed.unwrap_or_default(),
            r.var_verifier_trace,
            r.var_verifree_trace,
            r.gap(),
            r.decomposition_inner,
            ok(r.inequality_ok())
        )?;
    }
    w.flush()?;
    let bad: Vec<_> = reports.iter().filter(|r| !r.inequality_ok()).map(|r| r.task_id).collect();
    let min_gap = reports.iter().map(|r| r.gap()).fold(f64::INFINITY, f64::min);
    eprintln!("variance: {} fixtures, min gap {min_gap:e}", reports.len());
    if !bad.is_empty() {
        return Err(NumericalFailure(format!("variance inequality violated on tasks {bad:?}")).into());
    }
    Ok(())
}

pub fn train(run: &Run) -> Result<()> {
    let tc = run.cfg.train_config(true)?;
    let family = run.cfg.family()?;
    let policy = run.cfg.policy_spec()?.build(&family, tc.seed);
    let mut w = run.jsonl_file("metrics.jsonl")?;
    let mut io_err: Option<anyhow::Error> = None;
    let outcome = trainer::train_with(&tc, &family, policy, |m: &StepMetrics| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(w, "{line}") {
            io_err.get_or_insert_with(|| e.into());
            return Err(verifree_core::Error::Precondition("metrics output failed".into()));
        }
        Ok(())
    });
    if let Some(e) = io_err {
        return Err(e.context("writing metrics"));
    }
    let outcome = outcome?;
    let summary = json!({
        "summary": true,
        "label": tc.label(),
        "initial_objective": outcome.initial_objective,
        "final_objective": outcome.final_objective(),
        "steps": tc.steps,
    });
    writeln!(w, "{summary}")?;
    w.flush()?;
    eprintln!(
        "train: {} on {} for {} steps, objective {:.4} -> {:.4}",
        tc.label(),
        family.kind.name(),
        tc.steps,
        outcome.initial_objective,
        outcome.final_objective()
    );
    Ok(())
}

#[derive(Serialize)]
struct ArmStep<'a> {
    arm: &'a str,
    seed: u64,
    #[serde(flatten)]
    metrics: &'a StepMetrics,
}

pub fn compare(run: &Run) -> Result<()> {
    let cc = run.cfg.compare_config()?;
    let report = trainer::compare_estimators(&cc)?;
    let mut csv = run.text_file("compare.csv")?;
    writeln!(csv, "arm,seed,initial_objective,final_objective,steps_to_threshold,final_confidence")?;
    for r in &report.runs {
        let steps = r.steps_to_threshold.map_or(String::new(), |s| s.to_string());
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.arm.name(),
            r.seed,
            r.initial_objective,
            r.final_objective,
            steps,
            r.final_confidence
        )?;
    }
    csv.flush()?;
    if run.out_dir.is_some() {
        let mut w = run.jsonl_file("compare.jsonl")?;
        for r in &report.runs {
            for m in &r.metrics {
                let line = serde_json::to_string(&ArmStep { arm: r.arm.name(), seed: r.seed, metrics: m })?;
                writeln!(w, "{line}")?;
            }
        }
        w.flush()?;
    }
    for &arm in &cc.arms {
        let runs: Vec<_> = report.runs.iter().filter(|r| r.arm == arm).collect();
        let mean = runs.iter().map(|r| r.final_objective).sum::<f64>() / runs.len() as f64;
        let hit = runs.iter().filter(|r| r.steps_to_threshold.is_some()).count();
        eprintln!("compare: {:<18} mean final {mean:.4}, {hit}/{} seeds reached {}", arm.name(), runs.len(), cc.threshold);
    }
    Ok(())
}

fn load_tokenizer(cfg: &ExperimentConfig) -> Result<ToyTokenizer> {
    let alphabet = cfg.raw("patch.alphabet").unwrap_or(FIXTURE_ALPHABET);
    match cfg.raw("patch.merges") {
        None => Ok(ToyTokenizer::from_merge_text(alphabet, patchtok::FIXTURE_MERGES, patchtok::BOUNDARY)?),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("patch.merges: reading {path}"))?;
            ToyTokenizer::from_merge_text(alphabet, &text, patchtok::BOUNDARY).map_err(|e| anyhow!("patch.merges: {e}"))
        }
    }
}

fn load_texts(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    match cfg.raw("patch.texts") {
        None => {
            let mut v: Vec<String> = patchtok::adversarial_fixtures().into_iter().map(String::from).collect();
            v.push(r"ttt.<answer> \boxed{12} </answer>".into());
            Ok(v)
        }
        Some(path) => Ok(std::fs::read_to_string(Path::new(path))
            .with_context(|| format!("patch.texts: reading {path}"))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()),
    }
}

pub fn patch_demo(run: &Run) -> Result<()> {
    let tok = load_tokenizer(&run.cfg)?;
    let texts = load_texts(&run.cfg)?;
    let mut w = run.text_file("patch_demo.txt")?;
    writeln!(w, "tokenizer: {} tokens, boundary {:?}", tok.vocab_size(), patchtok::BOUNDARY)?;
    let (mut token_drift, mut text_drift) = (0, 0);
    for text in &texts {
        let case = patchtok::drift_case(&tok, text).map_err(|e| anyhow!("patch.texts: {text:?}: {e}"))?;
        token_drift += case.token_split_drifts() as usize;
        text_drift += case.text_split_drifts() as usize;
        writeln!(w)?;
        writeln!(w, "{case}")?;
        writeln!(w, "  whole        {}", tok.show(&case.whole))?;
        writeln!(w, "  token-split  {}", tok.show(&case.token_split))?;
        match &case.text_split {
            Some(s) => writeln!(w, "  text-split   {}", tok.show(s))?,
            None => writeln!(w, "  text-split   (no boundary)")?,
        }
    }
    writeln!(w)?;
    writeln!(w, "drift: token-split {token_drift}/{n}, text-split {text_drift}/{n}", n = texts.len())?;
    w.flush()?;
    if token_drift > 0 {
        return Err(NumericalFailure(format!("token-space split drifted on {token_drift} texts")).into());
    }
    Ok(())
}

/// Whether `err` should exit with the numerical-failure code.
pub fn is_numerical(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<NumericalFailure>().is_some()
            || matches!(
                e.downcast_ref::<verifree_core::Error>(),
                Some(verifree_core::Error::Diverged { .. } | verifree_core::Error::MassNotConserved { .. })
            )
    })
}
