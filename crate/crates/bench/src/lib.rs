//! Fixture builders shared by the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use verifree_core::oracle::{self, FixtureSpec};
use verifree_core::{Parameterization, Policy, Rollout, TaskInstance};

/// Oracle fixture with `vocab` tokens and trace budget `budget`.
pub fn fixture(vocab: usize, budget: usize, kind: Parameterization) -> (Policy, TaskInstance) {
    let spec = FixtureSpec { vocab, budget, kind, ..FixtureSpec::default() };
    oracle::random_fixture(11, spec).expect("bench fixture")
}

/// `g` rollouts from `policy` with old-policy log-probs recorded.
pub fn group(policy: &Policy, task: &TaskInstance, g: usize) -> Vec<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..g)
        .map(|i| policy.sample_trace(&task.prompt, task.trace_budget, &mut rng, i as u64).expect("rollout"))
        .collect()
}
