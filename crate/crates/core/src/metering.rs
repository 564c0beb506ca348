//! Cost accounting and accuracy estimation.

use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};

use crate::curriculum::{consensus_win_prob, plurality, CurriculumRun, Variant, MAX_EXACT_VOTES};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::world::{ModelId, Prompt, Token, World};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub cot_queries: u64,
    pub verifier_calls: u64,
    pub routing_decisions: u64,
    pub ref_generations: u64,
    pub learner_rollouts: u64,
}

impl Sub for LedgerSnapshot {
    type Output = LedgerSnapshot;
    fn sub(self, o: Self) -> Self {
        LedgerSnapshot {
            cot_queries: self.cot_queries - o.cot_queries,
            verifier_calls: self.verifier_calls - o.verifier_calls,
            routing_decisions: self.routing_decisions - o.routing_decisions,
            ref_generations: self.ref_generations - o.ref_generations,
            learner_rollouts: self.learner_rollouts - o.learner_rollouts,
        }
    }
}

impl Add for LedgerSnapshot {
    type Output = LedgerSnapshot;
    fn add(self, o: Self) -> Self {
        LedgerSnapshot {
            cot_queries: self.cot_queries + o.cot_queries,
            verifier_calls: self.verifier_calls + o.verifier_calls,
            routing_decisions: self.routing_decisions + o.routing_decisions,
            ref_generations: self.ref_generations + o.ref_generations,
            learner_rollouts: self.learner_rollouts + o.learner_rollouts,
        }
    }
}

/// Monotone counters of every expensive call. Safe to share across threads.
#[derive(Debug, Default)]
pub struct CostLedger {
    cot_queries: AtomicU64,
    verifier_calls: AtomicU64,
    routing_decisions: AtomicU64,
    ref_generations: AtomicU64,
    learner_rollouts: AtomicU64,
    phase_marks: Mutex<Vec<LedgerSnapshot>>,
}

impl CostLedger {
    pub fn add_cot_queries(&self, n: u64) {
        self.cot_queries.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_verifier_calls(&self, n: u64) {
        self.verifier_calls.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_routing_decisions(&self, n: u64) {
        self.routing_decisions.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_ref_generations(&self, n: u64) {
        self.ref_generations.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_learner_rollouts(&self, n: u64) {
        self.learner_rollouts.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            cot_queries: self.cot_queries.load(Ordering::Relaxed),
            verifier_calls: self.verifier_calls.load(Ordering::Relaxed),
            routing_decisions: self.routing_decisions.load(Ordering::Relaxed),
            ref_generations: self.ref_generations.load(Ordering::Relaxed),
            learner_rollouts: self.learner_rollouts.load(Ordering::Relaxed),
        }
    }

    /// Records the counters at the end of a phase.
    pub fn mark_phase(&self) {
        let snap = self.snapshot();
        self.phase_marks.lock().expect("ledger lock poisoned").push(snap);
    }

    pub fn phase_marks(&self) -> Vec<LedgerSnapshot> {
        self.phase_marks.lock().expect("ledger lock poisoned").clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Analytic,
    #[serde(rename = "mc")]
    MonteCarlo,
}

/// Sizes of a Monte-Carlo evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEval {
    pub prompts: usize,
    pub rollouts_per_prompt: usize,
}

impl Default for McEval {
    fn default() -> Self {
        Self {
            prompts: 2000,
            rollouts_per_prompt: 16,
        }
    }
}

/// What is being evaluated.
#[derive(Clone, Copy, Debug)]
pub enum Subject<'a> {
    Single(ModelId),
    Plurality(&'a [ModelId]),
    Mixture(&'a [ModelId]),
    Consensus { members: &'a [ModelId], votes: usize },
}

impl Subject<'_> {
    fn sample_answer(&self, world: &World, x: Prompt, rng: &mut Stream) -> Token {
        match *self {
            Subject::Single(m) => world.sample_answer(&m, x, rng),
            Subject::Plurality(ms) => {
                let answers: Vec<Token> = ms.iter().map(|m| world.sample_answer(m, x, rng)).collect();
                plurality(&answers).unwrap_or(0)
            }
            Subject::Mixture(ms) => crate::curriculum::mixture_sample(ms, world, x, rng),
            Subject::Consensus { members, votes } => {
                crate::curriculum::consensus_vote(members, world, x, votes, rng).unwrap_or(0)
            }
        }
    }

    fn exact_accuracy(&self, world: &World, x: Prompt) -> Option<f64> {
        let correct = world.correct_answer(x);
        match *self {
            Subject::Single(m) => world.analytic_accuracy(&m, x),
            Subject::Plurality(ms) => {
                if ms.iter().any(|m| m.noise > 0.0) {
                    return None;
                }
                let answers: Vec<Token> = ms.iter().map(|m| world.deterministic_answer(m.key, x)).collect();
                Some((plurality(&answers).ok()? == correct) as u8 as f64)
            }
            Subject::Mixture(ms) => {
                let accs: Option<Vec<f64>> = ms.iter().map(|m| world.analytic_accuracy(m, x)).collect();
                let accs = accs?;
                Some(accs.iter().sum::<f64>() / accs.len() as f64)
            }
            Subject::Consensus { members, votes } => {
                if votes > MAX_EXACT_VOTES {
                    return None;
                }
                let mut dist = vec![0.0; world.alphabet_size()];
                for m in members {
                    for (t, p) in world.outcome_distribution(m, x)?.into_iter().enumerate() {
                        dist[t] += p / members.len() as f64;
                    }
                }
                Some(consensus_win_prob(&dist, correct as usize, votes))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// `Acc_rho`: probability that the output verifies on a fresh prompt.
    pub acc: f64,
    pub std_error: f64,
    /// Prompt mass on which per-prompt accuracy is at least 3/5.
    pub mass_acc_at_least_3_5: f64,
    /// Prompt mass on which per-prompt accuracy is at least 4/5.
    pub mass_acc_at_least_4_5: f64,
    pub prompts_evaluated: usize,
    /// `(prompt, weight, accuracy)`; in exact mode one row per answer class.
    #[serde(skip)]
    pub per_prompt: Vec<(Prompt, f64, f64)>,
}

const SLACK: f64 = 1e-12;

fn summarize(mode: EvalMode, rows: Vec<(Prompt, f64, f64)>, std_error: f64, prompts: usize) -> EvalReport {
    let total: f64 = rows.iter().map(|r| r.1).sum();
    let acc = rows.iter().map(|r| r.1 * r.2).sum::<f64>() / total;
    let mass = |t: f64| rows.iter().filter(|r| r.2 >= t - SLACK).map(|r| r.1).sum::<f64>() / total;
    EvalReport {
        mode,
        acc,
        std_error,
        mass_acc_at_least_3_5: mass(0.6),
        mass_acc_at_least_4_5: mass(0.8),
        prompts_evaluated: prompts,
        per_prompt: rows,
    }
}

/// Estimates `Acc_rho` of `subject`. Exact mode falls back to Monte-Carlo
/// when the world or subject has no closed form. Charges go to `ledger`,
/// which should not be the training ledger.
pub fn estimate_acc(
    subject: Subject<'_>,
    world: &World,
    mode: EvalMode,
    mc: McEval,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<EvalReport> {
    if mode == EvalMode::Analytic {
        if let Some(classes) = world.answer_classes() {
            let rows: Option<Vec<(Prompt, f64, f64)>> = classes
                .iter()
                .map(|&(x, w)| subject.exact_accuracy(world, x).map(|a| (x, w, a)))
                .collect();
            if let Some(rows) = rows {
                let n = world.prompt_count();
                return Ok(summarize(EvalMode::Analytic, rows, 0.0, n));
            }
        }
        info!("exact evaluation unavailable here; using Monte-Carlo");
    }
    if mc.prompts == 0 || mc.rollouts_per_prompt == 0 {
        return Err(Error::param("mc", "needs at least one prompt and one rollout"));
    }
    let mut rows = Vec::with_capacity(mc.prompts);
    for _ in 0..mc.prompts {
        let x = world.sample_prompt(rng);
        let hits = (0..mc.rollouts_per_prompt)
            .filter(|_| {
                let a = subject.sample_answer(world, x, rng);
                ledger.add_learner_rollouts(1);
                world.verify(x, a, ledger)
            })
            .count();
        rows.push((x, 1.0, hits as f64 / mc.rollouts_per_prompt as f64));
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.2).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.2 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(summarize(EvalMode::MonteCarlo, rows, (var / n).sqrt(), mc.prompts))
}

/// Checks the cost identities of a curriculum run against its training
/// ledger.
pub fn reconcile(ledger: &LedgerSnapshot, run: &CurriculumRun) -> Result<()> {
    let phase_sum = run.phases.iter().fold(LedgerSnapshot::default(), |acc, p| acc + p.cost);
    if phase_sum != *ledger {
        return Err(Error::Reconciliation(format!(
            "phase costs {phase_sum:?} do not sum to ledger {ledger:?}"
        )));
    }
    let accepted = run.total_accepted();
    match run.variant {
        Variant::DetSft | Variant::StochSft => {
            if ledger.cot_queries != accepted {
                return Err(Error::Reconciliation(format!(
                    "{} teacher queries for {accepted} accepted prompts",
                    ledger.cot_queries
                )));
            }
            if ledger.ref_generations != 0 {
                return Err(Error::Reconciliation(
                    "supervised run sampled the reference model".into(),
                ));
            }
        }
        Variant::Rl => {
            let expected: u64 = run
                .phases
                .iter()
                .map(|p| p.accepted as u64 * p.ref_samples_per_prompt.unwrap_or(0) as u64)
                .sum();
            if ledger.ref_generations != expected {
                return Err(Error::Reconciliation(format!(
                    "{} reference generations, expected {expected}",
                    ledger.ref_generations
                )));
            }
            if ledger.cot_queries != 0 {
                return Err(Error::Reconciliation(format!(
                    "RL run made {} teacher queries",
                    ledger.cot_queries
                )));
            }
        }
    }
    let routed: u64 = run.phases.iter().map(|p| p.routed as u64).sum();
    if ledger.routing_decisions != routed || routed > run.pool_size as u64 {
        return Err(Error::Reconciliation(format!(
            "{} routing decisions, {routed} recorded, pool of {}",
            ledger.routing_decisions, run.pool_size
        )));
    }
    Ok(())
}
