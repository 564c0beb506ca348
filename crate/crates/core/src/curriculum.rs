//! Curriculum drivers. Each phase routes a fresh slice of the prompt pool
//! through the weight table, trains the base learner on what was accepted,
//! and appends the result to the ensemble.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{n_prompt, ntp_erm, rl_finetune, CotDataset, SampleBudget};
use crate::metering::{CostLedger, LedgerSnapshot};
use crate::rng::Stream;
use crate::schedule::{
    build_weight_table, check_mc_samples, rank_det, rank_mc, Regime, WeightTable, DEFAULT_MC_SAMPLES,
};
use crate::world::{ModelId, Prompt, Token, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Supervised fine-tuning on teacher traces, plurality vote.
    DetSft,
    /// Supervised fine-tuning of a stochastic class, mixture output.
    StochSft,
    /// RL fine-tuning against the verifier, no teacher traces.
    Rl,
}

impl Variant {
    pub fn regime(self) -> Regime {
        match self {
            Variant::StochSft => Regime::STOCHASTIC,
            Variant::DetSft | Variant::Rl => Regime::DETERMINISTIC,
        }
    }

    /// Error the base learner is sized for in each phase.
    pub fn base_target(self) -> f64 {
        match self {
            Variant::StochSft => 1.0 / 400.0,
            Variant::DetSft | Variant::Rl => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::DetSft => "det-sft",
            Variant::StochSft => "stoch-sft",
            Variant::Rl => "rl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det-sft" => Ok(Variant::DetSft),
            "stoch-sft" => Ok(Variant::StochSft),
            "rl" => Ok(Variant::Rl),
            _ => Err(Error::Parse(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    pub eps: f64,
    pub delta: f64,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_override: Option<usize>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Votes for consensus decoding of a mixture; defaults to `ceil(8 ln(1/eps))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_votes: Option<usize>,
}

fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

impl CurriculumConfig {
    pub fn new(eps: f64, delta: f64, variant: Variant) -> Self {
        Self {
            eps,
            delta,
            variant,
            k_override: None,
            mc_samples: DEFAULT_MC_SAMPLES,
            consensus_votes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::config("curriculum.eps", "must be in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("curriculum.delta", "must be in (0, 1)"));
        }
        if self.k_override == Some(0) {
            return Err(Error::config("curriculum.k_override", "must be at least 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::config("curriculum.mc_samples", "must be at least 1"));
        }
        if self.consensus_votes == Some(0) {
            return Err(Error::config("curriculum.consensus_votes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn votes(&self) -> usize {
        self.consensus_votes
            .unwrap_or_else(|| default_consensus_votes(self.eps))
    }
}

pub fn default_consensus_votes(eps: f64) -> usize {
    (8.0 * (1.0 / eps).ln()).ceil().max(1.0) as usize
}

/// Smallest `k` whose table puts at most `eps / 4` on the initial state.
pub fn choose_k(eps: f64, regime: Regime, k_override: Option<usize>) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("{eps} is not in (0, 1)")));
    }
    if let Some(k) = k_override {
        build_weight_table(k, regime)?;
        return Ok(k);
    }
    for k in 1..=crate::schedule::MAX_PHASES {
        if build_weight_table(k, regime)?.initial_failure_prob() <= eps / 4.0 {
            return Ok(k);
        }
    }
    Err(Error::Capacity(format!(
        "no k up to {} reaches eps = {eps}",
        crate::schedule::MAX_PHASES
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Plurality,
    Mixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<ModelId>,
    pub aggregation: Aggregation,
}

/// Most common token; ties go to the smallest.
pub fn plurality(answers: &[Token]) -> Result<Token> {
    if answers.is_empty() {
        return Err(Error::param("answers", "empty vote"));
    }
    let mut counts = [0usize; 256];
    for &a in answers {
        counts[a as usize] += 1;
    }
    let mut best = 0usize;
    for tok in 1..256 {
        if counts[tok] > counts[best] {
            best = tok;
        }
    }
    Ok(best as Token)
}

impl Ensemble {
    /// Plurality answer of deterministic members.
    pub fn plurality_answer(&self, world: &World, x: Prompt) -> Token {
        let answers: Vec<Token> = self
            .members
            .iter()
            .map(|m| world.deterministic_answer(m.key, x))
            .collect();
        plurality(&answers).unwrap_or(0)
    }

    /// One answer from the ensemble's output distribution.
    pub fn sample_answer(&self, world: &World, x: Prompt, rng: &mut Stream) -> Token {
        match self.aggregation {
            Aggregation::Mixture => mixture_sample(&self.members, world, x, rng),
            Aggregation::Plurality => {
                let answers: Vec<Token> = self.members.iter().map(|m| world.sample_answer(m, x, rng)).collect();
                plurality(&answers).unwrap_or(0)
            }
        }
    }
}

/// Picks a member uniformly and samples its answer.
pub fn mixture_sample(members: &[ModelId], world: &World, x: Prompt, rng: &mut Stream) -> Token {
    let m = &members[rng.below(members.len())];
    world.sample_answer(m, x, rng)
}

/// Plurality over `votes` independent mixture samples.
pub fn consensus_vote(members: &[ModelId], world: &World, x: Prompt, votes: usize, rng: &mut Stream) -> Result<Token> {
    if members.is_empty() {
        return Err(Error::param("members", "empty mixture"));
    }
    let answers: Vec<Token> = (0..votes).map(|_| mixture_sample(members, world, x, rng)).collect();
    plurality(&answers)
}

/// Exact probability that the plurality of `votes` draws from `dist` is
/// `target`, with ties going to the smallest token. Accurate up to
/// [`MAX_EXACT_VOTES`] votes.
pub const MAX_EXACT_VOTES: usize = 170;

pub fn consensus_win_prob(dist: &[f64], target: usize, votes: usize) -> f64 {
    let p = dist[target];
    let rest = 1.0 - p;
    let others: Vec<(usize, f64)> = dist
        .iter()
        .copied()
        .enumerate()
        .filter(|&(t, q)| t != target && q > 0.0)
        .collect();
    let ln_fact: Vec<f64> = (0..=votes)
        .scan(0.0, |acc, i| {
            if i > 0 {
                *acc += (i as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let mut total = 0.0;
    for a in 0..=votes {
        let left = votes - a;
        let ln_head = ln_fact[votes] - ln_fact[a] - ln_fact[left] + if a > 0 { a as f64 * p.ln() } else { 0.0 };
        if ln_head == f64::NEG_INFINITY {
            continue;
        }
        // Probability that the remaining `left` draws, conditioned on missing
        // the target, give every other token fewer votes (or as many, if it
        // loses ties to the target).
        let tail = if a == 0 {
            0.0
        } else if left == 0 {
            1.0
        } else if others.is_empty() || rest <= 0.0 {
            0.0
        } else {
            let mut ways = vec![0.0f64; left + 1];
            ways[0] = 1.0;
            for &(tok, q) in &others {
                let cap = if tok < target { a - 1 } else { a };
                let ln_q = (q / rest).ln();
                let mut next = vec![0.0f64; left + 1];
                for (used, &w) in ways.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..=cap.min(left - used) {
                        next[used + c] += w * (c as f64 * ln_q - ln_fact[c]).exp();
                    }
                }
                ways = next;
            }
            (ways[left] * ln_fact[left].exp()).min(1.0)
        };
        let head = (ln_head + left as f64 * rest.max(f64::MIN_POSITIVE).ln()).exp();
        total += head * tail;
    }
    total.min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankMode {
    Deterministic,
    MonteCarlo { samples: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub accepted: Vec<Prompt>,
    pub aborted: bool,
    /// Prompts examined before the cap was reached or the slice ran out.
    pub routed: usize,
}

/// Rejection-samples prompts from `part` in proportion to their phase-`j`
/// weight until `cap` are accepted.
#[allow(clippy::too_many_arguments)]
pub fn sample_subroutine(
    part: &[Prompt],
    members: &[ModelId],
    table: &WeightTable,
    j: usize,
    cap: usize,
    world: &World,
    mode: RankMode,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<SampleOutcome> {
    if members.len() != j {
        return Err(Error::param("j", format!("phase {j} with {} members", members.len())));
    }
    let mut accepted = Vec::new();
    let mut routed = 0;
    let mut cached: HashMap<Prompt, usize> = HashMap::new();
    for &x in part {
        if accepted.len() >= cap {
            break;
        }
        routed += 1;
        ledger.add_routing_decisions(1);
        let rank = match mode {
            RankMode::Deterministic => *cached.entry(x).or_insert_with(|| rank_det(members, x, world, ledger)),
            RankMode::MonteCarlo { samples } => rank_mc(members, x, world, samples, rng, ledger),
        };
        let u = rng.uniform();
        if u < table.acceptance_prob(j, rank)? {
            accepted.push(x);
        }
    }
    let aborted = accepted.len() < cap;
    Ok(SampleOutcome {
        accepted,
        aborted,
        routed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub part_size: usize,
    pub routed: usize,
    pub accepted: usize,
    pub cap: usize,
    pub aborted: bool,
    pub model: ModelId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_samples_per_prompt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_complete: Option<bool>,
    pub cost: LedgerSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRun {
    pub variant: Variant,
    pub k: usize,
    pub regime: Regime,
    pub cap: usize,
    pub pool_size: usize,
    pub phases: Vec<PhaseRecord>,
    pub ensemble: Ensemble,
}

impl CurriculumRun {
    pub fn total_accepted(&self) -> u64 {
        self.phases.iter().map(|p| p.accepted as u64).sum()
    }

    pub fn aborted_phases(&self) -> usize {
        self.phases.iter().filter(|p| p.aborted).count()
    }

    pub fn filter_complete(&self) -> Option<bool> {
        let flags: Vec<bool> = self.phases.iter().filter_map(|p| p.filter_complete).collect();
        (!flags.is_empty()).then(|| flags.iter().all(|&f| f))
    }
}

/// Supervised curriculum with plurality output.
pub fn autotune(
    pool: &[Prompt],
    world: &World,
    config: &CurriculumConfig,
    budget: &SampleBudget,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<CurriculumRun> {
    run_curriculum(Variant::DetSft, pool, world, config, budget, rng, ledger)
}

/// Supervised curriculum over a stochastic class with Monte-Carlo ranks and
/// mixture output.
pub fn autotune_stoch(
    pool: &[Prompt],
    world: &World,
    config: &CurriculumConfig,
    budget: &SampleBudget,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<CurriculumRun> {
    run_curriculum(Variant::StochSft, pool, world, config, budget, rng, ledger)
}

/// RL curriculum: RL fine-tuning replaces the supervised learner and no
/// teacher traces are requested.
pub fn autotune_rl(
    pool: &[Prompt],
    world: &World,
    config: &CurriculumConfig,
    budget: &SampleBudget,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<CurriculumRun> {
    run_curriculum(Variant::Rl, pool, world, config, budget, rng, ledger)
}

/// Runs the configured variant.
pub fn run_variant(
    pool: &[Prompt],
    world: &World,
    config: &CurriculumConfig,
    budget: &SampleBudget,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<CurriculumRun> {
    run_curriculum(config.variant, pool, world, config, budget, rng, ledger)
}

/// Per-phase prompt cap: the base learner's sample size at its target error
/// with the confidence split across phases.
pub fn phase_cap(variant: Variant, k: usize, delta: f64, world: &World, budget: &SampleBudget) -> Result<usize> {
    n_prompt(variant.base_target(), delta / k as f64, world, budget)
}

fn run_curriculum(
    variant: Variant,
    pool: &[Prompt],
    world: &World,
    config: &CurriculumConfig,
    budget: &SampleBudget,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<CurriculumRun> {
    config.validate()?;
    let regime = variant.regime();
    let k = choose_k(config.eps, regime, config.k_override)?;
    if pool.len() < k {
        return Err(Error::config(
            "pool_size",
            format!("{} prompts cannot fill {k} phases", pool.len()),
        ));
    }
    let table = build_weight_table(k, regime)?;
    let cap = phase_cap(variant, k, config.delta, world, budget)?;
    let mode = match variant {
        Variant::StochSft => {
            let check = check_mc_samples(config.mc_samples);
            if !check.ok() {
                warn!(
                    "{} rollouts per member give detection {:.4} and false alarm {:.4}; ranks may be unreliable",
                    config.mc_samples, check.detect, check.false_alarm
                );
            }
            RankMode::MonteCarlo {
                samples: config.mc_samples,
            }
        }
        _ => RankMode::Deterministic,
    };

    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut rng.child("shuffle"));
    let n = shuffled.len();

    let mut members = Vec::with_capacity(k);
    let mut phases = Vec::with_capacity(k);
    for j in 0..k {
        let part = &shuffled[j * n / k..(j + 1) * n / k];
        let before = ledger.snapshot();
        let mut phase_rng = rng.child_index("phase", j as u64);
        let outcome = sample_subroutine(part, &members, &table, j, cap, world, mode, &mut phase_rng, ledger)?;
        let (model, ref_samples, complete) = match variant {
            Variant::DetSft | Variant::StochSft => {
                let data: CotDataset = outcome
                    .accepted
                    .iter()
                    .map(|&x| (x, world.teacher_cot(x, ledger)))
                    .collect();
                (ntp_erm(&data, world), None, None)
            }
            Variant::Rl => {
                let out = rl_finetune(
                    &outcome.accepted,
                    world,
                    config.delta / k as f64,
                    &mut phase_rng,
                    ledger,
                )?;
                (out.model, Some(out.samples_per_prompt), Some(out.complete))
            }
        };
        ledger.mark_phase();
        if outcome.aborted {
            info!("phase {j}: aborted with {} of {cap} prompts", outcome.accepted.len());
        }
        members.push(model);
        phases.push(PhaseRecord {
            phase: j,
            part_size: part.len(),
            routed: outcome.routed,
            accepted: outcome.accepted.len(),
            cap,
            aborted: outcome.aborted,
            model,
            ref_samples_per_prompt: ref_samples,
            filter_complete: complete,
            cost: ledger.snapshot() - before,
        });
    }
    let aggregation = if variant == Variant::StochSft {
        Aggregation::Mixture
    } else {
        Aggregation::Plurality
    };
    Ok(CurriculumRun {
        variant,
        k,
        regime,
        cap,
        pool_size: n,
        phases,
        ensemble: Ensemble { members, aggregation },
    })
}
