//! Base learners: next-token-prediction ERM on teacher traces, and RL
//! fine-tuning against a filtered set of reference-model samples.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metering::CostLedger;
use crate::rng::Stream;
use crate::world::{ModelId, Prompt, Token, Trace, World};

/// Leading constant of the prompt sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBudget {
    #[serde(default = "default_constant")]
    pub n_prompt_constant: f64,
}

fn default_constant() -> f64 {
    1.0
}

impl Default for SampleBudget {
    fn default() -> Self {
        Self {
            n_prompt_constant: default_constant(),
        }
    }
}

/// Prompts needed to learn to error `eps` with confidence `1 - delta`:
/// `ceil(c * (d ln(d T |alphabet|) ln(1/eps) + ln(1/delta)) / eps)`.
pub fn n_prompt(eps: f64, delta: f64, world: &World, budget: &SampleBudget) -> Result<usize> {
    let c = world.config();
    n_prompt_for(eps, delta, c.dim, c.horizon, c.alphabet_size as usize, budget)
}

pub fn n_prompt_for(
    eps: f64,
    delta: f64,
    dim: usize,
    horizon: usize,
    alphabet: usize,
    budget: &SampleBudget,
) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("{eps} is not in (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} is not in (0, 1)")));
    }
    let c1 = budget.n_prompt_constant;
    if !(c1.is_finite() && c1 > 0.0) {
        return Err(Error::param("n_prompt_constant", format!("{c1} must be positive")));
    }
    Ok(((c1 * prompt_complexity(eps, delta, dim, horizon, alphabet)).ceil() as usize).max(1))
}

/// The sample size before the leading constant and rounding.
pub fn prompt_complexity(eps: f64, delta: f64, dim: usize, horizon: usize, alphabet: usize) -> f64 {
    let d = dim as f64;
    (d * (d * horizon as f64 * alphabet as f64).ln() * (1.0 / eps).ln() + (1.0 / delta).ln()) / eps
}

pub type CotDataset = Vec<(Prompt, Trace)>;

/// Teacher-forced token counts per coordinate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenCounts {
    pub zeros: Vec<u64>,
    pub ones: Vec<u64>,
    /// Targets outside {0, 1}; every member of the class mispredicts them.
    pub other: u64,
    pub total: u64,
}

pub fn token_counts(dataset: &[(Prompt, Trace)], world: &World) -> TokenCounts {
    let d = world.dim();
    let mut counts = TokenCounts {
        zeros: vec![0; d],
        ones: vec![0; d],
        ..Default::default()
    };
    for (x, y) in dataset {
        for (i, &tok) in y.0.iter().enumerate() {
            let c = world.index(*x, i + 1, &y.0[..i]);
            match tok {
                0 => counts.zeros[c] += 1,
                1 => counts.ones[c] += 1,
                _ => counts.other += 1,
            }
        }
        counts.total += y.0.len() as u64;
    }
    counts
}

impl TokenCounts {
    /// Teacher-forced mistakes of the deterministic policy `key`.
    pub fn mistakes(&self, key: u32) -> u64 {
        let disagree: u64 = (0..self.zeros.len())
            .map(|c| {
                if (key >> c) & 1 == 1 {
                    self.zeros[c]
                } else {
                    self.ones[c]
                }
            })
            .sum();
        self.other + disagree
    }

    /// Smallest key with the fewest mistakes. The 0-1 loss separates over
    /// coordinates, so the per-coordinate majority (ties to 0) is the first
    /// minimizer in enumeration order.
    pub fn best_key(&self) -> u32 {
        (0..self.zeros.len())
            .filter(|&c| self.ones[c] > self.zeros[c])
            .fold(0u32, |k, c| k | (1 << c))
    }
}

/// Negative log-likelihood of a teacher-forced token under noise `q`.
pub fn token_log_loss(matched: bool, q: f64, alphabet: usize) -> f64 {
    let uniform = q / alphabet as f64;
    if matched {
        -(1.0 - q + uniform).ln()
    } else {
        -uniform.ln()
    }
}

fn log_loss(mistakes: u64, total: u64, q: f64, alphabet: usize) -> f64 {
    let hits = total - mistakes;
    let mut loss = 0.0;
    if hits > 0 {
        loss += hits as f64 * token_log_loss(true, q, alphabet);
    }
    if mistakes > 0 {
        loss += mistakes as f64 * token_log_loss(false, q, alphabet);
    }
    loss
}

/// Next-token-prediction ERM over the world's class, ties broken by
/// enumeration order. Deterministic classes minimize the 0-1 loss, stochastic
/// classes the log-loss over (key, noise). An empty dataset returns the first
/// member of the class.
pub fn ntp_erm(dataset: &[(Prompt, Trace)], world: &World) -> ModelId {
    let counts = token_counts(dataset, world);
    let key = counts.best_key();
    if !world.is_stochastic() {
        return ModelId::deterministic(key);
    }
    // For any fixed noise level the log-loss increases with the mistake
    // count, so the 0-1 minimizer is also the log-loss key; only the noise
    // level remains to be chosen.
    let mistakes = counts.mistakes(key);
    let mut best = ModelId {
        key,
        noise: world.noise_grid()[0],
    };
    let mut best_loss = f64::INFINITY;
    for &q in world.noise_grid() {
        let loss = log_loss(mistakes, counts.total, q, world.alphabet_size());
        if loss < best_loss {
            best_loss = loss;
            best = ModelId { key, noise: q };
        }
    }
    best
}

/// Surviving reference samples per prompt, after removing duplicates,
/// low-probability traces and traces the verifier rejects.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilteredSet {
    pub entries: Vec<(Prompt, Vec<Trace>)>,
}

#[derive(Clone, Debug)]
pub struct RlOutcome {
    pub model: ModelId,
    pub samples_per_prompt: usize,
    pub filtered: FilteredSet,
    /// Every prompt's survivors equal the correct traces of probability at
    /// least `1 / c_seq`.
    pub complete: bool,
}

/// Reference samples per prompt: `ceil(c_seq ln(4 n c_seq / delta))`.
pub fn ref_samples_per_prompt(n: usize, c_seq: u32, delta: f64) -> usize {
    let c = c_seq as f64;
    (c * (4.0 * n as f64 * c / delta).ln()).ceil().max(1.0) as usize
}

fn matches_survivor(world: &World, key: u32, x: Prompt, survivors: &[Trace]) -> bool {
    let model = ModelId::deterministic(key);
    let mut prefix: Vec<Token> = Vec::with_capacity(world.horizon());
    let mut live: Vec<&Trace> = survivors.iter().collect();
    for t in 1..=world.horizon() {
        let tok = model.bit(world.index(x, t, &prefix));
        live.retain(|y| y.0[t - 1] == tok);
        if live.is_empty() {
            return false;
        }
        prefix.push(tok);
    }
    true
}

/// RL fine-tuning: sample the reference model, filter, and return the
/// deterministic policy whose full trace lands in the filtered set on the
/// most prompts (first in enumeration order among ties).
pub fn rl_finetune(
    prompts: &[Prompt],
    world: &World,
    delta: f64,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<RlOutcome> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} is not in (0, 1)")));
    }
    if prompts.is_empty() {
        return Ok(RlOutcome {
            model: ModelId::deterministic(0),
            samples_per_prompt: 0,
            filtered: FilteredSet::default(),
            complete: true,
        });
    }
    let c_seq = world.config().coverage.c_seq;
    let floor = 1.0 / c_seq as f64;
    let m = ref_samples_per_prompt(prompts.len(), c_seq, delta);
    let mut filtered = FilteredSet::default();
    let mut complete = true;
    for &x in prompts {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for _ in 0..m {
            let (y, p) = world.ref_generate(x, rng, ledger)?;
            if seen.insert(y.clone()) && p >= floor {
                kept.push(y);
            }
        }
        kept.retain(|y| world.verify(x, y.answer(), ledger));
        kept.sort();
        let mut target = world.high_prob_correct(x);
        target.sort();
        complete &= kept == target;
        filtered.entries.push((x, kept));
    }

    let mut groups: HashMap<(Prompt, &[Trace]), usize> = HashMap::new();
    let mut hopeless = 0usize;
    for (x, ys) in &filtered.entries {
        if ys.is_empty() {
            hopeless += 1;
        } else {
            *groups.entry((*x, ys.as_slice())).or_default() += 1;
        }
    }
    let mut groups: Vec<_> = groups.into_iter().collect();
    groups.sort_by(|a, b| b.1.cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));

    let mut best_key = 0u32;
    let mut best_loss = usize::MAX;
    for key in 0..(1u64 << world.dim()) as u32 {
        let mut loss = hopeless;
        for ((x, ys), weight) in &groups {
            if !matches_survivor(world, key, *x, ys) {
                loss += weight;
                if loss >= best_loss {
                    break;
                }
            }
        }
        if loss < best_loss {
            best_loss = loss;
            best_key = key;
            if loss == hopeless {
                break;
            }
        }
    }
    Ok(RlOutcome {
        model: ModelId::deterministic(best_key),
        samples_per_prompt: m,
        filtered,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, CoverageProfile, WorldConfig};
    use proptest::prelude::*;

    fn small_world(seed: u64, grid: Vec<f64>) -> World {
        build_world(&WorldConfig {
            alphabet_size: 3,
            horizon: 3,
            dim: 5,
            prompt_universe: 64,
            stochastic_noise_grid: grid,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    /// Brute force over the whole class with the loss evaluated token by token.
    fn brute_force_erm(dataset: &[(Prompt, Trace)], world: &World) -> ModelId {
        let mut best = None;
        let mut best_loss = f64::INFINITY;
        for m in world.enumerate_class() {
            let mut mistakes = 0u64;
            let mut total = 0u64;
            for (x, y) in dataset {
                for (i, &tok) in y.0.iter().enumerate() {
                    mistakes += (m.bit(world.index(*x, i + 1, &y.0[..i])) != tok) as u64;
                    total += 1;
                }
            }
            let loss = if world.is_stochastic() {
                log_loss(mistakes, total, m.noise, world.alphabet_size())
            } else {
                mistakes as f64
            };
            if loss < best_loss {
                best_loss = loss;
                best = Some(m);
            }
        }
        best.unwrap()
    }

    fn noisy_dataset(world: &World, n: usize, flips: usize, rng: &mut Stream) -> CotDataset {
        let mut data: CotDataset = (0..n)
            .map(|_| {
                let x = world.sample_prompt(rng);
                (x, world.teacher_trace(x))
            })
            .collect();
        for _ in 0..flips {
            let i = rng.below(n);
            let t = rng.below(world.horizon());
            data[i].1 .0[t] = rng.below(world.alphabet_size()) as Token;
        }
        data
    }

    #[test]
    fn sample_size_formula() {
        let b = SampleBudget::default();
        let expect = ((12.0 * (12.0f64 * 6.0 * 4.0).ln() * 20f64.ln() + 10f64.ln()) / 0.05).ceil() as usize;
        assert_eq!(n_prompt_for(0.05, 0.1, 12, 6, 4, &b).unwrap(), expect);
        assert!(n_prompt_for(0.0, 0.1, 12, 6, 4, &b).is_err());
        assert!(n_prompt_for(0.1, 1.0, 12, 6, 4, &b).is_err());
        let half = SampleBudget { n_prompt_constant: 0.5 };
        assert!(n_prompt_for(0.05, 0.1, 12, 6, 4, &half).unwrap() <= expect / 2 + 1);
    }

    #[test]
    fn empty_dataset_gives_first_member() {
        let w = small_world(1, vec![0.3, 0.1]);
        assert_eq!(ntp_erm(&[], &w), ModelId { key: 0, noise: 0.1 });
        let w = small_world(1, vec![]);
        assert_eq!(ntp_erm(&[], &w), ModelId::deterministic(0));
    }

    #[test]
    fn teacher_data_recovers_teacher_on_touched_coordinates() {
        let w = small_world(3, vec![]);
        let data: CotDataset = (0..64).map(|x| (x, w.teacher_trace(x))).collect();
        let m = ntp_erm(&data, &w);
        let counts = token_counts(&data, &w);
        for c in 0..w.dim() {
            if counts.zeros[c] + counts.ones[c] > 0 {
                assert_eq!(m.bit(c), w.teacher_model().bit(c));
            } else {
                assert_eq!(m.bit(c), 0);
            }
        }
    }

    #[test]
    fn stochastic_erm_picks_zero_noise_on_clean_data() {
        let w = small_world(4, vec![0.0, 0.1, 0.3]);
        let data: CotDataset = (0..20).map(|x| (x, w.teacher_trace(x))).collect();
        assert_eq!(ntp_erm(&data, &w).noise, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn erm_matches_brute_force(seed in 0u64..1000, n in 0usize..30, flips in 0usize..12, stoch in any::<bool>()) {
            let grid = if stoch { vec![0.3, 0.0, 0.1] } else { vec![] };
            let w = small_world(seed, grid);
            let mut rng = Stream::new(seed, "data");
            let data = noisy_dataset(&w, n.max(1), if n == 0 { 0 } else { flips }, &mut rng);
            let data = if n == 0 { Vec::new() } else { data };
            prop_assert_eq!(ntp_erm(&data, &w), brute_force_erm(&data, &w));
        }
    }

    fn rl_world(c_seq: u32, eta: f64, seed: u64) -> World {
        build_world(&WorldConfig {
            alphabet_size: 4,
            horizon: 4,
            dim: 6,
            prompt_universe: 256,
            coverage: CoverageProfile { c_seq, eta },
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn sample_count_formula() {
        assert_eq!(
            ref_samples_per_prompt(10, 4, 0.1),
            (4.0 * (1600.0f64).ln()).ceil() as usize
        );
    }

    #[test]
    fn rl_finetune_filters_and_meters() {
        let w = rl_world(4, 0.0, 9);
        let mut rng = Stream::new(9, "rl");
        let prompts: Vec<Prompt> = (0..20).map(|_| w.sample_prompt(&mut rng)).collect();
        let ledger = CostLedger::default();
        let out = rl_finetune(&prompts, &w, 0.1, &mut rng, &ledger).unwrap();
        let snap = ledger.snapshot();
        assert_eq!(snap.ref_generations, (out.samples_per_prompt * prompts.len()) as u64);
        assert_eq!(snap.cot_queries, 0);
        for (x, ys) in &out.filtered.entries {
            let unique: HashSet<_> = ys.iter().collect();
            assert_eq!(unique.len(), ys.len());
            for y in ys {
                assert_eq!(y.answer(), w.correct_answer(*x));
            }
        }
        assert!(out.complete);
        for &x in &prompts {
            assert_eq!(w.deterministic_trace(out.model.key, x), w.teacher_trace(x));
        }
    }

    #[test]
    fn rl_finetune_on_uncovered_prompts_learns_nothing() {
        let w = rl_world(4, 0.999, 2);
        let mut rng = Stream::new(2, "rl");
        let prompts: Vec<Prompt> = (0..8).filter(|&x| !w.is_covered(x)).collect();
        assert!(!prompts.is_empty());
        let out = rl_finetune(&prompts, &w, 0.1, &mut rng, &CostLedger::default()).unwrap();
        assert!(out.filtered.entries.iter().all(|(_, ys)| ys.is_empty()));
        assert_eq!(out.model, ModelId::deterministic(0));
    }
}
