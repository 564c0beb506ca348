//! The synthetic world: prompts, the lookup-table policy class, the teacher,
//! the outcome verifier and the reference model used by RL fine-tuning.
//!
//! A policy is a key `theta` of `dim` bits plus an optional noise level. At
//! step `t` on prompt `x` it emits the bit `theta[g(x, t)]`. Every prompt has
//! a depth: prompts are ordered by decreasing probability and a prompt whose
//! tail mass (its own mass plus everything rarer) lies in `(2^-(l+1), 2^-l]`
//! gets depth `l`, capped at `dim - 1`. Intermediate steps read coordinates at
//! or below the depth and the final step reads the depth coordinate itself,
//! so rare prompts are the only ones that exercise rare coordinates.

use std::collections::HashSet;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metering::CostLedger;
use crate::rng::{combine, hash_label, mix64, unit_interval, Stream};

pub type Prompt = u32;
pub type Token = u8;

/// Largest supported key width; ERM enumerates all `2^dim` keys.
pub const MAX_DIM: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trace(pub Vec<Token>);

impl Trace {
    pub fn answer(&self) -> Token {
        *self.0.last().expect("traces are never empty")
    }
}

/// A member of the policy class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelId {
    #[serde(serialize_with = "key_to_hex", deserialize_with = "key_from_hex")]
    pub key: u32,
    pub noise: f64,
}

impl ModelId {
    pub fn deterministic(key: u32) -> Self {
        Self { key, noise: 0.0 }
    }

    pub fn bit(&self, coord: usize) -> Token {
        ((self.key >> coord) & 1) as Token
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}/{}", self.key, self.noise)
    }
}

fn key_to_hex<S: Serializer>(key: &u32, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{key:#x}"))
}

fn key_from_hex<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u32, D::Error> {
    let s = String::deserialize(d)?;
    u32::from_str_radix(s.trim_start_matches("0x"), 16).map_err(serde::de::Error::custom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageProfile {
    /// Inverse probability the reference model puts on the teacher trace.
    #[serde(default = "default_c_seq")]
    pub c_seq: u32,
    /// Probability that a prompt is uncovered by the reference model.
    #[serde(default)]
    pub eta: f64,
}

fn default_c_seq() -> u32 {
    4
}

impl Default for CoverageProfile {
    fn default() -> Self {
        Self {
            c_seq: default_c_seq(),
            eta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub alphabet_size: u32,
    pub horizon: usize,
    pub dim: usize,
    #[serde(default = "default_universe")]
    pub prompt_universe: usize,
    #[serde(default = "default_rho_exponent")]
    pub rho_exponent: f64,
    #[serde(default)]
    pub prefix_mixing: bool,
    /// Non-empty turns the class stochastic: every key is paired with every
    /// listed noise level.
    #[serde(default)]
    pub stochastic_noise_grid: Vec<f64>,
    #[serde(default)]
    pub coverage: CoverageProfile,
    #[serde(default)]
    pub seed: u64,
}

fn default_universe() -> usize {
    16384
}

fn default_rho_exponent() -> f64 {
    1.2
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 4,
            horizon: 6,
            dim: 12,
            prompt_universe: default_universe(),
            rho_exponent: default_rho_exponent(),
            prefix_mixing: false,
            stochastic_noise_grid: Vec::new(),
            coverage: CoverageProfile::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: WorldConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.alphabet_size) {
            return Err(Error::config("world.alphabet_size", "must be in [2, 256]"));
        }
        if self.horizon == 0 {
            return Err(Error::config("world.horizon", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("world.dim", "must be at least 1"));
        }
        if self.dim > MAX_DIM {
            return Err(Error::Capacity(format!("world.dim = {} exceeds {MAX_DIM}", self.dim)));
        }
        if self.prompt_universe == 0 || self.prompt_universe > u32::MAX as usize {
            return Err(Error::config("world.prompt_universe", "must be in [1, 2^32)"));
        }
        if !self.rho_exponent.is_finite() || self.rho_exponent < 0.0 {
            return Err(Error::config("world.rho_exponent", "must be finite and non-negative"));
        }
        if self.stochastic_noise_grid.iter().any(|q| !(0.0..1.0).contains(q)) {
            return Err(Error::config("world.stochastic_noise_grid", "levels must be in [0, 1)"));
        }
        if self.coverage.c_seq == 0 {
            return Err(Error::config("world.coverage.c_seq", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.coverage.eta) {
            return Err(Error::config("world.coverage.eta", "must be in [0, 1)"));
        }
        let sigma = self.alphabet_size as u128;
        let room = sigma.saturating_pow(self.horizon as u32 - 1).saturating_mul(sigma - 1);
        if (self.coverage.c_seq as u128 - 1) > room {
            return Err(Error::config(
                "world.coverage.c_seq",
                format!(
                    "needs {} distinct wrong traces but only {room} exist",
                    self.coverage.c_seq - 1
                ),
            ));
        }
        Ok(())
    }

    pub fn is_stochastic(&self) -> bool {
        !self.stochastic_noise_grid.is_empty()
    }
}

pub struct World {
    config: WorldConfig,
    teacher_key: u32,
    salt: u64,
    rho: Vec<f64>,
    sampler: WeightedIndex<f64>,
    depth: Vec<u8>,
    depth_mass: Vec<f64>,
    /// Representative prompt of each depth that has one.
    depth_rep: Vec<Option<Prompt>>,
    /// `g(x, t)` for prefix-independent worlds, row-major by prompt.
    index_table: Vec<u8>,
    teacher: Vec<Token>,
    covered: Vec<bool>,
    /// `c_seq - 1` wrong traces per prompt, row-major by prompt.
    distractors: Vec<Token>,
    noise_grid: Vec<f64>,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("config", &self.config)
            .field("teacher_key", &self.teacher_key)
            .finish()
    }
}

pub fn build_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let n = config.prompt_universe;
    let (t_len, dim) = (config.horizon, config.dim);
    let salt = hash_label(mix64(config.seed), "world");

    let mut teacher_rng = Stream::new(config.seed, "world/teacher");
    let teacher_key = (teacher_rng.next_u64() & ((1u64 << dim) - 1)) as u32;

    let raw: Vec<f64> = (0..n).map(|x| (1.0 + x as f64).powf(-config.rho_exponent)).collect();
    let total: f64 = raw.iter().sum();
    let rho: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let sampler = WeightedIndex::new(&rho).map_err(|e| Error::config("world.rho_exponent", e.to_string()))?;

    let mut depth = vec![0u8; n];
    let mut tail = 0.0;
    for x in (0..n).rev() {
        tail += rho[x];
        let level = (-tail.min(1.0).log2()).floor().max(0.0) as usize;
        depth[x] = level.min(dim - 1) as u8;
    }
    let mut depth_mass = vec![0.0; dim];
    let mut depth_rep = vec![None; dim];
    for x in 0..n {
        depth_mass[depth[x] as usize] += rho[x];
        depth_rep[depth[x] as usize].get_or_insert(x as Prompt);
    }

    let mut noise_grid = config.stochastic_noise_grid.clone();
    noise_grid.sort_by(f64::total_cmp);
    noise_grid.dedup();

    let mut world = World {
        config: config.clone(),
        teacher_key,
        salt,
        rho,
        sampler,
        depth,
        depth_mass,
        depth_rep,
        index_table: Vec::new(),
        teacher: Vec::new(),
        covered: Vec::new(),
        distractors: Vec::new(),
        noise_grid,
    };

    if !config.prefix_mixing {
        let mut table = vec![0u8; n * t_len];
        for x in 0..n {
            for t in 1..=t_len {
                table[x * t_len + t - 1] = world.hashed_index(x as Prompt, t, &[]) as u8;
            }
        }
        world.index_table = table;
    }

    let mut teacher = Vec::with_capacity(n * t_len);
    for x in 0..n {
        teacher.extend(world.deterministic_trace(teacher_key, x as Prompt).0);
    }
    world.teacher = teacher;

    let cover_salt = hash_label(salt, "coverage");
    world.covered = (0..n)
        .map(|x| unit_interval(combine(cover_salt, x as u64)) >= config.coverage.eta)
        .collect();

    let wrong = config.coverage.c_seq as usize - 1;
    if wrong > 0 {
        let sigma = config.alphabet_size as u64;
        let d_salt = hash_label(salt, "distractors");
        let mut flat = Vec::with_capacity(n * wrong * t_len);
        for x in 0..n {
            let correct = world.teacher[(x + 1) * t_len - 1] as u64;
            let mut seen = HashSet::with_capacity(wrong);
            let mut attempt = 0u64;
            while seen.len() < wrong {
                let h = combine(combine(d_salt, x as u64), attempt);
                attempt += 1;
                let mut tokens: Vec<Token> = (0..t_len - 1)
                    .map(|t| (combine(h, t as u64) % sigma) as Token)
                    .collect();
                let shift = 1 + combine(h, u64::MAX) % (sigma - 1);
                tokens.push(((correct + shift) % sigma) as Token);
                if seen.insert(tokens.clone()) {
                    flat.extend(tokens);
                }
            }
        }
        world.distractors = flat;
    }
    Ok(world)
}

impl World {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn prompt_count(&self) -> usize {
        self.rho.len()
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn alphabet_size(&self) -> usize {
        self.config.alphabet_size as usize
    }

    pub fn teacher_key(&self) -> u32 {
        self.teacher_key
    }

    pub fn teacher_model(&self) -> ModelId {
        ModelId::deterministic(self.teacher_key)
    }

    pub fn rho(&self, x: Prompt) -> f64 {
        self.rho[x as usize]
    }

    pub fn rho_weights(&self) -> &[f64] {
        &self.rho
    }

    pub fn depth(&self, x: Prompt) -> usize {
        self.depth[x as usize] as usize
    }

    /// Total prompt mass at each depth.
    pub fn depth_mass(&self) -> &[f64] {
        &self.depth_mass
    }

    pub fn is_covered(&self, x: Prompt) -> bool {
        self.covered[x as usize]
    }

    pub fn noise_grid(&self) -> &[f64] {
        &self.noise_grid
    }

    pub fn is_stochastic(&self) -> bool {
        !self.noise_grid.is_empty()
    }

    pub fn sample_prompt(&self, rng: &mut Stream) -> Prompt {
        self.sampler.sample(rng) as Prompt
    }

    fn hashed_index(&self, x: Prompt, t: usize, prefix: &[Token]) -> usize {
        let depth = self.depth[x as usize] as u64;
        if t == self.config.horizon && !self.config.prefix_mixing {
            return depth as usize;
        }
        let mut h = combine(combine(self.salt, x as u64), t as u64);
        if self.config.prefix_mixing {
            for &tok in prefix {
                h = combine(h, tok as u64);
            }
        }
        (h % (depth + 1)) as usize
    }

    /// Coordinate read at step `t` (1-based) given the tokens emitted so far.
    pub fn index(&self, x: Prompt, t: usize, prefix: &[Token]) -> usize {
        if self.config.prefix_mixing {
            self.hashed_index(x, t, prefix)
        } else {
            self.index_table[x as usize * self.config.horizon + t - 1] as usize
        }
    }

    fn check_prompt(&self, x: Prompt) -> Result<()> {
        if (x as usize) < self.rho.len() {
            Ok(())
        } else {
            Err(Error::param(
                "x",
                format!("prompt {x} outside universe of {}", self.rho.len()),
            ))
        }
    }

    /// Next-token sample of `model` at prompt `x` after `prefix`.
    pub fn model_step(&self, model: &ModelId, x: Prompt, prefix: &[Token], rng: &mut Stream) -> Result<Token> {
        self.check_prompt(x)?;
        if prefix.len() >= self.config.horizon {
            return Err(Error::param(
                "prefix",
                format!("length {} leaves no step to take", prefix.len()),
            ));
        }
        Ok(self.step(model, x, prefix, rng))
    }

    fn step(&self, model: &ModelId, x: Prompt, prefix: &[Token], rng: &mut Stream) -> Token {
        let det = model.bit(self.index(x, prefix.len() + 1, prefix));
        if model.noise > 0.0 && rng.uniform() < model.noise {
            rng.below(self.alphabet_size()) as Token
        } else {
            det
        }
    }

    pub fn deterministic_trace(&self, key: u32, x: Prompt) -> Trace {
        let model = ModelId::deterministic(key);
        let mut tokens = Vec::with_capacity(self.config.horizon);
        for t in 1..=self.config.horizon {
            tokens.push(model.bit(self.index(x, t, &tokens)));
        }
        Trace(tokens)
    }

    pub fn deterministic_answer(&self, key: u32, x: Prompt) -> Token {
        if self.config.prefix_mixing {
            self.deterministic_trace(key, x).answer()
        } else {
            ModelId::deterministic(key).bit(self.depth[x as usize] as usize)
        }
    }

    pub fn sample_trace(&self, model: &ModelId, x: Prompt, rng: &mut Stream) -> Trace {
        let mut tokens = Vec::with_capacity(self.config.horizon);
        for _ in 0..self.config.horizon {
            let tok = self.step(model, x, &tokens, rng);
            tokens.push(tok);
        }
        Trace(tokens)
    }

    /// Samples the final answer of a rollout.
    pub fn sample_answer(&self, model: &ModelId, x: Prompt, rng: &mut Stream) -> Token {
        if self.config.prefix_mixing {
            return self.sample_trace(model, x, rng).answer();
        }
        let det = model.bit(self.depth[x as usize] as usize);
        if model.noise > 0.0 && rng.uniform() < model.noise {
            rng.below(self.alphabet_size()) as Token
        } else {
            det
        }
    }

    /// Correct final answer; free, for evaluation only.
    pub fn correct_answer(&self, x: Prompt) -> Token {
        self.teacher[(x as usize + 1) * self.config.horizon - 1]
    }

    pub fn teacher_trace(&self, x: Prompt) -> Trace {
        let t = self.config.horizon;
        Trace(self.teacher[x as usize * t..(x as usize + 1) * t].to_vec())
    }

    /// Queries the teacher for a chain of thought. Charged.
    pub fn teacher_cot(&self, x: Prompt, ledger: &CostLedger) -> Trace {
        ledger.add_cot_queries(1);
        self.teacher_trace(x)
    }

    /// Checks a final answer. Charged.
    pub fn verify(&self, x: Prompt, answer: Token, ledger: &CostLedger) -> bool {
        ledger.add_verifier_calls(1);
        answer == self.correct_answer(x)
    }

    /// Exact per-prompt accuracy `P(answer verifies)`. Unavailable when the
    /// answer depends on a sampled prefix.
    pub fn analytic_accuracy(&self, model: &ModelId, x: Prompt) -> Option<f64> {
        if self.config.prefix_mixing {
            return None;
        }
        let hit = (model.bit(self.depth[x as usize] as usize) == self.correct_answer(x)) as u8 as f64;
        Some(hit * (1.0 - model.noise) + model.noise / self.alphabet_size() as f64)
    }

    /// Final-answer distribution of `model` at `x`, indexed by token.
    pub fn outcome_distribution(&self, model: &ModelId, x: Prompt) -> Option<Vec<f64>> {
        if self.config.prefix_mixing {
            return None;
        }
        let sigma = self.alphabet_size();
        let mut dist = vec![model.noise / sigma as f64; sigma];
        dist[model.bit(self.depth[x as usize] as usize) as usize] += 1.0 - model.noise;
        Some(dist)
    }

    /// One prompt per populated depth with the total mass of that depth.
    /// In prefix-independent worlds every answer depends on the prompt only
    /// through its depth, so exact evaluation can run over these classes.
    pub fn answer_classes(&self) -> Option<Vec<(Prompt, f64)>> {
        if self.config.prefix_mixing {
            return None;
        }
        Some(
            self.depth_rep
                .iter()
                .zip(&self.depth_mass)
                .filter_map(|(rep, &mass)| rep.map(|x| (x, mass)))
                .collect(),
        )
    }

    fn distractor(&self, x: Prompt, i: usize) -> Trace {
        let (t, wrong) = (self.config.horizon, self.config.coverage.c_seq as usize - 1);
        let start = (x as usize * wrong + i) * t;
        Trace(self.distractors[start..start + t].to_vec())
    }

    /// Full support of the reference model at `x` with probabilities.
    pub fn ref_support(&self, x: Prompt) -> Result<Vec<(Trace, f64)>> {
        self.check_prompt(x)?;
        let c = self.config.coverage.c_seq as usize;
        if self.is_covered(x) {
            let p = 1.0 / c as f64;
            let mut support = vec![(self.teacher_trace(x), p)];
            support.extend((0..c - 1).map(|i| (self.distractor(x, i), p)));
            Ok(support)
        } else if c == 1 {
            Err(Error::config(
                "world.coverage.c_seq",
                format!("prompt {x} is uncovered and c_seq = 1 leaves no support"),
            ))
        } else {
            let p = 1.0 / (c - 1) as f64;
            Ok((0..c - 1).map(|i| (self.distractor(x, i), p)).collect())
        }
    }

    /// Samples one trace from the reference model. Charged.
    pub fn ref_generate(&self, x: Prompt, rng: &mut Stream, ledger: &CostLedger) -> Result<(Trace, f64)> {
        self.check_prompt(x)?;
        let c = self.config.coverage.c_seq as usize;
        let sample = if self.is_covered(x) {
            let i = rng.below(c);
            let trace = if i == 0 {
                self.teacher_trace(x)
            } else {
                self.distractor(x, i - 1)
            };
            (trace, 1.0 / c as f64)
        } else if c == 1 {
            return Err(Error::config(
                "world.coverage.c_seq",
                format!("prompt {x} is uncovered and c_seq = 1 leaves no support"),
            ));
        } else {
            (self.distractor(x, rng.below(c - 1)), 1.0 / (c - 1) as f64)
        };
        ledger.add_ref_generations(1);
        Ok(sample)
    }

    /// Correct traces the reference model emits with probability at least `1 / c_seq`.
    pub fn high_prob_correct(&self, x: Prompt) -> Vec<Trace> {
        let floor = 1.0 / self.config.coverage.c_seq as f64;
        let correct = self.correct_answer(x);
        self.ref_support(x)
            .map(|s| {
                s.into_iter()
                    .filter(|(y, p)| *p >= floor && y.answer() == correct)
                    .map(|(y, _)| y)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// All members of the class: keys ascending, then noise ascending.
    pub fn enumerate_class(&self) -> impl Iterator<Item = ModelId> + '_ {
        let grid: &[f64] = if self.noise_grid.is_empty() {
            &[0.0]
        } else {
            &self.noise_grid
        };
        (0..(1u64 << self.config.dim))
            .flat_map(move |key| grid.iter().map(move |&noise| ModelId { key: key as u32, noise }))
    }

    pub fn class_size(&self) -> usize {
        (1usize << self.config.dim) * self.noise_grid.len().max(1)
    }
}
