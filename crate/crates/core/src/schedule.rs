//! Boosting weight tables and per-prompt ranks.
//!
//! `beta[j][r]` is the probability that the final vote ends at or below the
//! threshold given `r` correct members after `j` phases, when each remaining
//! member is independently correct with probability `1 - err_star`.
//! `alpha[j][r] = beta[j+1][r] - beta[j+1][r+1]` is the routing weight of a
//! prompt of rank `r` in phase `j`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metering::CostLedger;
use crate::rng::Stream;
use crate::world::{ModelId, Prompt, World};

/// Largest table the builder accepts; memory is quadratic in `k`.
pub const MAX_PHASES: usize = 2048;

/// Default number of rollouts per member for Monte-Carlo ranks.
pub const DEFAULT_MC_SAMPLES: usize = 128;

/// A non-negative rational, used wherever an exact comparison matters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub const fn new_unchecked(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::param("ratio", "zero denominator"));
        }
        let g = gcd(num, den).max(1);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * k)`.
    pub fn floor_mul(self, k: usize) -> u64 {
        (self.num as u128 * k as u128 / self.den as u128) as u64
    }

    /// `r <= self * k`, decided without rounding.
    pub fn admits(self, r: usize, k: usize) -> bool {
        r as u128 * self.den as u128 <= self.num as u128 * k as u128
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    /// Accepts `a/b` or a plain decimal such as `0.8`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("not a ratio: `{s}`"));
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse::<u64>().map_err(|_| bad())?;
            let b = b.trim().parse::<u64>().map_err(|_| bad())?;
            return Ratio::new(a, b);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_val: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let den = 10u64.pow(frac.len() as u32);
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        Ratio::new(num, den)
    }
}

impl TryFrom<String> for Ratio {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

/// Target member error and vote threshold of a boosting regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub err_star: Ratio,
    pub threshold: Ratio,
}

impl Regime {
    /// Plurality of deterministic members.
    pub const DETERMINISTIC: Regime = Regime {
        err_star: Ratio::new_unchecked(1, 4),
        threshold: Ratio::new_unchecked(1, 2),
    };
    /// Monte-Carlo ranks over stochastic members.
    pub const STOCHASTIC: Regime = Regime {
        err_star: Ratio::new_unchecked(1, 10),
        threshold: Ratio::new_unchecked(4, 5),
    };

    fn validate(&self) -> Result<()> {
        let e = self.err_star;
        if e.num == 0 || e.den == 0 || 2 * e.num as u128 >= e.den as u128 {
            return Err(Error::param("err_star", format!("{e} is not in (0, 1/2)")));
        }
        let t = self.threshold;
        if t.num == 0 || t.den == 0 || t.num > t.den {
            return Err(Error::param("threshold", format!("{t} is not in (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct WeightTable {
    pub k: usize,
    pub regime: Regime,
    /// `beta[j][r]` for `j in 0..=k`, `r in 0..=j`.
    pub beta: Vec<Vec<f64>>,
    /// `alpha[j][r]` for `j in 0..k`, `r in 0..=j`.
    pub alpha: Vec<Vec<f64>>,
    pub alpha_max: Vec<f64>,
}

pub fn build_weight_table(k: usize, regime: Regime) -> Result<WeightTable> {
    regime.validate()?;
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if k > MAX_PHASES {
        return Err(Error::Capacity(format!("k = {k} exceeds the table limit {MAX_PHASES}")));
    }
    let err = regime.err_star.to_f64();
    let mut beta: Vec<Vec<f64>> = vec![Vec::new(); k + 1];
    beta[k] = (0..=k)
        .map(|r| if regime.threshold.admits(r, k) { 1.0 } else { 0.0 })
        .collect();
    for j in (0..k).rev() {
        let next = &beta[j + 1];
        let row = (0..=j).map(|r| err * next[r] + (1.0 - err) * next[r + 1]).collect();
        beta[j] = row;
    }
    let alpha: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..=j).map(|r| beta[j + 1][r] - beta[j + 1][r + 1]).collect())
        .collect();
    let alpha_max = alpha
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .collect();
    Ok(WeightTable {
        k,
        regime,
        beta,
        alpha,
        alpha_max,
    })
}

impl WeightTable {
    /// Probability of routing a rank-`r` prompt into the phase-`j` dataset.
    pub fn acceptance_prob(&self, j: usize, r: usize) -> Result<f64> {
        if j >= self.k {
            return Err(Error::param("j", format!("phase {j} outside [0, {})", self.k)));
        }
        if r > j {
            return Err(Error::param("r", format!("rank {r} exceeds phase {j}")));
        }
        let max = self.alpha_max[j];
        Ok(if max > 0.0 { self.alpha[j][r] / max } else { 0.0 })
    }

    pub fn initial_failure_prob(&self) -> f64 {
        self.beta[0][0]
    }
}

fn ln_choose_row(n: u64) -> Vec<f64> {
    let mut row = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    row.push(0.0);
    for i in 1..=n {
        acc += ((n - i + 1) as f64).ln() - (i as f64).ln();
        row.push(acc);
    }
    row
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `P(Bin(n, p) in [lo, hi])`, summed in log space.
pub fn binomial_range_prob(n: u64, p: f64, lo: u64, hi: u64) -> f64 {
    if lo > hi || lo > n {
        return 0.0;
    }
    let hi = hi.min(n);
    if p <= 0.0 {
        return if lo == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if hi == n { 1.0 } else { 0.0 };
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let ln_c = ln_choose_row(n);
    let ln = log_sum_exp((lo..=hi).map(|i| ln_c[i as usize] + i as f64 * lp + (n - i) as f64 * lq));
    ln.exp().min(1.0)
}

/// Closed form of `beta[j][r]`: `P(Bin(k - j, success_prob) <= floor(threshold * k) - r)`.
pub fn binomial_tail_oracle(k: usize, j: usize, r: usize, success_prob: f64, threshold: Ratio) -> f64 {
    let bound = threshold.floor_mul(k) as i128 - r as i128;
    if bound < 0 {
        return 0.0;
    }
    let trials = (k - j) as u64;
    binomial_range_prob(trials, success_prob, 0, (bound as u64).min(trials))
}

/// Whether `m` rollouts per member separate accurate members from inaccurate
/// ones well enough for the stochastic regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McCheck {
    /// `P(estimate >= 9/10 | accuracy = 19/20)`, needs to be at least 19/20.
    pub detect: f64,
    /// `P(estimate >= 9/10 | accuracy = 4/5)`, needs to be at most 1/10.
    pub false_alarm: f64,
}

impl McCheck {
    pub fn ok(&self) -> bool {
        self.detect >= 0.95 && self.false_alarm <= 0.1
    }
}

/// Smallest success count `c` with `c / m >= 9/10`.
fn mc_pass_count(m: usize) -> u64 {
    (9 * m as u64).div_ceil(10)
}

pub fn check_mc_samples(m: usize) -> McCheck {
    let need = mc_pass_count(m);
    let m = m as u64;
    McCheck {
        detect: binomial_range_prob(m, 0.95, need, m),
        false_alarm: binomial_range_prob(m, 0.8, need, m),
    }
}

/// Number of members whose deterministic answer on `x` verifies.
pub fn rank_det(members: &[ModelId], x: Prompt, world: &World, ledger: &CostLedger) -> usize {
    members
        .iter()
        .filter(|m| {
            let answer = world.deterministic_answer(m.key, x);
            ledger.add_learner_rollouts(1);
            world.verify(x, answer, ledger)
        })
        .count()
}

/// Number of members whose estimated accuracy on `x` from `samples`
/// rollouts reaches 9/10.
pub fn rank_mc(
    members: &[ModelId],
    x: Prompt,
    world: &World,
    samples: usize,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> usize {
    let need = mc_pass_count(samples);
    members
        .iter()
        .filter(|m| {
            let hits = (0..samples)
                .filter(|_| {
                    let answer = world.sample_answer(m, x, rng);
                    world.verify(x, answer, ledger)
                })
                .count() as u64;
            ledger.add_learner_rollouts(samples as u64);
            hits >= need
        })
        .count()
}
