use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curriculum::{choose_k, CurriculumConfig, Variant};
use crate::error::{Error, Result};
use crate::learners::SampleBudget;
use crate::metering::{EvalMode, McEval};
use crate::world::WorldConfig;

/// What a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    DetSft,
    StochSft,
    Rl,
    /// Plain next-token prediction on i.i.d. prompts, smallest sufficient pool.
    BaselineNtp,
    /// Plain RL fine-tuning on i.i.d. prompts.
    BaselineRlft,
}

impl RunKind {
    pub const ALL: [RunKind; 5] = [
        RunKind::DetSft,
        RunKind::StochSft,
        RunKind::Rl,
        RunKind::BaselineNtp,
        RunKind::BaselineRlft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RunKind::DetSft => "det-sft",
            RunKind::StochSft => "stoch-sft",
            RunKind::Rl => "rl",
            RunKind::BaselineNtp => "baseline-ntp",
            RunKind::BaselineRlft => "baseline-rlft",
        }
    }

    pub fn curriculum_variant(self) -> Option<Variant> {
        match self {
            RunKind::DetSft => Some(Variant::DetSft),
            RunKind::StochSft => Some(Variant::StochSft),
            RunKind::Rl => Some(Variant::Rl),
            RunKind::BaselineNtp | RunKind::BaselineRlft => None,
        }
    }
}

impl From<Variant> for RunKind {
    fn from(v: Variant) -> Self {
        match v {
            Variant::DetSft => RunKind::DetSft,
            Variant::StochSft => RunKind::StochSft,
            Variant::Rl => RunKind::Rl,
        }
    }
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RunKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown run kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_mode")]
    pub mode: EvalMode,
    #[serde(default = "default_mc_prompts")]
    pub mc_prompts: usize,
    #[serde(default = "default_mc_rollouts")]
    pub mc_rollouts_per_prompt: usize,
}

fn default_eval_mode() -> EvalMode {
    EvalMode::Analytic
}
fn default_mc_prompts() -> usize {
    McEval::default().prompts
}
fn default_mc_rollouts() -> usize {
    McEval::default().rollouts_per_prompt
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: default_eval_mode(),
            mc_prompts: default_mc_prompts(),
            mc_rollouts_per_prompt: default_mc_rollouts(),
        }
    }
}

impl EvalConfig {
    pub fn mc(&self) -> McEval {
        McEval {
            prompts: self.mc_prompts,
            rollouts_per_prompt: self.mc_rollouts_per_prompt,
        }
    }
}

/// Settings of the i.i.d. baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Seeds evaluated at every probed pool size.
    #[serde(default = "default_probe_seeds")]
    pub seeds_per_probe: usize,
    /// Bisection stops once the bracket is at most this fraction of its midpoint.
    #[serde(default = "default_bracket")]
    pub bracket_tolerance: f64,
}

fn default_probe_seeds() -> usize {
    10
}
fn default_bracket() -> f64 {
    0.1
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            seeds_per_probe: default_probe_seeds(),
            bracket_tolerance: default_bracket(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_cal_runs")]
    pub runs: usize,
    #[serde(default = "default_cal_rate")]
    pub success_rate: f64,
}

fn default_cal_runs() -> usize {
    100
}
fn default_cal_rate() -> f64 {
    0.95
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            runs: default_cal_runs(),
            success_rate: default_cal_rate(),
        }
    }
}

/// Grid axes of a sweep; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c_seq: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dim: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Unlabelled prompts drawn for a curriculum run.
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub world: WorldConfig,
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub budget: SampleBudget,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
}

fn default_pool() -> usize {
    20000
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(world: WorldConfig, curriculum: CurriculumConfig) -> Self {
        Self {
            pool_size: default_pool(),
            seeds: default_seeds(),
            world,
            curriculum,
            budget: SampleBudget::default(),
            eval: EvalConfig::default(),
            baseline: BaselineConfig::default(),
            calibration: CalibrationConfig::default(),
            sweep: SweepAxes::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.curriculum.validate()?;
        let c1 = self.budget.n_prompt_constant;
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(Error::config("budget.n_prompt_constant", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        if self.eval.mc_prompts == 0 || self.eval.mc_rollouts_per_prompt == 0 {
            return Err(Error::config("eval", "Monte-Carlo sizes must be positive"));
        }
        if self.baseline.seeds_per_probe == 0 {
            return Err(Error::config("baseline.seeds_per_probe", "must be at least 1"));
        }
        if self.baseline.bracket_tolerance.is_nan() || self.baseline.bracket_tolerance <= 0.0 {
            return Err(Error::config("baseline.bracket_tolerance", "must be positive"));
        }
        if self.calibration.runs == 0 {
            return Err(Error::config("calibration.runs", "must be at least 1"));
        }
        if !(self.calibration.success_rate > 0.0 && self.calibration.success_rate <= 1.0) {
            return Err(Error::config("calibration.success_rate", "must be in (0, 1]"));
        }
        for point in self.points() {
            point.world.validate()?;
            point.curriculum.validate()?;
            let k = choose_k(
                point.curriculum.eps,
                point.curriculum.variant.regime(),
                point.curriculum.k_override,
            )?;
            if point.pool_size < k {
                return Err(Error::config(
                    "pool_size",
                    format!(
                        "{} prompts cannot fill {k} phases at eps = {}",
                        point.pool_size, point.curriculum.eps
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Cross product of the sweep axes, each as a full single-point config.
    pub fn points(&self) -> Vec<ExperimentConfig> {
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for eps in axis(&self.sweep.eps, self.curriculum.eps) {
            for delta in axis(&self.sweep.delta, self.curriculum.delta) {
                for c_seq in axis(&self.sweep.c_seq, self.world.coverage.c_seq) {
                    for eta in axis(&self.sweep.eta, self.world.coverage.eta) {
                        for dim in axis(&self.sweep.dim, self.world.dim) {
                            let mut p = self.clone();
                            p.sweep = SweepAxes::default();
                            p.curriculum.eps = eps;
                            p.curriculum.delta = delta;
                            p.world.coverage.c_seq = c_seq;
                            p.world.coverage.eta = eta;
                            p.world.dim = dim;
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
pool_size = 5000
seeds = [1, 2, 3]

[world]
alphabet_size = 4
horizon = 6
dim = 12
rho_exponent = 1.2

[world.coverage]
c_seq = 16

[curriculum]
eps = 0.05
delta = 0.1
variant = "det-sft"

[budget]
n_prompt_constant = 0.0113

[sweep]
eps = [0.2, 0.1]
c_seq = [2, 8]
"#;

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.pool_size, 5000);
        assert_eq!(c.world.coverage.c_seq, 16);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.points().len(), 4);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = SAMPLE.replace("eps = 0.05", "eps = 1.5");
        let msg = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(msg.contains("curriculum.eps"), "{msg}");
        let bad = SAMPLE.replace("pool_size = 5000", "pool_size = 3");
        let msg = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(msg.contains("pool_size"), "{msg}");
        let bad = SAMPLE.replace("dim = 12", "dim = 30");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Capacity(_))));
        let bad = SAMPLE.replace("horizon = 6", "horizon = 6\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("bogus"));
    }

    #[test]
    fn run_kind_names() {
        for k in RunKind::ALL {
            assert_eq!(k.name().parse::<RunKind>().unwrap(), k);
        }
    }
}
