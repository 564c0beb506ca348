use log::info;
use serde::{Deserialize, Serialize};

use crate::curriculum::{run_variant, Aggregation, Variant};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, RunKind};
use crate::harness::record::{Probe, RunRecord, SCHEMA_VERSION};
use crate::learners::{n_prompt, ntp_erm, prompt_complexity, rl_finetune, CotDataset};
use crate::metering::{estimate_acc, reconcile, CostLedger, EvalReport, LedgerSnapshot, Subject};
use crate::rng::{derive_seed, Stream};
use crate::world::{build_world, ModelId, Prompt, World};

/// Largest pool the baseline bisection will try.
const MAX_PROBE_POOL: usize = 1 << 24;

/// Builds the world of a run; the configured world seed acts as a salt.
pub fn world_for(config: &ExperimentConfig, seed: u64) -> Result<World> {
    let mut wc = config.world.clone();
    wc.seed = derive_seed(seed, "world", config.world.seed);
    build_world(&wc)
}

pub fn draw_prompts(world: &World, n: usize, rng: &mut Stream) -> Vec<Prompt> {
    (0..n).map(|_| world.sample_prompt(rng)).collect()
}

fn evaluate(
    config: &ExperimentConfig,
    subject: Subject<'_>,
    world: &World,
    rng: &mut Stream,
    ledger: &CostLedger,
) -> Result<EvalReport> {
    estimate_acc(subject, world, config.eval.mode, config.eval.mc(), rng, ledger)
}

fn base_record(config: &ExperimentConfig, kind: RunKind, seed: u64, world: &World) -> RunRecord {
    RunRecord {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        kind,
        seed,
        world_seed: world.config().seed,
        teacher: world.teacher_model(),
        config: config.clone(),
        k: None,
        cap: None,
        prompts_used: 0,
        phases: Vec::new(),
        ensemble: None,
        model: None,
        probes: Vec::new(),
        training_cost: LedgerSnapshot::default(),
        evaluation_cost: LedgerSnapshot::default(),
        eval: EvalReport {
            mode: config.eval.mode,
            acc: 0.0,
            std_error: 0.0,
            mass_acc_at_least_3_5: 0.0,
            mass_acc_at_least_4_5: 0.0,
            prompts_evaluated: 0,
            per_prompt: Vec::new(),
        },
        consensus: None,
        filter_complete: None,
        reconciled: false,
    }
}

/// Runs one configuration point (sweep axes are ignored) for one seed.
pub fn run_point(config: &ExperimentConfig, kind: RunKind, seed: u64) -> Result<RunRecord> {
    let mut config = config.clone();
    if let Some(v) = kind.curriculum_variant() {
        config.curriculum.variant = v;
    }
    config.sweep = Default::default();
    config.seeds = vec![seed];
    config.validate()?;
    match kind.curriculum_variant() {
        Some(variant) => run_curriculum_point(&config, variant, seed),
        None if kind == RunKind::BaselineNtp => run_baseline_ntp(&config, seed),
        None => run_baseline_rlft(&config, seed),
    }
}

fn run_curriculum_point(config: &ExperimentConfig, variant: Variant, seed: u64) -> Result<RunRecord> {
    let world = world_for(config, seed)?;
    let pool = draw_prompts(&world, config.pool_size, &mut Stream::new(seed, "pool"));
    let ledger = CostLedger::default();
    let run = run_variant(
        &pool,
        &world,
        &config.curriculum,
        &config.budget,
        &mut Stream::new(seed, "curriculum"),
        &ledger,
    )?;
    let training_cost = ledger.snapshot();
    reconcile(&training_cost, &run)?;

    let eval_ledger = CostLedger::default();
    let mut eval_rng = Stream::new(seed, "eval");
    let members = &run.ensemble.members;
    let (eval, consensus) = match run.ensemble.aggregation {
        Aggregation::Plurality => (
            evaluate(config, Subject::Plurality(members), &world, &mut eval_rng, &eval_ledger)?,
            None,
        ),
        Aggregation::Mixture => {
            let mix = evaluate(config, Subject::Mixture(members), &world, &mut eval_rng, &eval_ledger)?;
            let votes = config.curriculum.votes();
            let con = evaluate(
                config,
                Subject::Consensus { members, votes },
                &world,
                &mut eval_rng,
                &eval_ledger,
            )?;
            (mix, Some(con))
        }
    };
    let mut record = base_record(config, variant.into(), seed, &world);
    record.k = Some(run.k);
    record.cap = Some(run.cap);
    record.prompts_used = pool.len();
    record.filter_complete = run.filter_complete();
    record.phases = run.phases;
    record.ensemble = Some(run.ensemble);
    record.training_cost = training_cost;
    record.evaluation_cost = eval_ledger.snapshot();
    record.eval = eval;
    record.consensus = consensus;
    record.reconciled = true;
    Ok(record)
}

/// Trains NTP on the first `n` prompts of the seed's prompt stream.
fn ntp_on_prefix(config: &ExperimentConfig, seed: u64, n: usize, ledger: &CostLedger) -> Result<(World, ModelId)> {
    let world = world_for(config, seed)?;
    let prompts = draw_prompts(&world, n, &mut Stream::new(seed, "pool"));
    let data: CotDataset = prompts.iter().map(|&x| (x, world.teacher_cot(x, ledger))).collect();
    let model = ntp_erm(&data, &world);
    Ok((world, model))
}

fn probe_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        seed
    } else {
        derive_seed(seed, "probe", i as u64)
    }
}

fn run_baseline_ntp(config: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let target = 1.0 - config.curriculum.eps;
    let probes_n = config.baseline.seeds_per_probe;
    let need = ((1.0 - config.curriculum.delta) * probes_n as f64 - 1e-9).ceil() as usize;
    let mut probes = Vec::new();
    let mut successes = |n: usize| -> Result<bool> {
        let mut hits = 0;
        for i in 0..probes_n {
            let s = probe_seed(seed, i);
            let (world, model) = ntp_on_prefix(config, s, n, &CostLedger::default())?;
            let report = evaluate(
                config,
                Subject::Single(model),
                &world,
                &mut Stream::new(s, "eval"),
                &CostLedger::default(),
            )?;
            hits += (report.acc >= target) as usize;
        }
        probes.push(Probe {
            pool_size: n,
            successes: hits,
        });
        Ok(hits >= need)
    };
    let mut hi = 1usize;
    while !successes(hi)? {
        hi *= 2;
        if hi > MAX_PROBE_POOL {
            return Err(Error::Capacity(format!(
                "no pool up to {MAX_PROBE_POOL} prompts reaches accuracy {target}"
            )));
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 && (hi - lo) as f64 > config.baseline.bracket_tolerance * (hi + lo) as f64 / 2.0 {
        let mid = lo + (hi - lo) / 2;
        if successes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    info!("baseline NTP at eps {}: {hi} prompts", config.curriculum.eps);

    let ledger = CostLedger::default();
    let (world, model) = ntp_on_prefix(config, seed, hi, &ledger)?;
    let training_cost = ledger.snapshot();
    if training_cost.cot_queries != hi as u64 || training_cost.ref_generations != 0 {
        return Err(Error::Reconciliation(format!("{:?} for a pool of {hi}", training_cost)));
    }
    let eval_ledger = CostLedger::default();
    let eval = evaluate(
        config,
        Subject::Single(model),
        &world,
        &mut Stream::new(seed, "eval"),
        &eval_ledger,
    )?;
    let mut record = base_record(config, RunKind::BaselineNtp, seed, &world);
    record.prompts_used = hi;
    record.model = Some(model);
    record.probes = probes;
    record.training_cost = training_cost;
    record.evaluation_cost = eval_ledger.snapshot();
    record.eval = eval;
    record.reconciled = true;
    Ok(record)
}

fn run_baseline_rlft(config: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let world = world_for(config, seed)?;
    let (eps, delta) = (config.curriculum.eps, config.curriculum.delta);
    let n = n_prompt(eps, delta, &world, &config.budget)?;
    let prompts = draw_prompts(&world, n, &mut Stream::new(seed, "pool"));
    let ledger = CostLedger::default();
    let out = rl_finetune(&prompts, &world, delta, &mut Stream::new(seed, "rl"), &ledger)?;
    let training_cost = ledger.snapshot();
    let expected = (out.samples_per_prompt * n) as u64;
    if training_cost.ref_generations != expected || training_cost.cot_queries != 0 {
        return Err(Error::Reconciliation(format!(
            "{:?}, expected {expected} reference generations and no teacher queries",
            training_cost
        )));
    }
    let eval_ledger = CostLedger::default();
    let eval = evaluate(
        config,
        Subject::Single(out.model),
        &world,
        &mut Stream::new(seed, "eval"),
        &eval_ledger,
    )?;
    let mut record = base_record(config, RunKind::BaselineRlft, seed, &world);
    record.prompts_used = n;
    record.model = Some(out.model);
    record.training_cost = training_cost;
    record.evaluation_cost = eval_ledger.snapshot();
    record.eval = eval;
    record.filter_complete = Some(out.complete);
    record.reconciled = true;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub variant: Variant,
    pub target_error: f64,
    pub k: usize,
    /// Smallest phase-0 sample meeting the success rate.
    pub prompts_required: usize,
    pub n_prompt_constant: f64,
    pub successes: usize,
    pub runs: usize,
}

/// Finds the smallest leading constant for which the variant's base learner,
/// trained on a phase-0 sample, reaches its target error in the configured
/// fraction of seeded runs.
pub fn calibrate(config: &ExperimentConfig, variant: Variant, master_seed: u64) -> Result<CalibrationReport> {
    config.validate()?;
    let mut config = config.clone();
    config.curriculum.variant = variant;
    let k = crate::curriculum::choose_k(config.curriculum.eps, variant.regime(), config.curriculum.k_override)?;
    let target = variant.base_target();
    let delta = config.curriculum.delta / k as f64;
    let runs = config.calibration.runs;
    let need = (config.calibration.success_rate * runs as f64 - 1e-9).ceil() as usize;
    let wc = &config.world;
    let unit = prompt_complexity(target, delta, wc.dim, wc.horizon, wc.alphabet_size as usize);

    let count = |n: usize| -> Result<usize> {
        let mut hits = 0;
        for r in 0..runs {
            let seed = derive_seed(master_seed, "calibrate", r as u64);
            let world = world_for(&config, seed)?;
            let prompts = draw_prompts(&world, n, &mut Stream::new(seed, "pool"));
            let ledger = CostLedger::default();
            let model = match variant {
                Variant::DetSft | Variant::StochSft => {
                    let data: CotDataset = prompts.iter().map(|&x| (x, world.teacher_cot(x, &ledger))).collect();
                    ntp_erm(&data, &world)
                }
                Variant::Rl => rl_finetune(&prompts, &world, delta, &mut Stream::new(seed, "rl"), &ledger)?.model,
            };
            let report = estimate_acc(
                Subject::Single(model),
                &world,
                config.eval.mode,
                config.eval.mc(),
                &mut Stream::new(seed, "eval"),
                &CostLedger::default(),
            )?;
            hits += (1.0 - report.acc <= target + 1e-12) as usize;
        }
        Ok(hits)
    };

    let mut hi = 1usize;
    let mut hi_hits = count(hi)?;
    while hi_hits < need {
        hi *= 2;
        if hi > MAX_PROBE_POOL {
            return Err(Error::Capacity(format!(
                "no sample up to {MAX_PROBE_POOL} reaches error {target}"
            )));
        }
        hi_hits = count(hi)?;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let hits = count(mid)?;
        if hits >= need {
            hi = mid;
            hi_hits = hits;
        } else {
            lo = mid;
        }
    }
    Ok(CalibrationReport {
        variant,
        target_error: target,
        k,
        prompts_required: hi,
        n_prompt_constant: (hi as f64 - 0.5) / unit,
        successes: hi_hits,
        runs,
    })
}
