//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use autocurriculum::curriculum::{CurriculumConfig, Variant};
use autocurriculum::harness::{calibrate, run_point, ExperimentConfig, RunKind, RunRecord};
use autocurriculum::metering::CostLedger;
use autocurriculum::rng::Stream;
use autocurriculum::schedule::{binomial_tail_oracle, build_weight_table, rank_mc, Regime, DEFAULT_MC_SAMPLES};
use autocurriculum::world::{build_world, ModelId, WorldConfig};

const EPS_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

struct Outcome {
    pass: bool,
    detail: String,
}

fn sft_world() -> WorldConfig {
    WorldConfig {
        alphabet_size: 4,
        horizon: 6,
        dim: 12,
        rho_exponent: 1.2,
        ..Default::default()
    }
}

fn config(world: WorldConfig, eps: f64, variant: Variant) -> ExperimentConfig {
    ExperimentConfig::new(world, CurriculumConfig::new(eps, 0.1, variant))
}

fn calibrated(mut c: ExperimentConfig, variant: Variant) -> ExperimentConfig {
    let report = calibrate(&c, variant, 0).expect("calibration");
    c.budget.n_prompt_constant = report.n_prompt_constant;
    c
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn r_squared(points: &[(f64, f64)]) -> f64 {
    let b = slope(points);
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let a = my - b * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn within(start: Instant, limit: Duration, pass: bool, detail: String) -> Outcome {
    let took = start.elapsed();
    let in_time = took < limit;
    Outcome {
        pass: pass && in_time,
        detail: format!("{detail}; {:.1}s of {}s", took.as_secs_f64(), limit.as_secs()),
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for regime in [Regime::DETERMINISTIC, Regime::STOCHASTIC] {
        let p = 1.0 - regime.err_star.to_f64();
        for k in 1..=128 {
            let t = build_weight_table(k, regime).unwrap();
            for j in 0..=k {
                for r in 0..=j {
                    worst = worst.max((t.beta[j][r] - binomial_tail_oracle(k, j, r, p, regime.threshold)).abs());
                }
            }
        }
    }
    within(
        start,
        Duration::from_secs(10),
        worst <= 1e-10,
        format!("max deviation {worst:.2e}"),
    )
}

fn alpha_max_bounds() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let (mut det_sum, mut stoch_sum, mut det_j, mut stoch_j) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 2..=128usize {
        let det = build_weight_table(k, Regime::DETERMINISTIC).unwrap();
        let sto = build_weight_table(k, Regime::STOCHASTIC).unwrap();
        let root = (k as f64).sqrt();
        let (ds, ss) = (det.alpha_max.iter().sum::<f64>(), sto.alpha_max.iter().sum::<f64>());
        ok &= ds <= 2.0 * root && ss <= 4.0 * root;
        det_sum = det_sum.max(ds / root);
        stoch_sum = stoch_sum.max(ss / root);
        for j in 0..=k - 2 {
            let scale = ((k - j - 1) as f64).sqrt();
            ok &= det.alpha_max[j] <= 1.1 / scale;
            det_j = det_j.max(det.alpha_max[j] * scale);
            stoch_j = stoch_j.max(sto.alpha_max[j] * scale);
        }
    }
    within(
        start,
        Duration::from_secs(5),
        ok,
        format!(
            "max sum/sqrt(k) {det_sum:.3} (det, bound 2) and {stoch_sum:.3} (stoch, bound 4); \
             max alpha_max*sqrt(k-j-1) {det_j:.3} (bound 1.1), stoch {stoch_j:.3}"
        ),
    )
}

struct Runs {
    records: Vec<RunRecord>,
    failures: Vec<String>,
}

impl Runs {
    fn run(&mut self, c: &ExperimentConfig, kind: RunKind, seed: u64) -> Option<RunRecord> {
        match run_point(c, kind, seed) {
            Ok(r) => {
                self.records.push(r.clone());
                Some(r)
            }
            Err(e) => {
                self.failures.push(format!("{kind} seed {seed}: {e}"));
                None
            }
        }
    }
}

fn deterministic_sft(runs: &mut Runs, sft: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let good = (0..20)
        .filter_map(|s| runs.run(sft, RunKind::DetSft, s))
        .filter(|r| r.eval.acc >= 0.95)
        .count();
    within(
        start,
        Duration::from_secs(300),
        good >= 18,
        format!(
            "{good}/20 seeds reach accuracy 0.95 (c1 = {:.5})",
            sft.budget.n_prompt_constant
        ),
    )
}

fn cot_separation(runs: &mut Runs, sft: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let mut curriculum = Vec::new();
    let mut baseline = Vec::new();
    let mut means = Vec::new();
    for eps in EPS_GRID {
        let mut c = sft.clone();
        c.curriculum.eps = eps;
        let x = (1.0 / eps).ln();
        let mut sum = 0.0;
        for s in 0..10 {
            if let Some(r) = runs.run(&c, RunKind::DetSft, s) {
                let n = r.training_cost.cot_queries as f64;
                sum += n / 10.0;
                curriculum.push((x, n.ln()));
            }
        }
        if let Some(r) = runs.run(&c, RunKind::BaselineNtp, 0) {
            baseline.push((x, (r.prompts_used as f64).ln()));
            means.push(format!("eps {eps}: {sum:.1} vs {}", r.prompts_used));
        }
    }
    let (a, b) = (slope(&curriculum), slope(&baseline));
    within(
        start,
        Duration::from_secs(900),
        a < 0.35 && b > 0.8,
        format!(
            "slopes {a:.3} (curriculum, < 0.35) and {b:.3} (baseline, > 0.8); mean queries {}",
            means.join(", ")
        ),
    )
}

fn rl_finetune_correctness(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for c_seq in [4, 16] {
        let mut w = sft_world();
        w.dim = 8;
        w.coverage.c_seq = c_seq;
        let c = calibrated(config(w, 0.1, Variant::Rl), Variant::Rl);
        let recs: Vec<RunRecord> = (0..20).filter_map(|s| runs.run(&c, RunKind::BaselineRlft, s)).collect();
        let good = recs.iter().filter(|r| r.eval.acc >= 0.9).count();
        let complete = recs.iter().filter(|r| r.filter_complete == Some(true)).count();
        ok &= good >= 18 && complete as f64 >= 0.8 * 20.0;
        parts.push(format!(
            "c_seq {c_seq}: {good}/20 accurate, {complete}/20 complete filters"
        ));
    }
    within(start, Duration::from_secs(300), ok, parts.join("; "))
}

fn coverage_decoupling(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut w = sft_world();
    w.coverage.c_seq = 16;
    let base = calibrated(config(w, 0.05, Variant::Rl), Variant::Rl);
    let mut curriculum = Vec::new();
    let mut baseline = Vec::new();
    for eps in EPS_GRID {
        let mut c = base.clone();
        c.curriculum.eps = eps;
        let x = (1.0 / eps).ln();
        for s in 0..10 {
            if let Some(r) = runs.run(&c, RunKind::Rl, s) {
                curriculum.push((x, (r.training_cost.ref_generations as f64).ln()));
            }
            if let Some(r) = runs.run(&c, RunKind::BaselineRlft, s) {
                baseline.push((x, (r.training_cost.ref_generations as f64).ln()));
            }
        }
    }
    let mut by_coverage = Vec::new();
    for c_seq in [2u32, 8, 32] {
        let mut c = base.clone();
        c.curriculum.eps = 0.1;
        c.world.coverage.c_seq = c_seq;
        for s in 0..10 {
            if let Some(r) = runs.run(&c, RunKind::Rl, s) {
                by_coverage.push((c_seq as f64, r.training_cost.ref_generations as f64));
            }
        }
    }
    let (a, b, r2) = (slope(&curriculum), slope(&baseline), r_squared(&by_coverage));
    within(
        start,
        Duration::from_secs(1200),
        a < 0.35 && b > 0.8 && r2 >= 0.9,
        format!("slopes {a:.3} (curriculum, < 0.35) and {b:.3} (baseline, > 0.8); linear fit in c_seq R^2 = {r2:.3}"),
    )
}

fn stochastic_sft(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut w = sft_world();
    w.dim = 8;
    w.stochastic_noise_grid = vec![0.0, 0.1, 0.3];
    let c = calibrated(config(w, 0.1, Variant::StochSft), Variant::StochSft);
    let recs: Vec<RunRecord> = (0..20).filter_map(|s| runs.run(&c, RunKind::StochSft, s)).collect();
    let mass_ok = recs.iter().filter(|r| r.eval.mass_acc_at_least_3_5 >= 0.9).count();
    let vote_ok = recs
        .iter()
        .filter(|r| r.consensus.as_ref().is_some_and(|e| e.acc >= 0.7))
        .count();
    let worst_mass = recs.iter().map(|r| r.eval.mass_acc_at_least_3_5).fold(1.0, f64::min);
    let worst_vote = recs
        .iter()
        .filter_map(|r| r.consensus.as_ref().map(|e| e.acc))
        .fold(1.0, f64::min);
    within(
        start,
        Duration::from_secs(600),
        mass_ok >= 18 && vote_ok == recs.len() && recs.len() == 20,
        format!(
            "{mass_ok}/20 seeds put >= 0.9 mass at mixture accuracy >= 3/5 (worst {worst_mass:.3}); \
             consensus >= 0.7 in {vote_ok}/20 (worst {worst_vote:.3})"
        ),
    )
}

fn reconciliation(runs: &Runs) -> Outcome {
    let start = Instant::now();
    let bad = runs.records.iter().filter(|r| !r.reconciled).count();
    let mut detail = format!(
        "{} runs reconciled, {} failed to complete",
        runs.records.len() - bad,
        runs.failures.len()
    );
    if let Some(first) = runs.failures.first() {
        detail.push_str(&format!(" (first: {first})"));
    }
    within(
        start,
        Duration::from_secs(60),
        bad == 0 && runs.failures.is_empty(),
        detail,
    )
}

fn determinism(sft: &ExperimentConfig, first: Option<&RunRecord>) -> Outcome {
    let start = Instant::now();
    let a = run_point(sft, RunKind::DetSft, 0).and_then(|r| r.to_json());
    let b = run_point(sft, RunKind::DetSft, 0).and_then(|r| r.to_json());
    let pass = match (&a, &b, first.map(|r| r.to_json())) {
        (Ok(a), Ok(b), Some(Ok(c))) => a == b && *a == c,
        _ => false,
    };
    let len = a.as_ref().map(|s| s.len()).unwrap_or(0);
    within(
        start,
        Duration::from_secs(60),
        pass,
        format!("three records of {len} bytes compared"),
    )
}

/// Random ensembles over a small stochastic world. The left side is exact;
/// the right side is estimated with Monte-Carlo ranks.
fn acc_to_apx_acc() -> Outcome {
    let start = Instant::now();
    let mut rng = Stream::new(10, "ensembles");
    let mut failures = 0;
    let mut nontrivial = 0;
    let mut worst_margin = f64::INFINITY;
    let mut ratios = Vec::new();
    for e in 0..50u64 {
        let world = build_world(&WorldConfig {
            alphabet_size: 4,
            horizon: 4,
            dim: 8,
            prompt_universe: 4096,
            stochastic_noise_grid: vec![0.0, 0.1, 0.3],
            seed: e,
            ..Default::default()
        })
        .unwrap();
        let k = 8 + rng.below(33);
        let teacher = world.teacher_key();
        let bad_rate = rng.uniform() * 0.5;
        let members: Vec<ModelId> = (0..k)
            .map(|_| {
                let u = rng.uniform();
                let noise = world.noise_grid()[rng.below(2)];
                if u < bad_rate / 2.0 {
                    ModelId {
                        key: teacher,
                        noise: 0.3,
                    }
                } else if u < bad_rate {
                    ModelId {
                        key: teacher ^ (1 << rng.below(world.dim())),
                        noise,
                    }
                } else {
                    ModelId { key: teacher, noise }
                }
            })
            .collect();
        let lhs: f64 = (0..world.prompt_count() as u32)
            .map(|x| {
                let good = members
                    .iter()
                    .filter(|m| world.analytic_accuracy(m, x).unwrap() >= 0.8 - 1e-12)
                    .count();
                if 4 * good <= 3 * k {
                    world.rho(x)
                } else {
                    0.0
                }
            })
            .sum();
        let draws = 2000;
        let ledger = CostLedger::default();
        let hits = (0..draws)
            .filter(|_| {
                let x = world.sample_prompt(&mut rng);
                let z = rank_mc(&members, x, &world, DEFAULT_MC_SAMPLES, &mut rng, &ledger);
                5 * z <= 4 * k
            })
            .count();
        let p = hits as f64 / draws as f64;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        let rhs = 2.0 * p;
        let margin = rhs + 2.0 * 3.0 * sigma - lhs;
        worst_margin = worst_margin.min(margin);
        nontrivial += (lhs > 0.0) as usize;
        if rhs > 0.0 && rhs < 1.0 {
            ratios.push(lhs / rhs);
        }
        failures += (margin < 0.0) as usize;
    }
    within(
        start,
        Duration::from_secs(300),
        failures == 0,
        format!(
            "{failures}/50 violations, {nontrivial} with a non-empty left event, {} unsaturated, max lhs/rhs {:.3}, worst margin {worst_margin:.4}",
            ratios.len(),
            ratios.iter().cloned().fold(0.0, f64::max)
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };

    report(1, "weight tables match the closed form", oracle_equivalence());
    report(2, "routing weight bounds", alpha_max_bounds());

    let mut runs = Runs {
        records: Vec::new(),
        failures: Vec::new(),
    };
    let sft = calibrated(config(sft_world(), 0.05, Variant::DetSft), Variant::DetSft);
    report(3, "deterministic SFT accuracy", deterministic_sft(&mut runs, &sft));
    let first = runs.records.first().cloned();
    report(4, "teacher-query scaling", cot_separation(&mut runs, &sft));
    report(5, "RL fine-tuning correctness", rl_finetune_correctness(&mut runs));
    report(6, "coverage decoupled from accuracy", coverage_decoupling(&mut runs));
    report(7, "stochastic SFT", stochastic_sft(&mut runs));
    report(8, "ledger reconciliation", reconciliation(&runs));
    report(9, "byte-identical reruns", determinism(&sft, first.as_ref()));
    report(10, "accuracy vs estimated accuracy tails", acc_to_apx_acc());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", results.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
