//! Grid sweeps written to CSV one row at a time. Rows already present in the
//! output file are skipped, so an interrupted sweep resumes where it stopped.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, RunKind};
use crate::harness::experiments::run_point;
use crate::harness::record::RunRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub eps: f64,
    pub delta: f64,
    pub c_seq: u32,
    pub eta: f64,
    pub d: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub cot_queries: u64,
    pub verifier_calls: u64,
    pub ref_generations: u64,
    pub learner_rollouts: u64,
    pub acc: f64,
}

impl SweepRow {
    pub fn from_record(r: &RunRecord) -> Self {
        let c = &r.config;
        SweepRow {
            variant: r.kind.to_string(),
            eps: c.curriculum.eps,
            delta: c.curriculum.delta,
            c_seq: c.world.coverage.c_seq,
            eta: c.world.coverage.eta,
            d: c.world.dim,
            seed: r.seed,
            k: r.k,
            cot_queries: r.training_cost.cot_queries,
            verifier_calls: r.training_cost.verifier_calls,
            ref_generations: r.training_cost.ref_generations,
            learner_rollouts: r.training_cost.learner_rollouts,
            acc: r.eval.acc,
        }
    }

    fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.variant, self.eps, self.delta, self.c_seq, self.eta, self.d, self.seed
        )
    }
}

fn point_key(kind: RunKind, p: &ExperimentConfig, seed: u64) -> String {
    format!(
        "{}|{}|{}|{}|{}|{}|{}",
        kind, p.curriculum.eps, p.curriculum.delta, p.world.coverage.c_seq, p.world.coverage.eta, p.world.dim, seed
    )
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub written: usize,
    pub skipped: usize,
}

/// Runs every (point, seed) of the config's grid that `csv_path` lacks.
pub fn run_sweep(config: &ExperimentConfig, kind: RunKind, csv_path: &Path) -> Result<SweepSummary> {
    config.validate()?;
    let done: HashSet<String> = read_rows(csv_path)?.iter().map(SweepRow::key).collect();
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let fresh = !csv_path.exists() || std::fs::metadata(csv_path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(csv_path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    let mut summary = SweepSummary::default();
    for point in config.points() {
        for &seed in &config.seeds {
            if done.contains(&point_key(kind, &point, seed)) {
                summary.skipped += 1;
                continue;
            }
            let record = run_point(&point, kind, seed)?;
            writer
                .serialize(SweepRow::from_record(&record))
                .map_err(|e| Error::Parse(e.to_string()))?;
            writer.flush()?;
            summary.written += 1;
        }
    }
    Ok(summary)
}
