//! Grid execution.
//!
//! Every (cell, seed) pair is an independent job; within a job every sample
//! draws from streams keyed by `(seed, sample)`, so the output is the same for
//! any number of workers. Cells share those keys, which makes neighbouring
//! grid points use common random numbers.

use rayon::prelude::*;

use crate::providers::ScoreDataset;

use super::{run_cell, AuditEntry, ExperimentConfig, HarnessError, Method, ResultRow, SweepConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    /// Per-sample records, parallel to `rows`.
    pub audits: Vec<Vec<AuditEntry>>,
}

/// Loads the dataset and runs the whole grid.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutput, HarnessError> {
    let dataset = config.dataset.load()?;
    run_sweep_on(config, &dataset)
}

pub fn run_sweep_on(config: &SweepConfig, dataset: &ScoreDataset) -> Result<SweepOutput, HarnessError> {
    let cells = config.cells();
    if cells.is_empty() {
        return Err(HarnessError::Config("empty grid".into()));
    }
    match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start {workers} workers: {e}")))?
            .install(|| run_cells(&cells, dataset)),
        None => run_cells(&cells, dataset),
    }
}

/// Runs the given cells over all of their seeds, in cell-then-seed order.
pub fn run_cells(cells: &[ExperimentConfig], dataset: &ScoreDataset) -> Result<SweepOutput, HarnessError> {
    let jobs: Vec<(&ExperimentConfig, u64)> = cells.iter().flat_map(|c| c.seeds.iter().map(move |&s| (c, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            run_cell(cell, dataset, seed).map_err(|e| HarnessError::Cell {
                cell: format!("{} seed={seed}", cell.cell_label()),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (rows, audits) = runs.into_iter().map(|r| (r.row, r.audit)).unzip();
    Ok(SweepOutput { rows, audits })
}

/// Across-seed aggregate of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub epsilon: f64,
    pub snr_db: f64,
    pub participation_p: f64,
    pub seeds: usize,
    pub macro_f1_mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub macro_f1_std: f64,
    pub mean_participants: f64,
    pub abstained_rounds_mean: f64,
    pub channel_uses_per_query: f64,
}

fn same_cell(a: &ResultRow, b: &ResultRow) -> bool {
    a.method == b.method
        && a.epsilon.to_bits() == b.epsilon.to_bits()
        && a.snr_db.to_bits() == b.snr_db.to_bits()
        && a.participation_p.to_bits() == b.participation_p.to_bits()
}

/// Groups rows by cell, keeping first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut groups: Vec<Vec<&ResultRow>> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|g| same_cell(g[0], row)) {
            Some(g) => g.push(row),
            None => groups.push(vec![row]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let mean = |f: &dyn Fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let f1_mean = mean(&|r| r.macro_f1);
            let f1_std = if g.len() > 1 {
                (g.iter().map(|r| (r.macro_f1 - f1_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CellSummary {
                method: g[0].method,
                epsilon: g[0].epsilon,
                snr_db: g[0].snr_db,
                participation_p: g[0].participation_p,
                seeds: g.len(),
                macro_f1_mean: f1_mean,
                macro_f1_std: f1_std,
                mean_participants: mean(&|r| r.mean_participants),
                abstained_rounds_mean: mean(&|r| r.abstained_rounds as f64),
                channel_uses_per_query: mean(&|r| r.channel_uses_per_query as f64),
            }
        })
        .collect()
}
