//! Load sweeps: one independent experiment per (rate, seed, policy) cell,
//! aggregated into mean and 95% confidence half-widths per (rate, policy).
//!
//! With the `parallel` feature the cells are spread over the rayon pool.
//! Cells share no state, so results are identical either way.

use std::io::Write;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::{Algorithm, SimConfig};
use crate::error::Result;
use crate::metrics::mean_ci95;
use crate::sim::final_episode;

/// Master seeds of sweep replicas are this far apart so that the
/// `seed + episode` streams of different replicas never overlap.
pub const SEED_STRIDE: u64 = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel;
        #[cfg(not(feature = "parallel"))]
        return Execution::Sequential;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub lambda_ue: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub lambda_in: f64,
    pub lambda_out: f64,
    pub rei: f64,
    pub conflicts: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// Nominal aggregate offered rate.
    pub lambda_in: f64,
    pub algorithm: Algorithm,
    pub lambda_out_mean: f64,
    pub lambda_out_ci95: f64,
    pub rei_mean: f64,
    pub rei_ci95: f64,
    pub samples: Vec<CellResult>,
}

pub fn replica_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| base + k * SEED_STRIDE).collect()
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
pub fn linear_grid(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..steps).map(|k| from + (to - from) * k as f64 / (steps - 1) as f64).collect(),
    }
}

pub fn run_cell(base: &SimConfig, cell: Cell) -> Result<CellResult> {
    let cfg = SimConfig { lambda_ue: cell.lambda_ue, seed: cell.seed, algorithm: cell.algorithm, ..base.clone() };
    let r = final_episode(&cfg)?;
    Ok(CellResult {
        cell,
        lambda_in: r.lambda_in(),
        lambda_out: r.lambda_out(),
        rei: r.mean_rei(),
        conflicts: r.totals.conflicts,
    })
}

pub fn run_cells(base: &SimConfig, cells: &[Cell], exec: Execution) -> Result<Vec<CellResult>> {
    base.validate()?;
    match exec {
        Execution::Sequential => cells.iter().map(|c| run_cell(base, *c)).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => cells.par_iter().map(|c| run_cell(base, *c)).collect(),
    }
}

pub fn run_sweep(base: &SimConfig, lambdas: &[f64], seeds: &[u64], algorithms: &[Algorithm]) -> Result<Vec<SweepRow>> {
    run_sweep_with(base, lambdas, seeds, algorithms, Execution::default())
}

pub fn run_sweep_with(
    base: &SimConfig,
    lambdas: &[f64],
    seeds: &[u64],
    algorithms: &[Algorithm],
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let mut cells = Vec::with_capacity(lambdas.len() * seeds.len() * algorithms.len());
    for &lambda_ue in lambdas {
        for &algorithm in algorithms {
            for &seed in seeds {
                cells.push(Cell { lambda_ue, seed, algorithm });
            }
        }
    }
    let results = run_cells(base, &cells, exec)?;
    Ok(results
        .chunks(seeds.len().max(1))
        .map(|group| {
            let outs: Vec<f64> = group.iter().map(|r| r.lambda_out).collect();
            let reis: Vec<f64> = group.iter().map(|r| r.rei).collect();
            let (lambda_out_mean, lambda_out_ci95) = mean_ci95(&outs);
            let (rei_mean, rei_ci95) = mean_ci95(&reis);
            let cell = group[0].cell;
            SweepRow {
                lambda_in: base.population as f64 * cell.lambda_ue,
                algorithm: cell.algorithm,
                lambda_out_mean,
                lambda_out_ci95,
                rei_mean,
                rei_ci95,
                samples: group.to_vec(),
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "lambda_in,algo,lambda_out_mean,lambda_out_ci95,rei_mean,rei_ci95")?;
    for r in rows {
        writeln!(
            out,
            "{:.6},{},{:.6},{:.6},{:.6},{:.6}",
            r.lambda_in, r.algorithm, r.lambda_out_mean, r.lambda_out_ci95, r.rei_mean, r.rei_ci95
        )?;
    }
    Ok(())
}
