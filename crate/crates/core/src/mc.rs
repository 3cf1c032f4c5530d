//! Deterministic Monte Carlo engine.
//!
//! Estimators split their sample budget across independent workers keyed by
//! (seed, worker index) and merge results in worker order, so output is
//! bit-identical for a fixed worker count regardless of thread scheduling.
//! Standard errors come from batch means over the pooled per-sample values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sample budget and determinism knobs shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub n: usize,
    /// Fixed worker count; part of the determinism contract.
    pub n_workers: usize,
    /// Batch count for batch-mean standard errors.
    pub n_batches: usize,
    pub seed: u64,
}

impl McBudget {
    pub fn new(seed: u64) -> Self {
        McBudget {
            n: 100_000,
            n_workers: 8,
            n_batches: 32,
            seed,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// Per-worker sample counts, summing to n.
    pub fn split(&self) -> Vec<usize> {
        let w = self.n_workers.max(1);
        let base = self.n / w;
        let extra = self.n % w;
        (0..w).map(|i| base + usize::from(i < extra)).collect()
    }
}

/// Pooled output of a time-averaged Monte Carlo run.
#[derive(Debug, Clone)]
pub struct McOutput {
    /// Mean of the per-sample time-averaged values.
    pub value: f64,
    /// Batch-mean standard error of `value`.
    pub stderr: f64,
    /// Per-node sample means.
    pub per_node: Vec<f64>,
    pub n: usize,
}

/// One worker's contribution: per-sample time-averaged values plus the
/// per-node sums over its samples.
pub struct WorkerBlock {
    pub per_sample: Vec<f64>,
    pub node_sums: Vec<f64>,
}

/// Runs `worker(index, n_w)` across the budget and merges blocks in worker
/// order. `n_nodes` fixes the per-node accumulator length.
pub fn run_time_averaged<F>(budget: &McBudget, n_nodes: usize, worker: F) -> McOutput
where
    F: Fn(usize, usize) -> WorkerBlock + Sync,
{
    let counts = budget.split();
    let blocks: Vec<WorkerBlock> = counts
        .par_iter()
        .enumerate()
        .map(|(i, &n_w)| worker(i, n_w))
        .collect();

    let mut per_sample = Vec::with_capacity(budget.n);
    let mut node_sums = vec![0.0; n_nodes];
    for block in &blocks {
        per_sample.extend_from_slice(&block.per_sample);
        for (acc, v) in node_sums.iter_mut().zip(block.node_sums.iter()) {
            *acc += v;
        }
    }
    let n = per_sample.len();
    assert_eq!(n, budget.n, "workers must produce the full budget");

    let value = per_sample.iter().sum::<f64>() / n as f64;
    let stderr = batch_mean_stderr(&per_sample, budget.n_batches);
    let per_node = node_sums.iter().map(|s| s / n as f64).collect();
    McOutput {
        value,
        stderr,
        per_node,
        n,
    }
}

/// Standard error of the mean from contiguous batch means.
pub fn batch_mean_stderr(values: &[f64], n_batches: usize) -> f64 {
    let n = values.len();
    let b = n_batches.clamp(2, n.max(2));
    if n < 2 {
        return 0.0;
    }
    let mut means = Vec::with_capacity(b);
    let base = n / b;
    let extra = n % b;
    let mut start = 0;
    for i in 0..b {
        let len = base + usize::from(i < extra);
        if len == 0 {
            continue;
        }
        let chunk = &values[start..start + len];
        means.push(chunk.iter().sum::<f64>() / len as f64);
        start += len;
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        / (means.len() as f64 * (means.len() as f64 - 1.0));
    var.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn split_covers_budget() {
        let b = McBudget {
            n: 103,
            n_workers: 8,
            n_batches: 16,
            seed: 0,
        };
        let parts = b.split();
        assert_eq!(parts.len(), 8);
        assert_eq!(parts.iter().sum::<usize>(), 103);
    }

    #[test]
    fn engine_is_deterministic_and_unbiased() {
        let budget = McBudget {
            n: 40_000,
            n_workers: 8,
            n_batches: 32,
            seed: 9,
        };
        let run = || {
            run_time_averaged(&budget, 1, |w, n_w| {
                let mut r = rng::stream(budget.seed, "mc-test", w as u64);
                let per_sample: Vec<f64> = (0..n_w)
                    .map(|_| {
                        let x = rng::standard_normal(&mut r);
                        x * x
                    })
                    .collect();
                let sum = per_sample.iter().sum();
                WorkerBlock {
                    per_sample,
                    node_sums: vec![sum],
                }
            })
        };
        let a = run();
        let b = run();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        // E[x^2] = 1 within a few standard errors.
        assert!(
            (a.value - 1.0).abs() < 4.0 * a.stderr,
            "{} pm {}",
            a.value,
            a.stderr
        );
        assert!((a.per_node[0] - a.value).abs() < 1e-12);
    }

    #[test]
    fn stderr_scales_with_dispersion() {
        let tight: Vec<f64> = (0..1000).map(|i| (i % 2) as f64 * 0.01).collect();
        let wide: Vec<f64> = (0..1000).map(|i| (i % 2) as f64 * 10.0).collect();
        assert!(batch_mean_stderr(&wide, 32) > batch_mean_stderr(&tight, 32));
    }
}
