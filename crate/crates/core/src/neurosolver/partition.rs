use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub n_cores: usize,
    pub neurons_per_core: usize,
    pub core_neurons: Vec<usize>,
    /// Work per core over the measured iterations.
    pub core_work: Vec<u64>,
    pub iterations: usize,
    pub sync_overhead: f64,
    /// `max core work / iterations + sync_overhead`.
    pub per_iteration_cost: f64,
    pub total_cost: f64,
    /// Single-core per-iteration cost divided by `per_iteration_cost`.
    pub speedup: f64,
}

/// `c_sync · ⌈log2 n⌉` work units.
pub fn sync_overhead(c_sync: u64, n_cores: usize) -> f64 {
    if n_cores <= 1 {
        0.0
    } else {
        (c_sync * (usize::BITS - (n_cores - 1).leading_zeros()) as u64) as f64
    }
}

/// Neurons go to cores in index order. Each neuron costs one update per
/// iteration plus the MACs it received. Before any step has run, the work of
/// one dense iteration (every neuron emitting) is used instead.
pub(super) fn partition(net: &Network, neurons_per_core: usize) -> Result<PartitionReport> {
    if neurons_per_core == 0 {
        return Err(Error::InvalidArgument("neurons_per_core must be at least 1".into()));
    }
    let n = net.n_neurons();
    let (work, iterations): (Vec<u64>, usize) = if net.iteration() > 0 {
        let it = net.iteration() as u64;
        (net.received_macs().iter().map(|r| r + it).collect(), net.iteration())
    } else {
        let [q, a, at] = net.weight_matrices();
        let l = net.n_gradient_neurons();
        let w = (0..n)
            .map(|i| {
                let fan_in = if i < l { q.row_nnz(i) + at.row_nnz(i) } else { a.row_nnz(i - l) };
                1 + fan_in as u64
            })
            .collect();
        (w, 1)
    };
    let n_cores = n.div_ceil(neurons_per_core).max(1);
    let mut core_neurons = Vec::with_capacity(n_cores);
    let mut core_work = Vec::with_capacity(n_cores);
    for c in 0..n_cores {
        let span = (c * neurons_per_core).min(n)..((c + 1) * neurons_per_core).min(n);
        core_neurons.push(span.len());
        core_work.push(work[span].iter().sum());
    }
    let overhead = sync_overhead(net.config().c_sync, n_cores);
    let per_iter = |max_work: u64| max_work as f64 / iterations as f64;
    let per_iteration_cost = per_iter(core_work.iter().copied().max().unwrap_or(0)) + overhead;
    let serial = per_iter(work.iter().sum());
    Ok(PartitionReport {
        n_cores,
        neurons_per_core,
        core_neurons,
        core_work,
        iterations,
        sync_overhead: overhead,
        per_iteration_cost,
        total_cost: per_iteration_cost * iterations as f64,
        speedup: if per_iteration_cost > 0.0 { serial / per_iteration_cost } else { 1.0 },
    })
}
