use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(n_clients: usize, alpha: f64, seed: u64) -> Result<Self> {
        if n_clients == 0 {
            return Err(Error::InvalidArgument("n_clients must be >= 1".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        Ok(PartitionPlan { n_clients, alpha, seed })
    }
}

/// Per-client index lists, each sorted ascending.
///
/// For every class a proportion vector is drawn from a symmetric
/// Dirichlet(alpha) over clients (normalized Gamma draws); the class's
/// shuffled indices are then cut at the cumulative proportions. Shards may be
/// empty.
pub fn dirichlet_partition_indices(ds: &Dataset, plan: &PartitionPlan) -> Result<Vec<Vec<usize>>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("dirichlet_partition"));
    }
    let plan = PartitionPlan::new(plan.n_clients, plan.alpha, plan.seed)?;
    let mut shards = vec![Vec::new(); plan.n_clients];
    if plan.n_clients == 1 {
        shards[0] = (0..ds.len()).collect();
        return Ok(shards);
    }
    let gamma =
        Gamma::new(plan.alpha, 1.0).map_err(|e| Error::InvalidArgument(format!("gamma({}): {e}", plan.alpha)))?;
    let mut rng = crate::seed::rng(plan.seed);

    for class in 0..ds.num_classes() {
        let mut idx = ds.indices_of_class(class);
        let draws: Vec<f64> = (0..plan.n_clients).map(|_| gamma.sample(&mut rng)).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 && total.is_finite() {
            draws.iter().map(|d| d / total).collect()
        } else {
            vec![1.0 / plan.n_clients as f64; plan.n_clients]
        };
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == plan.n_clients {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            shards[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(shards)
}

pub fn dirichlet_partition(ds: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>> {
    Ok(dirichlet_partition_indices(ds, plan)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}
