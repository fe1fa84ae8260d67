//! Client sampling and aggregation.
//!
//! Both rules sum the client deltas in ascending client-id order and then
//! apply `params + scale * sum`, so their outputs coincide bit for bit when
//! the meta rule sees unit boosts and federated averaging runs with `eta = 1`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::client::RoundUpdate;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: ParamVector,
    /// Index `t` of the round this model is handed out in; starts at 1.
    pub round: u32,
}

impl GlobalModel {
    pub fn new(params: ParamVector) -> Self {
        GlobalModel { params, round: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAggregator", into = "RawAggregator")]
pub enum AggregatorSpec {
    /// `G + (eta / m) * sum(delta)`. Boosts are ignored unless `apply_boost`.
    Fedavg { eta: f64, apply_boost: bool },
    /// `G + (1 / m) * sum(lambda * delta)`.
    Meta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AggregatorKindTag {
    Fedavg,
    Meta,
}

/// Wire form: `{"kind": "fedavg", "eta": 1.0}` or `{"kind": "meta"}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAggregator {
    kind: AggregatorKindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    apply_boost: Option<bool>,
}

impl TryFrom<RawAggregator> for AggregatorSpec {
    type Error = String;

    fn try_from(raw: RawAggregator) -> std::result::Result<Self, String> {
        match raw.kind {
            AggregatorKindTag::Fedavg => Ok(AggregatorSpec::Fedavg {
                eta: raw.eta.unwrap_or(1.0),
                apply_boost: raw.apply_boost.unwrap_or(false),
            }),
            AggregatorKindTag::Meta if raw.eta.is_some() => Err("`eta` is only valid for fedavg".into()),
            AggregatorKindTag::Meta if raw.apply_boost.is_some() => {
                Err("`apply_boost` is only valid for fedavg".into())
            }
            AggregatorKindTag::Meta => Ok(AggregatorSpec::Meta),
        }
    }
}

impl From<AggregatorSpec> for RawAggregator {
    fn from(spec: AggregatorSpec) -> Self {
        match spec {
            AggregatorSpec::Fedavg { eta, apply_boost } => RawAggregator {
                kind: AggregatorKindTag::Fedavg,
                eta: Some(eta),
                apply_boost: apply_boost.then_some(true),
            },
            AggregatorSpec::Meta => RawAggregator {
                kind: AggregatorKindTag::Meta,
                eta: None,
                apply_boost: None,
            },
        }
    }
}

impl AggregatorSpec {
    pub fn fedavg(eta: f64) -> Self {
        AggregatorSpec::Fedavg {
            eta,
            apply_boost: false,
        }
    }

    pub fn aggregate(&self, g: &GlobalModel, updates: &[RoundUpdate]) -> Result<GlobalModel> {
        match *self {
            AggregatorSpec::Fedavg { eta, apply_boost } => {
                if apply_boost {
                    weighted_mean_step(g, updates, eta, true)
                } else {
                    aggregate_fedavg(g, updates, eta)
                }
            }
            AggregatorSpec::Meta => aggregate_meta(g, updates),
        }
    }
}

/// Uniform sample of `m` distinct ids, returned ascending. The draw depends
/// only on `(rng_seed, round)`.
pub fn sample_clients(all_ids: &[usize], m: usize, rng_seed: u64, round: u32) -> Result<Vec<usize>> {
    if m == 0 || m > all_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} of {} clients",
            all_ids.len()
        )));
    }
    let mut rng = crate::seed::rng(crate::seed::derive(rng_seed, round as u64));
    let mut picked: Vec<usize> = index::sample(&mut rng, all_ids.len(), m)
        .into_iter()
        .map(|i| all_ids[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

fn weighted_mean_step(g: &GlobalModel, updates: &[RoundUpdate], factor: f64, boosted: bool) -> Result<GlobalModel> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("no client updates to aggregate".into()));
    }
    let n = g.params.len();
    let mut ordered: Vec<&RoundUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    let mut sum = vec![0.0; n];
    for u in ordered {
        if u.delta.len() != n {
            return Err(Error::DimensionMismatch {
                context: "client delta",
                expected: n,
                actual: u.delta.len(),
            });
        }
        if !u.delta.is_finite() {
            return Err(Error::NonFinite("client delta"));
        }
        if boosted {
            for (s, d) in sum.iter_mut().zip(u.delta.as_slice()) {
                *s += u.lambda * d;
            }
        } else {
            for (s, d) in sum.iter_mut().zip(u.delta.as_slice()) {
                *s += d;
            }
        }
    }
    let scale = factor / updates.len() as f64;
    let params = g.params.add_scaled(&ParamVector::from_vec_unchecked(sum), scale)?;
    Ok(GlobalModel {
        params,
        round: g.round + 1,
    })
}

/// Boosted meta update.
pub fn aggregate_meta(g: &GlobalModel, updates: &[RoundUpdate]) -> Result<GlobalModel> {
    if let Some(u) = updates.iter().find(|u| !u.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "client {} sent non-finite boost",
            u.client_id
        )));
    }
    weighted_mean_step(g, updates, 1.0, true)
}

/// Federated averaging of deltas; `lambda` is ignored.
pub fn aggregate_fedavg(g: &GlobalModel, updates: &[RoundUpdate], eta: f64) -> Result<GlobalModel> {
    if !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta must be finite, got {eta}")));
    }
    weighted_mean_step(g, updates, eta, false)
}
