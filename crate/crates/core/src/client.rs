//! Local training for one sampled client.
//!
//! Benign clients restart from the global model every round and minimize
//! the classification loss on their own data. Malicious clients keep their
//! own local model across rounds and train on clean plus poisoned data with
//! the blended objective `(1 - p) * L_class + p * L_dist(local, global)`,
//! where `p` is the global model's accuracy on the poisoned shard at the
//! start of the round.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::ShardPair;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate_accuracy, loss_and_grad_with, sgd_step, Batch, DistNorm, LossSpec, ModelSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainConfig::default_lr")]
    pub lr: f64,
    /// Scaling of the distance term in the malicious objective.
    #[serde(default)]
    pub dist_norm: DistNorm,
}

impl TrainConfig {
    fn default_epochs() -> usize {
        2
    }

    fn default_batch_size() -> usize {
        64
    }

    fn default_lr() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("train.lr", "must be finite and >= 0"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: Self::default_epochs(),
            batch_size: Self::default_batch_size(),
            lr: Self::default_lr(),
            dist_norm: DistNorm::Mean,
        }
    }
}

/// How a malicious client weights its distance term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PPolicy {
    /// Global-model accuracy on the poisoned shard, recomputed each round.
    Dynamic,
    /// A constant chosen up front.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    malicious: bool,
    shard: ShardPair,
    local_params: Option<ParamVector>,
    boost: f64,
}

impl ClientState {
    pub fn benign(id: usize, shard: Dataset) -> Self {
        ClientState {
            id,
            malicious: false,
            shard: ShardPair::clean_only(shard),
            local_params: None,
            boost: 1.0,
        }
    }

    pub fn malicious(id: usize, shard: ShardPair, boost: f64) -> Result<Self> {
        if !(boost.is_finite() && boost >= 1.0) {
            return Err(Error::InvalidArgument(format!("boost must be >= 1, got {boost}")));
        }
        Ok(ClientState {
            id,
            malicious: true,
            shard,
            local_params: None,
            boost,
        })
    }

    pub fn is_malicious(&self) -> bool {
        self.malicious
    }

    pub fn shard(&self) -> &ShardPair {
        &self.shard
    }

    /// Replaces a malicious client's shard, e.g. at an episode switch. The
    /// persisted local model is kept.
    pub fn set_shard(&mut self, shard: ShardPair) -> Result<()> {
        if !self.malicious && !shard.poisoned.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "benign client {} cannot hold poisoned data",
                self.id
            )));
        }
        self.shard = shard;
        Ok(())
    }

    pub fn local_params(&self) -> Option<&ParamVector> {
        self.local_params.as_ref()
    }

    pub fn boost(&self) -> f64 {
        self.boost
    }
}

/// What a client sends back: its boost factor and `local - global`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    pub client_id: usize,
    pub lambda: f64,
    pub delta: ParamVector,
    /// Mean per-batch training loss over the round.
    pub mean_loss: f64,
}

/// Accuracy of the global model on the poisoned shard, measured against the
/// attacker's labels. An empty shard gives 0.
pub fn compute_p(global: &ParamVector, spec: &ModelSpec, poisoned: &Dataset) -> Result<f64> {
    if poisoned.is_empty() {
        return Ok(0.0);
    }
    evaluate_accuracy(global, spec, poisoned)
}

pub fn client_update(
    state: &mut ClientState,
    global: &ParamVector,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    rng_seed: u64,
    policy: PPolicy,
) -> Result<RoundUpdate> {
    if global.len() != spec.n_params() {
        return Err(Error::DimensionMismatch {
            context: "global parameters",
            expected: spec.n_params(),
            actual: global.len(),
        });
    }
    if state.shard.is_empty() {
        return Err(Error::EmptyDataset("client shard"));
    }
    let pool = state.shard.pooled()?;

    let (mut local, objective) = if state.malicious {
        let p = match policy {
            PPolicy::Dynamic => compute_p(global, spec, &state.shard.poisoned)?,
            PPolicy::Fixed(p) => p,
        };
        let local = state.local_params.take().unwrap_or_else(|| global.clone());
        (local, LossSpec::Combined { p })
    } else {
        (global.clone(), LossSpec::Class)
    };

    let mut rng = crate::seed::rng(rng_seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::new(
                pool.images().gather(chunk),
                chunk.iter().map(|&i| pool.labels()[i]).collect(),
            )?;
            let (loss, grad) = loss_and_grad_with(&local, spec, &batch, objective, Some(global), cfg.dist_norm)?;
            local = sgd_step(&local, &grad, cfg.lr)?;
            loss_sum += loss;
            steps += 1;
        }
    }

    let delta = local.sub(global)?;
    if state.malicious {
        state.local_params = Some(local);
    }
    Ok(RoundUpdate {
        client_id: state.id,
        lambda: state.boost,
        delta,
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{poison_shard, Glyph, TriggerSpec};
    use crate::data::synth_digits;
    use crate::nn::init_params;

    fn setup() -> (ModelSpec, ParamVector, Dataset, TriggerSpec) {
        let spec = ModelSpec::new(vec![144, 16, 10]).unwrap();
        let global = init_params(&spec, 3);
        let data = synth_digits(120, 12, 10, 8).unwrap();
        let trigger = TriggerSpec::new("x", Glyph::builtin("x", 1.0).unwrap(), (7, 7), 2);
        (spec, global, data, trigger)
    }

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            lr,
            dist_norm: DistNorm::Mean,
        }
    }

    #[test]
    fn benign_with_zero_lr_has_zero_delta() {
        let (spec, global, data, _) = setup();
        let mut c = ClientState::benign(0, data);
        let u = client_update(&mut c, &global, &spec, &cfg(0.0), 1, PPolicy::Dynamic).unwrap();
        assert!(u.delta.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(u.lambda, 1.0);
        assert!(c.local_params().is_none());
    }

    #[test]
    fn malicious_at_p1_on_global_does_not_move() {
        let (spec, global, data, trigger) = setup();
        let pair = poison_shard(&data, &trigger, 0.12, 4).unwrap();
        let mut c = ClientState::malicious(1, pair, 5.0).unwrap();
        let u = client_update(&mut c, &global, &spec, &cfg(0.1), 1, PPolicy::Fixed(1.0)).unwrap();
        assert_eq!(u.mean_loss, 0.0);
        assert!(u.delta.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(u.lambda, 5.0);
    }

    #[test]
    fn malicious_at_p0_matches_benign_on_pooled_data() {
        let (spec, global, data, trigger) = setup();
        let pair = poison_shard(&data, &trigger, 0.12, 4).unwrap();
        let mut benign = ClientState::benign(1, pair.pooled().unwrap());
        let mut evil = ClientState::malicious(1, pair, 1.0).unwrap();
        let a = client_update(&mut benign, &global, &spec, &cfg(0.1), 77, PPolicy::Dynamic).unwrap();
        let b = client_update(&mut evil, &global, &spec, &cfg(0.1), 77, PPolicy::Fixed(0.0)).unwrap();
        assert_eq!(a, b);
        assert!(a.delta.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn malicious_local_model_persists() {
        let (spec, global, data, trigger) = setup();
        let pair = poison_shard(&data, &trigger, 0.12, 4).unwrap();
        let mut c = ClientState::malicious(1, pair, 2.0).unwrap();
        let u1 = client_update(&mut c, &global, &spec, &cfg(0.1), 5, PPolicy::Dynamic).unwrap();
        let after_round1 = c.local_params().unwrap().clone();
        let rebuilt = global.add_scaled(&u1.delta, 1.0).unwrap();
        assert!(after_round1.max_abs_diff(&rebuilt).unwrap() <= 1e-12);

        // A zero-lr round exposes the starting point: it must be the stored
        // local model, not the global one.
        let u2 = client_update(&mut c, &global, &spec, &cfg(0.0), 6, PPolicy::Dynamic).unwrap();
        assert_eq!(u2.delta, after_round1.sub(&global).unwrap());
        assert_eq!(c.local_params().unwrap(), &after_round1);
    }

    #[test]
    fn delta_is_local_minus_global() {
        let (spec, global, data, trigger) = setup();
        let pair = poison_shard(&data, &trigger, 0.5, 4).unwrap();
        let mut c = ClientState::malicious(3, pair, 1.0).unwrap();
        let u = client_update(&mut c, &global, &spec, &cfg(0.2), 9, PPolicy::Fixed(0.3)).unwrap();
        let local = c.local_params().unwrap();
        let expected = local.sub(&global).unwrap();
        assert!(u.delta.max_abs_diff(&expected).unwrap() <= 1e-12);
    }

    #[test]
    fn compute_p_edges() {
        let (spec, global, data, trigger) = setup();
        assert_eq!(compute_p(&global, &spec, &data.empty_like()).unwrap(), 0.0);

        // Zero weights and a single positive output bias: every input maps to class 2.
        let mut constant = ParamVector::zeros(spec.n_params());
        let last_bias = spec.n_params() - 10 + trigger.target_label;
        constant.as_mut_slice()[last_bias] = 1.0;
        let pair = poison_shard(&data, &trigger, 0.3, 1).unwrap();
        assert_eq!(compute_p(&constant, &spec, &pair.poisoned).unwrap(), 1.0);
    }

    #[test]
    fn untrained_global_has_low_p() {
        let (spec, _, data, trigger) = setup();
        let pair = poison_shard(&data, &trigger, 1.0, 1).unwrap();
        // A random net tends to send every triggered image to one class, so
        // single seeds swing between 0 and 1; the bound is on the seed average.
        let seeds = 40;
        let total: f64 = (0..seeds)
            .map(|seed| compute_p(&init_params(&spec, seed), &spec, &pair.poisoned).unwrap())
            .sum();
        let mean = total / seeds as f64;
        assert!(mean <= 0.3, "mean p = {mean}");
    }

    #[test]
    fn empty_shard_is_an_error() {
        let (spec, global, data, _) = setup();
        let mut c = ClientState::benign(0, data.empty_like());
        assert!(client_update(&mut c, &global, &spec, &cfg(0.1), 0, PPolicy::Dynamic).is_err());
    }
}
