//! The round loop.

use rayon::prelude::*;

use super::config::{DatasetConfig, ExperimentConfig};
use super::metrics::{MetricsRow, SummaryOptions};
use crate::attack::{apply_trigger_all, episode_split, EpisodeSchedule, TriggerSpec};
use crate::client::{client_update, ClientState, PPolicy, RoundUpdate};
use crate::data::{dirichlet_partition_indices, load_idx, synth_digits, Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::nn::{evaluate_accuracy, init_params, predict, ModelSpec, ParamVector};
use crate::seed::{self, stream};
use crate::server::{sample_clients, GlobalModel};

const MAX_PARTITION_REDRAWS: u64 = 100;

/// A reported backdoor-accuracy column.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerColumn {
    pub trigger: TriggerSpec,
    /// First round any malicious client trains with this trigger (1 for probes).
    pub activation_round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    pub initial_params: ParamVector,
    pub final_model: GlobalModel,
    pub columns: Vec<TriggerColumn>,
    pub alpha: f64,
    pub shard_sizes: Vec<usize>,
}

impl ExperimentOutcome {
    pub fn summary_options(&self, threshold: f64) -> SummaryOptions {
        SummaryOptions {
            threshold,
            activation_rounds: self
                .columns
                .iter()
                .map(|c| (c.trigger.name.clone(), c.activation_round))
                .collect(),
        }
    }
}

/// Fraction of test samples whose true label differs from the target that
/// the model sends to the target once the trigger is stamped on.
pub fn backdoor_accuracy(params: &ParamVector, spec: &ModelSpec, test: &Dataset, trigger: &TriggerSpec) -> Result<f64> {
    let probe = BackdoorProbe::new(test, trigger)?;
    probe.accuracy(params, spec)
}

/// Eligible test samples with the trigger pre-applied.
struct BackdoorProbe {
    target: usize,
    triggered: Dataset,
}

impl BackdoorProbe {
    fn new(test: &Dataset, trigger: &TriggerSpec) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::EmptyDataset("backdoor test set"));
        }
        let eligible: Vec<usize> = (0..test.len())
            .filter(|&i| test.labels()[i] != trigger.target_label)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyDataset(
                "backdoor test set has no sample outside the target class",
            ));
        }
        Ok(BackdoorProbe {
            target: trigger.target_label,
            triggered: apply_trigger_all(&test.subset(&eligible), trigger)?,
        })
    }

    fn accuracy(&self, params: &ParamVector, spec: &ModelSpec) -> Result<f64> {
        let preds = predict(params, spec, self.triggered.images())?;
        let hits = preds.iter().filter(|&&p| p == self.target).count();
        Ok(hits as f64 / preds.len() as f64)
    }
}

struct AttackPlan {
    client: usize,
    schedule: EpisodeSchedule,
    fraction: f64,
    active_start: u32,
}

fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetConfig::Synth {
            n_train,
            n_test,
            side,
            classes,
        } => Ok((
            synth_digits(*n_train, *side, *classes, seed::derive(cfg.seed, stream::TRAIN_DATA))?,
            synth_digits(*n_test, *side, *classes, seed::derive(cfg.seed, stream::TEST_DATA))?,
        )),
        DatasetConfig::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
            classes,
        } => {
            let mut train = load_idx(train_images, train_labels)?.with_num_classes(*classes)?;
            let mut test = load_idx(test_images, test_labels)?.with_num_classes(*classes)?;
            if let Some(n) = train_limit {
                train = train.take(*n);
            }
            if let Some(n) = test_limit {
                test = test.take(*n);
            }
            Ok((train, test))
        }
    }
}

/// Redraws with `seed + 1` until every shard holds `min_size` samples.
fn partition_with_min_size(train: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<Vec<usize>>> {
    let base = seed::derive(cfg.seed, stream::PARTITION);
    for attempt in 0..=MAX_PARTITION_REDRAWS {
        let plan = PartitionPlan::new(cfg.n_clients, cfg.alpha, base.wrapping_add(attempt))?;
        let shards = dirichlet_partition_indices(train, &plan)?;
        if shards.iter().all(|s| s.len() >= cfg.min_shard_size) {
            return Ok(shards);
        }
    }
    Err(Error::config(
        "min_shard_size",
        format!(
            "no partition with every shard >= {} samples after {MAX_PARTITION_REDRAWS} redraws",
            cfg.min_shard_size
        ),
    ))
}

fn poison_seed(base: u64, client: usize) -> u64 {
    seed::derive(seed::derive(base, stream::POISON), client as u64)
}

fn in_round(round: u32, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            round,
            what: what.to_string(),
        },
        other => other,
    }
}

/// Runs every round of `cfg` and returns one metrics row per round, measured
/// on the held-out split after that round's aggregation.
///
/// Client updates within a round run on the rayon pool; results are
/// identical for any pool size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let spec = cfg.model_spec().clone();
    let (train, test) = load_datasets(cfg)?;
    if spec.input_dim() != train.dim() || train.dim() != test.dim() {
        return Err(Error::config(
            "model.layer_sizes",
            format!(
                "input width {} does not match {}-pixel images",
                spec.input_dim(),
                train.dim()
            ),
        ));
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset("test split"));
    }

    let shard_idx = partition_with_min_size(&train, cfg)?;
    let shard_sizes: Vec<usize> = shard_idx.iter().map(Vec::len).collect();

    let mut plans = Vec::new();
    let mut states: Vec<ClientState> = Vec::with_capacity(cfg.n_clients);
    for (id, idx) in shard_idx.iter().enumerate() {
        let shard = train.subset(idx);
        match cfg.malicious.iter().find(|m| m.client_id == id) {
            Some(m) => {
                let schedule = m.build_schedule()?;
                let pair = episode_split(&shard, &schedule, 1, m.poison_fraction, poison_seed(cfg.seed, id))?;
                states.push(ClientState::malicious(id, pair, cfg.boost_for(m))?);
                plans.push((
                    AttackPlan {
                        client: id,
                        schedule,
                        fraction: m.poison_fraction,
                        active_start: 1,
                    },
                    shard,
                ));
            }
            None => states.push(ClientState::benign(id, shard)),
        }
    }

    let mut columns: Vec<TriggerColumn> = Vec::new();
    for (name, tc) in cfg.trigger_configs() {
        let activation = cfg
            .malicious
            .iter()
            .flat_map(|m| &m.schedule)
            .filter(|e| e.trigger.display_name() == name)
            .map(|e| e.start_round)
            .min()
            .unwrap_or(1);
        columns.push(TriggerColumn {
            trigger: tc.build()?,
            activation_round: activation,
        });
    }
    let probes: Vec<BackdoorProbe> = columns
        .iter()
        .map(|c| BackdoorProbe::new(&test, &c.trigger))
        .collect::<Result<_>>()?;

    let policy = match cfg.fixed_p {
        Some(p) => PPolicy::Fixed(p),
        None => PPolicy::Dynamic,
    };
    let all_ids: Vec<usize> = (0..cfg.n_clients).collect();
    let sampling_seed = seed::derive(cfg.seed, stream::SAMPLING);
    let train_seed = seed::derive(cfg.seed, stream::CLIENT_TRAIN);

    let initial_params = init_params(&spec, seed::derive(cfg.seed, stream::INIT));
    let mut global = GlobalModel::new(initial_params.clone());
    let mut rows = Vec::with_capacity(cfg.rounds as usize);

    for t in 1..=cfg.rounds {
        // Episode switches rebuild the poisoned split from the untouched shard.
        for (plan, shard) in &mut plans {
            let episode = plan.schedule.episode_at(t);
            if episode.start_round != plan.active_start {
                let pair = episode_split(
                    shard,
                    &plan.schedule,
                    t,
                    plan.fraction,
                    poison_seed(cfg.seed, plan.client),
                )?;
                plan.active_start = episode.start_round;
                states[plan.client].set_shard(pair)?;
            }
        }

        let selected = sample_clients(&all_ids, cfg.clients_per_round, sampling_seed, t)?;
        let mut chosen = vec![false; cfg.n_clients];
        for &id in &selected {
            chosen[id] = true;
        }
        let snapshot = &global.params;
        let round_seed = seed::derive(train_seed, t as u64);
        let updates: Vec<RoundUpdate> = states
            .par_iter_mut()
            .filter(|s| chosen[s.id])
            .map(|s| {
                let client_seed = seed::derive(round_seed, s.id as u64);
                client_update(s, snapshot, &spec, &cfg.train, client_seed, policy)
            })
            .collect::<Result<_>>()
            .map_err(|e| in_round(t, e))?;

        global = cfg
            .aggregator
            .aggregate(&global, &updates)
            .map_err(|e| in_round(t, e))?;

        let main_accuracy = evaluate_accuracy(&global.params, &spec, &test).map_err(|e| in_round(t, e))?;
        let backdoor = columns
            .iter()
            .zip(&probes)
            .map(|(c, p)| Ok((c.trigger.name.clone(), p.accuracy(&global.params, &spec)?)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| in_round(t, e))?;
        let mean_loss = updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                round: t,
                what: "mean client loss".into(),
            });
        }
        rows.push(MetricsRow {
            round: t,
            main_accuracy,
            backdoor_accuracy: backdoor,
            mean_loss,
        });
    }

    Ok(ExperimentOutcome {
        rows,
        initial_params,
        final_model: global,
        columns,
        alpha: cfg.alpha,
        shard_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::Glyph;
    use crate::nn::ParamVector;

    #[test]
    fn backdoor_accuracy_edges() {
        let spec = ModelSpec::new(vec![144, 4, 10]).unwrap();
        let test = synth_digits(40, 12, 10, 3).unwrap();
        let trig = TriggerSpec::new("x", Glyph::builtin("x", 1.0).unwrap(), (7, 7), 4);
        let constant = |class: usize| {
            let mut v = vec![0.0; spec.n_params()];
            v[spec.n_params() - 10 + class] = 1.0;
            ParamVector::new(v).unwrap()
        };
        assert_eq!(backdoor_accuracy(&constant(4), &spec, &test, &trig).unwrap(), 1.0);
        assert_eq!(backdoor_accuracy(&constant(5), &spec, &test, &trig).unwrap(), 0.0);

        let only_target = test.subset(&test.indices_of_class(4));
        assert!(backdoor_accuracy(&constant(4), &spec, &only_target, &trig).is_err());
    }

    #[test]
    fn backdoor_accuracy_hand_count() {
        // Linear 2-pixel model (1x2 images): logits = [x0, x1, 0.5].
        // The trigger sets pixel 1 to 1.0, so predictions depend on x0 only:
        // x0 > 1 never, so a triggered sample goes to class 1 unless x0 == 1.
        let spec = ModelSpec::new(vec![2, 3]).unwrap();
        let params = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let glyph = Glyph::from_ascii("dot", &[".#"], 1.0).unwrap();
        let trig = TriggerSpec::new("dot", glyph, (0, 0), 1);
        // Labels 0,0,2,2,0,1: the class-1 sample is excluded, 5 remain.
        // x0 = 1.0 ties with pixel 1 and goes to class 0 (lowest index).
        let pixels = vec![0.1, 0.0, 1.0, 0.0, 0.3, 0.0, 1.0, 0.2, 0.5, 0.9, 0.2, 0.2];
        let test = Dataset::from_parts(1, 2, pixels, vec![0, 0, 2, 2, 0, 1], 3, "hand").unwrap();
        assert_eq!(backdoor_accuracy(&params, &spec, &test, &trig).unwrap(), 0.6);
    }
}
