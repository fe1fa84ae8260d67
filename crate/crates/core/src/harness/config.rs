//! JSON experiment description.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attack::{Episode, EpisodeSchedule, Glyph, TriggerSpec};
use crate::client::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::server::AggregatorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated noisy digits; train and test draws use different seeds.
    Synth {
        n_train: usize,
        n_test: usize,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    /// IDX files. `*_limit` keeps only the first N samples.
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
        #[serde(default = "default_classes")]
        classes: usize,
    },
}

fn default_side() -> usize {
    12
}

fn default_classes() -> usize {
    10
}

impl DatasetConfig {
    /// `(height, width, classes)` when known before loading.
    fn shape(&self) -> Option<(usize, usize, usize)> {
        match *self {
            DatasetConfig::Synth { side, classes, .. } => Some((side, side, classes)),
            DatasetConfig::Mnist { .. } => None,
        }
    }

    fn classes(&self) -> usize {
        match *self {
            DatasetConfig::Synth { classes, .. } | DatasetConfig::Mnist { classes, .. } => classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_sizes: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    /// Built-in glyph name (`delta`, `x`, `w`, `f`, `n`, `o`, `k`, `a`, `c`, `m`).
    pub glyph: String,
    pub row: usize,
    pub col: usize,
    pub target_label: usize,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    /// Column name in the metrics; defaults to the glyph name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn default_intensity() -> f64 {
    1.0
}

impl TriggerConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.glyph.to_lowercase())
    }

    pub fn build(&self) -> Result<TriggerSpec> {
        let glyph = Glyph::builtin(&self.glyph, self.intensity)?;
        Ok(TriggerSpec::new(
            self.display_name(),
            glyph,
            (self.row, self.col),
            self.target_label,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub start_round: u32,
    pub trigger: TriggerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaliciousConfig {
    pub client_id: usize,
    /// Defaults to `n_clients / clients_per_round`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost: Option<f64>,
    #[serde(default = "default_poison_fraction")]
    pub poison_fraction: f64,
    pub schedule: Vec<EpisodeConfig>,
}

fn default_poison_fraction() -> f64 {
    0.12
}

impl MaliciousConfig {
    pub fn build_schedule(&self) -> Result<EpisodeSchedule> {
        let entries = self
            .schedule
            .iter()
            .map(|e| {
                Ok(Episode {
                    start_round: e.start_round,
                    trigger: e.trigger.build()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EpisodeSchedule::new(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub n_clients: usize,
    pub clients_per_round: usize,
    pub rounds: u32,
    #[serde(default = "default_aggregator")]
    pub aggregator: AggregatorSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub malicious: Vec<MaliciousConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Replaces the dynamic `p` of every malicious client with a constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_p: Option<f64>,
    /// Extra triggers evaluated every round without any client using them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probe_triggers: Vec<TriggerConfig>,
    /// Partitions are redrawn until every shard has at least this many samples.
    #[serde(default = "default_min_shard_size")]
    pub min_shard_size: usize,
    /// Backdoor accuracy that counts as "reached" in the run summary.
    #[serde(default = "default_threshold")]
    pub backdoor_threshold: f64,
}

fn default_aggregator() -> AggregatorSpec {
    AggregatorSpec::fedavg(1.0)
}

fn default_alpha() -> f64 {
    0.9
}

fn default_min_shard_size() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.8
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub aggregator: Option<AggregatorKind>,
    pub fixed_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    Fedavg,
    Meta,
}

impl std::str::FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fedavg" => Ok(AggregatorKind::Fedavg),
            "meta" => Ok(AggregatorKind::Meta),
            other => Err(format!("unknown aggregator `{other}` (expected fedavg or meta)")),
        }
    }
}

/// Parses and validates a JSON config. Every error names the offending JSON
/// path, e.g. `malicious[0].client_id`.
pub fn parse_config(bytes: &[u8]) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_spec(&self) -> &ModelSpec {
        &self.model.layer_sizes
    }

    pub fn boost_for(&self, m: &MaliciousConfig) -> f64 {
        m.boost.unwrap_or(self.n_clients as f64 / self.clients_per_round as f64)
    }

    pub fn with_overrides(mut self, o: Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        match o.aggregator {
            Some(AggregatorKind::Meta) => self.aggregator = AggregatorSpec::Meta,
            Some(AggregatorKind::Fedavg) if !matches!(self.aggregator, AggregatorSpec::Fedavg { .. }) => {
                self.aggregator = AggregatorSpec::fedavg(1.0)
            }
            _ => {}
        }
        if let Some(p) = o.fixed_p {
            self.fixed_p = Some(p);
        }
        self.validate()?;
        Ok(self)
    }

    /// All distinct trigger definitions in the run, in column order: each
    /// malicious client's schedule in turn, then the probes.
    pub fn trigger_configs(&self) -> Vec<(String, TriggerConfig)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let all = self
            .malicious
            .iter()
            .flat_map(|m| m.schedule.iter().map(|e| &e.trigger))
            .chain(&self.probe_triggers);
        for t in all {
            let name = t.display_name();
            if seen.insert(name.clone()) {
                out.push((name, t.clone()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.model_spec();
        if self.n_clients == 0 {
            return Err(Error::config("n_clients", "must be >= 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return Err(Error::config(
                "clients_per_round",
                format!("must be in 1..={}", self.n_clients),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be >= 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if let AggregatorSpec::Fedavg { eta, .. } = self.aggregator {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::config("aggregator.eta", "must be positive"));
            }
        }
        if let Some(p) = self.fixed_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("fixed_p", "must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.backdoor_threshold) {
            return Err(Error::config("backdoor_threshold", "must lie in [0, 1]"));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("train", other.to_string()),
        })?;

        match &self.dataset {
            DatasetConfig::Synth { side, classes, .. } => {
                if *side < 8 {
                    return Err(Error::config("dataset.side", "must be >= 8"));
                }
                if !(2..=10).contains(classes) {
                    return Err(Error::config("dataset.classes", "must be in 2..=10"));
                }
            }
            DatasetConfig::Mnist { classes, .. } => {
                if *classes < 2 {
                    return Err(Error::config("dataset.classes", "must be >= 2"));
                }
            }
        }
        let classes = self.dataset.classes();
        if spec.num_classes() != classes {
            return Err(Error::config(
                "model.layer_sizes",
                format!("output width {} does not match {classes} classes", spec.num_classes()),
            ));
        }
        if let Some((h, w, _)) = self.dataset.shape() {
            if spec.input_dim() != h * w {
                return Err(Error::config(
                    "model.layer_sizes",
                    format!("input width {} does not match {h}x{w} images", spec.input_dim()),
                ));
            }
        }

        let mut ids = BTreeSet::new();
        for (i, m) in self.malicious.iter().enumerate() {
            let at = |field: &str| format!("malicious[{i}].{field}");
            if m.client_id >= self.n_clients {
                return Err(Error::config(
                    at("client_id"),
                    format!("{} is not below n_clients = {}", m.client_id, self.n_clients),
                ));
            }
            if !ids.insert(m.client_id) {
                return Err(Error::config(at("client_id"), format!("duplicate id {}", m.client_id)));
            }
            if let Some(b) = m.boost {
                if !(b.is_finite() && b >= 1.0) {
                    return Err(Error::config(at("boost"), "must be >= 1"));
                }
            }
            if !(0.0..=1.0).contains(&m.poison_fraction) {
                return Err(Error::config(at("poison_fraction"), "must lie in [0, 1]"));
            }
            for (j, e) in m.schedule.iter().enumerate() {
                self.validate_trigger(&e.trigger, &format!("malicious[{i}].schedule[{j}].trigger"))?;
            }
            m.build_schedule()
                .map_err(|e| Error::config(at("schedule"), e.to_string()))?;
        }
        for (i, t) in self.probe_triggers.iter().enumerate() {
            self.validate_trigger(t, &format!("probe_triggers[{i}]"))?;
        }

        let mut by_name: BTreeMap<String, &TriggerConfig> = BTreeMap::new();
        let all = self
            .malicious
            .iter()
            .flat_map(|m| m.schedule.iter().map(|e| &e.trigger))
            .chain(&self.probe_triggers);
        for t in all {
            let name = t.display_name();
            if let Some(prev) = by_name.insert(name.clone(), t) {
                let same = prev.glyph.to_lowercase() == t.glyph.to_lowercase()
                    && prev.row == t.row
                    && prev.col == t.col
                    && prev.target_label == t.target_label
                    && prev.intensity == t.intensity;
                if !same {
                    return Err(Error::config(
                        "malicious",
                        format!("trigger name `{name}` is used for two different triggers"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_trigger(&self, t: &TriggerConfig, path: &str) -> Result<()> {
        let spec = t
            .build()
            .map_err(|e| Error::config(format!("{path}.glyph"), e.to_string()))?;
        if t.target_label >= self.dataset.classes() {
            return Err(Error::config(
                format!("{path}.target_label"),
                format!("{} is not below {} classes", t.target_label, self.dataset.classes()),
            ));
        }
        if let Some((h, w, _)) = self.dataset.shape() {
            spec.check_fits(h, w)
                .map_err(|e| Error::config(path.to_string(), e.to_string()))?;
        }
        Ok(())
    }
}
