//! Event-driven continual trainer and the reference methods.
//!
//! The loop in [`train`] is method-agnostic: everything a method does happens
//! inside its [`Hooks`], which share one [`TrainingStateDict`] for the whole
//! run. Per task the events fire in this order:
//!
//! ```text
//! init_training_states            (once per run)
//! process_before_training
//! process_train_iteration x epochs
//! process_after_training
//! ```

mod data;
mod gem;
mod regularizers;
mod trainer;

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scenario::Level;

pub use data::{class_mask, head_for, model_config, Examples, RoundGraph, TaskData};
pub use gem::{gem_project, gem_sample_memory, Gem, MemoryEntry};
pub use regularizers::{
    estimate_fisher_diag, fisher_diag_with, mas_importance, mas_importance_with, quadratic_penalty,
    quadratic_penalty_grad, Anchor, Ewc, Lwf, Mas,
};
pub use trainer::{joint_reference, random_baseline, run_continual, train, RunContext, RunOutput, Step};

use crate::model::Model;
use crate::scalar::Scalar;

/// Optimisation settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub layers: usize,
    /// Hard cap on epochs per task.
    pub max_epochs: usize,
    /// Stale epochs before the learning rate is divided by ten.
    pub patience: usize,
    /// Training stops once the learning rate reaches `lr / stop_factor`.
    pub stop_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_level(Level::Node)
    }
}

impl TrainConfig {
    /// Defaults per problem level: node and link classification use a 3x256
    /// GCN with a patient schedule; link prediction and graph classification
    /// stop after a hundredfold decay.
    pub fn for_level(level: Level) -> Self {
        let base = Self {
            lr: 1e-3,
            weight_decay: 0.0,
            dropout: 0.0,
            hidden: 256,
            layers: 3,
            max_epochs: 1000,
            patience: 20,
            stop_factor: 1000.0,
        };
        match level {
            Level::Node | Level::LinkClassification => base,
            Level::LinkPrediction => Self { max_epochs: 200, patience: 10, stop_factor: 100.0, ..base },
            Level::Graph => Self { hidden: 146, layers: 4, max_epochs: 100, patience: 10, stop_factor: 100.0, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout must lie in [0, 1), got {}", self.dropout);
        }
        if self.weight_decay < 0.0 {
            bail!(Config, "weight decay must be non-negative");
        }
        if self.hidden == 0 || self.layers == 0 || self.max_epochs == 0 {
            bail!(Config, "hidden, layers and max_epochs must be positive");
        }
        if self.stop_factor < 1.0 {
            bail!(Config, "stop_factor must be at least 1");
        }
        Ok(())
    }
}

/// String-keyed store shared by a method's hooks for the length of one run.
#[derive(Default)]
pub struct TrainingStateDict(BTreeMap<String, Box<dyn Any + Send>>);

impl std::fmt::Debug for TrainingStateDict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.0.keys()).finish()
    }
}

impl TrainingStateDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<V: Any + Send>(&mut self, key: impl Into<String>, value: V) {
        self.0.insert(key.into(), Box::new(value));
    }

    /// The value under `key`, if present and of type `V`.
    pub fn get<V: Any>(&self, key: &str) -> Option<&V> {
        self.0.get(key)?.downcast_ref()
    }

    pub fn get_mut<V: Any>(&mut self, key: &str) -> Option<&mut V> {
        self.0.get_mut(key)?.downcast_mut()
    }

    pub fn get_or_insert_with<V: Any + Send>(&mut self, key: &str, init: impl FnOnce() -> V) -> Result<&mut V> {
        let slot = self.0.entry(key.to_string()).or_insert_with(|| Box::new(init()));
        match slot.downcast_mut() {
            Some(v) => Ok(v),
            None => bail!(Config, "state entry {key:?} holds a different type"),
        }
    }

    pub fn remove(&mut self, key: &str) -> bool {
        self.0.remove(key).is_some()
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }
}

/// Callbacks through which a method customises the generic loop.
///
/// Hooks must not draw from the loop's random streams; a method that needs
/// randomness seeds its own generator from [`RunContext::seed`].
pub trait Hooks<T: Scalar>: Send + Sync {
    fn init_training_states(&self, _state: &mut TrainingStateDict, _ctx: &RunContext) -> Result<()> {
        Ok(())
    }

    fn process_before_training(
        &self,
        _state: &mut TrainingStateDict,
        _model: &Model<T>,
        _task: &TaskData<T>,
    ) -> Result<()> {
        Ok(())
    }

    /// One optimisation step; returns the loss that was minimised.
    fn process_train_iteration(&self, _state: &mut TrainingStateDict, step: &mut Step<'_, T>) -> Result<T> {
        step.train_with(|_, _, loss| Ok(loss))
    }

    fn process_after_training(
        &self,
        _state: &mut TrainingStateDict,
        _model: &Model<T>,
        _task: &TaskData<T>,
    ) -> Result<()> {
        Ok(())
    }
}

/// Sequential fine-tuning: every hook keeps its default.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bare;

impl<T: Scalar> Hooks<T> for Bare {}

/// Method selection with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum MethodSpec {
    Bare,
    /// Bare training on the merged scenario.
    Joint,
    Lwf {
        lambda: f64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Ewc {
        lambda: f64,
    },
    Mas {
        lambda: f64,
    },
    Gem {
        memory: usize,
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

fn default_temperature() -> f64 {
    2.0
}

fn default_margin() -> f64 {
    0.5
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Bare => "bare",
            Self::Joint => "joint",
            Self::Lwf { .. } => "lwf",
            Self::Ewc { .. } => "ewc",
            Self::Mas { .. } => "mas",
            Self::Gem { .. } => "gem",
        }
    }

    pub fn hooks<T: Scalar>(&self) -> Box<dyn Hooks<T>> {
        match *self {
            Self::Bare | Self::Joint => Box::new(Bare),
            Self::Lwf { lambda, temperature } => Box::new(Lwf { lambda, temperature }),
            Self::Ewc { lambda } => Box::new(Ewc { lambda }),
            Self::Mas { lambda } => Box::new(Mas { lambda }),
            Self::Gem { memory, margin } => Box::new(Gem { memory, margin }),
        }
    }

    /// Whether the method trains on the merged scenario.
    pub fn is_joint(&self) -> bool {
        matches!(self, Self::Joint)
    }
}
