//! Run configuration (TOML) and its expansion into concrete runs.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output = "report.json"
//! metrics = ["hits@50", "auroc"]    # optional override
//!
//! [dataset]
//! path = "data/cora"                # or a [dataset.synthetic] table
//! level = "nc"                      # nc | lc | lp | gc
//! directed = false
//! features = "file"                 # file | degree
//!
//! [scenario]
//! setting = "task-il"               # task-il | class-il | domain-il | time-il
//! groups = [[0, 1], [2, 3], [4, 5]] # task-il / class-il
//! # tasks, domains, cutoffs, seed, [scenario.split], [scenario.link]
//!
//! [model]                           # scalars or lists; lists form a grid
//! lr = [1e-3, 5e-3, 1e-2]
//! dropout = [0.0, 0.25, 0.5]
//!
//! [[method]]
//! name = "ewc"
//! lambda = [100.0, 10000.0]
//! ```
//!
//! Unset model values take the level defaults of [`TrainConfig::for_level`]
//! except dropout (0.25); an unset `lambda` sweeps {0.1, 1} for LwF and MAS
//! and {100, 10000} for EWC; GEM defaults to 12 memories per task and margin
//! 0.5.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use grapal::evaluator::BasicMetric;
use grapal::methods::{MethodSpec, TrainConfig};
use grapal::scenario::{Level, LinkSplit, Setting, Split, SyntheticKind, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A scalar or a list of grid values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<V> {
    One(V),
    Many(Vec<V>),
}

impl<V: Clone> OneOrMany<V> {
    pub fn values(&self) -> Vec<V> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    #[default]
    File,
    /// In- and out-degree columns, replacing any stored features.
    Degree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Required with `path`; derived from the synthetic kind otherwise.
    pub level: Option<Level>,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub features: FeatureSource,
}

impl DatasetConfig {
    pub fn level(&self) -> Result<Level, CliError> {
        match (&self.synthetic, self.level) {
            (_, Some(l)) => Ok(l),
            (Some(s), None) => Ok(match s.kind {
                SyntheticKind::Nc => Level::Node,
                SyntheticKind::Lp => Level::LinkPrediction,
                SyntheticKind::Gc => Level::Graph,
            }),
            (None, None) => Err(CliError::Config("dataset.level is required with dataset.path".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub setting: Setting,
    /// Class groups (Task-IL, Class-IL). Defaults to `tasks` equal
    /// consecutive groups.
    pub groups: Option<Vec<Vec<usize>>>,
    pub tasks: Option<usize>,
    /// Domain order (Domain-IL); defaults to the sorted distinct domains.
    pub domains: Option<Vec<i64>>,
    /// Snapshot cutoffs (node and link-prediction Time-IL).
    pub cutoffs: Option<Vec<i64>>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub link: LinkSplit,
    /// Fixed scenario seed; by default every run seed builds its own split.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub lr: Option<OneOrMany<f64>>,
    pub dropout: Option<OneOrMany<f64>>,
    pub weight_decay: Option<OneOrMany<f64>>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub stop_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodBlock {
    pub name: String,
    pub lambda: Option<OneOrMany<f64>>,
    pub memory: Option<OneOrMany<usize>>,
    pub temperature: Option<OneOrMany<f64>>,
    pub margin: Option<OneOrMany<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBlock {
    /// Train the joint reference to fill INT.
    #[serde(default = "yes")]
    pub joint: bool,
    /// Evaluate the untrained model to fill FWT; by default only for
    /// Domain-IL, the one setting where FWT is meaningful.
    pub random: Option<bool>,
}

fn yes() -> bool {
    true
}

impl Default for ReferenceBlock {
    fn default() -> Self {
        Self { joint: true, random: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(rename = "method")]
    pub methods: Vec<MethodBlock>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub metrics: Option<Vec<BasicMetric>>,
    #[serde(default)]
    pub reference: ReferenceBlock,
}

/// Dropout when the model block leaves it unset.
pub const DEFAULT_DROPOUT: f64 = 0.25;

/// One point of a method's hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub train: TrainConfig,
    pub method: MethodSpec,
    /// Values of the swept hyperparameters, for display.
    pub params: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                cfg.dataset.path = Some(base.join(p));
            }
        }
        if let Some(p) = &cfg.output {
            if p.is_relative() {
                cfg.output = Some(base.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return err("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return err("at least one [[method]] is required".into());
        }
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return err("dataset.path and dataset.synthetic are mutually exclusive".into()),
            (None, None) => return err("dataset needs a path or a synthetic table".into()),
            (Some(p), None) if !p.is_dir() => {
                return Err(CliError::Io(format!("dataset directory {} does not exist", p.display())))
            }
            _ => {}
        }
        self.dataset.level()?;
        for m in &self.methods {
            self.grid(m)?;
        }
        Ok(())
    }

    /// Every grid point of `method`, model grid outermost.
    pub fn grid(&self, method: &MethodBlock) -> Result<Vec<GridPoint>, CliError> {
        let level = self.dataset.level()?;
        let base = TrainConfig::for_level(level);
        let m = &self.model;
        let base = TrainConfig {
            hidden: m.hidden.unwrap_or(base.hidden),
            layers: m.layers.unwrap_or(base.layers),
            max_epochs: m.max_epochs.unwrap_or(base.max_epochs),
            patience: m.patience.unwrap_or(base.patience),
            stop_factor: m.stop_factor.unwrap_or(base.stop_factor),
            ..base
        };
        let axis = |name: &str, v: &Option<OneOrMany<f64>>, default: f64| -> Vec<(String, f64)> {
            v.as_ref().map_or(vec![default], OneOrMany::values).into_iter().map(|x| (name.to_string(), x)).collect()
        };
        let mut axes = vec![
            axis("lr", &m.lr, base.lr),
            axis("dropout", &m.dropout, DEFAULT_DROPOUT),
            axis("weight_decay", &m.weight_decay, base.weight_decay),
        ];
        let name = method.name.to_ascii_lowercase();
        let allowed: &[&str] = match name.as_str() {
            "bare" | "joint" => &[],
            "lwf" => &["lambda", "temperature"],
            "ewc" | "mas" => &["lambda"],
            "gem" => &["memory", "margin"],
            other => return Err(CliError::Config(format!("unknown method {other:?}"))),
        };
        let given = [
            ("lambda", method.lambda.is_some()),
            ("memory", method.memory.is_some()),
            ("temperature", method.temperature.is_some()),
            ("margin", method.margin.is_some()),
        ];
        if let Some((k, _)) = given.iter().find(|(k, on)| *on && !allowed.contains(k)) {
            return Err(CliError::Config(format!("method {name} takes no {k}")));
        }
        match name.as_str() {
            "lwf" | "ewc" | "mas" => {
                let grid = if name == "ewc" { vec![100.0, 10000.0] } else { vec![0.1, 1.0] };
                let lambda = method.lambda.clone().unwrap_or(OneOrMany::Many(grid));
                axes.push(axis("lambda", &Some(lambda), 0.0));
                if name == "lwf" {
                    axes.push(axis("temperature", &method.temperature, 2.0));
                }
            }
            "gem" => {
                let memory = method.memory.as_ref().map_or(vec![12], OneOrMany::values);
                axes.push(memory.into_iter().map(|x| ("memory".to_string(), x as f64)).collect());
                axes.push(axis("margin", &method.margin, 0.5));
            }
            _ => {}
        }
        let mut points: Vec<Vec<(String, f64)>> = vec![vec![]];
        for ax in &axes {
            if ax.is_empty() {
                return Err(CliError::Config("empty hyperparameter list".into()));
            }
            points = points
                .into_iter()
                .flat_map(|p| ax.iter().map(move |v| [p.clone(), vec![v.clone()]].concat()))
                .collect();
        }
        points
            .into_iter()
            .map(|p| {
                let get = |k: &str| p.iter().find(|(n, _)| n == k).map(|(_, v)| *v);
                let train = TrainConfig {
                    lr: get("lr").expect("axis"),
                    dropout: get("dropout").expect("axis"),
                    weight_decay: get("weight_decay").expect("axis"),
                    ..base.clone()
                };
                train.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let method = match name.as_str() {
                    "bare" => MethodSpec::Bare,
                    "joint" => MethodSpec::Joint,
                    "lwf" => MethodSpec::Lwf {
                        lambda: get("lambda").expect("axis"),
                        temperature: get("temperature").expect("axis"),
                    },
                    "ewc" => MethodSpec::Ewc { lambda: get("lambda").expect("axis") },
                    "mas" => MethodSpec::Mas { lambda: get("lambda").expect("axis") },
                    _ => MethodSpec::Gem {
                        memory: get("memory").expect("axis") as usize,
                        margin: get("margin").expect("axis"),
                    },
                };
                let swept = |k: &str| axes.iter().any(|a| a.len() > 1 && a[0].0 == k);
                let params = p.iter().filter(|(k, _)| swept(k)).cloned().collect();
                Ok(GridPoint { train, method, params })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seeds = [0, 1]
        [dataset.synthetic]
        kind = "nc"
        [scenario]
        setting = "class-il"
    "#;

    #[test]
    fn grid_expansion() {
        let text = format!(
            "{BASE}\n[model]\nlr = [1e-3, 1e-2]\ndropout = 0.5\n[[method]]\nname = \"ewc\"\nlambda = [100.0, 10000.0]\n[[method]]\nname = \"gem\"\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        cfg.validate().unwrap();
        let ewc = cfg.grid(&cfg.methods[0]).unwrap();
        assert_eq!(ewc.len(), 4);
        assert_eq!(ewc[1].method, MethodSpec::Ewc { lambda: 10000.0 });
        assert_eq!(ewc[1].train.lr, 1e-3);
        assert_eq!(ewc[1].train.dropout, 0.5);
        assert_eq!(ewc[1].params.keys().collect::<Vec<_>>(), ["lambda", "lr"]);
        let gem = cfg.grid(&cfg.methods[1]).unwrap();
        assert_eq!(gem.len(), 2);
        assert_eq!(gem[0].method, MethodSpec::Gem { memory: 12, margin: 0.5 });
        assert_eq!(gem[0].params.keys().collect::<Vec<_>>(), ["lr"]);

        let cfg = RunConfig::parse(&format!("{BASE}\n[[method]]\nname = \"mas\"\n")).unwrap();
        let mas = cfg.grid(&cfg.methods[0]).unwrap();
        assert_eq!(
            mas.iter().map(|p| p.method.clone()).collect::<Vec<_>>(),
            [MethodSpec::Mas { lambda: 0.1 }, MethodSpec::Mas { lambda: 1.0 }]
        );
        assert_eq!(mas[0].train.dropout, DEFAULT_DROPOUT);
    }

    #[test]
    fn invalid_configs() {
        for extra in [
            "[[method]]\nname = \"ewc\"\nmemory = 3\n",
            "[[method]]\nname = \"bare\"\nlambda = 1.0\n",
            "[[method]]\nname = \"sgd\"\n",
            "[[method]]\nname = \"bare\"\n[model]\ndropout = 1.5\n",
        ] {
            let cfg = RunConfig::parse(&format!("{BASE}\n{extra}")).unwrap();
            assert!(cfg.validate().is_err(), "{extra}");
        }
        assert!(RunConfig::parse(&format!("{BASE}\nbogus = 1\n")).is_err());
        let no_seeds = BASE.replace("seeds = [0, 1]", "seeds = []") + "[[method]]\nname = \"bare\"\n";
        assert!(RunConfig::parse(&no_seeds).unwrap().validate().is_err());
    }
}
