//! Dataset loading and scenario construction for a run config.

use std::collections::BTreeSet;

use grapal::graph::{Graph, GraphCollection, SnapshotSequence};
use grapal::io::{read_graph_dataset, read_node_dataset, IdMap};
use grapal::scenario::{
    build_class_il, build_domain_il, build_domain_il_lp, build_task_il, build_time_il, build_time_il_lp,
    build_time_il_nc, generate_synthetic, Dataset, Level, Scenario, Setting,
};
use serde::Serialize;

use crate::config::{DatasetConfig, FeatureSource, RunConfig, ScenarioConfig};
use crate::CliError;

pub struct Loaded {
    pub dataset: Dataset<f64>,
    pub level: Level,
    /// Original ids when ingestion had to remap them.
    pub ids: Option<IdMap>,
}

pub fn load(cfg: &DatasetConfig) -> Result<Loaded, CliError> {
    let level = cfg.level()?;
    let (dataset, ids) = match (&cfg.path, &cfg.synthetic) {
        (Some(dir), _) => match level {
            Level::Graph => {
                let d = read_graph_dataset::<f64>(dir, cfg.directed)?;
                (Dataset::Graphs(d.collection), Some(d.ids))
            }
            Level::Node => {
                let d = read_node_dataset::<f64>(dir, cfg.directed)?;
                (Dataset::Nodes(d.graph), Some(d.ids))
            }
            _ => {
                let d = read_node_dataset::<f64>(dir, cfg.directed)?;
                (Dataset::Edges(d.graph), Some(d.ids))
            }
        },
        (None, Some(spec)) => {
            let ds = generate_synthetic(spec)?;
            if ds.level() != level && !(level == Level::LinkPrediction && ds.level() == Level::LinkClassification) {
                let found = match ds {
                    Dataset::Nodes(_) => "node",
                    Dataset::Edges(_) => "edge",
                    Dataset::Graphs(_) => "graph",
                };
                return Err(CliError::Config(format!("synthetic kind yields a {found} dataset, not level {level}")));
            }
            (ds, None)
        }
        (None, None) => return Err(CliError::Config("dataset needs a path or a synthetic table".into())),
    };
    let dataset = match cfg.features {
        FeatureSource::File => dataset,
        FeatureSource::Degree => degree_features(dataset)?,
    };
    Ok(Loaded { dataset, level, ids: ids.filter(|m| !m.is_identity()) })
}

fn with_degrees(g: Graph<f64>) -> Result<Graph<f64>, CliError> {
    let f = g.degree_features();
    Ok(g.with_node_features(f)?)
}

fn degree_features(ds: Dataset<f64>) -> Result<Dataset<f64>, CliError> {
    Ok(match ds {
        Dataset::Nodes(g) => Dataset::Nodes(with_degrees(g)?),
        Dataset::Edges(g) => Dataset::Edges(with_degrees(g)?),
        Dataset::Graphs(c) => {
            let graphs = c.graphs().iter().map(|g| with_degrees((**g).clone())).collect::<Result<Vec<_>, _>>()?;
            let mut out = GraphCollection::new(graphs, c.labels().map(<[_]>::to_vec))?;
            if let Some(d) = c.domain() {
                out = out.with_domain(d.to_vec())?;
            }
            if let Some(t) = c.time() {
                out = out.with_time(t.to_vec())?;
            }
            Dataset::Graphs(out)
        }
    })
}

/// Scenario parameters after defaults were filled in; embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolved {
    Groups(Vec<Vec<usize>>),
    Domains(Vec<i64>),
    Cutoffs(Vec<i64>),
    Tasks(usize),
}

fn distinct<V: Ord + Copy>(values: Option<&[Option<V>]>) -> Vec<V> {
    values.unwrap_or(&[]).iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// `k` evenly spaced picks from `values`, always ending with the last one.
fn subsample(values: &[i64], k: usize) -> Vec<i64> {
    let m = values.len();
    if k == 0 || k >= m {
        return values.to_vec();
    }
    (0..k).map(|i| values[(i + 1) * m / k - 1]).collect()
}

/// Fills the setting-specific defaults: equal consecutive class groups,
/// every domain in sorted order, or every distinct time as a cutoff.
pub fn resolve(sc: &ScenarioConfig, loaded: &Loaded) -> Result<Resolved, CliError> {
    let ds = &loaded.dataset;
    let graph = match ds {
        Dataset::Nodes(g) | Dataset::Edges(g) => Some(g),
        Dataset::Graphs(_) => None,
    };
    let lp = loaded.level == Level::LinkPrediction;
    Ok(match sc.setting {
        Setting::TaskIl | Setting::ClassIl => {
            if lp {
                return Err(CliError::Config(format!("{} is not defined for link prediction", sc.setting)));
            }
            if let Some(g) = &sc.groups {
                return Ok(Resolved::Groups(g.clone()));
            }
            let classes = distinct(ds.labels());
            let tasks = sc.tasks.unwrap_or(classes.len() / 2).max(1);
            let size = classes.len() / tasks;
            if size == 0 {
                return Err(CliError::Config(format!("{} classes cannot form {tasks} tasks", classes.len())));
            }
            Resolved::Groups(classes.chunks(size).take(tasks).map(<[_]>::to_vec).collect())
        }
        Setting::DomainIl => Resolved::Domains(match &sc.domains {
            Some(d) => d.clone(),
            None => distinct(ds.domain()),
        }),
        Setting::TimeIl => match (loaded.level, graph) {
            (Level::Node, Some(g)) => Resolved::Cutoffs(match &sc.cutoffs {
                Some(c) => c.clone(),
                None => subsample(&distinct(g.node_time()), sc.tasks.unwrap_or(0)),
            }),
            (Level::LinkPrediction, Some(g)) => Resolved::Cutoffs(match &sc.cutoffs {
                Some(c) => c.clone(),
                None => subsample(&distinct(g.edge_time()), sc.tasks.unwrap_or(0)),
            }),
            _ => Resolved::Tasks(
                sc.tasks.ok_or_else(|| CliError::Config("scenario.tasks is required for this Time-IL level".into()))?,
            ),
        },
    })
}

pub fn build(cfg: &RunConfig, loaded: &Loaded, resolved: &Resolved, seed: u64) -> Result<Scenario<f64>, CliError> {
    let sc = &cfg.scenario;
    let ds = &loaded.dataset;
    let split = sc.split;
    let s = match (sc.setting, resolved, ds) {
        (Setting::DomainIl, Resolved::Domains(order), Dataset::Edges(g)) if loaded.level == Level::LinkPrediction => {
            build_domain_il_lp(g, Some(order), sc.link, seed)?
        }
        (Setting::TimeIl, Resolved::Cutoffs(c), Dataset::Edges(g)) => {
            build_time_il_lp(&SnapshotSequence::from_edge_times(g, c)?, sc.link, seed)?
        }
        (Setting::TimeIl, Resolved::Cutoffs(c), Dataset::Nodes(g)) => {
            build_time_il_nc(&SnapshotSequence::from_node_times(g, c)?, split, seed)?
        }
        (Setting::TimeIl, Resolved::Tasks(n), _) => build_time_il(ds, *n, split, seed)?,
        (Setting::TaskIl, Resolved::Groups(g), _) => build_task_il(ds, g, split, seed)?,
        (Setting::ClassIl, Resolved::Groups(g), _) => build_class_il(ds, g, split, seed)?,
        (Setting::DomainIl, Resolved::Domains(order), _) => build_domain_il(ds, order, split, seed)?,
        _ => return Err(CliError::Config(format!("{} cannot be built at level {}", sc.setting, loaded.level))),
    };
    Ok(match &cfg.metrics {
        Some(m) => s.with_metrics(m.clone())?,
        None => s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsampled_cutoffs() {
        assert_eq!(subsample(&[1, 2, 3, 4, 5, 6], 3), [2, 4, 6]);
        assert_eq!(subsample(&[1, 2, 3, 4, 5, 6, 7], 3), [2, 4, 7]);
        assert_eq!(subsample(&[1, 2], 5), [1, 2]);
        assert_eq!(subsample(&[1, 2, 3], 0), [1, 2, 3]);
    }
}
