//! The `run` verb: every (method, grid point, seed) combination on a bounded
//! worker pool, then aggregation into one JSON report.

use std::collections::BTreeMap;

use grapal::evaluator::{PerformanceMatrix, Report};
use grapal::io::IdMap;
use grapal::methods::{joint_reference, random_baseline, train, Bare, MethodSpec, TrainConfig};
use grapal::scenario::{Scenario, Setting};
use grapal::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{GridPoint, RunConfig};
use crate::dataset::{self, Resolved};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    /// Index into the method's grid.
    pub grid: usize,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub status: Status,
    pub error: Option<String>,
    pub val_ap: Option<f64>,
    /// Epochs trained per task.
    pub epochs: Option<Vec<usize>>,
    /// Carries the full resolved config of this run in `report.config`.
    pub report: Option<Report>,
}

/// Mean and population standard deviation over the successful runs; nulls
/// (undefined values) are skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub values: Vec<Option<f64>>,
}

impl Stat {
    pub fn of(values: Vec<Option<f64>>) -> Self {
        let xs: Vec<f64> = values.iter().flatten().copied().collect();
        if xs.is_empty() {
            return Self { mean: None, std: None, values };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean: Some(mean), std: Some(var.sqrt()), values }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub method: String,
    pub grid: usize,
    pub params: BTreeMap<String, f64>,
    pub train: TrainConfig,
    pub spec: MethodSpec,
    pub seeds: Vec<u64>,
    pub failed: usize,
    #[serde(rename = "AP")]
    pub ap: Stat,
    #[serde(rename = "AF")]
    pub af: Stat,
    #[serde(rename = "INT")]
    pub int: Stat,
    #[serde(rename = "FWT")]
    pub fwt: Stat,
    pub val_ap: Stat,
    /// Mean AP after each task.
    pub ap_curve: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub method: String,
    /// Grid point with the highest mean validation AP.
    pub grid: usize,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    pub config: RunConfig,
    pub scenario: Resolved,
    /// Original dataset ids by dense index, when they had to be remapped.
    pub ids: Option<IdMap>,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    pub selected: Vec<Selection>,
}

impl BatchReport {
    pub fn succeeded(&self) -> bool {
        self.runs.iter().any(|r| r.status == Status::Ok)
    }
}

struct Job {
    method: usize,
    label: String,
    grid: usize,
    point: GridPoint,
    seed: u64,
}

#[derive(Clone, Default)]
struct References {
    joint: Option<PerformanceMatrix<f64>>,
    random: Option<Vec<f64>>,
}

/// Worker count from `GRAPAL_THREADS`, if set.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("GRAPAL_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("GRAPAL_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Divergence is a property of one run; anything else aborts the batch.
fn tolerate<V>(r: grapal::Result<V>) -> Result<Result<V, String>, CliError> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e @ Error::Divergence(_)) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn train_key(t: &TrainConfig) -> String {
    serde_json::to_string(t).expect("train config serializes")
}

pub fn execute(cfg: &RunConfig) -> Result<BatchReport, CliError> {
    let loaded = dataset::load(&cfg.dataset)?;
    let resolved = dataset::resolve(&cfg.scenario, &loaded)?;
    let scenario_seed = |seed: u64| cfg.scenario.seed.unwrap_or(seed);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;

    let mut jobs = vec![];
    for (mi, block) in cfg.methods.iter().enumerate() {
        for (gi, point) in cfg.grid(block)?.into_iter().enumerate() {
            for &seed in &cfg.seeds {
                jobs.push(Job {
                    method: mi,
                    label: block.name.to_ascii_lowercase(),
                    grid: gi,
                    point: point.clone(),
                    seed,
                });
            }
        }
    }

    pool.install(|| -> Result<BatchReport, CliError> {
        let mut sseeds: Vec<u64> = cfg.seeds.iter().map(|&s| scenario_seed(s)).collect();
        sseeds.sort_unstable();
        sseeds.dedup();
        let scenarios: BTreeMap<u64, Scenario<f64>> = sseeds
            .par_iter()
            .map(|&s| Ok((s, dataset::build(cfg, &loaded, &resolved, s)?)))
            .collect::<Result<_, CliError>>()?;

        let want_joint = cfg.reference.joint;
        let want_random = cfg.reference.random.unwrap_or(cfg.scenario.setting == Setting::DomainIl);
        let mut keys: Vec<(String, u64)> = jobs
            .iter()
            .filter(|j| !j.point.method.is_joint() && (want_joint || want_random))
            .map(|j| (train_key(&j.point.train), scenario_seed(j.seed)))
            .collect();
        keys.sort();
        keys.dedup();
        let references: BTreeMap<(String, u64), References> = keys
            .par_iter()
            .map(|(k, s)| {
                let train: TrainConfig = serde_json::from_str(k).expect("round trip");
                let scenario = &scenarios[s];
                let seeds: Vec<u64> = cfg.seeds.iter().copied().filter(|&x| scenario_seed(x) == *s).collect();
                let joint = if want_joint { tolerate(joint_reference(scenario, &train, &seeds))?.ok() } else { None };
                let random = if want_random { tolerate(random_baseline(scenario, &train, &seeds))?.ok() } else { None };
                Ok(((k.clone(), *s), References { joint, random }))
            })
            .collect::<Result<_, CliError>>()?;

        let runs: Vec<RunRecord> = jobs
            .par_iter()
            .map(|job| {
                let s = scenario_seed(job.seed);
                let refs = match job.point.method.is_joint() {
                    true => References::default(),
                    false => references.get(&(train_key(&job.point.train), s)).cloned().unwrap_or_default(),
                };
                run_one(cfg, &resolved, &scenarios[&s], s, job, refs)
            })
            .collect::<Result<_, CliError>>()?;

        let (aggregates, selected) = aggregate(cfg, &jobs, &runs);
        Ok(BatchReport {
            config: cfg.clone(),
            scenario: resolved.clone(),
            ids: loaded.ids.clone(),
            runs,
            aggregates,
            selected,
        })
    })
}

fn run_one(
    cfg: &RunConfig,
    resolved: &Resolved,
    scenario: &Scenario<f64>,
    scenario_seed: u64,
    job: &Job,
    refs: References,
) -> Result<RunRecord, CliError> {
    let p = &job.point;
    let resolved_config = serde_json::json!({
        "dataset": cfg.dataset,
        "scenario": cfg.scenario,
        "resolved": resolved,
        "scenario_seed": scenario_seed,
        "metrics": scenario.metrics(),
        "train": p.train,
        "method": p.method,
        "seed": job.seed,
    });
    let outcome = if p.method.is_joint() {
        tolerate(train_joint(scenario, &p.train, job.seed))?
    } else {
        let hooks = p.method.hooks::<f64>();
        tolerate(train(hooks.as_ref(), scenario.clone(), &p.train, job.seed))?
            .map(|out| (out.report, out.val_ap, out.epochs))
    };
    let mut record = RunRecord {
        method: job.label.clone(),
        grid: job.grid,
        params: p.params.clone(),
        seed: job.seed,
        status: Status::Failed,
        error: None,
        val_ap: None,
        epochs: None,
        report: None,
    };
    match outcome {
        Ok((mut report, val_ap, epochs)) => {
            if let Some(j) = &refs.joint {
                report = report.with_joint(j)?;
            }
            if let Some(r) = refs.random {
                report = report.with_random_baseline(r)?;
            }
            record.status = Status::Ok;
            record.val_ap = Some(val_ap);
            record.epochs = Some(epochs);
            record.report = Some(report.with_config(resolved_config));
        }
        Err(msg) => record.error = Some(msg),
    }
    Ok(record)
}

/// The joint model trained once on the union of all tasks; its single row of
/// scores is repeated so the report reads as a (forgetting-free) sequence.
fn train_joint(
    scenario: &Scenario<f64>,
    train_cfg: &TrainConfig,
    seed: u64,
) -> grapal::Result<(Report, f64, Vec<usize>)> {
    let out = train(&Bare, scenario.joint()?, train_cfg, seed)?;
    let n = scenario.num_tasks();
    let metrics = scenario.metrics().to_vec();
    let matrices = metrics
        .iter()
        .map(|&m| {
            let row = out.report.matrix_for(m)?;
            let row: Vec<f64> = (0..n).map(|j| row.get(0, j).unwrap_or(f64::NAN)).collect();
            Ok(PerformanceMatrix::from_repeated_row(&row))
        })
        .collect::<grapal::Result<Vec<_>>>()?;
    let report = Report::new(&metrics, matrices)?.with_seeds(vec![seed]);
    Ok((report, out.val_ap, out.epochs))
}

fn aggregate(cfg: &RunConfig, jobs: &[Job], runs: &[RunRecord]) -> (Vec<Aggregate>, Vec<Selection>) {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, j) in jobs.iter().enumerate() {
        groups.entry((j.method, j.grid)).or_default().push(i);
    }
    let mut aggregates = vec![];
    let mut best: BTreeMap<usize, (f64, usize, usize)> = BTreeMap::new();
    for ((method, grid), idx) in groups {
        let job = &jobs[idx[0]];
        let ok: Vec<&Report> = idx.iter().filter_map(|&i| runs[i].report.as_ref()).collect();
        let field = |f: fn(&Report) -> Option<f64>| Stat::of(ok.iter().map(|r| f(r)).collect());
        let n_tasks = ok.iter().map(|r| r.ap_curve.len()).max().unwrap_or(0);
        let ap_curve = (0..n_tasks)
            .map(|k| Stat::of(ok.iter().map(|r| r.ap_curve.get(k).copied().flatten()).collect()).mean)
            .collect();
        let val_ap = Stat::of(idx.iter().filter(|&&i| runs[i].status == Status::Ok).map(|&i| runs[i].val_ap).collect());
        if let Some(v) = val_ap.mean {
            let entry = best.entry(method).or_insert((f64::NEG_INFINITY, grid, aggregates.len()));
            if v > entry.0 {
                *entry = (v, grid, aggregates.len());
            }
        }
        aggregates.push(Aggregate {
            method: job.label.clone(),
            grid,
            params: job.point.params.clone(),
            train: job.point.train.clone(),
            spec: job.point.method.clone(),
            seeds: idx.iter().map(|&i| jobs[i].seed).collect(),
            failed: idx.len() - ok.len(),
            ap: field(|r| r.final_.ap),
            af: field(|r| r.final_.af),
            int: field(|r| r.final_.int),
            fwt: field(|r| r.final_.fwt),
            val_ap,
            ap_curve,
        });
    }
    let selected = best
        .into_iter()
        .map(|(m, (_, grid, a))| Selection {
            method: cfg.methods[m].name.to_ascii_lowercase(),
            grid,
            params: aggregates[a].params.clone(),
        })
        .collect();
    (aggregates, selected)
}

fn pm(s: &Stat) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{m:.3}±{d:.3}"),
        _ => "-".into(),
    }
}

/// One line per aggregate for the terminal.
pub fn summary(report: &BatchReport) -> String {
    let mut out = String::new();
    for a in &report.aggregates {
        let params: Vec<String> = a.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out += &format!(
            "{:<6} {:<32} AP {}  AF {}  INT {}  FWT {}  val {}{}\n",
            a.method,
            params.join(" "),
            pm(&a.ap),
            pm(&a.af),
            pm(&a.int),
            pm(&a.fwt),
            pm(&a.val_ap),
            if a.failed > 0 { format!("  ({} failed)", a.failed) } else { String::new() },
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_uses_population_std_and_skips_nulls() {
        let s = Stat::of(vec![Some(1.0), None, Some(3.0)]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.std, Some(1.0));
        assert_eq!(Stat::of(vec![None]).mean, None);
    }
}
