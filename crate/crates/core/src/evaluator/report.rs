use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{af, ap, fwt, intransigence, BasicMetric, PerformanceMatrix};
use crate::error::{bail, Result};

/// Summary metrics after the last task. `None` marks a metric that is
/// undefined for the run (e.g. AF with one task, INT without a joint
/// reference).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Final {
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "AF")]
    pub af: Option<f64>,
    #[serde(rename = "INT")]
    pub int: Option<f64>,
    #[serde(rename = "FWT")]
    pub fwt: Option<f64>,
}

/// Evaluation result of one run. Matrices are keyed by basic-metric name;
/// the curves and final values use the primary (first) metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: BasicMetric,
    pub matrices: BTreeMap<String, Vec<Vec<Option<f64>>>>,
    /// `ap_curve[k - 1]` is AP after task `k`.
    pub ap_curve: Vec<Option<f64>>,
    pub af_curve: Vec<Option<f64>>,
    #[serde(rename = "final")]
    pub final_: Final,
    /// Diagonal of the joint reference matrix, when supplied.
    pub joint: Option<Vec<f64>>,
    /// Untrained-model performance per task, when supplied.
    pub r: Option<Vec<f64>>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl Report {
    /// Builds curves and final values from one matrix per metric, listed in
    /// the order of `metrics`.
    pub fn new(metrics: &[BasicMetric], matrices: Vec<PerformanceMatrix<f64>>) -> Result<Self> {
        if metrics.is_empty() || metrics.len() != matrices.len() {
            bail!(Metric, "{} metrics for {} matrices", metrics.len(), matrices.len());
        }
        let primary = &matrices[0];
        let n = primary.tasks();
        let ap_curve = (1..=n).map(|k| ap(primary, k).ok()).collect();
        let af_curve = (1..=n).map(|k| if k >= 2 { af(primary, k).ok() } else { None }).collect();
        let final_ = Final {
            ap: (n > 0).then(|| ap(primary, n).ok()).flatten(),
            af: (n >= 2).then(|| af(primary, n).ok()).flatten(),
            int: None,
            fwt: None,
        };
        Ok(Self {
            metric: metrics[0],
            matrices: metrics.iter().zip(&matrices).map(|(m, x)| (m.to_string(), x.rows().to_vec())).collect(),
            ap_curve,
            af_curve,
            final_,
            joint: None,
            r: None,
            config: serde_json::Value::Null,
            seeds: vec![],
        })
    }

    /// Primary-metric matrix.
    pub fn matrix(&self) -> Result<PerformanceMatrix<f64>> {
        self.matrix_for(self.metric)
    }

    pub fn matrix_for(&self, metric: BasicMetric) -> Result<PerformanceMatrix<f64>> {
        match self.matrices.get(&metric.to_string()) {
            Some(rows) => PerformanceMatrix::from_option_rows(rows.clone()),
            None => bail!(Metric, "report has no {metric} matrix"),
        }
    }

    /// Records the joint reference and fills INT.
    pub fn with_joint(mut self, joint: &PerformanceMatrix<f64>) -> Result<Self> {
        let m = self.matrix()?;
        let n = m.tasks();
        self.final_.int = Some(intransigence(&m, joint, n)?);
        self.joint = Some(joint.diagonal().into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        Ok(self)
    }

    /// Records the untrained-model baseline and fills FWT (for two or more
    /// tasks).
    pub fn with_random_baseline(mut self, r: Vec<f64>) -> Result<Self> {
        let m = self.matrix()?;
        let n = m.tasks();
        if r.len() != n {
            bail!(Metric, "random baseline has {} entries for {n} tasks", r.len());
        }
        self.final_.fwt = if n >= 2 { Some(fwt(&m, &r, n)?) } else { None };
        self.r = Some(r);
        Ok(self)
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_values_and_nulls() {
        let m = PerformanceMatrix::from_rows(vec![vec![0.9, 0.6], vec![0.5, 0.8]]).unwrap();
        let joint = PerformanceMatrix::from_repeated_row(&[0.95, 0.85]);
        let rep = Report::new(&[BasicMetric::Accuracy], vec![m])
            .unwrap()
            .with_joint(&joint)
            .unwrap()
            .with_random_baseline(vec![0.5, 0.5])
            .unwrap();
        assert_eq!(rep.ap_curve, vec![Some(0.9), Some(0.65)]);
        assert_eq!(rep.af_curve[0], None);
        assert!((rep.final_.af.unwrap() - 0.4).abs() < 1e-12);
        assert!((rep.final_.int.unwrap() - 0.05).abs() < 1e-12);
        assert!((rep.final_.fwt.unwrap() - 0.1).abs() < 1e-12);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["matrices", "ap_curve", "final", "r", "config", "seeds"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["af_curve"][0].is_null());
        let back: Report = serde_json::from_value(json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn single_task_has_no_forgetting_value() {
        let m = PerformanceMatrix::from_rows(vec![vec![0.7]]).unwrap();
        let rep = Report::new(&[BasicMetric::Accuracy], vec![m]).unwrap();
        assert_eq!(rep.final_.ap, Some(0.7));
        assert_eq!(rep.final_.af, None);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"AF\":null"));
    }
}
