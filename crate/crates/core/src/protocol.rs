//! The scenario loader: the only channel between a trainer and a scenario.
//!
//! ```text
//! AwaitingTask --next_task--> AwaitingAnswers --submit_answers--> AwaitingTask
//!                                                              \-> Finished --finalize--> report
//! ```
//!
//! Every round hands out one task input and the full query list; the
//! submitted answers are scored against the sealed truth and only a round
//! index comes back.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{bail, Result};
use crate::evaluator::{accuracy, auroc, hits_at_k, BasicMetric, PerformanceMatrix, Report};
use crate::scalar::Scalar;
use crate::scenario::{Owner, Query, QueryId, Scenario, ScenarioInfo, TaskInput, Truth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Class(usize),
    Score(f64),
}

/// Predicted answers keyed by query id.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnswerSheet(BTreeMap<QueryId, Answer>);

impl AnswerSheet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: QueryId, answer: Answer) {
        self.0.insert(id, answer);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: QueryId) -> Option<Answer> {
        self.0.get(&id).copied()
    }
}

impl FromIterator<(QueryId, Answer)> for AnswerSheet {
    fn from_iter<I: IntoIterator<Item = (QueryId, Answer)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Receipt for a submission; deliberately carries nothing but the round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ack {
    pub round: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Round<T> {
    pub input: TaskInput<T>,
    pub queries: Arc<[Query]>,
}

#[derive(Debug, Clone)]
pub enum Next<T> {
    Task(Round<T>),
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitingTask,
    AwaitingAnswers,
    Finished,
}

#[derive(Debug)]
pub struct Loader<T> {
    scenario: Scenario<T>,
    cursor: usize,
    phase: Phase,
    /// One row per completed round, one column vector per metric.
    rows: Vec<Vec<Vec<f64>>>,
    report: Option<Report>,
}

impl<T: Scalar> Loader<T> {
    pub fn new(scenario: Scenario<T>) -> Self {
        Self { scenario, cursor: 0, phase: Phase::AwaitingTask, rows: vec![], report: None }
    }

    pub fn info(&self) -> &ScenarioInfo {
        self.scenario.info()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.cursor
    }

    pub fn next_task(&mut self) -> Result<Next<T>> {
        match self.phase {
            Phase::AwaitingAnswers => bail!(Protocol, "answers for round {} are still pending", self.cursor),
            Phase::Finished => return Ok(Next::Finished),
            Phase::AwaitingTask => {}
        }
        if self.report.is_some() {
            bail!(Protocol, "loader has been finalized");
        }
        if self.cursor == self.scenario.rounds() {
            self.phase = Phase::Finished;
            return Ok(Next::Finished);
        }
        let input = self.scenario.input(self.cursor).expect("cursor within rounds").clone();
        self.phase = Phase::AwaitingAnswers;
        Ok(Next::Task(Round { input, queries: Arc::clone(self.scenario.queries()) }))
    }

    pub fn submit_answers(&mut self, answers: &AnswerSheet) -> Result<Ack> {
        if self.phase != Phase::AwaitingAnswers {
            bail!(Protocol, "no round is awaiting answers");
        }
        let row = self.score(answers)?;
        self.rows.push(row);
        self.cursor += 1;
        self.phase = if self.cursor == self.scenario.rounds() { Phase::Finished } else { Phase::AwaitingTask };
        Ok(Ack { round: self.cursor - 1 })
    }

    /// Scores a sheet for every metric and task without touching state.
    fn score(&self, answers: &AnswerSheet) -> Result<Vec<Vec<f64>>> {
        let queries = self.scenario.queries();
        if answers.len() != queries.len() {
            bail!(Protocol, "{} answers for {} queries", answers.len(), queries.len());
        }
        let classification = self.scenario.level().is_classification();
        let n = self.scenario.num_tasks();
        let truth = &self.scenario.truth;
        let mut per_task: Vec<(Vec<usize>, Vec<usize>)> = vec![(vec![], vec![]); n];
        let mut pos: Vec<Vec<f64>> = vec![vec![]; n];
        let mut shared_neg: Vec<f64> = vec![];
        let mut task_neg: Vec<Vec<f64>> = vec![vec![]; n];
        for q in queries.iter() {
            let Some(a) = answers.get(q.id) else { bail!(Protocol, "query {} has no answer", q.id.0) };
            let i = q.id.0;
            match (a, truth.answers[i], truth.owners[i]) {
                (Answer::Class(p), Truth::Class(t), Owner::Task(j)) if classification => {
                    per_task[j].0.push(p);
                    per_task[j].1.push(t);
                }
                (Answer::Score(s), Truth::Edge(e), owner) if !classification => {
                    if !s.is_finite() {
                        bail!(Protocol, "query {i} has a non-finite score");
                    }
                    match (e, owner) {
                        (true, Owner::Task(j)) => pos[j].push(s),
                        (false, Owner::Task(j)) => task_neg[j].push(s),
                        (false, Owner::Shared) => shared_neg.push(s),
                        (true, Owner::Shared) => unreachable!("shared queries are negatives"),
                    }
                }
                _ => bail!(Protocol, "query {i} expects a {} answer", if classification { "class" } else { "score" }),
            }
        }
        self.scenario
            .metrics()
            .iter()
            .map(|&metric| {
                (0..n)
                    .map(|j| -> Result<f64> {
                        if classification {
                            let (p, t) = &per_task[j];
                            return accuracy(p, t);
                        }
                        let neg: Vec<f64> = task_neg[j].iter().chain(&shared_neg).copied().collect();
                        match metric {
                            BasicMetric::HitsAt(k) => hits_at_k(&pos[j], &neg, k),
                            BasicMetric::Auroc => {
                                let labels: Vec<bool> = std::iter::repeat_n(true, pos[j].len())
                                    .chain(std::iter::repeat_n(false, neg.len()))
                                    .collect();
                                let scores: Vec<f64> = pos[j].iter().chain(&neg).copied().collect();
                                auroc(&scores, &labels)
                            }
                            BasicMetric::Accuracy => bail!(Metric, "accuracy needs class answers"),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// The evaluation report; the loader is inert afterwards and repeated
    /// calls return the same report.
    pub fn finalize(&mut self) -> Result<Report> {
        if let Some(r) = &self.report {
            return Ok(r.clone());
        }
        if self.phase != Phase::Finished {
            bail!(Protocol, "finalize called after {} of {} rounds", self.cursor, self.scenario.rounds());
        }
        let metrics = self.scenario.metrics().to_vec();
        let mut matrices = vec![];
        for (m, _) in metrics.iter().enumerate() {
            let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r[m].clone()).collect();
            matrices.push(if self.scenario.is_joint() {
                PerformanceMatrix::from_repeated_row(&rows[0])
            } else {
                PerformanceMatrix::from_rows(rows)?
            });
        }
        let report = Report::new(&metrics, matrices)?;
        self.report = Some(report.clone());
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeList, Graph};
    use crate::scenario::{build_class_il, build_task_il, Dataset, QueryPayload, Split};

    fn dataset() -> Dataset<f64> {
        let n = 60;
        let pairs = (0..n - 1).map(|i| (i, i + 1)).collect();
        let labels = (0..n).map(|i| Some(i % 6)).collect();
        Dataset::Nodes(Graph::build(&EdgeList::new(pairs), n, None, Some(labels), false).unwrap())
    }

    fn constant_sheet(queries: &[Query], class: usize) -> AnswerSheet {
        queries.iter().map(|q| (q.id, Answer::Class(class))).collect()
    }

    #[test]
    fn state_machine() {
        let s = build_task_il(&dataset(), &[vec![0, 1], vec![2, 3], vec![4, 5]], Split::default(), 0).unwrap();
        let mut l = Loader::new(s);
        assert!(l.finalize().is_err());
        for round in 0..3 {
            let Next::Task(r) = l.next_task().unwrap() else { panic!() };
            assert_eq!(r.input.index, round);
            assert!(matches!(l.next_task(), Err(crate::Error::Protocol(_))));
            let ack = l.submit_answers(&constant_sheet(&r.queries, 0)).unwrap();
            assert_eq!(ack, Ack { round });
        }
        assert!(matches!(l.next_task().unwrap(), Next::Finished));
        let a = l.finalize().unwrap();
        assert_eq!(a, l.finalize().unwrap());
        assert_eq!(a.matrix().unwrap().tasks(), 3);
    }

    #[test]
    fn incomplete_or_mistyped_sheets_are_rejected() {
        let s = build_class_il(&dataset(), &[vec![0, 1], vec![2, 3, 4, 5]], Split::default(), 0).unwrap();
        let mut l = Loader::new(s);
        let Next::Task(r) = l.next_task().unwrap() else { panic!() };
        let mut sheet = constant_sheet(&r.queries[1..], 0);
        assert!(matches!(l.submit_answers(&sheet), Err(crate::Error::Protocol(_))));
        sheet.insert(r.queries[0].id, Answer::Score(0.3));
        assert!(matches!(l.submit_answers(&sheet), Err(crate::Error::Protocol(_))));
        assert_eq!(l.round(), 0);
        sheet.insert(r.queries[0].id, Answer::Class(1));
        l.submit_answers(&sheet).unwrap();
        assert_eq!(l.round(), 1);
    }

    #[test]
    fn perfect_answers_score_one() {
        // answer every node query with its own label: only possible from the
        // dataset, never from the round
        let ds = dataset();
        let s = build_class_il(&ds, &[vec![0, 1, 2], vec![3, 4, 5]], Split::default(), 4).unwrap();
        let mut l = Loader::new(s);
        let labels = ds.labels().unwrap().to_vec();
        while let Next::Task(r) = l.next_task().unwrap() {
            let sheet = r
                .queries
                .iter()
                .map(|q| match q.payload {
                    QueryPayload::Node(v) => (q.id, Answer::Class(labels[v].unwrap())),
                    _ => panic!(),
                })
                .collect();
            l.submit_answers(&sheet).unwrap();
        }
        let rep = l.finalize().unwrap();
        assert_eq!(rep.final_.ap, Some(1.0));
        assert_eq!(rep.final_.af, Some(0.0));
    }
}
