//! CSV dataset directories.
//!
//! Node- and link-level datasets:
//!
//! ```text
//! edges.csv          src,dst[,weight][,domain][,time][,label]
//! node_features.csv  node_id,f0,f1,...
//! node_labels.csv    node_id,label[,domain][,time]
//! ```
//!
//! Graph-level datasets:
//!
//! ```text
//! graph_labels.csv      graph_id,label[,domain][,time]
//! graphs/<k>.edges.csv  src,dst[,weight]
//! graphs/<k>.features.csv  node_id,f0,f1,...
//! ```
//!
//! Ids may be arbitrary strings; they are mapped to dense indices in sorted
//! order (numeric when every id is an integer) and the mapping is returned.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{EdgeList, Graph, GraphCollection};
use crate::scalar::Scalar;

/// Per-graph attributes from graph_labels.csv: label, domain, time.
type MemberRow = (Option<usize>, Option<i64>, Option<i64>);

/// Dense index → original id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct IdMap {
    original: Vec<String>,
    #[serde(skip)]
    dense: HashMap<String, usize>,
}

impl IdMap {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let set: BTreeSet<String> = ids.into_iter().collect();
        let mut original: Vec<String> = set.into_iter().collect();
        if original.iter().all(|s| s.parse::<i64>().is_ok()) {
            original.sort_by_key(|s| s.parse::<i64>().expect("checked"));
        }
        let dense = original.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { original, dense }
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn dense(&self, id: &str) -> Option<usize> {
        self.dense.get(id).copied()
    }

    pub fn original(&self, i: usize) -> &str {
        &self.original[i]
    }

    pub fn originals(&self) -> &[String] {
        &self.original
    }

    /// Whether the ids already were exactly `0..n`.
    pub fn is_identity(&self) -> bool {
        self.original.iter().enumerate().all(|(i, s)| s == &i.to_string())
    }
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    /// (line number, cells)
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| dataset_err(path, e.to_string()))?;
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = vec![];
        for rec in reader.records() {
            let rec = rec.map_err(|e| dataset_err(path, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { path: path.to_path_buf(), headers, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.col(name).ok_or_else(|| self.err(1, format!("missing column {name:?}")))
    }

    fn err(&self, line: usize, message: impl fmt::Display) -> Error {
        dataset_err(&self.path, format!("line {line}: {message}"))
    }

    fn cell<'a>(&self, line: usize, row: &'a [String], col: usize) -> Result<&'a str> {
        row.get(col)
            .map(String::as_str)
            .ok_or_else(|| self.err(line, format!("expected {} fields", self.headers.len())))
    }

    fn opt<V: std::str::FromStr>(&self, line: usize, row: &[String], col: Option<usize>) -> Result<Option<V>> {
        let Some(c) = col else { return Ok(None) };
        let s = self.cell(line, row, c)?;
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| self.err(line, format!("cannot parse {s:?} in column {:?}", self.headers[c])))
    }

    fn req<V: std::str::FromStr>(&self, line: usize, row: &[String], col: usize) -> Result<V> {
        self.opt(line, row, Some(col))?
            .ok_or_else(|| self.err(line, format!("empty value in column {:?}", self.headers[col])))
    }
}

fn dataset_err(path: &Path, message: String) -> Error {
    Error::Dataset { path: path.display().to_string(), message }
}

/// `node_id,f0,...` rows keyed by original id.
fn read_features(t: &Table) -> Result<Vec<(String, Vec<f64>)>> {
    let id = t.require("node_id")?;
    let feature_cols: Vec<usize> = (0..t.headers.len()).filter(|&c| c != id).collect();
    t.rows
        .iter()
        .map(|(line, row)| {
            if row.len() != t.headers.len() {
                return Err(t.err(*line, format!("expected {} fields, found {}", t.headers.len(), row.len())));
            }
            let f = feature_cols.iter().map(|&c| t.req::<f64>(*line, row, c)).collect::<Result<Vec<_>>>()?;
            Ok((row[id].clone(), f))
        })
        .collect()
}

fn feature_matrix<T: Scalar>(rows: &[(String, Vec<f64>)], ids: &IdMap) -> Result<Array2<T>> {
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut x = Array2::zeros((ids.len(), width));
    for (id, f) in rows {
        let i = ids.dense(id).expect("feature ids define the universe");
        for (k, v) in f.iter().enumerate() {
            x[[i, k]] = T::of(*v);
        }
    }
    Ok(x)
}

struct EdgeRows {
    pairs: Vec<(String, String, usize)>,
    weight: Option<Vec<f64>>,
    domain: Option<Vec<Option<i64>>>,
    time: Option<Vec<Option<i64>>>,
    label: Option<Vec<Option<usize>>>,
}

fn read_edges(t: &Table) -> Result<EdgeRows> {
    let (src, dst) = (t.require("src")?, t.require("dst")?);
    let (wc, dc, tc, lc) = (t.col("weight"), t.col("domain"), t.col("time"), t.col("label"));
    let mut e = EdgeRows {
        pairs: vec![],
        weight: wc.map(|_| vec![]),
        domain: dc.map(|_| vec![]),
        time: tc.map(|_| vec![]),
        label: lc.map(|_| vec![]),
    };
    for (line, row) in &t.rows {
        let u = t.cell(*line, row, src)?.to_string();
        let v = t.cell(*line, row, dst)?.to_string();
        if u.is_empty() || v.is_empty() {
            return Err(t.err(*line, "empty endpoint"));
        }
        e.pairs.push((u, v, *line));
        if let (Some(w), Some(c)) = (&mut e.weight, wc) {
            w.push(t.req(*line, row, c)?);
        }
        if let Some(d) = &mut e.domain {
            d.push(t.opt(*line, row, dc)?);
        }
        if let Some(x) = &mut e.time {
            x.push(t.opt(*line, row, tc)?);
        }
        if let Some(l) = &mut e.label {
            l.push(t.opt(*line, row, lc)?);
        }
    }
    Ok(e)
}

fn edge_list<T: Scalar>(t: &Table, e: EdgeRows, ids: &IdMap) -> Result<EdgeList<T>> {
    let mut pairs = Vec::with_capacity(e.pairs.len());
    for (u, v, line) in &e.pairs {
        let (Some(a), Some(b)) = (ids.dense(u), ids.dense(v)) else {
            return Err(t.err(*line, format!("edge ({u}, {v}) references an unknown node")));
        };
        pairs.push((a, b));
    }
    Ok(EdgeList {
        pairs,
        weights: e.weight.map(|w| w.into_iter().map(T::of).collect()),
        domain: e.domain,
        time: e.time,
        labels: e.label,
        features: None,
    })
}

/// A node- or link-level dataset read from disk.
#[derive(Debug, Clone)]
pub struct NodeDataset<T> {
    pub graph: Graph<T>,
    pub ids: IdMap,
}

/// Reads `edges.csv` plus the optional node files. When `node_features.csv`
/// exists it defines the node set; otherwise every id mentioned anywhere is
/// a node.
pub fn read_node_dataset<T: Scalar>(dir: &Path, directed: bool) -> Result<NodeDataset<T>> {
    let et = Table::read(&dir.join("edges.csv"))?;
    let edges = read_edges(&et)?;
    let ft = optional(&dir.join("node_features.csv"))?;
    let features = ft.as_ref().map(read_features).transpose()?;
    let lt = optional(&dir.join("node_labels.csv"))?;

    let ids = match &features {
        Some(f) => IdMap::new(f.iter().map(|r| r.0.clone())),
        None => {
            let from_edges = edges.pairs.iter().flat_map(|(u, v, _)| [u.clone(), v.clone()]);
            let from_labels = lt.iter().flat_map(|t| {
                let c = t.col("node_id").unwrap_or(0);
                t.rows.iter().filter_map(move |(_, r)| r.get(c).cloned())
            });
            IdMap::new(from_edges.chain(from_labels).filter(|s| !s.is_empty()))
        }
    };
    let n = ids.len();
    let x = features.as_ref().map(|f| feature_matrix::<T>(f, &ids)).transpose()?;
    let mut labels = None;
    let mut domain = None;
    let mut time = None;
    if let Some(t) = &lt {
        let (idc, lc) = (t.require("node_id")?, t.require("label")?);
        let (dc, tc) = (t.col("domain"), t.col("time"));
        let mut l = vec![None; n];
        let mut d = dc.map(|_| vec![None; n]);
        let mut tm = tc.map(|_| vec![None; n]);
        for (line, row) in &t.rows {
            let id = t.cell(*line, row, idc)?;
            let Some(i) = ids.dense(id) else { return Err(t.err(*line, format!("unknown node {id:?}"))) };
            l[i] = t.opt(*line, row, Some(lc))?;
            if let Some(d) = &mut d {
                d[i] = t.opt(*line, row, dc)?;
            }
            if let Some(tm) = &mut tm {
                tm[i] = t.opt(*line, row, tc)?;
            }
        }
        labels = Some(l);
        domain = d;
        time = tm;
    }
    let list = edge_list(&et, edges, &ids)?;
    let mut graph = Graph::build(&list, n, x, labels, directed)?;
    if let Some(d) = domain {
        graph = graph.with_node_domain(d)?;
    }
    if let Some(t) = time {
        graph = graph.with_node_time(t)?;
    }
    Ok(NodeDataset { graph, ids })
}

fn optional(path: &Path) -> Result<Option<Table>> {
    if path.exists() {
        Table::read(path).map(Some)
    } else {
        Ok(None)
    }
}

/// A graph-level dataset read from disk; `ids` maps graph indices.
#[derive(Debug, Clone)]
pub struct GraphDataset<T> {
    pub collection: GraphCollection<T>,
    pub ids: IdMap,
}

pub fn read_graph_dataset<T: Scalar>(dir: &Path, directed: bool) -> Result<GraphDataset<T>> {
    let t = Table::read(&dir.join("graph_labels.csv"))?;
    let (idc, lc) = (t.require("graph_id")?, t.require("label")?);
    let (dc, tc) = (t.col("domain"), t.col("time"));
    let mut rows = BTreeMap::new();
    for (line, row) in &t.rows {
        let id = t.cell(*line, row, idc)?.to_string();
        let entry =
            (t.opt::<usize>(*line, row, Some(lc))?, t.opt::<i64>(*line, row, dc)?, t.opt::<i64>(*line, row, tc)?);
        if rows.insert(id.clone(), entry).is_some() {
            return Err(t.err(*line, format!("duplicate graph {id:?}")));
        }
    }
    let ids = IdMap::new(rows.keys().cloned());
    let mut graphs = Vec::with_capacity(ids.len());
    for k in ids.originals() {
        graphs.push(read_member::<T>(&dir.join("graphs"), k, directed)?);
    }
    let attr = |f: fn(&MemberRow) -> Option<i64>| ids.originals().iter().map(|k| f(&rows[k])).collect::<Vec<_>>();
    let labels = ids.originals().iter().map(|k| rows[k].0).collect();
    let mut c = GraphCollection::new(graphs, Some(labels))?;
    if dc.is_some() {
        c = c.with_domain(attr(|r| r.1))?;
    }
    if tc.is_some() {
        c = c.with_time(attr(|r| r.2))?;
    }
    Ok(GraphDataset { collection: c, ids })
}

fn read_member<T: Scalar>(dir: &Path, k: &str, directed: bool) -> Result<Graph<T>> {
    let et = Table::read(&dir.join(format!("{k}.edges.csv")))?;
    let edges = read_edges(&et)?;
    let features = optional(&dir.join(format!("{k}.features.csv")))?.as_ref().map(read_features).transpose()?;
    let ids = match &features {
        Some(f) => IdMap::new(f.iter().map(|r| r.0.clone())),
        None => IdMap::new(edges.pairs.iter().flat_map(|(u, v, _)| [u.clone(), v.clone()])),
    };
    let x = features.as_ref().map(|f| feature_matrix::<T>(f, &ids)).transpose()?;
    let list = edge_list(&et, edges, &ids)?;
    Graph::build(&list, ids.len(), x, None, directed)
}

fn opt_cell<V: fmt::Display>(v: Option<V>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_features<T: Scalar>(path: &Path, x: &Array2<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["node_id".to_string()];
    header.extend((0..x.ncols()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_edges<T: Scalar>(path: &Path, g: &Graph<T>, attributes: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["src", "dst"];
    let weights = g.edge_weights();
    let (domain, time, labels) =
        if attributes { (g.edge_domain(), g.edge_time(), g.edge_labels()) } else { (None, None, None) };
    for (name, on) in [
        ("weight", weights.is_some()),
        ("domain", domain.is_some()),
        ("time", time.is_some()),
        ("label", labels.is_some()),
    ] {
        if on {
            header.push(name);
        }
    }
    w.write_record(&header)?;
    for (e, &(u, v)) in g.edges().iter().enumerate() {
        let mut rec = vec![u.to_string(), v.to_string()];
        if let Some(x) = weights {
            rec.push(x[e].to_string());
        }
        if let Some(x) = domain {
            rec.push(opt_cell(x[e]));
        }
        if let Some(x) = time {
            rec.push(opt_cell(x[e]));
        }
        if let Some(x) = labels {
            rec.push(opt_cell(x[e]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a graph in the node-level layout with dense ids.
pub fn write_node_dataset<T: Scalar>(dir: &Path, g: &Graph<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_edges(&dir.join("edges.csv"), g, true)?;
    write_features(&dir.join("node_features.csv"), g.node_features())?;
    if let Some(labels) = g.node_labels() {
        let mut w = csv::Writer::from_path(dir.join("node_labels.csv"))?;
        let (domain, time) = (g.node_domain(), g.node_time());
        let mut header = vec!["node_id", "label"];
        header.extend(domain.map(|_| "domain"));
        header.extend(time.map(|_| "time"));
        w.write_record(&header)?;
        for (i, l) in labels.iter().enumerate() {
            let mut rec = vec![i.to_string(), opt_cell(*l)];
            rec.extend(domain.map(|d| opt_cell(d[i])));
            rec.extend(time.map(|t| opt_cell(t[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Writes a collection in the graph-level layout with dense ids.
pub fn write_graph_dataset<T: Scalar>(dir: &Path, c: &GraphCollection<T>) -> Result<()> {
    let members = dir.join("graphs");
    fs::create_dir_all(&members)?;
    let mut w = csv::Writer::from_path(dir.join("graph_labels.csv"))?;
    let (labels, domain, time) = (c.labels(), c.domain(), c.time());
    let mut header = vec!["graph_id", "label"];
    header.extend(domain.map(|_| "domain"));
    header.extend(time.map(|_| "time"));
    w.write_record(&header)?;
    for (k, g) in c.graphs().iter().enumerate() {
        let mut rec = vec![k.to_string(), opt_cell(labels.and_then(|l| l[k]))];
        rec.extend(domain.map(|d| opt_cell(d[k])));
        rec.extend(time.map(|t| opt_cell(t[k])));
        w.write_record(&rec)?;
        write_edges(&members.join(format!("{k}.edges.csv")), g, false)?;
        write_features(&members.join(format!("{k}.features.csv")), g.node_features())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.line {
            Some(l) => write!(f, "{sev}: {}:{l}: {}", self.file, self.message),
            None => write!(f, "{sev}: {}: {}", self.file, self.message),
        }
    }
}

/// Attributes a planned scenario needs from the dataset.
#[derive(Debug, Clone, Copy, Default)]
pub struct Requirements {
    pub labels: bool,
    pub domain: bool,
    pub time: bool,
}

/// Result of [`validate_dir`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct Validation {
    pub diagnostics: Vec<Diagnostic>,
    /// Original ids of instances a scenario would drop (missing label or a
    /// required attribute).
    pub dropped: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.iter().all(|d| d.severity < Severity::Error)
    }
}

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.diagnostics {
            writeln!(f, "{d}")?;
        }
        if !self.dropped.is_empty() {
            const SHOW: usize = 20;
            let head: Vec<&str> = self.dropped.iter().take(SHOW).map(String::as_str).collect();
            let more = if self.dropped.len() > SHOW {
                format!(" (+{} more)", self.dropped.len() - SHOW)
            } else {
                String::new()
            };
            writeln!(f, "{} instance(s) would be dropped: {}{more}", self.dropped.len(), head.join(", "))?;
        }
        if self.diagnostics.is_empty() {
            writeln!(f, "ok")?;
        }
        Ok(())
    }
}

struct Checker {
    out: Validation,
}

impl Checker {
    fn push(&mut self, severity: Severity, file: &Path, line: Option<usize>, message: impl Into<String>) {
        self.out.diagnostics.push(Diagnostic {
            severity,
            file: file.display().to_string(),
            line,
            message: message.into(),
        });
    }

    fn table(&mut self, path: &Path) -> Option<Table> {
        match Table::read(path) {
            Ok(t) => Some(t),
            Err(e) => {
                self.push(Severity::Error, path, None, e.to_string());
                None
            }
        }
    }

    /// Reports unparsable cells of `col`; returns the rows that parsed to a value.
    fn column<V: std::str::FromStr>(&mut self, t: &Table, col: usize) -> Vec<(usize, Option<V>)> {
        let mut out = vec![];
        for (line, row) in &t.rows {
            match row.get(col).map(String::as_str) {
                None => {
                    self.push(Severity::Error, &t.path, Some(*line), format!("expected {} fields", t.headers.len()))
                }
                Some("") => out.push((*line, None)),
                Some(s) => match s.parse() {
                    Ok(v) => out.push((*line, Some(v))),
                    Err(_) => self.push(
                        Severity::Error,
                        &t.path,
                        Some(*line),
                        format!("cannot parse {s:?} in column {:?}", t.headers[col]),
                    ),
                },
            }
        }
        out
    }

    fn attribute(&mut self, t: &Table, name: &str, needed: bool) -> Option<BTreeSet<usize>> {
        match t.col(name) {
            Some(c) => {
                let vals = self.column::<i64>(t, c);
                let missing: BTreeSet<usize> = vals.iter().filter(|(_, v)| v.is_none()).map(|(l, _)| *l).collect();
                if needed && !missing.is_empty() {
                    self.push(Severity::Warning, &t.path, None, format!("{} row(s) without {name}", missing.len()));
                }
                Some(missing)
            }
            None if needed => {
                self.push(Severity::Error, &t.path, None, format!("missing {name} column"));
                None
            }
            None => None,
        }
    }

    fn features(&mut self, t: &Table) -> Option<BTreeSet<String>> {
        let Some(id) = t.col("node_id") else {
            self.push(Severity::Error, &t.path, Some(1), "missing column \"node_id\"");
            return None;
        };
        let mut ids = BTreeSet::new();
        for (line, row) in &t.rows {
            if row.len() != t.headers.len() {
                self.push(
                    Severity::Error,
                    &t.path,
                    Some(*line),
                    format!("expected {} fields, found {}", t.headers.len(), row.len()),
                );
                continue;
            }
            if row.iter().enumerate().any(|(c, s)| c != id && s.parse::<f64>().map_or(true, |v| !v.is_finite())) {
                self.push(Severity::Error, &t.path, Some(*line), "non-numeric feature value");
            }
            if !ids.insert(row[id].clone()) {
                self.push(Severity::Error, &t.path, Some(*line), format!("duplicate node {:?}", row[id]));
            }
        }
        Some(ids)
    }

    fn edges(&mut self, t: &Table, known: Option<&BTreeSet<String>>) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let (Some(src), Some(dst)) = (t.col("src"), t.col("dst")) else {
            self.push(Severity::Error, &t.path, Some(1), "missing column \"src\" or \"dst\"");
            return seen;
        };
        if let Some(w) = t.col("weight") {
            for (line, v) in self.column::<f64>(t, w) {
                if !v.is_some_and(|v| v.is_finite() && v >= 0.0) {
                    self.push(Severity::Error, &t.path, Some(line), "weight must be finite and non-negative");
                }
            }
        }
        for (line, row) in &t.rows {
            for c in [src, dst] {
                let Some(id) = row.get(c) else { continue };
                if id.is_empty() {
                    self.push(Severity::Error, &t.path, Some(*line), "empty endpoint");
                } else if known.is_some_and(|k| !k.contains(id)) {
                    self.push(Severity::Error, &t.path, Some(*line), format!("dangling node id {id:?}"));
                }
                seen.insert(id.clone());
            }
        }
        seen
    }

    fn density(&mut self, path: &Path, ids: impl IntoIterator<Item = String>, what: &str) {
        let map = IdMap::new(ids);
        if !map.is_identity() {
            self.push(
                Severity::Warning,
                path,
                None,
                format!("{what} ids are not dense 0..{}; they will be remapped", map.len()),
            );
        }
    }
}

/// Checks a dataset directory without loading it: schema, id density,
/// dangling references and attribute completeness.
pub fn validate_dir(dir: &Path, needs: Requirements) -> Validation {
    let mut ck = Checker { out: Validation::default() };
    if !dir.is_dir() {
        ck.push(Severity::Error, dir, None, "not a directory");
        return ck.out;
    }
    if dir.join("graph_labels.csv").exists() {
        validate_graph_level(&mut ck, dir, needs);
    } else if dir.join("edges.csv").exists() {
        validate_node_level(&mut ck, dir, needs);
    } else {
        ck.push(Severity::Error, dir, None, "neither edges.csv nor graph_labels.csv found");
    }
    ck.out
}

fn validate_node_level(ck: &mut Checker, dir: &Path, needs: Requirements) {
    let fpath = dir.join("node_features.csv");
    let known = if fpath.exists() { ck.table(&fpath).and_then(|t| ck.features(&t)) } else { None };
    let Some(et) = ck.table(&dir.join("edges.csv")) else { return };
    let mentioned = ck.edges(&et, known.as_ref());
    let lpath = dir.join("node_labels.csv");
    let labels = if lpath.exists() { ck.table(&lpath) } else { None };
    let edge_level = et.col("label").is_some() && labels.is_none();
    if edge_level {
        // link classification: labels, domains and times live on edges
        let lc = et.col("label").expect("checked");
        let mut dropped: BTreeSet<usize> =
            ck.column::<usize>(&et, lc).iter().filter(|(_, v)| v.is_none()).map(|(l, _)| *l).collect();
        for (name, needed) in [("domain", needs.domain), ("time", needs.time)] {
            dropped.extend(ck.attribute(&et, name, needed).unwrap_or_default());
        }
        ck.out.dropped = dropped.into_iter().map(|l| format!("edge at line {l}")).collect();
    } else if let Some(t) = &labels {
        check_labelled(ck, t, "node_id", needs, known.as_ref());
    } else if needs.labels {
        ck.push(Severity::Error, &lpath, None, "missing node_labels.csv");
    }
    let universe = known.unwrap_or(mentioned);
    ck.density(&dir.join("edges.csv"), universe, "node");
}

fn check_labelled(ck: &mut Checker, t: &Table, id_col: &str, needs: Requirements, known: Option<&BTreeSet<String>>) {
    let Some(idc) = t.col(id_col) else {
        ck.push(Severity::Error, &t.path, Some(1), format!("missing column {id_col:?}"));
        return;
    };
    let Some(lc) = t.col("label") else {
        ck.push(Severity::Error, &t.path, Some(1), "missing column \"label\"");
        return;
    };
    let mut drop_lines: BTreeSet<usize> =
        ck.column::<usize>(t, lc).iter().filter(|(_, v)| v.is_none()).map(|(l, _)| *l).collect();
    for (name, needed) in [("domain", needs.domain), ("time", needs.time)] {
        drop_lines.extend(ck.attribute(t, name, needed).unwrap_or_default());
    }
    let mut ids = BTreeSet::new();
    for (line, row) in &t.rows {
        let Some(id) = row.get(idc) else { continue };
        if known.is_some_and(|k| !k.contains(id)) {
            ck.push(Severity::Error, &t.path, Some(*line), format!("dangling id {id:?}"));
        }
        if !ids.insert(id.clone()) {
            ck.push(Severity::Error, &t.path, Some(*line), format!("duplicate id {id:?}"));
        }
        if drop_lines.contains(line) {
            ck.out.dropped.push(id.clone());
        }
    }
}

fn validate_graph_level(ck: &mut Checker, dir: &Path, needs: Requirements) {
    let Some(t) = ck.table(&dir.join("graph_labels.csv")) else { return };
    check_labelled(ck, &t, "graph_id", needs, None);
    let Some(idc) = t.col("graph_id") else { return };
    let members = dir.join("graphs");
    let mut widths = BTreeSet::new();
    for (_, row) in &t.rows {
        let Some(k) = row.get(idc) else { continue };
        let epath = members.join(format!("{k}.edges.csv"));
        if !epath.exists() {
            ck.push(Severity::Error, &epath, None, "missing member graph");
            continue;
        }
        let fpath = members.join(format!("{k}.features.csv"));
        let known = if fpath.exists() {
            ck.table(&fpath).and_then(|ft| {
                widths.insert(ft.headers.len());
                ck.features(&ft)
            })
        } else {
            None
        };
        if let Some(et) = ck.table(&epath) {
            ck.edges(&et, known.as_ref());
        }
    }
    if widths.len() > 1 {
        ck.push(Severity::Error, &members, None, "member graphs disagree on feature width");
    }
    ck.density(&dir.join("graph_labels.csv"), t.rows.iter().filter_map(|(_, r)| r.get(idc).cloned()), "graph");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_map_orders_numerically() {
        let m = IdMap::new(["10", "9", "2", "9"].map(String::from));
        assert_eq!(m.originals(), ["2", "9", "10"]);
        assert_eq!(m.dense("10"), Some(2));
        assert!(!m.is_identity());
        assert!(IdMap::new(["1", "0"].map(String::from)).is_identity());
        let s = IdMap::new(["b", "a", "10"].map(String::from));
        assert_eq!(s.originals(), ["10", "a", "b"]);
    }
}
