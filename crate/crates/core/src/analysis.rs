//! Cross-session aggregation: measure tables, descriptive statistics,
//! correlations, similarity curve export, and construction-sequence trees.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Polycube, ShapeType};
use crate::measures::{Action, MeasureSet, TaskRecord};
use crate::similarity::{similarity_trace, TraceError};
use crate::tasks::TaskKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("a series has zero variance")]
    ZeroVariance,
    #[error("table has no rows")]
    EmptyTable,
    #[error("records belong to different tasks ({0} and {1})")]
    MixedTasks(String, String),
    #[error("records start from structures that are not congruent")]
    MixedInitial,
    #[error("no records")]
    NoRecords,
    #[error("duplicate row for participant {participant} on task {task}")]
    DuplicateRow { participant: String, task: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::LengthMismatch(..) => "LengthMismatch",
            AnalysisError::TooFewSamples(_) => "TooFewSamples",
            AnalysisError::ZeroVariance => "ZeroVariance",
            AnalysisError::EmptyTable => "EmptyTable",
            AnalysisError::MixedTasks(..) => "MixedTasks",
            AnalysisError::MixedInitial => "MixedInitial",
            AnalysisError::NoRecords => "NoRecords",
            AnalysisError::DuplicateRow { .. } => "DuplicateRow",
            AnalysisError::Trace(_) => "ReplayError",
        }
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub participant_code: String,
    pub group: String,
    pub task_id: String,
    pub kind: TaskKind,
    pub shape_type: ShapeType,
    pub measures: MeasureSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasureTable {
    rows: Vec<MeasureRow>,
}

impl MeasureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MeasureRow) -> Result<(), AnalysisError> {
        if self.rows.iter().any(|r| r.participant_code == row.participant_code && r.task_id == row.task_id) {
            return Err(AnalysisError::DuplicateRow { participant: row.participant_code, task: row.task_id });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MeasureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, m: Measure) -> Vec<f64> {
        self.rows.iter().map(|r| m.of(&r.measures)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["participant_code", "group", "task_id", "kind", "shape_type", "similarity", "last_connect", "derivative", "zero_crossings"])
            .expect("in-memory write");
        for r in &self.rows {
            let m = &r.measures;
            w.write_record([
                r.participant_code.clone(),
                r.group.clone(),
                r.task_id.clone(),
                r.kind.to_string(),
                r.shape_type.to_string(),
                m.similarity.to_string(),
                m.last_connect.to_string(),
                m.derivative.to_string(),
                m.zero_crossings.to_string(),
            ])
            .expect("in-memory write");
        }
        into_string(w)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Similarity,
    LastConnect,
    Derivative,
    ZeroCrossings,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Similarity, Measure::LastConnect, Measure::Derivative, Measure::ZeroCrossings];

    pub fn of(self, m: &MeasureSet) -> f64 {
        match self {
            Measure::Similarity => m.similarity,
            Measure::LastConnect => m.last_connect,
            Measure::Derivative => m.derivative,
            Measure::ZeroCrossings => m.zero_crossings as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Similarity => "similarity",
            Measure::LastConnect => "last_connect",
            Measure::Derivative => "derivative",
            Measure::ZeroCrossings => "zero_crossings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Group,
    Participant,
    Task,
    Kind,
    ShapeType,
}

impl Factor {
    fn level(self, r: &MeasureRow) -> String {
        match self {
            Factor::Group => r.group.clone(),
            Factor::Participant => r.participant_code.clone(),
            Factor::Task => r.task_id.clone(),
            Factor::Kind => r.kind.to_string(),
            Factor::ShapeType => r.shape_type.to_string(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::Group => "group",
            Factor::Participant => "participant_code",
            Factor::Task => "task_id",
            Factor::Kind => "kind",
            Factor::ShapeType => "shape_type",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// One level per requested factor, in request order.
    pub key: Vec<String>,
    pub n: usize,
    pub stats: BTreeMap<Measure, Summary>,
}

impl GroupSummary {
    pub fn get(&self, m: Measure) -> Summary {
        self.stats[&m]
    }
}

/// Per-group mean and sample standard deviation of every measure. Groups are
/// ordered by key.
pub fn aggregate(table: &MeasureTable, by: &[Factor]) -> Result<Vec<GroupSummary>, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&MeasureRow>> = BTreeMap::new();
    for r in table.rows() {
        groups.entry(by.iter().map(|f| f.level(r)).collect()).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(key, rows)| {
            let stats = Measure::ALL
                .into_iter()
                .map(|m| {
                    let v: Vec<f64> = rows.iter().map(|r| m.of(&r.measures)).collect();
                    (m, Summary { mean: mean(&v), sd: sample_sd(&v) })
                })
                .collect();
            GroupSummary { key, n: rows.len(), stats }
        })
        .collect())
}

pub fn aggregate_csv(by: &[Factor], groups: &[GroupSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = by.iter().map(|f| f.name().to_owned()).collect();
    header.push("n".into());
    for m in Measure::ALL {
        header.push(format!("{}_mean", m.name()));
        header.push(format!("{}_sd", m.name()));
    }
    w.write_record(&header).expect("in-memory write");
    for g in groups {
        let mut rec = g.key.clone();
        rec.push(g.n.to_string());
        for m in Measure::ALL {
            let s = g.get(m);
            rec.push(s.mean.to_string());
            rec.push(s.sd.to_string());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    into_string(w)
}

/// Correlations between an external per-participant score (for example a
/// paper-and-pencil test) and each measure, one row per participant.
pub fn correlate_with(
    table: &MeasureTable,
    scores: &HashMap<String, f64>,
    filter: impl Fn(&MeasureRow) -> bool,
) -> BTreeMap<Measure, Result<f64, AnalysisError>> {
    let mut per_participant: BTreeMap<&str, Vec<&MeasureRow>> = BTreeMap::new();
    for r in table.rows().iter().filter(|r| filter(r)) {
        if scores.contains_key(&r.participant_code) {
            per_participant.entry(&r.participant_code).or_default().push(r);
        }
    }
    Measure::ALL
        .into_iter()
        .map(|m| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = per_participant
                .iter()
                .map(|(p, rows)| {
                    let v: Vec<f64> = rows.iter().map(|r| m.of(&r.measures)).collect();
                    (scores[*p], mean(&v))
                })
                .unzip();
            (m, pearson_r(&xs, &ys))
        })
        .collect()
}

/// Pairwise correlations between the four measures across all rows.
pub fn measure_correlations(table: &MeasureTable) -> Vec<(Measure, Measure, Result<f64, AnalysisError>)> {
    let mut out = Vec::new();
    for (i, a) in Measure::ALL.into_iter().enumerate() {
        for b in Measure::ALL.into_iter().skip(i + 1) {
            out.push((a, b, pearson_r(&table.column(a), &table.column(b))));
        }
    }
    out
}

/// Long-format similarity curves: one CSV row per trace point.
pub fn export_curves<'a, I>(records: I) -> Result<String, AnalysisError>
where
    I: IntoIterator<Item = (&'a TaskRecord, &'a Polycube)>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["participant_code", "task_id", "t", "similarity"]).expect("in-memory write");
    for (record, proto) in records {
        for tp in similarity_trace(record, proto)? {
            w.write_record([record.participant_code.clone(), record.task_id.clone(), tp.t.to_string(), tp.value().to_string()])
                .expect("in-memory write");
        }
    }
    Ok(into_string(w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceNode {
    /// Rotation-free form of the structure at this point.
    pub canonical: Polycube,
    /// Cells as first observed, in the base-cube frame.
    pub raw: Polycube,
    /// Action that led here; `None` at the root.
    pub action: Option<Action>,
    pub count: usize,
    pub children: Vec<SequenceNode>,
}

impl SequenceNode {
    fn new(canonical: Polycube, raw: Polycube, action: Option<Action>) -> Self {
        SequenceNode { canonical, raw, action, count: 0, children: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(SequenceNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(SequenceNode::depth).max().unwrap_or(0)
    }
}

/// Trie of construction paths for one task, merged on canonical structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTree {
    pub task_id: String,
    pub root: SequenceNode,
}

impl SequenceTree {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    /// Indented outline, one node per line.
    pub fn to_text(&self) -> String {
        fn walk(node: &SequenceNode, depth: usize, out: &mut String) {
            let label = match node.action {
                None => "start",
                Some(a) => a.as_str(),
            };
            let _ = writeln!(out, "{}{} x{} {} cubes {}", "  ".repeat(depth), label, node.count, node.raw.len(), node.raw);
            for c in &node.children {
                walk(c, depth + 1, out);
            }
        }
        let mut out = format!("task {}\n", self.task_id);
        walk(&self.root, 0, &mut out);
        out
    }
}

pub fn build_sequence_tree(records: &[TaskRecord]) -> Result<SequenceTree, AnalysisError> {
    let first = records.first().ok_or(AnalysisError::NoRecords)?;
    if let Some(other) = records.iter().find(|r| r.task_id != first.task_id) {
        return Err(AnalysisError::MixedTasks(first.task_id.clone(), other.task_id.clone()));
    }
    let canon = |p: &Polycube| p.canonical_form().unwrap_or_default();
    let mut root = SequenceNode::new(canon(&first.initial), first.initial.clone(), None);
    for record in records {
        let states = crate::measures::replay(record).map_err(TraceError::from)?;
        if canon(&states[0]) != root.canonical {
            return Err(AnalysisError::MixedInitial);
        }
        root.count += 1;
        let mut node = &mut root;
        for (state, ev) in states[1..].iter().zip(&record.events) {
            let c = canon(state);
            let idx = match node.children.iter().position(|ch| ch.canonical == c && ch.action == Some(ev.action)) {
                Some(i) => i,
                None => {
                    node.children.push(SequenceNode::new(c, state.clone(), Some(ev.action)));
                    node.children.len() - 1
                }
            };
            node = &mut node.children[idx];
            node.count += 1;
        }
    }
    Ok(SequenceTree { task_id: first.task_id.clone(), root })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CubeCoord;
    use crate::measures::{Outcome, TaskEvent};
    use proptest::prelude::*;

    fn row(p: &str, group: &str, task: &str, last_connect: f64) -> MeasureRow {
        MeasureRow {
            participant_code: p.into(),
            group: group.into(),
            task_id: task.into(),
            kind: TaskKind::Match,
            shape_type: ShapeType::ThreeD,
            measures: MeasureSet { similarity: 100.0, last_connect, derivative: 10.0, zero_crossings: 0 },
        }
    }

    #[test]
    fn pearson_fixtures() {
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), -1.0);
        // sums: dx = (-1.5,-.5,.5,1.5), dy = same with middle pair swapped; sxy = 4, sxx = syy = 5
        assert!((pearson_r(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(AnalysisError::LengthMismatch(3, 2)));
        assert_eq!(pearson_r(&[1.0, 2.0], &[1.0, 2.0]), Err(AnalysisError::TooFewSamples(2)));
        assert_eq!(pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::ZeroVariance));
    }

    #[test]
    fn aggregate_examples() {
        let mut t = MeasureTable::new();
        assert_eq!(aggregate(&t, &[Factor::Group]), Err(AnalysisError::EmptyTable));
        t.push(row("a", "young", "m1", 30.0)).unwrap();
        let g = aggregate(&t, &[Factor::Group]).unwrap();
        assert_eq!(g[0].get(Measure::LastConnect), Summary { mean: 30.0, sd: 0.0 });

        t.push(row("b", "young", "m1", 30.0)).unwrap();
        assert_eq!(aggregate(&t, &[]).unwrap()[0].get(Measure::LastConnect).sd, 0.0);
        assert!(t.push(row("b", "young", "m1", 1.0)).is_err());

        t.push(row("c", "elderly", "m1", 90.0)).unwrap();
        t.push(row("d", "elderly", "m1", 70.0)).unwrap();
        let g = aggregate(&t, &[Factor::Group]).unwrap();
        assert_eq!(g[0].key, vec!["elderly"]);
        assert_eq!(g[0].get(Measure::LastConnect).mean, 80.0);
        assert!((g[0].get(Measure::LastConnect).sd - 200f64.sqrt()).abs() < 1e-12);
        assert!(g[1].get(Measure::LastConnect).mean < g[0].get(Measure::LastConnect).mean);
        let csv = aggregate_csv(&[Factor::Group], &g);
        assert!(csv.starts_with("group,n,similarity_mean,similarity_sd,"));
        assert_eq!(csv.lines().count(), 3);
    }

    fn rec(participant: &str, task: &str, cells: &[(i32, i32, i32)]) -> TaskRecord {
        TaskRecord {
            task_id: task.into(),
            prototype_id: "p".into(),
            participant_code: participant.into(),
            initial: Polycube::base(),
            events: cells
                .iter()
                .enumerate()
                .map(|(i, &(x, y, z))| TaskEvent::new(i as f64 + 1.0, Action::Connect, CubeCoord::new(x, y, z), i as u32 + 1))
                .collect(),
            outcome: Some(Outcome::CompletedByParticipant),
        }
    }

    #[test]
    fn curves_have_one_row_per_trace_point() {
        let proto = Polycube::from_triples([(0, 0, 0), (1, 0, 0), (2, 0, 0), (2, 1, 0), (2, 2, 0), (2, 2, 1)]);
        let a = rec("A", "m", &[(1, 0, 0), (2, 0, 0), (2, 1, 0), (2, 2, 0), (2, 2, 1)]);
        let b = rec("B", "m", &[(0, 1, 0)]);
        let csv = export_curves([(&a, &proto), (&b, &proto)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "participant_code,task_id,t,similarity");
        assert_eq!(lines.len(), 1 + 6 + 2);
        assert_eq!(lines.iter().filter(|l| l.starts_with("A,")).count(), 6);
        assert_eq!(lines.iter().filter(|l| l.starts_with("B,")).count(), 2);
    }

    #[test]
    fn sequence_tree_examples() {
        let one = rec("A", "m", &[(1, 0, 0), (2, 0, 0), (2, 1, 0)]);
        let tree = build_sequence_tree(std::slice::from_ref(&one)).unwrap();
        assert_eq!(tree.root.node_count(), 4);
        assert_eq!(tree.root.depth(), 4);

        let tree = build_sequence_tree(&[one.clone(), one.clone()]).unwrap();
        assert_eq!(tree.root.node_count(), 4);
        assert_eq!(tree.root.count, 2);
        assert_eq!(tree.root.children[0].children[0].count, 2);

        // same first step, different second: straight line versus an L
        let other = rec("B", "m", &[(1, 0, 0), (1, 1, 0), (2, 1, 0)]);
        let tree = build_sequence_tree(&[one.clone(), other]).unwrap();
        let depth1 = &tree.root.children[0];
        assert_eq!(tree.root.children.len(), 1);
        assert_eq!(depth1.count, 2);
        assert_eq!(depth1.children.len(), 2);
        assert!(tree.to_text().starts_with("task m\nstart x2"));
        let json: SequenceTree = serde_json::from_str(&tree.to_json()).unwrap();
        assert_eq!(json, tree);

        let mixed = rec("C", "other", &[(1, 0, 0)]);
        assert!(matches!(build_sequence_tree(&[one, mixed]), Err(AnalysisError::MixedTasks(..))));
        assert_eq!(build_sequence_tree(&[]), Err(AnalysisError::NoRecords));
    }

    #[test]
    fn rotated_paths_merge() {
        let along_x = rec("A", "m", &[(1, 0, 0)]);
        let along_y = rec("B", "m", &[(0, 1, 0)]);
        let tree = build_sequence_tree(&[along_x, along_y]).unwrap();
        assert_eq!(tree.root.children.len(), 1);
        assert_eq!(tree.root.children[0].count, 2);
    }

    fn check_children(n: &SequenceNode) -> bool {
        n.children.iter().all(|c| c.count <= n.count && check_children(c))
    }

    proptest! {
        #[test]
        fn pearson_symmetry_affine_and_sign(
            xs in prop::collection::vec(-100.0f64..100.0, 3..20),
            noise in prop::collection::vec(-100.0f64..100.0, 20),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x * 0.5 + n).collect();
            let Ok(r) = pearson_r(&xs, &ys) else { return Ok(()); };
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((pearson_r(&ys, &xs).unwrap() - r).abs() < 1e-9);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assert!((pearson_r(&scaled, &ys).unwrap() - r).abs() < 1e-9);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((pearson_r(&xs, &neg).unwrap() + r).abs() < 1e-9);
        }

        #[test]
        fn tree_counts_are_consistent(seeds in prop::collection::vec(any::<u64>(), 1..6)) {
            let records: Vec<TaskRecord> = seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let target = crate::protogen::random_polycube(5, s);
                    let mut cur = Polycube::base();
                    let mut cells = Vec::new();
                    while cur.len() < target.len() {
                        let next = target.iter().find(|&c| cur.is_attachable(c)).unwrap();
                        cur.insert(next);
                        cells.push((next.x, next.y, next.z));
                    }
                    rec(&format!("P{i}"), "m", &cells)
                })
                .collect();
            let total_events: usize = records.iter().map(|r| r.events.len()).sum();
            let tree = build_sequence_tree(&records).unwrap();
            prop_assert!(tree.root.node_count() <= 1 + total_events);
            prop_assert_eq!(tree.root.count, records.len());
            prop_assert!(check_children(&tree.root));
        }
    }
}
