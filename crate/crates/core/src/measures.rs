//! Event-log replay and the four per-task assessment measures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CubeCoord, Polycube};
use crate::similarity::{similarity_trace, SimilarityError, TraceError, TracePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Connect,
    Disconnect,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Connect => "connect",
            Action::Disconnect => "disconnect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    CompletedByParticipant,
    StoppedByAssessor,
}

/// One participant action. `t` is seconds since the prototype appeared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "EventLine", into = "EventLine")]
pub struct TaskEvent {
    pub t: f64,
    pub action: Action,
    pub cell: CubeCoord,
    pub cube_id: u32,
    /// Client-reported time, kept for reference when the server stamps `t`.
    pub client_t: Option<f64>,
}

impl TaskEvent {
    pub fn new(t: f64, action: Action, cell: CubeCoord, cube_id: u32) -> Self {
        Self { t, action, cell, cube_id, client_t: None }
    }
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    t: f64,
    action: Action,
    x: i32,
    y: i32,
    z: i32,
    cube_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    client_t: Option<f64>,
}

impl From<EventLine> for TaskEvent {
    fn from(l: EventLine) -> Self {
        TaskEvent { t: l.t, action: l.action, cell: CubeCoord::new(l.x, l.y, l.z), cube_id: l.cube_id, client_t: l.client_t }
    }
}

impl From<TaskEvent> for EventLine {
    fn from(e: TaskEvent) -> Self {
        EventLine { t: e.t, action: e.action, x: e.cell.x, y: e.cell.y, z: e.cell.z, cube_id: e.cube_id, client_t: e.client_t }
    }
}

/// Everything logged for one participant on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub prototype_id: String,
    pub participant_code: String,
    pub initial: Polycube,
    pub events: Vec<TaskEvent>,
    /// `None` while the task is still in progress.
    pub outcome: Option<Outcome>,
}

impl TaskRecord {
    /// Cube id per occupied cell after all events, and the next unused id.
    pub fn cube_ids(&self) -> (BTreeMap<CubeCoord, u32>, u32) {
        let mut ids = initial_cube_ids(&self.initial);
        let mut next = ids.len() as u32;
        for ev in &self.events {
            match ev.action {
                Action::Connect => {
                    ids.insert(ev.cell, ev.cube_id);
                    next = next.max(ev.cube_id + 1);
                }
                Action::Disconnect => {
                    ids.remove(&ev.cell);
                }
            }
        }
        (ids, next)
    }
}

/// Ids for the cubes of a starting structure: the base is 0, the rest follow
/// in cell order.
pub fn initial_cube_ids(initial: &Polycube) -> BTreeMap<CubeCoord, u32> {
    let mut ids = BTreeMap::new();
    if initial.contains(CubeCoord::ORIGIN) {
        ids.insert(CubeCoord::ORIGIN, 0);
    }
    for c in initial.iter().filter(|&c| c != CubeCoord::ORIGIN) {
        ids.insert(c, ids.len() as u32);
    }
    ids
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("initial structure does not contain the base cell")]
    MissingBase,
    #[error("initial structure is not face-connected")]
    InitialDisconnected,
    #[error("event {index}: time goes backwards")]
    OutOfOrder { index: usize },
    #[error("event {index}: cell {cell} is already occupied")]
    CellOccupied { index: usize, cell: CubeCoord },
    #[error("event {index}: cell {cell} is not occupied")]
    CellAbsent { index: usize, cell: CubeCoord },
    #[error("event {index}: cell {cell} does not touch the structure")]
    NotAdjacent { index: usize, cell: CubeCoord },
    #[error("event {index}: the base cube cannot be removed")]
    BaseRemoval { index: usize },
    #[error("event {index}: removing {cell} would disconnect the structure")]
    DisconnectsStructure { index: usize, cell: CubeCoord },
}

impl ReplayError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::MissingBase => "MissingBase",
            ReplayError::InitialDisconnected => "InitialDisconnected",
            ReplayError::OutOfOrder { .. } => "OutOfOrder",
            ReplayError::CellOccupied { .. } => "CellOccupied",
            ReplayError::CellAbsent { .. } => "CellAbsent",
            ReplayError::NotAdjacent { .. } => "NotAdjacent",
            ReplayError::BaseRemoval { .. } => "BaseRemoval",
            ReplayError::DisconnectsStructure { .. } => "DisconnectsStructure",
        }
    }
}

/// A live structure that accepts events one at a time under replay rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Structure {
    cells: Polycube,
}

impl Structure {
    pub fn new(initial: Polycube) -> Result<Self, ReplayError> {
        if !initial.contains(CubeCoord::ORIGIN) {
            return Err(ReplayError::MissingBase);
        }
        if !initial.is_connected().unwrap_or(false) {
            return Err(ReplayError::InitialDisconnected);
        }
        Ok(Self { cells: initial })
    }

    pub fn cells(&self) -> &Polycube {
        &self.cells
    }

    pub fn into_cells(self) -> Polycube {
        self.cells
    }

    /// Checks an event without applying it; `index` only labels errors.
    pub fn check(&self, index: usize, action: Action, cell: CubeCoord) -> Result<(), ReplayError> {
        match action {
            Action::Connect => {
                if self.cells.contains(cell) {
                    Err(ReplayError::CellOccupied { index, cell })
                } else if !self.cells.is_attachable(cell) {
                    Err(ReplayError::NotAdjacent { index, cell })
                } else {
                    Ok(())
                }
            }
            Action::Disconnect => {
                if !self.cells.contains(cell) {
                    Err(ReplayError::CellAbsent { index, cell })
                } else if cell == CubeCoord::ORIGIN {
                    Err(ReplayError::BaseRemoval { index })
                } else if !self.cells.can_remove(cell) {
                    Err(ReplayError::DisconnectsStructure { index, cell })
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn apply(&mut self, index: usize, action: Action, cell: CubeCoord) -> Result<(), ReplayError> {
        self.check(index, action, cell)?;
        match action {
            Action::Connect => self.cells.insert(cell),
            Action::Disconnect => self.cells.remove(cell),
        };
        Ok(())
    }
}

/// Structure states: the initial one, then one after every event.
pub fn replay(record: &TaskRecord) -> Result<Vec<Polycube>, ReplayError> {
    let mut structure = Structure::new(record.initial.clone())?;
    let mut states = Vec::with_capacity(record.events.len() + 1);
    states.push(structure.cells().clone());
    let mut last_t = f64::NEG_INFINITY;
    for (index, ev) in record.events.iter().enumerate() {
        if ev.t < last_t || ev.t.is_nan() {
            return Err(ReplayError::OutOfOrder { index });
        }
        last_t = ev.t;
        structure.apply(index, ev.action, ev.cell)?;
        states.push(structure.cells().clone());
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSet {
    /// Percent, at the final logged state.
    pub similarity: f64,
    /// Seconds from prototype onset to the final event.
    pub last_connect: f64,
    /// Mean local slope, percent per second.
    pub derivative: f64,
    pub zero_crossings: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("record has no events")]
    NoEvents,
    #[error("trace points {index} and {} share a timestamp", index + 1)]
    ZeroDt { index: usize },
}

impl MeasureError {
    pub fn code(&self) -> &'static str {
        match self {
            MeasureError::Replay(e) => e.code(),
            MeasureError::Similarity(SimilarityError::EmptyPrototype) => "EmptyPrototype",
            MeasureError::Similarity(_) => "InvalidOverlap",
            MeasureError::NoEvents => "NoEvents",
            MeasureError::ZeroDt { .. } => "ZeroDt",
        }
    }
}

impl From<TraceError> for MeasureError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Replay(r) => MeasureError::Replay(r),
            TraceError::Similarity(s) => MeasureError::Similarity(s),
        }
    }
}

/// Local slopes between consecutive `(t, value)` points.
pub fn slopes(points: &[(f64, f64)]) -> Result<Vec<f64>, MeasureError> {
    points
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let dt = w[1].0 - w[0].0;
            if dt == 0.0 {
                Err(MeasureError::ZeroDt { index })
            } else {
                Ok((w[1].1 - w[0].1) / dt)
            }
        })
        .collect()
}

/// Sign alternations in a slope sequence. Zero slopes carry the previous
/// nonzero sign forward; leading zeros are skipped.
pub fn zero_crossings(slopes: &[f64]) -> u32 {
    let mut previous: Option<bool> = None;
    let mut crossings = 0;
    for &s in slopes {
        if s == 0.0 {
            continue;
        }
        let positive = s > 0.0;
        if previous.is_some_and(|p| p != positive) {
            crossings += 1;
        }
        previous = Some(positive);
    }
    crossings
}

/// Measures from an already computed `(t, similarity)` trace.
pub fn measures_from_points(points: &[(f64, f64)]) -> Result<MeasureSet, MeasureError> {
    if points.len() < 2 {
        return Err(MeasureError::NoEvents);
    }
    let local = slopes(points)?;
    let (last_t, last_value) = points[points.len() - 1];
    Ok(MeasureSet {
        similarity: last_value,
        last_connect: last_t,
        derivative: local.iter().sum::<f64>() / local.len() as f64,
        zero_crossings: zero_crossings(&local),
    })
}

pub fn trace_points(trace: &[TracePoint]) -> Vec<(f64, f64)> {
    trace.iter().map(|tp| (tp.t, tp.value())).collect()
}

pub fn compute_measures(record: &TaskRecord, prototype: &Polycube) -> Result<MeasureSet, MeasureError> {
    let trace = similarity_trace(record, prototype)?;
    measures_from_points(&trace_points(&trace))
}
