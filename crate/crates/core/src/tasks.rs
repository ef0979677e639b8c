//! Task specifications, construction guidance, and the per-session state
//! machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CubeCoord, Polycube, ShapeType};
use crate::measures::{Action, Outcome, ReplayError, Structure, TaskEvent, TaskRecord};
use crate::protogen::MAX_PROTOTYPE_CUBES;
use crate::similarity::best_similarity;

/// Default starting construct for reshape tasks: a 2x2x2 block without its
/// far corner.
pub const DEFAULT_RESHAPE_INITIAL: &str = include_str!("../data/reshape_default.txt");

pub const RESHAPE_INITIAL_CUBES: usize = 7;

/// Prototype turntable speed shown to participants, revolutions per minute.
pub const ROTATION_RPM: f64 = 2.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Intro,
    Follow,
    Match,
    Reshape,
}

impl TaskKind {
    /// Intro and follow tasks show the next cube to attach.
    pub fn is_guided(self) -> bool {
        matches!(self, TaskKind::Intro | TaskKind::Follow)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Intro => "intro",
            TaskKind::Follow => "follow",
            TaskKind::Match => "match",
            TaskKind::Reshape => "reshape",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub prototype_id: String,
    pub prototype: Polycube,
    pub initial: Polycube,
    pub guided: bool,
}

impl TaskSpec {
    /// A task with the standard starting structure for its kind.
    pub fn new(task_id: impl Into<String>, kind: TaskKind, prototype_id: impl Into<String>, prototype: Polycube) -> Self {
        let initial = match kind {
            TaskKind::Reshape => default_reshape_initial(),
            _ => Polycube::base(),
        };
        TaskSpec {
            task_id: task_id.into(),
            kind,
            prototype_id: prototype_id.into(),
            prototype,
            initial,
            guided: kind.is_guided(),
        }
    }

    pub fn shape_type(&self) -> Option<ShapeType> {
        self.prototype.shape_type().ok()
    }
}

pub fn default_reshape_initial() -> Polycube {
    crate::formats::parse_prototype(DEFAULT_RESHAPE_INITIAL)
        .expect("bundled reshape construct parses")
        .cells
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "code", rename_all = "PascalCase")]
pub enum TaskViolation {
    #[error("prototype is empty")]
    EmptyPrototype,
    #[error("prototype has {cubes} cubes, more than {MAX_PROTOTYPE_CUBES}")]
    TooManyCubes { cubes: usize },
    #[error("prototype is not face-connected")]
    NotConnected,
    #[error("prototype does not contain the base cell")]
    PrototypeMissingBase,
    #[error("initial structure does not contain the base cell")]
    InitialMissingBase,
    #[error("initial structure is not face-connected")]
    InitialNotConnected,
    #[error("{kind} tasks start from the base cube alone")]
    InitialNotBase { kind: TaskKind },
    #[error("reshape tasks start from a {RESHAPE_INITIAL_CUBES}-cube construct, got {cubes}")]
    ReshapeInitialSize { cubes: usize },
    #[error("reshape starting construct must be three-dimensional")]
    ReshapeInitialNotThreeD,
    #[error("guided flag does not match task kind {kind}")]
    GuidanceMismatch { kind: TaskKind },
}

/// Every violated task invariant, or `Ok` when there are none.
pub fn validate_task(spec: &TaskSpec) -> Result<(), Vec<TaskViolation>> {
    let mut v = Vec::new();
    let proto = &spec.prototype;
    if proto.is_empty() {
        v.push(TaskViolation::EmptyPrototype);
    } else {
        if proto.len() > MAX_PROTOTYPE_CUBES {
            v.push(TaskViolation::TooManyCubes { cubes: proto.len() });
        }
        if !proto.is_connected().unwrap_or(false) {
            v.push(TaskViolation::NotConnected);
        }
        if !proto.contains(CubeCoord::ORIGIN) {
            v.push(TaskViolation::PrototypeMissingBase);
        }
    }
    let init = &spec.initial;
    if !init.contains(CubeCoord::ORIGIN) {
        v.push(TaskViolation::InitialMissingBase);
    }
    if !init.is_empty() && !init.is_connected().unwrap_or(false) {
        v.push(TaskViolation::InitialNotConnected);
    }
    match spec.kind {
        TaskKind::Reshape => {
            if init.len() != RESHAPE_INITIAL_CUBES {
                v.push(TaskViolation::ReshapeInitialSize { cubes: init.len() });
            }
            if init.shape_type().ok() != Some(ShapeType::ThreeD) {
                v.push(TaskViolation::ReshapeInitialNotThreeD);
            }
        }
        kind => {
            if *init != Polycube::base() {
                v.push(TaskViolation::InitialNotBase { kind });
            }
        }
    }
    if spec.guided != spec.kind.is_guided() {
        v.push(TaskViolation::GuidanceMismatch { kind: spec.kind });
    }
    if v.is_empty() { Ok(()) } else { Err(v) }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("task is not guided")]
    NotGuidedTask,
    #[error("no task is active")]
    NoActiveTask,
    #[error("session is {0:?}; events are not accepted")]
    WrongPhase(Phase),
    #[error("event time {t} is not after the previous event at {previous}")]
    NonIncreasingTime { t: f64, previous: f64 },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("task library is empty")]
    EmptyLibrary,
}

impl TaskError {
    pub fn code(&self) -> &'static str {
        match self {
            TaskError::NotGuidedTask => "NotGuidedTask",
            TaskError::NoActiveTask => "NoActiveTask",
            TaskError::WrongPhase(_) => "WrongPhase",
            TaskError::NonIncreasingTime { .. } => "ZeroDt",
            TaskError::Replay(e) => e.code(),
            TaskError::EmptyLibrary => "EmptyLibrary",
        }
    }
}

/// What the display suggests next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Guidance {
    Add { cell: CubeCoord },
    Remove { cell: CubeCoord },
}

impl Guidance {
    pub fn cell(&self) -> CubeCoord {
        match *self {
            Guidance::Add { cell } | Guidance::Remove { cell } => cell,
        }
    }

    pub fn action(&self) -> Action {
        match self {
            Guidance::Add { .. } => Action::Connect,
            Guidance::Remove { .. } => Action::Disconnect,
        }
    }
}

/// The next step toward the prototype, laid over the structure with the two
/// base cells coinciding and no rotation.
///
/// Extra cubes are removed first whenever one can come off without splitting
/// the structure; otherwise the lowest missing prototype cell in `(z, y, x)`
/// order that touches the structure is added. `None` once the structure
/// already matches.
pub fn next_guidance_cube(spec: &TaskSpec, current: &Polycube) -> Result<Option<Guidance>, TaskError> {
    if !spec.guided {
        return Err(TaskError::NotGuidedTask);
    }
    if current.is_empty() || spec.prototype.is_empty() {
        return Ok(None);
    }
    if best_similarity(current, &spec.prototype).map(|s| s.is_perfect()).unwrap_or(false) {
        return Ok(None);
    }
    let removable = current
        .iter()
        .filter(|&c| c != CubeCoord::ORIGIN && !spec.prototype.contains(c) && current.can_remove(c))
        .min_by_key(|c| c.zyx_key());
    if let Some(cell) = removable {
        return Ok(Some(Guidance::Remove { cell }));
    }
    let addable = spec
        .prototype
        .iter()
        .filter(|&c| current.is_attachable(c))
        .min_by_key(|c| c.zyx_key());
    Ok(addable.map(|cell| Guidance::Add { cell }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Prototype shown, no event yet.
    Presenting,
    Building,
    Done,
    Aborted,
}

/// Acknowledgement for an accepted event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accepted {
    pub event: TaskEvent,
    pub event_count: usize,
}

/// One participant working through a task queue.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub participant_code: String,
    tasks: Vec<TaskSpec>,
    current: usize,
    sealed: Vec<TaskRecord>,
    active: Option<(TaskRecord, Structure)>,
    phase: Phase,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, participant_code: impl Into<String>, tasks: Vec<TaskSpec>) -> Result<Self, TaskError> {
        if tasks.is_empty() {
            return Err(TaskError::EmptyLibrary);
        }
        let participant_code = participant_code.into();
        let mut s = SessionState {
            session_id: session_id.into(),
            participant_code,
            tasks,
            current: 0,
            sealed: Vec::new(),
            active: None,
            phase: Phase::Presenting,
        };
        s.present(0)?;
        Ok(s)
    }

    fn present(&mut self, index: usize) -> Result<(), TaskError> {
        let spec = &self.tasks[index];
        let record = TaskRecord {
            task_id: spec.task_id.clone(),
            prototype_id: spec.prototype_id.clone(),
            participant_code: self.participant_code.clone(),
            initial: spec.initial.clone(),
            events: Vec::new(),
            outcome: None,
        };
        let structure = Structure::new(spec.initial.clone())?;
        self.current = index;
        self.active = Some((record, structure));
        self.phase = Phase::Presenting;
        Ok(())
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn current_task(&self) -> Option<&TaskSpec> {
        self.active.as_ref().map(|_| &self.tasks[self.current])
    }

    pub fn active_record(&self) -> Option<&TaskRecord> {
        self.active.as_ref().map(|(r, _)| r)
    }

    pub fn structure(&self) -> Option<&Polycube> {
        self.active.as_ref().map(|(_, s)| s.cells())
    }

    pub fn sealed_records(&self) -> &[TaskRecord] {
        &self.sealed
    }

    pub fn guidance(&self) -> Option<Guidance> {
        let spec = self.current_task()?;
        next_guidance_cube(spec, self.structure()?).ok().flatten()
    }

    /// Validates an event without applying it.
    pub fn check_event(&self, t: f64, action: Action, cell: CubeCoord) -> Result<(), TaskError> {
        match self.phase {
            Phase::Presenting | Phase::Building => {}
            other => return Err(TaskError::WrongPhase(other)),
        }
        let (record, structure) = self.active.as_ref().ok_or(TaskError::NoActiveTask)?;
        if let Some(prev) = record.events.last() {
            if t <= prev.t {
                return Err(TaskError::NonIncreasingTime { t, previous: prev.t });
            }
        } else if t <= 0.0 {
            return Err(TaskError::NonIncreasingTime { t, previous: 0.0 });
        }
        structure.check(record.events.len(), action, cell)?;
        Ok(())
    }

    /// Validates and appends an event to the active record. The first event
    /// moves the session from presenting to building.
    pub fn apply_event(&mut self, event: TaskEvent) -> Result<Accepted, TaskError> {
        self.check_event(event.t, event.action, event.cell)?;
        let (record, structure) = self.active.as_mut().ok_or(TaskError::NoActiveTask)?;
        structure.apply(record.events.len(), event.action, event.cell)?;
        record.events.push(event);
        self.phase = Phase::Building;
        Ok(Accepted { event, event_count: record.events.len() })
    }

    fn seal(&mut self, outcome: Outcome) -> Result<TaskRecord, TaskError> {
        match self.phase {
            Phase::Presenting | Phase::Building => {}
            _ => return Err(TaskError::NoActiveTask),
        }
        let (mut record, _) = self.active.take().ok_or(TaskError::NoActiveTask)?;
        record.outcome = Some(outcome);
        self.sealed.push(record.clone());
        Ok(record)
    }

    /// Participant finished: seal the record and present the next task.
    pub fn advance(&mut self) -> Result<TaskRecord, TaskError> {
        let record = self.seal(Outcome::CompletedByParticipant)?;
        if self.current + 1 < self.tasks.len() {
            self.present(self.current + 1)?;
        } else {
            self.phase = Phase::Done;
        }
        Ok(record)
    }

    /// Assessor stops the assessment.
    pub fn abort_task(&mut self) -> Result<TaskRecord, TaskError> {
        let record = self.seal(Outcome::StoppedByAssessor)?;
        self.phase = Phase::Aborted;
        Ok(record)
    }

    /// Rebuilds a session from persisted records: `sealed` in task order, then
    /// the in-progress record if any. Used after a restart.
    pub fn restore(
        session_id: impl Into<String>,
        participant_code: impl Into<String>,
        tasks: Vec<TaskSpec>,
        sealed: Vec<TaskRecord>,
        in_progress: Option<TaskRecord>,
    ) -> Result<Self, TaskError> {
        let mut s = SessionState::new(session_id, participant_code, tasks)?;
        for rec in sealed {
            for ev in &rec.events {
                s.apply_event(*ev)?;
            }
            match rec.outcome {
                Some(Outcome::StoppedByAssessor) => {
                    s.abort_task()?;
                }
                _ => {
                    s.advance()?;
                }
            }
        }
        if let Some(rec) = in_progress {
            for ev in &rec.events {
                s.apply_event(*ev)?;
            }
        }
        Ok(s)
    }
}
