//! One live session: the core state machine plus its files and stream.

use std::path::PathBuf;

use cogcubes_core::formats::{log_file_name, SessionManifest};
use cogcubes_core::tasks::{Guidance, ROTATION_RPM};
use cogcubes_core::{best_similarity, Action, CubeCoord, Outcome, Phase, Polycube, SessionState, TaskEvent, TaskKind, TaskRecord, TaskSpec};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::ServiceError;
use crate::store::SessionDir;

const STREAM_CAPACITY: usize = 1024;

/// Messages on the assessor stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Trace {
        task_index: usize,
        task_id: String,
        event_count: usize,
        t: f64,
        action: Action,
        cell: CubeCoord,
        similarity: f64,
    },
    End {
        phase: Phase,
    },
}

impl StreamMessage {
    pub fn name(&self) -> &'static str {
        match self {
            StreamMessage::Trace { .. } => "trace",
            StreamMessage::End { .. } => "end",
        }
    }
}

/// Body of `POST /sessions/{id}/events`. `t` or `client_t` from the client
/// is kept as `client_t`; the server stamps the real time.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRequest {
    pub action: Action,
    pub x: i32,
    pub y: i32,
    pub z: i32,
    #[serde(default)]
    pub cube_id: Option<u32>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub client_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventAck {
    pub event_count: usize,
    pub cue: &'static str,
    pub t: f64,
    pub cube_id: u32,
}

/// What the participant display needs. Carries no similarity value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskView {
    pub session_id: String,
    pub phase: Phase,
    pub task_index: usize,
    pub task_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<ActiveTaskView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveTaskView {
    pub task_id: String,
    pub kind: TaskKind,
    pub prototype_id: String,
    pub prototype: Polycube,
    pub structure: Polycube,
    pub event_count: usize,
    pub rotation_rpm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<Guidance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionView {
    pub phase: Phase,
    pub sealed_task_id: String,
    pub outcome: Outcome,
    pub task_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultsView {
    pub manifest: SessionManifest,
    pub phase: Phase,
    pub records: Vec<TaskRecord>,
}

pub struct LiveSession {
    state: SessionState,
    manifest: SessionManifest,
    files: SessionDir,
    backlog: Vec<StreamMessage>,
    tx: broadcast::Sender<StreamMessage>,
}

impl LiveSession {
    pub fn create(
        dir: PathBuf,
        session_id: String,
        participant_code: String,
        group: Option<String>,
        tasks: Vec<TaskSpec>,
        now_ms: u64,
    ) -> Result<Self, ServiceError> {
        let state = SessionState::new(session_id.clone(), participant_code.clone(), tasks.clone())?;
        let manifest = SessionManifest {
            session_id,
            participant_code,
            group,
            created_at: now_ms,
            tasks,
            logs: Vec::new(),
            task_started_at: Vec::new(),
            aborted: false,
        };
        let files = SessionDir::new(dir);
        files.create()?;
        let mut s = LiveSession { state, manifest, files, backlog: Vec::new(), tx: broadcast::channel(STREAM_CAPACITY).0 };
        s.open_active_log(now_ms)?;
        Ok(s)
    }

    /// Reloads a session directory after a restart.
    pub fn restore(dir: PathBuf, now_ms: u64) -> Result<Self, ServiceError> {
        let files = SessionDir::new(dir);
        let manifest = files.read_manifest()?;
        let mut records = manifest.logs.iter().map(|name| files.read_log(name)).collect::<Result<Vec<_>, _>>()?;
        let in_progress = match records.last() {
            Some(r) if r.outcome.is_none() => records.pop(),
            _ => None,
        };
        let state = SessionState::restore(
            manifest.session_id.clone(),
            manifest.participant_code.clone(),
            manifest.tasks.clone(),
            records,
            in_progress,
        )?;
        let mut s = LiveSession { state, manifest, files, backlog: Vec::new(), tx: broadcast::channel(STREAM_CAPACITY).0 };
        s.rebuild_backlog();
        if s.is_active() && s.state.current_index() >= s.manifest.logs.len() {
            // crashed between sealing a task and opening the next one
            s.open_active_log(now_ms)?;
        }
        if s.manifest.aborted != (s.state.phase() == Phase::Aborted) {
            s.manifest.aborted = s.state.phase() == Phase::Aborted;
            s.files.write_manifest(&s.manifest)?;
        }
        Ok(s)
    }

    pub fn session_id(&self) -> &str {
        &self.manifest.session_id
    }

    pub fn manifest(&self) -> &SessionManifest {
        &self.manifest
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    fn is_active(&self) -> bool {
        matches!(self.state.phase(), Phase::Presenting | Phase::Building)
    }

    fn open_active_log(&mut self, now_ms: u64) -> Result<(), ServiceError> {
        let index = self.state.current_index();
        let spec = &self.state.tasks()[index];
        let record = self.state.active_record().expect("task is active");
        let name = log_file_name(index, &spec.task_id);
        self.files.write_log(&name, record)?;
        self.manifest.logs.push(name);
        self.manifest.task_started_at.push(now_ms);
        self.files.write_manifest(&self.manifest)?;
        Ok(())
    }

    fn rebuild_backlog(&mut self) {
        let mut backlog = Vec::new();
        let records = self.state.sealed_records().iter().chain(self.state.active_record());
        for (index, record) in records.enumerate() {
            let prototype = &self.state.tasks()[index].prototype;
            let mut cells = record.initial.clone();
            for (k, ev) in record.events.iter().enumerate() {
                match ev.action {
                    Action::Connect => cells.insert(ev.cell),
                    Action::Disconnect => cells.remove(ev.cell),
                };
                backlog.push(trace_message(index, &record.task_id, k + 1, ev, &cells, prototype));
            }
        }
        if !self.is_active() {
            backlog.push(StreamMessage::End { phase: self.state.phase() });
        }
        self.backlog = backlog;
    }

    fn publish(&mut self, msg: StreamMessage) {
        self.backlog.push(msg.clone());
        // no receivers is fine
        let _ = self.tx.send(msg);
    }

    /// Validates, persists, then applies one participant action.
    pub fn post_event(&mut self, req: &EventRequest, now_ms: u64) -> Result<EventAck, ServiceError> {
        let cell = CubeCoord::new(req.x, req.y, req.z);
        let index = self.state.current_index();
        let started = self.manifest.task_started_at.get(index).copied().unwrap_or(now_ms);
        let mut t_ms = now_ms.saturating_sub(started).max(1);
        let record = self.state.active_record();
        if let Some(prev) = record.and_then(|r| r.events.last()) {
            t_ms = t_ms.max((prev.t * 1000.0).round() as u64 + 1);
        }
        let t = t_ms as f64 / 1000.0;
        self.state.check_event(t, req.action, cell)?;
        let (ids, next_id) = self.state.active_record().expect("checked above").cube_ids();
        let cube_id = match req.action {
            Action::Connect => req.cube_id.unwrap_or(next_id),
            Action::Disconnect => req.cube_id.or(ids.get(&cell).copied()).unwrap_or(u32::MAX),
        };
        let event = TaskEvent { t, action: req.action, cell, cube_id, client_t: req.client_t.or(req.t) };
        self.files.append_event(&self.manifest.logs[index], &event)?;
        let accepted = self.state.apply_event(event)?;
        let spec = &self.state.tasks()[index];
        let msg = trace_message(index, &spec.task_id, accepted.event_count, &event, self.state.structure().expect("active"), &spec.prototype);
        self.publish(msg);
        let cue = match req.action {
            Action::Connect => "connect-chime",
            Action::Disconnect => "disconnect-chime",
        };
        Ok(EventAck { event_count: accepted.event_count, cue, t, cube_id })
    }

    /// Seals the current task as completed and presents the next one.
    pub fn advance(&mut self, now_ms: u64) -> Result<TransitionView, ServiceError> {
        let index = self.state.current_index();
        let record = self.state.advance()?;
        self.files.write_log(&self.manifest.logs[index], &record)?;
        if self.is_active() {
            self.open_active_log(now_ms)?;
        } else {
            self.files.write_manifest(&self.manifest)?;
            self.publish(StreamMessage::End { phase: self.state.phase() });
        }
        Ok(self.transition(record))
    }

    /// Assessor stop: seals the current task and ends the session.
    pub fn abort(&mut self) -> Result<TransitionView, ServiceError> {
        let index = self.state.current_index();
        let record = self.state.abort_task()?;
        self.files.write_log(&self.manifest.logs[index], &record)?;
        self.manifest.aborted = true;
        self.files.write_manifest(&self.manifest)?;
        self.publish(StreamMessage::End { phase: self.state.phase() });
        Ok(self.transition(record))
    }

    fn transition(&self, record: TaskRecord) -> TransitionView {
        TransitionView {
            phase: self.state.phase(),
            sealed_task_id: record.task_id,
            outcome: record.outcome.expect("sealed"),
            task_index: self.state.current_index(),
        }
    }

    pub fn task_view(&self) -> TaskView {
        let task = self.state.current_task().map(|spec| ActiveTaskView {
            task_id: spec.task_id.clone(),
            kind: spec.kind,
            prototype_id: spec.prototype_id.clone(),
            prototype: spec.prototype.clone(),
            structure: self.state.structure().cloned().unwrap_or_default(),
            event_count: self.state.active_record().map_or(0, |r| r.events.len()),
            rotation_rpm: ROTATION_RPM,
            guidance: if spec.guided { self.state.guidance() } else { None },
        });
        TaskView {
            session_id: self.manifest.session_id.clone(),
            phase: self.state.phase(),
            task_index: self.state.current_index(),
            task_count: self.state.tasks().len(),
            task,
        }
    }

    pub fn results(&self) -> ResultsView {
        let records = self.state.sealed_records().iter().chain(self.state.active_record()).cloned().collect();
        ResultsView { manifest: self.manifest.clone(), phase: self.state.phase(), records }
    }

    /// Everything published so far plus a receiver for what follows, taken
    /// together so nothing is missed or repeated.
    pub fn subscribe(&self) -> (Vec<StreamMessage>, broadcast::Receiver<StreamMessage>) {
        (self.backlog.clone(), self.tx.subscribe())
    }
}

fn trace_message(index: usize, task_id: &str, event_count: usize, ev: &TaskEvent, cells: &Polycube, prototype: &Polycube) -> StreamMessage {
    let similarity = best_similarity(cells, prototype).map(|s| s.value()).unwrap_or(f64::NAN);
    StreamMessage::Trace {
        task_index: index,
        task_id: task_id.to_owned(),
        event_count,
        t: ev.t,
        action: ev.action,
        cell: ev.cell,
        similarity,
    }
}
