//! On-disk formats: prototype shape files, JSON Lines event logs, task
//! libraries and session directories.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CubeCoord, Polycube};
use crate::measures::{Outcome, TaskEvent, TaskRecord};
use crate::tasks::{validate_task, TaskKind, TaskSpec, TaskViolation};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("event log is empty")]
    MissingHeader,
    #[error("task {task_id}: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidTask { task_id: String, violations: Vec<TaskViolation> },
    #[error("task library lists no tasks")]
    EmptyLibrary,
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

/// A prototype shape file: optional `prototype <id> <task-hint>` header,
/// `#` comments, one `x y z` cell per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrototypeFile {
    pub id: Option<String>,
    pub task_hint: Option<String>,
    pub cells: Polycube,
}

pub fn parse_prototype(text: &str) -> Result<PrototypeFile, FormatError> {
    let mut out = PrototypeFile { id: None, task_hint: None, cells: Polycube::new() };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        if line.starts_with("prototype") {
            words.next();
            out.id = words.next().map(str::to_owned);
            out.task_hint = words.next().map(str::to_owned);
            continue;
        }
        let nums: Vec<i32> = words
            .map(|w| w.parse::<i32>())
            .collect::<Result<_, _>>()
            .map_err(|e| FormatError::Parse { line: lineno, message: format!("bad coordinate: {e}") })?;
        let [x, y, z] = nums[..] else {
            return Err(FormatError::Parse { line: lineno, message: format!("expected 3 integers, found {}", nums.len()) });
        };
        if !out.cells.insert(CubeCoord::new(x, y, z)) {
            return Err(FormatError::Parse { line: lineno, message: format!("duplicate cell {x} {y} {z}") });
        }
    }
    Ok(out)
}

pub fn write_prototype(file: &PrototypeFile) -> String {
    let mut s = String::new();
    if let Some(id) = &file.id {
        s.push_str("prototype ");
        s.push_str(id);
        if let Some(hint) = &file.task_hint {
            s.push(' ');
            s.push_str(hint);
        }
        s.push('\n');
    }
    for c in file.cells.iter() {
        s.push_str(&format!("{} {} {}\n", c.x, c.y, c.z));
    }
    s
}

pub fn load_prototype(path: &Path) -> Result<PrototypeFile, FormatError> {
    parse_prototype(&read(path)?)
}

/// First line of an event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub task_id: String,
    pub prototype_id: String,
    pub participant_code: String,
    pub initial: Polycube,
    /// `null` while the task is running.
    pub outcome: Option<Outcome>,
}

impl LogHeader {
    pub fn of(record: &TaskRecord) -> Self {
        LogHeader {
            task_id: record.task_id.clone(),
            prototype_id: record.prototype_id.clone(),
            participant_code: record.participant_code.clone(),
            initial: record.initial.clone(),
            outcome: record.outcome,
        }
    }
}

pub fn header_line(record: &TaskRecord) -> String {
    let mut s = serde_json::to_string(&LogHeader::of(record)).expect("header serializes");
    s.push('\n');
    s
}

pub fn event_line(event: &TaskEvent) -> String {
    let mut s = serde_json::to_string(event).expect("event serializes");
    s.push('\n');
    s
}

pub fn write_log(record: &TaskRecord) -> String {
    let mut s = header_line(record);
    for ev in &record.events {
        s.push_str(&event_line(ev));
    }
    s
}

/// Parses a log. Event lines may carry extra fields (such as the network
/// `face`); they are ignored.
pub fn parse_log(text: &str) -> Result<TaskRecord, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(FormatError::MissingHeader)?;
    let header: LogHeader = serde_json::from_str(first).map_err(|source| FormatError::Json { line: 1, source })?;
    let events = lines
        .map(|(i, l)| serde_json::from_str::<TaskEvent>(l).map_err(|source| FormatError::Json { line: i + 1, source }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TaskRecord {
        task_id: header.task_id,
        prototype_id: header.prototype_id,
        participant_code: header.participant_code,
        initial: header.initial,
        events,
        outcome: header.outcome,
    })
}

pub fn load_log(path: &Path) -> Result<TaskRecord, FormatError> {
    parse_log(&read(path)?)
}

pub fn save_log(path: &Path, record: &TaskRecord) -> Result<(), FormatError> {
    fs::write(path, write_log(record)).map_err(|e| FormatError::io(path, e))
}

/// One entry of a task library file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub task_id: String,
    pub kind: TaskKind,
    /// Prototype file, relative to the library file.
    pub prototype: PathBuf,
    /// Starting construct file; defaults to the base cube, or the bundled
    /// 7-cube construct for reshape tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guided: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tasks: Vec<LibraryEntry>,
}

/// Loads and validates a task library, resolving prototype paths against the
/// library's directory.
pub fn load_library(path: &Path) -> Result<Vec<TaskSpec>, FormatError> {
    let file: LibraryFile = serde_json::from_str(&read(path)?).map_err(|source| FormatError::Json { line: 1, source })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    resolve_library(&file, dir)
}

pub fn resolve_library(file: &LibraryFile, dir: &Path) -> Result<Vec<TaskSpec>, FormatError> {
    if file.tasks.is_empty() {
        return Err(FormatError::EmptyLibrary);
    }
    file.tasks
        .iter()
        .map(|entry| {
            let proto = load_prototype(&dir.join(&entry.prototype))?;
            let prototype_id = proto.id.clone().unwrap_or_else(|| {
                entry.prototype.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            let mut spec = TaskSpec::new(entry.task_id.clone(), entry.kind, prototype_id, proto.cells);
            if let Some(init) = &entry.initial {
                spec.initial = load_prototype(&dir.join(init))?.cells;
            }
            if let Some(g) = entry.guided {
                spec.guided = g;
            }
            validate_task(&spec).map_err(|violations| FormatError::InvalidTask { task_id: spec.task_id.clone(), violations })?;
            Ok(spec)
        })
        .collect()
}

/// `manifest.json` of a session directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub participant_code: String,
    /// Free-form grouping label, e.g. an age band or simulated agent kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub tasks: Vec<TaskSpec>,
    /// Log file name per started task, in task order.
    pub logs: Vec<String>,
    /// Onset (ms since epoch) of each started task.
    #[serde(default)]
    pub task_started_at: Vec<u64>,
    #[serde(default)]
    pub aborted: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn log_file_name(index: usize, task_id: &str) -> String {
    let safe: String = task_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{index:02}-{safe}.jsonl")
}

/// Writes `contents` to `path` through a temporary file and a rename, so
/// readers never see a half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    use std::io::Write;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| FormatError::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| FormatError::io(&tmp, e))?;
    f.sync_all().map_err(|e| FormatError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

pub fn write_manifest(dir: &Path, manifest: &SessionManifest) -> Result<(), FormatError> {
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

pub fn read_manifest(dir: &Path) -> Result<SessionManifest, FormatError> {
    let path = dir.join(MANIFEST_FILE);
    serde_json::from_str(&read(&path)?).map_err(|source| FormatError::Json { line: 1, source })
}

/// A session directory: manifest plus one log per started task.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionExport {
    pub manifest: SessionManifest,
    pub records: Vec<TaskRecord>,
}

impl SessionExport {
    /// Pairs each record with the task it was recorded for.
    pub fn tasks_and_records(&self) -> impl Iterator<Item = (&TaskSpec, &TaskRecord)> {
        self.records.iter().filter_map(|r| self.manifest.tasks.iter().find(|t| t.task_id == r.task_id).map(|t| (t, r)))
    }
}

pub fn write_session_dir(dir: &Path, export: &SessionExport) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    for (name, record) in export.manifest.logs.iter().zip(&export.records) {
        save_log(&dir.join(name), record)?;
    }
    write_manifest(dir, &export.manifest)
}

pub fn read_session_dir(dir: &Path) -> Result<SessionExport, FormatError> {
    let manifest = read_manifest(dir)?;
    let records = manifest.logs.iter().map(|name| load_log(&dir.join(name))).collect::<Result<_, _>>()?;
    Ok(SessionExport { manifest, records })
}
