//! Session directories on disk: `manifest.json` plus one JSON Lines log per
//! started task.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cogcubes_core::formats::{self, FormatError, SessionManifest};
use cogcubes_core::{TaskEvent, TaskRecord};

#[derive(Debug, Clone)]
pub struct SessionDir {
    dir: PathBuf,
}

impl SessionDir {
    pub fn new(dir: PathBuf) -> Self {
        SessionDir { dir }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn create(&self) -> Result<(), FormatError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))
    }

    pub fn write_manifest(&self, manifest: &SessionManifest) -> Result<(), FormatError> {
        formats::write_manifest(&self.dir, manifest)
    }

    pub fn read_manifest(&self) -> Result<SessionManifest, FormatError> {
        formats::read_manifest(&self.dir)
    }

    /// Replaces a whole log (new task, or sealing with an outcome).
    pub fn write_log(&self, name: &str, record: &TaskRecord) -> Result<(), FormatError> {
        formats::write_atomic(&self.dir.join(name), formats::write_log(record).as_bytes())
    }

    /// Appends one event line and flushes it to stable storage.
    pub fn append_event(&self, name: &str, event: &TaskEvent) -> Result<(), FormatError> {
        let path = self.dir.join(name);
        let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(formats::event_line(event).as_bytes()).map_err(|e| io_err(&path, e))?;
        f.sync_data().map_err(|e| io_err(&path, e))
    }

    /// Loads a log written by this store. A torn last line from a crash
    /// mid-append was never acknowledged, so it is dropped and the file
    /// rewritten without it.
    pub fn read_log(&self, name: &str) -> Result<TaskRecord, FormatError> {
        let path = self.dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        if text.ends_with('\n') || text.is_empty() {
            return formats::parse_log(&text);
        }
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        let record = formats::parse_log(&text[..keep])?;
        self.write_log(name, &record)?;
        Ok(record)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.to_path_buf(), source }
}
