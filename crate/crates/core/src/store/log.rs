//! Event log backends: in-memory and newline-delimited JSON on disk.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::event::Event;
use super::state::State;
use super::StoreError;

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;
const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

/// Durable, append-only storage for events.
pub trait EventLog: Send + Sync {
    /// Persists one event. Returns only once the event is durable.
    fn append(&mut self, event: &Event) -> Result<(), StoreError>;

    fn read_all(&self) -> Result<Vec<Event>, StoreError>;

    /// Called after each applied event; backends may cache state here.
    fn after_apply(&mut self, _state: &State) -> Result<(), StoreError> {
        Ok(())
    }
}

/// Folds a complete log into state, rejecting gaps.
pub fn replay(events: &[Event]) -> Result<State, StoreError> {
    replay_from(State::default(), events)
}

pub fn replay_from(mut state: State, events: &[Event]) -> Result<State, StoreError> {
    for event in events {
        state.apply(event)?;
    }
    Ok(state)
}

#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    events: Vec<Event>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

impl EventLog for MemoryLog {
    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        self.events.push(event.clone());
        Ok(())
    }

    fn read_all(&self) -> Result<Vec<Event>, StoreError> {
        Ok(self.events.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    last_sequence: u64,
    /// SHA-256 over the log bytes the snapshot was folded from.
    log_sha256: String,
    state: State,
}

/// `events.jsonl` plus an optional `snapshot.json` cache in one directory.
pub struct FileLog {
    dir: PathBuf,
    file: File,
    hasher: Sha256,
    snapshot_every: u64,
}

impl std::fmt::Debug for FileLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileLog").field("dir", &self.dir).finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl FileLog {
    /// Opens (or creates) the log in `dir` and rebuilds state from it.
    ///
    /// An incomplete final line, left by a crash mid-write, is truncated.
    /// A snapshot is used only when it matches the log it claims to cover.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, State), StoreError> {
        Self::open_with(dir, DEFAULT_SNAPSHOT_EVERY)
    }

    pub fn open_with(dir: impl AsRef<Path>, snapshot_every: u64) -> Result<(Self, State), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(EVENTS_FILE);
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(io_err(&path))?;
        }
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            f.set_len(complete as u64).map_err(io_err(&path))?;
            f.sync_all().map_err(io_err(&path))?;
            bytes.truncate(complete);
        }

        let snapshot = load_snapshot(&dir.join(SNAPSHOT_FILE));
        let mut hasher = Sha256::new();
        let mut events = Vec::new();
        let mut base: Option<State> = None;
        let mut offset = 0;
        for (i, line) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
            hasher.update(line);
            offset += line.len();
            let text = std::str::from_utf8(line).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            let event: Event = serde_json::from_str(text.trim_end()).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(snap) = &snapshot {
                if snap.last_sequence == (i + 1) as u64
                    && event.sequence == snap.last_sequence
                    && hex::encode(hasher.clone().finalize()) == snap.log_sha256
                {
                    base = Some(snap.state.clone());
                    events.clear();
                    continue;
                }
            }
            events.push(event);
        }
        debug_assert_eq!(offset, bytes.len());
        let state = match base {
            Some(s) => replay_from(s, &events)?,
            None => replay(&events)?,
        };

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok((
            Self {
                dir,
                file,
                hasher,
                snapshot_every: snapshot_every.max(1),
            },
            state,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS_FILE)
    }

    fn write_snapshot(&self, state: &State) -> Result<(), StoreError> {
        let snapshot = Snapshot {
            last_sequence: state.last_sequence,
            log_sha256: hex::encode(self.hasher.clone().finalize()),
            state: state.clone(),
        };
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join("snapshot.json.tmp");
        let body = serde_json::to_vec(&snapshot).expect("snapshot serializes");
        File::create(&tmp)
            .and_then(|mut f| {
                f.write_all(&body)?;
                f.sync_all()
            })
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

fn load_snapshot(path: &Path) -> Option<Snapshot> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

impl EventLog for FileLog {
    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        let path = self.events_path();
        self.file.write_all(&line).map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))?;
        self.hasher.update(&line);
        Ok(())
    }

    fn read_all(&self) -> Result<Vec<Event>, StoreError> {
        let path = self.events_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    fn after_apply(&mut self, state: &State) -> Result<(), StoreError> {
        if state.last_sequence.is_multiple_of(self.snapshot_every) {
            self.write_snapshot(state)?;
        }
        Ok(())
    }
}
