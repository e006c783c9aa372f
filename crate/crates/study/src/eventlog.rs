//! Append-only JSON-lines log, one file per session. The first line
//! creates the session with its full trial sequence; every later line is
//! one recorded choice. Replaying the lines rebuilds the session exactly.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::session::{Session, Side};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Created { session: Session },
    Choice { n: usize, side: Side, response_ms: u64 },
}

pub fn session_log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

pub fn append(path: &Path, event: &Event) -> Result<()> {
    let mut line = serde_json::to_string(event).expect("events serialize");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).and_then(|_| f.sync_data()).map_err(|e| Error::io(path, e))
}

/// Starts a new log; refuses to overwrite an existing one.
pub fn create(path: &Path, session: &Session) -> Result<()> {
    File::create_new(path).map_err(|e| Error::io(path, e))?;
    append(path, &Event::Created { session: session.clone() })
}

pub fn replay_text(path: &Path, text: &str) -> Result<Session> {
    let bad = |line: usize, reason: String| Error::EventLog { path: path.to_path_buf(), line, reason };
    let mut session: Option<Session> = None;
    for (i, line) in text.lines().enumerate() {
        let event: Event = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
        match (event, session.as_mut()) {
            (Event::Created { session: s }, None) => session = Some(s),
            (Event::Created { .. }, Some(_)) => return Err(bad(i + 1, "second creation event".into())),
            (Event::Choice { .. }, None) => return Err(bad(i + 1, "choice before creation".into())),
            (Event::Choice { n, side, response_ms }, Some(s)) => {
                let out = s.submit(n, side, response_ms).map_err(|e| bad(i + 1, e.to_string()))?;
                if !out.recorded {
                    return Err(bad(i + 1, format!("trial {n} recorded twice")));
                }
            }
        }
    }
    session.ok_or_else(|| bad(0, "empty log".into()))
}

pub fn replay(path: &Path) -> Result<Session> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    replay_text(path, &text)
}

/// Every `*.jsonl` session log in `dir`, in file name order.
pub fn replay_dir(dir: &Path) -> Result<Vec<Session>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| replay(p)).collect()
}
