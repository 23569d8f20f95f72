//! Session files: a header line followed by one JSON record per loop.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::StoreError;
use crate::session::{LoopRecord, Session, SessionHeader};

pub fn write_session(path: &Path, session: &Session) -> Result<(), StoreError> {
    let f = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| StoreError::io(path, e);
    serde_json::to_writer(&mut w, &session.header).map_err(|e| StoreError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for l in &session.loops {
        serde_json::to_writer(&mut w, l).map_err(|e| StoreError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_session(path: &Path) -> Result<Session, StoreError> {
    let f = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut header: Option<SessionHeader> = None;
    let mut loops = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| StoreError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        };
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(bad)?);
        } else {
            loops.push(serde_json::from_str::<LoopRecord>(&line).map_err(bad)?);
        }
    }
    let header = header.ok_or_else(|| StoreError::BadRecord {
        path: path.to_path_buf(),
        line: 0,
        message: "empty session file".into(),
    })?;
    Ok(Session { header, loops })
}

/// Every `*.jsonl` file in `dir`, sorted by file name.
pub fn read_sessions_dir(dir: &Path) -> Result<Vec<(PathBuf, Session)>, StoreError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| StoreError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_session(&p).map(|s| (p, s)))
        .collect()
}
