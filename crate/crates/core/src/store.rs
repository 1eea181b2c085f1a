//! Append-only transcript store.
//!
//! One JSON object per line: `{"crc":<crc32 of record bytes>,"record":{..}}`.
//! The checksum covers the exact bytes of the `record` value as written, so
//! a reader can localize corruption to a single line. Corrupt or torn lines
//! are skipped and reported, never silently dropped.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::questionnaire::Condition;
use crate::transcript::{RecordBody, SessionStatus, Transcript, TranscriptRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{session}`: expected sequence {expected}, got {got}")]
    SequenceConflict { session: String, expected: u64, got: u64 },
    #[error("line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A line that failed to decode, kept so callers can surface it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorruptLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<TranscriptRecord>,
    pub corrupt: Vec<CorruptLine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// fsync after every append; the server default.
    #[default]
    Sync,
    /// Flush to the OS only; fine for batch simulation runs.
    Flush,
}

#[derive(Debug, Clone, Default)]
pub struct ScanFilter {
    pub condition: Option<Condition>,
    pub question_id: Option<String>,
    pub status: Option<SessionStatus>,
}

#[derive(Serialize)]
struct LineOut<'a> {
    crc: u32,
    record: &'a RawValue,
}

#[derive(Deserialize)]
struct LineIn<'a> {
    crc: u32,
    #[serde(borrow)]
    record: &'a RawValue,
}

/// Encode one record as a store line (without the trailing newline).
pub fn encode_line(record: &TranscriptRecord) -> Result<String, serde_json::Error> {
    let raw = serde_json::value::to_raw_value(record)?;
    let crc = crc32fast::hash(raw.get().as_bytes());
    serde_json::to_string(&LineOut { crc, record: &raw })
}

/// Decode and checksum-verify one store line.
pub fn decode_line(line: &str) -> Result<TranscriptRecord, String> {
    let parsed: LineIn<'_> = serde_json::from_str(line).map_err(|e| format!("unparseable line: {e}"))?;
    let actual = crc32fast::hash(parsed.record.get().as_bytes());
    if actual != parsed.crc {
        return Err(format!("checksum mismatch (stored {:08x}, computed {actual:08x})", parsed.crc));
    }
    serde_json::from_str(parsed.record.get()).map_err(|e| format!("bad record: {e}"))
}

/// Decode a whole store body. A final line without a newline is a torn write
/// unless it decodes cleanly.
pub fn decode_all(text: &str) -> LoadReport {
    let mut report = LoadReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match decode_line(line) {
            Ok(rec) => report.records.push(rec),
            Err(reason) => {
                tracing::warn!(line = i + 1, %reason, "skipping corrupt store record");
                report.corrupt.push(CorruptLine { line: i + 1, reason });
            }
        }
    }
    report
}

enum Sink {
    File { file: File, path: PathBuf },
    Memory(Vec<String>),
}

struct Inner {
    sink: Sink,
    last_seq: HashMap<String, u64>,
}

/// Thread-safe append-only store. Appends from many sessions interleave
/// under one lock; each session's sequence numbers must be contiguous.
pub struct Store {
    inner: Mutex<Inner>,
    durability: Durability,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("durability", &self.durability).finish_non_exhaustive()
    }
}

impl Store {
    /// Open (or create) a file-backed store, recovering per-session sequence
    /// numbers from its contents.
    pub fn open(path: impl AsRef<Path>, durability: Durability) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut last_seq = HashMap::new();
        if path.exists() {
            let report = read_path(&path)?;
            for rec in &report.records {
                last_seq.insert(rec.session_id.clone(), rec.seq);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        terminate_torn_line(&mut file, &path)?;
        Ok(Self { inner: Mutex::new(Inner { sink: Sink::File { file, path }, last_seq }), durability })
    }

    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner { sink: Sink::Memory(Vec::new()), last_seq: HashMap::new() }),
            durability: Durability::Flush,
        }
    }

    pub fn path(&self) -> Option<PathBuf> {
        match &self.lock().sink {
            Sink::File { path, .. } => Some(path.clone()),
            Sink::Memory(_) => None,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<(), StoreError> {
        self.append_all(std::slice::from_ref(record))
    }

    /// Append records atomically with respect to other writers. Sequence
    /// numbers are checked for the whole batch before anything is written.
    pub fn append_all(&self, records: &[TranscriptRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut inner = self.lock();
        let mut pending: HashMap<&str, u64> = HashMap::new();
        let mut buf = String::new();
        for rec in records {
            let last = pending
                .get(rec.session_id.as_str())
                .copied()
                .or_else(|| inner.last_seq.get(&rec.session_id).copied())
                .unwrap_or(0);
            let opening = matches!(rec.body, RecordBody::SessionOpened(_));
            if rec.seq != last + 1 || opening != (rec.seq == 1) {
                return Err(StoreError::SequenceConflict {
                    session: rec.session_id.clone(),
                    expected: last + 1,
                    got: rec.seq,
                });
            }
            pending.insert(&rec.session_id, rec.seq);
            buf.push_str(&encode_line(rec)?);
            buf.push('\n');
        }
        let durability = self.durability;
        match &mut inner.sink {
            Sink::File { file, .. } => {
                file.write_all(buf.as_bytes())?;
                match durability {
                    Durability::Sync => file.sync_data()?,
                    Durability::Flush => file.flush()?,
                }
            }
            Sink::Memory(lines) => lines.extend(buf.lines().map(str::to_string)),
        }
        let updates: Vec<(String, u64)> = pending.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        inner.last_seq.extend(updates);
        Ok(())
    }

    /// Every decodable record in append order, plus corrupt-line reports.
    pub fn load_all(&self) -> Result<LoadReport, StoreError> {
        let inner = self.lock();
        match &inner.sink {
            Sink::File { path, .. } => read_path(path),
            Sink::Memory(lines) => Ok(decode_all(&lines.join("\n"))),
        }
    }

    pub fn load_session(&self, session_id: &str) -> Result<Vec<TranscriptRecord>, StoreError> {
        Ok(self.load_all()?.records.into_iter().filter(|r| r.session_id == session_id).collect())
    }

    pub fn scan(&self, filter: &ScanFilter) -> Result<Vec<TranscriptRecord>, StoreError> {
        Ok(scan_records(self.load_all()?.records, filter))
    }

    pub fn transcripts(&self) -> Result<Vec<Transcript>, StoreError> {
        Ok(Transcript::from_records(&self.load_all()?.records))
    }

    /// The exact bytes of one session's lines, as served by the transcript
    /// endpoint.
    pub fn session_jsonl(&self, session_id: &str) -> Result<String, StoreError> {
        let mut out = String::new();
        for rec in self.load_session(session_id)? {
            out.push_str(&encode_line(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Read and decode a store file without opening it for writing.
pub fn read_path(path: &Path) -> Result<LoadReport, StoreError> {
    let file = File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        let line = match line {
            Ok(l) => l,
            // Invalid UTF-8 localizes to the line; keep line numbering.
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => String::from("\u{0}"),
            Err(e) => return Err(e.into()),
        };
        text.push_str(&line);
        text.push('\n');
    }
    Ok(decode_all(&text))
}

/// If the file ends mid-line (a torn write), start the next append on a fresh
/// line so the damage stays confined to one line.
fn terminate_torn_line(file: &mut File, path: &Path) -> Result<(), StoreError> {
    let bytes = std::fs::read(path)?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Session-level filters for condition and final status; the question filter
/// keeps records about that question plus the session open/status records.
pub fn scan_records(records: Vec<TranscriptRecord>, filter: &ScanFilter) -> Vec<TranscriptRecord> {
    let mut keep: Option<BTreeSet<String>> = None;
    if filter.condition.is_some() || filter.status.is_some() {
        let transcripts = Transcript::from_records(&records);
        keep = Some(
            transcripts
                .into_iter()
                .filter(|t| filter.condition.is_none_or(|c| t.condition == c))
                .filter(|t| filter.status.is_none_or(|s| t.status == s))
                .map(|t| t.session_id)
                .collect(),
        );
    }
    records
        .into_iter()
        .filter(|r| keep.as_ref().is_none_or(|k| k.contains(&r.session_id)))
        .filter(|r| match (&filter.question_id, &r.body) {
            (None, _) => true,
            (Some(_), RecordBody::SessionOpened(_) | RecordBody::StatusChange(_)) => true,
            (Some(q), RecordBody::Turn(t)) => &t.question_id == q,
            (Some(q), RecordBody::CodingEvent(c)) => &c.question_id == q,
            (Some(q), RecordBody::ProbeEvent(p)) => &p.question_id == q,
        })
        .collect()
}
