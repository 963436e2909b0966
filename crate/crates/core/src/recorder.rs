//! Buffered delimiter-separated logging with a background writer.
//!
//! Rows accumulate in memory; each time the buffer reaches capacity the whole
//! buffer is handed to a writer thread, which appends it and syncs the file.
//! A crash therefore loses at most the rows of the current buffer.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 200;
pub const DEFAULT_DELIMITER: u8 = b',';
/// Overflow buffer size, in multiples of capacity, kept after a writer failure.
pub const OVERFLOW_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecorderError {
    #[error("invalid recorder setup: {0}")]
    Invalid(String),
    #[error("row has {got} cells, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("{path}: {reason}")]
    Open { path: String, reason: String },
    #[error("write failed ({rows_at_risk} rows at risk): {reason}")]
    Io { reason: String, rows_at_risk: u64 },
    #[error("recorder is closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // shortest round-trip form
            Cell::Num(v) => write!(f, "{v:?}"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecorderOptions {
    pub delimiter: u8,
    pub capacity: usize,
    pub overwrite: bool,
}

impl Default for RecorderOptions {
    fn default() -> Self {
        RecorderOptions {
            delimiter: DEFAULT_DELIMITER,
            capacity: DEFAULT_CAPACITY,
            overwrite: false,
        }
    }
}

impl RecorderOptions {
    pub fn validate(&self) -> Result<(), RecorderError> {
        if self.capacity == 0 {
            return Err(RecorderError::Invalid("capacity must be at least 1".into()));
        }
        if !self.delimiter.is_ascii() || matches!(self.delimiter, b'"' | b'\n' | b'\r') {
            return Err(RecorderError::Invalid(format!(
                "unusable delimiter {:?}",
                char::from(self.delimiter)
            )));
        }
        Ok(())
    }
}

/// Outcome of a `log` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogOutcome {
    Buffered,
    /// The buffer filled and was handed to the writer.
    HandedOff,
    /// The writer has failed; the row is held in the overflow buffer and
    /// `dropped` old rows have been discarded so far.
    Degraded {
        dropped: u64,
    },
}

enum Target {
    File(File),
    Other(Box<dyn Write + Send>),
}

impl Write for Target {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Target::File(f) => f.write(buf),
            Target::Other(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Target::File(f) => f.flush(),
            Target::Other(w) => w.flush(),
        }
    }
}

fn sync(file: Option<&File>) -> io::Result<()> {
    file.map_or(Ok(()), File::sync_data)
}

enum Msg {
    Batch(Vec<Vec<Cell>>),
    Flush(Sender<Result<(), String>>),
}

#[derive(Debug, Default)]
struct Status {
    rows_written: AtomicU64,
    batches: AtomicU64,
    rows_lost: AtomicU64,
    failed: AtomicBool,
    reason: Mutex<Option<String>>,
}

impl Status {
    fn fail(&self, reason: String) {
        let mut r = self.reason.lock().unwrap_or_else(|p| p.into_inner());
        r.get_or_insert(reason);
        self.failed.store(true, Ordering::Release);
    }

    fn reason(&self) -> String {
        self.reason
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
            .unwrap_or_default()
    }
}

/// Progress counters readable from any thread.
#[derive(Debug, Clone)]
pub struct RecorderStatus(Arc<Status>);

impl RecorderStatus {
    pub fn rows_written(&self) -> u64 {
        self.0.rows_written.load(Ordering::Acquire)
    }

    pub fn batches_written(&self) -> u64 {
        self.0.batches.load(Ordering::Acquire)
    }

    pub fn failed(&self) -> Option<String> {
        self.0.failed.load(Ordering::Acquire).then(|| self.0.reason())
    }
}

fn writer_loop(mut w: csv::Writer<Target>, file: Option<File>, rx: Receiver<Msg>, status: Arc<Status>) {
    let write_batch = |w: &mut csv::Writer<Target>, rows: &[Vec<Cell>]| -> io::Result<()> {
        for row in rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        sync(file.as_ref())
    };
    for msg in rx {
        match msg {
            Msg::Batch(rows) => {
                if status.failed.load(Ordering::Acquire) {
                    status.rows_lost.fetch_add(rows.len() as u64, Ordering::AcqRel);
                    continue;
                }
                match write_batch(&mut w, &rows) {
                    Ok(()) => {
                        status.rows_written.fetch_add(rows.len() as u64, Ordering::AcqRel);
                        status.batches.fetch_add(1, Ordering::AcqRel);
                    }
                    Err(e) => {
                        status.rows_lost.fetch_add(rows.len() as u64, Ordering::AcqRel);
                        status.fail(e.to_string());
                    }
                }
            }
            Msg::Flush(ack) => {
                let r = if status.failed.load(Ordering::Acquire) {
                    Err(status.reason())
                } else {
                    Ok(())
                };
                let _ = ack.send(r);
            }
        }
    }
}

/// Buffered row logger. `log`, `flush` and `close` belong to one producing
/// thread; the writer thread owns the file after the header.
pub struct Recorder {
    path: Option<PathBuf>,
    fields: Vec<String>,
    options: RecorderOptions,
    buffer: Vec<Vec<Cell>>,
    overflow: VecDeque<Vec<Cell>>,
    overflow_dropped: u64,
    tx: Option<Sender<Msg>>,
    writer: Option<JoinHandle<()>>,
    status: Arc<Status>,
    logged: u64,
}

impl fmt::Debug for Recorder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Recorder")
            .field("path", &self.path)
            .field("fields", &self.fields)
            .field("options", &self.options)
            .field("logged", &self.logged)
            .finish()
    }
}

impl Recorder {
    /// Creates the file and writes the header durably.
    pub fn open<S: AsRef<str>>(path: &Path, fields: &[S], options: RecorderOptions) -> Result<Self, RecorderError> {
        options.validate()?;
        let fields = check_fields(fields)?;
        let open_err = |e: io::Error| RecorderError::Open {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut oo = OpenOptions::new();
        oo.write(true);
        if options.overwrite {
            oo.create(true).truncate(true);
        } else {
            oo.create_new(true);
        }
        let file = oo.open(path).map_err(open_err)?;
        let mut r = Self::start(Target::File(file), fields, options).map_err(open_err)?;
        r.path = Some(path.to_path_buf());
        Ok(r)
    }

    /// Like [`Recorder::open`] over an arbitrary sink.
    pub fn with_sink<S: AsRef<str>>(
        sink: Box<dyn Write + Send>,
        fields: &[S],
        options: RecorderOptions,
    ) -> Result<Self, RecorderError> {
        options.validate()?;
        let fields = check_fields(fields)?;
        Self::start(Target::Other(sink), fields, options).map_err(|e| RecorderError::Io {
            reason: e.to_string(),
            rows_at_risk: 0,
        })
    }

    fn start(target: Target, fields: Vec<String>, options: RecorderOptions) -> io::Result<Self> {
        let file = match &target {
            Target::File(f) => Some(f.try_clone()?),
            Target::Other(_) => None,
        };
        let mut w = csv::WriterBuilder::new()
            .delimiter(options.delimiter)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(target);
        w.write_record(&fields)?;
        w.flush()?;
        sync(file.as_ref())?;
        let status = Arc::new(Status::default());
        let (tx, rx) = channel();
        let st = status.clone();
        let writer = std::thread::Builder::new()
            .name("recorder-writer".into())
            .spawn(move || writer_loop(w, file, rx, st))?;
        Ok(Recorder {
            path: None,
            buffer: Vec::with_capacity(options.capacity),
            fields,
            options,
            overflow: VecDeque::new(),
            overflow_dropped: 0,
            tx: Some(tx),
            writer: Some(writer),
            status,
            logged: 0,
        })
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn options(&self) -> &RecorderOptions {
        &self.options
    }

    /// Rows accepted by `log` so far.
    pub fn logged(&self) -> u64 {
        self.logged
    }

    pub fn status(&self) -> RecorderStatus {
        RecorderStatus(self.status.clone())
    }

    pub fn is_degraded(&self) -> bool {
        self.status.failed.load(Ordering::Acquire)
    }

    /// Appends a row to the buffer, handing the buffer off when full.
    pub fn log<I, C>(&mut self, row: I) -> Result<LogOutcome, RecorderError>
    where
        I: IntoIterator<Item = C>,
        C: Into<Cell>,
    {
        let Some(tx) = &self.tx else {
            return Err(RecorderError::Closed);
        };
        let row: Vec<Cell> = row.into_iter().map(Into::into).collect();
        if row.len() != self.fields.len() {
            return Err(RecorderError::Arity {
                expected: self.fields.len(),
                got: row.len(),
            });
        }
        self.logged += 1;
        if self.is_degraded() {
            self.overflow.extend(self.buffer.drain(..));
            self.overflow.push_back(row);
            let limit = OVERFLOW_FACTOR * self.options.capacity;
            while self.overflow.len() > limit {
                self.overflow.pop_front();
                self.overflow_dropped += 1;
                if self.overflow_dropped.is_power_of_two() {
                    log::warn!(
                        "recorder writer failed ({}); {} rows dropped",
                        self.status.reason(),
                        self.overflow_dropped
                    );
                }
            }
            return Ok(LogOutcome::Degraded {
                dropped: self.overflow_dropped,
            });
        }
        self.buffer.push(row);
        if self.buffer.len() >= self.options.capacity {
            let batch = std::mem::replace(&mut self.buffer, Vec::with_capacity(self.options.capacity));
            if tx.send(Msg::Batch(batch)).is_err() {
                self.status.fail("writer thread exited".into());
            }
            return Ok(LogOutcome::HandedOff);
        }
        Ok(LogOutcome::Buffered)
    }

    /// Hands off buffered rows and waits until the writer has synced them.
    pub fn flush(&mut self) -> Result<(), RecorderError> {
        let Some(tx) = &self.tx else {
            return Err(RecorderError::Closed);
        };
        let at_risk =
            || self.status.rows_lost.load(Ordering::Acquire) + self.buffer.len() as u64 + self.overflow.len() as u64;
        if self.is_degraded() {
            return Err(RecorderError::Io {
                reason: self.status.reason(),
                rows_at_risk: at_risk(),
            });
        }
        if !self.buffer.is_empty() {
            let batch = std::mem::replace(&mut self.buffer, Vec::with_capacity(self.options.capacity));
            let _ = tx.send(Msg::Batch(batch));
        }
        let (ack_tx, ack_rx) = channel();
        let acked = tx.send(Msg::Flush(ack_tx)).is_ok() && ack_rx.recv().is_ok_and(|r| r.is_ok());
        if acked {
            Ok(())
        } else {
            self.status.fail(if self.status.reason().is_empty() {
                "writer thread exited".into()
            } else {
                self.status.reason()
            });
            Err(RecorderError::Io {
                reason: self.status.reason(),
                rows_at_risk: self.status.rows_lost.load(Ordering::Acquire) + self.overflow.len() as u64,
            })
        }
    }

    /// Final flush, then stops the writer. Idempotent.
    pub fn close(&mut self) -> Result<(), RecorderError> {
        if self.tx.is_none() {
            return Ok(());
        }
        let result = self.flush();
        self.tx = None;
        if let Some(h) = self.writer.take() {
            let _ = h.join();
        }
        result
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        if let Err(e) = self.close() {
            log::error!("recorder close failed: {e}");
        }
    }
}

fn check_fields<S: AsRef<str>>(fields: &[S]) -> Result<Vec<String>, RecorderError> {
    if fields.is_empty() {
        return Err(RecorderError::Invalid("no field names".into()));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(fields.len());
    for f in fields {
        let f = f.as_ref();
        if !seen.insert(f) {
            return Err(RecorderError::Invalid(format!("duplicate field name {f:?}")));
        }
        out.push(f.to_string());
    }
    Ok(out)
}

/// Header and row count of a recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordingSummary {
    pub fields: Vec<String>,
    pub rows: u64,
}

impl fmt::Display for RecordingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fields ({}): {}", self.fields.len(), self.fields.join(", "))?;
        write!(f, "rows: {}", self.rows)
    }
}

/// Reads a recording back, checking that every row has the header's arity.
pub fn read_recording(path: &Path, delimiter: u8) -> Result<(Vec<String>, Vec<Vec<String>>), RecorderError> {
    let err = |reason: String| RecorderError::Open {
        path: path.display().to_string(),
        reason,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut r = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(BufReader::new(file));
    let fields: Vec<String> = r
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((fields, rows))
}

pub fn inspect(path: &Path, delimiter: u8) -> Result<RecordingSummary, RecorderError> {
    let (fields, rows) = read_recording(path, delimiter)?;
    Ok(RecordingSummary {
        fields,
        rows: rows.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use std::time::{Duration, Instant};

    use proptest::prelude::*;

    use super::*;

    fn wait_for(status: &RecorderStatus, rows: u64) {
        let start = Instant::now();
        while status.rows_written() < rows {
            assert!(start.elapsed() < Duration::from_secs(10), "writer stalled");
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    fn data_rows(path: &Path) -> usize {
        read_recording(path, b',').unwrap().1.len()
    }

    #[test]
    fn header_written_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let _r = Recorder::open(&p, &["t", "torque", "position"], RecorderOptions::default()).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "t,torque,position\n");
    }

    #[test]
    fn setup_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        assert!(matches!(
            Recorder::open(&p, &["t", "t"], RecorderOptions::default()),
            Err(RecorderError::Invalid(_))
        ));
        assert!(Recorder::open::<&str>(&p, &[], RecorderOptions::default()).is_err());
        std::fs::write(&p, "x").unwrap();
        assert!(matches!(
            Recorder::open(&p, &["t"], RecorderOptions::default()),
            Err(RecorderError::Open { .. })
        ));
        let ow = RecorderOptions {
            overwrite: true,
            ..Default::default()
        };
        assert!(Recorder::open(&p, &["t"], ow).is_ok());
        assert!(Recorder::open(&dir.path().join("no/such/dir.csv"), &["t"], RecorderOptions::default()).is_err());
        let bad = RecorderOptions {
            delimiter: b'"',
            ..Default::default()
        };
        assert!(Recorder::open(&dir.path().join("b.csv"), &["t"], bad).is_err());
    }

    #[test]
    fn flush_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut r = Recorder::open(&p, &["t", "x"], RecorderOptions::default()).unwrap();
        let status = r.status();
        for k in 0..199 {
            assert_eq!(r.log([f64::from(k), 1.0]).unwrap(), LogOutcome::Buffered);
        }
        std::thread::sleep(Duration::from_millis(20));
        assert_eq!(data_rows(&p), 0);
        assert_eq!(r.log([199.0, 1.0]).unwrap(), LogOutcome::HandedOff);
        wait_for(&status, 200);
        assert_eq!(data_rows(&p), 200);
        assert!(matches!(
            r.log([1.0]),
            Err(RecorderError::Arity { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn flush_and_close_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut r = Recorder::open(&p, &["t"], RecorderOptions::default()).unwrap();
        for k in 0..5 {
            r.log([k as i64]).unwrap();
        }
        r.flush().unwrap();
        assert_eq!(data_rows(&p), 5);
        r.flush().unwrap();
        r.flush().unwrap();
        assert_eq!(data_rows(&p), 5);
        for k in 5..123 {
            r.log([k as i64]).unwrap();
        }
        r.close().unwrap();
        r.close().unwrap();
        let (_, rows) = read_recording(&p, b',').unwrap();
        assert_eq!(rows.len(), 123);
        assert!(rows.iter().enumerate().all(|(i, row)| row[0] == i.to_string()));
        assert_eq!(r.log([1i64]), Err(RecorderError::Closed));
        assert_eq!(r.flush(), Err(RecorderError::Closed));
    }

    #[test]
    fn crash_keeps_whole_buffers() {
        for k in 0..4u64 {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("crash.csv");
            let mut r = Recorder::open(&p, &["i", "v"], RecorderOptions::default()).unwrap();
            let status = r.status();
            let total = k * 200 + 137;
            for i in 0..total {
                r.log([Cell::Int(i as i64), Cell::Num(i as f64 * 0.5)]).unwrap();
            }
            wait_for(&status, k * 200);
            std::mem::forget(r);
            std::thread::sleep(Duration::from_millis(20));
            let (fields, rows) = read_recording(&p, b',').unwrap();
            assert_eq!(fields, vec!["i", "v"]);
            assert_eq!(rows.len() as u64, k * 200);
            for (i, row) in rows.iter().enumerate() {
                assert_eq!(row[0], i.to_string());
            }
        }
    }

    #[test]
    fn cadence_at_200_hz() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut r = Recorder::open(&p, &["t"], RecorderOptions::default()).unwrap();
        let mut handoffs = Vec::new();
        for k in 0..1000 {
            let t = f64::from(k) / 200.0;
            if r.log([t]).unwrap() == LogOutcome::HandedOff {
                handoffs.push(t);
            }
        }
        let gaps: Vec<f64> = handoffs.windows(2).map(|w| w[1] - w[0]).collect();
        assert_eq!(handoffs.len(), 5);
        assert!(gaps.iter().all(|g| (g - 1.0).abs() < 1e-9));
    }

    struct FailAfter {
        left: usize,
    }

    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.left < buf.len() {
                return Err(io::Error::other("disk full"));
            }
            self.left -= buf.len();
            Ok(buf.len())
        }

        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn writer_failure_degrades() {
        let opts = RecorderOptions {
            capacity: 10,
            ..Default::default()
        };
        let mut r = Recorder::with_sink(Box::new(FailAfter { left: 8 }), &["x"], opts).unwrap();
        for k in 0..10 {
            r.log([f64::from(k)]).unwrap();
        }
        let err = r.flush().unwrap_err();
        assert!(matches!(err, RecorderError::Io { rows_at_risk: 10, .. }), "{err:?}");
        assert!(r.is_degraded());
        let mut last = LogOutcome::Buffered;
        for k in 0..100 {
            last = r.log([f64::from(k)]).unwrap();
        }
        assert_eq!(last, LogOutcome::Degraded { dropped: 60 });
        assert!(r.status().failed().unwrap().contains("disk full"));
    }

    #[test]
    fn custom_delimiter_and_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tsv");
        let opts = RecorderOptions {
            delimiter: b'\t',
            ..Default::default()
        };
        let mut r = Recorder::open(&p, &["t", "note"], opts).unwrap();
        r.log([Cell::Num(0.1), Cell::from("tab\there")]).unwrap();
        r.log([Cell::Num(1e-7), Cell::from("quote\"and\nnewline")]).unwrap();
        r.close().unwrap();
        let (_, rows) = read_recording(&p, b'\t').unwrap();
        assert_eq!(rows[0], vec!["0.1", "tab\there"]);
        assert_eq!(rows[1], vec!["1e-7", "quote\"and\nnewline"]);
        assert_eq!(rows[1][0].parse::<f64>().unwrap(), 1e-7);
        assert_eq!(inspect(&p, b'\t').unwrap().rows, 2);
    }

    fn cell() -> impl Strategy<Value = Cell> {
        prop_oneof![
            any::<f64>().prop_map(Cell::Num),
            any::<i64>().prop_map(Cell::Int),
            "[ -~\n\r\t]{0,12}".prop_map(Cell::Text),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn every_line_parses_with_constant_arity(
            rows in prop::collection::vec(prop::collection::vec(cell(), 3), 0..60),
            delim in prop::sample::select(vec![b',', b';', b'\t', b'|']),
            cap in 1usize..25,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.csv");
            let opts = RecorderOptions { delimiter: delim, capacity: cap, overwrite: false };
            let mut r = Recorder::open(&p, &["a", "b", "c"], opts).unwrap();
            for row in &rows {
                r.log(row.clone()).unwrap();
            }
            r.close().unwrap();
            let (fields, back) = read_recording(&p, delim).unwrap();
            prop_assert_eq!(fields.len(), 3);
            prop_assert_eq!(back.len(), rows.len());
            for (got, want) in back.iter().zip(&rows) {
                for (g, w) in got.iter().zip(want) {
                    match w {
                        Cell::Num(v) if v.is_nan() => prop_assert_eq!(g, "NaN"),
                        Cell::Num(v) => prop_assert_eq!(g.parse::<f64>().unwrap(), *v),
                        other => prop_assert_eq!(g, &other.to_string()),
                    }
                }
            }
        }
    }
}
