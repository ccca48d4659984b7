//! Recordings, cue markers and labeled epochs.
//!
//! A [`Recording`] is continuous multichannel EEG (`channel × time`, microvolts)
//! with a sorted marker stream. [`extract_epochs`] cuts one task epoch after and
//! one rest epoch before every cue, keeping trials in chronological order.
//!
//! Two on-disk formats are supported, both with a companion
//! `<stem>.markers.csv` file holding `sample_index,label` rows:
//!
//! ```text
//! # fs=256, channels=F3,Fz,F4,...          (CSV: one row per sample)
//! # fs=256, channels=F3,..., samples=2560, encoding=f32le   (binary header line,
//!                                           then channel-major f32 little-endian)
//! ```

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 11-electrode 10-20 montage used for the calibration recordings.
pub const DEFAULT_MONTAGE: [&str; 11] =
    ["F3", "Fz", "F4", "T3", "C3", "Cz", "C4", "T4", "P3", "Pz", "P4"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("sample count mismatch: header declares {declared}, file holds {found}")]
    SampleCountMismatch { declared: usize, found: usize },
    #[error("marker out of range: sample {index} not in [0, {n_samples})")]
    MarkerOutOfRange { index: usize, n_samples: usize },
    #[error("markers not sorted: sample {next} follows {prev}")]
    NonMonotonicMarkers { prev: usize, next: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid epoch window: {0}")]
    InvalidWindow(String),
    #[error("no usable '{cue_label}' cues ({skipped} skipped at recording edges)")]
    NoUsableCues { cue_label: String, skipped: usize },
    #[error("invalid epoch set: {0}")]
    InvalidEpochs(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub sample_index: usize,
    pub label: String,
}

impl Marker {
    pub fn new(sample_index: usize, label: impl Into<String>) -> Self {
        Self { sample_index, label: label.into() }
    }
}

/// Continuous multichannel recording. Fields are private so the invariants
/// checked in [`Recording::new`] hold for every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    channel_labels: Vec<String>,
    sample_rate_hz: f64,
    samples: DMatrix<f64>,
    markers: Vec<Marker>,
}

impl Recording {
    pub fn new(
        channel_labels: Vec<String>,
        sample_rate_hz: f64,
        samples: DMatrix<f64>,
        markers: Vec<Marker>,
    ) -> Result<Self, DataError> {
        if channel_labels.is_empty() {
            return Err(DataError::InvalidRecording("at least one channel required".into()));
        }
        if channel_labels.len() != samples.nrows() {
            return Err(DataError::InvalidRecording(format!(
                "{} channel labels for {} sample rows",
                channel_labels.len(),
                samples.nrows()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(DataError::InvalidRecording(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let n_samples = samples.ncols();
        for pair in markers.windows(2) {
            if pair[1].sample_index < pair[0].sample_index {
                return Err(DataError::NonMonotonicMarkers {
                    prev: pair[0].sample_index,
                    next: pair[1].sample_index,
                });
            }
        }
        if let Some(m) = markers.iter().find(|m| m.sample_index >= n_samples) {
            return Err(DataError::MarkerOutOfRange { index: m.sample_index, n_samples });
        }
        Ok(Self { channel_labels, sample_rate_hz, samples, markers })
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// `channel × time` sample matrix.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    /// Same labels and markers, new samples (shape must match).
    pub fn with_samples(&self, samples: DMatrix<f64>) -> Result<Self, DataError> {
        Self::new(self.channel_labels.clone(), self.sample_rate_hz, samples, self.markers.clone())
    }

    pub fn into_parts(self) -> (Vec<String>, f64, DMatrix<f64>, Vec<Marker>) {
        (self.channel_labels, self.sample_rate_hz, self.samples, self.markers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FileFormat {
    Csv,
    RawBinary,
}

impl FileFormat {
    /// `.bin`/`.f32` map to raw binary, everything else to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("f32") => FileFormat::RawBinary,
            _ => FileFormat::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::RawBinary => "bin",
        }
    }
}

/// Companion marker file path: `dir/session.csv` → `dir/session.markers.csv`.
pub fn markers_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("recording");
    path.with_file_name(format!("{stem}.markers.csv"))
}

#[derive(Debug, Default)]
struct Header {
    fs: Option<f64>,
    channels: Vec<String>,
    samples: Option<usize>,
    encoding: Option<String>,
}

fn parse_header(line: &str) -> Result<Header, DataError> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| DataError::MalformedHeader("header must start with '#'".into()))?;
    let mut header = Header::default();
    // Tokens without '=' continue the channel list.
    let mut current: Option<String> = None;
    for token in body.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, value) = match token.split_once('=') {
            Some((k, v)) => {
                let key = k.trim().to_string();
                current = Some(key.clone());
                (key, v.trim())
            }
            None => match &current {
                Some(k) if k == "channels" => ("channels".to_string(), token),
                _ => {
                    return Err(DataError::MalformedHeader(format!("unexpected token '{token}'")))
                }
            },
        };
        match key.as_str() {
            "fs" => {
                let fs: f64 = value
                    .parse()
                    .map_err(|_| DataError::MalformedHeader(format!("bad fs '{value}'")))?;
                header.fs = Some(fs);
            }
            "channels" => header.channels.push(value.to_string()),
            "samples" => {
                let n: usize = value
                    .parse()
                    .map_err(|_| DataError::MalformedHeader(format!("bad samples '{value}'")))?;
                header.samples = Some(n);
            }
            "encoding" => header.encoding = Some(value.to_string()),
            other => return Err(DataError::MalformedHeader(format!("unknown field '{other}'"))),
        }
    }
    if header.fs.is_none() {
        return Err(DataError::MalformedHeader("missing fs".into()));
    }
    if header.channels.is_empty() || header.channels.iter().any(|c| c.is_empty()) {
        return Err(DataError::MalformedHeader("missing or empty channel labels".into()));
    }
    Ok(header)
}

fn format_header(rec: &Recording, binary: bool) -> String {
    let mut line = format!("# fs={}, channels={}", rec.sample_rate_hz, rec.channel_labels.join(","));
    if binary {
        line.push_str(&format!(", samples={}, encoding=f32le", rec.n_samples()));
    }
    line
}

fn read_markers(path: &Path) -> Result<Vec<Marker>, DataError> {
    let mpath = markers_path(path);
    if !mpath.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let mut markers = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sample_index") {
            continue;
        }
        let (idx, label) = line.split_once(',').ok_or_else(|| DataError::MalformedRow {
            line: i + 1,
            reason: format!("marker row '{line}' needs sample_index,label"),
        })?;
        let sample_index = idx.trim().parse().map_err(|_| DataError::MalformedRow {
            line: i + 1,
            reason: format!("bad marker index '{idx}'"),
        })?;
        markers.push(Marker::new(sample_index, label.trim()));
    }
    Ok(markers)
}

fn write_markers(path: &Path, markers: &[Marker]) -> Result<(), DataError> {
    let mpath = markers_path(path);
    let file = fs::File::create(&mpath).map_err(io_err(&mpath))?;
    let mut w = BufWriter::new(file);
    for m in markers {
        writeln!(w, "{},{}", m.sample_index, m.label).map_err(io_err(&mpath))?;
    }
    w.flush().map_err(io_err(&mpath))
}

/// Reads a recording and its companion marker file.
pub fn load_recording(path: &Path, format: FileFormat) -> Result<Recording, DataError> {
    let markers = read_markers(path)?;
    match format {
        FileFormat::Csv => load_csv(path, markers),
        FileFormat::RawBinary => load_binary(path, markers),
    }
}

fn load_csv(path: &Path, markers: Vec<Marker>) -> Result<Recording, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| DataError::MalformedHeader("empty file".into()))?
        .map_err(io_err(path))?;
    let header = parse_header(&first)?;
    let n_ch = header.channels.len();
    let mut values: Vec<f64> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::MalformedRow {
                line: i + 2,
                reason: format!("bad number '{cell}'"),
            })?;
            values.push(v);
        }
        if values.len() - before != n_ch {
            return Err(DataError::MalformedRow {
                line: i + 2,
                reason: format!("expected {n_ch} columns, got {}", values.len() - before),
            });
        }
    }
    let n_samples = values.len() / n_ch;
    if let Some(declared) = header.samples {
        if declared != n_samples {
            return Err(DataError::SampleCountMismatch { declared, found: n_samples });
        }
    }
    // Row-per-sample text is exactly the column-major layout of channel × time.
    let samples = DMatrix::from_vec(n_ch, n_samples, values);
    Recording::new(header.channels, header.fs.unwrap_or_default(), samples, markers)
}

fn load_binary(path: &Path, markers: Vec<Marker>) -> Result<Recording, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DataError::MalformedHeader("missing header line".into()))?;
    let header_text = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| DataError::MalformedHeader("header is not UTF-8".into()))?;
    let header = parse_header(header_text)?;
    match header.encoding.as_deref() {
        Some("f32le") => {}
        other => {
            return Err(DataError::MalformedHeader(format!(
                "unsupported encoding {other:?}, expected f32le"
            )))
        }
    }
    let declared = header
        .samples
        .ok_or_else(|| DataError::MalformedHeader("missing samples".into()))?;
    let n_ch = header.channels.len();
    let payload = &bytes[newline + 1..];
    if payload.len() % (4 * n_ch) != 0 {
        return Err(DataError::MalformedHeader(format!(
            "payload of {} bytes is not a whole number of {n_ch}-channel f32 frames",
            payload.len()
        )));
    }
    let found = payload.len() / (4 * n_ch);
    if found != declared {
        return Err(DataError::SampleCountMismatch { declared, found });
    }
    // Channel-major payload: channel c occupies samples [c*n, (c+1)*n).
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let samples = DMatrix::from_fn(n_ch, found, |c, t| floats[c * found + t]);
    Recording::new(header.channels, header.fs.unwrap_or_default(), samples, markers)
}

/// Writes a recording plus its companion marker file.
///
/// CSV values are written in shortest round-trip form, so reloading reproduces
/// every `f64` exactly. The binary format stores `f32`; values that are not
/// exactly representable in `f32` are rounded.
pub fn save_recording(rec: &Recording, path: &Path, format: FileFormat) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        FileFormat::Csv => {
            writeln!(w, "{}", format_header(rec, false)).map_err(io_err(path))?;
            let mut row = String::new();
            for t in 0..rec.n_samples() {
                row.clear();
                for c in 0..rec.n_channels() {
                    if c > 0 {
                        row.push(',');
                    }
                    row.push_str(&format!("{:?}", rec.samples[(c, t)]));
                }
                writeln!(w, "{row}").map_err(io_err(path))?;
            }
        }
        FileFormat::RawBinary => {
            writeln!(w, "{}", format_header(rec, true)).map_err(io_err(path))?;
            for c in 0..rec.n_channels() {
                for t in 0..rec.n_samples() {
                    w.write_all(&(rec.samples[(c, t)] as f32).to_le_bytes())
                        .map_err(io_err(path))?;
                }
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    write_markers(path, &rec.markers)
}

/// Trial class; the motor-imagery task is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Rest = 0,
    Task = 1,
}

impl Class {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_bool(task: bool) -> Self {
        if task {
            Class::Task
        } else {
            Class::Rest
        }
    }

    pub fn is_task(self) -> bool {
        self == Class::Task
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Class::Rest => f.write_str("rest"),
            Class::Task => f.write_str("task"),
        }
    }
}

/// Epoch window relative to the cue, in seconds: `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

impl Window {
    pub const fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    /// Sample offsets relative to the cue: `(round(start·fs), round(end·fs))`.
    pub fn offsets(&self, fs: f64) -> (i64, i64) {
        ((self.start_s * fs).round() as i64, (self.end_s * fs).round() as i64)
    }

    pub fn len_samples(&self, fs: f64) -> usize {
        let (a, b) = self.offsets(fs);
        (b - a).max(0) as usize
    }
}

pub const DEFAULT_TASK_WINDOW: Window = Window::new(0.5, 3.5);
pub const DEFAULT_REST_WINDOW: Window = Window::new(-3.5, -0.5);

/// Labeled, equal-length trials in chronological order.
///
/// `onsets[i]` is the first sample of trial `i` in the source recording;
/// `trial_order` ranks trials by onset.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    data: Vec<DMatrix<f64>>,
    labels: Vec<Class>,
    onsets: Vec<usize>,
    trial_order: Vec<usize>,
    channel_labels: Vec<String>,
    sample_rate_hz: f64,
    task_window: Window,
    rest_window: Window,
}

impl EpochSet {
    /// Builds an epoch set from explicit trials. `onsets` fixes chronology.
    pub fn new(
        data: Vec<DMatrix<f64>>,
        labels: Vec<Class>,
        onsets: Vec<usize>,
        channel_labels: Vec<String>,
        sample_rate_hz: f64,
    ) -> Result<Self, DataError> {
        if data.len() != labels.len() || data.len() != onsets.len() {
            return Err(DataError::InvalidEpochs(format!(
                "{} trials, {} labels, {} onsets",
                data.len(),
                labels.len(),
                onsets.len()
            )));
        }
        if let Some(first) = data.first() {
            let shape = first.shape();
            if shape.0 != channel_labels.len() {
                return Err(DataError::InvalidEpochs(format!(
                    "{} channel labels for {}-channel trials",
                    channel_labels.len(),
                    shape.0
                )));
            }
            if data.iter().any(|t| t.shape() != shape) {
                return Err(DataError::InvalidEpochs("trials differ in shape".into()));
            }
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(DataError::InvalidEpochs("sample rate must be positive".into()));
        }
        let mut trial_order: Vec<usize> = (0..onsets.len()).collect();
        trial_order.sort_by_key(|&i| (onsets[i], i));
        Ok(Self {
            data,
            labels,
            onsets,
            trial_order,
            channel_labels,
            sample_rate_hz,
            task_window: DEFAULT_TASK_WINDOW,
            rest_window: DEFAULT_REST_WINDOW,
        })
    }

    pub fn trials(&self) -> &[DMatrix<f64>] {
        &self.data
    }

    pub fn trial(&self, i: usize) -> &DMatrix<f64> {
        &self.data[i]
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn onsets(&self) -> &[usize] {
        &self.onsets
    }

    pub fn trial_order(&self) -> &[usize] {
        &self.trial_order
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn windows(&self) -> (Window, Window) {
        (self.task_window, self.rest_window)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, |t| t.ncols())
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Errors unless both classes are represented.
    pub fn require_both_classes(&self) -> Result<(), DataError> {
        if self.count(Class::Task) == 0 || self.count(Class::Rest) == 0 {
            return Err(DataError::InvalidEpochs(format!(
                "both classes required, have {} task / {} rest",
                self.count(Class::Task),
                self.count(Class::Rest)
            )));
        }
        Ok(())
    }

    /// Subset in the given index order (used by cross-validation folds).
    pub fn select(&self, indices: &[usize]) -> EpochSet {
        let data = indices.iter().map(|&i| self.data[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let onsets: Vec<usize> = indices.iter().map(|&i| self.onsets[i]).collect();
        let mut trial_order: Vec<usize> = (0..onsets.len()).collect();
        trial_order.sort_by_key(|&i| (onsets[i], i));
        EpochSet {
            data,
            labels,
            onsets,
            trial_order,
            channel_labels: self.channel_labels.clone(),
            sample_rate_hz: self.sample_rate_hz,
            task_window: self.task_window,
            rest_window: self.rest_window,
        }
    }

    /// Same metadata, transformed trial data (shapes must stay uniform).
    pub fn map_trials<F>(&self, f: F) -> EpochSet
    where
        F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    {
        EpochSet { data: self.data.iter().map(f).collect(), ..self.clone_meta() }
    }

    /// Replaces labels, keeping trial data (used for permutation controls).
    pub fn with_labels(&self, labels: Vec<Class>) -> Result<EpochSet, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::InvalidEpochs("label count mismatch".into()));
        }
        Ok(EpochSet { data: self.data.clone(), labels, ..self.clone_meta() })
    }

    fn clone_meta(&self) -> EpochSet {
        EpochSet {
            data: Vec::new(),
            labels: self.labels.clone(),
            onsets: self.onsets.clone(),
            trial_order: self.trial_order.clone(),
            channel_labels: self.channel_labels.clone(),
            sample_rate_hz: self.sample_rate_hz,
            task_window: self.task_window,
            rest_window: self.rest_window,
        }
    }
}

/// Result of [`extract_epochs`]: the epochs plus how many cues were dropped
/// because a window fell outside the recording.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub epochs: EpochSet,
    pub skipped_cues: usize,
}

/// Cuts a rest epoch (pre-cue) and a task epoch (post-cue) around every
/// `cue_label` marker. Trials come out as `rest_0, task_0, rest_1, task_1, ...`.
pub fn extract_epochs(
    rec: &Recording,
    cue_label: &str,
    task_window: Window,
    rest_window: Window,
) -> Result<Extraction, DataError> {
    let fs = rec.sample_rate_hz();
    let task_len = task_window.len_samples(fs);
    let rest_len = rest_window.len_samples(fs);
    if task_len == 0 || rest_len == 0 {
        return Err(DataError::InvalidWindow("windows must span at least one sample".into()));
    }
    if task_len != rest_len {
        return Err(DataError::InvalidWindow(format!(
            "task window ({task_len} samples) and rest window ({rest_len} samples) must have equal length"
        )));
    }
    let n = rec.n_samples() as i64;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut onsets = Vec::new();
    let mut skipped = 0;
    for marker in rec.markers().iter().filter(|m| m.label == cue_label) {
        let cue = marker.sample_index as i64;
        let (rs, re) = rest_window.offsets(fs);
        let (ts, te) = task_window.offsets(fs);
        let rest = (cue + rs, cue + re);
        let task = (cue + ts, cue + te);
        let inside = |(a, b): (i64, i64)| a >= 0 && b <= n;
        if !inside(rest) || !inside(task) {
            skipped += 1;
            continue;
        }
        let mut push = |(a, _b): (i64, i64), class: Class| {
            let start = a as usize;
            data.push(rec.samples().columns(start, task_len).into_owned());
            labels.push(class);
            onsets.push(start);
        };
        // Chronological interleave: the pre-cue rest window precedes the task window
        // for the default (negative) rest offsets.
        if rest.0 <= task.0 {
            push(rest, Class::Rest);
            push(task, Class::Task);
        } else {
            push(task, Class::Task);
            push(rest, Class::Rest);
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} '{cue_label}' cues whose windows leave the recording");
    }
    if data.is_empty() {
        return Err(DataError::NoUsableCues { cue_label: cue_label.to_string(), skipped });
    }
    let mut epochs = EpochSet::new(data, labels, onsets, rec.channel_labels().to_vec(), fs)?;
    epochs.task_window = task_window;
    epochs.rest_window = rest_window;
    Ok(Extraction { epochs, skipped_cues: skipped })
}
