//! Dataset loading, sliding windows, standardization and train/test splits.
//!
//! Three on-disk formats are understood:
//!
//! * **WISDM**: `user,activity,timestamp,x,y,z;` records. Several records may
//!   share a line; the terminating semicolon is optional. Accelerations are in
//!   m/s² and converted to g.
//! * **Daphnet**: whitespace separated
//!   `time_ms ankle_x ankle_y ankle_z thigh_x thigh_y thigh_z trunk_x trunk_y trunk_z label`
//!   in milli-g. Label `0` rows ("not part of the experiment") are dropped,
//!   `1` is no-freeze and `2` is freeze.
//! * **Skoda**: a delimited matrix whose columns are mapped by
//!   [`SkodaLayout`]. Only rows from one node (16 by default) are kept.
//!
//! Any input may be gzip compressed; compression is detected from the magic
//! bytes, not the file name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Standard gravity, used to convert m/s² to g.
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Default saturation bound `B`, in g.
pub const DEFAULT_SATURATION: f64 = 2.0;

pub const WISDM_CLASSES: [&str; 6] = [
    "Walking",
    "Jogging",
    "Sitting",
    "Standing",
    "Upstairs",
    "Downstairs",
];

/// Daphnet classes; index 1 (`freeze`) is the positive class.
pub const DAPHNET_CLASSES: [&str; 2] = ["no-freeze", "freeze"];

pub const SKODA_CLASSES: [&str; 10] = [
    "write on notepad",
    "open hood",
    "close hood",
    "check gaps front door",
    "open left front door",
    "close left front door",
    "close both left doors",
    "check trunk gaps",
    "open and close trunk",
    "check steering wheel",
];

/// Identifies one continuous recording session of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct StreamId {
    pub user: u32,
    pub recording: u32,
}

/// One triaxial reading, in g.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelSample {
    /// Sample index, strictly increasing within a stream. A jump larger than
    /// one marks a discontinuity (dropped or malformed rows).
    pub t: u64,
    pub r: [f64; 3],
    pub stream: StreamId,
    /// Canonical activity index, `None` for unlabeled samples.
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetFormat {
    Wisdm,
    Daphnet,
    Skoda,
}

impl DatasetFormat {
    pub fn classes(self) -> Vec<String> {
        let names: &[&str] = match self {
            DatasetFormat::Wisdm => &WISDM_CLASSES,
            DatasetFormat::Daphnet => &DAPHNET_CLASSES,
            DatasetFormat::Skoda => &SKODA_CLASSES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Nominal sampling rate of the public release, in Hz.
    pub fn sampling_hz(self) -> f64 {
        match self {
            DatasetFormat::Wisdm => 20.0,
            DatasetFormat::Daphnet => 64.0,
            DatasetFormat::Skoda => 98.0,
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wisdm" => Ok(DatasetFormat::Wisdm),
            "daphnet" => Ok(DatasetFormat::Daphnet),
            "skoda" => Ok(DatasetFormat::Skoda),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Which Daphnet sensor feeds the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DaphnetSensor {
    #[default]
    Ankle,
    Thigh,
    Trunk,
}

impl DaphnetSensor {
    fn first_column(self) -> usize {
        match self {
            DaphnetSensor::Ankle => 1,
            DaphnetSensor::Thigh => 4,
            DaphnetSensor::Trunk => 7,
        }
    }
}

impl std::str::FromStr for DaphnetSensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ankle" => Ok(DaphnetSensor::Ankle),
            "thigh" | "upper-leg" => Ok(DaphnetSensor::Thigh),
            "trunk" => Ok(DaphnetSensor::Trunk),
            other => Err(Error::Config(format!("unknown Daphnet sensor `{other}`"))),
        }
    }
}

/// Column mapping for Skoda matrices (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SkodaLayout {
    pub label_column: usize,
    pub node_column: usize,
    pub axis_columns: [usize; 3],
    /// Node whose rows are kept.
    pub node: u32,
    /// Label code of the null class; its rows are kept as unlabeled.
    pub null_code: i64,
    /// Label code of the first activity; the ten activities are consecutive.
    pub first_activity_code: i64,
    /// Multiplier taking file units to g.
    pub unit_scale: f64,
}

impl Default for SkodaLayout {
    fn default() -> Self {
        Self {
            label_column: 0,
            node_column: 1,
            axis_columns: [2, 3, 4],
            node: 16,
            null_code: 32,
            first_activity_code: 48,
            unit_scale: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Saturation bound `B` in g; readings are clamped to `[-B, B]`.
    pub saturation: f64,
    /// Fail on the first malformed row instead of skipping it.
    pub strict: bool,
    pub daphnet_sensor: DaphnetSensor,
    pub skoda: SkodaLayout,
    /// WISDM timestamps further apart than this start a new recording.
    pub wisdm_max_gap: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            saturation: DEFAULT_SATURATION,
            strict: true,
            daphnet_sensor: DaphnetSensor::Ankle,
            skoda: SkodaLayout::default(),
            wisdm_max_gap: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRow {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

/// Samples of one or more files in one format.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub format: DatasetFormat,
    pub classes: Vec<String>,
    pub samples: Vec<AccelSample>,
    /// Rows skipped in non-strict mode.
    pub skipped: Vec<SkippedRow>,
}

impl Dataset {
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l] += 1;
            }
        }
        counts
    }
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Loads a dataset file, or every regular file of a directory in name order.
pub fn load_dataset(path: &Path, format: DatasetFormat, opts: &LoadOptions) -> Result<Dataset> {
    if !(opts.saturation > 0.0) {
        return Err(Error::Config(format!(
            "saturation bound must be positive, got {}",
            opts.saturation
        )));
    }
    let files = if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut ds = Dataset {
        format,
        classes: format.classes(),
        samples: Vec::new(),
        skipped: Vec::new(),
    };
    for (file_index, file) in files.iter().enumerate() {
        let reader = open_maybe_gzip(file)?;
        match format {
            DatasetFormat::Wisdm => parse_wisdm(reader, file, opts, &mut ds)?,
            DatasetFormat::Daphnet => {
                let stream = daphnet_stream_id(file).unwrap_or(StreamId {
                    user: 0,
                    recording: file_index as u32,
                });
                parse_daphnet(reader, file, stream, opts, &mut ds)?
            }
            DatasetFormat::Skoda => {
                let stream = StreamId {
                    user: 0,
                    recording: file_index as u32,
                };
                parse_skoda(reader, file, stream, opts, &mut ds)?
            }
        }
    }
    if ds.samples.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(ds)
}

/// Parses `S03R02.txt` style names into (user 3, recording 2).
fn daphnet_stream_id(path: &Path) -> Option<StreamId> {
    let stem = path.file_name()?.to_str()?;
    let stem = stem.split('.').next()?.to_ascii_uppercase();
    let rest = stem.strip_prefix('S')?;
    let (user, recording) = rest.split_once('R')?;
    Some(StreamId {
        user: user.parse().ok()?,
        recording: recording.parse().ok()?,
    })
}

fn clamp(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            reason: format!("non-finite value `{raw}`"),
        }),
        Err(e) => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            reason: format!("`{raw}`: {e}"),
        }),
    }
}

/// Either propagates a row error (strict) or records it and moves on.
fn handle_row_error(err: Error, opts: &LoadOptions, ds: &mut Dataset) -> Result<()> {
    if opts.strict {
        return Err(err);
    }
    let (path, line) = match &err {
        Error::Parse { path, line, .. } | Error::UnknownLabel { path, line, .. } => {
            (path.clone(), *line)
        }
        _ => return Err(err),
    };
    ds.skipped.push(SkippedRow {
        path,
        line,
        reason: err.to_string(),
    });
    Ok(())
}

fn read_line(
    reader: &mut dyn BufRead,
    buf: &mut String,
    path: &Path,
) -> Result<bool> {
    buf.clear();
    let n = reader.read_line(buf).map_err(|e| Error::io(path, e))?;
    Ok(n > 0)
}

fn parse_wisdm(
    mut reader: Box<dyn BufRead>,
    path: &Path,
    opts: &LoadOptions,
    ds: &mut Dataset,
) -> Result<()> {
    // (user, last timestamp, recording, next t)
    let mut cursor: Option<(u32, u64, u32, u64)> = None;
    let mut recordings: BTreeMap<u32, u32> = BTreeMap::new();
    let mut buf = String::new();
    let mut line_no = 0usize;
    while read_line(reader.as_mut(), &mut buf, path)? {
        line_no += 1;
        for record in buf.split(';') {
            let record = record.trim();
            if record.is_empty() {
                continue;
            }
            match parse_wisdm_record(record, path, line_no) {
                Ok((user, label, ts, r)) => {
                    let new_stream = match cursor {
                        Some((u, last, _, _)) => {
                            u != user || ts <= last || ts - last > opts.wisdm_max_gap
                        }
                        None => true,
                    };
                    if new_stream {
                        let rec = recordings.entry(user).or_insert(0);
                        cursor = Some((user, ts, *rec, 0));
                        *rec += 1;
                    }
                    let (u, _, rec, t) = cursor.expect("cursor set above");
                    ds.samples.push(AccelSample {
                        t,
                        r: r.map(|v| clamp(v / STANDARD_GRAVITY, opts.saturation)),
                        stream: StreamId {
                            user: u,
                            recording: rec,
                        },
                        label: Some(label),
                    });
                    cursor = Some((u, ts, rec, t + 1));
                }
                Err(e) => {
                    handle_row_error(e, opts, ds)?;
                    // Never let a window bridge a rejected row.
                    if let Some(c) = cursor.as_mut() {
                        c.3 += 1;
                    }
                }
            }
        }
    }
    Ok(())
}

fn parse_wisdm_record(
    record: &str,
    path: &Path,
    line: usize,
) -> Result<(u32, usize, u64, [f64; 3])> {
    let fields: Vec<&str> = record.split(',').map(str::trim).collect();
    let names = ["user", "activity", "timestamp", "x", "y", "z"];
    if fields.len() != names.len() {
        let field = names.get(fields.len()).copied().unwrap_or("z");
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            reason: format!("expected 6 fields, found {}", fields.len()),
        });
    }
    let user = fields[0].parse::<u32>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: "user".into(),
        reason: format!("`{}`: {e}", fields[0]),
    })?;
    let label = WISDM_CLASSES
        .iter()
        .position(|c| c.eq_ignore_ascii_case(fields[1]))
        .ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            line,
            code: fields[1].to_string(),
        })?;
    let ts = fields[2].parse::<u64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: "timestamp".into(),
        reason: format!("`{}`: {e}", fields[2]),
    })?;
    let r = [
        parse_f64(path, line, "x", fields[3])?,
        parse_f64(path, line, "y", fields[4])?,
        parse_f64(path, line, "z", fields[5])?,
    ];
    Ok((user, label, ts, r))
}

fn parse_daphnet(
    mut reader: Box<dyn BufRead>,
    path: &Path,
    stream: StreamId,
    opts: &LoadOptions,
    ds: &mut Dataset,
) -> Result<()> {
    let col = opts.daphnet_sensor.first_column();
    let mut buf = String::new();
    let mut line_no = 0usize;
    let mut t = 0u64;
    while read_line(reader.as_mut(), &mut buf, path)? {
        line_no += 1;
        let line = buf.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let row = (|| -> Result<Option<AccelSample>> {
            if fields.len() != 11 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    field: "row".into(),
                    reason: format!("expected 11 columns, found {}", fields.len()),
                });
            }
            let code = fields[10];
            let label = match code {
                "0" => return Ok(None),
                "1" => 0,
                "2" => 1,
                other => {
                    return Err(Error::UnknownLabel {
                        path: path.to_path_buf(),
                        line: line_no,
                        code: other.to_string(),
                    })
                }
            };
            let axis = ["x", "y", "z"];
            let mut r = [0.0; 3];
            for k in 0..3 {
                let v = parse_f64(path, line_no, axis[k], fields[col + k])?;
                r[k] = clamp(v / 1000.0, opts.saturation);
            }
            Ok(Some(AccelSample {
                t,
                r,
                stream,
                label: Some(label),
            }))
        })();
        match row {
            Ok(Some(s)) => ds.samples.push(s),
            Ok(None) => {}
            Err(e) => handle_row_error(e, opts, ds)?,
        }
        t += 1;
    }
    Ok(())
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else if line.contains(';') {
        line.split(';').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_skoda(
    mut reader: Box<dyn BufRead>,
    path: &Path,
    stream: StreamId,
    opts: &LoadOptions,
    ds: &mut Dataset,
) -> Result<()> {
    let layout = &opts.skoda;
    let needed = layout
        .axis_columns
        .iter()
        .copied()
        .chain([layout.label_column, layout.node_column])
        .max()
        .unwrap_or(0)
        + 1;
    let mut buf = String::new();
    let mut line_no = 0usize;
    let mut t = 0u64;
    while read_line(reader.as_mut(), &mut buf, path)? {
        line_no += 1;
        let line = buf.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        let row = (|| -> Result<Option<AccelSample>> {
            if fields.len() < needed {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    field: "row".into(),
                    reason: format!("expected at least {needed} columns, found {}", fields.len()),
                });
            }
            let node = parse_f64(path, line_no, "node", fields[layout.node_column])?;
            if node != layout.node as f64 {
                return Ok(None);
            }
            let code = parse_f64(path, line_no, "label", fields[layout.label_column])?;
            let label = if code.fract() != 0.0 {
                None
            } else {
                let code = code as i64;
                if code == layout.null_code {
                    Some(None)
                } else {
                    let idx = code - layout.first_activity_code;
                    (0..SKODA_CLASSES.len() as i64)
                        .contains(&idx)
                        .then_some(Some(idx as usize))
                }
            };
            let label = label.ok_or_else(|| Error::UnknownLabel {
                path: path.to_path_buf(),
                line: line_no,
                code: fields[layout.label_column].to_string(),
            })?;
            let axis = ["x", "y", "z"];
            let mut r = [0.0; 3];
            for k in 0..3 {
                let v = parse_f64(path, line_no, axis[k], fields[layout.axis_columns[k]])?;
                r[k] = clamp(v * layout.unit_scale, opts.saturation);
            }
            Ok(Some(AccelSample {
                t,
                r,
                stream,
                label,
            }))
        })();
        match row {
            Ok(Some(s)) => {
                ds.samples.push(s);
                t += 1;
            }
            Ok(None) => {}
            Err(e) => {
                handle_row_error(e, opts, ds)?;
                t += 1;
            }
        }
    }
    Ok(())
}

/// Where a window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub stream: StreamId,
    pub start: u64,
}

/// `N` consecutive samples per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFrame {
    pub axes: [Vec<f64>; 3],
    pub label: Option<usize>,
    pub origin: Origin,
}

impl WindowFrame {
    pub fn len(&self) -> usize {
        self.axes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes[0].is_empty()
    }
}

pub fn validate_window_geometry(n: usize, stride: usize) -> Result<()> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "window length must be even and at least 2, got {n}"
        )));
    }
    if stride < 1 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    Ok(())
}

/// Number of windows a contiguous run of `len` samples yields.
pub fn window_count(len: usize, n: usize, stride: usize) -> usize {
    if len < n {
        0
    } else {
        (len - n) / stride + 1
    }
}

/// Majority label; ties go to the lowest class index, `None` if nothing is
/// labeled.
pub fn majority_label(labels: impl IntoIterator<Item = Option<usize>>) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels.into_iter().flatten() {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (label, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l)
}

/// Splits samples into maximal runs sharing a stream with consecutive `t`.
pub fn contiguous_runs(samples: &[AccelSample]) -> Vec<&[AccelSample]> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        let boundary = i == samples.len()
            || samples[i].stream != samples[i - 1].stream
            || samples[i].t != samples[i - 1].t + 1;
        if boundary {
            if i > start {
                runs.push(&samples[start..i]);
            }
            start = i;
        }
    }
    runs
}

/// Cuts samples into windows of `n` samples, advancing by `stride`. Windows
/// never cross a stream boundary or a gap in `t`.
pub fn make_windows(samples: &[AccelSample], n: usize, stride: usize) -> Result<Vec<WindowFrame>> {
    validate_window_geometry(n, stride)?;
    let mut windows = Vec::new();
    for run in contiguous_runs(samples) {
        for w in 0..window_count(run.len(), n, stride) {
            let chunk = &run[w * stride..w * stride + n];
            let axes = [0, 1, 2].map(|k| chunk.iter().map(|s| s.r[k]).collect::<Vec<_>>());
            windows.push(WindowFrame {
                axes,
                label: majority_label(chunk.iter().map(|s| s.label)),
                origin: Origin {
                    stream: chunk[0].stream,
                    start: chunk[0].t,
                },
            });
        }
    }
    Ok(windows)
}

/// Floor applied to per-feature standard deviations.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Per-feature affine standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and (population) standard deviation per feature.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Invalid("cannot fit a standardizer on an empty set".into()))?;
        let dim = first.as_ref().len();
        let mut mean = vec![0.0; dim];
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::dim(dim, row.len(), "standardizer fit row"));
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| (v / n).sqrt().max(SCALE_FLOOR))
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn from_parts(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::dim(mean.len(), scale.len(), "standardizer scale"));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid(format!("standardizer scale must be positive, got {s}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("standardizer mean must be finite".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len(), "standardizer input"));
        }
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
        Ok(())
    }

    /// `x * scale + mean`.
    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::dim(self.dim(), z.len(), "standardizer inverse input"));
        }
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    #[default]
    RandomStratified,
    ByUser,
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-stratified" | "stratified" => Ok(SplitPolicy::RandomStratified),
            "by-user" => Ok(SplitPolicy::ByUser),
            other => Err(Error::Config(format!("unknown split policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitPolicy::RandomStratified => "random-stratified",
            SplitPolicy::ByUser => "by-user",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<WindowFrame>,
    pub test: Vec<WindowFrame>,
    pub seed: u64,
    pub policy: SplitPolicy,
}

/// Train/test membership by window index. Both lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns window indices to train or test.
///
/// Stratified splits shuffle each class separately and send
/// `round(fraction * count)` windows (at least one, never all) to test.
/// Unlabeled windows always stay in train, where only pretraining reads them.
/// By-user splits move whole subjects.
pub fn split_indices(
    windows: &[WindowFrame],
    policy: SplitPolicy,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; windows.len()];
    match policy {
        SplitPolicy::RandomStratified => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, w) in windows.iter().enumerate() {
                if let Some(l) = w.label {
                    by_class.entry(l).or_default().push(i);
                }
            }
            if by_class.is_empty() {
                return Err(Error::Invalid("stratified split needs labeled windows".into()));
            }
            for (class, mut idx) in by_class {
                if idx.len() < 2 {
                    return Err(Error::Invalid(format!(
                        "class {class} has {} window(s); stratified split needs at least 2",
                        idx.len()
                    )));
                }
                idx.shuffle(&mut rng);
                let k = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
                for &i in &idx[..k] {
                    in_test[i] = true;
                }
            }
        }
        SplitPolicy::ByUser => {
            let users: BTreeSet<u32> = windows.iter().map(|w| w.origin.stream.user).collect();
            if users.len() < 2 {
                return Err(Error::Invalid(format!(
                    "by-user split needs at least 2 users, found {}",
                    users.len()
                )));
            }
            let mut users: Vec<u32> = users.into_iter().collect();
            users.shuffle(&mut rng);
            let k = ((test_fraction * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
            let test_users: BTreeSet<u32> = users[..k].iter().copied().collect();
            for (i, w) in windows.iter().enumerate() {
                in_test[i] = test_users.contains(&w.origin.stream.user);
            }
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..windows.len()).partition(|&i| in_test[i]);
    Ok(SplitIndices { train, test })
}

pub fn split_dataset(
    windows: &[WindowFrame],
    policy: SplitPolicy,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let idx = split_indices(windows, policy, test_fraction, seed)?;
    Ok(DatasetSplit {
        train: idx.train.iter().map(|&i| windows[i].clone()).collect(),
        test: idx.test.iter().map(|&i| windows[i].clone()).collect(),
        seed,
        policy,
    })
}

/// Adds i.i.d. `N(0, sigma²)` noise per axis, then clamps to `±saturation`.
pub fn inject_noise(
    samples: &[AccelSample],
    sigma: f64,
    saturation: f64,
    seed: u64,
) -> Result<Vec<AccelSample>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(samples.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for v in s.r.iter_mut() {
                *v = clamp(*v + normal.sample(&mut rng), saturation);
            }
            s
        })
        .collect())
}
