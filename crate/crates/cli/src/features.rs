//! Feature dump: one CSV row per window.
//!
//! ```text
//! # deepact-features 1
//! # n=200
//! # stride=200
//! # classes=Downstairs|Jogging|...
//! label,user,recording,start,split,x0,...,x100,y0,...,z100
//! Walking,33,0,0,train,0.98,...
//! ```
//!
//! Unlabeled windows have an empty label. Floats use shortest round-trip form.

use std::io::Write as _;
use std::path::Path;

use deepact::dbn::rows_to_matrix;
use deepact::ingest::{Origin, StreamId};
use deepact::spectral::feature_len;
use deepact::{Error, Result};
use ndarray::Array2;

const HEADER: &str = "# deepact-features 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub label: Option<usize>,
    pub origin: Origin,
    pub split: Split,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// Window length in samples.
    pub n: usize,
    pub stride: usize,
    pub classes: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

fn parse_err(path: &Path, line: usize, field: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl FeatureTable {
    pub fn feature_len(&self) -> usize {
        feature_len(self.n)
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Feature matrix and labels of the labeled rows of one split.
    pub fn labeled(&self, split: Split) -> Result<(Array2<f64>, Vec<usize>)> {
        let rows: Vec<&FeatureRow> = self.rows_in(split).filter(|r| r.label.is_some()).collect();
        let labels = rows.iter().map(|r| r.label.expect("filtered")).collect();
        let x = rows_to_matrix(&rows.iter().map(|r| r.values.as_slice()).collect::<Vec<_>>())?;
        Ok((x, labels))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut file = std::io::BufWriter::new(file);
        writeln!(file, "{HEADER}").map_err(io)?;
        writeln!(file, "# n={}", self.n).map_err(io)?;
        writeln!(file, "# stride={}", self.stride).map_err(io)?;
        writeln!(file, "# classes={}", self.classes.join("|")).map_err(io)?;
        let mut w = csv::Writer::from_writer(file);
        let bins = self.n / 2 + 1;
        let mut header: Vec<String> = ["label", "user", "recording", "start", "split"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for axis in ["x", "y", "z"] {
            header.extend((0..bins).map(|k| format!("{axis}{k}")));
        }
        let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            if r.values.len() != self.feature_len() {
                return Err(Error::Dimension { expected: self.feature_len(), got: r.values.len(), context: "feature row" });
            }
            let mut rec = Vec::with_capacity(5 + r.values.len());
            rec.push(r.label.map_or(String::new(), |l| self.classes[l].clone()));
            rec.push(r.origin.stream.user.to_string());
            rec.push(r.origin.stream.recording.to_string());
            rec.push(r.origin.start.to_string());
            rec.push(r.split.as_str().to_string());
            rec.extend(r.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Format(format!("{}: not a deepact feature file", path.display())));
        }
        let mut n = None;
        let mut stride = None;
        let mut classes = None;
        let mut consumed = 1;
        for line in lines {
            let Some(meta) = line.strip_prefix("# ") else { break };
            consumed += 1;
            let (key, value) = meta
                .split_once('=')
                .ok_or_else(|| parse_err(path, consumed, "header", "expected key=value"))?;
            let number = || {
                value
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, consumed, key, "not an integer"))
            };
            match key {
                "n" => n = Some(number()?),
                "stride" => stride = Some(number()?),
                "classes" => classes = Some(value.split('|').map(str::to_string).collect::<Vec<_>>()),
                _ => return Err(parse_err(path, consumed, key, "unknown header key")),
            }
        }
        let (Some(n), Some(stride), Some(classes)) = (n, stride, classes) else {
            return Err(Error::Format(format!("{}: incomplete feature header", path.display())));
        };
        let expected = feature_len(n);
        let body = text.lines().skip(consumed).collect::<Vec<_>>().join("\n");
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = consumed + 2 + i;
            let rec = rec.map_err(|e| parse_err(path, line, "row", e.to_string()))?;
            if rec.len() != 5 + expected {
                return Err(parse_err(
                    path,
                    line,
                    "row",
                    format!("expected {} fields, found {}", 5 + expected, rec.len()),
                ));
            }
            let label = match &rec[0] {
                "" => None,
                name => Some(classes.iter().position(|c| c == name).ok_or_else(|| Error::UnknownLabel {
                    path: path.to_path_buf(),
                    line,
                    code: name.to_string(),
                })?),
            };
            let int = |k: usize, field: &str| -> Result<u64> {
                rec[k].parse().map_err(|_| parse_err(path, line, field, "not an integer"))
            };
            let split = match &rec[4] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(parse_err(path, line, "split", format!("unknown split `{other}`"))),
            };
            let values = (5..rec.len())
                .map(|k| rec[k].parse::<f64>().map_err(|_| parse_err(path, line, "feature", "not a number")))
                .collect::<Result<Vec<_>>>()?;
            rows.push(FeatureRow {
                label,
                origin: Origin {
                    stream: StreamId {
                        user: int(1, "user")? as u32,
                        recording: int(2, "recording")? as u32,
                    },
                    start: int(3, "start")?,
                },
                split,
                values,
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput(path.to_path_buf()));
        }
        Ok(Self {
            n,
            stride,
            classes,
            rows,
        })
    }
}
