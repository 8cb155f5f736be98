//! On-disk formats.
//!
//! * Probabilities, CSV: one frame per line, `C` comma-separated values.
//! * Probabilities, packed: `b"SEGP"`, `u32` T, `u32` C (little-endian), then
//!   `T * C` little-endian `f32` values in row-major order.
//! * Class names: JSON array of strings in a sidecar next to the matrix
//!   (`<file stem>.classes.json`).
//! * Segmentation: one class name per line, one line per frame.
//! * Transcript: class names separated by whitespace.
//! * Length model and metric reports: JSON.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::types::{default_class_names, LengthModel, ProbMatrix, Segmentation, Transcript};

pub const PACKED_MAGIC: &[u8; 4] = b"SEGP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbFormat {
    Csv,
    PackedF32,
}

impl ProbFormat {
    /// `.csv` is CSV; anything else is treated as packed.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::PackedF32,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::PackedF32 => "segp",
        }
    }
}

impl std::str::FromStr for ProbFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "packed" | "packed_f32" | "packed-f32" | "segp" => Ok(Self::PackedF32),
            other => Err(Error::Validation(format!("unknown probability format {other:?}"))),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sidecar path holding the class names of a probability file.
pub fn classes_sidecar(path: &Path) -> PathBuf {
    path.with_extension("classes.json")
}

/// Loads a probability matrix. Class names come from the sidecar if present.
pub fn load_probs(path: &Path, format: ProbFormat) -> Result<ProbMatrix> {
    let matrix = match format {
        ProbFormat::Csv => parse_csv(path, &read_text(path)?)?,
        ProbFormat::PackedF32 => parse_packed(path, &read(path)?)?,
    };
    let sidecar = classes_sidecar(path);
    let names = if sidecar.exists() {
        Some(load_class_names(&sidecar)?)
    } else {
        None
    };
    ProbMatrix::new(matrix, names).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes the matrix as supplied (before flooring) and its class-name sidecar.
pub fn save_probs(path: &Path, probs: &ProbMatrix, format: ProbFormat) -> Result<()> {
    let bytes = match format {
        ProbFormat::Csv => {
            let mut out = String::new();
            for row in probs.raw().outer_iter() {
                let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
            out.into_bytes()
        }
        ProbFormat::PackedF32 => {
            let (frames, classes) = probs.raw().dim();
            let mut out = Vec::with_capacity(12 + 4 * frames * classes);
            out.extend_from_slice(PACKED_MAGIC);
            out.extend_from_slice(&to_u32(frames)?.to_le_bytes());
            out.extend_from_slice(&to_u32(classes)?.to_le_bytes());
            for &p in probs.raw().iter() {
                out.extend_from_slice(&(p as f32).to_le_bytes());
            }
            out
        }
    };
    write(path, &bytes)?;
    save_class_names(&classes_sidecar(path), probs.class_names())
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("dimension {v} exceeds u32")))
}

fn parse_csv(path: &Path, text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut classes = None;
    let mut frames = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
        match classes {
            None => classes = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {c} values, found {}", row.len()),
                ))
            }
            _ => {}
        }
        data.extend(row);
        frames += 1;
    }
    let classes = classes.ok_or_else(|| Error::parse(path, 1, "empty probability file"))?;
    Array2::from_shape_vec((frames, classes), data).map_err(|e| Error::parse(path, 1, e.to_string()))
}

fn parse_packed(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |msg: String| Error::parse(path, 1, msg);
    if bytes.len() < 12 || &bytes[..4] != PACKED_MAGIC {
        return Err(bad("missing SEGP header".into()));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let classes = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = frames
        .checked_mul(classes)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "{frames}x{classes} header needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((frames, classes), data).map_err(|e| bad(e.to_string()))
}

pub fn load_class_names(path: &Path) -> Result<Vec<String>> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn save_class_names(path: &Path, names: &[String]) -> Result<()> {
    write(path, serde_json::to_string_pretty(names)?.as_bytes())
}

/// Bidirectional map between class names and indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "class name {name:?} must be non-empty and contain no whitespace"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn numeric(classes: usize) -> Self {
        Self::new(default_class_names(classes)).expect("numeric names are unique")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    /// Index of `name`, adding it if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(i) = self.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    fn lookup(&self, path: &Path, line: usize, name: &str) -> Result<usize> {
        self.get(name)
            .ok_or_else(|| Error::parse(path, line, format!("unknown class {name:?}")))
    }

    fn names_of(&self, labels: &[usize]) -> Result<Vec<&str>> {
        labels
            .iter()
            .map(|&c| {
                self.name(c)
                    .ok_or_else(|| Error::Validation(format!("class {c} has no name")))
            })
            .collect()
    }
}

/// Reads one label per line without resolving them to classes.
pub fn read_label_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.split_whitespace().nth(1).is_some() {
            return Err(Error::parse(path, i + 1, "expected a single label"));
        }
        out.push((i + 1, line.to_string()));
    }
    if out.is_empty() {
        return Err(Error::parse(path, 1, "empty segmentation"));
    }
    Ok(out)
}

pub fn load_segmentation(path: &Path, classes: &ClassMap) -> Result<Segmentation> {
    let labels = read_label_lines(path)?
        .into_iter()
        .map(|(line, name)| classes.lookup(path, line, &name))
        .collect::<Result<Vec<_>>>()?;
    Segmentation::new(labels)
}

/// Loads a segmentation, adding unseen labels to `classes`.
pub fn load_segmentation_interning(path: &Path, classes: &mut ClassMap) -> Result<Segmentation> {
    let labels = read_label_lines(path)?
        .into_iter()
        .map(|(_, name)| classes.intern(&name))
        .collect();
    Segmentation::new(labels)
}

pub fn save_segmentation(path: &Path, seg: &Segmentation, classes: &ClassMap) -> Result<()> {
    let mut out = classes.names_of(seg.labels())?.join("\n");
    out.push('\n');
    write(path, out.as_bytes())
}

pub fn parse_transcript(path: &Path, text: &str, classes: &ClassMap) -> Result<Transcript> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for token in line.split_whitespace() {
            labels.push(classes.lookup(path, i + 1, token)?);
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(path, 1, "empty transcript"));
    }
    Transcript::new(labels)
}

pub fn load_transcript(path: &Path, classes: &ClassMap) -> Result<Transcript> {
    parse_transcript(path, &read_text(path)?, classes)
}

pub fn save_transcript(path: &Path, transcript: &Transcript, classes: &ClassMap) -> Result<()> {
    let mut out = classes.names_of(transcript.labels())?.join(" ");
    out.push('\n');
    write(path, out.as_bytes())
}

/// Every regular file in `dir`, sorted by file name, parsed as a transcript.
pub fn load_transcript_dir(dir: &Path, classes: &ClassMap) -> Result<Vec<Transcript>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Validation(format!("no transcript files in {}", dir.display())));
    }
    paths.iter().map(|p| load_transcript(p, classes)).collect()
}

#[derive(Serialize, Deserialize)]
struct LengthModelDoc {
    #[serde(flatten)]
    model: LengthModelFields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct LengthModelFields {
    family: crate::types::LengthFamily,
    expected: Vec<f64>,
    #[serde(default)]
    scale: Vec<f64>,
}

/// Parses a length model. A missing `scale` defaults to 1 for every class.
pub fn parse_length_model(text: &str) -> Result<(LengthModel, Option<Vec<String>>)> {
    let doc: LengthModelDoc = serde_json::from_str(text)?;
    let LengthModelFields {
        family,
        expected,
        mut scale,
    } = doc.model;
    if scale.is_empty() {
        scale = vec![1.0; expected.len()];
    }
    let model = LengthModel::new(family, expected, scale)?;
    if let Some(names) = &doc.class_names {
        if names.len() != model.classes() {
            return Err(Error::Validation(format!(
                "{} class names for {} classes",
                names.len(),
                model.classes()
            )));
        }
    }
    Ok((model, doc.class_names))
}

pub fn load_length_model(path: &Path) -> Result<(LengthModel, Option<Vec<String>>)> {
    parse_length_model(&read_text(path)?).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn length_model_json(model: &LengthModel, class_names: Option<&[String]>) -> Result<String> {
    let doc = LengthModelDoc {
        model: LengthModelFields {
            family: model.family,
            expected: model.expected.clone(),
            scale: model.scale.clone(),
        },
        class_names: class_names.map(<[String]>::to_vec),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn save_length_model(path: &Path, model: &LengthModel, class_names: Option<&[String]>) -> Result<()> {
    write(path, length_model_json(model, class_names)?.as_bytes())
}

pub fn load_metric_report(path: &Path) -> Result<MetricReport> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn save_metric_report(path: &Path, report: &MetricReport) -> Result<()> {
    write(path, serde_json::to_string_pretty(report)?.as_bytes())
}
