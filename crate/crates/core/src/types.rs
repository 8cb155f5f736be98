//! Domain types shared by every inference path: frame-wise probabilities,
//! transcripts, segment lengths, frame-wise labelings and length models, plus
//! the conversions between segment-wise and frame-wise representations.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-8;

/// Tolerance on row sums of an input probability matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// A `T x C` matrix of frame-wise class probabilities.
///
/// The matrix keeps the probabilities exactly as supplied (so that they can be
/// written back bit-for-bit) and a floored, re-normalized copy in log space
/// that all inference code reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    raw: Array2<f64>,
    log_probs: Array2<f64>,
    class_names: Vec<String>,
    floor: f64,
}

impl ProbMatrix {
    /// Builds a matrix from `T x C` probabilities using the default floor.
    pub fn new(probs: Array2<f64>, class_names: Option<Vec<String>>) -> Result<Self> {
        Self::with_floor(probs, class_names, DEFAULT_PROB_FLOOR)
    }

    pub fn with_floor(probs: Array2<f64>, class_names: Option<Vec<String>>, floor: f64) -> Result<Self> {
        let (frames, classes) = probs.dim();
        if frames == 0 || classes == 0 {
            return Err(Error::Validation(format!(
                "probability matrix must be non-empty, got {frames}x{classes}"
            )));
        }
        if !(floor > 0.0 && floor < 1.0 / classes as f64) {
            return Err(Error::Validation(format!(
                "probability floor must lie in (0, 1/C), got {floor}"
            )));
        }
        let class_names = match class_names {
            Some(names) if names.len() != classes => {
                return Err(Error::Validation(format!(
                    "{} class names given for {classes} classes",
                    names.len()
                )))
            }
            Some(names) => names,
            None => default_class_names(classes),
        };

        let mut log_probs = Array2::zeros((frames, classes));
        for (t, row) in probs.outer_iter().enumerate() {
            validate_row(t, row)?;
            let floored_sum: f64 = row.iter().map(|&p| p.max(floor)).sum();
            for (c, &p) in row.iter().enumerate() {
                log_probs[[t, c]] = (p.max(floor) / floored_sum).ln();
            }
        }
        Ok(Self {
            raw: probs,
            log_probs,
            class_names,
            floor,
        })
    }

    /// Builds a matrix from per-frame rows.
    pub fn from_rows(rows: &[Vec<f64>], class_names: Option<Vec<String>>) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if let Some((t, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != classes) {
            return Err(Error::Validation(format!(
                "row {t} has {} entries, expected {classes}",
                row.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let probs =
            Array2::from_shape_vec((rows.len(), classes), flat).map_err(|e| Error::Validation(e.to_string()))?;
        Self::new(probs, class_names)
    }

    /// Number of frames `T`.
    pub fn frames(&self) -> usize {
        self.raw.nrows()
    }

    /// Number of classes `C`.
    pub fn classes(&self) -> usize {
        self.raw.ncols()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Probabilities as supplied, before flooring.
    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    /// Floored and re-normalized log probabilities, `T x C`.
    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }

    #[inline]
    pub fn log_prob(&self, frame: usize, class: usize) -> f64 {
        self.log_probs[[frame, class]]
    }

    /// Keeps every `stride`-th frame, starting at frame 0.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Validation("stride must be >= 1".into()));
        }
        let kept: Vec<usize> = (0..self.frames()).step_by(stride).collect();
        let raw = self.raw.select(ndarray::Axis(0), &kept);
        let log_probs = self.log_probs.select(ndarray::Axis(0), &kept);
        Ok(Self {
            raw,
            log_probs,
            class_names: self.class_names.clone(),
            floor: self.floor,
        })
    }
}

fn validate_row(t: usize, row: ArrayView1<'_, f64>) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("row {t}: probability {p} outside [0, 1]")));
    }
    let sum: f64 = row.sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Validation(format!(
            "row {t}: probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Class names `"0"`, `"1"`, ... used when no names are supplied.
pub fn default_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| c.to_string()).collect()
}

/// Ordered list of action labels `c_1..c_N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript(Vec<usize>);

impl Transcript {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("transcript must not be empty".into()));
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every label against the class count `C`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.0.iter().find(|&&c| c >= classes) {
            Some(c) => Err(Error::Validation(format!(
                "transcript label {c} out of range for {classes} classes"
            ))),
            None => Ok(()),
        }
    }
}

/// Segment lengths `l_1..l_N` in frames. Real-valued while optimizing,
/// integral once projected onto a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LengthConfig(Vec<f64>);

impl LengthConfig {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Validation("length configuration must not be empty".into()));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Validation(format!(
                "segment lengths must be positive and finite, got {l}"
            )));
        }
        Ok(Self(lengths))
    }

    pub fn from_frames(frames: &[usize]) -> Result<Self> {
        Self::new(frames.iter().map(|&l| l as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Integral lengths, or an error if any length has a fractional part.
    pub fn to_frames(&self) -> Result<Vec<usize>> {
        self.0
            .iter()
            .map(|&l| {
                if l.fract() == 0.0 {
                    Ok(l as usize)
                } else {
                    Err(Error::Validation(format!("segment length {l} is not integral")))
                }
            })
            .collect()
    }
}

/// Frame-wise labeling `y_1..y_T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Segmentation(Vec<usize>);

impl Segmentation {
    pub fn new(frame_labels: Vec<usize>) -> Result<Self> {
        if frame_labels.is_empty() {
            return Err(Error::Validation("segmentation must not be empty".into()));
        }
        Ok(Self(frame_labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Run-length encoding into a transcript and integral lengths.
    pub fn to_segmentwise(&self) -> (Transcript, LengthConfig) {
        let runs = runs(&self.0);
        let labels = runs.iter().map(|r| r.label).collect();
        let lengths = runs.iter().map(|r| r.len as f64).collect();
        (Transcript(labels), LengthConfig(lengths))
    }

    /// Maximal runs of equal labels.
    pub fn segments(&self) -> Vec<Run> {
        runs(&self.0)
    }
}

/// A maximal run of one label, covering frames `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub label: usize,
    pub start: usize,
    pub len: usize,
}

impl Run {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

fn runs(labels: &[usize]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (t, &label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(run) if run.label == label => run.len += 1,
            _ => out.push(Run {
                label,
                start: t,
                len: 1,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthFamily {
    Poisson,
    Laplace,
    Gaussian,
}

impl std::str::FromStr for LengthFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Self::Poisson),
            "laplace" => Ok(Self::Laplace),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Validation(format!("unknown length family {other:?}"))),
        }
    }
}

/// Per-class length prior: expected length in frames and a width parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthModel {
    pub family: LengthFamily,
    pub expected: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LengthModel {
    pub fn new(family: LengthFamily, expected: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let model = Self {
            family,
            expected,
            scale,
        };
        model.validate()?;
        Ok(model)
    }

    /// Same expected length for every class, unit scale.
    pub fn uniform(family: LengthFamily, classes: usize, expected: f64) -> Result<Self> {
        Self::new(family, vec![expected; classes], vec![1.0; classes])
    }

    pub fn classes(&self) -> usize {
        self.expected.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.expected.is_empty() {
            return Err(Error::Validation("length model has no classes".into()));
        }
        if self.expected.len() != self.scale.len() {
            return Err(Error::Validation(format!(
                "length model has {} means but {} scales",
                self.expected.len(),
                self.scale.len()
            )));
        }
        for (c, (&m, &s)) in self.expected.iter().zip(&self.scale).enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Validation(format!(
                    "class {c}: expected length must be positive, got {m}"
                )));
            }
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Validation(format!(
                    "class {c}: length scale must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn check_transcript(&self, transcript: &Transcript) -> Result<()> {
        match transcript.labels().iter().find(|&&c| c >= self.classes()) {
            Some(c) => Err(Error::Validation(format!(
                "length model covers {} classes, transcript uses class {c}",
                self.classes()
            ))),
            None => Ok(()),
        }
    }
}

/// Label of frame `t` under the segment-wise labeling `(transcript, lengths)`.
///
/// Lengths must be integral; the video length is their sum.
pub fn alpha(t: usize, transcript: &Transcript, lengths: &LengthConfig) -> Result<usize> {
    let frames = checked_frames(transcript, lengths)?;
    let mut end = 0;
    for (&label, &len) in transcript.labels().iter().zip(&frames) {
        end += len;
        if t < end {
            return Ok(label);
        }
    }
    Err(Error::Validation(format!("frame {t} outside a video of {end} frames")))
}

/// Expands a segment-wise labeling to frame-wise labels.
pub fn to_framewise(transcript: &Transcript, lengths: &LengthConfig) -> Result<Segmentation> {
    let frames = checked_frames(transcript, lengths)?;
    let labels = transcript
        .labels()
        .iter()
        .zip(&frames)
        .flat_map(|(&label, &len)| std::iter::repeat_n(label, len))
        .collect();
    Segmentation::new(labels)
}

/// Same as [`to_framewise`] for integral lengths.
pub fn frames_to_labels(transcript: &Transcript, lengths: &[usize]) -> Result<Segmentation> {
    to_framewise(transcript, &LengthConfig::from_frames(lengths)?)
}

fn checked_frames(transcript: &Transcript, lengths: &LengthConfig) -> Result<Vec<usize>> {
    if transcript.len() != lengths.len() {
        return Err(Error::Validation(format!(
            "transcript has {} segments but {} lengths were given",
            transcript.len(),
            lengths.len()
        )));
    }
    lengths.to_frames()
}

/// Projects positive real lengths onto integral lengths that sum to `frames`.
///
/// Largest-remainder apportionment of `frames` proportional to the inputs.
/// Ties in the remainder go to the earlier segment. Any segment left at zero
/// takes one frame from the currently largest segment (earliest on ties).
pub fn round_lengths(lengths: &LengthConfig, frames: usize) -> Result<Vec<usize>> {
    let n = lengths.len();
    if n > frames {
        return Err(Error::Infeasible(format!(
            "{n} segments cannot fit into {frames} frames"
        )));
    }
    let mut out = apportion(lengths.values(), frames);
    while let Some(zero) = out.iter().position(|&l| l == 0) {
        let donor = argmax_first(&out);
        out[donor] -= 1;
        out[zero] += 1;
    }
    Ok(out)
}

/// Largest-remainder split of `total` proportional to non-negative `weights`,
/// ties to the earlier index. Entries may be zero. Equal split if all weights
/// are zero.
pub(crate) fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|&w| w * total as f64 / sum).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    // Floating error can leave the floors a frame above the target.
    let mut remaining = total as isize - assigned as isize;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut k = 0;
    while remaining > 0 {
        out[order[k % n]] += 1;
        remaining -= 1;
        k += 1;
    }
    while remaining < 0 {
        let i = argmax_first(&out);
        out[i] -= 1;
        remaining += 1;
    }
    out
}

fn argmax_first(values: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
