//! Problem instances, their files, length-model estimation and the synthetic
//! instance generator.

mod formats;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

pub use formats::*;
pub use synth::{synth_instance, synth_suite, SynthConfig};

use crate::error::{Error, Result};
use crate::types::{LengthFamily, LengthModel, ProbMatrix, Segmentation, Transcript};

/// One video: probabilities plus optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub video_id: String,
    pub probs: ProbMatrix,
    pub gt: Option<Segmentation>,
    pub transcript: Option<Transcript>,
}

impl ProblemInstance {
    pub fn new(
        video_id: impl Into<String>,
        probs: ProbMatrix,
        gt: Option<Segmentation>,
        transcript: Option<Transcript>,
    ) -> Result<Self> {
        if let Some(gt) = &gt {
            if gt.len() != probs.frames() {
                return Err(Error::Validation(format!(
                    "ground truth has {} frames, probabilities have {}",
                    gt.len(),
                    probs.frames()
                )));
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            probs,
            gt,
            transcript,
        })
    }

    /// The given transcript, or the one implied by the ground truth.
    pub fn transcript_or_gt(&self) -> Option<Transcript> {
        self.transcript
            .clone()
            .or_else(|| self.gt.as_ref().map(|g| g.to_segmentwise().0))
    }
}

/// Mean segment length of every class across the training segmentations.
///
/// Classes that never occur get `fallback` if given, otherwise the call fails
/// and names them. Scales default to 1.
pub fn estimate_length_model(
    train: &[Segmentation],
    classes: usize,
    family: LengthFamily,
    fallback: Option<f64>,
) -> Result<LengthModel> {
    let mut totals = vec![0u64; classes];
    let mut counts = vec![0u64; classes];
    for seg in train {
        for run in seg.segments() {
            if run.label >= classes {
                return Err(Error::Validation(format!(
                    "label {} out of range for {classes} classes",
                    run.label
                )));
            }
            totals[run.label] += run.len as u64;
            counts[run.label] += 1;
        }
    }
    let missing: Vec<usize> = (0..classes).filter(|&c| counts[c] == 0).collect();
    if !missing.is_empty() && fallback.is_none() {
        return Err(Error::Validation(format!(
            "classes absent from training data: {missing:?}"
        )));
    }
    let expected = (0..classes)
        .map(|c| {
            if counts[c] == 0 {
                fallback.unwrap_or_default()
            } else {
                totals[c] as f64 / counts[c] as f64
            }
        })
        .collect();
    LengthModel::new(family, expected, vec![1.0; classes])
}

/// File paths of one instance inside an instance directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceFiles {
    pub probs: PathBuf,
    pub gt: PathBuf,
    pub transcript: PathBuf,
}

impl InstanceFiles {
    pub fn new(dir: &Path, stem: &str, format: ProbFormat) -> Self {
        Self {
            probs: dir.join(format!("{stem}.probs.{}", format.extension())),
            gt: dir.join(format!("{stem}.gt.txt")),
            transcript: dir.join(format!("{stem}.transcript.txt")),
        }
    }
}

/// Writes `<stem>.probs.{csv,segp}` (with class sidecar), `<stem>.gt.txt` and
/// `<stem>.transcript.txt`.
pub fn save_instance(dir: &Path, instance: &ProblemInstance, format: ProbFormat) -> Result<InstanceFiles> {
    let files = InstanceFiles::new(dir, &instance.video_id, format);
    save_probs(&files.probs, &instance.probs, format)?;
    let classes = ClassMap::new(instance.probs.class_names().to_vec())?;
    if let Some(gt) = &instance.gt {
        save_segmentation(&files.gt, gt, &classes)?;
    }
    if let Some(tr) = &instance.transcript {
        save_transcript(&files.transcript, tr, &classes)?;
    }
    Ok(files)
}

/// Loads every instance in `dir` (files named `<stem>.probs.csv` or
/// `<stem>.probs.segp`), sorted by stem.
pub fn load_instance_dir(dir: &Path) -> Result<Vec<ProblemInstance>> {
    let mut found: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter_map(|path| {
            let name = path.file_name()?.to_str()?.to_string();
            let stem = name
                .strip_suffix(".probs.csv")
                .or_else(|| name.strip_suffix(".probs.segp"))?
                .to_string();
            Some((stem, path))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Validation(format!("no instances in {}", dir.display())));
    }
    found
        .into_iter()
        .map(|(stem, path)| {
            let probs = load_probs(&path, ProbFormat::from_path(&path))?;
            let classes = ClassMap::new(probs.class_names().to_vec())?;
            let gt_path = dir.join(format!("{stem}.gt.txt"));
            let tr_path = dir.join(format!("{stem}.transcript.txt"));
            let gt = gt_path
                .exists()
                .then(|| load_segmentation(&gt_path, &classes))
                .transpose()?;
            let transcript = tr_path
                .exists()
                .then(|| load_transcript(&tr_path, &classes))
                .transpose()?;
            ProblemInstance::new(stem, probs, gt, transcript)
        })
        .collect()
}
