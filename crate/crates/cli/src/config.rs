//! Shared flag groups and the JSON config file. Flags given on the command
//! line override values from `--config`, which override built-in defaults.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use segalign::data::SynthConfig;
use segalign::{ExactConfig, FifaConfig, InitMode, OptimizerKind, RelaxedFamily};

use crate::error::{CliResult, Failure};

/// Layout of a `--config` file. Every section and field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub fifa: Option<FifaConfig>,
    pub exact: Option<ExactConfig>,
    pub synth: Option<SynthConfig>,
    pub init: Option<InitMode>,
    pub workers: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure {
            code: crate::error::EXIT_USAGE,
            kind: "parse".into(),
            message: format!("{}: {e}", path.display()),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// JSON config file with optional `fifa`, `exact`, `synth`, `init` and
    /// `workers` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FifaFlags {
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Plateau sharpness of the soft segment masks.
    #[arg(long)]
    pub sharpness: Option<f64>,
    /// Length-energy multiplier.
    #[arg(long)]
    pub beta: Option<f64>,
    /// laplace or gaussian.
    #[arg(long)]
    pub length_energy: Option<RelaxedFamily>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Keep the segment lengths summing to the video length (true or false).
    #[arg(long)]
    pub normalize_lengths: Option<bool>,
}

impl FifaFlags {
    pub fn resolve(&self, base: FifaConfig) -> FifaConfig {
        FifaConfig {
            steps: self.steps.unwrap_or(base.steps),
            optimizer: self.optimizer.unwrap_or(base.optimizer),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            sharpness: self.sharpness.unwrap_or(base.sharpness),
            beta: self.beta.unwrap_or(base.beta),
            length_family: self.length_energy.unwrap_or(base.length_family),
            adam_beta1: self.adam_beta1.unwrap_or(base.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(base.adam_beta2),
            adam_eps: self.adam_eps.unwrap_or(base.adam_eps),
            normalize_lengths: self.normalize_lengths.unwrap_or(base.normalize_lengths),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExactFlags {
    /// Longest segment the exact decoder considers.
    #[arg(long)]
    pub max_segment_len: Option<usize>,
    /// Decode every s-th frame.
    #[arg(long)]
    pub frame_stride: Option<usize>,
    /// Only consider lengths within this many frames of the expected length.
    #[arg(long)]
    pub length_beam: Option<usize>,
}

impl ExactFlags {
    pub fn resolve(&self, base: ExactConfig) -> ExactConfig {
        ExactConfig {
            max_segment_len: self.max_segment_len.unwrap_or(base.max_segment_len),
            frame_sample_stride: self.frame_stride.unwrap_or(base.frame_sample_stride),
            length_beam: self.length_beam.or(base.length_beam),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Softmax temperature of the probability rows; 0 gives one-hot rows.
    #[arg(long)]
    pub noise_temp: Option<f64>,
    /// Chance that a frame's most likely class is wrong.
    #[arg(long)]
    pub confusion_prob: Option<f64>,
    /// Dirichlet concentration of segment lengths.
    #[arg(long)]
    pub length_alpha: Option<f64>,
    /// Makes expected durations grow with the class index.
    #[arg(long)]
    pub length_skew: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthFlags {
    pub fn resolve(&self, base: SynthConfig) -> SynthConfig {
        SynthConfig {
            frames: self.frames.unwrap_or(base.frames),
            segments: self.segments.unwrap_or(base.segments),
            classes: self.classes.unwrap_or(base.classes),
            noise_temp: self.noise_temp.unwrap_or(base.noise_temp),
            confusion_prob: self.confusion_prob.unwrap_or(base.confusion_prob),
            length_dirichlet_alpha: self.length_alpha.unwrap_or(base.length_dirichlet_alpha),
            length_skew: self.length_skew.unwrap_or(base.length_skew),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// Writes pretty JSON to `path`, or to stdout.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    emit_text(serde_json::to_string_pretty(value)?, path)
}

/// Writes `text` plus a newline to `path`, or to stdout. A closed stdout pipe
/// is not an error.
pub fn emit_text(text: String, path: Option<&Path>) -> CliResult<()> {
    let text = text + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::io(p, e)),
        None => match io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::io(Path::new("<stdout>"), e)),
            _ => Ok(()),
        },
    }
}
