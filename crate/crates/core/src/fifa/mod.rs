//! Approximate inference by gradient descent on a differentiable energy over
//! segment lengths.
//!
//! Lengths are parametrized in log space so they stay positive. Each step
//! evaluates the soft-mask observation energy and the relaxed length energy,
//! differentiates analytically, and applies an SGD or Adam update. After the
//! last step the real lengths are rounded onto the video.

mod energy;
mod optim;

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use energy::{
    energy_gradient, hard_mask, length_energy, mask_from_lengths, nll_matrix, observation_energy, plateau,
    total_energy, EnergyBreakdown, Objective, PlateauParams,
};
pub use optim::{Adam, Optimizer, Sgd};

use crate::error::{Error, Result};
use crate::exact::{pick_best, score_alignment, DecodeResult};
use crate::types::{round_lengths, LengthConfig, LengthModel, ProbMatrix, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Validation(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Real-valued length distributions usable in the relaxed energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaxedFamily {
    Laplace,
    Gaussian,
}

impl std::str::FromStr for RelaxedFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Self::Laplace),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Validation(format!("unknown length energy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FifaConfig {
    /// Number of optimizer steps.
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Plateau sharpness.
    pub sharpness: f64,
    /// Multiplier of the length energy.
    pub beta: f64,
    pub length_family: RelaxedFamily,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Rescale the lengths to sum to the video length at every step.
    pub normalize_lengths: bool,
}

impl Default for FifaConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.3,
            sharpness: 1.75,
            beta: 0.05,
            length_family: RelaxedFamily::Laplace,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            normalize_lengths: true,
        }
    }
}

impl FifaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning rate", self.learning_rate)?;
        positive("sharpness", self.sharpness)?;
        positive("adam eps", self.adam_eps)?;
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Validation(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        for (name, b) in [("adam beta1", self.adam_beta1), ("adam beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Sgd => Box::new(Sgd {
                learning_rate: self.learning_rate,
            }),
            OptimizerKind::Adam => Box::new(Adam::new(
                self.learning_rate,
                self.adam_beta1,
                self.adam_beta2,
                self.adam_eps,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Proportional to the class expected lengths.
    #[serde(alias = "from_model")]
    Model,
    /// All segments the same length.
    Equal,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "model" | "from-model" | "from_model" => Ok(Self::Model),
            "equal" => Ok(Self::Equal),
            other => Err(Error::Validation(format!("unknown init mode {other:?}"))),
        }
    }
}

/// Initial lengths summing to `frames`.
pub fn init_lengths(
    mode: InitMode,
    transcript: &Transcript,
    model: &LengthModel,
    frames: usize,
) -> Result<LengthConfig> {
    let n = transcript.len();
    if n > frames {
        return Err(Error::Infeasible(format!(
            "{n} segments cannot fit into {frames} frames"
        )));
    }
    match mode {
        InitMode::Equal => LengthConfig::new(vec![frames as f64 / n as f64; n]),
        InitMode::Model => {
            model.check_transcript(transcript)?;
            let means: Vec<f64> = transcript.labels().iter().map(|&c| model.expected[c]).collect();
            let total: f64 = means.iter().sum();
            LengthConfig::new(means.iter().map(|m| m * frames as f64 / total).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub log_lengths: Vec<f64>,
    /// Lengths the parameters encode (after normalization, if enabled).
    pub lengths: Vec<f64>,
    pub energy: EnergyBreakdown,
}

/// Per-step record of one optimization, including the initial state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimTrace {
    pub steps: Vec<TraceStep>,
    pub final_lengths: Vec<f64>,
    pub elapsed: f64,
}

impl OptimTrace {
    /// CSV with columns `step,total,observation,length,l_1..l_N`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.steps.first().map_or(0, |s| s.lengths.len());
        write!(out, "step,total,observation,length")?;
        for i in 1..=n {
            write!(out, ",l_{i}")?;
        }
        writeln!(out)?;
        for s in &self.steps {
            write!(
                out,
                "{},{},{},{}",
                s.step, s.energy.total, s.energy.observation, s.energy.length
            )?;
            for l in &s.lengths {
                write!(out, ",{l}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Aligns a transcript by minimizing the approximate energy from `init`.
///
/// The initial lengths double as the expected lengths of the length energy;
/// the length model supplies the per-class scale and the Poisson means used
/// for the reported log probability.
pub fn fifa_align(
    probs: &ProbMatrix,
    transcript: &Transcript,
    init: &LengthConfig,
    model: &LengthModel,
    cfg: &FifaConfig,
) -> Result<(DecodeResult, OptimTrace)> {
    let start = Instant::now();
    cfg.validate()?;
    transcript.check_classes(probs.classes())?;
    model.validate()?;
    model.check_transcript(transcript)?;
    let frames = probs.frames();
    if transcript.len() > frames {
        return Err(Error::Infeasible(format!(
            "{} segments cannot fit into {frames} frames",
            transcript.len()
        )));
    }
    if init.len() != transcript.len() {
        return Err(Error::Validation(format!(
            "{} initial lengths for {} segments",
            init.len(),
            transcript.len()
        )));
    }

    let centers: Vec<f64> = if cfg.normalize_lengths {
        let scale = frames as f64 / init.total();
        init.values().iter().map(|l| l * scale).collect()
    } else {
        init.values().to_vec()
    };
    let scales: Vec<f64> = transcript.labels().iter().map(|&c| model.scale[c]).collect();
    let objective = Objective::new(probs, transcript, centers, scales, cfg);

    let mut params: Vec<f64> = init.values().iter().map(|l| l.ln()).collect();
    let mut optimizer = cfg.optimizer();
    let mut trace = OptimTrace::default();

    for step in 0..=cfg.steps {
        let (energy, grad) = objective.energy_and_gradient(&params);
        let lengths = objective.lengths(&params);
        trace.steps.push(TraceStep {
            step,
            log_lengths: params.clone(),
            lengths,
            energy,
        });
        if !energy.is_finite() {
            return Err(non_finite("energy", step, trace, start));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(non_finite("gradient", step, trace, start));
        }
        if step == cfg.steps {
            break;
        }
        optimizer.step(&mut params, &grad);
    }

    let last = trace.steps.last().expect("trace holds the initial state");
    let real = last.lengths.clone();
    let energy = last.energy;
    if real.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(non_finite("length", cfg.steps, trace, start));
    }
    let lengths = round_lengths(&LengthConfig::new(real.clone())?, frames)?;
    let log_prob = score_alignment(probs, transcript, &lengths, model)?;
    trace.final_lengths = real.clone();
    let elapsed = start.elapsed().as_secs_f64();
    trace.elapsed = elapsed;
    Ok((
        DecodeResult {
            lengths,
            log_prob,
            elapsed,
            energy: Some(energy),
            real_lengths: Some(real),
        },
        trace,
    ))
}

fn non_finite(what: &'static str, step: usize, mut trace: OptimTrace, start: Instant) -> Error {
    trace.elapsed = start.elapsed().as_secs_f64();
    Error::NonFinite {
        what,
        step,
        trace: Box::new(trace),
    }
}

/// Runs [`fifa_align`] for every candidate transcript and keeps the one with
/// the lowest final energy. Ties go to the lowest index.
pub fn select_transcript_fifa(
    probs: &ProbMatrix,
    candidates: &[Transcript],
    model: &LengthModel,
    init: InitMode,
    cfg: &FifaConfig,
) -> Result<(usize, DecodeResult)> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate transcripts".into()));
    }
    let results: Vec<Result<DecodeResult>> = candidates
        .par_iter()
        .map(|c| {
            let start = init_lengths(init, c, model, probs.frames())?;
            fifa_align(probs, c, &start, model, cfg).map(|(r, _)| r)
        })
        .collect();
    pick_best(results, |r| -r.energy.map_or(f64::INFINITY, |e| e.total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LengthFamily;

    fn one_hot(labels: &[usize], classes: usize) -> ProbMatrix {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..classes).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
            .collect();
        ProbMatrix::from_rows(&rows, None).unwrap()
    }

    #[test]
    fn init_examples() {
        let model = LengthModel::new(LengthFamily::Poisson, vec![10.0, 30.0], vec![1.0; 2]).unwrap();
        let four = Transcript::new(vec![0, 1, 0, 1]).unwrap();
        let eq = init_lengths(InitMode::Equal, &four, &model, 100).unwrap();
        assert_eq!(eq.values(), &[25.0; 4]);

        let flat = LengthModel::uniform(LengthFamily::Poisson, 2, 7.0).unwrap();
        let from_flat = init_lengths(InitMode::Model, &four, &flat, 100).unwrap();
        assert_eq!(from_flat.values(), eq.values());

        let two = Transcript::new(vec![0, 1]).unwrap();
        let m = init_lengths(InitMode::Model, &two, &model, 100).unwrap();
        assert_eq!(m.values(), &[25.0, 75.0]);
    }

    #[test]
    fn zero_steps_is_identity() {
        let probs = one_hot(&[0, 0, 0, 1, 1, 1, 1, 0, 0, 0], 2);
        let tr = Transcript::new(vec![0, 1, 0]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 3.0).unwrap();
        let init = LengthConfig::new(vec![2.0, 5.0, 3.0]).unwrap();
        let cfg = FifaConfig {
            steps: 0,
            ..Default::default()
        };
        let (r, trace) = fifa_align(&probs, &tr, &init, &model, &cfg).unwrap();
        assert_eq!(r.lengths, vec![2, 5, 3]);
        assert_eq!(trace.steps.len(), 1);
    }

    #[test]
    fn trace_has_one_entry_per_step_plus_initial() {
        let probs = one_hot(&[0; 12], 2);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 6.0).unwrap();
        let init = LengthConfig::new(vec![6.0, 6.0]).unwrap();
        let cfg = FifaConfig {
            steps: 7,
            ..Default::default()
        };
        let (_, trace) = fifa_align(&probs, &tr, &init, &model, &cfg).unwrap();
        assert_eq!(trace.steps.len(), 8);
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert_eq!(text.lines().next().unwrap(), "step,total,observation,length,l_1,l_2");
    }

    #[test]
    fn recovers_simple_boundary() {
        let mut labels = vec![0; 30];
        labels.extend(vec![1; 10]);
        let probs = one_hot(&labels, 2);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 20.0).unwrap();
        let init = LengthConfig::new(vec![20.0, 20.0]).unwrap();
        let (r, _) = fifa_align(&probs, &tr, &init, &model, &FifaConfig::default()).unwrap();
        assert!((r.lengths[0] as i64 - 30).abs() <= 1, "{:?}", r.lengths);
    }

    #[test]
    fn selection_examples() {
        let probs = one_hot(&[0, 0, 1], 2);
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 1.5).unwrap();
        let cfg = FifaConfig::default();
        let ab = Transcript::new(vec![0, 1]).unwrap();
        let ba = Transcript::new(vec![1, 0]).unwrap();
        let pick = |c: &[Transcript]| select_transcript_fifa(&probs, c, &model, InitMode::Equal, &cfg);
        assert_eq!(pick(&[ab.clone(), ba]).unwrap().0, 0);
        assert_eq!(pick(std::slice::from_ref(&ab)).unwrap().0, 0);
        assert_eq!(pick(&[ab.clone(), ab]).unwrap().0, 0);
        assert!(pick(&[]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let probs = one_hot(&[0, 1], 2);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 1.0).unwrap();
        let init = LengthConfig::new(vec![1.0, 1.0]).unwrap();
        let bad = FifaConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(fifa_align(&probs, &tr, &init, &model, &bad).is_err());
        let bad = FifaConfig {
            sharpness: -1.0,
            ..Default::default()
        };
        assert!(fifa_align(&probs, &tr, &init, &model, &bad).is_err());
    }

    #[test]
    fn deterministic_traces() {
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|t| {
                let a = 0.2 + 0.6 * ((t as f64) * 0.11).cos().abs();
                vec![a, 1.0 - a]
            })
            .collect();
        let probs = ProbMatrix::from_rows(&rows, None).unwrap();
        let tr = Transcript::new(vec![0, 1, 0, 1]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 20.0).unwrap();
        let init = LengthConfig::new(vec![20.0; 4]).unwrap();
        let cfg = FifaConfig::default();
        let (_, a) = fifa_align(&probs, &tr, &init, &model, &cfg).unwrap();
        let (_, b) = fifa_align(&probs, &tr, &init, &model, &cfg).unwrap();
        assert_eq!(a.steps, b.steps);
    }
}
