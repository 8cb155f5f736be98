//! Seeded synthetic videos with known ground truth.
//!
//! A transcript of `N` labels is drawn without adjacent repeats. Segment
//! lengths are one frame each plus a Dirichlet-proportional share of the
//! remaining `T - N` frames. Each frame then gets a probability row that is a
//! temperature-softened one-hot vector at its label; with probability
//! `confusion_prob` the peak is moved to a random other class instead.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::ProblemInstance;
use crate::error::{Error, Result};
use crate::types::{apportion, frames_to_labels, ProbMatrix, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub segments: usize,
    pub classes: usize,
    /// Softmax temperature applied to the one-hot logits; 0 keeps rows one-hot.
    pub noise_temp: f64,
    /// Probability that a frame's peak sits on a wrong class.
    pub confusion_prob: f64,
    /// Dirichlet concentration of the segment-length shares.
    pub length_dirichlet_alpha: f64,
    /// Class-dependent duration spread: the Dirichlet weight of a class-`c`
    /// segment is multiplied by `1 + length_skew * c / (C - 1)`.
    pub length_skew: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 200,
            segments: 5,
            classes: 10,
            noise_temp: 0.5,
            confusion_prob: 0.05,
            length_dirichlet_alpha: 5.0,
            length_skew: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.frames < self.segments {
            return Err(Error::Infeasible(format!(
                "need T >= N >= 1, got T={} N={}",
                self.frames, self.segments
            )));
        }
        if self.classes < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if !(self.noise_temp.is_finite() && self.noise_temp >= 0.0) {
            return Err(Error::Validation(format!(
                "noise temperature must be >= 0, got {}",
                self.noise_temp
            )));
        }
        if !(0.0..=1.0).contains(&self.confusion_prob) {
            return Err(Error::Validation(format!(
                "confusion probability must lie in [0, 1], got {}",
                self.confusion_prob
            )));
        }
        if !(self.length_dirichlet_alpha.is_finite() && self.length_dirichlet_alpha > 0.0) {
            return Err(Error::Validation(format!(
                "Dirichlet concentration must be positive, got {}",
                self.length_dirichlet_alpha
            )));
        }
        if !(self.length_skew.is_finite() && self.length_skew >= 0.0) {
            return Err(Error::Validation(format!(
                "length skew must be >= 0, got {}",
                self.length_skew
            )));
        }
        Ok(())
    }
}

/// Generates one instance; identical configs give identical instances.
pub fn synth_instance(cfg: &SynthConfig) -> Result<ProblemInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = cfg.classes;

    let mut labels = Vec::with_capacity(cfg.segments);
    labels.push(rng.random_range(0..classes));
    while labels.len() < cfg.segments {
        let prev = *labels.last().unwrap();
        let mut next = rng.random_range(0..classes - 1);
        if next >= prev {
            next += 1;
        }
        labels.push(next);
    }
    let transcript = Transcript::new(labels)?;

    let shares: Vec<f64> = transcript
        .labels()
        .iter()
        .map(|&c| {
            let weight = 1.0 + cfg.length_skew * c as f64 / (classes - 1) as f64;
            let gamma =
                Gamma::new(cfg.length_dirichlet_alpha * weight, 1.0).map_err(|e| Error::Validation(e.to_string()))?;
            Ok(gamma.sample(&mut rng))
        })
        .collect::<Result<_>>()?;
    let lengths: Vec<usize> = apportion(&shares, cfg.frames - cfg.segments)
        .into_iter()
        .map(|l| l + 1)
        .collect();
    let gt = frames_to_labels(&transcript, &lengths)?;

    let peak = if cfg.noise_temp == 0.0 {
        1.0
    } else {
        let e = (1.0 / cfg.noise_temp).exp();
        e / (e + (classes - 1) as f64)
    };
    let off = if cfg.noise_temp == 0.0 {
        0.0
    } else {
        1.0 / ((1.0 / cfg.noise_temp).exp() + (classes - 1) as f64)
    };
    let mut probs = Array2::from_elem((cfg.frames, classes), off);
    for (t, &label) in gt.labels().iter().enumerate() {
        let mut top = label;
        if rng.random::<f64>() < cfg.confusion_prob {
            top = rng.random_range(0..classes - 1);
            if top >= label {
                top += 1;
            }
        }
        probs[[t, top]] = peak;
    }
    let probs = ProbMatrix::new(probs, None)?;
    ProblemInstance::new(format!("synth_{:08x}", cfg.seed), probs, Some(gt), Some(transcript))
}

/// `count` instances with seeds `seed, seed + 1, ...`.
pub fn synth_suite(cfg: &SynthConfig, count: usize) -> Result<Vec<ProblemInstance>> {
    (0..count as u64)
        .map(|i| {
            synth_instance(&SynthConfig {
                seed: cfg.seed.wrapping_add(i),
                ..*cfg
            })
        })
        .collect()
}
