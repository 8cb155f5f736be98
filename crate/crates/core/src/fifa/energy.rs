//! Differentiable approximation of the segmentation energy.
//!
//! Every segment is represented by a smooth plateau over the frame axis whose
//! edges sit at the segment's start and end. The observation energy is the
//! plateau-weighted sum of frame negative log likelihoods; the length energy
//! is a Laplace or Gaussian penalty on the deviation from an expected length.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FifaConfig, RelaxedFamily};
use crate::types::{LengthConfig, LengthModel, ProbMatrix, Transcript};

/// Exponent arguments are clamped to this magnitude.
const EXP_CLAMP: f64 = 500.0;

/// Frames farther than `PLATEAU_CUTOFF / sharpness` from a plateau edge see a
/// mask value within `e^-40` (about 4e-18) of 0 or 1, below double precision
/// resolution relative to 1. They are summed without evaluating the plateau.
const PLATEAU_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauParams {
    pub center: f64,
    pub half_width: f64,
    pub sharpness: f64,
}

/// Smooth plateau `1 / ((e^{s(t-c-w)} + 1)(e^{s(c-w-t)} + 1))`.
pub fn plateau(t: f64, p: &PlateauParams) -> f64 {
    let right = (p.sharpness * (t - p.center - p.half_width)).clamp(-EXP_CLAMP, EXP_CLAMP);
    let left = (p.sharpness * (-t + p.center - p.half_width)).clamp(-EXP_CLAMP, EXP_CLAMP);
    1.0 / ((right.exp() + 1.0) * (left.exp() + 1.0))
}

/// `N x T` matrix of frame negative log likelihoods of each transcript entry.
pub fn nll_matrix(probs: &ProbMatrix, transcript: &Transcript) -> Array2<f64> {
    let frames = probs.frames();
    Array2::from_shape_fn((transcript.len(), frames), |(n, t)| {
        -probs.log_prob(t, transcript.labels()[n])
    })
}

fn plateau_params(lengths: &[f64], sharpness: f64) -> Vec<PlateauParams> {
    let mut start = 0.0;
    lengths
        .iter()
        .map(|&l| {
            let p = PlateauParams {
                center: start + l / 2.0,
                half_width: l / 2.0,
                sharpness,
            };
            start += l;
            p
        })
        .collect()
}

/// Dense soft mask: row `n` is segment `n`'s plateau at frames `0..frames`.
pub fn mask_from_lengths(lengths: &LengthConfig, frames: usize, sharpness: f64) -> Array2<f64> {
    let params = plateau_params(lengths.values(), sharpness);
    Array2::from_shape_fn((params.len(), frames), |(n, t)| plateau(t as f64, &params[n]))
}

/// Dense 0/1 mask: `M[n, t] = 1` iff frame `t` lies in segment `n`.
pub fn hard_mask(lengths: &[usize], frames: usize) -> Array2<f64> {
    let mut mask = Array2::zeros((lengths.len(), frames));
    let mut start = 0;
    for (n, &l) in lengths.iter().enumerate() {
        for t in start..(start + l).min(frames) {
            mask[[n, t]] = 1.0;
        }
        start += l;
    }
    mask
}

/// Mask-weighted sum of negative log likelihoods.
pub fn observation_energy(nll: &Array2<f64>, mask: &Array2<f64>) -> f64 {
    assert_eq!(nll.dim(), mask.dim(), "mask and likelihood shapes differ");
    nll.iter().zip(mask.iter()).map(|(p, m)| p * m).sum()
}

/// Length penalty of every segment against the expected length of its class,
/// with the class's scale parameter.
pub fn length_energy(
    lengths: &LengthConfig,
    transcript: &Transcript,
    model: &LengthModel,
    family: RelaxedFamily,
) -> f64 {
    let (centers, scales) = class_targets(transcript, model);
    length_terms(lengths.values(), &centers, &scales, family, None)
}

pub(crate) fn class_targets(transcript: &Transcript, model: &LengthModel) -> (Vec<f64>, Vec<f64>) {
    transcript
        .labels()
        .iter()
        .map(|&c| (model.expected[c], model.scale[c]))
        .unzip()
}

fn length_terms(
    lengths: &[f64],
    centers: &[f64],
    scales: &[f64],
    family: RelaxedFamily,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut energy = 0.0;
    for n in 0..lengths.len() {
        let d = lengths[n] - centers[n];
        let s = scales[n];
        match family {
            RelaxedFamily::Laplace => {
                energy += d.abs() / s;
                if let Some(g) = grad.as_deref_mut() {
                    g[n] = if d == 0.0 { 0.0 } else { d.signum() / s };
                }
            }
            RelaxedFamily::Gaussian => {
                energy += d * d / (s * s);
                if let Some(g) = grad.as_deref_mut() {
                    g[n] = 2.0 * d / (s * s);
                }
            }
        }
    }
    energy
}

/// Energy terms in nats. `total = observation + beta * length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub observation: f64,
    pub length: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(observation: f64, length: f64, beta: f64) -> Self {
        Self {
            observation,
            length,
            total: observation + beta * length,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.observation.is_finite() && self.length.is_finite() && self.total.is_finite()
    }
}

/// The approximate energy of one video under one transcript, as a function of
/// the segment lengths.
#[derive(Debug, Clone)]
pub struct Objective {
    nll: Array2<f64>,
    /// Row-wise prefix sums of `nll`, `N x (T + 1)`.
    prefix: Array2<f64>,
    centers: Vec<f64>,
    scales: Vec<f64>,
    family: RelaxedFamily,
    beta: f64,
    sharpness: f64,
    normalize: bool,
}

impl Objective {
    /// `centers` and `scales` are per transcript entry.
    pub fn new(
        probs: &ProbMatrix,
        transcript: &Transcript,
        centers: Vec<f64>,
        scales: Vec<f64>,
        cfg: &FifaConfig,
    ) -> Self {
        let nll = nll_matrix(probs, transcript);
        let (segments, frames) = nll.dim();
        let mut prefix = Array2::zeros((segments, frames + 1));
        for n in 0..segments {
            for t in 0..frames {
                prefix[[n, t + 1]] = prefix[[n, t]] + nll[[n, t]];
            }
        }
        Self {
            nll,
            prefix,
            centers,
            scales,
            family: cfg.length_family,
            beta: cfg.beta,
            sharpness: cfg.sharpness,
            normalize: cfg.normalize_lengths,
        }
    }

    /// Objective with per-class expected lengths taken from a length model.
    pub fn from_model(probs: &ProbMatrix, transcript: &Transcript, model: &LengthModel, cfg: &FifaConfig) -> Self {
        let (centers, scales) = class_targets(transcript, model);
        Self::new(probs, transcript, centers, scales, cfg)
    }

    pub fn frames(&self) -> usize {
        self.nll.ncols()
    }

    pub fn segments(&self) -> usize {
        self.nll.nrows()
    }

    pub fn nll(&self) -> &Array2<f64> {
        &self.nll
    }

    /// Segment lengths encoded by the log-length parameters. When lengths are
    /// normalized they are rescaled to sum to the video length.
    pub fn lengths(&self, log_lengths: &[f64]) -> Vec<f64> {
        if self.normalize {
            let top = log_lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = log_lengths.iter().map(|&x| (x - top).exp()).collect();
            let sum: f64 = w.iter().sum();
            let frames = self.frames() as f64;
            w.into_iter().map(|x| frames * x / sum).collect()
        } else {
            log_lengths.iter().map(|x| x.exp()).collect()
        }
    }

    /// Energy at explicit real lengths.
    pub fn energy_at(&self, lengths: &[f64]) -> EnergyBreakdown {
        self.evaluate_lengths(lengths, None)
    }

    /// Energy and its gradient with respect to the log-length parameters.
    pub fn energy_and_gradient(&self, log_lengths: &[f64]) -> (EnergyBreakdown, Vec<f64>) {
        let lengths = self.lengths(log_lengths);
        let mut grad = vec![0.0; lengths.len()];
        let energy = self.evaluate_lengths(&lengths, Some(&mut grad));
        // grad currently holds dE/dl.
        if self.normalize {
            let frames = self.frames() as f64;
            let mean: f64 = grad.iter().zip(&lengths).map(|(g, l)| g * l).sum::<f64>() / frames;
            for (g, l) in grad.iter_mut().zip(&lengths) {
                *g = l * (*g - mean);
            }
        } else {
            for (g, l) in grad.iter_mut().zip(&lengths) {
                *g *= l;
            }
        }
        (energy, grad)
    }

    pub fn energy(&self, log_lengths: &[f64]) -> EnergyBreakdown {
        self.energy_at(&self.lengths(log_lengths))
    }

    fn evaluate_lengths(&self, lengths: &[f64], grad: Option<&mut [f64]>) -> EnergyBreakdown {
        let segments = lengths.len();
        let frames = self.frames();
        let s = self.sharpness;
        let margin = PLATEAU_CUTOFF / s;
        let last = frames as f64;
        let clip = |x: f64| x.clamp(0.0, last) as usize;

        // d E_o / d(start of n) and d E_o / d(end of n)
        let mut d_start = vec![0.0; segments];
        let mut d_end = vec![0.0; segments];
        let mut observation = 0.0;
        let mut start = 0.0;

        for n in 0..segments {
            let end = start + lengths[n];
            let row = self.nll.row(n);
            let lo = clip((start - margin).ceil());
            let hi = clip((end + margin).floor() + 1.0).max(lo);
            let mut inner_lo = clip((start + margin).ceil()).clamp(lo, hi);
            let mut inner_hi = clip((end - margin).floor() + 1.0).clamp(lo, hi);
            if inner_lo >= inner_hi {
                inner_lo = hi;
                inner_hi = hi;
            }

            let mut ds = 0.0;
            let mut de = 0.0;
            let mut edge = |t: usize| {
                let x = t as f64;
                let u = (s * (x - end)).clamp(-EXP_CLAMP, EXP_CLAMP);
                let v = (s * (start - x)).clamp(-EXP_CLAMP, EXP_CLAMP);
                let eu = u.exp();
                let ev = v.exp();
                let gu = 1.0 / (1.0 + eu);
                let gv = 1.0 / (1.0 + ev);
                let f = gu * gv;
                let p = row[t];
                observation += f * p;
                de += s * f * eu * gu * p;
                ds -= s * f * ev * gv * p;
            };
            for t in lo..inner_lo {
                edge(t);
            }
            for t in inner_hi..hi {
                edge(t);
            }
            observation += self.prefix[[n, inner_hi]] - self.prefix[[n, inner_lo]];
            d_start[n] = ds;
            d_end[n] = de;
            start = end;
        }

        let length = match grad {
            None => length_terms(lengths, &self.centers, &self.scales, self.family, None),
            Some(g) => {
                let length = length_terms(lengths, &self.centers, &self.scales, self.family, Some(g));
                // Segment k's length moves its own end and every later start and end.
                let mut tail = 0.0;
                for k in (0..segments).rev() {
                    if k + 1 < segments {
                        tail += d_start[k + 1];
                    }
                    tail += d_end[k];
                    g[k] = tail + self.beta * g[k];
                }
                length
            }
        };
        EnergyBreakdown::new(observation, length, self.beta)
    }
}

/// Total approximate energy at explicit lengths, with expected lengths from
/// the length model.
pub fn total_energy(
    lengths: &LengthConfig,
    probs: &ProbMatrix,
    transcript: &Transcript,
    model: &LengthModel,
    cfg: &FifaConfig,
) -> EnergyBreakdown {
    Objective::from_model(probs, transcript, model, cfg).energy_at(lengths.values())
}

/// Gradient of the total approximate energy with respect to log-lengths, with
/// expected lengths from the length model.
pub fn energy_gradient(
    log_lengths: &[f64],
    probs: &ProbMatrix,
    transcript: &Transcript,
    model: &LengthModel,
    cfg: &FifaConfig,
) -> Vec<f64> {
    Objective::from_model(probs, transcript, model, cfg)
        .energy_and_gradient(log_lengths)
        .1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LengthFamily;

    fn lc(v: &[f64]) -> LengthConfig {
        LengthConfig::new(v.to_vec()).unwrap()
    }

    #[test]
    fn plateau_examples() {
        let p = PlateauParams {
            center: 10.0,
            half_width: 5.0,
            sharpness: 2.0,
        };
        let expected = 1.0 / ((-10f64).exp() + 1.0).powi(2);
        assert!((plateau(10.0, &p) - expected).abs() < 1e-15);
        assert!((plateau(10.0, &p) - 0.99991).abs() < 1e-5);

        let sharp = PlateauParams {
            center: 0.0,
            half_width: 10.0,
            sharpness: 50.0,
        };
        assert!((plateau(10.0, &sharp) - 0.5).abs() < 1e-12);

        for d in [0.3, 1.0, 4.7, 12.0] {
            assert!((plateau(10.0 + d, &p) - plateau(10.0 - d, &p)).abs() < 1e-15);
        }
        let far = plateau(1e6, &p);
        assert!(far.is_finite() && far >= 0.0);
    }

    #[test]
    fn nll_examples() {
        let e = (-1f64).exp();
        let probs = ProbMatrix::from_rows(&[vec![1.0, 0.0], vec![e, 1.0 - e], vec![0.25, 0.75]], None).unwrap();
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let p = nll_matrix(&probs, &tr);
        assert_eq!(p.dim(), (2, 3));
        assert!(p[[0, 0]].abs() < 1e-7);
        assert!((p[[0, 1]] - 1.0).abs() < 1e-7);
        for n in 0..2 {
            for t in 0..3 {
                let scalar = -probs.log_prob(t, tr.labels()[n]);
                assert_eq!(p[[n, t]], scalar);
            }
        }
        assert!((p[[1, 2]] + 0.75f64.ln()).abs() < 1e-7);
    }

    #[test]
    fn mask_examples() {
        let single = mask_from_lengths(&lc(&[20.0]), 20, 20.0);
        assert!(single.iter().all(|&v| v >= 0.49));
        assert!(single.iter().skip(1).take(18).all(|&v| v > 0.999));

        let m = mask_from_lengths(&lc(&[5.0, 5.0]), 10, 10.0);
        assert!((m[[0, 2]] - 1.0).abs() < 1e-6);
        assert!(m[[0, 7]] < 1e-6);
        assert!((m[[1, 7]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sharp_mask_approaches_hard_mask() {
        let lengths = [4.0, 7.0, 5.0];
        let soft = mask_from_lengths(&lc(&lengths), 16, 100.0);
        let hard = hard_mask(&[4, 7, 5], 16);
        for ((n, t), &v) in soft.indexed_iter() {
            let boundary = [0usize, 4, 11, 16].contains(&t);
            if !boundary {
                assert!((v - hard[[n, t]]).abs() < 1e-12, "n={n} t={t} v={v}");
            }
        }
    }

    #[test]
    fn observation_energy_examples() {
        let p = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(observation_energy(&p, &Array2::zeros((2, 3))), 0.0);
        let m = Array2::from_shape_vec((2, 3), vec![0.5, 0.0, 1.0, 0.25, 1.0, 0.0]).unwrap();
        assert!((observation_energy(&p, &m) - (0.5 + 3.0 + 1.0 + 5.0)).abs() < 1e-12);
        let hard = hard_mask(&[1, 2], 3);
        assert_eq!(observation_energy(&p, &hard), 1.0 + 5.0 + 6.0);
    }

    #[test]
    fn length_energy_examples() {
        let model = LengthModel::new(LengthFamily::Poisson, vec![6.0, 7.0], vec![1.0, 1.0]).unwrap();
        let one = Transcript::new(vec![0]).unwrap();
        let two = Transcript::new(vec![0, 1]).unwrap();
        assert_eq!(
            length_energy(&lc(&[6.0, 7.0]), &two, &model, RelaxedFamily::Laplace),
            0.0
        );
        assert_eq!(length_energy(&lc(&[4.0]), &one, &model, RelaxedFamily::Laplace), 2.0);
        assert_eq!(
            length_energy(&lc(&[4.0, 7.0]), &two, &model, RelaxedFamily::Gaussian),
            4.0
        );
    }

    #[test]
    fn windowed_energy_matches_dense() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|t| {
                let a = 0.1 + 0.8 * ((t as f64) * 0.37).sin().abs();
                vec![a, (1.0 - a) / 2.0, (1.0 - a) / 2.0]
            })
            .collect();
        let probs = ProbMatrix::from_rows(&rows, None).unwrap();
        let tr = Transcript::new(vec![0, 1, 2, 0]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 3, 15.0).unwrap();
        for sharpness in [0.1, 1.75, 15.0, 100.0] {
            let cfg = FifaConfig {
                sharpness,
                beta: 0.0,
                ..Default::default()
            };
            let lengths = lc(&[12.3, 20.1, 9.9, 17.7]);
            let dense = observation_energy(&nll_matrix(&probs, &tr), &mask_from_lengths(&lengths, 60, sharpness));
            let fast = total_energy(&lengths, &probs, &tr, &model, &cfg);
            assert!(
                (dense - fast.observation).abs() <= 1e-9 * dense.abs().max(1.0),
                "s={sharpness}: {dense} vs {}",
                fast.observation
            );
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let probs = ProbMatrix::from_rows(&vec![vec![0.7, 0.3]; 6], None).unwrap();
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 2.0).unwrap();
        let lengths = lc(&[2.5, 3.5]);
        for beta in [0.0, 0.05, 3.0] {
            let cfg = FifaConfig {
                beta,
                ..Default::default()
            };
            let e = total_energy(&lengths, &probs, &tr, &model, &cfg);
            let obs = observation_energy(&nll_matrix(&probs, &tr), &mask_from_lengths(&lengths, 6, cfg.sharpness));
            let len = length_energy(&lengths, &tr, &model, cfg.length_family);
            assert!((e.observation - obs).abs() < 1e-9);
            assert!((e.length - len).abs() < 1e-12);
            assert!((e.total - (obs + beta * len)).abs() < 1e-9);
        }
        let at_mean = lc(&[2.0, 2.0]);
        let cfg = FifaConfig {
            beta: 1e6,
            ..Default::default()
        };
        let e = total_energy(&at_mean, &probs, &tr, &model, &cfg);
        assert_eq!(e.total, e.observation);
    }

    #[test]
    fn laplace_gradient_sign() {
        let probs = ProbMatrix::from_rows(&vec![vec![0.5, 0.5]; 40], None).unwrap();
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let model = LengthModel::uniform(LengthFamily::Poisson, 2, 10.0).unwrap();
        let cfg = FifaConfig {
            beta: 1e4,
            normalize_lengths: false,
            length_family: RelaxedFamily::Laplace,
            ..Default::default()
        };
        let lengths = [25.0f64, 15.0];
        let log_l: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
        let g = energy_gradient(&log_l, &probs, &tr, &model, &cfg);
        for (gk, lk) in g.iter().zip(lengths) {
            let length_part = cfg.beta * lk;
            assert!(gk.signum() > 0.0);
            assert!((gk - length_part).abs() / length_part < 1e-3);
        }
    }
}
