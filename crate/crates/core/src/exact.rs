//! Exact alignment of a transcript to frame-wise probabilities by dynamic
//! programming over segment boundaries, with a cap on segment length.
//!
//! The recursion keeps, for every segment index `n` and end frame `t`, the best
//! log score of any alignment of the first `n + 1` segments to frames `0..t`.
//! Extending a hypothesis inside a segment adds the frame's log probability;
//! closing a segment of length `l` adds the Poisson log prior of `l`. The last
//! segment's prior is added when the video ends. This is the usual max-product
//! recursion over (frame, current segment length, segment index), collapsed so
//! that only segment ends are stored: the cost is `O(L N T)` time and
//! `O(N T)` memory.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fifa::EnergyBreakdown;
use crate::types::{round_lengths, LengthConfig, LengthFamily, LengthModel, ProbMatrix, Transcript};

/// Segment-length cap used by the compared weakly supervised systems.
pub const DEFAULT_MAX_SEGMENT_LEN: usize = 2000;

/// Largest number of length compositions [`brute_force_align`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactConfig {
    /// Longest allowed segment, in frames.
    pub max_segment_len: usize,
    /// Decode every `stride`-th frame; 1 decodes at full resolution.
    pub frame_sample_stride: usize,
    /// Optional pruning: only segment lengths within this window, centred on
    /// the class's expected length, are hypothesized.
    pub length_beam: Option<usize>,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            max_segment_len: DEFAULT_MAX_SEGMENT_LEN,
            frame_sample_stride: 1,
            length_beam: None,
        }
    }
}

impl ExactConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_segment_len == 0 {
            return Err(Error::Validation("max segment length must be >= 1".into()));
        }
        if self.frame_sample_stride == 0 {
            return Err(Error::Validation("frame sample stride must be >= 1".into()));
        }
        if self.length_beam == Some(0) {
            return Err(Error::Validation("length beam must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output of any decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Integral segment lengths summing to the video length.
    pub lengths: Vec<usize>,
    /// Log probability of the returned alignment: frame log likelihoods plus
    /// Poisson log priors of the segment lengths.
    pub log_prob: f64,
    /// Wall-clock seconds spent decoding.
    pub elapsed: f64,
    /// Approximate energy at the real-valued lengths (gradient-based decoding only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyBreakdown>,
    /// Real-valued lengths before rounding (gradient-based decoding only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_lengths: Option<Vec<f64>>,
}

/// `ln(l!)` for `l = 0..=max`.
fn log_factorials(max: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(max + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for l in 1..=max {
        acc += (l as f64).ln();
        table.push(acc);
    }
    table
}

/// Poisson log probability of a segment of `len` frames with mean `mean`.
pub fn poisson_log_pmf(len: usize, mean: f64) -> f64 {
    let log_fact: f64 = (2..=len).map(|k| (k as f64).ln()).sum();
    len as f64 * mean.ln() - mean - log_fact
}

/// Log probability of an alignment: sum of frame log likelihoods under the
/// labeling plus the Poisson log prior of every segment length.
pub fn score_alignment(
    probs: &ProbMatrix,
    transcript: &Transcript,
    lengths: &[usize],
    model: &LengthModel,
) -> Result<f64> {
    if lengths.len() != transcript.len() {
        return Err(Error::Validation("one length per transcript entry required".into()));
    }
    if lengths.iter().sum::<usize>() != probs.frames() {
        return Err(Error::Validation(format!(
            "lengths sum to {}, video has {} frames",
            lengths.iter().sum::<usize>(),
            probs.frames()
        )));
    }
    let mut score = 0.0;
    let mut start = 0;
    for (&label, &len) in transcript.labels().iter().zip(lengths) {
        for t in start..start + len {
            score += probs.log_prob(t, label);
        }
        score += poisson_log_pmf(len, model.expected[label]);
        start += len;
    }
    Ok(score)
}

fn check_inputs(probs: &ProbMatrix, transcript: &Transcript, model: &LengthModel) -> Result<()> {
    transcript.check_classes(probs.classes())?;
    model.validate()?;
    model.check_transcript(transcript)?;
    if model.family != LengthFamily::Poisson {
        return Err(Error::Unsupported(format!(
            "exact inference needs a Poisson length model, got {:?}",
            model.family
        )));
    }
    if transcript.len() > probs.frames() {
        return Err(Error::Infeasible(format!(
            "{} segments cannot fit into {} frames",
            transcript.len(),
            probs.frames()
        )));
    }
    Ok(())
}

/// Exact alignment at full frame resolution. `cfg.frame_sample_stride` is
/// ignored here; see [`viterbi_with_sampling`].
pub fn viterbi_align(
    probs: &ProbMatrix,
    transcript: &Transcript,
    model: &LengthModel,
    cfg: &ExactConfig,
) -> Result<DecodeResult> {
    let start = Instant::now();
    cfg.validate()?;
    check_inputs(probs, transcript, model)?;
    let (lengths, log_prob) = viterbi_core(probs, transcript, model, cfg)?;
    Ok(DecodeResult {
        lengths,
        log_prob,
        elapsed: start.elapsed().as_secs_f64(),
        energy: None,
        real_lengths: None,
    })
}

#[allow(clippy::needless_range_loop)]
fn viterbi_core(
    probs: &ProbMatrix,
    transcript: &Transcript,
    model: &LengthModel,
    cfg: &ExactConfig,
) -> Result<(Vec<usize>, f64)> {
    let frames = probs.frames();
    let labels = transcript.labels();
    let segments = labels.len();
    let max_len = cfg.max_segment_len.min(frames);
    if frames > segments * max_len {
        return Err(Error::Infeasible(format!(
            "{frames} frames cannot be covered by {segments} segments of at most {max_len} frames"
        )));
    }

    let log_fact = log_factorials(max_len);
    let width = frames + 1;

    // cum[t] = sum of log p(c_n | x_s) for s < t, for the current segment.
    let mut cum = vec![0.0; width];
    // prior[l] = Poisson log prior of length l for the current segment.
    let mut prior = vec![f64::NEG_INFINITY; max_len + 1];
    // best[n * width + t]: best score with segment n ending at frame t.
    let mut best = vec![f64::NEG_INFINITY; segments * width];
    let mut back = vec![0u32; segments * width];
    // shifted[s] = best[n-1][s] - cum[s]
    let mut shifted = vec![f64::NEG_INFINITY; width];

    for n in 0..segments {
        let label = labels[n];
        for t in 0..frames {
            cum[t + 1] = cum[t] + probs.log_prob(t, label);
        }
        let mean = model.expected[label];
        let ln_mean = mean.ln();
        for l in 1..=max_len {
            prior[l] = l as f64 * ln_mean - mean - log_fact[l];
        }
        let (beam_lo, beam_hi) = match cfg.length_beam {
            Some(w) => {
                let lo = (mean - w as f64 / 2.0).ceil().max(1.0) as usize;
                let hi = (mean + w as f64 / 2.0).floor().max(lo as f64) as usize;
                (lo, hi)
            }
            None => (1, usize::MAX),
        };

        let row = n * width;
        let t_first = n + 1;
        let t_last = frames - (segments - 1 - n);

        if n == 0 {
            for t in t_first..=t_last.min(max_len) {
                if t >= beam_lo && t <= beam_hi {
                    best[row + t] = cum[t] + prior[t];
                    back[row + t] = t as u32;
                }
            }
        } else {
            let prev = (n - 1) * width;
            for s in 0..width {
                shifted[s] = best[prev + s] - cum[s];
            }
            for t in t_first..=t_last {
                let lo = beam_lo;
                let hi = max_len.min(t - n).min(beam_hi);
                let mut top = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for l in lo..=hi {
                    let v = shifted[t - l] + prior[l];
                    if v > top {
                        top = v;
                        arg = l;
                    }
                }
                if arg > 0 {
                    best[row + t] = top + cum[t];
                    back[row + t] = arg as u32;
                }
            }
        }
    }

    let last = (segments - 1) * width;
    let log_prob = best[last + frames];
    if !log_prob.is_finite() {
        return Err(Error::Infeasible(
            "no alignment satisfies the length constraints".into(),
        ));
    }
    let mut lengths = vec![0; segments];
    let mut t = frames;
    for n in (0..segments).rev() {
        let l = back[n * width + t] as usize;
        lengths[n] = l;
        t -= l;
    }
    debug_assert_eq!(t, 0);
    Ok((lengths, log_prob))
}

/// Exact alignment on a temporally subsampled video.
///
/// Decodes every `stride`-th frame with expected lengths and the length cap
/// scaled by `1 / stride`, then stretches the lengths back and re-apportions
/// them onto the full video. The reported log probability is evaluated at full
/// resolution.
pub fn viterbi_with_sampling(
    probs: &ProbMatrix,
    transcript: &Transcript,
    model: &LengthModel,
    cfg: &ExactConfig,
) -> Result<DecodeResult> {
    let stride = cfg.frame_sample_stride;
    if stride <= 1 {
        return viterbi_align(probs, transcript, model, cfg);
    }
    let start = Instant::now();
    cfg.validate()?;
    check_inputs(probs, transcript, model)?;
    let coarse = probs.subsample(stride)?;
    if coarse.frames() < transcript.len() {
        return Err(Error::Infeasible(format!(
            "{} sampled frames cannot hold {} segments",
            coarse.frames(),
            transcript.len()
        )));
    }
    let coarse_model = LengthModel {
        family: model.family,
        expected: model.expected.iter().map(|m| m / stride as f64).collect(),
        scale: model.scale.clone(),
    };
    let coarse_cfg = ExactConfig {
        max_segment_len: cfg.max_segment_len.div_ceil(stride),
        frame_sample_stride: 1,
        length_beam: cfg.length_beam.map(|w| w.div_ceil(stride)),
    };
    let (coarse_lengths, _) = viterbi_core(&coarse, transcript, &coarse_model, &coarse_cfg)?;
    let stretched = LengthConfig::new(coarse_lengths.iter().map(|&l| (l * stride) as f64).collect())?;
    let lengths = round_lengths(&stretched, probs.frames())?;
    let log_prob = score_alignment(probs, transcript, &lengths, model)?;
    Ok(DecodeResult {
        lengths,
        log_prob,
        elapsed: start.elapsed().as_secs_f64(),
        energy: None,
        real_lengths: None,
    })
}

/// Exhaustive search over all compositions of `T` into `N` positive lengths.
/// Only meant as a reference for small instances.
pub fn brute_force_align(probs: &ProbMatrix, transcript: &Transcript, model: &LengthModel) -> Result<DecodeResult> {
    let start = Instant::now();
    check_inputs(probs, transcript, model)?;
    let frames = probs.frames();
    let segments = transcript.len();
    let count = binomial((frames - 1) as u64, (segments - 1) as u64);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{count} length compositions exceed the limit of {BRUTE_FORCE_LIMIT}"
        )));
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(segments);
    let mut visit = |lengths: &[usize]| -> Result<()> {
        let score = score_alignment(probs, transcript, lengths, model)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, lengths.to_vec()));
        }
        Ok(())
    };
    compositions(frames, segments, &mut current, &mut visit)?;
    let (log_prob, lengths) = best.expect("at least one composition exists");
    Ok(DecodeResult {
        lengths,
        log_prob,
        elapsed: start.elapsed().as_secs_f64(),
        energy: None,
        real_lengths: None,
    })
}

fn compositions(
    remaining: usize,
    parts: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if parts == 1 {
        current.push(remaining);
        visit(current)?;
        current.pop();
        return Ok(());
    }
    for first in 1..=remaining - (parts - 1) {
        current.push(first);
        compositions(remaining - first, parts - 1, current, visit)?;
        current.pop();
    }
    Ok(())
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Aligns every candidate transcript and keeps the most likely one. Ties go to
/// the lowest index.
pub fn select_transcript_exact(
    probs: &ProbMatrix,
    candidates: &[Transcript],
    model: &LengthModel,
    cfg: &ExactConfig,
) -> Result<(usize, DecodeResult)> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate transcripts".into()));
    }
    let results: Vec<Result<DecodeResult>> = candidates
        .par_iter()
        .map(|c| viterbi_with_sampling(probs, c, model, cfg))
        .collect();
    pick_best(results, |r| r.log_prob)
}

/// Picks the result with the highest key, lowest index first among equals.
pub(crate) fn pick_best(
    results: Vec<Result<DecodeResult>>,
    key: impl Fn(&DecodeResult) -> f64,
) -> Result<(usize, DecodeResult)> {
    let mut failures = Vec::new();
    let mut best: Option<(usize, DecodeResult)> = None;
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(r) => {
                if best.as_ref().is_none_or(|(_, b)| key(&r) > key(b)) {
                    best = Some((i, r));
                }
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    best.ok_or(Error::AllCandidatesFailed(failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_model(means: &[f64]) -> LengthModel {
        LengthModel::new(LengthFamily::Poisson, means.to_vec(), vec![1.0; means.len()]).unwrap()
    }

    fn one_hot(labels: &[usize], classes: usize) -> ProbMatrix {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..classes).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
            .collect();
        ProbMatrix::from_rows(&rows, None).unwrap()
    }

    #[test]
    fn one_hot_recovers_ground_truth() {
        let probs = one_hot(&[0, 0, 1], 2);
        let model = poisson_model(&[2.0, 1.0]);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let r = viterbi_align(&probs, &tr, &model, &ExactConfig::default()).unwrap();
        assert_eq!(r.lengths, vec![2, 1]);
        let prior = poisson_log_pmf(2, 2.0) + poisson_log_pmf(1, 1.0);
        assert!((r.log_prob - prior).abs() < 1e-6, "{} vs {prior}", r.log_prob);
    }

    #[test]
    fn four_frame_example_matches_hand_products() {
        let pa = [0.9, 0.9, 0.2, 0.1];
        let rows: Vec<Vec<f64>> = pa.iter().map(|&p| vec![p, 1.0 - p]).collect();
        let probs = ProbMatrix::from_rows(&rows, None).unwrap();
        let model = poisson_model(&[2.0, 2.0]);
        let tr = Transcript::new(vec![0, 1]).unwrap();

        // Direct evaluation of the three splits.
        let pois = |l: u32| 2f64.powi(l as i32) * (-2f64).exp() / (1..=l).product::<u32>() as f64;
        let split = |k: usize| {
            let a: f64 = pa[..k].iter().product();
            let b: f64 = pa[k..].iter().map(|p| 1.0 - p).product();
            a * b * pois(k as u32) * pois((4 - k) as u32)
        };
        let scores = [split(1), split(2), split(3)];
        let best = (1..=3)
            .max_by(|&a, &b| scores[a - 1].total_cmp(&scores[b - 1]))
            .unwrap();
        assert_eq!(best, 2);

        let r = viterbi_align(&probs, &tr, &model, &ExactConfig::default()).unwrap();
        assert_eq!(r.lengths, vec![2, 2]);
        assert!((r.log_prob - scores[1].ln()).abs() < 1e-9);
    }

    #[test]
    fn brute_force_small_cases() {
        let probs = one_hot(&[0, 0, 0], 1);
        let model = poisson_model(&[3.0]);
        let tr = Transcript::new(vec![0]).unwrap();
        assert_eq!(brute_force_align(&probs, &tr, &model).unwrap().lengths, vec![3]);
    }

    #[test]
    fn brute_force_guard() {
        let rows = vec![vec![0.5, 0.5]; 200];
        let probs = ProbMatrix::from_rows(&rows, None).unwrap();
        let tr = Transcript::new(vec![0, 1, 0, 1, 0, 1]).unwrap();
        let err = brute_force_align(&probs, &tr, &poisson_model(&[30.0, 30.0])).unwrap_err();
        assert!(matches!(err, Error::TooLarge(_)));
    }

    #[test]
    fn infeasible_and_unsupported() {
        let probs = one_hot(&[0, 1], 2);
        let model = poisson_model(&[1.0, 1.0]);
        let cfg = ExactConfig::default();
        let long = Transcript::new(vec![0, 1, 0]).unwrap();
        assert!(matches!(
            viterbi_align(&probs, &long, &model, &cfg),
            Err(Error::Infeasible(_))
        ));

        let probs = one_hot(&[0; 10], 2);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let capped = ExactConfig {
            max_segment_len: 4,
            ..cfg
        };
        assert!(matches!(
            viterbi_align(&probs, &tr, &model, &capped),
            Err(Error::Infeasible(_))
        ));

        let laplace = LengthModel::uniform(LengthFamily::Laplace, 2, 1.0).unwrap();
        assert!(matches!(
            viterbi_align(&probs, &tr, &laplace, &cfg),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn cap_is_respected() {
        let probs = one_hot(&[0, 0, 0, 0, 0, 0, 1, 1], 2);
        let model = poisson_model(&[6.0, 2.0]);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let cfg = ExactConfig {
            max_segment_len: 4,
            ..Default::default()
        };
        let r = viterbi_align(&probs, &tr, &model, &cfg).unwrap();
        assert_eq!(r.lengths, vec![4, 4]);
    }

    #[test]
    fn stride_one_is_identity() {
        let probs = one_hot(&[0, 0, 1, 1, 1, 0], 2);
        let model = poisson_model(&[2.0, 3.0]);
        let tr = Transcript::new(vec![0, 1, 0]).unwrap();
        let cfg = ExactConfig::default();
        let a = viterbi_align(&probs, &tr, &model, &cfg).unwrap();
        let b = viterbi_with_sampling(&probs, &tr, &model, &cfg).unwrap();
        assert_eq!(a.lengths, b.lengths);
        assert_eq!(a.log_prob, b.log_prob);
    }

    #[test]
    fn stride_two_on_even_segments() {
        // Frames 0,2,4 of A,A,B,B,A,A are A,B,A: one coarse frame per segment.
        let probs = one_hot(&[0, 0, 1, 1, 0, 0], 2);
        let model = poisson_model(&[2.0, 2.0]);
        let tr = Transcript::new(vec![0, 1, 0]).unwrap();
        let cfg = ExactConfig {
            frame_sample_stride: 2,
            ..Default::default()
        };
        let r = viterbi_with_sampling(&probs, &tr, &model, &cfg).unwrap();
        assert_eq!(r.lengths, vec![2, 2, 2]);
        let cfg = ExactConfig {
            frame_sample_stride: 4,
            ..cfg
        };
        assert!(matches!(
            viterbi_with_sampling(&probs, &tr, &model, &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn length_beam_restricts_lengths() {
        let probs = one_hot(&[0, 0, 0, 0, 0, 0, 1, 1], 2);
        let model = poisson_model(&[3.0, 5.0]);
        let tr = Transcript::new(vec![0, 1]).unwrap();
        let cfg = ExactConfig {
            length_beam: Some(2),
            ..Default::default()
        };
        let r = viterbi_align(&probs, &tr, &model, &cfg).unwrap();
        assert_eq!(r.lengths, vec![4, 4]);
        let wide = ExactConfig {
            length_beam: Some(100),
            ..cfg
        };
        assert_eq!(viterbi_align(&probs, &tr, &model, &wide).unwrap().lengths, vec![6, 2]);
    }

    #[test]
    fn selection_examples() {
        let model = poisson_model(&[2.0, 2.0]);
        let cfg = ExactConfig::default();
        let a = Transcript::new(vec![0]).unwrap();
        let b = Transcript::new(vec![1]).unwrap();
        let probs = one_hot(&[0, 0, 0], 2);
        assert_eq!(
            select_transcript_exact(&probs, &[a.clone(), b], &model, &cfg)
                .unwrap()
                .0,
            0
        );
        assert_eq!(
            select_transcript_exact(&probs, std::slice::from_ref(&a), &model, &cfg)
                .unwrap()
                .0,
            0
        );

        let probs = one_hot(&[0, 0, 1], 2);
        let ab = Transcript::new(vec![0, 1]).unwrap();
        let ba = Transcript::new(vec![1, 0]).unwrap();
        let s_ab = brute_force_align(&probs, &ab, &model).unwrap().log_prob;
        let s_ba = brute_force_align(&probs, &ba, &model).unwrap().log_prob;
        assert!(s_ab > s_ba);
        let (idx, r) = select_transcript_exact(&probs, &[ab.clone(), ba], &model, &cfg).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(r.lengths, vec![2, 1]);
        let (idx, _) = select_transcript_exact(&probs, &[ab.clone(), ab], &model, &cfg).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn selection_reports_all_failures() {
        let probs = one_hot(&[0, 1], 2);
        let model = poisson_model(&[1.0, 1.0]);
        let long = Transcript::new(vec![0, 1, 0]).unwrap();
        let err = select_transcript_exact(&probs, &[long.clone(), long], &model, &ExactConfig::default()).unwrap_err();
        match err {
            Error::AllCandidatesFailed(f) => assert_eq!(f.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(select_transcript_exact(&probs, &[], &model, &ExactConfig::default()).is_err());
    }

    #[test]
    fn poisson_pmf_matches_direct_formula() {
        let direct = (3.5f64.powi(4) * (-3.5f64).exp() / 24.0).ln();
        assert!((poisson_log_pmf(4, 3.5) - direct).abs() < 1e-12);
    }
}
