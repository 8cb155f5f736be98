use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use segalign::data::{load_length_model, load_probs, load_transcript, load_transcript_dir, ClassMap, ProbFormat};
use segalign::exact::{select_transcript_exact, viterbi_with_sampling};
use segalign::fifa::{fifa_align, init_lengths, select_transcript_fifa};
use segalign::{DecodeResult, EnergyBreakdown, InitMode, LengthFamily, LengthModel, ProbMatrix, Transcript};

use crate::config::{emit_json, ConfigArg, ConfigFile, ExactFlags, FifaFlags};
use crate::error::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Fifa,
    Both,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Frame-wise probability matrix (.csv or .segp).
    #[arg(long)]
    pub probs: PathBuf,
    /// csv or packed; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<ProbFormat>,
    /// Transcript file: space-separated class names.
    #[arg(long, conflicts_with = "candidates", required_unless_present = "candidates")]
    pub transcript: Option<PathBuf>,
    /// Directory of candidate transcripts; the best-scoring one is chosen.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Fifa)]
    pub method: Method,
    /// Length model JSON. Defaults to a uniform Poisson model with mean T/N.
    #[arg(long)]
    pub length_model: Option<PathBuf>,
    /// Initial FIFA lengths: model or equal.
    #[arg(long)]
    pub init: Option<InitMode>,
    #[command(flatten)]
    pub fifa: FifaFlags,
    #[command(flatten)]
    pub exact: ExactFlags,
    /// Write the FIFA optimization trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Serialize)]
struct MethodOutput {
    method: &'static str,
    transcript_index: Option<usize>,
    transcript: Vec<String>,
    lengths: Vec<usize>,
    real_lengths: Option<Vec<f64>>,
    labels: Vec<String>,
    log_prob: f64,
    energy: Option<EnergyBreakdown>,
    elapsed_seconds: f64,
}

#[derive(Debug, Serialize)]
struct InferOutput {
    probs: String,
    frames: usize,
    classes: usize,
    results: Vec<MethodOutput>,
}

/// Loads a length model and reorders it to the probability matrix's classes
/// when it carries class names. Without a file, every class gets `fallback`.
pub fn resolve_length_model(path: Option<&Path>, classes: &ClassMap, fallback: f64) -> CliResult<LengthModel> {
    let Some(path) = path else {
        return Ok(LengthModel::uniform(LengthFamily::Poisson, classes.len(), fallback)?);
    };
    let (model, names) = load_length_model(path)?;
    let Some(names) = names else {
        if model.classes() != classes.len() {
            return Err(segalign::Error::Validation(format!(
                "{}: length model has {} classes, probabilities have {}",
                path.display(),
                model.classes(),
                classes.len()
            ))
            .into());
        }
        return Ok(model);
    };
    let by_name = ClassMap::new(names)?;
    let mut expected = Vec::with_capacity(classes.len());
    let mut scale = Vec::with_capacity(classes.len());
    for name in classes.names() {
        let idx = by_name
            .get(name)
            .ok_or_else(|| segalign::Error::Validation(format!("{}: no length for class {name:?}", path.display())))?;
        expected.push(model.expected[idx]);
        scale.push(model.scale[idx]);
    }
    Ok(LengthModel::new(model.family, expected, scale)?)
}

fn describe(
    method: &'static str,
    index: Option<usize>,
    transcript: &Transcript,
    result: DecodeResult,
    classes: &ClassMap,
) -> MethodOutput {
    let name = |c: usize| classes.name(c).unwrap_or("?").to_string();
    let mut labels = Vec::with_capacity(result.lengths.iter().sum());
    for (&c, &l) in transcript.labels().iter().zip(&result.lengths) {
        labels.extend(std::iter::repeat_n(name(c), l));
    }
    MethodOutput {
        method,
        transcript_index: index,
        transcript: transcript.labels().iter().map(|&c| name(c)).collect(),
        lengths: result.lengths,
        real_lengths: result.real_lengths,
        labels,
        log_prob: result.log_prob,
        energy: result.energy,
        elapsed_seconds: result.elapsed,
    }
}

pub fn run(args: InferArgs) -> CliResult<()> {
    if args.trace.is_some() && args.method == Method::Exact {
        return Err(Failure::usage("--trace needs --method fifa or both"));
    }
    let file = ConfigFile::load(args.config.config.as_deref())?;
    let fifa_cfg = args.fifa.resolve(file.fifa.unwrap_or_default());
    let exact_cfg = args.exact.resolve(file.exact.unwrap_or_default());
    let init = args.init.or(file.init).unwrap_or(InitMode::Model);
    fifa_cfg.validate()?;
    exact_cfg.validate()?;

    let format = args.format.unwrap_or_else(|| ProbFormat::from_path(&args.probs));
    let probs: ProbMatrix = load_probs(&args.probs, format)?;
    let classes = ClassMap::new(probs.class_names().to_vec())?;
    let frames = probs.frames();

    let (candidates, single) = match (&args.transcript, &args.candidates) {
        (Some(path), _) => (vec![load_transcript(path, &classes)?], true),
        (None, Some(dir)) => (load_transcript_dir(dir, &classes)?, false),
        (None, None) => return Err(Failure::usage("either --transcript or --candidates is required")),
    };
    let mean_segments = candidates.iter().map(Transcript::len).sum::<usize>() as f64 / candidates.len() as f64;
    let model = resolve_length_model(args.length_model.as_deref(), &classes, frames as f64 / mean_segments)?;

    let mut results = Vec::new();
    if matches!(args.method, Method::Exact | Method::Both) {
        let (index, result) = if single {
            (0, viterbi_with_sampling(&probs, &candidates[0], &model, &exact_cfg)?)
        } else {
            select_transcript_exact(&probs, &candidates, &model, &exact_cfg)?
        };
        results.push(describe(
            "exact",
            (!single).then_some(index),
            &candidates[index],
            result,
            &classes,
        ));
    }
    if matches!(args.method, Method::Fifa | Method::Both) {
        let index = if single {
            0
        } else {
            select_transcript_fifa(&probs, &candidates, &model, init, &fifa_cfg)?.0
        };
        let transcript = &candidates[index];
        let start = init_lengths(init, transcript, &model, frames)?;
        let (result, trace) = fifa_align(&probs, transcript, &start, &model, &fifa_cfg)?;
        if let Some(path) = &args.trace {
            let out = File::create(path).map_err(|e| Failure::io(path, e))?;
            trace.write_csv(BufWriter::new(out)).map_err(|e| Failure::io(path, e))?;
        }
        results.push(describe(
            "fifa",
            (!single).then_some(index),
            transcript,
            result,
            &classes,
        ));
    }

    let output = InferOutput {
        probs: args.probs.display().to_string(),
        frames,
        classes: classes.len(),
        results,
    };
    emit_json(&output, args.output.as_deref())
}
