use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use segalign::data::{save_instance, synth_suite, ProbFormat};

use crate::config::{emit_json, ConfigArg, ConfigFile, SynthFlags};
use crate::error::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
    /// Number of instances; seeds run from --seed upwards.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// csv or packed.
    #[arg(long, default_value = "csv")]
    pub format: ProbFormat,
    /// Output directory, created if missing.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Serialize)]
struct Written {
    video_id: String,
    probs: PathBuf,
    gt: PathBuf,
    transcript: PathBuf,
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let file = ConfigFile::load(args.config.config.as_deref())?;
    let cfg = args.synth.resolve(file.synth.unwrap_or_default());
    if args.count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    let instances = synth_suite(&cfg, args.count)?;
    fs::create_dir_all(&args.output).map_err(|e| Failure::io(&args.output, e))?;
    let mut written = Vec::with_capacity(instances.len());
    for inst in &instances {
        let files = save_instance(&args.output, inst, args.format)?;
        written.push(Written {
            video_id: inst.video_id.clone(),
            probs: files.probs,
            gt: files.gt,
            transcript: files.transcript,
        });
    }
    emit_json(&written, None)
}
