use std::path::PathBuf;

use clap::Args;

use segalign::data::{load_segmentation_interning, save_metric_report, ClassMap};
use segalign::metrics::evaluate;

use crate::config::emit_json;
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels, one per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels, one per line.
    #[arg(long)]
    pub gt: PathBuf,
    /// Background label(s), excluded from mof_bg, IoU, IoD and F1.
    #[arg(long, value_delimiter = ',')]
    pub background: Vec<String>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let mut classes = ClassMap::default();
    let gt = load_segmentation_interning(&args.gt, &mut classes)?;
    let pred = load_segmentation_interning(&args.pred, &mut classes)?;
    // Background labels absent from both files cannot match any frame.
    let background: Vec<usize> = args.background.iter().filter_map(|b| classes.get(b)).collect();
    let report = evaluate(&pred, &gt, &background)?;
    if let Some(path) = &args.output {
        save_metric_report(path, &report)?;
    }
    emit_json(&report, None)
}
