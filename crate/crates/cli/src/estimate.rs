use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use segalign::data::{
    estimate_length_model, length_model_json, load_class_names, load_segmentation, load_segmentation_interning,
    ClassMap,
};
use segalign::{LengthFamily, LengthModel, Segmentation};

use crate::config::emit_text;
use crate::error::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Directory of ground-truth label files.
    #[arg(long)]
    pub train: PathBuf,
    /// Only files whose names end with this suffix are read.
    #[arg(long, default_value = ".gt.txt")]
    pub suffix: String,
    /// JSON list of class names fixing the class order (for example a
    /// probability file's `.classes.json` sidecar). Without it, classes are
    /// numbered in order of first appearance.
    #[arg(long)]
    pub class_names: Option<PathBuf>,
    /// poisson, laplace or gaussian.
    #[arg(long, default_value = "poisson")]
    pub family: LengthFamily,
    /// Width of the relaxed length energy, shared by all classes.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Expected length for classes that never occur; fails without it.
    #[arg(long)]
    pub fill_missing: Option<f64>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn label_files(dir: &Path, suffix: &str) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(suffix))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(segalign::Error::Validation(format!("no files ending in {suffix:?} in {}", dir.display())).into());
    }
    Ok(files)
}

pub fn run(args: EstimateArgs) -> CliResult<()> {
    let files = label_files(&args.train, &args.suffix)?;
    let (classes, train): (ClassMap, Vec<Segmentation>) = match &args.class_names {
        Some(path) => {
            let classes = ClassMap::new(load_class_names(path)?)?;
            let train = files
                .iter()
                .map(|f| load_segmentation(f, &classes))
                .collect::<segalign::Result<_>>()?;
            (classes, train)
        }
        None => {
            let mut classes = ClassMap::default();
            let train = files
                .iter()
                .map(|f| load_segmentation_interning(f, &mut classes))
                .collect::<segalign::Result<_>>()?;
            (classes, train)
        }
    };
    let estimated = estimate_length_model(&train, classes.len(), args.family, args.fill_missing)?;
    let model = LengthModel::new(args.family, estimated.expected, vec![args.scale; classes.len()])?;
    let json = length_model_json(&model, Some(classes.names()))?;
    emit_text(json, args.output.as_deref())
}
