//! Benchmark harness: sweeps one parameter over a set of instances and writes
//! one CSV row per (grid point, method, repeat) plus a median row per
//! (grid point, method).
//!
//! CSV columns, in order:
//! `scenario,point,method,param,value,repeat,instances,failures,workers,
//! mof,mof_bg,iou,iod,edit,f1_10,f1_25,f1_50,seconds`.
//! Metrics are means over the instances that decoded successfully; `seconds`
//! is the summed decode wall-clock (IO excluded). Median rows have
//! `repeat = median`. Metric cells are empty when every instance failed.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use segalign::data::{estimate_length_model, load_instance_dir, synth_suite, ClassMap, ProblemInstance, SynthConfig};
use segalign::exact::viterbi_with_sampling;
use segalign::fifa::{fifa_align, init_lengths};
use segalign::metrics::evaluate;
use segalign::types::frames_to_labels;
use segalign::{
    ExactConfig, FifaConfig, InitMode, LengthFamily, LengthModel, MetricReport, OptimizerKind, RelaxedFamily,
};

use crate::config::{emit_text, ConfigArg, ConfigFile, ExactFlags, FifaFlags, SynthFlags};
use crate::error::{CliResult, Failure};
use crate::infer::resolve_length_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// FIFA accuracy and time against the number of optimizer steps.
    StepsSweep,
    /// Exact inference with frame sampling (`4`) or a length beam (`beam=50`).
    ExactSamplingSweep,
    /// FIFA against the length-energy multiplier, both energy families.
    BetaSweep,
    /// FIFA against the learning rate, Adam and SGD.
    LrSweep,
    /// Model-based against equal initialization, both decoders.
    InitAblation,
    /// Exact inference against FIFA at default settings.
    SpeedupHeadToHead,
}

impl Scenario {
    fn default_grid(self) -> &'static str {
        match self {
            Scenario::StepsSweep => "0,2,5,10,30,50,60",
            Scenario::ExactSamplingSweep => "1,2,4,8,16,beam=20,beam=50",
            Scenario::BetaSweep => "0,0.01,0.05,0.1,0.5,1,10,100",
            Scenario::LrSweep => "0.001,0.01,0.05,0.1,0.3,1",
            Scenario::InitAblation => "model,equal",
            Scenario::SpeedupHeadToHead => "default",
        }
    }

    fn name(self) -> String {
        self.to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_string()
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    /// Comma-separated grid points; each scenario has a default.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Instance directory as written by `synth`. Synthetic instances are
    /// generated from the synth flags when omitted.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Number of synthetic instances to generate.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Synthetic training videos used to estimate the length model.
    #[arg(long, default_value_t = 100)]
    pub train_count: usize,
    #[command(flatten)]
    pub synth: SynthFlags,
    /// Length model JSON. Synthetic runs estimate one from separate training
    /// videos; instance directories fall back to a uniform mean of T/N.
    #[arg(long)]
    pub length_model: Option<PathBuf>,
    /// FIFA initialization outside the init ablation: model or equal.
    #[arg(long)]
    pub init: Option<InitMode>,
    #[command(flatten)]
    pub fifa: FifaFlags,
    #[command(flatten)]
    pub exact: ExactFlags,
    /// Worker threads decoding instances concurrently. Defaults to 1 for the
    /// head-to-head timing and to all cores otherwise.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Background class names, excluded from the background-aware metrics.
    #[arg(long, value_delimiter = ',')]
    pub background: Vec<String>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub scenario: String,
    pub point: usize,
    pub method: String,
    pub param: String,
    pub value: String,
    pub repeat: String,
    pub instances: usize,
    pub failures: usize,
    pub workers: usize,
    pub mof: Option<f64>,
    pub mof_bg: Option<f64>,
    pub iou: Option<f64>,
    pub iod: Option<f64>,
    pub edit: Option<f64>,
    pub f1_10: Option<f64>,
    pub f1_25: Option<f64>,
    pub f1_50: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
enum Decoder {
    Exact { cfg: ExactConfig, uniform: bool },
    Fifa { cfg: FifaConfig, init: InitMode },
}

struct Point {
    param: &'static str,
    value: String,
    runs: Vec<(String, Decoder)>,
}

fn parse_number<T: std::str::FromStr>(token: &str, what: &str) -> CliResult<T> {
    token
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("bad {what} grid point {token:?}")))
}

fn build_points(
    scenario: Scenario,
    grid: &[String],
    fifa: FifaConfig,
    exact: ExactConfig,
    init: InitMode,
) -> CliResult<Vec<Point>> {
    grid.iter()
        .map(|token| {
            let token = token.trim().to_string();
            let fifa_run = |cfg: FifaConfig| Decoder::Fifa { cfg, init };
            let point = match scenario {
                Scenario::StepsSweep => Point {
                    param: "steps",
                    runs: vec![(
                        "fifa".into(),
                        fifa_run(FifaConfig {
                            steps: parse_number(&token, "steps")?,
                            ..fifa
                        }),
                    )],
                    value: token,
                },
                Scenario::ExactSamplingSweep => {
                    let (param, cfg) = match token.strip_prefix("beam=") {
                        Some(w) => (
                            "beam",
                            ExactConfig {
                                length_beam: Some(parse_number(w, "beam")?),
                                ..exact
                            },
                        ),
                        None => (
                            "stride",
                            ExactConfig {
                                frame_sample_stride: parse_number(&token, "stride")?,
                                ..exact
                            },
                        ),
                    };
                    let value = token.strip_prefix("beam=").unwrap_or(&token).to_string();
                    let method = if param == "beam" {
                        "exact-beam-over-lengths"
                    } else {
                        "exact"
                    };
                    Point {
                        param,
                        value,
                        runs: vec![(method.into(), Decoder::Exact { cfg, uniform: false })],
                    }
                }
                Scenario::BetaSweep => {
                    let beta = parse_number(&token, "beta")?;
                    Point {
                        param: "beta",
                        runs: [
                            ("fifa-laplace", RelaxedFamily::Laplace),
                            ("fifa-gaussian", RelaxedFamily::Gaussian),
                        ]
                        .into_iter()
                        .map(|(name, length_family)| {
                            (
                                name.to_string(),
                                fifa_run(FifaConfig {
                                    beta,
                                    length_family,
                                    ..fifa
                                }),
                            )
                        })
                        .collect(),
                        value: token,
                    }
                }
                Scenario::LrSweep => {
                    let learning_rate = parse_number(&token, "learning rate")?;
                    Point {
                        param: "learning_rate",
                        runs: [("fifa-adam", OptimizerKind::Adam), ("fifa-sgd", OptimizerKind::Sgd)]
                            .into_iter()
                            .map(|(name, optimizer)| {
                                (
                                    name.to_string(),
                                    fifa_run(FifaConfig {
                                        learning_rate,
                                        optimizer,
                                        ..fifa
                                    }),
                                )
                            })
                            .collect(),
                        value: token,
                    }
                }
                Scenario::InitAblation => {
                    let mode: InitMode = token.parse()?;
                    Point {
                        param: "init",
                        runs: vec![
                            (
                                "exact".into(),
                                Decoder::Exact {
                                    cfg: exact,
                                    uniform: mode == InitMode::Equal,
                                },
                            ),
                            ("fifa".into(), Decoder::Fifa { cfg: fifa, init: mode }),
                        ],
                        value: token,
                    }
                }
                Scenario::SpeedupHeadToHead => Point {
                    param: "config",
                    runs: vec![
                        (
                            "exact".into(),
                            Decoder::Exact {
                                cfg: exact,
                                uniform: false,
                            },
                        ),
                        ("fifa".into(), fifa_run(fifa)),
                    ],
                    value: token,
                },
            };
            Ok(point)
        })
        .collect()
}

/// Decodes one instance; returns its metrics and decode seconds.
fn decode(
    inst: &ProblemInstance,
    decoder: Decoder,
    model: &LengthModel,
    background: &[usize],
) -> segalign::Result<(MetricReport, f64)> {
    let transcript = inst
        .transcript_or_gt()
        .ok_or_else(|| segalign::Error::Validation(format!("{} has no transcript", inst.video_id)))?;
    let gt = inst
        .gt
        .as_ref()
        .ok_or_else(|| segalign::Error::Validation(format!("{} has no ground truth", inst.video_id)))?;
    let frames = inst.probs.frames();
    let result = match decoder {
        Decoder::Exact { cfg, uniform } => {
            let model = if uniform {
                LengthModel::uniform(
                    LengthFamily::Poisson,
                    model.classes(),
                    frames as f64 / transcript.len() as f64,
                )?
            } else {
                model.clone()
            };
            viterbi_with_sampling(&inst.probs, &transcript, &model, &cfg)?
        }
        Decoder::Fifa { cfg, init } => {
            let start = init_lengths(init, &transcript, model, frames)?;
            fifa_align(&inst.probs, &transcript, &start, model, &cfg)?.0
        }
    };
    let pred = frames_to_labels(&transcript, &result.lengths)?;
    Ok((evaluate(&pred, gt, background)?, result.elapsed))
}

fn mean_report(reports: &[MetricReport]) -> Option<[f64; 8]> {
    if reports.is_empty() {
        return None;
    }
    let mut sums = [0.0; 8];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    Some(sums.map(|s| s / reports.len() as f64))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn fill_metrics(row: &mut Row, metrics: Option<[f64; 8]>) {
    let m = metrics.map(|m| m.map(Some)).unwrap_or([None; 8]);
    [
        row.mof, row.mof_bg, row.iou, row.iod, row.edit, row.f1_10, row.f1_25, row.f1_50,
    ] = m;
}

fn row_metrics(row: &Row) -> Option<[f64; 8]> {
    let cells = [
        row.mof, row.mof_bg, row.iou, row.iod, row.edit, row.f1_10, row.f1_25, row.f1_50,
    ];
    cells
        .iter()
        .all(Option::is_some)
        .then(|| cells.map(|c| c.unwrap_or_default()))
}

/// Synthetic defaults per scenario; the head-to-head uses long videos.
fn default_synth(scenario: Scenario) -> SynthConfig {
    match scenario {
        Scenario::SpeedupHeadToHead => SynthConfig {
            frames: 10_000,
            segments: 10,
            ..Default::default()
        },
        _ => SynthConfig::default(),
    }
}

pub fn run_rows(args: &BenchArgs) -> CliResult<Vec<Row>> {
    let file = ConfigFile::load(args.config.config.as_deref())?;
    let fifa = args.fifa.resolve(file.fifa.unwrap_or_default());
    let exact = args.exact.resolve(file.exact.unwrap_or_default());
    let init = args.init.or(file.init).unwrap_or(InitMode::Model);
    fifa.validate()?;
    exact.validate()?;
    if args.repeats == 0 {
        return Err(Failure::usage("--repeats must be at least 1"));
    }
    let grid: Vec<String> = if args.grid.is_empty() {
        args.scenario.default_grid().split(',').map(String::from).collect()
    } else {
        args.grid.clone()
    };
    let points = build_points(args.scenario, &grid, fifa, exact, init)?;

    let (instances, model) = match &args.instances {
        Some(dir) => {
            let instances = load_instance_dir(dir)?;
            let classes = ClassMap::new(instances[0].probs.class_names().to_vec())?;
            let mean = instances
                .iter()
                .map(|i| i.probs.frames() as f64 / i.transcript_or_gt().map_or(1, |t| t.len()) as f64)
                .sum::<f64>()
                / instances.len() as f64;
            let model = resolve_length_model(args.length_model.as_deref(), &classes, mean)?;
            (instances, model)
        }
        None => {
            let cfg = args
                .synth
                .resolve(file.synth.unwrap_or_else(|| default_synth(args.scenario)));
            if args.count == 0 {
                return Err(Failure::usage("--count must be at least 1"));
            }
            let instances = synth_suite(&cfg, args.count)?;
            let classes = ClassMap::new(instances[0].probs.class_names().to_vec())?;
            let model = match &args.length_model {
                Some(path) => resolve_length_model(Some(path), &classes, 1.0)?,
                None => {
                    // Training videos use seeds disjoint from the test seeds.
                    let train_cfg = SynthConfig {
                        seed: cfg.seed.wrapping_add(1 << 32),
                        ..cfg
                    };
                    let train: Vec<_> = synth_suite(&train_cfg, args.train_count.max(1))?
                        .into_iter()
                        .filter_map(|i| i.gt)
                        .collect();
                    let fallback = cfg.frames as f64 / cfg.segments as f64;
                    estimate_length_model(&train, cfg.classes, LengthFamily::Poisson, Some(fallback))?
                }
            };
            (instances, model)
        }
    };
    let classes = ClassMap::new(instances[0].probs.class_names().to_vec())?;
    let background: Vec<usize> = args.background.iter().filter_map(|b| classes.get(b)).collect();

    let workers = args
        .workers
        .or(file.workers)
        .unwrap_or(if args.scenario == Scenario::SpeedupHeadToHead {
            1
        } else {
            0
        });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {workers} workers: {e}")))?;
    let workers = pool.current_num_threads();

    let scenario = args.scenario.name();
    let mut rows = Vec::new();
    for (index, point) in points.iter().enumerate() {
        for (method, decoder) in &point.runs {
            let mut repeat_rows = Vec::with_capacity(args.repeats);
            for repeat in 0..args.repeats {
                let outcomes: Vec<segalign::Result<(MetricReport, f64)>> = pool.install(|| {
                    instances
                        .par_iter()
                        .map(|inst| decode(inst, *decoder, &model, &background))
                        .collect()
                });
                let ok: Vec<(MetricReport, f64)> = outcomes.into_iter().filter_map(Result::ok).collect();
                let reports: Vec<MetricReport> = ok.iter().map(|(r, _)| *r).collect();
                let mut row = Row {
                    scenario: scenario.clone(),
                    point: index,
                    method: method.clone(),
                    param: point.param.into(),
                    value: point.value.clone(),
                    repeat: repeat.to_string(),
                    instances: instances.len(),
                    failures: instances.len() - ok.len(),
                    workers,
                    mof: None,
                    mof_bg: None,
                    iou: None,
                    iod: None,
                    edit: None,
                    f1_10: None,
                    f1_25: None,
                    f1_50: None,
                    seconds: ok.iter().map(|(_, s)| s).sum(),
                };
                fill_metrics(&mut row, mean_report(&reports));
                repeat_rows.push(row);
            }
            let mut summary = repeat_rows[0].clone();
            summary.repeat = "median".into();
            summary.failures = repeat_rows.iter().map(|r| r.failures).max().unwrap_or(0);
            summary.seconds = median(repeat_rows.iter().map(|r| r.seconds).collect());
            let per_repeat: Option<Vec<[f64; 8]>> = repeat_rows.iter().map(row_metrics).collect();
            fill_metrics(
                &mut summary,
                per_repeat.map(|m| std::array::from_fn(|k| median(m.iter().map(|v| v[k]).collect()))),
            );
            rows.extend(repeat_rows);
            rows.push(summary);
        }
    }
    Ok(rows)
}

pub fn run(args: BenchArgs) -> CliResult<()> {
    let rows = run_rows(&args)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Failure::usage(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Failure::usage(e.to_string()))?;
    emit_text(text.trim_end().to_string(), args.output.as_deref())
}
