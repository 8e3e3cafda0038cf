//! `renetseg` command line: synthetic data, training, inference, evaluation
//! and gradient checks.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use renetseg::data::{self, generate_synthetic, load_dataset, load_masks, read_pnm, save_record};
use renetseg::gradcheck::{gradient_suite, model_gradient_check, MODEL_STEP, MODEL_TOLERANCE};
use renetseg::metrics::{evaluate_dataset, format_key_values, format_report, DatasetEvaluation};
use renetseg::model::{forward, predict_mask, train, ModelParams, Sample};
use renetseg::{load_checkpoint, save_checkpoint, Error, RngState, Tensor};

pub use config::CliConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "renetseg",
    version,
    about = "Lesion segmentation with recurrent patch sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic image/mask pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train on a dataset directory and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict a binary mask for one P6 image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions, either from a model on a dataset or from a directory of masks.
    Eval {
        #[arg(long, requires = "data", conflicts_with_all = ["pred", "gt"])]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Exit with status 3 when macro Jaccard falls below this bound.
        #[arg(long)]
        min_jaccard: Option<f64>,
    },
    /// Finite-difference check of every layer and of the whole network.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

/// Runs one command line and returns its exit status.
pub fn run_cli<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{
                DisplayHelp, DisplayHelpOnMissingArgumentOrSubcommand, DisplayVersion,
            };
            return match e.kind() {
                DisplayHelp | DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
                _ => {
                    let _ = writeln!(err, "{}", e.render());
                    let _ = write!(err, "{}", Cli::command().render_help());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Synth {
            out: dir,
            count,
            seed,
            size,
        } => synth(&dir, count, seed, size, out),
        Command::Train {
            data,
            config,
            out: model,
            trace,
        } => run_train(&data, config.as_deref(), &model, trace.as_deref(), out),
        Command::Infer {
            model,
            image,
            out: mask,
        } => infer(&model, &image, &mask, out),
        Command::Eval {
            model,
            data,
            pred,
            gt,
            report,
            min_jaccard,
        } => eval(model, data, pred, gt, &report, min_jaccard, out),
        Command::Gradcheck { seed } => run_gradcheck(seed, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n");
            let _ = write!(err, "{}", Cli::command().render_help());
            EXIT_USAGE
        }
        Err(Failure::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DATA
        }
        Err(Failure::Check(m)) => {
            let _ = writeln!(err, "check failed: {m}");
            EXIT_CHECK
        }
    }
}

fn synth(dir: &Path, count: usize, seed: u64, size: usize, out: &mut dyn Write) -> Outcome {
    let records = generate_synthetic(seed, count, size)?;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    for r in &records {
        save_record(dir, r)?;
    }
    let _ = writeln!(
        out,
        "wrote {count} pairs of {size}x{size} to {}",
        dir.display()
    );
    Ok(())
}

fn run_train(
    data_dir: &Path,
    config: Option<&Path>,
    model: &Path,
    trace: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let cfg = match config {
        Some(p) => CliConfig::load(p).map_err(Failure::Data)?,
        None => CliConfig::default(),
    };
    let config = cfg.model_config();
    config.validate()?;
    let records = load_dataset(data_dir, Some(config.image_size))?;
    let total = records.len();
    let samples: Vec<Sample> = records
        .into_iter()
        .filter_map(|r| {
            r.mask.map(|mask| Sample {
                image: r.image,
                mask,
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no labelled images",
            data_dir.display()
        )));
    }
    let (params, history) = train(&config, &samples, &mut RngState::new(config.seed)?)?;
    let file = fs::File::create(model).map_err(|e| io_error(model, e))?;
    save_checkpoint(&params.to_checkpoint()?, std::io::BufWriter::new(file))?;
    if let Some(path) = trace {
        fs::write(path, history.to_csv()).map_err(|e| io_error(path, e))?;
    }
    let _ = writeln!(out, "trained on {} of {total} images", samples.len());
    if let Some(last) = history.last() {
        let _ = writeln!(
            out,
            "epoch {} loss {:.6} dice {:.6}",
            last.epoch, last.loss, last.dice
        );
    }
    let _ = writeln!(out, "wrote {}", model.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let ckpt = load_checkpoint(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))?;
    ModelParams::from_checkpoint(&ckpt)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn predict(params: &ModelParams, image: &Tensor) -> Result<Tensor, Failure> {
    let prob = forward(&params.config, &params.weights, image)?;
    Ok(predict_mask(&prob, params.config.threshold))
}

fn infer(model: &Path, image_path: &Path, mask_path: &Path, out: &mut dyn Write) -> Outcome {
    let params = load_model(model)?;
    let bytes = fs::read(image_path).map_err(|e| io_error(image_path, e))?;
    let image = read_pnm(&bytes).map_err(|e| e.in_file(image_path))?;
    let (h, w, c) = image.hwc()?;
    if c != 3 {
        return Err(Failure::Data(format!(
            "{}: expected a P6 colour image",
            image_path.display()
        )));
    }
    params.config.check_image_dims(h, w)?;
    let mask = predict(&params, &image)?;
    let file = fs::File::create(mask_path).map_err(|e| io_error(mask_path, e))?;
    data::write_pnm(&mask, std::io::BufWriter::new(file))?;
    let fg = mask.data().iter().filter(|&&v| v == 1.0).count();
    let _ = writeln!(
        out,
        "wrote {} ({fg} of {} pixels foreground)",
        mask_path.display(),
        h * w
    );
    Ok(())
}

fn eval(
    model: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    report: &Path,
    min_jaccard: Option<f64>,
    out: &mut dyn Write,
) -> Outcome {
    let evaluation = match (model, data_dir, pred, gt) {
        (Some(model), Some(dir), None, None) => eval_model(&model, &dir)?,
        (None, None, Some(pred), Some(gt)) => eval_masks(&pred, &gt)?,
        _ => {
            return Err(Failure::Usage(
                "eval needs either --model and --data or --pred and --gt".into(),
            ))
        }
    };
    let rows = [
        ("macro", evaluation.macro_avg),
        ("micro", evaluation.micro_avg),
    ];
    fs::write(report, format_key_values(&rows)).map_err(|e| io_error(report, e))?;
    let _ = write!(out, "{}", format_report(&rows));
    let _ = writeln!(out, "{} images", evaluation.per_image.len());
    if let Some(bound) = min_jaccard {
        if evaluation.macro_avg.ja < bound {
            return Err(Failure::Check(format!(
                "macro Jaccard {:.6} below {bound}",
                evaluation.macro_avg.ja
            )));
        }
    }
    Ok(())
}

fn eval_model(model: &Path, dir: &Path) -> Result<DatasetEvaluation, Failure> {
    let params = load_model(model)?;
    let s = params.config.image_size;
    let records: Vec<_> = load_dataset(dir, Some(s))?
        .into_iter()
        .filter(|r| r.mask.is_some())
        .collect();
    let preds = records
        .iter()
        .map(|r| predict(&params, &r.image))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(&Tensor, &Tensor)> = preds
        .iter()
        .zip(&records)
        .map(|(p, r)| (p, r.mask.as_ref().expect("filtered")))
        .collect();
    if pairs.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no labelled images",
            dir.display()
        )));
    }
    Ok(evaluate_dataset(&pairs)?)
}

fn eval_masks(pred_dir: &Path, gt_dir: &Path) -> Result<DatasetEvaluation, Failure> {
    let preds = load_masks(pred_dir)?;
    let gts = load_masks(gt_dir)?;
    let pred_ids: Vec<&str> = preds.iter().map(|(id, _)| id.as_str()).collect();
    let gt_ids: Vec<&str> = gts.iter().map(|(id, _)| id.as_str()).collect();
    if pred_ids != gt_ids {
        return Err(Error::Pairing(format!(
            "prediction ids {pred_ids:?} differ from ground-truth ids {gt_ids:?}"
        ))
        .into());
    }
    let pairs: Vec<(&Tensor, &Tensor)> = preds
        .iter()
        .zip(&gts)
        .map(|((_, p), (_, g))| (p, g))
        .collect();
    Ok(evaluate_dataset(&pairs)?)
}

fn run_gradcheck(seed: u64, out: &mut dyn Write) -> Outcome {
    let mut failed = Vec::new();
    for entry in gradient_suite(seed)? {
        let ok = entry.passed();
        let _ = writeln!(
            out,
            "{:<16} max_rel_error={:.3e} tolerance={:.0e} {}",
            entry.name,
            entry.max_rel_error,
            entry.tolerance,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(entry.name);
        }
    }
    let err = model_gradient_check(seed, 16, 200, MODEL_STEP)?;
    let ok = err < MODEL_TOLERANCE;
    let _ = writeln!(
        out,
        "{:<16} max_rel_error={err:.3e} tolerance={MODEL_TOLERANCE:.0e} {}",
        "network",
        if ok { "ok" } else { "FAIL" }
    );
    if !ok {
        failed.push("network".into());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient mismatch in {}",
            failed.join(", ")
        )))
    }
}
