//! Command-line surface. Exit status: 0 success, 1 usage, 2 input or format,
//! 3 numeric failure.

use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use odetext_core::eval::{self, EvalOptions, EvalResult, LogisticConfig, Scorer};
use odetext_core::interpret::{self, Bounds, Plane};
use odetext_core::linalg::{Matrix, Vector};
use odetext_core::model::{self, LabeledDataset, NodeClassifier, TrainConfig, DEFAULT_HIDDEN_DIM};
use odetext_core::odesolve::{Method, SolverConfig};
use odetext_core::text::{TfidfModel, DEFAULT_MAX_FEATURES};

use crate::dataset::{self, Format};
use crate::error::{CliError, CliResult};
use crate::modelfile::{ModelFile, TrainingMeta};
use crate::render;
use crate::synth::{self, Task};

#[derive(Debug, Parser)]
#[command(
    name = "odetext",
    version,
    about = "Neural-ODE text classifier with saliency and vector-field views"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit TF-IDF, train the classifier and write a model file.
    Train(TrainArgs),
    /// Print benchmark metrics of a model on a labelled dataset.
    Eval(EvalArgs),
    /// Predict labels for `--text` or for each line of standard input.
    Predict(PredictArgs),
    /// Print the most salient vocabulary words per class.
    Explain(ExplainArgs),
    /// Export the learned vector field on a 2D plane of hidden space.
    VectorField(VectorFieldArgs),
    /// Write a seeded synthetic corpus as `text,label` CSV.
    GenSynthetic(GenArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file (CSV with a header row, or JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, default_value = "text")]
    pub text_field: String,
    #[arg(long, default_value = "label")]
    pub label_field: String,
}

impl DataArgs {
    fn format(&self) -> Format {
        self.format.unwrap_or_else(|| Format::from_path(&self.data))
    }

    fn records(&self) -> CliResult<Vec<(String, String)>> {
        dataset::read_records(&self.data, self.format(), &self.text_field, &self.label_field)
    }

    /// Dataset with labels mapped through `order` (or inferred when `None`).
    fn labeled(&self, order: Option<&[String]>) -> CliResult<LabeledDataset> {
        let (texts, raw): (Vec<String>, Vec<String>) = self.records()?.into_iter().unzip();
        if texts.is_empty() {
            return Err(CliError::input(format!("{}: no records", self.data.display())));
        }
        LabeledDataset::from_raw_labels(texts, &raw, order)
            .map_err(|e| CliError::input(format!("{}: {e}", self.data.display())))
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// ODE solver: euler, rk4 or dopri45.
    #[arg(long, default_value = "dopri45", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 1e-6)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub atol: f64,
    #[arg(long, default_value_t = 0.1)]
    pub initial_step: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: usize,
    /// Step count of the fixed-step methods.
    #[arg(long, default_value_t = 100)]
    pub fixed_steps: usize,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_name(s).ok_or_else(|| format!("unknown method '{s}' (expected euler, rk4 or dopri45)"))
}

impl SolverArgs {
    fn config(&self) -> CliResult<SolverConfig> {
        let cfg = SolverConfig {
            method: self.method,
            rtol: self.rtol,
            atol: self.atol,
            initial_step: self.initial_step,
            max_steps: self.max_steps,
            fixed_step_count: self.fixed_steps,
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Class order as comma-separated label names; by default numeric labels
    /// sort numerically and others lexicographically.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Hidden dimension d.
    #[arg(long, default_value_t = DEFAULT_HIDDEN_DIM)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_FEATURES)]
    pub max_features: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also train and evaluate an interpretable baseline.
    #[arg(long, value_parser = ["logistic"])]
    pub baseline: Option<String>,
    /// Training data for the baseline (same fields and format as --data).
    #[arg(long, requires = "baseline")]
    pub train_data: Option<PathBuf>,
    /// Gradient-descent iterations of the logistic baseline.
    #[arg(long, default_value_t = 500)]
    pub baseline_iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    pub baseline_lr: f64,
    /// External `label,score` file, one pair per line; score is the
    /// probability of the positive class.
    #[arg(long)]
    pub scores_file: Option<PathBuf>,
    /// Row name of the external scores.
    #[arg(long, default_value = "external")]
    pub scores_name: String,
    /// Decision threshold on the positive-class probability.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Positive class name for binary F1 and AUROC (default: the second class).
    #[arg(long)]
    pub positive: Option<String>,
    /// For multiclass models report F1 of --positive instead of macro F1.
    #[arg(long)]
    pub no_macro_f1: bool,
    /// For multiclass models report mean one-vs-rest AUROC.
    #[arg(long)]
    pub one_vs_rest: bool,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
    pub text: Option<String>,
    /// Read one document per line from standard input.
    #[arg(long)]
    pub stdin: bool,
    /// Append the terminal hidden state `h1` to each line.
    #[arg(long)]
    pub hidden: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Documents to aggregate over (only the text field is read).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, default_value = "text")]
    pub text_field: String,
    /// Class name to explain.
    #[arg(long, conflicts_with = "all_classes")]
    pub class: Option<String>,
    /// One table per class (the default when --class is absent).
    #[arg(long)]
    pub all_classes: bool,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: u64,
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VectorFieldArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output CSV with columns x,y,dx,dy.
    #[arg(long)]
    pub out: PathBuf,
    /// xmin,xmax,ymin,ymax
    #[arg(long, default_value = "-3,3,-3,3", allow_hyphen_values = true, value_parser = parse_bounds)]
    pub bounds: Bounds,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    pub grid_n: u64,
    /// Two hidden coordinates spanning the plane, as `i,j`.
    #[arg(long, value_parser = parse_axes, conflicts_with = "projection")]
    pub plane: Option<(usize, usize)>,
    /// CSV file with two rows of d numbers spanning the plane.
    #[arg(long)]
    pub projection: Option<PathBuf>,
    #[arg(long, default_value_t = interpret::DEFAULT_FIELD_TIME)]
    pub t: f64,
    /// Documents whose hidden-state paths are drawn (text field only).
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    pub text_field: String,
    /// Output CSV of the paths (default: next to --out with a .traj.csv suffix).
    #[arg(long, requires = "trajectories")]
    pub trajectories_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(2..))]
    pub samples: u64,
    /// Also write an SVG quiver plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn parse_axes(s: &str) -> Result<(usize, usize), String> {
    let (i, j) = s.split_once(',').ok_or_else(|| format!("expected i,j, got '{s}'"))?;
    let axis = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad axis '{v}': {e}"));
    Ok((axis(i)?, axis(j)?))
}

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad bound '{p}': {e}")))
        .collect::<Result<_, _>>()?;
    let [xmin, xmax, ymin, ymax] = parts[..] else {
        return Err(format!("expected xmin,xmax,ymin,ymax, got {} values", parts.len()));
    };
    let b = Bounds { xmin, xmax, ymin, ymax };
    b.validate().map_err(|e| e.to_string())?;
    Ok(b)
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "admit")]
    pub task: Task,
}

/// Parses `args` (program name first) and runs the command, returning the
/// exit status.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(&a, out),
        Command::Eval(a) => evaluate(&a, out),
        Command::Predict(a) => predict(&a, input, out),
        Command::Explain(a) => explain(&a, out),
        Command::VectorField(a) => vector_field(&a, out),
        Command::GenSynthetic(a) => gen_synthetic(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_failed(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("cannot write {}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| write_failed(path, e))
}

fn load_model(path: &Path) -> CliResult<ModelFile> {
    ModelFile::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::input(format!("cannot write output: {e}")))
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let solver = a.solver.config()?;
    if a.max_features == 0 || a.hidden_dim == 0 {
        return Err(CliError::usage("--max-features and --hidden-dim must be positive"));
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        l2_penalty: a.l2,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(CliError::usage)?;

    let data = a.data.labeled(a.labels.as_deref())?;
    let tfidf = TfidfModel::fit(&data.texts, Some(a.max_features)).map_err(CliError::input)?;
    if tfidf.dim() == 0 {
        return Err(CliError::input(format!(
            "{}: no tokens in any document",
            a.data.data.display()
        )));
    }
    let init = NodeClassifier::init(tfidf.dim(), a.hidden_dim, data.label_names.clone(), solver, a.seed)
        .map_err(CliError::input)?;
    let mut io_error = None;
    let (trained, curve) = model::train_with(&init, &data, &cfg, &tfidf, |epoch, loss| {
        if let Err(e) = writeln!(out, "epoch {} loss {loss:.6}", epoch + 1) {
            io_error.get_or_insert(e);
        }
    })
    .map_err(|e| CliError::from_core(e, CliError::Input))?;
    if let Some(e) = io_error {
        return Err(CliError::input(format!("cannot write output: {e}")));
    }

    let file = ModelFile {
        tfidf,
        model: trained,
        meta: TrainingMeta {
            seed: a.seed,
            epochs: a.epochs as u64,
            final_loss: curve.last().copied(),
        },
    };
    file.save(&a.out).map_err(|e| write_failed(&a.out, e))
}

/// `label,score` pairs; a first line whose score does not parse is a header.
fn read_scores(path: &Path, label_names: &[String]) -> CliResult<(Vec<usize>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let (mut labels, mut scores) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::input(format!("{}: line {}: {msg}", path.display(), i + 1));
        let (label, score) = line.split_once(',').ok_or_else(|| bad("expected label,score".into()))?;
        let score: f64 = match score.trim().parse() {
            Ok(s) => s,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(bad(format!("bad score: {e}"))),
        };
        let label = label.trim();
        let index = label_names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| bad(format!("label {label:?} is not one of {label_names:?}")))?;
        labels.push(index);
        scores.push(score);
    }
    if labels.is_empty() {
        return Err(CliError::input(format!("{}: no scores", path.display())));
    }
    Ok((labels, scores))
}

fn evaluate(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let mf = load_model(&a.model)?;
    let names = &mf.model.label_names;
    let positive = match &a.positive {
        Some(p) => names
            .iter()
            .position(|n| n == p)
            .ok_or_else(|| CliError::usage(format!("unknown class '{p}'; valid classes: {}", names.join(", "))))?,
        None => 1,
    };
    let opts = EvalOptions {
        threshold: a.threshold,
        positive,
        macro_f1: !a.no_macro_f1,
        one_vs_rest: a.one_vs_rest,
    };
    let test = a.data.labeled(Some(names))?;

    let baseline = match (&a.baseline, &a.train_data) {
        (Some(_), None) => return Err(CliError::usage("--baseline needs --train-data")),
        (Some(_), Some(path)) => {
            let train_args = DataArgs {
                data: path.clone(),
                format: a.data.format,
                text_field: a.data.text_field.clone(),
                label_field: a.data.label_field.clone(),
            };
            let train = train_args.labeled(Some(names))?;
            let cfg = LogisticConfig {
                iterations: a.baseline_iterations,
                learning_rate: a.baseline_lr,
                l2_penalty: 0.0,
            };
            Some(eval::train_logistic(&train, &mf.tfidf, &cfg).map_err(|e| CliError::from_core(e, CliError::Input))?)
        }
        (None, _) => None,
    };

    let mut models: Vec<(&str, bool, &dyn Scorer)> = vec![("node", true, &mf.model)];
    if let Some(b) = &baseline {
        models.push(("logistic", true, b));
    }
    let mut rows =
        eval::benchmark(&models, &test, &mf.tfidf, &opts).map_err(|e| CliError::from_core(e, CliError::Input))?;

    if let Some(path) = &a.scores_file {
        if names.len() != 2 {
            return Err(CliError::usage("--scores-file needs a two-class model"));
        }
        let (labels, scores) = read_scores(path, names)?;
        let probs: Vec<Vector> = scores
            .iter()
            .map(|&s| {
                let mut p = Vector::from_slice(&[1.0 - s, 1.0 - s]);
                p[positive] = s;
                p
            })
            .collect();
        let row: EvalResult = eval::evaluate(&a.scores_name, false, &labels, &probs, &opts)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }

    emit(out, &render::benchmark_table(&rows))?;
    if let Some(path) = &a.csv_out {
        render::benchmark_csv(&rows, create(path)?).map_err(|e| write_failed(path, e))?;
    }
    Ok(())
}

fn predict(a: &PredictArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()> {
    let mf = load_model(&a.model)?;
    let texts: Vec<String> = match &a.text {
        Some(t) => vec![t.clone()],
        None => input
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::input(format!("cannot read standard input: {e}")))?,
    };
    for text in texts {
        let f = mf
            .model
            .forward(&mf.tfidf.transform(&text))
            .map_err(|e| CliError::from_core(e, CliError::Input))?;
        let label = f.probs.argmax().expect("at least two classes");
        let mut line = mf.model.label_names[label].clone();
        for (name, p) in mf.model.label_names.iter().zip(f.probs.iter()) {
            line.push_str(&format!(" {name}:{p:.6}"));
        }
        if a.hidden {
            let h: Vec<String> = f.h1.iter().map(|v| v.to_string()).collect();
            line.push_str(&format!(" h1:{}", h.join(",")));
        }
        emit(out, &format!("{line}\n"))?;
    }
    Ok(())
}

fn explain(a: &ExplainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mf = load_model(&a.model)?;
    let names = &mf.model.label_names;
    let classes: Vec<usize> = match &a.class {
        Some(c) => vec![names
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| CliError::usage(format!("unknown class '{c}'; valid classes: {}", names.join(", "))))?],
        None => (0..names.len()).collect(),
    };
    let format = a.format.unwrap_or_else(|| Format::from_path(&a.data));
    let docs = dataset::read_texts(&a.data, format, &a.text_field)?;
    if docs.is_empty() {
        return Err(CliError::input(format!("{}: no records", a.data.display())));
    }
    let k = a.top_k as usize;
    let mut reports = Vec::new();
    for class in classes {
        let report = interpret::class_saliency(&mf.model, &mf.tfidf, &docs, class)
            .map_err(|e| CliError::from_core(e, CliError::Input))?;
        if !reports.is_empty() {
            emit(out, "\n")?;
        }
        emit(out, &render::saliency_table(&report, k))?;
        reports.push(report);
    }
    if let Some(path) = &a.csv_out {
        render::saliency_csv(&reports, k, create(path)?).map_err(|e| write_failed(path, e))?;
    }
    Ok(())
}

fn read_projection(path: &Path) -> CliResult<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    if refs.len() != 2 {
        return Err(CliError::input(format!(
            "{}: expected 2 rows, got {}",
            path.display(),
            refs.len()
        )));
    }
    Matrix::from_rows(&refs).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn vector_field(a: &VectorFieldArgs, out: &mut dyn Write) -> CliResult<()> {
    let mf = load_model(&a.model)?;
    let d = mf.model.hidden_dim();
    let plane = match (&a.plane, &a.projection) {
        (Some((i, j)), _) => Plane::Axes(*i, *j),
        (None, Some(path)) => Plane::Projection(read_projection(path)?),
        (None, None) => Plane::default(),
    };
    // the plane only depends on d, so a bad plane is a usage problem
    plane
        .basis(d)
        .map_err(|e| CliError::usage(format!("{e} (hidden dimension is {d})")))?;

    let grid = interpret::vector_field(&mf.model, &plane, a.bounds, a.grid_n as usize, a.t)
        .map_err(|e| CliError::from_core(e, CliError::Usage))?;
    let mut w = create(&a.out)?;
    render::field_csv(&grid, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| write_failed(&a.out, e))?;

    let mut paths = Vec::new();
    if let Some(data) = &a.trajectories {
        let docs = dataset::read_texts(data, Format::from_path(data), &a.text_field)?;
        paths = interpret::trajectories(&mf.model, &mf.tfidf, &docs, &plane, a.samples as usize)
            .map_err(|e| CliError::from_core(e, CliError::Input))?;
        let target = a
            .trajectories_out
            .clone()
            .unwrap_or_else(|| a.out.with_extension("traj.csv"));
        let mut w = create(&target)?;
        render::trajectories_csv(&paths, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| write_failed(&target, e))?;
        emit(
            out,
            &format!("wrote {} trajectories to {}\n", paths.len(), target.display()),
        )?;
    }
    if let Some(svg) = &a.svg {
        fs::write(svg, render::quiver_svg(&grid, &paths)).map_err(|e| write_failed(svg, e))?;
    }
    emit(
        out,
        &format!("wrote {} grid points to {}\n", grid.rows.len(), a.out.display()),
    )
}

fn gen_synthetic(a: &GenArgs) -> CliResult<()> {
    let docs = synth::generate(a.task, a.n as usize, a.seed);
    let mut w = create(&a.out)?;
    synth::write_csv(&docs, &mut w).map_err(|e| write_failed(&a.out, e))?;
    w.flush().map_err(|e| write_failed(&a.out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn bounds_parsing() {
        let b = parse_bounds("-3,3,-2.5,2").unwrap();
        assert_eq!((b.xmin, b.xmax, b.ymin, b.ymax), (-3.0, 3.0, -2.5, 2.0));
        assert!(parse_bounds("1,2,3").is_err());
        assert!(parse_bounds("3,-3,0,1").is_err());
        assert_eq!(parse_axes("2, 5"), Ok((2, 5)));
        assert!(parse_axes("2").is_err());
    }
}
