use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ambical_core::annotators::{annotate_dataset_with, sample_annotations_with, SamplingMode};
use ambical_core::calibrators::{apply_all, CalibratorModel};
use ambical_core::harness::{
    self, check_propositions, emit_report, fit_method, load_dataset, run_ablation, run_benchmark,
    write_dataset, write_json, AblationAxis, ExperimentConfig, MethodId, ReportFormats, Target,
};
use ambical_core::metrics::{evaluate, McConfig, DEFAULT_BINS};
use ambical_core::toy::{run_toy_experiment, write_points_csv, ToyConfig};
use ambical_core::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Ambiguity-aware post-hoc calibration of classifier logits.
#[derive(Debug, Parser)]
#[command(name = "ambical", version)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one calibrator on a whole dataset file.
    Fit(FitArgs),
    /// Evaluate a fitted model on a dataset file.
    Eval(EvalArgs),
    /// Run the benchmark grid of a config.
    Bench(BenchArgs),
    /// Sweep calibration-set size, annotation count or MCTS sample count.
    Ablate(AblateArgs),
    /// Simulate annotators from a confusion matrix.
    Simulate(SimulateArgs),
    /// Run the three-cluster toy experiment.
    Toy(ToyArgs),
    /// Check the temperature ordering and entropy monotonicity on a benchmark.
    CheckTheory(ConfigArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Voted,
    Soft,
    Mc,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Voted => Target::Voted,
            TargetArg::Soft => Target::Soft,
            TargetArg::Mc => Target::Mc,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Resample,
    Nested,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Resample => SamplingMode::Resample,
            ModeArg::Nested => SamplingMode::Nested,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Calsize,
    Annotations,
    #[value(name = "mcts-s")]
    MctsS,
}

impl From<AxisArg> for AblationAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Calsize => AblationAxis::Calsize,
            AxisArg::Annotations => AblationAxis::Annotations,
            AxisArg::MctsS => AblationAxis::MctsS,
        }
    }
}

#[derive(Debug, clap::Args)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Method id, e.g. ts, slts, mcts, lsts, vs, dirichlet-soft.
    #[arg(long)]
    method: MethodId,
    /// Override the method's supervision.
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Annotation draws per example for MC targets.
    #[arg(long = "mc-s", default_value_t = 1)]
    mc_s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "mc-s", default_value_t = 100)]
    mc_s: usize,
    #[arg(long = "mc-seed", default_value_t = 0)]
    mc_seed: u64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Metrics file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset file; overrides the config's `dataset`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "AMBICAL_OUT", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Report formats to write.
    #[arg(long, value_delimiter = ',', default_value = "json,csv,md")]
    format: Vec<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Md,
}

#[derive(Debug, clap::Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// Confusion-matrix file, or `isic` for the shipped dermatology preset.
    #[arg(long)]
    confusion: String,
    /// Annotations per example.
    #[arg(long, default_value_t = 9)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset whose voted labels serve as consensus; its supervision is replaced.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Consensus classes to simulate when no dataset is given; one per class by default.
    #[arg(long, value_delimiter = ',', conflicts_with = "dataset")]
    consensus: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "resample")]
    mode: ModeArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "AMBICAL_OUT", default_value = ".")]
    out: PathBuf,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    harness::report::to_json_string(value)
}

fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, ambical_core::LogitDataset)> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| io_error(&args.config, e))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    let path = match (&args.dataset, &cfg.dataset) {
        (Some(p), _) => p.clone(),
        // Relative to the config file.
        (None, Some(p)) => args.config.parent().unwrap_or(Path::new(".")).join(p),
        (None, None) => {
            return Err(Error::Input(
                "no dataset: pass --dataset or set it in the config".into(),
            ))
        }
    };
    if args.dataset.is_some() {
        cfg.dataset = args.dataset.clone();
    }
    let ds = load_dataset(&path)?;
    Ok((cfg, ds))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn fit(args: FitArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let method = match args.target {
        Some(t) => args.method.with_target(t.into())?,
        None => args.method,
    };
    if method == MethodId::OracleTs {
        return Err(Error::Input(
            "oracle-ts is only available inside `bench`".into(),
        ));
    }
    let cfg = ExperimentConfig {
        methods: vec![method],
        seeds: vec![args.seed],
        mcts_s: args.mc_s,
        ..Default::default()
    };
    cfg.validate()?;
    if method.needs_raw_annotations() && !ds.has_annotations() {
        return Err(Error::Input(format!(
            "method {method} needs raw annotations on every example"
        )));
    }
    let fitted = fit_method(method, &ds, &ds, &cfg, args.seed)?;
    emit(args.out.as_deref(), &to_json(&fitted.model)?)
}

fn eval(args: EvalArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let text = std::fs::read_to_string(&args.model).map_err(|e| io_error(&args.model, e))?;
    let model = CalibratorModel::from_json(&text)?;
    let probs = apply_all(&model, &ds.logits())?;
    let mc = McConfig {
        s: args.mc_s,
        seed: args.mc_seed,
        b: args.bins,
    };
    let report = evaluate(
        &probs,
        &ds.pi_hats(),
        &ds.voted_labels(),
        model.temperature(),
        mc,
    )?;
    emit(args.out.as_deref(), &to_json(&report)?)
}

fn bench(args: BenchArgs) -> Result<()> {
    let (cfg, ds) = load_config(&args.common)?;
    let report = run_benchmark(&ds, &cfg)?;
    let formats = ReportFormats {
        json: args.format.contains(&FormatArg::Json),
        csv: args.format.contains(&FormatArg::Csv),
        markdown: args.format.contains(&FormatArg::Md),
    };
    for path in emit_report(&report, formats, &args.common.out)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let (cfg, ds) = load_config(&args.common)?;
    let report = run_ablation(&ds, &cfg, args.axis.into())?;
    create_dir(&args.common.out)?;
    let path = args.common.out.join("ablation.json");
    write_json(&path, &report)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct SimulatedRecord {
    consensus: usize,
    annotations: Vec<usize>,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let c = harness::bench::load_confusion(&args.confusion)?;
    let mode = SamplingMode::from(args.mode);
    let mut buf = Vec::new();
    if let Some(path) = &args.dataset {
        let ds = load_dataset(path)?;
        let annotated =
            annotate_dataset_with(&ds, &ds.voted_labels(), &c, args.m, args.seed, mode)?;
        write_dataset(&annotated, &mut buf)?;
    } else {
        let consensus = args
            .consensus
            .clone()
            .unwrap_or_else(|| (0..c.k()).collect());
        let sets = sample_annotations_with(&consensus, &c, args.m, args.seed, mode)?;
        for (&y, a) in consensus.iter().zip(sets) {
            let rec = SimulatedRecord {
                consensus: y,
                annotations: a.labels().to_vec(),
            };
            buf.extend(serde_json::to_string(&rec)?.as_bytes());
            buf.push(b'\n');
        }
    }
    emit(
        args.out.as_deref(),
        std::str::from_utf8(&buf).expect("json output is utf-8"),
    )
}

fn toy(args: ToyArgs) -> Result<()> {
    let cfg = ToyConfig::default().with_seed(args.seed);
    let (report, points) = run_toy_experiment(&cfg)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("toy_report.json"), &report)?;
    let md = args.out.join("toy_report.md");
    std::fs::write(&md, report.to_markdown()).map_err(|e| io_error(&md, e))?;
    let csv_path = args.out.join("toy_points.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    write_points_csv(&points, std::io::BufWriter::new(file))?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn check_theory(args: ConfigArgs) -> Result<()> {
    let (mut cfg, ds) = load_config(&args)?;
    for m in [MethodId::Ts, MethodId::Slts] {
        if !cfg.methods.contains(&m) {
            cfg.methods.push(m);
        }
    }
    let report = run_benchmark(&ds, &cfg)?;
    let check = check_propositions(&report, &ds, &cfg)?;
    create_dir(&args.out)?;
    let path = args.out.join("theory.json");
    write_json(&path, &check)?;
    for o in &check.temperature_ordering {
        let fmt = |t: Option<f64>| t.map_or("-".to_string(), |t| format!("{t:.3}"));
        println!(
            "seed {}: T_TS = {} T_SLTS = {} holds = {}{}",
            o.seed,
            fmt(o.t_ts),
            fmt(o.t_slts),
            o.holds,
            o.label
                .as_deref()
                .map(|l| format!(" ({l})"))
                .unwrap_or_default()
        );
    }
    for e in &check.entropy_monotonicity {
        let rho = e
            .spearman
            .map_or("undefined".to_string(), |r| format!("{r:.3}"));
        println!(
            "seed {}: entropy spearman = {rho} (threshold {}) passes = {}",
            e.seed, check.spearman_threshold, e.passes
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
        Command::Simulate(a) => simulate(a),
        Command::Toy(a) => toy(a),
        Command::CheckTheory(a) => check_theory(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(Error::Input(format!("cannot start thread pool: {e}"))),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
