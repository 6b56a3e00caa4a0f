use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sgdnoise::data::{sample_chi_dataset, ChiDistribution, Dataset};
use sgdnoise::evt::{fit_max_growth, max_statistics, predicted_gamma};
use sgdnoise::mlp::{self, EarlyStopConfig, MlpParams, TmaxConfig};
use sgdnoise::perceptron;
use sgdnoise::plot::{emit_loglog_svg, render_boundary_2d, BoundaryOptions, LinearModel, PlotSpec};
use sgdnoise::scaling::{
    best_collapse_exponent, best_y_collapse_exponent, curves_from_records, exponent_grid, extract_crossover,
    fit_power_law, fit_two_var_scaling, ExponentReport,
};
use sgdnoise::sweep::{self, SweepSpec};
use sgdnoise::train::TrainConfig;
use sgdnoise::{derive_seed, mlp::TEST_SET_SIZE};

/// Default directory for output files when no path is given.
const OUT_DIR_VAR: &str = "SGDLAB_OUT";

#[derive(Parser)]
#[command(name = "sgdlab", version, about = "SGD temperature experiments on the margin hinge loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a teacher-student dataset and write it as CSV
    Sample(SampleArgs),
    /// Train a perceptron to zero hinge loss and print its record
    TrainPerceptron(TrainArgs),
    /// Train a ReLU network and print its record
    TrainMlp(MlpArgs),
    /// Run (or resume) a sweep described by a TOML file
    Sweep(SweepArgs),
    /// Fit y = c T^δ P^γ over stored records
    Fit(FitArgs),
    /// Find the abscissa exponent that best collapses curves
    Collapse(CollapseArgs),
    /// Monte Carlo growth of the maximum noise ratio
    Evt(EvtArgs),
    /// Largest converging temperature across α values
    Tmax(TmaxArgs),
    /// Log-log SVG plot of stored records
    Plot(PlotArgs),
    /// Render a trained 2-d decision boundary
    Boundary2d(BoundaryArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Shape of the density of the informative coordinate
    #[arg(long, default_value_t = 0.0)]
    chi: f64,
    /// Input dimension
    #[arg(long, short = 'd', default_value_t = 16)]
    dim: usize,
    /// Training set size
    #[arg(long = "p", short = 'p', default_value_t = 256)]
    p: usize,
    /// Seed of the training set
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Temperature η/B; ignored when --eta is given
    #[arg(long, default_value_t = 0.01)]
    temperature: f64,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, short = 'b', default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: u64,
    /// Held-out test points; 0 disables the test error
    #[arg(long, default_value_t = 0)]
    test_size: usize,
    /// Append the record to this JSONL file as well as printing it
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = match self.eta {
            Some(eta) => TrainConfig::new(self.alpha, eta, self.batch, self.seed)?,
            None => TrainConfig::from_temperature(self.alpha, self.temperature, self.batch, self.seed)?,
        };
        Ok(cfg.with_max_steps(self.max_steps))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Hinge,
    Xent,
}

#[derive(Args)]
struct MlpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Hinge)]
    loss: LossArg,
    /// Steps between early-stopping checkpoints
    #[arg(long, default_value_t = 64)]
    checkpoint_every: u64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// IDX image file; with --idx-labels, trains on digit parity instead of synthetic data
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep description
    #[arg(long, short)]
    config: PathBuf,
    /// JSONL store; completed runs in it are kept
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, short = 'j', default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct FitArgs {
    /// JSONL records
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value = "temperature")]
    x1: String,
    #[arg(long, default_value = "P")]
    x2: String,
    #[arg(long, default_value = "delta_w")]
    y: String,
    /// Print the b, γ, δ, γ/δ summary instead of a single fit
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct CollapseArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value = "temperature")]
    x: String,
    #[arg(long, default_value = "delta_w")]
    y: String,
    #[arg(long, default_value = "P")]
    group: String,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    amin: f64,
    #[arg(long, default_value_t = 1.5)]
    amax: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Also search the ordinate exponent at the best abscissa exponent
    #[arg(long)]
    with_y: bool,
    /// Fit plateau and power-law branch and report T_c scaling
    #[arg(long)]
    crossover: bool,
}

#[derive(Args)]
struct EvtArgs {
    #[arg(long, default_value_t = 0.0)]
    chi: f64,
    #[arg(long, default_value_t = 128)]
    pmin: usize,
    #[arg(long, default_value_t = 16384)]
    pmax: usize,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of every trial maximum
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TmaxArgs {
    #[command(flatten)]
    data: DataArgs,
    /// log₂ α values
    #[arg(long, value_delimiter = ',', default_values_t = vec![-10, -8, -6, -4], allow_hyphen_values = true)]
    log2_alpha: Vec<i32>,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, short = 'b', default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    tmin: f64,
    #[arg(long, default_value_t = 10.0)]
    tmax: f64,
    #[arg(long, default_value_t = 13)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value = "temperature")]
    x: String,
    #[arg(long, default_value = "delta_w")]
    y: String,
    #[arg(long, default_value = "P")]
    group: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x_rescale: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    y_rescale: f64,
    #[arg(long)]
    linear_x: bool,
    #[arg(long)]
    linear_y: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Perceptron,
    Mlp,
}

#[derive(Args)]
struct BoundaryArgs {
    #[arg(long, default_value_t = 0.0)]
    chi: f64,
    #[arg(long = "p", short = 'p', default_value_t = 64)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = ModelArg::Perceptron)]
    model: ModelArg,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 120)]
    resolution: usize,
    /// Number of input-gradient arrows along the boundary
    #[arg(long, default_value_t = 0)]
    arrows: usize,
    #[arg(long = "svg")]
    svg: Option<PathBuf>,
}

fn output_path(given: Option<&Path>, default_name: &str) -> Result<PathBuf> {
    if let Some(p) = given {
        return Ok(p.to_path_buf());
    }
    let dir = std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir.join(default_name))
}

fn synthetic(data: &DataArgs) -> Result<(ChiDistribution, Dataset)> {
    let dist = ChiDistribution::new(data.chi, data.dim)?;
    let ds = sample_chi_dataset(&dist, data.p, data.data_seed)?;
    Ok((dist, ds))
}

fn test_set(dist: &ChiDistribution, n: usize, data_seed: u64) -> Result<Option<Dataset>> {
    Ok(match n {
        0 => None,
        n => Some(sample_chi_dataset(dist, n, derive_seed(data_seed, 0x7e57))?),
    })
}

fn emit_record(rec: &sgdnoise::train::RunRecord, out: Option<&Path>) -> Result<()> {
    let line = serde_json::to_string(rec)?;
    println!("{line}");
    if let Some(path) = out {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<sgdnoise::train::RunRecord>> {
    sweep::load(path).with_context(|| format!("cannot read records from {}", path.display()))
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let (_, ds) = synthetic(&a.data)?;
    let path = output_path(a.out.as_deref(), "sample.csv")?;
    ds.write_csv(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))?;
    println!("wrote {} points to {}", ds.len(), path.display());
    Ok(())
}

fn cmd_train_perceptron(a: &TrainArgs) -> Result<()> {
    let (dist, ds) = synthetic(&a.data)?;
    let test = test_set(&dist, a.run.test_size, a.data.data_seed)?;
    let mut rec = perceptron::train_to_zero_with_test(&ds, test.as_ref(), &a.run.config()?)?;
    rec.chi = Some(a.data.chi);
    emit_record(&rec, a.run.out.as_deref())
}

fn cmd_train_mlp(a: &MlpArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let net = MlpParams { depth: a.depth, width: a.width };
    let (ds, test, chi) = match (&a.idx_images, &a.idx_labels) {
        (Some(images), Some(labels)) => {
            let all = sgdnoise::idx::load_idx_dataset(images, labels, a.data.p + a.run.test_size, a.data.data_seed)
                .with_context(|| format!("cannot load {} / {}", images.display(), labels.display()))?;
            if a.run.test_size > 0 {
                let (train, test) = sgdnoise::data::split_train_test(&all, a.data.p, a.data.data_seed)?;
                (train, Some(test), None)
            } else {
                (all, None, None)
            }
        }
        _ => {
            let (dist, ds) = synthetic(&a.data)?;
            let n = if a.run.test_size == 0 { TEST_SET_SIZE } else { a.run.test_size };
            (ds, test_set(&dist, n, a.data.data_seed)?, Some(a.data.chi))
        }
    };
    let mut rec = match a.loss {
        LossArg::Hinge => mlp::sgd_train(&ds, test.as_ref(), &cfg, &net)?,
        LossArg::Xent => {
            let es = EarlyStopConfig {
                checkpoint_every: a.checkpoint_every,
                patience: a.patience,
                validation_fraction: a.validation_fraction,
            };
            mlp::cross_entropy_train_early_stop(&ds, test.as_ref(), &cfg, &net, &es)?
        }
    };
    rec.chi = chi;
    emit_record(&rec, a.run.out.as_deref())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("cannot read sweep config {}", a.config.display()))?;
    let spec: SweepSpec =
        toml::from_str(&text).with_context(|| format!("invalid sweep config {}", a.config.display()))?;
    spec.validate().with_context(|| format!("invalid sweep config {}", a.config.display()))?;
    let path = output_path(a.out.as_deref(), "sweep.jsonl")?;
    info!("running {} runs on {} workers", spec.run_count(), a.workers);
    let res = sweep::resume(&spec, &path, a.workers)?;
    let diverged = res.records.iter().filter(|r| r.diverged).count();
    let failed = res.records.iter().filter(|r| r.failure.is_some()).count();
    println!(
        "{} records ({} diverged, {} failed) in {} [spec {}]",
        res.records.len(),
        diverged,
        failed,
        path.display(),
        &res.spec_fingerprint[..12]
    );
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let records = load_records(&a.input)?;
    if a.report {
        let report = ExponentReport::from_records(&a.input.display().to_string(), &records, &a.y)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let (e1, e2) = fit_two_var_scaling(&records, &a.x1, &a.x2, &a.y)?;
    println!(
        "{} ~ {}^{:.4} (±{:.4}) {}^{:.4} (±{:.4})  r²={:.4}",
        a.y, a.x1, e1.exponent, e1.stderr, a.x2, e2.exponent, e2.stderr, e1.r_squared
    );
    Ok(())
}

fn cmd_collapse(a: &CollapseArgs) -> Result<()> {
    let records = load_records(&a.input)?;
    let curves = curves_from_records(&records, &a.group, &a.x, &a.y);
    if a.crossover {
        let fit = extract_crossover(&curves)?;
        println!("{}", serde_json::to_string_pretty(&fit)?);
        return Ok(());
    }
    let grid = exponent_grid(a.amin, a.amax, a.step);
    let best = best_collapse_exponent(&curves, &grid)?;
    println!(
        "a = {:.3}  bracket [{:.3}, {:.3}]  score {:.3e}",
        best.best_exponent, best.bracket.0, best.bracket.1, best.score_at_best
    );
    if a.with_y {
        let y = best_y_collapse_exponent(&curves, best.best_exponent, &grid)?;
        println!(
            "y exponent = {:.3}  bracket [{:.3}, {:.3}]  score {:.3e}",
            y.best_exponent, y.bracket.0, y.bracket.1, y.score_at_best
        );
    }
    Ok(())
}

fn cmd_evt(a: &EvtArgs) -> Result<()> {
    if a.pmin == 0 || a.pmax < a.pmin {
        bail!("need 1 <= pmin <= pmax");
    }
    let mut ps = Vec::new();
    let mut p = a.pmin;
    while p <= a.pmax {
        ps.push(p);
        p *= 2;
    }
    if ps.len() < 3 {
        bail!("need at least three doublings between pmin and pmax");
    }
    let stats = max_statistics(&ps, a.chi, a.trials, a.seed)?;
    let (mean_fit, median_fit) = fit_max_growth(&stats)?;
    let path = output_path(a.out.as_deref(), &format!("evt_chi{}.csv", a.chi))?;
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
    for (i, s) in stats.iter().enumerate() {
        s.write_csv(&mut out, i == 0)?;
    }
    out.flush()?;
    println!(
        "slope {:.4} (median {:.4}, predicted {:.4})",
        mean_fit.exponent,
        median_fit.exponent,
        predicted_gamma(a.chi)?
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_tmax(a: &TmaxArgs) -> Result<()> {
    if a.points < 2 || !(a.tmin > 0.0 && a.tmax > a.tmin) {
        bail!("temperature grid needs 0 < tmin < tmax and at least two points");
    }
    let (_, ds) = synthetic(&a.data)?;
    let ratio = (a.tmax / a.tmin).ln() / (a.points - 1) as f64;
    let grid: Vec<f64> = (0..a.points).map(|i| a.tmin * (ratio * i as f64).exp()).collect();
    let net = MlpParams { depth: a.depth, width: a.width };
    let tc = TmaxConfig { batch_size: a.batch, seed: a.seed, max_steps: a.max_steps };
    let mut alphas = Vec::new();
    let mut tmaxes = Vec::new();
    for &e in &a.log2_alpha {
        let alpha = 2f64.powi(e);
        let res = mlp::find_tmax(alpha, &ds, &net, &grid, &tc)?;
        println!("alpha 2^{e}: T_max {:.4e} (first failure {:.4e})", res.t_max, res.t_fail);
        alphas.push(alpha);
        tmaxes.push(res.t_max);
    }
    if alphas.len() >= 3 {
        let fit = fit_power_law(&alphas, &tmaxes)?;
        println!("slope of log T_max vs log alpha: {:.4}", fit.exponent);
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let records = load_records(&a.input)?;
    let path = output_path(a.out.as_deref(), &format!("{}_vs_{}.svg", a.y, a.x))?;
    let spec = PlotSpec {
        x_field: a.x.clone(),
        y_field: a.y.clone(),
        group_by: a.group.clone(),
        x_rescale_exponent: a.x_rescale,
        y_rescale_exponent: a.y_rescale,
        log_x: !a.linear_x,
        log_y: !a.linear_y,
        output_path: path,
    };
    let out = emit_loglog_svg(&records, &spec)?;
    println!(
        "{} series, {} points -> {} and {}",
        out.series,
        out.points,
        out.svg_path.display(),
        out.csv_path.display()
    );
    Ok(())
}

fn cmd_boundary(a: &BoundaryArgs) -> Result<()> {
    let dist = ChiDistribution::new(a.chi, 2)?;
    let ds = sample_chi_dataset(&dist, a.p, a.data_seed)?;
    let cfg = a.run.config()?;
    let path = output_path(a.svg.as_deref(), "boundary.svg")?;
    let opts = BoundaryOptions { resolution: a.resolution, arrows: a.arrows };
    let mut rec = match a.model {
        ModelArg::Perceptron => {
            let (state, rec) = perceptron::train_state(&ds, None, &cfg)?;
            render_boundary_2d(&LinearModel(state.w), &ds, &opts, &path)?;
            rec
        }
        ModelArg::Mlp => {
            let net = MlpParams { depth: a.depth, width: a.width };
            let (m, rec) = mlp::train_network(&ds, None, &cfg, &net)?;
            render_boundary_2d(&m, &ds, &opts, &path)?;
            rec
        }
    };
    rec.chi = Some(a.chi);
    emit_record(&rec, a.run.out.as_deref())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::TrainPerceptron(a) => cmd_train_perceptron(a),
        Command::TrainMlp(a) => cmd_train_mlp(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Collapse(a) => cmd_collapse(a),
        Command::Evt(a) => cmd_evt(a),
        Command::Tmax(a) => cmd_tmax(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Boundary2d(a) => cmd_boundary(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
