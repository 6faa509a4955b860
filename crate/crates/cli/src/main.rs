use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpcgrad::artifact::{self, CinfArtifact, NetworkArtifact};
use mpcgrad::dataset::{self, Dataset, DatasetKind};
use mpcgrad::error::{Error, Result};
use mpcgrad::eval;
use mpcgrad::experiment::{self, ExperimentConfig};
use mpcgrad::invariant;
use mpcgrad::mpc::{MpcProblem, QpOptions};
use mpcgrad::neural::{self, MlpArchitecture, TrainConfig};
use mpcgrad::sampler::{self, SamplerConfig};

/// Learn explicit-MPC surrogates from control and sensitivity data.
#[derive(Parser)]
#[command(name = "mpcgrad", version)]
struct Cli {
    /// Seed for every random stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON config: training settings for `train`, the grid for `experiment`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for default output file names.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Slack and multiplier threshold for active constraints.
    #[arg(long, global = true, default_value_t = 1e-7)]
    act_tol: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximal control invariant set of a problem.
    Cinf(CinfArgs),
    /// Hit-and-run samples from an invariant set, as CSV.
    Sample(SampleArgs),
    /// Labelled dataset of states, optimal inputs and their sensitivities.
    Gen(GenArgs),
    /// Train a surrogate network on a dataset.
    Train(TrainArgs),
    /// NMSE and closed-loop cost of trained networks.
    Eval(EvalArgs),
    /// The full train-size × γ grid with summary tables.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct CinfArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Defaults to `<out-dir>/cinf.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = invariant::DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    cinf: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Step uniformly over the whole chord instead of forward only.
    #[arg(long)]
    two_sided: bool,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Defaults to `<out-dir>/samples.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Train,
    Test,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    cinf: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, value_enum, default_value = "train")]
    kind: Kind,
    /// Defaults to `<out-dir>/<kind>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    hidden: Vec<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    loss_target: Option<f64>,
    /// Defaults to `<out-dir>/net.json`; the loss history goes next to it as `<stem>_loss.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    cinf: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// One or more trained network files.
    #[arg(long, num_args = 1.., required = true)]
    net: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n_traj: usize,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Defaults to `<out-dir>/eval.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Overrides the problem named in the config.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Print one line per finished training run to stderr.
    #[arg(long)]
    progress: bool,
}

fn out_path(cli: &Cli, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    if let Some(p) = given {
        return Ok(p.clone());
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    Ok(cli.out_dir.join(default))
}

fn qp_options(cli: &Cli) -> Result<QpOptions> {
    if !(cli.act_tol > 0.0) {
        return Err(Error::InvalidArgument("--act-tol must be positive".into()));
    }
    Ok(QpOptions {
        act_tol: cli.act_tol,
        ..QpOptions::default()
    })
}

fn cmd_cinf(cli: &Cli, a: &CinfArgs) -> Result<()> {
    let problem = artifact::load_problem(&a.problem)?;
    let inv = invariant::max_control_invariant(
        &problem.x_set,
        &problem.u_set,
        &problem.system.a,
        &problem.system.b,
        a.max_iter,
    )?;
    for (k, rows) in inv.row_history.iter().enumerate() {
        println!("iteration {k}: {rows} rows");
    }
    let out = out_path(cli, &a.out, "cinf.json")?;
    artifact::write_json(&out, &CinfArtifact::new(&problem, &inv))?;
    if !inv.converged {
        return Err(Error::NotConverged(format!(
            "no fixed point after {} iterations; last iterate written to {}",
            inv.iterations,
            out.display()
        )));
    }
    println!("converged after {} iterations: {} rows -> {}", inv.iterations, inv.c_inf.n_rows(), out.display());
    Ok(())
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let c = CinfArtifact::load(&a.cinf)?;
    let cfg = SamplerConfig {
        two_sided: a.two_sided,
        burn_in: a.burn_in,
        thin: a.thin,
        ..SamplerConfig::new(cli.seed, a.count)
    };
    let pts = sampler::hit_and_run(&c.c_inf, &cfg)?;
    let out = out_path(cli, &a.out, "samples.csv")?;
    sampler::write_points_csv(&out, &pts, c.c_inf.dim())?;
    println!("{} points -> {}", pts.len(), out.display());
    Ok(())
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let problem = artifact::load_problem(&a.problem)?;
    let c = CinfArtifact::load(&a.cinf)?;
    c.ensure_problem(&problem)?;
    let kind = match a.kind {
        Kind::Train => DatasetKind::Train,
        Kind::Test => DatasetKind::Test,
    };
    let ds = dataset::generate_with(&problem, &c.c_inf, a.count, cli.seed, kind, &qp_options(cli)?)?;
    let default = match kind {
        DatasetKind::Train => "train.json",
        DatasetKind::Test => "test.json",
    };
    let out = out_path(cli, &a.out, default)?;
    ds.save(&out)?;
    let boundary = ds.samples.iter().filter(|s| s.on_boundary).count();
    println!("{} samples ({boundary} on a piece boundary) -> {}", ds.len(), out.display());
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let mut cfg: TrainConfig = match &cli.config {
        Some(p) => artifact::read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = cli.seed;
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(v) = a.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.loss_target {
        cfg.loss_target = v;
    }
    let arch = MlpArchitecture::new(ds.state_dim, a.hidden.clone(), ds.input_dim)?;
    let report = neural::train(&ds, &arch, &cfg)?;
    let out = out_path(cli, &a.out, "net.json")?;
    let art = NetworkArtifact::new(&ds.problem_hash, ds.seed, cfg.seed, cfg.gamma, &report);
    artifact::write_json(&out, &art)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("net");
    let loss_path = out.with_file_name(format!("{stem}_loss.csv"));
    std::fs::write(&loss_path, report.loss_csv())?;
    println!(
        "{:?} after {} epochs, loss {} -> {}",
        report.stop_reason,
        report.epochs_run,
        report.final_loss(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let problem = artifact::load_problem(&a.problem)?;
    let c = CinfArtifact::load(&a.cinf)?;
    c.ensure_problem(&problem)?;
    let test = Dataset::load(&a.test)?;
    test.ensure_problem(&problem)?;
    if test.kind != DatasetKind::Test {
        return Err(Error::InvalidArgument(format!("{} is not a test dataset", a.test.display())));
    }
    let mut csv = String::from("network,metric,value\n");
    for path in &a.net {
        let net = NetworkArtifact::load(path)?;
        net.ensure_problem(&problem)?;
        let (n, cost) =
            eval::evaluate_surrogate(&net.params, &test, &problem, &c.c_inf, a.n_traj, a.steps, cli.seed)?;
        let name = path.display();
        csv.push_str(&format!("{name},nmse_ratio,{}\n", n.ratio));
        csv.push_str(&format!("{name},nmse_db,{}\n", n.db));
        csv.push_str(&format!("{name},mean_j,{}\n", cost.mean));
        csv.push_str(&format!("{name},violations,{}\n", cost.violations));
        csv.push_str(&format!("{name},excluded,{}\n", cost.excluded));
    }
    let out = out_path(cli, &a.out, "eval.csv")?;
    std::fs::write(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<bool> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => artifact::read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &a.problem {
        cfg.problem = Some(p.display().to_string());
    }
    let problem = match &cfg.problem {
        Some(p) => artifact::load_problem(Path::new(p))?,
        None => MpcProblem::double_integrator(),
    };
    let total = cfg.n_runs();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let progress = |r: &experiment::RunRecord| {
        if a.progress {
            let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            eprintln!(
                "[{k}/{total}] size {} gamma {} replicate {}: {} epochs, nmse {:.2} dB{}",
                r.train_size,
                r.gamma,
                r.replicate,
                r.epochs,
                r.nmse_db,
                r.error.as_ref().map(|e| format!(", failed: {e}")).unwrap_or_default()
            );
        }
    };
    let outcome = experiment::run_with_progress(&problem, &cfg, &progress)?;
    outcome.write_outputs(&cli.out_dir)?;
    print!("{}", outcome.report_markdown());
    for f in &outcome.failures {
        eprintln!("failed: {f}");
    }
    Ok(outcome.failures.is_empty())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Cinf(a) => cmd_cinf(cli, a).map(|_| true),
        Command::Sample(a) => cmd_sample(cli, a).map(|_| true),
        Command::Gen(a) => cmd_gen(cli, a).map(|_| true),
        Command::Train(a) => cmd_train(cli, a).map(|_| true),
        Command::Eval(a) => cmd_eval(cli, a).map(|_| true),
        Command::Experiment(a) => cmd_experiment(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
