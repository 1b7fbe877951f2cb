//! Operator surface: fit, eval, generate, geweke, report.
//!
//! Exit codes: 0 success, 1 config/parse/input error, 2 runtime failure.
//! Progress and diagnostics go to stderr; machine-readable output goes to
//! files (or stdout for tables).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdrem::dataio::{self, RunConfig};
use sdrem::geweke::{self, GewekeConfig, Kernel};
use sdrem::model::Mode;
use sdrem::synthgen::{self, SynthSpec};
use sdrem::{predictor, runner, RngStream, SdremError};

#[derive(Parser)]
#[command(name = "sdrem", version, about = "Deep relational model fitting and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to an edge list and write posterior outputs.
    Fit(FitArgs),
    /// Re-evaluate a saved fit against a reconstructed split.
    Eval(EvalArgs),
    /// Generate a synthetic dataset with known ground truth.
    Generate(GenerateArgs),
    /// Run the joint-distribution sampler diagnostic.
    Geweke(GewekeArgs),
    /// Summarize one or more completed run directories.
    Report(ReportArgs),
}

/// Flags override config-file values, which override built-in defaults.
#[derive(Args)]
struct FitArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    negatives_per_positive: Option<usize>,
    #[arg(long)]
    undirected: bool,
    /// Worker threads for within-sweep parallelism (results are identical
    /// for any value).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// state.bin from a completed fit.
    #[arg(long)]
    state: PathBuf,
    /// The same edge list the fit used.
    #[arg(long)]
    edges: PathBuf,
    /// Seed for reconstructing the split; defaults to the fit's seed.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Where to write the recomputed metrics.
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    l: usize,
    /// Number of node features (0 = none).
    #[arg(long, default_value_t = 0)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    /// Plant a compatibility diagonal instead of drawing it.
    #[arg(long)]
    lambda_diag: Option<f64>,
    #[arg(long)]
    lambda_offdiag: Option<f64>,
    #[arg(long)]
    m_scale: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Force Lambda to zero everywhere (produces an empty relation).
    #[arg(long)]
    zero_lambda: bool,
}

#[derive(Args)]
struct GewekeArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    l: usize,
    /// Retained samples per arm.
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    /// Kernel steps between retained chain samples.
    #[arg(long, default_value_t = 20)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Harness self-test: both arms draw fresh forward samples.
    #[arg(long, conflicts_with = "mutation_self_test")]
    identity_self_test: bool,
    /// Sampler self-test with a deliberately broken kernel; must fail.
    #[arg(long)]
    mutation_self_test: bool,
    /// |z| threshold for failure.
    #[arg(long, default_value_t = 4.0)]
    z_threshold: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Completed run directories (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    run: Vec<PathBuf>,
    /// Plot-ready CSV output.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Geweke(args) => cmd_geweke(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SdremError::Parse { .. }
                | SdremError::InvalidParameter(_)
                | SdremError::DimensionMismatch(_)
                | SdremError::Io { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn cmd_fit(args: FitArgs) -> sdrem::Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.edges {
        config.edges = v;
    }
    if args.features.is_some() {
        config.features = args.features;
    }
    if let Some(v) = args.out {
        config.out = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.l {
        config.l = v;
    }
    if let Some(v) = args.mode {
        config.mode = v;
        if v == Mode::Mmsb {
            config.l = 1;
        }
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.burn_in {
        config.burn_in = v;
    }
    if let Some(v) = args.thin {
        config.thin = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.train_ratio {
        config.train_ratio = v;
    }
    if let Some(v) = args.negatives_per_positive {
        config.negatives_per_positive = v;
    }
    if args.undirected {
        config.undirected = true;
    }
    if let Some(v) = args.threads {
        config.threads = v;
    }
    if config.edges.as_os_str().is_empty() {
        return Err(SdremError::InvalidParameter(
            "no edge list given (--edges or config `edges`)".into(),
        ));
    }
    let outcome = runner::run_fit(&config)?;
    eprintln!(
        "fit done in {:.1}s: auc {}, nll {:.4}, outputs in {}",
        outcome.elapsed_secs,
        outcome
            .eval
            .auc
            .map_or("n/a".into(), |a| format!("{a:.4}")),
        outcome.eval.mean_nll,
        outcome.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> sdrem::Result<ExitCode> {
    let snap = dataio::load_snapshot(&args.state)?;
    let graph = dataio::load_edges(&args.edges, snap.settings.undirected)?;
    if graph.n_nodes != snap.n_nodes {
        return Err(SdremError::DimensionMismatch(format!(
            "edge list has {} nodes, saved state has {}",
            graph.n_nodes, snap.n_nodes
        )));
    }
    let seed = args.split_seed.unwrap_or(snap.settings.hyper.seed);
    let (_train, test_dyads) = dataio::make_split(
        &graph,
        snap.settings.train_ratio,
        snap.settings.negatives_per_positive,
        &RngStream::new(seed),
    )?;
    if test_dyads.is_empty() {
        eprintln!("note: empty test split; auc reported as null");
        let eval = sdrem::EvalResult {
            auc: None,
            mean_nll: f64::NAN,
            n_test_pos: 0,
            n_test_neg: 0,
        };
        dataio::write_metrics(&snap.trace, &eval, &snap.settings, &args.out)?;
        return Ok(ExitCode::SUCCESS);
    }
    let eval = predictor::evaluate(&snap.trace, &test_dyads)?;
    if eval.auc.is_none() {
        eprintln!("note: test split has a single label class; auc reported as null");
    }
    dataio::write_metrics(&snap.trace, &eval, &snap.settings, &args.out)?;
    eprintln!(
        "eval: auc {}, nll {:.4} -> {}",
        eval.auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        eval.mean_nll,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(args: GenerateArgs) -> sdrem::Result<ExitCode> {
    let spec = SynthSpec {
        n_nodes: args.n,
        k: args.k,
        l: args.l,
        seed: args.seed,
        lambda_diag: if args.zero_lambda {
            Some(0.0)
        } else {
            args.lambda_diag
        },
        lambda_offdiag: if args.zero_lambda {
            Some(0.0)
        } else {
            args.lambda_offdiag
        },
        m_scale: args.m_scale,
        alpha: args.alpha,
        n_features: args.d,
        ..SynthSpec::default()
    };
    let data = synthgen::generate(&spec)?;
    std::fs::create_dir_all(&args.out).map_err(|e| SdremError::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    dataio::save_edges(&data.graph.edges, &args.out.join("edges.tsv"))?;
    if args.d > 0 {
        dataio::save_features(&data.features, &args.out.join("features.tsv"))?;
    }
    synthgen::save_truth(&data, &spec, &args.out)?;
    eprintln!(
        "generated {} nodes, {} edges into {}",
        args.n,
        data.graph.n_edges(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_geweke(args: GewekeArgs) -> sdrem::Result<ExitCode> {
    let config = GewekeConfig {
        n_nodes: args.n,
        k: args.k,
        l: args.l,
        n_samples: args.samples,
        thin: args.thin,
        seed: args.seed,
    };
    let kernel = if args.identity_self_test {
        Kernel::Identity
    } else if args.mutation_self_test {
        Kernel::CorruptedX
    } else {
        Kernel::Gibbs
    };
    let report = geweke::run(&config, kernel)?;
    println!("{:<18} {:>12} {:>12} {:>8}", "statistic", "forward", "chain", "z");
    for s in &report.stats {
        println!(
            "{:<18} {:>12.5} {:>12.5} {:>8.2}",
            s.name, s.mean_forward, s.mean_chain, s.z
        );
    }
    let failed = report.max_abs_z >= args.z_threshold;
    match (kernel, failed) {
        (Kernel::CorruptedX, true) => {
            eprintln!(
                "mutation self-test: broken kernel detected (max |z| = {:.2}) as expected",
                report.max_abs_z
            );
            Ok(ExitCode::from(2))
        }
        (Kernel::CorruptedX, false) => {
            eprintln!(
                "mutation self-test FAILED to detect the broken kernel (max |z| = {:.2})",
                report.max_abs_z
            );
            // the harness is supposed to catch the mutation; not doing so is
            // itself a runtime failure but with a distinct message above
            Ok(ExitCode::from(2))
        }
        (_, true) => {
            eprintln!("geweke: FAIL, max |z| = {:.2}", report.max_abs_z);
            Ok(ExitCode::from(2))
        }
        (_, false) => {
            eprintln!("geweke: pass, max |z| = {:.2}", report.max_abs_z);
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(serde::Deserialize)]
struct MetricsIn {
    auc: Option<f64>,
    mean_nll: f64,
    n_retained: usize,
    settings: SettingsIn,
}

#[derive(serde::Deserialize)]
struct SettingsIn {
    hyper: HyperIn,
}

#[derive(serde::Deserialize)]
struct HyperIn {
    k: usize,
    l: usize,
}

fn cmd_report(args: ReportArgs) -> sdrem::Result<ExitCode> {
    let mut rows = Vec::new();
    for dir in &args.run {
        let path = dir.join("metrics.json");
        let file = std::fs::File::open(&path).map_err(|e| SdremError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let m: MetricsIn = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| SdremError::Serialize(format!("{}: {e}", path.display())))?;
        rows.push((dir.display().to_string(), m));
    }
    rows.sort_by(|a, b| (a.1.settings.hyper.k, a.1.settings.hyper.l)
        .cmp(&(b.1.settings.hyper.k, b.1.settings.hyper.l)));
    println!(
        "{:<30} {:>4} {:>4} {:>8} {:>10} {:>9}",
        "run", "K", "L", "auc", "mean_nll", "retained"
    );
    let mut csv = String::from("run,k,l,auc,mean_nll,n_retained\n");
    for (name, m) in &rows {
        let auc = m.auc.map_or("".to_string(), |a| format!("{a:.6}"));
        println!(
            "{:<30} {:>4} {:>4} {:>8} {:>10.4} {:>9}",
            name,
            m.settings.hyper.k,
            m.settings.hyper.l,
            if auc.is_empty() { "n/a" } else { &auc },
            m.mean_nll,
            m.n_retained
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            name, m.settings.hyper.k, m.settings.hyper.l, auc, m.mean_nll, m.n_retained
        ));
    }
    std::fs::write(&args.out, csv).map_err(|e| SdremError::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    eprintln!("report: {} runs -> {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
