//! `lrmc`: allocate network costs, benchmark the solvers, cluster customers.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use lrmc::analysis::{build_report, rmse, RunMetadata};
use lrmc::approx::{
    build_cluster_model, clustering_runs, fold_runs, shapley_sampling, MonteCarloConfig, SamplingConfig, MAX_CLUSTERS,
    SAMPLING_CAP,
};
use lrmc::game::{shapley_exact, AllocationResult, ExactOptions, Players, DEFAULT_EXACT_CAP};
use lrmc::loads::{
    check_aligned, generate_synthetic, load_csv, LoadOptions, LoadTrace, MissingPolicy, INTERVALS_PER_DAY,
};
use lrmc::turvey::{GameConfig, TurveyGame};
use lrmc::Error;

use config::{synthetic_spec, FileConfig, MethodChoice, Overrides, RunConfig, Scenario, Source};

#[derive(Parser)]
#[command(name = "lrmc", version, about = "Shapley allocation of long-run marginal network cost")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the log on stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate costs and compare against energy- and peak-based methods.
    Allocate(AllocateArgs),
    /// Time the solvers over a range of population sizes.
    Bench(BenchArgs),
    /// Cluster customers by mean daily profile.
    Cluster(ClusterArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Load CSV (long or wide format, optionally .gz).
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Synthetic population such as demo25 or twoarch40.
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    /// Fill missing intervals with zero instead of failing.
    #[arg(long)]
    zero_fill: bool,
}

#[derive(Args)]
struct AllocateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    mc_runs: Option<usize>,
    /// Customers sampled per Monte Carlo run (default: all).
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for allocations.csv and report.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Population sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [MethodChoice::Exact, MethodChoice::Sampling, MethodChoice::Clustering])]
    methods: Vec<MethodChoice>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    mc_runs: usize,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long)]
    seed: u64,
    /// Output directory for assignments.csv and centroids.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::UndefinedCorrelation(_) => 2,
        Error::Capacity(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Off } else { log::LevelFilter::Info })
        .parse_env("LRMC_LOG")
        .target(env_logger::Target::Stdout)
        .format_timestamp(None)
        .init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Allocate(args) => allocate(args),
        Command::Bench(args) => bench(args),
        Command::Cluster(args) => cluster(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn load_traces(source: &Source, scenario: Scenario, seed: Option<u64>, zero_fill: bool) -> Result<Vec<LoadTrace>, Error> {
    let traces = match source {
        Source::Input(path) => {
            let options = LoadOptions {
                missing: if zero_fill { MissingPolicy::ZeroFill } else { MissingPolicy::Reject },
                with_pv: scenario == Scenario::WithPv,
            };
            load_csv(path, &options)?
        }
        Source::Synthetic(name) => {
            let seed = seed.ok_or_else(|| Error::Argument("--seed is required for synthetic data".into()))?;
            generate_synthetic(&synthetic_spec(name, scenario)?, seed)?.traces
        }
    };
    check_aligned(&traces)?;
    info!("loaded {} customers", traces.len());
    Ok(traces)
}

fn run_exact(traces: &[LoadTrace], game: &GameConfig) -> Result<AllocationResult, Error> {
    let players = Players::new(traces.iter().map(|t| t.customer_id.clone()).collect())?;
    if traces.len() > DEFAULT_EXACT_CAP {
        return Err(Error::Capacity(format!(
            "exact Shapley is capped at {DEFAULT_EXACT_CAP} customers, got {}; use --method clustering",
            traces.len()
        )));
    }
    let started = Instant::now();
    let g = TurveyGame::new(traces.iter().map(|t| t.values.as_slice()).collect(), *game)?;
    let r = shapley_exact(&players, &g, &ExactOptions::default())?;
    info!("exact: {} customers in {:.3?}", traces.len(), started.elapsed());
    Ok(r)
}

fn run_sampling(traces: &[LoadTrace], game: &GameConfig, cfg: &SamplingConfig) -> Result<AllocationResult, Error> {
    let players = Players::new(traces.iter().map(|t| t.customer_id.clone()).collect())?;
    if traces.len() > SAMPLING_CAP {
        return Err(Error::Capacity(format!(
            "sampling is capped at {SAMPLING_CAP} customers, got {}; use --method clustering",
            traces.len()
        )));
    }
    let started = Instant::now();
    let g = TurveyGame::new(traces.iter().map(|t| t.values.as_slice()).collect(), *game)?;
    let r = shapley_sampling(&players, &g, cfg)?;
    info!(
        "sampling: {} coalition evaluations in {:.3?}",
        r.diagnostics.get("evaluations").copied().unwrap_or(0.0),
        started.elapsed()
    );
    Ok(r)
}

fn allocate(args: AllocateArgs) -> Result<(), Error> {
    let file = match &args.config {
        Some(path) => FileConfig::read(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(
        file,
        Overrides {
            input: args.data.input,
            synthetic: args.data.synthetic,
            method: args.method,
            seed: args.seed,
            clusters: args.clusters,
            mc_runs: args.mc_runs,
            subset_size: args.subset_size,
            scenario: args.data.scenario,
            zero_fill: args.data.zero_fill,
        },
    )?;
    let traces = load_traces(&cfg.source, cfg.scenario, cfg.seed, cfg.zero_fill)?;
    let n = traces.len();

    let mut solvers = Vec::new();
    let mut runs = None;
    let want = |m: MethodChoice| cfg.method == m || cfg.method == MethodChoice::All;
    if want(MethodChoice::Exact) {
        if cfg.method == MethodChoice::All && n > DEFAULT_EXACT_CAP {
            warn!("skipping exact: {n} customers exceeds the cap of {DEFAULT_EXACT_CAP}");
        } else {
            solvers.push(run_exact(&traces, &cfg.game)?);
        }
    }
    if want(MethodChoice::Sampling) {
        if cfg.method == MethodChoice::All && n > SAMPLING_CAP {
            warn!("skipping sampling: {n} customers exceeds the cap of {SAMPLING_CAP}");
        } else {
            solvers.push(run_sampling(&traces, &cfg.game, &cfg.sampling)?);
        }
    }
    if want(MethodChoice::Clustering) {
        let started = Instant::now();
        let k = cfg.clusters;
        if k > n || k > MAX_CLUSTERS {
            return Err(Error::Argument(format!(
                "cannot form {k} clusters from {n} customers (at most {MAX_CLUSTERS})"
            )));
        }
        let seed = cfg.seed.expect("validated");
        let model = build_cluster_model(&traces, k, seed)?;
        let all_runs = clustering_runs(&traces, &model, &cfg.game, &cfg.monte_carlo)?;
        let mut r = fold_runs(n, &all_runs);
        r.seed = Some(seed);
        r.diagnostics.insert("clusters".into(), k as f64);
        info!("clustering: {} runs over {k} clusters in {:.3?}", all_runs.len(), started.elapsed());
        solvers.push(r);
        runs = Some(all_runs);
    }

    let metadata = RunMetadata {
        seeds: cfg.seed.map(|s| BTreeMap::from([("run".to_string(), s)])).unwrap_or_default(),
        config_hash: cfg.hash(),
        config: cfg.to_json(),
    };
    // clustering runs only describe the benchmark when clustering is it
    let benchmark_is_clustering = solvers.len() == 1 && runs.is_some();
    let report = build_report(
        &traces,
        solvers,
        if benchmark_is_clustering { runs.as_deref() } else { None },
        &cfg.report,
        metadata,
    )?;

    std::fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    report.write_allocations_csv(args.out.join("allocations.csv"))?;
    report.write_json(args.out.join("report.json"))?;
    info!("wrote {}", args.out.display());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Error> {
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(Error::Argument("--sizes needs at least one positive size".into()));
    }
    if args.methods.is_empty() || args.seeds.is_empty() {
        return Err(Error::Argument("--methods and --seeds must not be empty".into()));
    }
    let methods: Vec<MethodChoice> = if args.methods.contains(&MethodChoice::All) {
        vec![MethodChoice::Exact, MethodChoice::Sampling, MethodChoice::Clustering]
    } else {
        args.methods.clone()
    };
    for &n in &args.sizes {
        if methods.contains(&MethodChoice::Exact) && n > DEFAULT_EXACT_CAP {
            return Err(Error::Capacity(format!("exact is capped at {DEFAULT_EXACT_CAP} customers, got size {n}")));
        }
        if methods.contains(&MethodChoice::Sampling) && n > SAMPLING_CAP {
            return Err(Error::Capacity(format!("sampling is capped at {SAMPLING_CAP} customers, got size {n}")));
        }
    }

    let mut rows = vec!["n,method,seed,wall_ms,rmse".to_string()];
    let game = GameConfig::default();
    for &n in &args.sizes {
        for &seed in &args.seeds {
            let traces = generate_synthetic(&synthetic_spec(&format!("demo{n}"), Scenario::WithoutPv)?, seed)?.traces;
            // the exact benchmark is computed whenever feasible, timed only if asked for
            let exact = if n <= DEFAULT_EXACT_CAP {
                let started = Instant::now();
                let r = run_exact(&traces, &game)?;
                Some((r, started.elapsed()))
            } else {
                None
            };
            for &m in &methods {
                let (result, elapsed) = match m {
                    MethodChoice::Exact => {
                        let (r, t) = exact.clone().expect("size checked");
                        (r, t)
                    }
                    MethodChoice::Sampling => {
                        let started = Instant::now();
                        let cfg = SamplingConfig { seed, ..Default::default() };
                        let r = run_sampling(&traces, &game, &cfg)?;
                        (r, started.elapsed())
                    }
                    MethodChoice::Clustering => {
                        let started = Instant::now();
                        let model = build_cluster_model(&traces, args.clusters.min(n), seed)?;
                        let mc = MonteCarloConfig { runs: args.mc_runs, subset_size: None, seed };
                        let r = fold_runs(n, &clustering_runs(&traces, &model, &game, &mc)?);
                        (r, started.elapsed())
                    }
                    MethodChoice::All => unreachable!("expanded above"),
                };
                let error = match &exact {
                    Some((e, _)) => format!("{}", rmse(&result.values, &e.values)?),
                    None => String::new(),
                };
                let method = match m {
                    MethodChoice::Exact => "exact",
                    MethodChoice::Sampling => "sampling",
                    MethodChoice::Clustering => "clustering",
                    MethodChoice::All => unreachable!(),
                };
                let wall_ms = elapsed.as_secs_f64() * 1e3;
                info!("n={n} {method} seed={seed}: {wall_ms:.1} ms");
                rows.push(format!("{n},{method},{seed},{wall_ms:.3},{error}"));
            }
        }
    }
    let mut text = rows.join("\n");
    text.push('\n');
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(io_error(path)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io_error(Path::new("<stdout>"))),
    }
}

fn cluster(args: ClusterArgs) -> Result<(), Error> {
    let source = match (args.data.input, args.data.synthetic) {
        (Some(p), None) => Source::Input(p),
        (None, Some(s)) => Source::Synthetic(s),
        _ => return Err(Error::Argument("pass exactly one of --input or --synthetic".into())),
    };
    let scenario = args.data.scenario.unwrap_or_default();
    let traces = load_traces(&source, scenario, Some(args.seed), args.data.zero_fill)?;
    let model = build_cluster_model(&traces, args.clusters, args.seed)?;
    info!("k-means inertia {:.6}", model.inertia);

    std::fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    let mut assignments = String::from("customer_id,cluster\n");
    for (id, c) in model.customer_ids.iter().zip(&model.assignment) {
        assignments.push_str(&format!("{id},{c}\n"));
    }
    let mut centroids = String::from("cluster");
    for slot in 0..INTERVALS_PER_DAY {
        centroids.push_str(&format!(",hh_{slot:02}"));
    }
    centroids.push('\n');
    for (c, centroid) in model.centroids.iter().enumerate() {
        centroids.push_str(&c.to_string());
        for v in centroid {
            centroids.push_str(&format!(",{v:.9}"));
        }
        centroids.push('\n');
    }
    let a = args.out.join("assignments.csv");
    std::fs::write(&a, assignments).map_err(io_error(&a))?;
    let c = args.out.join("centroids.csv");
    std::fs::write(&c, centroids).map_err(io_error(&c))?;
    info!("wrote {}", args.out.display());
    Ok(())
}
