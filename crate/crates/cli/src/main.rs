use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cliquemem::bench::{
    self, acceptance_violations, emit_csv, erasure_sweep, gamma_sweep, run_scenario, Scenario,
    ScenarioRule, SuccessRule,
};
use cliquemem::emulation::{run_emulated, EmulationParams};
use cliquemem::retrieval::{
    run_joint, run_sum_of_max, run_sum_of_sum, RetrievalConfig, RetrievalOutcome, Rule, Status,
};
use cliquemem::storage::WeightMatrix;
use cliquemem::{extract_messages, Extraction, Message, NetworkShape, Probe};

const THREADS_ENV: &str = "CLIQUEMEM_THREADS";

#[derive(Parser)]
#[command(name = "cliquemem", version, about = "Clustered clique-coded associative memory")]
struct Cli {
    /// Worker threads; overrides the CLIQUEMEM_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a weight matrix from a message corpus and save it.
    Store(StoreArgs),
    /// Decode probes against a stored weight matrix.
    Retrieve(RetrieveArgs),
    /// Run a benchmark scenario and report retrieval rates.
    Bench(BenchArgs),
    /// Run one scenario across several reinforcement factors.
    SweepGamma(SweepGammaArgs),
    /// Run one scenario across several erasure counts.
    SweepErasure(SweepErasureArgs),
}

#[derive(Args)]
struct StoreArgs {
    #[arg(long)]
    clusters: usize,
    #[arg(long)]
    cluster_size: usize,
    /// Corpus file, one comma-separated message per line.
    #[arg(long)]
    store: PathBuf,
    /// Destination weight-matrix file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Sos,
    Som,
    Joint,
    Emu,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Weight-matrix file produced by `store`.
    #[arg(long, conflicts_with_all = ["store", "clusters", "cluster_size"])]
    weights: Option<PathBuf>,
    /// Corpus file to store on the fly instead of loading weights.
    #[arg(long, requires = "clusters", requires = "cluster_size")]
    store: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_size: Option<usize>,

    /// Probe file, one message per line; `?` marks an erased position.
    #[arg(long)]
    probes: PathBuf,
    #[arg(long, value_enum, default_value = "som")]
    rule: RuleArg,
    #[arg(long, default_value = "1")]
    gamma: u64,
    #[arg(long, default_value = "20")]
    max_iters: usize,
    /// Erase this many clusters from each (complete) input line first.
    #[arg(long)]
    erase: Option<usize>,
    #[arg(long, default_value = "42")]
    seed: u64,
    /// Decode in batches of this many probes; default is one batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Carrier basis for the emulated rule.
    #[arg(long)]
    theta: Option<u64>,
    /// Treat aggregates wider than this many bits as an overflow error.
    #[arg(long)]
    fixed_width: Option<u64>,
    /// Append one per-run CSV summary row (needs --erase to score rates).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Preset {
    Scenario1,
    Scenario2,
    Custom,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(value_enum)]
    preset: Preset,
    #[arg(long, value_enum, default_value = "som")]
    rule: RuleArg,
    #[arg(long, default_value = "4")]
    erase: usize,
    #[arg(long)]
    gamma: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value = "42")]
    seed: u64,
    #[arg(long, default_value = "5")]
    reps: usize,
    /// Count a seeded random pick from an ambiguous ensemble as success.
    #[arg(long)]
    random_choice: bool,
    #[arg(long)]
    theta: Option<u64>,
    #[arg(long)]
    fixed_width: Option<u64>,
    /// Required with `custom`.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_size: Option<usize>,
    #[arg(long)]
    stored: Option<usize>,
    #[arg(long)]
    probes: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write per-repetition CSV rows here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero if the preset's expected retrieval-rate band is violated.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SweepGammaArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated reinforcement factors, e.g. `0,1,2,4`.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepErasureArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated erasure counts, e.g. `3,4,5,6`.
    #[arg(long, value_delimiter = ',')]
    erasures: Vec<usize>,
    /// Rules to compare, e.g. `sos,som,joint`.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["som"])]
    rules: Vec<RuleArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads(cli.threads)?;
    match cli.command {
        Command::Store(args) => cmd_store(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::SweepGamma(args) => cmd_sweep_gamma(args),
        Command::SweepErasure(args) => cmd_sweep_erasure(args),
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let from_env = std::env::var(THREADS_ENV)
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))
        })
        .transpose()?;
    if let Some(threads) = flag.or(from_env).filter(|&t| t > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("thread pool already initialized")?;
    }
    Ok(())
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            lines.push(trimmed.to_string());
        }
    }
    Ok(lines)
}

fn cmd_store(args: StoreArgs) -> Result<()> {
    let shape = NetworkShape::new(args.clusters, args.cluster_size)?;
    let mut w = WeightMatrix::new(shape);
    for (ln, line) in read_lines(&args.store)?.iter().enumerate() {
        let msg = Message::parse(shape, line)
            .with_context(|| format!("{}:{}", args.store.display(), ln + 1))?;
        w.store(&msg)?;
    }
    let out = File::create(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    w.save(BufWriter::new(out))?;
    println!(
        "stored {} messages into {} ({} edges) -> {}",
        w.stored_count(),
        format_shape(shape),
        w.edge_count(),
        args.out.display()
    );
    Ok(())
}

fn load_weights(args: &RetrieveArgs) -> Result<WeightMatrix> {
    if let Some(path) = &args.weights {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        return Ok(WeightMatrix::load(BufReader::new(file))?);
    }
    let (Some(store), Some(clusters), Some(cluster_size)) =
        (&args.store, args.clusters, args.cluster_size)
    else {
        bail!("pass either --weights or --store with --clusters and --cluster-size");
    };
    let shape = NetworkShape::new(clusters, cluster_size)?;
    let mut w = WeightMatrix::new(shape);
    for (ln, line) in read_lines(store)?.iter().enumerate() {
        let msg =
            Message::parse(shape, line).with_context(|| format!("{}:{}", store.display(), ln + 1))?;
        w.store(&msg)?;
    }
    Ok(w)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let w = load_weights(&args)?;
    let shape = w.shape();
    let lines = read_lines(&args.probes)?;

    // With --erase the input lines are complete messages; we erase them here
    // and can then score the reconstruction against the original.
    let mut originals: Option<Vec<Message>> = None;
    let probes: Vec<Probe> = if let Some(e) = args.erase {
        let msgs: Vec<Message> = lines
            .iter()
            .enumerate()
            .map(|(ln, line)| {
                Message::parse(shape, line)
                    .with_context(|| format!("{}:{}", args.probes.display(), ln + 1))
            })
            .collect::<Result<_>>()?;
        let erase_base = bench::derive_seed(args.seed, 3);
        let probes = msgs
            .iter()
            .enumerate()
            .map(|(k, m)| bench::erase(m, e, bench::derive_seed(erase_base, k as u64)))
            .collect::<std::result::Result<_, _>>()?;
        originals = Some(msgs);
        probes
    } else {
        lines
            .iter()
            .enumerate()
            .map(|(ln, line)| {
                Probe::parse(shape, line)
                    .with_context(|| format!("{}:{}", args.probes.display(), ln + 1))
            })
            .collect::<Result<_>>()?
    };

    let rule = match args.rule {
        RuleArg::Sos => Rule::SumOfSum,
        RuleArg::Som => Rule::SumOfMax,
        RuleArg::Joint => Rule::Joint,
        RuleArg::Emu => Rule::SumOfSum,
    };
    let config = RetrievalConfig::new(rule, args.gamma, args.max_iters, args.seed)?;
    let batch = args.batch.unwrap_or(probes.len().max(1));

    let mut outcomes: Vec<cliquemem::retrieval::ProbeOutcome> = Vec::with_capacity(probes.len());
    let mut wall = std::time::Duration::ZERO;
    let sparse = match args.rule {
        RuleArg::Som | RuleArg::Joint => Some(w.sparsify()),
        _ => None,
    };
    for chunk in probes.chunks(batch.max(1)) {
        let out: RetrievalOutcome = match args.rule {
            RuleArg::Sos => run_sum_of_sum(&w, chunk, &config)?,
            RuleArg::Som => run_sum_of_max(sparse.as_ref().unwrap(), chunk, &config)?,
            RuleArg::Joint => run_joint(&w, sparse.as_ref().unwrap(), chunk, &config)?,
            RuleArg::Emu => {
                let theta = args.theta.context("--rule emu needs --theta")?;
                let params = EmulationParams::new(theta, args.fixed_width)?;
                run_emulated(&w, chunk, &params, &config)?
            }
        };
        wall += out.wall;
        outcomes.extend(out.probes);
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (k, probe) in outcomes.iter().enumerate() {
        let status = match probe.status {
            Status::Converged => "converged",
            Status::MaxItersExceeded { oscillating: true } => "oscillating",
            Status::MaxItersExceeded { oscillating: false } => "capped",
        };
        writeln!(
            out,
            "{}\t{}\titers={}\t{}",
            k + 1,
            status,
            probe.iterations,
            format_extraction(&extract_messages(&probe.state))
        )?;
    }

    if let Some(originals) = &originals {
        let choice_base = bench::derive_seed(args.seed, 4);
        let successes = originals
            .iter()
            .zip(&outcomes)
            .enumerate()
            .filter(|(k, (original, probe))| {
                bench::probe_success(
                    &probe.state,
                    original,
                    SuccessRule::UniqueOnly,
                    bench::derive_seed(choice_base, *k as u64),
                )
            })
            .count();
        let rate = successes as f64 / originals.len().max(1) as f64;
        let mean_iters =
            outcomes.iter().map(|p| p.iterations as f64).sum::<f64>() / outcomes.len().max(1) as f64;
        let oscillations = outcomes.iter().filter(|p| p.status.is_oscillating()).count();
        eprintln!(
            "rate={rate:.4} mean_iters={mean_iters:.2} oscillations={oscillations} wall_ms={:.1}",
            wall.as_secs_f64() * 1e3
        );
        if let Some(path) = &args.csv {
            let mut f = File::options()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("cannot open {}", path.display()))?;
            if f.metadata()?.len() == 0 {
                writeln!(
                    f,
                    "rule,clusters,cluster_size,stored,probes,erased,gamma,retrieval_rate,mean_iters,oscillation_count,wall_ms"
                )?;
            }
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{}",
                rule_name(args.rule),
                shape.clusters(),
                shape.cluster_size(),
                w.stored_count(),
                outcomes.len(),
                args.erase.unwrap_or(0),
                args.gamma,
                rate,
                mean_iters,
                oscillations,
                wall.as_secs_f64() * 1e3,
            )?;
        }
    } else if args.csv.is_some() {
        bail!("--csv scores retrieval rates and therefore needs --erase");
    }
    Ok(())
}

fn rule_name(rule: RuleArg) -> &'static str {
    match rule {
        RuleArg::Sos => "sos",
        RuleArg::Som => "som",
        RuleArg::Joint => "joint",
        RuleArg::Emu => "emu",
    }
}

fn build_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let rule = match args.rule {
        RuleArg::Sos => ScenarioRule::SumOfSum,
        RuleArg::Som => ScenarioRule::SumOfMax,
        RuleArg::Joint => ScenarioRule::Joint,
        RuleArg::Emu => ScenarioRule::Emulated {
            theta: args.theta.context("--rule emu needs --theta")?,
            fixed_width: args.fixed_width,
        },
    };
    let mut scenario = match args.preset {
        Preset::Scenario1 => Scenario::scenario1(rule, args.erase),
        Preset::Scenario2 => Scenario::scenario2(rule, args.erase),
        Preset::Custom => {
            let (Some(c), Some(l), Some(stored), Some(probes)) = (
                args.clusters,
                args.cluster_size,
                args.stored,
                args.probes,
            ) else {
                bail!("custom scenarios need --clusters, --cluster-size, --stored and --probes");
            };
            Scenario {
                shape: NetworkShape::new(c, l)?,
                stored,
                probes,
                erased: args.erase,
                gamma: 1,
                rule,
                max_iters: 20,
                seed: args.seed,
                repetitions: args.reps,
                success_rule: SuccessRule::UniqueOnly,
            }
        }
    };
    scenario.seed = args.seed;
    scenario.repetitions = args.reps;
    if let Some(gamma) = args.gamma {
        scenario.gamma = gamma;
    }
    if let Some(max_iters) = args.max_iters {
        scenario.max_iters = max_iters;
    }
    if args.random_choice {
        scenario.success_rule = SuccessRule::RandomChoice;
    }
    Ok(scenario)
}

fn print_report(report: &bench::RunReport) {
    let s = &report.scenario;
    println!(
        "{} {} stored={} probes={} e={} gamma={} reps={}: rate={:.4} mean_iters={:.2} oscillations={} wall_ms={:.1}",
        s.rule.name(),
        format_shape(s.shape),
        s.stored,
        s.probes,
        s.erased,
        s.gamma,
        s.repetitions,
        report.retrieval_rate,
        report.mean_iterations,
        report.oscillation_count,
        report.wall_ms,
    );
}

fn write_reports(reports: &[bench::RunReport], out: Option<&PathBuf>) -> Result<()> {
    if let Some(path) = out {
        let file =
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        emit_csv(reports, BufWriter::new(file))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let scenario = build_scenario(&args.scenario)?;
    let report = run_scenario(&scenario)?;
    print_report(&report);
    write_reports(std::slice::from_ref(&report), args.out.as_ref())?;
    if args.check {
        let violations = acceptance_violations(&report);
        if !violations.is_empty() {
            for v in &violations {
                eprintln!("band violation: {v}");
            }
            std::process::exit(2);
        }
        println!("all bands satisfied");
    }
    Ok(())
}

fn cmd_sweep_gamma(args: SweepGammaArgs) -> Result<()> {
    if args.gammas.is_empty() {
        bail!("--gammas needs at least one value");
    }
    let base = build_scenario(&args.scenario)?;
    let reports = gamma_sweep(&base, &args.gammas)?;
    for r in &reports {
        print_report(r);
    }
    write_reports(&reports, args.out.as_ref())
}

fn cmd_sweep_erasure(args: SweepErasureArgs) -> Result<()> {
    if args.erasures.is_empty() {
        bail!("--erasures needs at least one value");
    }
    let mut reports = Vec::new();
    for &rule in &args.rules {
        let mut scenario_args = ScenarioArgs {
            rule,
            ..clone_scenario_args(&args.scenario)
        };
        scenario_args.rule = rule;
        let base = build_scenario(&scenario_args)?;
        reports.extend(erasure_sweep(&base, &args.erasures)?);
    }
    for r in &reports {
        print_report(r);
    }
    write_reports(&reports, args.out.as_ref())
}

fn clone_scenario_args(a: &ScenarioArgs) -> ScenarioArgs {
    ScenarioArgs {
        preset: a.preset,
        rule: a.rule,
        erase: a.erase,
        gamma: a.gamma,
        max_iters: a.max_iters,
        seed: a.seed,
        reps: a.reps,
        random_choice: a.random_choice,
        theta: a.theta,
        fixed_width: a.fixed_width,
        clusters: a.clusters,
        cluster_size: a.cluster_size,
        stored: a.stored,
        probes: a.probes,
    }
}

fn format_shape(shape: NetworkShape) -> String {
    format!("{}x{}", shape.clusters(), shape.cluster_size())
}

fn format_extraction(ext: &Extraction) -> String {
    match ext {
        Extraction::Unique(m) => m.to_string(),
        Extraction::Ambiguous { candidates, .. } => {
            let fields: Vec<String> = candidates
                .iter()
                .map(|set| {
                    if set.len() == 1 {
                        set[0].to_string()
                    } else {
                        let inner: Vec<String> = set.iter().map(|s| s.to_string()).collect();
                        format!("{{{}}}", inner.join("|"))
                    }
                })
                .collect();
            format!("ambiguous:{}", fields.join(","))
        }
        Extraction::Empty => "empty".to_string(),
    }
}
