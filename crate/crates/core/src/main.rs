use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use toolmem::config::AppConfig;
use toolmem::harness::experiment::{default_sds_document, ExperimentConfig};
use toolmem::harness::{replay_mirrored, run_experiment, ExperimentName, Mode};
use toolmem::ledger::counter_for_scheme;
use toolmem::memory::MemoryStore;
use toolmem::path::parse;
use toolmem::proxy::{connect, serve_stdio, serve_tcp, ProxyHandler, SessionFactory, ToolServerHandler};

#[derive(Parser)]
#[command(name = "toolmem", version, about = "Memory-path proxy for tool servers")]
struct Cli {
    /// Log filter for standard error (overrides the config file).
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Proxy upstream tool servers, serving mirrored tools on stdio or TCP.
    Serve(ServeArgs),
    /// Replay one of the harness workflows and write its metrics as JSON.
    RunExperiment(ExperimentArgs),
    /// Serve the plain harness tools on stdio.
    HarnessServer(HarnessArgs),
    /// Inspect an in-process memory store.
    Mem(MemArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Workflow {
    Grid,
    Sds,
}

impl From<Workflow> for ExperimentName {
    fn from(w: Workflow) -> Self {
        match w {
            Workflow::Grid => ExperimentName::Grid,
            Workflow::Sds => ExperimentName::Sds,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Conventional,
    Mirrored,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Conventional => Mode::Conventional,
            ModeArg::Mirrored => Mode::Mirrored,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    /// Upstream server: `tcp://host:port` or a command line. Repeatable.
    #[arg(long = "upstream")]
    upstreams: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold_bytes: Option<u64>,
    #[arg(long)]
    counter: Option<String>,
    /// Listen on this TCP address instead of stdio.
    #[arg(long)]
    listen: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: Workflow,
    #[arg(long, value_enum, default_value = "mirrored")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    grid_side: usize,
    #[arg(long)]
    context_limit: Option<u64>,
    #[arg(long)]
    threshold_bytes: Option<u64>,
    #[arg(long, env = "TOOLMEM_COUNTER", default_value = "bytes/4")]
    counter: String,
    /// Use the recorded UUIDs for the first stored results.
    #[arg(long)]
    fixed_uuids: bool,
    /// Text file served as `sds.pdf` (default: the padded titanium sheet).
    #[arg(long)]
    document: Option<PathBuf>,
}

#[derive(Args)]
struct HarnessArgs {
    #[arg(value_enum)]
    name: Workflow,
    #[arg(long, default_value_t = 128)]
    grid_side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    document: Option<PathBuf>,
}

#[derive(Args)]
struct MemArgs {
    /// Populate the store by replaying a mirrored workflow first.
    #[arg(long, value_enum)]
    after: Option<Workflow>,
    #[arg(long, default_value_t = 16)]
    grid_side: usize,
    #[arg(long)]
    fixed_uuids: bool,
    #[command(subcommand)]
    action: MemAction,
}

#[derive(Subcommand)]
enum MemAction {
    /// List entries, optionally under a path prefix.
    Ls { prefix: Option<String> },
    /// Print the value at a memory path.
    Get { path: String },
    /// Drop every entry.
    Clear,
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

fn load_document(path: Option<&PathBuf>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())),
        None => Ok(default_sds_document()),
    }
}

fn serve(args: ServeArgs, log_level: Option<String>) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => AppConfig::load(path)?,
        None => {
            let mut c = AppConfig::default();
            c.apply_env(|k| std::env::var(k).ok())?;
            c
        }
    };
    config.endpoints.extend(args.upstreams);
    if let Some(t) = args.threshold_bytes {
        config.mirror.threshold_bytes = t;
    }
    if let Some(c) = args.counter {
        config.counter = c;
    }
    if let Some(l) = log_level {
        config.log_level = l;
    }
    config.validate()?;
    init_logging(&config.log_level);

    let mut tools = Vec::new();
    for endpoint in config.upstreams()? {
        let found = connect(&endpoint).with_context(|| format!("cannot connect to upstream {endpoint}"))?;
        tracing::info!(%endpoint, tools = found.len(), "upstream connected");
        tools.extend(found);
    }
    let mut factory = SessionFactory::new(tools, config.mirror_config());
    factory.capacity_bytes = config.store_capacity_bytes;
    factory.counter = config.token_counter()?;

    match args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("cannot listen on {addr}"))?;
            tracing::info!(address = %listener.local_addr()?, "listening");
            serve_tcp(listener, factory)?;
        }
        None => {
            let handler = ProxyHandler::new(factory.build()?);
            serve_stdio(&handler)?;
        }
    }
    Ok(())
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig {
        grid_side: args.grid_side,
        seed: args.seed,
        runs: args.runs,
        fixed_uuids: args.fixed_uuids,
        counter: counter_for_scheme(&args.counter)?,
        sds_document: load_document(args.document.as_ref())?,
        ..ExperimentConfig::default()
    };
    if let Some(limit) = args.context_limit {
        config.context_limit_tokens = limit;
    }
    if let Some(t) = args.threshold_bytes {
        if t == 0 {
            bail!("threshold_bytes must be at least 1");
        }
        config.threshold_bytes = t;
    }
    Ok(config)
}

/// Ok(false) when some run did not complete.
fn experiment(args: ExperimentArgs) -> Result<bool> {
    let config = experiment_config(&args)?;
    let report = run_experiment(args.name.into(), args.mode.into(), &config)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => fs::write(path, json).with_context(|| format!("cannot write {}", path.display()))?,
        None => io::stdout().write_all(json.as_bytes())?,
    }
    if let Some((i, failure)) = report
        .runs
        .iter()
        .enumerate()
        .find_map(|(i, r)| r.failure_reason.as_ref().map(|f| (i, f)))
    {
        eprintln!(
            "error: run {i} failed at step {} ({}): {}: {}",
            failure.step, failure.tool, failure.reason, failure.detail
        );
        return Ok(false);
    }
    Ok(true)
}

fn harness_server(args: HarnessArgs) -> Result<()> {
    let config = ExperimentConfig {
        grid_side: args.grid_side,
        seed: args.seed,
        sds_document: load_document(args.document.as_ref())?,
        ..ExperimentConfig::default()
    };
    let handler = ToolServerHandler::new(config.tools(args.name.into()));
    serve_stdio(&handler)?;
    Ok(())
}

fn mem(args: MemArgs) -> Result<bool> {
    let session;
    let empty;
    let store: &MemoryStore = match args.after {
        Some(w) => {
            let config = ExperimentConfig {
                grid_side: args.grid_side,
                fixed_uuids: args.fixed_uuids,
                ..ExperimentConfig::default()
            };
            let (replayed, run) = replay_mirrored(w.into(), &config)?;
            if let Some(f) = run.report.failure_reason {
                bail!(
                    "replay failed at step {} ({}): {}: {}",
                    f.step,
                    f.tool,
                    f.reason,
                    f.detail
                );
            }
            session = replayed;
            session.store()
        }
        None => {
            empty = MemoryStore::new();
            &empty
        }
    };
    let mut out = io::stdout().lock();
    match args.action {
        MemAction::Ls { prefix } => {
            writeln!(out, "PATH\tKIND\tBYTES\tPRODUCER")?;
            for e in store.list_entries(prefix.as_deref()) {
                writeln!(out, "{}\t{}\t{}\t{}", e.path, e.kind, e.byte_size, e.producer_tool)?;
            }
        }
        MemAction::Get { path } => {
            let value = parse(&path)
                .and_then(|p| store.get(&p).ok())
                .ok_or_else(|| anyhow!("DanglingPath: no value at {path}"))?;
            writeln!(out, "{}", value.render_text())?;
        }
        MemAction::Clear => writeln!(out, "removed {}", store.clear())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let log_level = cli.log_level.clone();
    if !matches!(cli.command, Command::Serve(_)) {
        init_logging(log_level.as_deref().unwrap_or("warn"));
    }
    let outcome = match cli.command {
        Command::Serve(args) => serve(args, log_level).map(|()| true),
        Command::RunExperiment(args) => experiment(args),
        Command::HarnessServer(args) => harness_server(args).map(|()| true),
        Command::Mem(args) => mem(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
