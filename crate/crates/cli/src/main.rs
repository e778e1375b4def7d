//! `copilot`: run the server, ingest papers, rebuild the paper pool, or
//! run the benchmarks.
//!
//! Exit codes: 0 success, 1 failure, 2 bad usage or configuration,
//! 3 ingest finished but skipped malformed entries.

mod lock;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use copilot_core::bench::{self, DeployParams, ScalingParams};
use copilot_core::clock::{Clock, SystemClock};
use copilot_core::config::{ConfigError, ProviderKind, Settings};
use copilot_core::corpus::PaperRecord;
use copilot_core::feed::{ArxivFeed, FixtureFeed, PaperFeed};
use copilot_core::runtime::{Runtime, RuntimeError, RuntimeOptions};
use copilot_core::services::Toggles;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "copilot", version, about = "Personalized research copilot", arg_required_else_help = true)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `data_dir` from the config.
    #[arg(long, env = "DATA_DIR", global = true)]
    data_dir: Option<PathBuf>,
    /// Overrides `provider` from the config.
    #[arg(long, global = true, value_parser = ["mock", "live"])]
    provider: Option<String>,
    /// Read papers from fixture files (a directory of YYYY-MM-DD.jsonl, or
    /// one .jsonl file) instead of the live feed.
    #[arg(long, global = true, value_name = "PATH")]
    fixture_mode: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serve the HTTP API.
    Run(RunArgs),
    /// Ingest one day of papers.
    Ingest(IngestArgs),
    /// Re-embed the whole corpus into a fresh paper pool.
    RebuildPool,
    /// Benchmarks; CSV on stdout.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Also serve the web client's static files from this directory.
    #[arg(long, value_name = "DIR")]
    static_dir: Option<PathBuf>,
    /// Do not run the daily update on schedule.
    #[arg(long)]
    no_scheduler: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// One .jsonl file of papers, ingested as the given day.
    #[arg(long, value_name = "FILE")]
    fixture: Option<PathBuf>,
    /// Day to ingest. Defaults to the newest date in the fixture, or today.
    #[arg(long)]
    date: Option<NaiveDate>,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Retrieval latency against corpus size, with and without the pool.
    Retrieval {
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 2000, 4000, 8000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        naive_trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Scripted session time, all optimizations off versus the given set.
    Deploy {
        /// Comma-separated subset of precompute,cache,engine; or `none`.
        #[arg(long, default_value = "precompute,cache,engine", value_parser = parse_toggles)]
        toggles: Toggles,
        /// Simulated provider latency per completion.
        #[arg(long, default_value_t = 5000)]
        latency_ms: u64,
        /// Multiply every simulated delay by this.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn parse_toggles(s: &str) -> Result<Toggles, String> {
    let mut t = Toggles::ALL_OFF;
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "none" => {}
            "precompute" => t.precompute = true,
            "cache" => t.cache = true,
            "engine" | "parallel_engine" => t.parallel_engine = true,
            other => return Err(format!("unknown toggle {other:?} (expected precompute, cache, engine or none)")),
        }
    }
    Ok(t)
}

fn load_settings(cli: &Cli) -> Result<Settings, ConfigError> {
    let mut settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(dir) = &cli.data_dir {
        settings.data_dir = dir.clone();
    }
    if let Some(p) = &cli.provider {
        settings.provider = p.parse::<ProviderKind>().map_err(|reason| ConfigError::Invalid {
            key: "provider",
            reason,
        })?;
    }
    settings.validate()?;
    Ok(settings)
}

fn feed_for(cli: &Cli, settings: &Settings) -> Result<Arc<dyn PaperFeed>> {
    Ok(match &cli.fixture_mode {
        Some(path) if path.is_dir() => Arc::new(
            FixtureFeed::from_dir(path).with_context(|| format!("reading fixtures in {}", path.display()))?,
        ),
        Some(path) => Arc::new(FixtureFeed::from_file(path).with_context(|| format!("reading {}", path.display()))?),
        None => Arc::new(ArxivFeed::new(settings.categories.clone())),
    })
}

fn build_runtime(settings: Settings, feed: Arc<dyn PaperFeed>, start_scheduler: bool) -> Result<Runtime> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    Runtime::build(
        settings,
        RuntimeOptions {
            feed,
            clock,
            api_key: std::env::var("PROVIDER_API_KEY").ok().filter(|k| !k.is_empty()),
            toggles: Toggles::ALL_ON,
            ephemeral: false,
            start_scheduler,
        },
    )
    .map_err(Into::into)
}

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

fn newest_date(path: &Path) -> Result<Option<NaiveDate>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter_map(published_of)
        .max())
}

/// The `published` date of a corpus line, if the line parses.
fn published_of(line: &str) -> Option<NaiveDate> {
    copilot_core::feed::parse_lines(line)
        .into_iter()
        .next()?
        .ok()
        .map(|r: PaperRecord| r.published)
}

fn ingest(cli: &Cli, args: &IngestArgs) -> Result<u8> {
    let settings = load_settings(cli)?;
    let _lock = lock::DataDirLock::acquire(&settings.data_dir)?;
    let (feed, default_date): (Arc<dyn PaperFeed>, Option<NaiveDate>) = match &args.fixture {
        Some(file) => (
            Arc::new(FixtureFeed::from_file(file).with_context(|| format!("reading {}", file.display()))?),
            newest_date(file)?,
        ),
        None => (feed_for(cli, &settings)?, None),
    };
    let date = args
        .date
        .or(default_date)
        .unwrap_or_else(|| SystemClock.today());
    let rt = build_runtime(settings, feed, false)?;
    let result = rt.engine.run_daily_update(date);
    rt.shutdown();
    let summary = result.with_context(|| format!("ingesting {date}"))?;
    let mut line = plural(summary.new_papers, "new paper", "new papers");
    if summary.duplicates > 0 {
        line.push_str(&format!(", {} already present", plural(summary.duplicates, "paper", "papers")));
    }
    if summary.malformed > 0 {
        line.push_str(&format!(
            ", {} skipped",
            plural(summary.malformed, "malformed entry", "malformed entries")
        ));
    }
    println!("{line}");
    Ok(if summary.malformed > 0 { EXIT_PARTIAL } else { 0 })
}

fn rebuild_pool(cli: &Cli) -> Result<u8> {
    let settings = load_settings(cli)?;
    let _lock = lock::DataDirLock::acquire(&settings.data_dir)?;
    let feed = feed_for(cli, &settings)?;
    let rt = build_runtime(settings, feed, false)?;
    let rows = rt.engine.rebuild_paper_pool();
    rt.shutdown();
    println!("rebuilt paper pool: {}", plural(rows?, "row", "rows"));
    Ok(0)
}

fn run(cli: &Cli, args: &RunArgs) -> Result<u8> {
    let settings = load_settings(cli)?;
    let _lock = lock::DataDirLock::acquire(&settings.data_dir)?;
    let feed = feed_for(cli, &settings)?;
    let rt = build_runtime(settings, feed, !args.no_scheduler)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", args.host, args.port))?;
    let state = copilot_api::AppState {
        copilot: rt.copilot.clone(),
        clock: Arc::new(SystemClock),
    };
    let app = match &args.static_dir {
        Some(dir) => copilot_api::router_with_static(state, dir),
        None => copilot_api::router(state),
    };
    let served = tokio::runtime::Runtime::new()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        copilot_api::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(anyhow::Error::from)
    });
    rt.shutdown();
    served?;
    Ok(0)
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn bench_cmd(cmd: &BenchCommand) -> Result<u8> {
    match cmd {
        BenchCommand::Retrieval {
            sizes,
            trials,
            naive_trials,
            seed,
            out,
        } => {
            let report = bench::bench_retrieval_scaling(&ScalingParams {
                sizes: sizes.clone(),
                trials: *trials,
                naive_trials: *naive_trials,
                seed: *seed,
                ..ScalingParams::default()
            });
            write_out(out.as_deref(), &report.to_csv())?;
        }
        BenchCommand::Deploy {
            toggles,
            latency_ms,
            time_scale,
            rounds,
            out,
        } => {
            if !time_scale.is_finite() || *time_scale <= 0.0 {
                bail!("--time-scale must be positive");
            }
            let cmp = bench::compare_deployment(&DeployParams {
                toggles: *toggles,
                provider_latency: Duration::from_millis(*latency_ms),
                time_scale: *time_scale,
                rounds: *rounds,
                ..DeployParams::default()
            })?;
            let mut csv = cmp.before.to_csv();
            csv.push_str(cmp.after.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
            write_out(out.as_deref(), &csv)?;
            eprintln!(
                "before {:.1}s, after {:.1}s (nominal), reduction {:.2}%",
                cmp.before.nominal_total_seconds, cmp.after.nominal_total_seconds, cmp.reduction_pct
            );
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,copilot_core=info".into()),
        )
        .init();
    let result = match &cli.command {
        Command::Run(args) => run(&cli, args),
        Command::Ingest(args) => ingest(&cli, args),
        Command::RebuildPool => rebuild_pool(&cli),
        Command::Bench(cmd) => bench_cmd(cmd),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_problem = err.downcast_ref::<ConfigError>().is_some()
                || matches!(err.downcast_ref::<RuntimeError>(), Some(RuntimeError::MissingApiKey));
            if config_problem {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}
