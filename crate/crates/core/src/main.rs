use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use penumbra_core::http::UreqFetcher;
use penumbra_core::pipeline::{Config, CorpusStore, Pipeline, Stage, StageStatus};

#[derive(Parser)]
#[command(name = "penumbra", version, about = "Find self-hosted git forges, mine them, compare them")]
struct Cli {
    /// Corpus store directory.
    #[arg(long, global = true, default_value = "penumbra-store")]
    store: PathBuf,
    /// TOML configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run despite upstream configuration drift, and rerun completed stages.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CrawlFlags {
    /// Requests per second per host.
    #[arg(long)]
    rate: Option<f64>,
    /// Hosts crawled at the same time.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Only crawl the hosts listed in this file.
    #[arg(long)]
    hosts: Option<PathBuf>,
}

#[derive(Args, Default)]
struct CloneFlags {
    #[arg(long)]
    dest: Option<PathBuf>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    timeout_mins: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Import host lists and query the scan API.
    Scan,
    /// Identify the forge software of every host.
    Probe,
    /// List public repositories on forge hosts.
    Crawl(CrawlFlags),
    /// Bare-clone listed repositories.
    Clone(CloneFlags),
    /// Read commit metadata; sample and clone the comparison corpus.
    Extract,
    /// Per-repository statistics.
    Metrics,
    /// Overlap with public archives and within the corpus.
    Dedup,
    /// Academic labels and locations of hosts.
    Label,
    /// Summary statistics, KS tests and regressions.
    Stats,
    /// Write report tables and distribution exports.
    Report,
    /// Every stage in order; completed stages are skipped.
    RunAll {
        #[command(flatten)]
        crawl: CrawlFlags,
        #[command(flatten)]
        clone: CloneFlags,
    },
}

fn load_config(cli: &Cli) -> Result<Config, String> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| e.to_string())?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_crawl(cfg: &mut Config, f: &CrawlFlags) {
    if let Some(r) = f.rate {
        cfg.crawl.rate = r;
    }
    if let Some(c) = f.concurrency {
        cfg.crawl.concurrency = c;
    }
}

fn apply_clone(cfg: &mut Config, f: &CloneFlags) {
    if let Some(d) = &f.dest {
        cfg.clone.dest = Some(d.clone());
    }
    if let Some(r) = f.retries {
        cfg.clone.retries = r;
    }
    if let Some(t) = f.timeout_mins {
        cfg.clone.timeout_mins = t;
    }
}

fn print(stage: Stage, status: &StageStatus) {
    match status {
        StageStatus::UpToDate => println!("{stage}: up to date"),
        StageStatus::Ran(summary) => println!("{stage}: {summary}"),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let mut cfg = load_config(&cli)?;
    let mut host_filter = None;
    let stage = match &cli.command {
        Command::Scan => Some(Stage::Scan),
        Command::Probe => Some(Stage::Probe),
        Command::Crawl(f) => {
            apply_crawl(&mut cfg, f);
            host_filter = f.hosts.clone();
            Some(Stage::Crawl)
        }
        Command::Clone(f) => {
            apply_clone(&mut cfg, f);
            Some(Stage::Clone)
        }
        Command::Extract => Some(Stage::Extract),
        Command::Metrics => Some(Stage::Metrics),
        Command::Dedup => Some(Stage::Dedup),
        Command::Label => Some(Stage::Label),
        Command::Stats => Some(Stage::Stats),
        Command::Report => Some(Stage::Report),
        Command::RunAll { crawl, clone } => {
            apply_crawl(&mut cfg, crawl);
            apply_clone(&mut cfg, clone);
            host_filter = crawl.hosts.clone();
            None
        }
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let fetcher = UreqFetcher::new(&cfg.user_agent, Duration::from_secs(cfg.probe.timeout_secs));
    let store = CorpusStore::open(&cli.store).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::new(store, cfg, Arc::new(fetcher))
        .with_force(cli.force)
        .with_host_filter(host_filter);
    match stage {
        Some(s) => {
            let status = pipeline.run_stage(s).map_err(|e| e.to_string())?;
            print(s, &status);
        }
        None => {
            for s in Stage::ALL {
                let status = pipeline.run_stage(s).map_err(|e| e.to_string())?;
                print(s, &status);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
