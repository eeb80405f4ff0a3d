use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use corank_cli::commands;
use corank_cli::config::{ExperimentConfig, Mode};
use corank_core::rerank::Strategy;

#[derive(Parser, Debug)]
#[command(author, version, about = "Listwise LLM reranking over compact document features")]
struct Cli {
    /// Experiment config (TOML)
    #[arg(short, long, global = true, default_value = "corank.toml")]
    config: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Keywords kept per document in compact representations
    #[arg(long, global = true)]
    k_keywords: Option<usize>,

    /// Seed-set size promoted to full-text reranking
    #[arg(long, global = true)]
    fine_k: Option<usize>,

    /// Candidates in the coarse pool
    #[arg(long, global = true)]
    coarse_m: Option<usize>,

    /// Backend cache mode
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract features for every document not yet in the sidecar
    Extract,
    /// Retrieve candidates and rerank them, one run file per strategy
    Rerank {
        /// vanilla, sliding, corank or corank-sliding; repeatable
        #[arg(short, long)]
        strategy: Vec<Strategy>,
    },
    /// Score run files against the qrels
    Eval {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Token-length distributions of full texts and compact forms
    TokenStats,
    /// Token usage and cost of run files or raw token counts
    CostReport {
        runs: Vec<PathBuf>,
        /// Raw counts such as 29.61M; repeatable
        #[arg(long)]
        tokens: Vec<String>,
        /// USD per million tokens; defaults to the config's price
        #[arg(long)]
        price: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    let o = &cli.overrides;
    if let Some(k) = o.k_keywords {
        cfg.rerank.k_keywords = k;
    }
    if let Some(k) = o.fine_k {
        cfg.rerank.fine_k = k;
    }
    if let Some(m) = o.coarse_m {
        cfg.rerank.coarse_m = m;
    }
    if let Some(m) = o.mode {
        cfg.backend.mode = m;
    }
    if let Some(d) = &o.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    match &cli.command {
        Command::Extract => {
            let cfg = load_config(&cli)?;
            println!("{}", commands::cmd_extract(&cfg)?);
        }
        Command::Rerank { strategy } => {
            let cfg = load_config(&cli)?;
            for out in commands::cmd_rerank(&cfg, &cfg.strategies(strategy))? {
                println!(
                    "{}: {} tokens -> {}",
                    out.strategy,
                    out.tokens.total(),
                    out.path.display()
                );
            }
        }
        Command::Eval { runs } => {
            let cfg = load_config(&cli)?;
            let out = commands::cmd_eval(&cfg, runs)?;
            for (path, _, report) in &out.reports {
                println!("== {}", path.display());
                print!("{}", report.to_table());
            }
            if let Some(table) = out.comparison {
                println!();
                print!("{table}");
            }
        }
        Command::TokenStats => {
            let cfg = load_config(&cli)?;
            println!("{}", commands::cmd_token_stats(&cfg)?);
        }
        Command::CostReport { runs, tokens, price } => {
            let price = match price {
                Some(p) => *p,
                None => load_config(&cli)?.price_per_million,
            };
            print!("{}", commands::cmd_cost_report(runs, tokens, price)?);
        }
    }
    Ok(())
}
