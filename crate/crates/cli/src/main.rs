use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ddtrx_cli::commands::{
    cmd_infer, cmd_ingest, cmd_project, cmd_simulate, cmd_summarize, diagnostics_table, InferOptions, InputKind,
    DEFAULT_SHARD,
};
use ddtrx_cli::config::{resolve, DATA_DIR_ENV};
use ddtrx_cli::service::{serve, AppState};
use ddtrx_cli::{LoadedRun, RunConfig};
use ddtrx_core::GammaSpec;

#[derive(Parser)]
#[command(name = "ddtrx", version, about = "Dirichlet diffusion tree inference for treatment response matrices")]
struct Cli {
    /// Root for relative run and output paths.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PriorArgs {
    /// Gamma prior on c as `shape,rate`.
    #[arg(long, default_value = "2,2", value_parser = parse_gamma)]
    prior_c: GammaSpec,
    /// Gamma prior on 1/sigma2 as `shape,rate`.
    #[arg(long, default_value = "1,1", value_parser = parse_gamma)]
    prior_precision: GammaSpec,
}

#[derive(Subcommand)]
enum Command {
    /// Fill or extend a synthetic-data cache for ABC.
    Simulate {
        #[arg(long)]
        leaves: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 20_000)]
        nsyn: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SHARD)]
        shard: usize,
        #[command(flatten)]
        prior: PriorArgs,
        /// Cache file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess a raw response table into a data matrix.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "untreated")]
        untreated: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Also write multivariate normality QQ points.
        #[arg(long)]
        qq: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write a run directory with its manifest.
    Infer {
        input: PathBuf,
        /// Input is an already preprocessed data matrix.
        #[arg(long)]
        preprocessed: bool,
        #[arg(long, default_value_t = 20_000)]
        nsyn: usize,
        #[arg(long, default_value_t = 0.005)]
        d: f64,
        #[arg(long, default_value_t = 5)]
        chains: usize,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        #[arg(long, default_value_t = 9_000)]
        burnin: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "untreated")]
        untreated: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        prior: PriorArgs,
        /// Reuse or extend this synthetic cache.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the MAP tree and, for a subset, its iPCP and PCP curve as JSON.
    Summarize {
        run: PathBuf,
        /// Comma separated treatment labels.
        #[arg(long, value_delimiter = ',')]
        subset: Vec<String>,
    },
    /// Project a similarity matrix CSV onto tree-structured matrices.
    Project {
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve runs over the JSON API.
    Serve {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn parse_gamma(s: &str) -> Result<GammaSpec, String> {
    let (a, b) = s.split_once(',').ok_or("expected `shape,rate`")?;
    let shape: f64 = a.trim().parse().map_err(|_| format!("bad shape `{a}`"))?;
    let rate: f64 = b.trim().parse().map_err(|_| format!("bad rate `{b}`"))?;
    GammaSpec::new(shape, rate).map_err(|e| e.to_string())
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let root = cli.data_dir.as_deref();
    let at = |p: &Path| resolve(p, root);
    match cli.command {
        Command::Simulate { leaves, cols, nsyn, seed, shard, prior, out } => {
            let cfg = RunConfig { prior_c: prior.prior_c, prior_sigma2_inv: prior.prior_precision, ..Default::default() };
            let r = cmd_simulate(&cfg.synthetic_spec(leaves, cols), nsyn, seed, &at(&out), shard)?;
            println!("reused {} draws, generated {}", r.reused, r.generated);
        }
        Command::Ingest { input, untreated, k, qq, out } => {
            let d = cmd_ingest(&input, &untreated, k, &at(&out), qq.map(|q| at(&q)).as_deref())?;
            println!("wrote {} treatments x {} patients", d.rows(), d.cols());
        }
        Command::Infer {
            input,
            preprocessed,
            nsyn,
            d,
            chains,
            iters,
            burnin,
            thin,
            seed,
            untreated,
            k,
            prior,
            cache,
            id,
            out,
        } => {
            let cfg = RunConfig {
                prior_c: prior.prior_c,
                prior_sigma2_inv: prior.prior_precision,
                n_syn: nsyn,
                d,
                chains,
                iters,
                burn_in: burnin,
                thin,
                seed,
                k_neighbors: k,
                untreated,
            };
            let kind = if preprocessed { InputKind::Preprocessed } else { InputKind::Raw };
            let opts = InferOptions { input, kind, out: at(&out), cache: cache.map(|c| at(&c)), id };
            let m = cmd_infer(&opts, &cfg)?;
            print!("{}", diagnostics_table(&m));
            println!("manifest written to {}", opts.out.join(ddtrx_cli::manifest::MANIFEST_FILE).display());
        }
        Command::Summarize { run, subset } => {
            let run = LoadedRun::load(&at(&run))?;
            print_json(&cmd_summarize(&run, &subset)?, None)?;
        }
        Command::Project { matrix, out } => {
            print_json(&cmd_project(&matrix)?, out.map(|o| at(&o)).as_deref())?;
        }
        Command::Serve { runs, bind } => {
            let loaded = runs.iter().map(|r| LoadedRun::load(&at(r))).collect::<Result<Vec<_>, _>>()?;
            let state = AppState::new(loaded)?;
            tokio::runtime::Runtime::new()?.block_on(serve(&bind, state))?;
        }
    }
    Ok(())
}
