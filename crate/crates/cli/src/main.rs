//! `pimdc`: PIM design-space exploration from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or spec error.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pimdc_core::net_ir::{self, NetworkSpec};
use pimdc_core::pim_map::{self, ArraySpec, MappingOptions};
use pimdc_core::robustness::{
    self, fixtures, EvalConfig, InjectionPoint, MaxScope, NoiseMode, NoiseOptions,
};
use pimdc_core::zoo::ZooEntry;
use pimdc_core::{io as formats, report, Error};

#[derive(Parser)]
#[command(
    name = "pimdc",
    version,
    about = "DNN design-space exploration for processing-in-memory arrays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer weight, MAC and activation counts.
    Analyze {
        #[command(flatten)]
        src: NetSource,
        #[command(flatten)]
        out: OutDir,
    },
    /// Map every weighted layer onto one array size.
    Map {
        #[command(flatten)]
        src: NetSource,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        replication: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Map onto a list of array sizes (`N` for square, or `RxC`).
    SweepArray {
        #[command(flatten)]
        src: NetSource,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<String>,
        #[arg(long)]
        replication: bool,
        /// Write latency/reads/utilization charts into this directory.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Monte Carlo accuracy under additive Gaussian noise.
    SweepNoise {
        #[command(flatten)]
        src: NetSource,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
        /// Inject before or after the layer's relu.
        #[arg(long, value_enum, default_value_t = InjectArg::Post)]
        inject: InjectArg,
        /// Rescaled mode: take the layer maximum per sample or over the dataset.
        #[arg(long, value_enum, default_value_t = ScopeArg::Sample)]
        max_scope: ScopeArg,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Clean accuracy with weights quantized to each bit width.
    SweepQuant {
        #[command(flatten)]
        src: NetSource,
        #[arg(long, value_delimiter = ',', required = true)]
        bits: Vec<u32>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// List zoo entries or print one as a network spec.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Write a toy fixture (spec, weights, dataset) into a directory.
    Fixture {
        /// toy-chain-D, toy-avg-K, rank-deep, rank-shallow, quant-fragile, quant-robust
        name: String,
        #[arg(long, default_value_t = 1.0)]
        margin: f32,
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ZooAction {
    List,
    Emit { name: String },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct NetSource {
    /// Network spec JSON (`-` for stdin).
    #[arg(long)]
    net: Option<PathBuf>,
    /// Zoo entry name.
    #[arg(long)]
    zoo: Option<String>,
}

#[derive(Args)]
struct DataArgs {
    /// Weights manifest; the blob is the sibling `.bin` file.
    #[arg(long)]
    weights: PathBuf,
    /// Dataset manifest; the blob is the sibling `.bin` file.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct OutDir {
    /// Write output files here instead of printing CSV to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Rescaled,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectArg {
    Pre,
    Post,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Sample,
    Dataset,
}

fn load_net(src: &NetSource) -> anyhow::Result<NetworkSpec> {
    let net = match (&src.net, &src.zoo) {
        (Some(path), None) => {
            let text = if path == Path::new("-") {
                let mut s = String::new();
                io::stdin().read_to_string(&mut s)?;
                s
            } else {
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
            };
            formats::parse_network(&text)?
        }
        (None, Some(name)) => name.parse::<ZooEntry>()?.build(),
        _ => unreachable!("clap enforces exactly one source"),
    };
    let violations = net_ir::validate(&net);
    if !violations.is_empty() {
        return Err(Error::InvalidNetwork(violations).into());
    }
    Ok(net)
}

fn emit(out: &OutDir, file: &str, content: &str) -> anyhow::Result<()> {
    match &out.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), content)?;
        }
        None => io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn write_svgs(dir: &Path, charts: &[(&str, report::Chart)]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, chart) in charts {
        fs::write(dir.join(format!("{name}.svg")), chart.to_svg())?;
    }
    Ok(())
}

fn parse_size(s: &str) -> anyhow::Result<ArraySpec> {
    let bad = || {
        anyhow!(Error::Config(format!(
            "bad array size `{s}` (use N or RxC)"
        )))
    };
    let (r, c) = match s.split_once(['x', 'X']) {
        Some((r, c)) => (
            r.trim().parse().map_err(|_| bad())?,
            c.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    Ok(ArraySpec::new(r, c)?)
}

/// Thread cap from `PIMDC_THREADS` (unset or 0 means automatic).
fn thread_cap() -> anyhow::Result<Option<usize>> {
    match std::env::var("PIMDC_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::Config(format!("PIMDC_THREADS must be an integer, got `{v}`"))
            })?;
            Ok((n > 0).then_some(n))
        }
    }
}

fn csv(f: impl FnOnce(&mut Vec<u8>) -> pimdc_core::Result<()>) -> anyhow::Result<String> {
    Ok(report::to_string(f)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = thread_cap()?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Analyze { src, out } => {
            let net = load_net(&src)?;
            let counts = net_ir::count(&net)?;
            emit(
                &out,
                "counts.csv",
                &csv(|w| report::write_counts(w, &counts))?,
            )
        }
        Command::Map {
            src,
            rows,
            cols,
            replication,
            out,
        } => {
            let net = load_net(&src)?;
            let array = ArraySpec::new(rows, cols)?;
            let rep = pim_map::report(&net, array, MappingOptions { replication })?;
            emit(
                &out,
                "mapping.csv",
                &csv(|w| report::write_mapping(w, &rep))?,
            )
        }
        Command::SweepArray {
            src,
            sizes,
            replication,
            svg,
            out,
        } => {
            let net = load_net(&src)?;
            let sizes = sizes
                .iter()
                .map(|s| parse_size(s))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let table = pim_map::sweep_arrays(&net, &sizes, MappingOptions { replication })?;
            let text = csv(|w| report::write_sweep(w, &table))?;
            if let Some(dir) = svg {
                write_svgs(&dir, &report::sweep_charts(&table))?;
            }
            emit(&out, "sweep.csv", &text)
        }
        Command::SweepNoise {
            src,
            mode,
            points,
            trials,
            seed,
            data,
            inject,
            max_scope,
            svg,
            out,
        } => {
            let net = load_net(&src)?;
            let weights = formats::read_weights(&data.weights)?;
            let dataset = formats::read_dataset(&data.data)?;
            let mode = match mode {
                ModeArg::Fixed => NoiseMode::Fixed,
                ModeArg::Rescaled => NoiseMode::Rescaled,
            };
            let opts = NoiseOptions {
                point: match inject {
                    InjectArg::Pre => InjectionPoint::PreActivation,
                    InjectArg::Post => InjectionPoint::PostActivation,
                },
                max_scope: match max_scope {
                    ScopeArg::Sample => MaxScope::PerSample,
                    ScopeArg::Dataset => MaxScope::PerDataset,
                },
            };
            let cfg = EvalConfig {
                trials,
                master_seed: seed,
                threads,
            };
            let rep = robustness::sweep_noise(&net, &weights, &dataset, mode, &points, &cfg, opts)?;
            let text = csv(|w| report::write_eval(w, &rep))?;
            if let Some(dir) = svg {
                let x = match mode {
                    NoiseMode::Fixed => "noise standard deviation",
                    NoiseMode::Rescaled => "noise std / max |activation|",
                };
                let chart = report::eval_chart("Accuracy under noise", x, &net.name, &rep);
                write_svgs(&dir, &[("noise", chart)])?;
            }
            emit(&out, "noise.csv", &text)
        }
        Command::SweepQuant {
            src,
            bits,
            data,
            out,
        } => {
            let net = load_net(&src)?;
            let weights = formats::read_weights(&data.weights)?;
            let dataset = formats::read_dataset(&data.data)?;
            let rep = robustness::sweep_quant(&net, &weights, &dataset, &bits, threads)?;
            emit(&out, "quant.csv", &csv(|w| report::write_eval(w, &rep))?)
        }
        Command::Zoo { action } => match action {
            ZooAction::List => {
                let mut stdout = io::stdout().lock();
                for entry in ZooEntry::catalog() {
                    writeln!(stdout, "{:<14} {}", entry.to_string(), entry.description())?;
                }
                writeln!(
                    stdout,
                    "(toy-chain-D and toy-avg-K accept any positive D, K)"
                )?;
                Ok(())
            }
            ZooAction::Emit { name } => {
                let net = name.parse::<ZooEntry>()?.build();
                println!("{}", formats::network_to_json(&net));
                Ok(())
            }
        },
        Command::Fixture { name, margin, dir } => write_fixture(&name, margin, &dir),
    }
}

fn write_fixture(name: &str, margin: f32, dir: &Path) -> anyhow::Result<()> {
    let fixture = match name {
        "rank-deep" => fixtures::noise_rank_pair().0,
        "rank-shallow" => fixtures::noise_rank_pair().1,
        "quant-fragile" => fixtures::quant_rank_pair().0,
        "quant-robust" => fixtures::quant_rank_pair().1,
        _ => match name.parse::<ZooEntry>() {
            Ok(ZooEntry::ToyChain(d)) => fixtures::unit_chain(d, margin),
            Ok(ZooEntry::ToyAvg(k)) => fixtures::averaging(k, margin),
            _ => bail!(Error::Config(format!("unknown fixture `{name}`"))),
        },
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("net.json"), formats::network_to_json(&fixture.net))?;
    formats::write_weights(&dir.join("weights.json"), &fixture.weights)?;
    formats::write_dataset(&dir.join("data.json"), &fixture.data)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("pimdc: {err:#}");
            let usage = err.downcast_ref::<Error>().is_some_and(Error::is_usage)
                || err.downcast_ref::<clap::Error>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
