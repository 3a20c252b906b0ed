use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vcvi_core::oracles::{rwm_sample, McmcChain};
use vcvi_core::parallel::Parallelism;
use vcvi_core::targets::{simulate_logistic_dataset, Design, Target};

use vcvi_cli::checks::registry;
use vcvi_cli::config::{Config, Overrides, OUTPUT_ROOT_ENV};
use vcvi_cli::ingest::{write_csv, write_libsvm, DataFormat, Dataset};
use vcvi_cli::run::{compare, execute, plan_comparison, REPORT_FILE};
use vcvi_cli::CliError;

/// Variational inference with vector copulas: fits, comparisons and checks.
#[derive(Parser)]
#[command(name = "vcvi", version, about)]
struct Cli {
    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run everything on the calling thread, members of a comparison one
    /// after another. Results are identical either way; timings are not.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one family and write trace.csv, report.json and checkpoint.json.
    Run(RunArgs),
    /// Fit several families on one target and tabulate them against a baseline.
    Compare(CompareArgs),
    /// Run the oracle check manifest.
    Check(CheckArgs),
    /// Write a simulated logistic-regression dataset.
    SimulateData(SimulateArgs),
    /// Draw a random-walk Metropolis reference sample for a configured target.
    McmcReference(McmcArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory [default: [output].dir, else $VCVI_OUTPUT_ROOT/<hash>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides [va].family.
    #[arg(long)]
    family: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// One or more configurations sharing a target; repeat the flag.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Families to fit on each configuration, in column order; repeat the flag.
    #[arg(long = "family")]
    families: Vec<String>,
    #[arg(long, default_value = "GMF")]
    baseline: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Print the check names and exit.
    #[arg(long)]
    list: bool,
    /// Run only the checks whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// Corrupt the named check so it must fail (test hook).
    #[arg(long, hide = true, env = "VCVI_INJECT_FAULT")]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Fraction of nonzero coefficients.
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Default from the extension of --out.
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct McmcArgs {
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("vcvi: {e}");
            return ExitCode::from(2);
        }
    }
    let par = if cli.deterministic { Parallelism::Sequential } else { Parallelism::Rayon };
    let result = match cli.cmd {
        Command::Run(a) => cmd_run(a, par),
        Command::Compare(a) => cmd_compare(a, par, !cli.deterministic),
        Command::Check(a) => cmd_check(a),
        Command::SimulateData(a) => cmd_simulate(a),
        Command::McmcReference(a) => cmd_mcmc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vcvi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(common: &Common, family: Option<String>) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply(&Overrides { seed: common.seed, steps: common.steps, out: common.out.clone(), family });
    Ok(cfg)
}

fn cmd_run(a: RunArgs, par: Parallelism) -> Result<(), CliError> {
    let prepared = load(&a.common, a.family)?.prepare()?;
    let out = prepared.output_dir();
    let report = execute(&prepared, &out, par)?;
    println!(
        "{}: ELBO summary {:.4} (median of last {}), {:.3e} ns per 1000 steps; wrote {}",
        report.family,
        report.elbo_summary.unwrap_or(f64::NAN),
        report.window,
        report.ns_per_1000_steps,
        out.join(REPORT_FILE).display()
    );
    Ok(())
}

fn cmd_compare(a: CompareArgs, par: Parallelism, concurrent: bool) -> Result<(), CliError> {
    let configs: Vec<Config> = if a.configs.is_empty() {
        vec![Config::default()]
    } else {
        a.configs.iter().map(|p| Config::load(p)).collect::<Result<_, _>>()?
    };
    let o = Overrides { seed: a.seed, steps: a.steps, out: None, family: None };
    let members = plan_comparison(&configs, &a.families, &a.baseline, &o)?;
    let out = match a.out {
        Some(d) => d,
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("vcvi-out"));
            root.join(format!("compare-{}", &members[0].hash[..12]))
        }
    };
    let cmp = compare(&members, &a.baseline, &out, concurrent, par)?;
    print!("{}", cmp.text);
    println!("wrote {}", out.display());
    if !cmp.diverged.is_empty() {
        return Err(CliError::Diverged(format!("diverged: {}", cmp.diverged.join(", "))));
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<(), CliError> {
    let checks = registry();
    if let Some(f) = &a.inject_fault {
        if !checks.iter().any(|c| &c.name == f) {
            return Err(CliError::Invalid(format!("--inject-fault: no check named '{f}'")));
        }
    }
    let selected: Vec<_> = checks.iter().filter(|c| a.filter.as_ref().is_none_or(|f| c.name.contains(f.as_str()))).collect();
    if a.list {
        for c in &selected {
            println!("{}", c.name);
        }
        return Ok(());
    }
    let mut failed = Vec::new();
    for c in &selected {
        let start = Instant::now();
        let o = c.run(a.inject_fault.as_deref() == Some(c.name.as_str()));
        println!("{} {} ({:.1}s): {}", if o.pass { "PASS" } else { "FAIL" }, c.name, start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(c.name.clone());
        }
    }
    println!("{} checks, {} failed", selected.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed.join(", ")))
    }
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    path: &'a std::path::Path,
    format: DataFormat,
    n: usize,
    m: usize,
    density: f64,
    seed: u64,
    beta: Vec<f64>,
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let format = a
        .format
        .or_else(|| DataFormat::from_path(&a.out))
        .ok_or_else(|| CliError::Invalid(format!("cannot infer a format from {}; pass --format", a.out.display())))?;
    if a.n == 0 || a.m == 0 {
        return Err(CliError::Invalid("--n and --m must be positive".into()));
    }
    let sim = simulate_logistic_dataset(a.n, a.m, a.sparsity, a.seed).map_err(|e| CliError::Invalid(e.to_string()))?;
    let ds = Dataset { x: Design::auto(sim.x), y: sim.y };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(&a.out)?;
    match format {
        DataFormat::Csv => write_csv(&ds, file).map_err(anyhow::Error::from)?,
        DataFormat::Libsvm => write_libsvm(&ds, std::io::BufWriter::new(file))?,
    }
    let summary =
        SimulationSummary { path: &a.out, format, n: ds.n(), m: ds.m(), density: ds.density(), seed: a.seed, beta: sim.beta };
    println!("{}", serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?);
    Ok(())
}

#[derive(Serialize)]
struct McmcReport<'a> {
    config_hash: &'a str,
    chain: &'a McmcChain,
    mean: Vec<f64>,
    draws_file: &'static str,
}

fn cmd_mcmc(a: McmcArgs) -> Result<(), CliError> {
    let mut common = a.common;
    let steps = common.steps.take().unwrap_or(1_000_000);
    let seed = common.seed.take().unwrap_or(1);
    let prepared = load(&common, None)?.prepare()?;
    let t = &prepared.target;
    if t.dim() > vcvi_core::oracles::rwm::MAX_DIM {
        return Err(CliError::Invalid(format!(
            "the reference sampler handles at most {} parameters; this target has {}",
            vcvi_core::oracles::rwm::MAX_DIM,
            t.dim()
        )));
    }
    let out = common.out.clone().unwrap_or_else(|| prepared.output_dir().with_extension("mcmc"));
    let chain = rwm_sample(t, &vec![0.0; t.dim()], steps as usize, seed).map_err(|e| CliError::Invalid(e.to_string()))?;
    fs::create_dir_all(&out)?;
    chain.write_csv(std::io::BufWriter::new(fs::File::create(out.join("draws.csv"))?)).map_err(|e| CliError::Other(e.into()))?;
    let report = McmcReport { config_hash: &prepared.hash, chain: &chain, mean: chain.mean(), draws_file: "draws.csv" };
    fs::write(out.join("mcmc.json"), serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?)?;
    if let Some(w) = &chain.warning {
        eprintln!("vcvi: warning: {w}");
    }
    println!("{} draws (thin {}), acceptance {:.3}; wrote {}", chain.draws.nrows(), chain.thin, chain.acceptance_rate, out.display());
    Ok(())
}
