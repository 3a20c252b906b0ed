//! Single runs and family comparisons, with their on-disk artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vcvi_core::engine::{ElboTrace, Estimator, Optimizer, TraceRecord, VariationalState};
use vcvi_core::parallel::Parallelism;
use vcvi_core::VcviError;

use crate::config::{Config, Overrides, Prepared};
use crate::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_TXT: &str = "comparison.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub family: String,
    pub assembly: String,
    pub n_params: usize,
    pub n: usize,
    pub m: usize,
    pub density: f64,
    pub steps: u64,
    pub seed: u64,
    pub window: usize,
    pub optimizer: Optimizer,
    pub estimator: Estimator,
    pub status: Status,
    /// Median ELBO over the last `window` trace records; absent after a
    /// divergence.
    pub elbo_summary: Option<f64>,
    pub steps_completed: u64,
    pub skipped_steps: u64,
    pub total_ns: u64,
    pub ns_per_1000_steps: f64,
    pub trace_file: String,
    pub checkpoint_file: Option<String>,
    pub config: Config,
}

pub fn write_trace(trace: &ElboTrace, path: &Path) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    for r in &trace.records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> anyhow::Result<ElboTrace> {
    let mut rd = csv::Reader::from_path(path)?;
    let records = rd.deserialize::<TraceRecord>().collect::<Result<Vec<_>, _>>()?;
    Ok(ElboTrace { records })
}

pub fn read_report(path: &Path) -> anyhow::Result<RunReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Fits `p` and writes the trace, the report and (unless disabled) the final
/// checkpoint into `out`. A divergence still writes all three, then returns
/// [`CliError::Diverged`].
pub fn execute(p: &Prepared, out: &Path, par: Parallelism) -> Result<RunReport, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Other(anyhow::anyhow!("creating {}: {e}", out.display())))?;
    let target = p.target.clone().with_parallelism(par);
    let mut state = VariationalState::new(&p.assembly, p.run.optimizer, p.run.seed);
    let mut trace = ElboTrace { records: Vec::with_capacity(p.run.steps as usize) };
    let outcome = state.advance(&p.assembly, &target, p.run.estimator, p.run.steps, &mut trace);
    let diverged = match outcome {
        Ok(()) => None,
        Err(e @ VcviError::Diverged { .. }) => Some(e.to_string()),
        Err(e) => return Err(CliError::Other(e.into())),
    };

    let trace_path = out.join(TRACE_FILE);
    write_trace(&trace, &trace_path)?;
    let checkpoint_file = if p.config.output.checkpoint {
        state.save(&p.assembly, &out.join(CHECKPOINT_FILE)).map_err(|e| CliError::Other(e.into()))?;
        Some(CHECKPOINT_FILE.to_string())
    } else {
        None
    };
    let elbo_summary = match diverged {
        None => Some(trace.summary(p.run.window).map_err(|e| CliError::Other(e.into()))?),
        Some(_) => None,
    };
    let report = RunReport {
        config_hash: p.hash.clone(),
        family: p.config.va.family.clone(),
        assembly: p.assembly.name.clone(),
        n_params: p.assembly.n_params(),
        n: p.n,
        m: p.m,
        density: p.density,
        steps: p.run.steps,
        seed: p.run.seed,
        window: p.run.window,
        optimizer: p.run.optimizer,
        estimator: p.run.estimator,
        status: if diverged.is_some() { Status::Diverged } else { Status::Completed },
        elbo_summary,
        steps_completed: state.step,
        skipped_steps: state.skipped_total,
        total_ns: trace.total_ns(),
        ns_per_1000_steps: trace.ns_per_1000_steps(),
        trace_file: TRACE_FILE.into(),
        checkpoint_file,
        config: p.config.clone(),
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?)?;
    match diverged {
        None => Ok(report),
        Some(msg) => Err(CliError::Diverged(format!("{}: {msg}", p.config.va.family))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: String,
    pub baseline: bool,
    pub status: Status,
    pub elbo_summary: Option<f64>,
    /// Difference from the baseline's summary (zero for the baseline).
    pub elbo_diff: Option<f64>,
    pub ns_per_1000_steps: f64,
    /// Time per 1000 steps divided by the baseline's.
    pub time_ratio: f64,
    pub config_hash: String,
    pub dir: String,
}

fn slug(family: &str) -> String {
    family
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn family_key(f: &str) -> String {
    f.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase()
}

/// Resolves the comparison members. Each configuration is combined with each
/// entry of `families` (or used as is when `families` is empty), in order.
/// When no member uses `baseline`, a baseline run built from the first
/// configuration is put in front.
pub fn plan_comparison(configs: &[Config], families: &[String], baseline: &str, o: &Overrides) -> Result<Vec<Prepared>, CliError> {
    if configs.is_empty() {
        return Err(CliError::Invalid("compare needs at least one configuration".into()));
    }
    let mut members = Vec::new();
    for c in configs {
        let fams: Vec<Option<&String>> = if families.is_empty() { vec![None] } else { families.iter().map(Some).collect() };
        for f in fams {
            let mut c = c.clone();
            c.apply(&Overrides { family: f.cloned(), out: None, ..o.clone() });
            members.push(c);
        }
    }
    if !members.iter().any(|c| family_key(&c.va.family) == family_key(baseline)) {
        let mut b = members[0].clone();
        b.va.family = baseline.to_string();
        members.insert(0, b);
    }
    let prepared: Vec<Prepared> = members.iter().map(Config::prepare).collect::<Result<_, _>>()?;
    let first = &prepared[0];
    for p in &prepared[1..] {
        if !first.same_target(p) {
            return Err(CliError::Invalid(format!(
                "compare: '{}' and '{}' use different targets",
                first.config.va.family, p.config.va.family
            )));
        }
        if p.run.seed != first.run.seed {
            return Err(CliError::Invalid(format!(
                "compare: members must share one seed, found {} and {}",
                first.run.seed, p.run.seed
            )));
        }
    }
    Ok(prepared)
}

pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub text: String,
    /// Families that diverged.
    pub diverged: Vec<String>,
}

/// Runs every member into `out/<index>-<family>/` and writes
/// `comparison.csv` and `comparison.txt`. Members run concurrently unless
/// `concurrent` is false; each uses the shared seed, so identical members give
/// identical summaries.
pub fn compare(members: &[Prepared], baseline: &str, out: &Path, concurrent: bool, par: Parallelism) -> Result<Comparison, CliError> {
    fs::create_dir_all(out)?;
    let dirs: Vec<PathBuf> =
        members.iter().enumerate().map(|(i, p)| out.join(format!("{:02}-{}", i + 1, slug(&p.config.va.family)))).collect();
    let job = |(p, d): (&Prepared, &PathBuf)| match execute(p, d, par) {
        Ok(r) => Ok(r),
        Err(CliError::Diverged(_)) => Ok(read_report(&d.join(REPORT_FILE))?),
        Err(e) => Err(e),
    };
    let reports: Vec<RunReport> = if concurrent {
        members.par_iter().zip(dirs.par_iter()).map(job).collect::<Result<_, _>>()?
    } else {
        members.iter().zip(dirs.iter()).map(job).collect::<Result<_, _>>()?
    };
    let b = members.iter().position(|p| family_key(&p.config.va.family) == family_key(baseline)).expect("planned");
    let base = &reports[b];
    let rows: Vec<ComparisonRow> = reports
        .iter()
        .zip(&dirs)
        .enumerate()
        .map(|(i, (r, d))| ComparisonRow {
            family: r.family.clone(),
            baseline: i == b,
            status: r.status,
            elbo_summary: r.elbo_summary,
            elbo_diff: match (r.elbo_summary, base.elbo_summary) {
                (Some(a), Some(z)) => Some(a - z),
                _ => None,
            },
            ns_per_1000_steps: r.ns_per_1000_steps,
            time_ratio: r.ns_per_1000_steps / base.ns_per_1000_steps,
            config_hash: r.config_hash.clone(),
            dir: d.file_name().unwrap().to_string_lossy().into_owned(),
        })
        .collect();
    let mut wr = csv::Writer::from_path(out.join(COMPARISON_CSV)).map_err(anyhow::Error::from)?;
    for r in &rows {
        wr.serialize(r).map_err(anyhow::Error::from)?;
    }
    wr.flush()?;
    let text = render_table(&rows);
    fs::File::create(out.join(COMPARISON_TXT))?.write_all(text.as_bytes())?;
    let diverged = rows.iter().filter(|r| r.status == Status::Diverged).map(|r| r.family.clone()).collect();
    Ok(Comparison { rows, text, diverged })
}

/// Families as columns in member order. The ELBO row shows the baseline's
/// value and signed differences for the others.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let fmt_opt = |v: Option<f64>, signed: bool| match v {
        Some(x) if signed => format!("{x:+.2}"),
        Some(x) => format!("{x:.2}"),
        None => "diverged".into(),
    };
    let header: Vec<String> = rows.iter().map(|r| if r.baseline { format!("{} (baseline)", r.family) } else { r.family.clone() }).collect();
    let elbo: Vec<String> =
        rows.iter().map(|r| if r.baseline { fmt_opt(r.elbo_summary, false) } else { fmt_opt(r.elbo_diff, true) }).collect();
    let ns: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.ns_per_1000_steps)).collect();
    let ratio: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.time_ratio)).collect();
    let labels = ["", "ELBO", "ns/1000 steps", "time ratio"];
    let table = [header, elbo, ns, ratio];
    let lw = labels.iter().map(|l| l.len()).max().unwrap();
    let widths: Vec<usize> = (0..rows.len()).map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap()).collect();
    let mut s = String::new();
    for (label, cells) in labels.iter().zip(&table) {
        s.push_str(&format!("{label:<lw$}"));
        for (c, w) in cells.iter().zip(&widths) {
            s.push_str(&format!("  {c:>w$}"));
        }
        s.push('\n');
    }
    s
}
