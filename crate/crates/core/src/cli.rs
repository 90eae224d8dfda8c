use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use grpo_prm::export::{export_tree, ExportFormat};
use grpo_prm::io::{analyze_group, compute_weights, parse_groups, StatsSettings};
use grpo_prm::metrics::{Summary, SummaryView};
use grpo_prm::sim::{parse_experiment, run_experiment, series_csv};
use grpo_prm::types::DEFAULT_EPSILON;
use grpo_prm::verify::{
    check_group, run_random_suite, GenParams, VerificationReport, VerifySettings, DEFAULT_IDENTITY_TOL,
    DEFAULT_THEOREM_TOL,
};
use grpo_prm::loss::Objective;
use grpo_prm::{Group, ObjectiveConfig, ProcessTree, StdMode};

#[derive(Debug, Parser)]
#[command(name = "grpo-prm", version, about = "Process-set analysis for GRPO groups")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Reward standard deviation estimator.
    #[arg(long = "std", global = true, default_value = "sample", value_parser = parse_std)]
    std_mode: StdMode,
    /// KL penalty weight.
    #[arg(long, global = true, default_value_t = grpo_prm::loss::DEFAULT_BETA)]
    beta: f64,
    /// Reward std below which all advantages are zero.
    #[arg(long, global = true, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    /// Relative tolerance for the GRPO = PRM check.
    #[arg(long, global = true, default_value_t = DEFAULT_THEOREM_TOL)]
    tol: f64,
    /// Abort on the first malformed input line instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,
    /// Use logp/logp_old importance ratios instead of assuming they are 1.
    #[arg(long, global = true)]
    ratio: bool,
}

impl Global {
    fn stats(&self) -> StatsSettings {
        StatsSettings { std_mode: self.std_mode, epsilon: self.eps }
    }

    fn objective_config(&self) -> anyhow::Result<ObjectiveConfig> {
        Ok(ObjectiveConfig::new(self.beta, !self.ratio)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-group metrics CSV and an aggregate summary.
    Analyze {
        input: PathBuf,
        /// CSV destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the mergeable summary JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Export one group's process tree.
    Tree {
        input: PathBuf,
        #[arg(long)]
        group_id: Option<String>,
        /// Zero-based position in the file; ignored with --group-id.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "dot")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check GRPO = PRM and the proof identities.
    Verify {
        /// Group dump to check; omit to use --random.
        #[arg(required_unless_present = "random", conflicts_with = "random")]
        input: Option<PathBuf>,
        /// Number of seeded random groups.
        #[arg(long)]
        random: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative tolerance for the identity checks.
        #[arg(long, default_value_t = DEFAULT_IDENTITY_TOL)]
        identity_tol: f64,
        /// Full JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-token training weights as JSONL.
    Weights {
        input: PathBuf,
        #[arg(long, default_value = "lambda")]
        objective: Objective,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a toy policy-gradient experiment.
    Simulate {
        config: PathBuf,
        /// Series CSV destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge summaries written by `analyze --summary`.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step series CSV destination.
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

fn parse_std(s: &str) -> Result<StdMode, String> {
    match s {
        "sample" => Ok(StdMode::Sample),
        "population" => Ok(StdMode::Population),
        _ => Err(format!("expected sample or population, got {s:?}")),
    }
}

/// Summary file: the mergeable state plus its rendered view.
#[derive(Debug, Serialize, Deserialize)]
struct SummaryFile {
    view: SummaryView,
    state: Summary,
}

impl From<Summary> for SummaryFile {
    fn from(state: Summary) -> Self {
        SummaryFile { view: state.view(), state }
    }
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let g = &cli.global;
    match cli.command {
        Command::Analyze { input, out, summary } => analyze(g, &input, out.as_deref(), summary.as_deref()),
        Command::Tree { input, group_id, index, format, out } => {
            let group = select_group(g, &input, group_id.as_deref(), index)?;
            let tree = ProcessTree::build(&group);
            let mut w = output(out.as_deref())?;
            w.write_all(export_tree(&tree, &group, format)?.as_bytes())?;
            w.flush()?;
            Ok(0)
        }
        Command::Verify { input, random, seed, identity_tol, out } => {
            let settings = VerifySettings {
                std_mode: g.std_mode,
                epsilon: g.eps,
                theorem_tol: g.tol,
                identity_tol,
            };
            let report = match (input, random) {
                (Some(path), _) => verify_file(g, &path, &settings)?,
                (None, Some(n)) => {
                    let params = GenParams { seed, ..GenParams::default() };
                    run_random_suite(&params, n, &suite_configs(g.beta)?, &settings)?
                }
                (None, None) => bail!("verify needs an input file or --random N"),
            };
            if let Some(path) = out {
                let mut w = output(Some(&path))?;
                serde_json::to_writer_pretty(&mut w, &report)?;
                writeln!(w)?;
                w.flush()?;
            }
            println!(
                "verify: {} groups, {} trivial, max rel gap {:.3e}, max abs gap {:.3e}, {} failures",
                report.groups_checked,
                report.trivial_count,
                report.max_rel_gap,
                report.max_abs_gap,
                report.failures.len()
            );
            for f in report.failures.iter().take(20) {
                eprintln!("FAIL group {} {}: rel gap {:.3e}", f.group_index, f.check, f.gap);
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Weights { input, objective, out } => {
            let config = g.objective_config()?;
            let mut w = output(out.as_deref())?;
            for_each_group(g, &input, |_, group| {
                let rec = compute_weights(&group, objective, g.stats(), &config);
                serde_json::to_writer(&mut w, &rec)?;
                writeln!(w)?;
                Ok(())
            })?;
            w.flush()?;
            Ok(0)
        }
        Command::Simulate { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let exp = parse_experiment(&text).with_context(|| format!("in {}", config.display()))?;
            let records = run_experiment(&exp.policy, &exp.env, &exp.config)?;
            let mut w = output(out.as_deref())?;
            w.write_all(series_csv(&records)?.as_bytes())?;
            w.flush()?;
            if let (Some(first), Some(last)) = (records.first(), records.last()) {
                eprintln!(
                    "simulate: {} steps, expected reward {:.6} -> {:.6}",
                    records.len(),
                    first.expected_reward,
                    last.expected_reward
                );
            }
            Ok(0)
        }
        Command::Report { summaries, out, series } => {
            let mut total = Summary::default();
            for path in &summaries {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let s: SummaryFile = serde_json::from_reader(BufReader::new(file))
                    .with_context(|| format!("parsing {}", path.display()))?;
                total.merge(&s.state);
            }
            let file = SummaryFile::from(total);
            if let Some(path) = series {
                write_series(&path, &file.view)?;
            }
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &file)?;
            writeln!(w)?;
            w.flush()?;
            Ok(0)
        }
    }
}

fn analyze(g: &Global, input: &Path, out: Option<&Path>, summary_path: Option<&Path>) -> anyhow::Result<i32> {
    let config = g.objective_config()?;
    let mut csv = csv::Writer::from_writer(output(out)?);
    let mut summary = Summary::default();
    for_each_group(g, input, |_, group| {
        let analysis = analyze_group(&group, g.stats(), &config);
        csv.serialize(analysis.row())?;
        summary.add(&analysis.metrics);
        Ok(())
    })?;
    csv.flush()?;
    let file = SummaryFile::from(summary);
    let v = &file.view;
    eprintln!(
        "analyze: {} groups, trivial fraction {}, mean depth {}, mean p {}",
        v.groups,
        fmt_opt(v.trivial_fraction),
        fmt_opt(v.mean_depth),
        fmt_opt(v.mean_proportion)
    );
    if let Some(path) = summary_path {
        let mut w = output(Some(path))?;
        serde_json::to_writer_pretty(&mut w, &file)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(0)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn write_series(path: &Path, view: &SummaryView) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(output(Some(path))?);
    for s in &view.series {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// β ∈ {0, beta} crossed with unit and logp ratios.
fn suite_configs(beta: f64) -> anyhow::Result<Vec<ObjectiveConfig>> {
    let mut betas = vec![0.0];
    if beta != 0.0 {
        betas.push(beta);
    }
    let mut out = Vec::new();
    for b in betas {
        for unit in [true, false] {
            out.push(ObjectiveConfig::new(b, unit)?);
        }
    }
    Ok(out)
}

fn verify_file(g: &Global, path: &Path, settings: &VerifySettings) -> anyhow::Result<VerificationReport> {
    let configs = suite_configs(g.beta)?;
    let fallback = ObjectiveConfig::new(0.0, true)?;
    let mut report = VerificationReport::default();
    let mut index = 0u64;
    for_each_group(g, path, |_, group| {
        let usable: Vec<_> = configs.iter().filter(|c| c.check(&group).is_ok()).collect();
        let usable = if usable.is_empty() { vec![&fallback] } else { usable };
        let mut results = Vec::new();
        for config in usable {
            results.extend(check_group(&group, config, settings)?);
        }
        report.record(None, index, ProcessTree::build(&group).is_trivial(), &results);
        index += 1;
        Ok(())
    })?;
    Ok(report)
}

fn select_group(g: &Global, path: &Path, id: Option<&str>, index: usize) -> anyhow::Result<Group> {
    let mut found = None;
    let mut position = 0;
    for_each_group(g, path, |_, group| {
        let hit = match id {
            Some(id) => group.query_id() == id,
            None => position == index,
        };
        position += 1;
        if hit && found.is_none() {
            found = Some(group);
        }
        Ok(())
    })?;
    match (found, id) {
        (Some(g), _) => Ok(g),
        (None, Some(id)) => bail!("no group with query_id {id:?} in {}", path.display()),
        (None, None) => bail!("{} has {position} groups; index {index} is out of range", path.display()),
    }
}

fn for_each_group(
    g: &Global,
    path: &Path,
    mut f: impl FnMut(usize, Group) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let reader = input(path)?;
    let mut groups = parse_groups(reader, g.strict);
    for item in &mut groups {
        let (line, group) = item.with_context(|| format!("reading {}", path.display()))?;
        f(line, group).with_context(|| format!("{}:{line}", path.display()))?;
    }
    if groups.skipped() > 0 {
        eprintln!("warning: skipped {} malformed lines in {}", groups.skipped(), path.display());
    }
    Ok(())
}

fn input(path: &Path) -> anyhow::Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}
