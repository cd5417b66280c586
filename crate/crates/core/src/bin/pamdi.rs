use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pamdi::config::{validate_scenario, Algorithm, Overrides, Scenario, ScenarioConfig};
use pamdi::metrics::summarize;
use pamdi::oracle::{brute_force_optimal, Instance};
use pamdi::sim::{run_with, RunOptions};
use pamdi::sweep::{cells, sweep, sweep_sequential, SweepCell, SweepRow};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_TRUNCATED: u8 = 3;

#[derive(Parser)]
#[command(name = "pamdi", version, about = "Priority-aware model-distributed inference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace, metrics and comparison row.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Partition counts per source, e.g. `2,2`.
        #[arg(long, value_delimiter = ',')]
        partitions: Option<Vec<u32>>,
    },
    /// Run every algorithm × seed × partition cell of a scenario.
    Sweep {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
        /// Algorithms to include (default: all four).
        #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
        algorithms: Option<Vec<Algorithm>>,
        /// Seeds, as a list (`1,2,3`) or an inclusive range (`1..5`).
        #[arg(long, default_value = "1..5")]
        seeds: String,
        /// PA-MDI partition variants, e.g. `2-2,4-2,2-4`.
        #[arg(long, value_delimiter = ',')]
        partitions: Vec<String>,
        #[arg(long)]
        max_sim_time: Option<f64>,
        /// Run cells one after another even when built with parallelism.
        #[arg(long)]
        sequential: bool,
    },
    /// Check a scenario and list every problem found.
    Validate { scenario: PathBuf },
    /// Exhaustively optimize the accuracy/delay objective on a small scenario.
    Oracle {
        scenario: PathBuf,
        /// Override the scenario's list of multipliers.
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        /// Data points per source in the oracle instance.
        #[arg(long)]
        data_points: Option<u32>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    #[arg(long)]
    max_sim_time: Option<f64>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    Algorithm::parse(s).ok_or_else(|| format!("unknown algorithm `{s}` (pa-mdi, ar-mdi, ms-mdi, local)"))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed range `{s}`: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed range `{s}`: {e}"))?;
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|e| format!("bad seed `{x}`: {e}"))).collect()
}

fn parse_variant(s: &str) -> Result<Vec<u32>, String> {
    s.split('-').map(|x| x.trim().parse().map_err(|e| format!("bad partition variant `{s}`: {e}"))).collect()
}

/// Failure with the exit code to report.
struct Fail(u8, String);

impl<E: std::fmt::Display> From<(u8, E)> for Fail {
    fn from((code, e): (u8, E)) -> Self {
        Fail(code, e.to_string())
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<(ScenarioConfig, Scenario), Fail> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| Fail(EXIT_VALIDATION, e.to_string()))?;
    cfg.apply(overrides).map_err(|e| Fail(EXIT_VALIDATION, e.to_string()))?;
    let sc = Scenario::from_config(&cfg).map_err(|e| Fail(EXIT_VALIDATION, e.to_string()))?;
    Ok((cfg, sc))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Fail> {
    fs::create_dir_all(dir).map_err(|e| Fail(EXIT_RUNTIME, format!("creating {}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| Fail(EXIT_RUNTIME, format!("writing {}: {e}", p.display())))?;
    Ok(p)
}

fn cmd_run(path: &Path, common: &Common, partitions: Option<Vec<u32>>) -> Result<u8, Fail> {
    let overrides = Overrides {
        seed: common.seed,
        algorithm: common.algorithm,
        max_sim_time: common.max_sim_time,
        partitions: partitions.clone(),
        ..Default::default()
    };
    let (cfg, sc) = load(path, &overrides)?;
    let trace = run_with(&sc, &RunOptions::default()).map_err(|e| Fail(EXIT_RUNTIME, e.to_string()))?;
    let metrics = summarize(&trace, &sc.sources);
    let stem = format!("{}-{}-seed{}", sc.name, sc.algorithm, sc.seed);

    let mut summary = String::new();
    summary.push_str(&format!(
        "scenario {}\nalgorithm {}\nseed {}\nend_time {:.9}\ntruncated {}\nmessages {}\nprotocol_messages {}\n",
        sc.name,
        sc.algorithm,
        sc.seed,
        trace.end_time,
        trace.truncated,
        trace.stats.total_messages(),
        trace.stats.protocol_messages()
    ));
    for m in &metrics {
        let avg = m.avg_inference_time.map(|t| format!("{t:.9}")).unwrap_or_else(|| "n/a".into());
        summary.push_str(&format!(
            "source {} priority={} results={}/{} avg_inference_time={}\n",
            m.name, m.priority, m.results, m.data_points, avg
        ));
    }
    let cell = SweepCell { algorithm: sc.algorithm, seed: sc.seed, partitions };
    let row = SweepRow {
        scenario: sc.name.clone(),
        cell,
        metrics,
        truncated: trace.truncated,
        total_messages: trace.stats.total_messages(),
        protocol_messages: trace.stats.protocol_messages(),
        error: None,
    };
    let names: Vec<String> = cfg.sources.iter().map(|s| s.name.clone()).collect();
    let csv = format!("{}\n{}\n", SweepRow::csv_header(&names), row.to_csv());

    write(&common.output_dir, &format!("{stem}.trace"), &trace.render())?;
    write(&common.output_dir, &format!("{stem}.metrics"), &summary)?;
    write(&common.output_dir, &format!("{stem}.csv"), &csv)?;
    print!("{summary}");
    Ok(if trace.truncated { EXIT_TRUNCATED } else { 0 })
}

fn cmd_sweep(
    path: &Path,
    output_dir: &Path,
    algorithms: Option<Vec<Algorithm>>,
    seeds: &str,
    partitions: &[String],
    max_sim_time: Option<f64>,
    sequential: bool,
) -> Result<u8, Fail> {
    let seeds = parse_seeds(seeds).map_err(|e| Fail(EXIT_VALIDATION, e))?;
    let variants = partitions
        .iter()
        .map(|s| parse_variant(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Fail(EXIT_VALIDATION, e))?;
    let overrides = Overrides { max_sim_time, ..Default::default() };
    let (cfg, _) = load(path, &overrides)?;
    let algorithms = algorithms.unwrap_or_else(|| Algorithm::ALL.to_vec());
    let cells = cells(&algorithms, &seeds, &variants);
    let rows = if sequential { sweep_sequential(&cfg, &cells) } else { sweep(&cfg, &cells) };
    let names: Vec<String> = cfg.sources.iter().map(|s| s.name.clone()).collect();
    let mut csv = SweepRow::csv_header(&names);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    let p = write(output_dir, &format!("{}-sweep.csv", cfg.name), &csv)?;
    print!("{csv}");
    eprintln!("wrote {}", p.display());
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let truncated = rows.iter().filter(|r| r.truncated).count();
    Ok(if failed > 0 {
        EXIT_RUNTIME
    } else if truncated > 0 {
        EXIT_TRUNCATED
    } else {
        0
    })
}

fn cmd_validate(path: &Path) -> Result<u8, Fail> {
    let cfg = ScenarioConfig::load(path).map_err(|e| Fail(EXIT_VALIDATION, e.to_string()))?;
    let v = validate_scenario(&cfg);
    if v.is_empty() {
        println!("{}: ok", path.display());
        Ok(0)
    } else {
        for e in &v {
            println!("{e}");
        }
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_oracle(path: &Path, beta: Option<Vec<f64>>, data_points: Option<u32>) -> Result<u8, Fail> {
    let (_, mut sc) = load(path, &Overrides::default())?;
    if data_points.is_some() {
        sc.oracle.data_points = data_points;
    }
    let inst = Instance::from_scenario(&sc).map_err(|e| Fail(EXIT_RUNTIME, e.to_string()))?;
    let betas = beta.unwrap_or_else(|| sc.oracle.betas.clone());
    for b in betas {
        let sol = brute_force_optimal(&inst, b, sc.oracle.cap).map_err(|e| Fail(EXIT_RUNTIME, e.to_string()))?;
        println!("beta {b} value {:.9} joined {:.9}", sol.value, sol.joined_value);
        for (key, w) in &sol.assignment {
            println!("  {} -> {}", key, sc.topology.name(*w));
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, common, partitions } => cmd_run(scenario, common, partitions.clone()),
        Command::Sweep { scenario, output_dir, algorithms, seeds, partitions, max_sim_time, sequential } => {
            cmd_sweep(scenario, output_dir, algorithms.clone(), seeds, partitions, *max_sim_time, *sequential)
        }
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Oracle { scenario, beta, data_points } => cmd_oracle(scenario, beta.clone(), *data_points),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
