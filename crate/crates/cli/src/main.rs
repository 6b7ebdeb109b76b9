use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bootnet::report::{Report, SeedSummary};
use bootnet::scenario::{run_scenario, RunOptions, Scenario, ScenarioKind};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

/// Runs a bootstrap scenario in the network simulator and prints its report.
///
/// Exit status: 0 when every peer connected (or a check scenario passed),
/// 1 on timeout or a failed check (the partial report is still printed),
/// 2 when the scenario file does not parse or validate.
#[derive(Debug, Parser)]
#[command(name = "bootnet", version)]
struct Args {
    /// Scenario file (TOML, schema = 1). Optional with --matrix.
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Writes every trace record to this file.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Overrides the scenario time limit, in virtual seconds.
    #[arg(long, value_name = "SECONDS")]
    max_virtual_time: Option<f64>,
    /// Also runs the pairwise NAT matrix and prints it.
    #[arg(long)]
    matrix: bool,
    /// Runs this many consecutive seeds, one after another, and summarizes their spread.
    #[arg(long, value_name = "K", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
}

const BUILTIN_MATRIX: &str = "schema = 1\nname = \"nat-matrix\"\nkind = \"nat-matrix\"\n\n[public]\nsize = 8\nwarmup = 30.0\n";

fn main() -> ExitCode {
    let args = Args::parse();
    if args.scenario.is_none() && !args.matrix {
        eprintln!("error: a scenario path is required unless --matrix is given");
        return ExitCode::from(2);
    }
    if args.max_virtual_time.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
        eprintln!("error: --max-virtual-time must be a positive number of seconds");
        return ExitCode::from(2);
    }
    let mut scenarios = Vec::new();
    if let Some(path) = &args.scenario {
        match Scenario::load(path) {
            Ok(sc) => scenarios.push(sc),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    if args.matrix && scenarios.first().is_none_or(|s| s.kind != ScenarioKind::NatMatrix) {
        let mut m = Scenario::parse(BUILTIN_MATRIX, "<builtin nat-matrix>").expect("builtin scenario");
        if let Some(base) = scenarios.first() {
            m.latency = base.latency.clone();
            m.timers = base.timers.clone();
            m.seed = base.seed;
        }
        scenarios.push(m);
    }

    let base_seed = args.seed;
    let mut reports: Vec<Report> = Vec::new();
    let mut trace = Vec::new();
    for sc in &scenarios {
        for i in 0..args.runs {
            let seed = base_seed.unwrap_or(sc.seed).wrapping_add(i);
            let opts = RunOptions { seed: Some(seed), max_virtual_time: args.max_virtual_time, keep_trace: args.trace.is_some() };
            let out = run_scenario(sc, &opts);
            if args.trace.is_some() {
                trace.push(format!("# scenario {} seed {seed}", sc.name));
                trace.extend(out.trace_lines);
            }
            reports.push(out.report);
        }
    }

    if let Some(path) = &args.trace {
        let mut body = trace.join("\n");
        body.push('\n');
        if let Err(e) = fs::write(path, body) {
            eprintln!("error: cannot write trace to {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }

    let mut out = String::new();
    match args.format {
        Format::Text => {
            for (i, r) in reports.iter().enumerate() {
                if i > 0 {
                    out.push_str("\n----\n\n");
                }
                out.push_str(&r.to_text());
            }
            if args.runs > 1 {
                out.push('\n');
                out.push_str(&SeedSummary::from_reports(&reports).to_text());
            }
        }
        Format::Structured => {
            let value = if reports.len() == 1 {
                serde_json::to_value(&reports[0])
            } else {
                serde_json::to_value(serde_json::json!({
                    "reports": reports,
                    "summary": SeedSummary::from_reports(&reports),
                }))
            };
            out = serde_json::to_string_pretty(&value.expect("report serializes")).expect("json") + "\n";
        }
    }
    let _ = std::io::stdout().write_all(out.as_bytes());
    let code = reports.iter().map(|r| r.outcome.exit_code()).max().unwrap_or(0);
    ExitCode::from(code as u8)
}
