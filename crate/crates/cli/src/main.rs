use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use w3sim_core::archetypes::{compose, ArchitectureType, SimConfig};
use w3sim_core::atam::{
    check_against_expected, run_scenario, sweep, sweep_matrix, FaultPlan, MetricReport, Mismatch,
    ScenarioScript,
};
use w3sim_core::demo::run_demo;
use w3sim_core::encoding::{decode_base16, decode_base58, encode_base16, encode_base58};
use w3sim_core::identity::{generate_keypair, AddressScheme};

#[derive(Parser)]
#[command(name = "w3sim", version, about = "Deterministic Web3 architecture simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario on one architecture type and emit its metric report.
    Simulate(RunArgs),
    /// Run all twelve types and compare them against the Type1 baseline.
    Sweep(RunArgs),
    /// Reproduce the evaluation matrix; exits 1 on any mismatch.
    Matrix(RunArgs),
    /// Narrated NFT mint, list and buy through all five protocol phases.
    Demo {
        #[arg(long, env = "W3SIM_SEED", default_value_t = 42)]
        seed: u64,
    },
    /// Address encoding utilities.
    Encode(EncodeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Architecture type id, 1 to 12.
    #[arg(long = "type", value_name = "N", conflicts_with = "tuple")]
    type_id: Option<u8>,
    /// Architecture tuple such as A1,B2,C3.
    #[arg(long)]
    tuple: Option<String>,
    /// Scenario script file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Fault plan file (TOML).
    #[arg(long)]
    faults: Option<PathBuf>,
    /// Simulator config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "W3SIM_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    nodes: usize,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(value_enum)]
    scheme: Scheme,
    /// Hex bytes to encode, text to decode, or a key seed for `address`.
    input: String,
    /// Decode instead of encode.
    #[arg(long)]
    decode: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Base58,
    Base16,
    Address,
}

enum Outcome {
    Ok,
    Mismatch,
}

struct Inputs {
    cfg: SimConfig,
    script: ScenarioScript,
    faults: Option<FaultPlan>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load(args: &RunArgs) -> Result<Inputs> {
    let mut cfg = match &args.config {
        Some(p) => SimConfig::from_toml(&read(p)?).context("parsing config")?,
        None => SimConfig::default(),
    };
    if args.nodes == 0 {
        bail!("--nodes must be positive");
    }
    cfg.consensus.n_nodes = args.nodes;
    let script = match &args.scenario {
        Some(p) => read(p)?.parse::<ScenarioScript>().context("parsing scenario")?,
        None => ScenarioScript::default(),
    };
    let faults = match &args.faults {
        Some(p) => Some(FaultPlan::from_toml(&read(p)?).context("parsing fault plan")?),
        None => None,
    };
    Ok(Inputs { cfg, script, faults })
}

fn selected_type(args: &RunArgs) -> Result<ArchitectureType> {
    Ok(match (&args.type_id, &args.tuple) {
        (Some(id), _) => ArchitectureType::new(*id)?,
        (None, Some(t)) => t.parse()?,
        (None, None) => ArchitectureType::new(1)?,
    })
}

fn emit(args: &RunArgs, text: &str) -> Result<()> {
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report_markdown(r: &MetricReport) -> Result<String> {
    let mut out = format!("## Type{} {}\n\n| Metric | Value |\n|---|---|\n", r.type_id, r.tuple);
    if let Value::Object(map) = serde_json::to_value(r)? {
        for (k, v) in map {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("| {k} | {} |\n", v.replace('\n', " ").replace('|', "\\|")));
        }
    }
    Ok(out)
}

fn mismatch_lines(ms: &[Mismatch]) -> String {
    ms.iter()
        .map(|m| {
            format!(
                "Type{} {}: expected {}, measured {}\n",
                m.type_id,
                m.column.label(),
                m.expected,
                m.measured
            )
        })
        .collect()
}

fn simulate(args: &RunArgs) -> Result<Outcome> {
    let inp = load(args)?;
    let topo = compose(selected_type(args)?, &inp.cfg);
    let faults = inp.faults.unwrap_or_default();
    let report = run_scenario(&topo, &inp.script, &faults, args.seed)?;
    let text = match args.format.unwrap_or(Format::Json) {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Markdown => report_markdown(&report)?,
    };
    emit(args, &text)?;
    Ok(Outcome::Ok)
}

fn run_sweep(args: &RunArgs, default_format: Format, strict: bool) -> Result<Outcome> {
    if args.type_id.is_some() || args.tuple.is_some() {
        bail!("sweeps cover every type; drop --type/--tuple");
    }
    let inp = load(args)?;
    let faults = inp.faults.unwrap_or_else(FaultPlan::sweep);
    let reports = sweep(&inp.cfg, &inp.script, &faults, args.seed, args.jobs)?;
    let matrix = sweep_matrix(&reports).context("sweep produced no Type1 baseline")?;
    let mismatches = check_against_expected(&matrix);
    let text = match args.format.unwrap_or(default_format) {
        Format::Json => {
            let v = if strict {
                json!({ "matrix": matrix, "mismatches": mismatches })
            } else {
                json!({ "reports": reports, "matrix": matrix, "mismatches": mismatches })
            };
            serde_json::to_string_pretty(&v)? + "\n"
        }
        Format::Markdown => {
            let mut s = matrix.to_markdown();
            if !mismatches.is_empty() {
                s.push_str("\nMismatches:\n\n");
                s.push_str(&mismatch_lines(&mismatches));
            }
            s
        }
    };
    emit(args, &text)?;
    if strict && !mismatches.is_empty() {
        eprint!("{}", mismatch_lines(&mismatches));
        return Ok(Outcome::Mismatch);
    }
    Ok(Outcome::Ok)
}

fn demo(seed: u64) -> Outcome {
    let r = run_demo(seed);
    for line in &r.lines {
        println!("{line}");
    }
    if r.ok() {
        println!("Sale settled: ownership and payment moved together.");
        Outcome::Ok
    } else {
        eprintln!("demo invariants failed: {r:?}");
        Outcome::Mismatch
    }
}

fn encode(args: &EncodeArgs) -> Result<Outcome> {
    let line = match (args.scheme, args.decode) {
        (Scheme::Base58, false) => encode_base58(&hex::decode(args.input.trim_start_matches("0x"))?),
        (Scheme::Base16, false) => encode_base16(&hex::decode(args.input.trim_start_matches("0x"))?),
        (Scheme::Base58, true) => hex::encode(decode_base58(&args.input)?),
        (Scheme::Base16, true) => hex::encode(decode_base16(&args.input)?),
        (Scheme::Address, false) => {
            let kp = generate_keypair(args.input.as_bytes())?;
            format!(
                "{}\n{}",
                kp.address(AddressScheme::Base16Eth),
                kp.address(AddressScheme::Base58Btc)
            )
        }
        (Scheme::Address, true) => bail!("address takes a key seed; use base16 or base58 to decode"),
    };
    println!("{line}");
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => run_sweep(a, Format::Json, false),
        Command::Matrix(a) => run_sweep(a, Format::Markdown, true),
        Command::Demo { seed } => Ok(demo(*seed)),
        Command::Encode(a) => encode(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Mismatch) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
