//! `wcet` — static WCET analysis for an ARMv4T-style RISC subset.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wcet_cli::{
    cmd_cfg, cmd_check, cmd_simulate, cmd_stack, cmd_wcet, load_config, read_file, to_json,
    write_file, CliError,
};

#[derive(Parser)]
#[command(name = "wcet", about = "WCET analysis of ARM-subset disassembly listings", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Disassembly listing (.arm) to analyse.
    listing: String,
    /// Hardware/analysis configuration file (key = value lines).
    #[arg(long)]
    hw: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct the CFG and emit it as DOT.
    Cfg {
        #[command(flatten)]
        common: CommonArgs,
        /// Mark the instructions the WCET-equivalent program simulates.
        #[arg(long)]
        slice: bool,
        /// Write the DOT graph here instead of stdout.
        #[arg(long)]
        dot: Option<String>,
    },
    /// Compute the WCET interval by exhaustive exploration.
    Wcet {
        #[command(flatten)]
        common: CommonArgs,
        /// Answer the reachability query "WCET >= K" instead of reporting.
        #[arg(long, value_name = "K")]
        check: Option<u64>,
        /// Parallel search workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json: Option<String>,
    },
    /// Report stack-pointer value sets and the maximum stack depth.
    Stack {
        #[command(flatten)]
        common: CommonArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json: Option<String>,
    },
    /// Execute the program concretely and time its trace.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json: Option<String>,
    },
}

fn emit(text: &str, path: Option<&str>) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Cfg { common, slice, dot } => {
            let cfg = load_config(common.hw.as_deref())?;
            let listing = read_file(&common.listing)?;
            let out = cmd_cfg(&listing, &cfg, slice)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("{}", out.summary);
            emit(&out.dot, dot.as_deref())
        }
        Command::Wcet { common, check, jobs, json } => {
            let cfg = load_config(common.hw.as_deref())?;
            let listing = read_file(&common.listing)?;
            match check {
                Some(k) => {
                    let reachable = cmd_check(&listing, &cfg, jobs, k)?;
                    println!("{reachable}");
                    Ok(())
                }
                None => {
                    let out = cmd_wcet(&listing, &cfg, jobs)?;
                    emit(&to_json(&out.report), json.as_deref())
                }
            }
        }
        Command::Stack { common, json } => {
            let cfg = load_config(common.hw.as_deref())?;
            let listing = read_file(&common.listing)?;
            let report = cmd_stack(&listing, &cfg)?;
            eprintln!("max stack depth: {} bytes below initial sp", report.max_depth);
            emit(&to_json(&report), json.as_deref())
        }
        Command::Simulate { common, json } => {
            let cfg = load_config(common.hw.as_deref())?;
            let listing = read_file(&common.listing)?;
            let report = cmd_simulate(&listing, &cfg)?;
            emit(&to_json(&report), json.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
