use std::process::ExitCode;

use clap::Parser;
use privfl::cli::{cmd_bench, cmd_run, cmd_sweep, cmd_validate, Cli, Command, RunOutcome};
use privfl::ml::Metrics;
use privfl::Error;

fn show(m: &Metrics) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    format!("oa {:.4}  sa {}  asr {}", m.oa, f(m.sa), f(m.asr))
}

fn dispatch(cli: &Cli) -> privfl::Result<()> {
    match &cli.command {
        Command::Run(args) => match cmd_run(args)? {
            RunOutcome::DryRun(cfg) => println!("{cfg}"),
            RunOutcome::Completed { dir, report } => {
                println!("srfed   {}", show(&report.srfed.final_metrics()));
                if let Some(f) = &report.fedavg {
                    println!("fedavg  {}", show(&f.final_metrics()));
                }
                println!("wrote {}", dir.display());
            }
        },
        Command::Bench(args) => {
            let report = cmd_bench(args)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep(args) => {
            for p in cmd_sweep(args)? {
                let control = p.fedavg.map(|m| format!("  | fedavg {}", show(&m))).unwrap_or_default();
                println!("{:>8}  srfed {}{control}", p.value, show(&p.srfed));
            }
        }
        Command::Validate(args) => {
            let summary = cmd_validate(args)?;
            println!("config ok");
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
