use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mono_ph_cli::{cmd_oracle, cmd_run, cmd_verify, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "mono-ph", version, about = "Primal-dual gradient flows for monotone port-Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master RNG seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured flow and write trajectory.csv and report.json.
    Run(Common),
    /// Run the property suites and write verify.json and verify.txt.
    Verify(Common),
    /// Solve the KKT system directly and write the solution files.
    Oracle(Common),
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(d) = &c.out {
        overrides.push(format!("output.dir={}", d.display()));
    }
    RunConfig::load(&c.config, &overrides)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let r = cmd_run(&cfg)?;
            println!("flow               {}", r.flow);
            println!("steps              {} (dt {:.3e}, t_end {})", r.steps, r.dt_int, r.t_end);
            println!("terminal rhs norm  {:.6e}", r.terminal_rhs_norm);
            if let Some(p) = r.terminal_plant_norm {
                println!("terminal plant     {p:.6e}");
            }
            if let Some(d) = r.terminal_oracle_distance {
                println!("oracle distance    {d:.6e}");
            }
            println!("norm nonincreasing {}", if r.norm_check.passed { "yes" } else { "no" });
            if let Some(ok) = r.feedback_in_box {
                println!("feedback in box    {}", if ok { "yes" } else { "no" });
            }
            println!("output             {}", cfg.output_dir.display());
        }
        Command::Verify(c) => {
            let cfg = load(&c)?;
            let r = cmd_verify(&cfg)?;
            print!("{}", r.to_text());
            if !r.passed {
                let failed: Vec<_> = r.rows.iter().filter(|x| !x.passed).map(|x| x.check.clone()).collect();
                eprintln!("wall-clock {:.2} s", start.elapsed().as_secs_f64());
                return Err(CliError::SuiteFailure(failed.join("; ")));
            }
        }
        Command::Oracle(c) => {
            let cfg = load(&c)?;
            let s = cmd_oracle(&cfg)?;
            println!("iterations         {}", s.iterations);
            println!("kkt residual       {:.3e}", s.residual);
            println!("active fraction    {:.4}", s.active_set_fraction);
            println!("output             {}", cfg.output_dir.display());
        }
    }
    println!("wall-clock         {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
