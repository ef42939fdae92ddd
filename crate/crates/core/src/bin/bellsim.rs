use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bellsim::experiment::{cmd_calibrate, cmd_run, cmd_sweep, cmd_tomo, ExperimentConfig, TomoTarget};
use bellsim::{BellError, Result};

#[derive(Parser, Debug)]
#[command(name = "bellsim", version, about = "Single-pair CHSH estimation with sequential weak measurements")]
struct Cli {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the joint pixel pmf (run only).
    #[arg(long, global = true)]
    emit_pmf: bool,
    /// Worker threads for sampling; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample coincidence events and estimate S pair by pair.
    Run,
    /// Simulate tomography of the input or output polarization state.
    Tomo {
        #[arg(value_parser = parse_target)]
        which: TomoTarget,
    },
    /// Deterministic bias, spread and decoherence across coupling strengths.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Find the uniform g/sigma giving a target output visibility.
    Calibrate {
        #[arg(long, default_value_t = 0.941)]
        target: f64,
    },
}

fn parse_target(s: &str) -> std::result::Result<TomoTarget, String> {
    s.parse().map_err(|e: BellError| e.to_string())
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.output.emit_pmf |= cli.emit_pmf;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let out = cfg.output.dir.clone();
    let files = match &cli.command {
        Command::Run => {
            let (outcome, art) = cmd_run(&cfg, &out, cfg.output.emit_pmf)?;
            let r = &outcome.report;
            if let Some(ratio) = r.g_over_sigma {
                println!("g/sigma       = {ratio:.6}");
            }
            println!("events        = {}", r.summary.n_events);
            println!("S_ave         = {:.4} ± {:.4}", r.summary.s_ave, r.summary.stderr);
            println!("E[S_hat]      = {:.6}", r.expected_s_hat);
            println!("S from moments= {:.6}", r.s_exact_moments);
            println!("S strong      = {:.6}", r.s_strong);
            art.files
        }
        Command::Tomo { which } => {
            let (report, art) = cmd_tomo(&cfg, *which, &out)?;
            let m = &report.metrics;
            println!(
                "F = {:.4}  P = {:.4}  N = {:.4}  C = {:.4}  V = {:.4}",
                m.fidelity, m.purity, m.negativity, m.concurrence, m.visibility
            );
            let rec = &report.reconstruction;
            if !rec.converged {
                eprintln!(
                    "warning: MLE stopped after {} iterations with gradient norm {:e}",
                    rec.iterations, rec.gradient_norm
                );
            }
            art.files
        }
        Command::Sweep { values } => {
            let (rows, art) = cmd_sweep(&cfg, values, &out)?;
            println!("g/sigma      bias         stddev     V_out    F_out    C_out");
            for r in &rows {
                println!(
                    "{:<12} {:<+12.5} {:<10.3} {:.5}  {:.5}  {:.5}",
                    r.g_over_sigma, r.bias, r.stddev, r.v_out, r.f_out, r.c_out
                );
            }
            art.files
        }
        Command::Calibrate { target } => {
            let (report, art) = cmd_calibrate(&cfg, *target, &out)?;
            println!("V_in = {:.6}", report.v_in);
            println!("g/sigma = {:.8} (V_out = {:.6})", report.g_over_sigma, report.v_out);
            art.files
        }
    };
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = || execute(&cli);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(BellError::Config(format!("cannot start {n} threads: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
