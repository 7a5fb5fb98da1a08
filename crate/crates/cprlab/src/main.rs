use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cpr_core::models::gradient_check;
use cpr_core::{Activation, Batch, Loss, Matrix, MlpSpec, RngState, Targets};
use cprlab::error::{HarnessError, Result};
use cprlab::oracle::{lambda_oracle, ridge_kkt};
use cprlab::{config_load, emit_plotdata, sweep_run, train_run, Grid};
use regex::Regex;

#[derive(Parser)]
#[command(name = "cprlab", version, about = "Constrained parameter regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write config.json and metrics to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Cartesian product of a grid file over a base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference check of network and regularizer gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Long-format CSV of per-group R, lambda, kappa and validation loss.
    Plotdata {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Regex selecting group names.
        #[arg(long)]
        groups: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-check closed forms against brute-force oracles.
    Oracle {
        #[arg(value_enum)]
        which: OracleKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training steps for the ridge check.
        #[arg(long, default_value_t = 20_000)]
        steps: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Lambda,
    Ridge,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = config_load(&config)?;
            let fin = train_run(&cfg, &out)?;
            println!(
                "step {} train_loss {} val_loss {}",
                fin.step,
                fin.train_loss,
                fin.val_loss.map_or("-".into(), |v| v.to_string())
            );
            Ok(())
        }
        Command::Sweep {
            config,
            grid,
            out,
            jobs,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| HarnessError::io(&config, e))?;
            let base: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", config.display())))?;
            let grid_text = fs::read_to_string(&grid).map_err(|e| HarnessError::io(&grid, e))?;
            let grid = Grid::from_json_str(&grid_text)?;
            let rows = sweep_run(&base, config.parent(), &grid, &out, jobs)?;
            let failed = rows.iter().filter(|r| !r.ok()).count();
            println!("{} runs, {failed} failed; summary in {}", rows.len(), out.join("summary.csv").display());
            Ok(())
        }
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Plotdata { runs, groups, out } => {
            let filter = groups
                .map(|g| Regex::new(&g).map_err(|e| HarnessError::Config(format!("--groups: {e}"))))
                .transpose()?;
            let dirs: Vec<&Path> = runs.iter().map(PathBuf::as_path).collect();
            let file = File::create(&out).map_err(|e| HarnessError::io(&out, e))?;
            let rows = emit_plotdata(&dirs, filter.as_ref(), &mut BufWriter::new(file))?;
            println!("{rows} rows written to {}", out.display());
            Ok(())
        }
        Command::Oracle { which, seed, steps } => match which {
            OracleKind::Lambda => {
                let r = lambda_oracle(seed, 10_000, 100_000)?;
                println!(
                    "lambda update vs grid argmax: {} trials, {} grid points, {} disagreements, worst {:.3} steps, {:.2?}",
                    r.trials, r.grid_points, r.disagreements, r.worst_in_steps, r.elapsed
                );
                Ok(())
            }
            OracleKind::Ridge => {
                let r = ridge_kkt(seed, 0.3, steps, 0.05)?;
                println!("kappa* = {}  R(w) = {}", r.kappa_star, r.r_final);
                println!("max |w - w*| = {:e}", r.w_err_inf);
                println!(
                    "lambda = {:e}  (lr*gamma/n = {:e}, lambda*n/lr = {}, gamma = {})",
                    r.lambda_final,
                    r.lambda_fixed_point(),
                    r.lambda_rescaled(),
                    r.gamma
                );
                Ok(())
            }
        },
    }
}

fn gradcheck(seed: u64) -> Result<()> {
    let mut rng = RngState::new(seed);
    let cases = [
        (vec![4, 6, 3], Activation::Tanh, Loss::Mse),
        (vec![5, 8, 8, 2], Activation::Tanh, Loss::CrossEntropy),
        (vec![3, 7, 2], Activation::Relu, Loss::Mse),
    ];
    let mut worst: f64 = 0.0;
    for (widths, activation, loss) in cases {
        let spec = MlpSpec {
            layer_widths: widths.clone(),
            activation,
            bias: true,
            init_half_width: 0.5,
            loss,
        };
        let mut params = spec.init_params(&mut rng)?;
        for g in params.iter_mut().filter(|g| !g.regularized) {
            let (r, c) = g.theta.shape();
            g.theta = Matrix::init_uniform(r, c, 0.5, &mut rng)?;
        }
        let n = 6;
        let x = Matrix::init_normal(n, widths[0], 1.0, &mut rng)?;
        let out = *widths.last().expect("widths");
        let targets = match loss {
            Loss::Mse => Targets::Dense(Matrix::init_normal(n, out, 1.0, &mut rng)?),
            Loss::CrossEntropy => Targets::Classes((0..n).map(|_| rng.index(out)).collect()),
        };
        let err = gradient_check(&spec, &params, &Batch::new(x, targets)?, 1e-6)?;
        println!("{widths:?} {activation:?} {loss:?}: max relative error {err:e}");
        worst = worst.max(err);
    }
    println!("worst {worst:e}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
