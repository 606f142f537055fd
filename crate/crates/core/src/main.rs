use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sparse_cc::experiment::{self, ExperimentConfig, Scale, Table};
use sparse_cc::path::default_k_max;
use sparse_cc::simulate::{make_truth, sample_case_control, MarginalKind, MarginalSpec};
use sparse_cc::solver::lambda_max;
use sparse_cc::{fit_l1_logistic, gbm, select, Dataset, SelectionConfig, SolverConfig};

#[derive(Parser)]
#[command(name = "sparse-cc", version, about = "Sparse logistic regression for case-control data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Snp,
    NorIid,
    NorCorr,
}

impl From<Kind> for MarginalKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Snp => MarginalKind::Snp,
            Kind::NorIid => MarginalKind::NorIid,
            Kind::NorCorr => MarginalKind::NorCorr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Mse,
    Fig1,
}

impl From<TableArg> for Table {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::One => Table::Coverage,
            TableArg::Two => Table::Selection,
            TableArg::Mse => Table::Mse,
            TableArg::Fig1 => Table::Figure1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a case-control sample; writes CSV plus a `.truth.json` sidecar.
    Simulate {
        #[arg(long, value_enum, default_value = "snp")]
        kind: Kind,
        #[arg(long = "M")]
        m: usize,
        #[arg(long, default_value_t = 3)]
        kstar: usize,
        #[arg(long, default_value_t = 1.0)]
        beta_value: f64,
        #[arg(long, default_value_t = 0.01)]
        pi: f64,
        /// Rows per class.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        calibration_draws: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit the penalized model at one penalty; writes JSON.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute the bisection path sketch; writes CSV.
    Path {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to 1e-4 times lambda_max.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Choose the support size by cross-validation; writes JSON.
    Select {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a simulation experiment and write its CSV/JSON files.
    Experiment {
        #[arg(long, value_enum)]
        table: TableArg,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the preset replicate count.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override the preset grid multipliers (comma separated).
        #[arg(long, value_delimiter = ',')]
        grid_multipliers: Option<Vec<usize>>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Exit with status 2 if any shape check fails.
        #[arg(long)]
        check: bool,
    },
}

fn read_dataset(path: &Path) -> sparse_cc::Result<Dataset> {
    Dataset::read_csv(BufReader::new(File::open(path)?))
}

fn sink(output: &Option<PathBuf>) -> sparse_cc::Result<Box<dyn Write>> {
    Ok(match output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> sparse_cc::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            kind,
            m,
            kstar,
            beta_value,
            pi,
            n,
            seed,
            calibration_draws,
            output,
        } => {
            let spec = MarginalSpec::new(kind.into(), m);
            let truth = make_truth(&spec, kstar, beta_value, pi, calibration_draws, seed)?;
            let data = sample_case_control(&truth, n, seed)?;
            data.write_csv(BufWriter::new(File::create(&output)?))?;
            let sidecar = output.with_extension("truth.json");
            std::fs::write(&sidecar, serde_json::to_string_pretty(&truth)? + "\n")?;
        }
        Command::Fit { input, lambda, output } => {
            let data = read_dataset(&input)?;
            let fit = fit_l1_logistic(&data, lambda, &SolverConfig::default())?;
            let mut w = sink(&output)?;
            serde_json::to_writer_pretty(&mut w, &fit)?;
            writeln!(w)?;
        }
        Command::Path {
            input,
            alpha,
            kmax,
            output,
        } => {
            let data = read_dataset(&input)?;
            let alpha = alpha.unwrap_or_else(|| 1e-4 * lambda_max(&data));
            let k_max = kmax.unwrap_or_else(|| default_k_max(&data));
            let sketch = gbm(&data, alpha, &SolverConfig::default(), k_max)?;
            let mut w = sink(&output)?;
            writeln!(w, "k,r_k,objective,solver_calls_cum,active_set,missing")?;
            for k in 0..=sketch.k_max {
                match sketch.get(k) {
                    Some(e) => {
                        let support: Vec<String> = e.fit.active_set.iter().map(|j| j.to_string()).collect();
                        writeln!(
                            w,
                            "{k},{:e},{:e},{},{},0",
                            e.r,
                            e.fit.objective_value,
                            e.solver_calls,
                            support.join(";")
                        )?;
                    }
                    None => writeln!(w, "{k},NA,NA,NA,,1")?,
                }
            }
        }
        Command::Select {
            input,
            folds,
            seed,
            alpha,
            kmax,
            output,
        } => {
            let data = read_dataset(&input)?;
            let config = SelectionConfig {
                folds,
                alpha,
                k_max: kmax,
                seed,
                solver: SolverConfig::default(),
            };
            let result = select(&data, &config)?;
            let mut w = sink(&output)?;
            serde_json::to_writer_pretty(
                &mut w,
                &json!({
                    "k_hat": result.k_hat,
                    "support": result.final_fit.active_set,
                    "final_r": result.final_r,
                    "intercept_raw": result.final_fit.intercept_raw,
                    "coefficients_raw": result.final_fit.coefficients_raw,
                    "criterion": result.criterion,
                    "cv_trace": result.cv_trace,
                    "skipped_k": result.skipped_k,
                    "degraded": result.degraded,
                    "solver_calls": result.solver_calls,
                }),
            )?;
            writeln!(w)?;
        }
        Command::Experiment {
            table,
            scale,
            jobs,
            seed,
            replicates,
            grid_multipliers,
            out,
            check,
        } => {
            let scale = match scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Paper => Scale::Paper,
            };
            let mut cfg = ExperimentConfig::preset(table.into(), scale, seed);
            cfg.jobs = jobs;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if let Some(g) = grid_multipliers {
                cfg.grid_multipliers = g;
            }
            let result = experiment::run(&cfg)?;
            result.write_to(&out)?;
            for c in &result.checks {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if check && !result.all_checks_pass() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
