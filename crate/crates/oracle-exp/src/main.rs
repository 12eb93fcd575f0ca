use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mixlasso::bounds::{lambda_threshold, oracle_rhs, x_max_n, OracleQuery, RemainderForm};
use mixlasso::estimator::{fit_lasso, lambda_path, FitConfig};
use mixlasso::harness::{emit_report, run_oracle_experiment, ExperimentConfig, ExperimentReport};
use mixlasso::model::ParameterBox;
use mixlasso::simulator::{read_dataset, read_matrix_csv, simulate, SimSpec};

#[derive(Parser)]
#[command(name = "oracle-exp", version, about = "Oracle-inequality experiments for Lasso mixtures of Gaussian regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Lasso,
    ModelSelection,
}

impl From<Form> for RemainderForm {
    fn from(f: Form) -> Self {
        match f {
            Form::Lasso => RemainderForm::Lasso,
            Form::ModelSelection => RemainderForm::ModelSelection,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides `sim.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the constants and right-hand side of the oracle inequality.
    Bounds {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        k: usize,
        /// JSON file with the seven box constants.
        #[arg(long = "box")]
        box_file: PathBuf,
        #[arg(long, default_value_t = mixlasso::bounds::DEFAULT_KAPPA)]
        kappa: f64,
        #[arg(long, default_value_t = mixlasso::bounds::DEFAULT_KAPPA_PRIME)]
        kappa_prime: f64,
        /// Penalty; defaults to the threshold.
        #[arg(long)]
        lambda: Option<f64>,
        /// Design scale ‖x‖_{max,n}; ignored when --design is given.
        #[arg(long, default_value_t = 1.0)]
        x_max_n: f64,
        /// Design CSV used to compute ‖x‖_{max,n}.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        kl_ref: f64,
        #[arg(long, default_value_t = 0.0)]
        l1_ref: f64,
        #[arg(long, value_enum, default_value = "lasso")]
        form: Form,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Simulate a data set from a JSON spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a mixture by penalized EM at one penalty or along a grid.
    Fit {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long = "box")]
        box_file: PathBuf,
        /// Single penalty value.
        #[arg(long, conflicts_with = "grid")]
        lambda: Option<f64>,
        /// Comma list `a,b,c` or log-spaced `min:max:count`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        /// Write the result JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `a,b,c` or `min:max:count` (log-spaced, inclusive) into a strictly
/// decreasing grid.
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let mut grid: Vec<f64> = if let Some((lo, rest)) = text.split_once(':') {
        let (hi, count) = rest.split_once(':').context("range grid must be min:max:count")?;
        let lo: f64 = lo.trim().parse().context("bad grid minimum")?;
        let hi: f64 = hi.trim().parse().context("bad grid maximum")?;
        let count: usize = count.trim().parse().context("bad grid count")?;
        if !(lo > 0.0 && hi >= lo) || count == 0 {
            bail!("range grid needs 0 < min <= max and count >= 1");
        }
        if count == 1 {
            vec![hi]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
        }
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad grid value {s:?}")))
            .collect::<Result<_>>()?
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    Ok(grid)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(mixlasso::Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn summary(report: &ExperimentReport) -> String {
    let mut s = format!(
        "replicates {}  kl_samples {}  threshold {:.6e}  l1(truth) {:.6}\n",
        report.n_replicates, report.kl_samples, report.lambda_threshold, report.l1_truth
    );
    s.push_str("lambda        mean_kl       pooled_se     replicate_se  oracle_rhs    holds\n");
    for a in &report.aggregates {
        s.push_str(&format!(
            "{:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {}\n",
            a.lambda,
            a.mean_kl,
            a.pooled_se,
            a.replicate_se,
            a.bound_report.oracle_rhs_total,
            a.inequality_satisfied
        ));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg: ExperimentConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let report = run_oracle_experiment(&cfg)?;
            let files = emit_report(&report, &cfg)?;
            print!("{}", summary(&report));
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bounds {
            n,
            p,
            q,
            k,
            box_file,
            kappa,
            kappa_prime,
            lambda,
            x_max_n: xm,
            design,
            kl_ref,
            l1_ref,
            form,
            json,
        } => {
            let bx: ParameterBox = read_json(&box_file)?;
            let xm = match design {
                Some(d) => x_max_n(&read_matrix_csv(&d)?)?,
                None => xm,
            };
            let lambda = match lambda {
                Some(l) => l,
                None => lambda_threshold(&bx, n, p, q, k, xm, kappa)?,
            };
            let rep = oracle_rhs(&OracleQuery {
                bx,
                n,
                p,
                q,
                k,
                x_max_n: xm,
                lambda,
                kl_ref,
                l1_ref,
                kappa,
                kappa_prime,
                form: form.into(),
            })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                print!("{}", rep.to_table());
            }
        }
        Command::Simulate { spec, seed, out } => {
            let mut spec: SimSpec = read_json(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let sim = simulate(&spec)?;
            for f in sim.write(&out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Fit {
            design,
            responses,
            k,
            box_file,
            lambda,
            grid,
            seed,
            restarts,
            out,
        } => {
            let bx: ParameterBox = read_json(&box_file)?;
            let data = read_dataset(&design, &responses)?;
            let mut cfg = FitConfig::new(bx, lambda.unwrap_or(0.0));
            cfg.seed = seed;
            if let Some(r) = restarts {
                cfg.n_restarts = r;
            }
            let text = match grid {
                Some(g) => {
                    let grid = parse_grid(&g).map_err(|e| mixlasso::Error::Config(format!("{e:#}")))?;
                    serde_json::to_string_pretty(&lambda_path(&data, k, &grid, &cfg)?)?
                }
                None => serde_json::to_string_pretty(&fit_lasso(&data, k, &cfg)?)?,
            };
            match out {
                Some(path) => fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mixlasso::Error>() {
            return match e {
                mixlasso::Error::Replicate { .. } => 3,
                mixlasso::Error::Config(_) | mixlasso::Error::Argument(_) | mixlasso::Error::Json(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(mixlasso::Error::Replicate { replicate, seed, .. }) =
                e.chain().find_map(|c| c.downcast_ref::<mixlasso::Error>())
            {
                eprintln!("replay replicate {replicate} with seed {seed}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
