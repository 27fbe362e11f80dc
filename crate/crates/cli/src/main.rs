use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgmlab::prior::{self, KlMethod, PriorCovariance};
use sgmlab::scenario::{self, RunOptions, ScenarioConfig, PRESETS};
use sgmlab::{Measure, Result, SdeSpec, SgmError};

#[derive(Parser)]
#[command(name = "sgmlab", version, about = "Score-based generative model lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a preset name) and write its CSVs and manifest.
    Run {
        /// Path to a scenario JSON file, or the name of a shipped preset.
        config: String,
        /// Output directory. Defaults to `$SGMLAB_OUT/<name>` or `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Use the scenario's paper-scale path count.
        #[arg(long)]
        full: bool,
    },
    /// Fit the optimal Gaussian prior of a data measure for Brownian noising.
    PriorFit {
        /// Measure JSON file.
        measure: PathBuf,
        /// Terminal times.
        #[arg(short = 'T', long = "terminal-time", value_delimiter = ',', default_value = "1")]
        terminal_time: Vec<f64>,
        /// Restrict the covariance to a multiple of the identity.
        #[arg(long)]
        isotropic: bool,
    },
    /// Print the shipped preset names.
    ListPresets,
}

fn load_config(arg: &str) -> Result<ScenarioConfig> {
    let path = Path::new(arg);
    if path.exists() {
        ScenarioConfig::from_path(path)
    } else if PRESETS.iter().any(|(n, _)| *n == arg) {
        ScenarioConfig::preset(arg)
    } else {
        Err(SgmError::config("config", format!("no such file or preset: {arg}")))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            full,
        } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| {
                let root = std::env::var_os("SGMLAB_OUT")
                    .map(PathBuf::from)
                    .unwrap_or_else(|| "out".into());
                root.join(&cfg.name)
            });
            let opts = RunOptions {
                seed,
                full,
                n_paths: None,
            };
            let go = || scenario::run_scenario(&cfg, &out, &opts);
            let manifest = match threads {
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| SgmError::config("--threads", e.to_string()))?
                    .install(go)?,
                None => go()?,
            };
            for f in &manifest.files {
                println!("{}  {}", f.sha256, out.join(&f.path).display());
            }
            for (k, v) in &manifest.summary {
                println!("{k} = {v}");
            }
        }
        Command::PriorFit {
            measure,
            terminal_time,
            isotropic,
        } => {
            let m: Measure = serde_json::from_str(&std::fs::read_to_string(&measure)?)
                .map_err(|e| SgmError::config("measure", e.to_string()))?;
            let rows = scenario::prior_table(&m, &terminal_time, isotropic)?;
            let mut out = Vec::new();
            for r in rows {
                let cov = match &r.fit.covariance {
                    PriorCovariance::Isotropic(c) => serde_json::json!(c),
                    PriorCovariance::Full(c) => serde_json::json!((0..c.nrows())
                        .map(|i| c.row(i).iter().cloned().collect::<Vec<_>>())
                        .collect::<Vec<_>>()),
                };
                let closed = {
                    let spec = SdeSpec::brownian(m.dim(), r.fit.t)?;
                    let p_t = sgmlab::sde::pushforward(&spec, &m, r.fit.t)?;
                    if p_t.components().len() == 1 {
                        Some(prior::kl_estimate(
                            &p_t,
                            &r.fit.to_mixture()?,
                            KlMethod::ClosedFormGaussian,
                        )?)
                    } else {
                        r.quadrature_kl
                    }
                };
                out.push(serde_json::json!({
                    "T": r.fit.t,
                    "mean": r.fit.mean.iter().collect::<Vec<_>>(),
                    "covariance": cov,
                    "kl_bound": r.fit.kl_bound,
                    "kl": closed,
                }));
            }
            println!("{}", serde_json::to_string_pretty(&out).expect("json values serialize"));
        }
        Command::ListPresets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgmlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
