//! Command line runner for the offline/online multiscale pipeline.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! failures, 4 for i/o errors.

use clap::{ArgAction, Parser, Subcommand};
use rgmsfem::config::{load_config, ExperimentConfig};
use rgmsfem::{harness, Error};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rgmsfem", version, about = "Offline/online multiscale solver for parametric elliptic problems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the offline stage for a config and persist all artifacts.
    Offline {
        /// JSON experiment config, or a preset name prefixed with "preset:".
        #[arg(long)]
        config: String,
        /// Rayon worker threads; defaults to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve online at new parameters from persisted artifacts.
    Online {
        /// Artifact directory written by `offline`.
        #[arg(long)]
        artifacts: PathBuf,
        /// One parameter as comma-separated floats; repeatable. Defaults to
        /// the mu_star list of the config.
        #[arg(long, value_name = "CSV", action = ArgAction::Append)]
        mu: Vec<String>,
        /// Also run the fine reference and the from-scratch multiscale solve
        /// and report errors against the reference.
        #[arg(long)]
        compare: bool,
        /// Basis size; defaults to the trained l.
        #[arg(long)]
        l: Option<usize>,
    },
    /// Error decay against basis size l = 1..=lmax at one parameter.
    Sweep {
        /// Artifact directory written by `offline`.
        #[arg(long)]
        artifacts: PathBuf,
        /// Largest basis size; must not exceed the trained l.
        #[arg(long)]
        lmax: usize,
        /// One parameter as comma-separated floats; defaults to mu_star.
        #[arg(long, value_name = "CSV", action = ArgAction::Append)]
        mu: Vec<String>,
    },
    /// Mean online versus from-scratch wall time per basis size.
    Timing {
        /// Artifact directory written by `offline`.
        #[arg(long)]
        artifacts: PathBuf,
        /// Timed repetitions per (parameter, l) after one warm-up pass.
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// One parameter as comma-separated floats; defaults to mu_star.
        #[arg(long, value_name = "CSV", action = ArgAction::Append)]
        mu: Vec<String>,
        /// Comma-separated basis sizes; defaults to 1,3,5,7 capped at the
        /// trained l.
        #[arg(long)]
        l: Option<String>,
    },
    /// Compute and store fine reference solutions.
    Reference {
        /// JSON experiment config, or a preset name prefixed with "preset:".
        #[arg(long)]
        config: String,
        /// One parameter as comma-separated floats; defaults to mu_star.
        #[arg(long, value_name = "CSV", action = ArgAction::Append)]
        mu: Vec<String>,
    },
}

fn parse_mu_list(specs: &[String], fallback: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, Error> {
    if specs.is_empty() {
        if fallback.is_empty() {
            return Err(Error::Config("no parameters given and the config has none".into()));
        }
        return Ok(fallback.to_vec());
    }
    specs
        .iter()
        .map(|s| {
            s.split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad parameter value '{tok}'")))
                })
                .collect()
        })
        .collect()
}

fn parse_l_list(spec: &Option<String>, l_trained: usize) -> Result<Vec<usize>, Error> {
    let list: Vec<usize> = match spec {
        Some(s) => s
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad basis size '{tok}'")))
            })
            .collect::<Result<_, _>>()?,
        None => [1, 3, 5, 7].into_iter().filter(|&l| l <= l_trained).collect(),
    };
    if list.is_empty() {
        return Ok(vec![l_trained]);
    }
    for &l in &list {
        if l == 0 || l > l_trained {
            return Err(Error::Config(format!(
                "basis size {l} outside the trained range 1..={l_trained}"
            )));
        }
    }
    Ok(list)
}

/// Loads a config from a JSON path or, with a "preset:" prefix, by name.
/// Returns the config together with the base directory for relative paths.
fn resolve_config(spec: &str) -> Result<(ExperimentConfig, PathBuf), Error> {
    if let Some(name) = spec.strip_prefix("preset:") {
        return Ok((rgmsfem::config::preset(name)?, PathBuf::from(".")));
    }
    let path = Path::new(spec);
    let cfg = load_config(path)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty());
    Ok((cfg, base.unwrap_or(Path::new(".")).to_path_buf()))
}

fn set_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already initialized: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Offline { config, workers, seed } => {
            set_workers(workers);
            let (mut cfg, base) = resolve_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = base.join(&cfg.output_dir);
            let bundle = harness::run_offline(&cfg, &base, &out)?;
            println!(
                "offline done: {} neighborhoods, reduced dimension {}, lambda_star {:.4e}, artifacts in {}",
                bundle.mesh.coarse_node_count(),
                bundle.reduced.total_dim(),
                bundle.manifest.lambda_star,
                out.display()
            );
            if !bundle.manifest.crossing_flags.is_empty() {
                println!(
                    "warning: {} possible eigenvalue crossings flagged (see manifest.json)",
                    bundle.manifest.crossing_flags.len()
                );
            }
        }
        Cmd::Online { artifacts, mu, compare, l } => {
            if compare {
                let bundle = harness::load_bundle(&artifacts, &artifacts)?;
                let l = l.unwrap_or(bundle.config.l);
                let mu_list = parse_mu_list(&mu, &bundle.config.mu_star)?;
                let report = harness::run_online(&bundle, &mu_list, l, true)?;
                harness::emit_outputs(&bundle, &report, &artifacts)?;
                println!("{}", harness::errors_csv(&report).trim_end());
            } else {
                let arts = harness::load_artifacts(&artifacts)?;
                let l = l.unwrap_or(arts.manifest.config.l);
                let mu_list = parse_mu_list(&mu, &arts.manifest.config.mu_star)?;
                let report = harness::run_online_artifacts(&arts, &mu_list, l)?;
                let cfg = &arts.manifest.config;
                harness::emit_report(&report, cfg.fine_nx, cfg.fine_ny, &artifacts)?;
                println!("{}", harness::errors_csv(&report).trim_end());
            }
            println!("outputs written to {}", artifacts.display());
        }
        Cmd::Sweep { artifacts, lmax, mu } => {
            let bundle = harness::load_bundle(&artifacts, &artifacts)?;
            let mu_list = parse_mu_list(&mu, &bundle.config.mu_star)?;
            let rows = harness::sweep_basis(&bundle, lmax, &mu_list[0])?;
            harness::emit_sweep(&rows, &artifacts)?;
            println!("{}", harness::sweep_csv(&rows).trim_end());
            println!("outputs written to {}", artifacts.display());
        }
        Cmd::Timing { artifacts, reps, mu, l } => {
            let bundle = harness::load_bundle(&artifacts, &artifacts)?;
            let mu_list = parse_mu_list(&mu, &bundle.config.mu_star)?;
            let l_list = parse_l_list(&l, bundle.config.l)?;
            let rows = harness::compare_timing(&bundle, &mu_list, &l_list, reps)?;
            harness::emit_timing(&rows, &artifacts)?;
            println!("{}", harness::timing_csv(&rows).trim_end());
            println!("outputs written to {}", artifacts.display());
        }
        Cmd::Reference { config, mu } => {
            let (cfg, base) = resolve_config(&config)?;
            let mu_list = parse_mu_list(&mu, &cfg.mu_star)?;
            let out = base.join(&cfg.output_dir);
            harness::run_reference(&cfg, &base, &mu_list, &out)?;
            println!("references written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                Error::Config(_) => 2u8,
                Error::Numerical(_) => 3u8,
                Error::Io(_) => 4u8,
            })
        }
    }
}
