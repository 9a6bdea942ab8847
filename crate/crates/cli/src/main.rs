use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mprio_core::ga::GaConfig;
use mprio_core::pipeline::{self, ExportInputs, ProcessTimes};
use mprio_core::sim::{BenchmarkMode, ReplayConfig};

#[derive(Parser)]
#[command(
    name = "mprio",
    version,
    about = "Motion-priority threshold design for shared manufacturing/recovery workspaces"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator at random thresholds and write a dataset.
    Sample {
        #[arg(long, default_value = "builtin:default")]
        scene: String,
        #[arg(long, default_value_t = 50)]
        n_samples: usize,
        #[arg(long, default_value_t = 100)]
        n_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the productivity and risk-time surrogates to a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for product.gp.json and risk.gp.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Search thresholds that maximize productivity under a risk-time limit.
    Optimize {
        #[arg(long)]
        models: PathBuf,
        /// Comma-separated values or an inclusive range `start:stop:step`.
        #[arg(long)]
        t_lim: String,
        /// Confidence gain(s), same syntax as --t-lim.
        #[arg(long, default_value = "0")]
        zeta: String,
        /// Upper bound on every threshold; defaults to the scene's.
        #[arg(long)]
        l_max: Option<f64>,
        #[arg(long, default_value = "builtin:default")]
        scene: String,
        #[command(flatten)]
        ga: GaArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate optimized thresholds (and the all-zero baseline).
    Evaluate {
        #[arg(long, default_value = "builtin:default")]
        scene: String,
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Non-continuous, always-recovery and always-manufacturing reference runs.
    Benchmark {
        #[arg(long, default_value = "builtin:default")]
        scene: String,
        #[arg(long, default_value_t = 100)]
        n_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check whether a continuous recovery process beats halting manufacturing.
    Appendix {
        #[arg(long)]
        t_r: f64,
        #[arg(long)]
        t_m: f64,
        #[arg(long)]
        dt_r: f64,
        #[arg(long)]
        dt_m: f64,
        #[arg(long, default_value_t = 3)]
        n_r: u32,
    },
    /// Write delimited plot data from datasets, models, results and trials.
    ExportPlots {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        results: Option<PathBuf>,
        /// Record one trial with this seed.
        #[arg(long)]
        trace_seed: Option<u64>,
        /// Thresholds for the traced trial (comma-separated); defaults to the
        /// first optimized design, else zeros.
        #[arg(long)]
        trace_thresholds: Option<String>,
        #[arg(long, default_value = "builtin:default")]
        scene: String,
        #[arg(long)]
        l_max: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scripted two-robot interaction with a priority flip.
    Replay {
        #[arg(long, default_value = "builtin:preliminary")]
        scene: String,
        #[arg(long, default_value_t = ReplayConfig::default().threshold)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a built-in scene as an editable config file.
    Scene {
        /// `default` or `preliminary`.
        #[arg(long, default_value = "default")]
        builtin: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GaArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = GaConfig::default().population_size)]
    ga_population: usize,
    #[arg(long, default_value_t = GaConfig::default().generations)]
    ga_generations: usize,
    #[arg(long, default_value_t = GaConfig::default().crossover_rate)]
    ga_crossover: f64,
    #[arg(long, default_value_t = GaConfig::default().mutation_rate)]
    ga_mutation: f64,
    #[arg(long, default_value_t = GaConfig::default().mutation_std)]
    ga_mutation_std: f64,
    #[arg(long, default_value_t = GaConfig::default().tournament_size)]
    ga_tournament: usize,
}

impl GaArgs {
    fn config(&self) -> GaConfig {
        GaConfig {
            population_size: self.ga_population,
            generations: self.ga_generations,
            crossover_rate: self.ga_crossover,
            mutation_rate: self.ga_mutation,
            mutation_std: self.ga_mutation_std,
            tournament_size: self.ga_tournament,
            seed: self.seed,
            ..GaConfig::default()
        }
    }
}

/// `a,b,c` or `start:stop:step` (inclusive).
fn parse_values(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let [a, b, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (a, b, step) = (a?, b?, step?);
        if step.is_nan() || step <= 0.0 || b < a {
            bail!("range `{s}` needs start <= stop and a positive step");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // Round away the accumulated representation error of `a + i·step`.
        return Ok((0..=n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number `{p}`")))
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sample {
            scene,
            n_samples,
            n_trials,
            seed,
            out,
        } => {
            let recs = pipeline::cmd_sample(&scene, n_samples, n_trials, seed, &out)?;
            println!("wrote {} samples to {}", recs.len(), out.display());
        }
        Command::Fit { dataset, out, seed } => {
            let m = pipeline::cmd_fit(&dataset, &out, seed)?;
            for (name, model) in [("product", &m.product), ("risk", &m.risk)] {
                let h = model.hyper();
                println!(
                    "{name}: log marginal likelihood {:.4}, lengthscales {:?}, noise {:.3e}",
                    model.diagnostics().map_or(f64::NAN, |d| d.log_marginal_likelihood),
                    h.lengthscales,
                    h.noise_variance
                );
            }
            println!("models written to {}", out.display());
        }
        Command::Optimize {
            models,
            t_lim,
            zeta,
            l_max,
            scene,
            ga,
            out,
        } => {
            let l_max = match l_max {
                Some(v) => v,
                None => pipeline::load_scene(&scene)?.l_max(),
            };
            let res = pipeline::cmd_optimize(
                &models,
                &parse_values(&t_lim)?,
                &parse_values(&zeta)?,
                l_max,
                &ga.config(),
                &out,
            )?;
            for run in &res.runs {
                let r = &run.result;
                println!(
                    "t_lim {:.3} zeta {}: l* {:?} product {:.4} risk bound {:.4}{}",
                    run.t_lim,
                    run.zeta,
                    r.thresholds_star,
                    r.predicted_product,
                    r.predicted_risk_bound,
                    if r.feasible { "" } else { " INFEASIBLE" }
                );
            }
            if res.any_infeasible() {
                eprintln!("some limits admit no feasible thresholds");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate {
            scene,
            results,
            n_trials,
            seed,
            out,
        } => {
            let a = pipeline::cmd_evaluate(&scene, &results, n_trials, seed, &out)?;
            let b = &a.baseline.realized;
            println!(
                "baseline l=0: product {:.3} ± {:.3}, risk {:.3} ± {:.3} s",
                b.x_product, b.product_sd, b.x_risk, b.risk_sd
            );
            for row in &a.rows {
                let r = &row.realized;
                println!(
                    "t_lim {:.3}: l* {:?} product {:.3} ± {:.3}, risk {:.3} ± {:.3} s",
                    row.t_lim.unwrap_or(f64::NAN),
                    row.thresholds,
                    r.x_product,
                    r.product_sd,
                    r.x_risk,
                    r.risk_sd
                );
            }
        }
        Command::Benchmark {
            scene,
            n_trials,
            seed,
            out,
        } => {
            let rows = pipeline::cmd_benchmark(&scene, n_trials, seed, &out)?;
            println!("{:<22} {:>16} {:>16}", "process", "risk time (s)", "productivity");
            for row in rows {
                let r = &row.outcome.record;
                let product = if row.mode == BenchmarkMode::NonContinuous {
                    "-".to_string()
                } else {
                    format!("{:.2} ± {:.2}", r.x_product, r.product_sd)
                };
                println!(
                    "{:<22} {:>16} {:>16}",
                    row.mode.label(),
                    format!("{:.2} ± {:.2}", r.x_risk, r.risk_sd),
                    product
                );
            }
        }
        Command::Appendix {
            t_r,
            t_m,
            dt_r,
            dt_m,
            n_r,
        } => {
            let a = pipeline::appendix_condition(&ProcessTimes {
                t_r,
                t_m,
                dt_r,
                dt_m,
                n_r,
            })?;
            println!("{}", serde_json::to_string_pretty(&a)?);
        }
        Command::ExportPlots {
            dataset,
            models,
            results,
            trace_seed,
            trace_thresholds,
            scene,
            l_max,
            out,
        } => {
            let scene_cfg = pipeline::load_scene(&scene)?;
            let loaded = results.as_deref().map(pipeline::ResultFile::load).transpose()?;
            let l_max = l_max.or(loaded.as_ref().map(|r| r.l_max)).unwrap_or(scene_cfg.l_max());
            let trace = match trace_seed {
                Some(seed) => {
                    let l = match (&trace_thresholds, &loaded) {
                        (Some(s), _) => parse_values(s)?,
                        (None, Some(r)) if !r.runs.is_empty() => r.runs[0].result.thresholds_star.clone(),
                        _ => vec![0.0; scene_cfg.n_manufacturing()],
                    };
                    Some((&scene_cfg, l, seed))
                }
                None => None,
            };
            let inputs = ExportInputs {
                dataset: dataset.as_deref(),
                models: models.as_deref(),
                results: results.as_deref(),
                trace,
                l_max,
            };
            for p in pipeline::cmd_export_plots(&inputs, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Replay { scene, threshold, out } => {
            let cfg = ReplayConfig {
                threshold,
                ..ReplayConfig::default()
            };
            let rep = pipeline::cmd_replay(&scene, &cfg, &out)?;
            for e in &rep.episodes {
                println!(
                    "{:.2}-{:.2} s: {:?} prioritized, its error {:.2e} m, other deviates {:.3} m",
                    e.start, e.end, e.priority, e.prioritized_error, e.yielding_deviation
                );
            }
            println!(
                "min distance {:.4} m, final errors {:?}",
                rep.min_pair_distance, rep.final_errors
            );
        }
        Command::Scene { builtin, out } => {
            let s = pipeline::load_scene(&format!("builtin:{builtin}"))?;
            std::fs::write(&out, s.to_toml_string()).with_context(|| out.display().to_string())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("0,1.5, 2").unwrap(), vec![0.0, 1.5, 2.0]);
        let r = parse_values("2.3:2.7:0.01").unwrap();
        assert_eq!(r.len(), 41);
        assert_eq!(r[40], 2.7);
        assert_eq!(r[13], 2.43);
        assert!(parse_values("1:0:0.1").is_err());
        assert!(parse_values("x").is_err());
    }
}
