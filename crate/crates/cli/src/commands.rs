use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dora::dynamics::{EnvId, Regime};

use crate::config::{Paths, RunConfig};
use crate::error::CliError;
use crate::export::export_plots_data;
use crate::stages::{self, StageReport};
use crate::sweep::{sweep, SweepKind};

#[derive(Debug, Parser)]
#[command(
    name = "dora",
    version,
    about = "Offline context-encoder and contextual-policy lab for drifting dynamics"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Re-run stages even when their manifests are current.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Environment id (pendulum-gravity, pointmass-damping, springcart-mass).
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Put data, checkpoints and results under one directory.
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub results_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training and held-out datasets with scripted controllers.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        transitions: Option<usize>,
        #[arg(long)]
        heldout: Option<usize>,
        /// Output directory (same as --data-dir).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the context encoder on the generated datasets.
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        history: Option<usize>,
    },
    /// Label the datasets with the encoder and train the conservative policy.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate the trained encoder and policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        regime: Option<String>,
        /// Tasks per seed.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        switch_interval: Option<usize>,
    },
    /// Record latent traces under switching dynamics and the adaptation-speed ratio.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        switch_interval: Option<usize>,
    },
    /// Latent scatter, held-out task retrieval and behavior-policy probes.
    Probe {
        #[command(flatten)]
        common: Common,
    },
    /// Run the pipeline once per grid value and tabulate evaluation scores.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated grid; defaults depend on --kind.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Check both information bounds on random discrete instances.
    ValidateBounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Collect result CSVs into <results>/plots for the plotting scripts.
    ExportPlotsData {
        #[command(flatten)]
        common: Common,
    },
    /// gen-data, train-encoder, train-policy and eval, skipping current stages.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: Option<f64>,
        /// Also run track and probe.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Toml)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Toml,
    Json,
}

fn apply_common(cfg: &mut RunConfig, c: &Common) -> Result<(), CliError> {
    if let Some(env) = &c.env {
        cfg.env_id = env
            .parse::<EnvId>()
            .map_err(|e| CliError::User(e.to_string()))?;
    }
    if let Some(seed) = c.seed {
        cfg.global_seed = seed;
    }
    if let Some(root) = &c.root {
        cfg.paths = Paths::under(root);
    }
    if let Some(d) = &c.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &c.checkpoint_dir {
        cfg.paths.checkpoint_dir = d.clone();
    }
    if let Some(d) = &c.results_dir {
        cfg.paths.results_dir = d.clone();
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn report_line(r: &StageReport) -> String {
    let status = if r.skipped { "up to date" } else { "done" };
    format!(
        "{}: {status} in {} (manifest {})",
        r.stage,
        r.dir.display(),
        &r.manifest.content_hash[..12]
    )
}

fn print_summary(r: &StageReport) {
    println!("{}", report_line(r));
    let Some(s) = r.summary() else { return };
    match r.stage.as_str() {
        "eval" => println!(
            "  {} normalized return: {}",
            s["regime"].as_str().unwrap_or("?"),
            s["display"].as_str().unwrap_or("?")
        ),
        "track" => println!(
            "  adaptation speed ratio: {:.3}",
            s["mean_ratio"].as_f64().unwrap_or(f64::NAN)
        ),
        "probe" => println!(
            "  1-NN retrieval {:.3}, |spearman| {:.3}, task probe {:.3}, policy probe {:.3}",
            s["one_nn_accuracy"].as_f64().unwrap_or(f64::NAN),
            s["abs_spearman"].as_f64().unwrap_or(f64::NAN),
            s["task_probe_accuracy"].as_f64().unwrap_or(f64::NAN),
            s["policy_probe_accuracy"].as_f64().unwrap_or(f64::NAN),
        ),
        "validate-bounds" => {
            let n = s["instances"].as_u64().unwrap_or(0);
            println!(
                "  T1: {}/{n} hold; T2: {}/{n} hold",
                s["t1_holds"].as_u64().unwrap_or(0),
                s["t2_holds"].as_u64().unwrap_or(0)
            );
        }
        _ => {}
    }
}

pub fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_ref())?;
    let force = cli.force;
    let finish = |cfg: &RunConfig| cfg.validate();
    match cli.command {
        Command::GenData {
            common,
            tasks,
            transitions,
            heldout,
            out,
        } => {
            apply_common(&mut cfg, &common)?;
            set(&mut cfg.data.n_tasks, tasks);
            set(&mut cfg.data.transitions_per_task, transitions);
            set(&mut cfg.data.heldout_transitions, heldout);
            set(&mut cfg.paths.data_dir, out);
            finish(&cfg)?;
            print_summary(&stages::gen_data(&cfg, force)?);
        }
        Command::TrainEncoder {
            common,
            beta,
            steps,
            history,
        } => {
            apply_common(&mut cfg, &common)?;
            set(&mut cfg.encoder.beta, beta);
            set(&mut cfg.encoder.train_steps, steps);
            set(&mut cfg.encoder.history_len, history);
            finish(&cfg)?;
            print_summary(&stages::train_encoder_stage(&cfg, force)?);
        }
        Command::TrainPolicy { common, steps } => {
            apply_common(&mut cfg, &common)?;
            set(&mut cfg.policy.train_steps, steps);
            finish(&cfg)?;
            print_summary(&stages::train_policy_stage(&cfg, force)?);
        }
        Command::Eval {
            common,
            regime,
            episodes,
            seeds,
            switch_interval,
        } => {
            apply_common(&mut cfg, &common)?;
            if let Some(r) = regime {
                cfg.eval.regime = r
                    .parse::<Regime>()
                    .map_err(|e| CliError::User(e.to_string()))?;
            }
            set(&mut cfg.eval.n_tasks, episodes);
            set(&mut cfg.eval.n_seeds, seeds);
            set(&mut cfg.eval.switch_interval, switch_interval);
            finish(&cfg)?;
            print_summary(&stages::eval_stage(&cfg, force)?);
        }
        Command::Track {
            common,
            episodes,
            switch_interval,
        } => {
            apply_common(&mut cfg, &common)?;
            set(&mut cfg.diagnostics.track_episodes, episodes);
            set(&mut cfg.eval.switch_interval, switch_interval);
            finish(&cfg)?;
            print_summary(&stages::track_stage(&cfg, force)?);
        }
        Command::Probe { common } => {
            apply_common(&mut cfg, &common)?;
            finish(&cfg)?;
            print_summary(&stages::probe_stage(&cfg, force)?);
        }
        Command::Sweep { common, kind, grid } => {
            apply_common(&mut cfg, &common)?;
            finish(&cfg)?;
            let grid = grid.unwrap_or_else(|| kind.default_grid());
            let out = sweep(&cfg, kind, &grid)?;
            for r in &out.rows {
                println!(
                    "{} = {}: {:.2} ± {:.2} ({})",
                    r.kind, r.value, r.mean, r.std, r.status
                );
            }
            println!("wrote {}", out.csv.display());
        }
        Command::ValidateBounds { common, instances } => {
            apply_common(&mut cfg, &common)?;
            print_summary(&stages::bounds_stage(
                &cfg,
                instances,
                cfg.global_seed,
                force,
            )?);
        }
        Command::ExportPlotsData { common } => {
            apply_common(&mut cfg, &common)?;
            for p in export_plots_data(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Pipeline {
            common,
            beta,
            diagnostics,
        } => {
            apply_common(&mut cfg, &common)?;
            set(&mut cfg.encoder.beta, beta);
            finish(&cfg)?;
            for r in stages::pipeline(&cfg, diagnostics, force)? {
                print_summary(&r);
            }
        }
        Command::Config { common, format } => {
            apply_common(&mut cfg, &common)?;
            finish(&cfg)?;
            match format {
                Format::Toml => print!("{}", cfg.to_toml()),
                Format::Json => println!("{}", cfg.to_json()),
            }
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure (panic); see the message above");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_and_unknown_flags() {
        assert_eq!(run_command(["dora", "--help"]), 0);
        assert_eq!(run_command(["dora", "eval", "--bogus"]), 1);
        assert_eq!(run_command(["dora", "nonsense"]), 1);
    }

    #[test]
    fn bad_enum_values_are_user_errors() {
        assert_eq!(run_command(["dora", "config", "--env", "cartpole"]), 1);
        assert_eq!(run_command(["dora", "eval", "--regime", "sometimes"]), 1);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "global_seed = 5\n[encoder]\nbeta = 0.2\n").unwrap();
        let mut cfg = load_config(Some(&path)).unwrap();
        apply_common(
            &mut cfg,
            &Common {
                seed: Some(9),
                ..Common::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.global_seed, 9);
        assert_eq!(cfg.encoder.beta, 0.2);
    }
}
