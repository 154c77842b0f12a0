use candere::harness::session::LiveSession;
use candere::harness::{emit_metrics, run_experiment, series_name, PLOT_FILE};
use candere_cli::serve::{serve, ServeOptions};
use candere_cli::{eval_checkpoint, load_config, write_pretrain_set, CliResult};
use clap::{Args, Parser, Subcommand};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "candere", version, about = "Learning from noisy binary teacher feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources shared by every training subcommand. Each named
/// flag is shorthand for `--set <field>=<value>`.
#[derive(Args, Clone, Debug, Default)]
struct ConfigArgs {
    /// Flat TOML file of configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set relabel_rate=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    p_noise: Option<f64>,
    /// A count or `unlimited`.
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    frequency: Option<u64>,
    #[arg(long)]
    pretrain_size: Option<usize>,
    #[arg(long)]
    pretrain_noise: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    policy_lr: Option<f64>,
    #[arg(long)]
    classifier_lr: Option<f64>,
    #[arg(long)]
    relabel_rate: Option<f64>,
    #[arg(long)]
    no_active_relabel: bool,
    #[arg(long)]
    no_online_training: bool,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Hidden layer widths of the learner networks, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push(format!("{k}={v}"));
        let quoted = |s: &str| format!("\"{s}\"");
        if let Some(v) = &self.domain {
            put("domain", quoted(v));
        }
        if let Some(v) = &self.algorithm {
            put("algorithm", quoted(v));
        }
        if let Some(v) = self.p_noise {
            put("p_noise", format!("{v:?}"));
        }
        if let Some(v) = &self.budget {
            put("budget", if v == "unlimited" { quoted(v) } else { v.clone() });
        }
        if let Some(v) = self.frequency {
            put("frequency", v.to_string());
        }
        if let Some(v) = self.pretrain_size {
            put("pretrain_size", v.to_string());
        }
        if let Some(v) = self.pretrain_noise {
            put("pretrain_noise", format!("{v:?}"));
        }
        if let Some(v) = self.batch_size {
            put("batch_size", v.to_string());
        }
        if let Some(v) = self.policy_lr {
            put("policy_lr", format!("{v:?}"));
        }
        if let Some(v) = self.classifier_lr {
            put("classifier_lr", format!("{v:?}"));
        }
        if let Some(v) = self.relabel_rate {
            put("relabel_rate", format!("{v:?}"));
        }
        if self.no_active_relabel {
            put("active_relabel", "false".into());
        }
        if self.no_online_training {
            put("online_training", "false".into());
        }
        if !self.seeds.is_empty() {
            put("seeds", format!("{:?}", self.seeds));
        }
        if let Some(v) = self.total_steps {
            put("total_steps", v.to_string());
        }
        if let Some(v) = self.eval_interval {
            put("eval_interval", v.to_string());
        }
        if let Some(v) = self.eval_episodes {
            put("eval_episodes", v.to_string());
        }
        if !self.hidden.is_empty() {
            put("policy_hidden", format!("{:?}", self.hidden));
            put("tamer_hidden", format!("{:?}", self.hidden));
        }
        out.extend(self.set.iter().cloned());
        out
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed with the scripted teacher.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for metrics, checkpoints and the manifest.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a saved policy checkpoint with the greedy policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve a live teaching session over WebSocket.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Milliseconds between frames after a `resume`.
        #[arg(long, default_value_t = 200)]
        frame_interval_ms: u64,
    },
    /// Build the pretraining set of a seed and save it as JSONL.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge finished run directories into one long-format plot file.
    Plot {
        /// Run directories written by `run`.
        runs: Vec<PathBuf>,
        #[arg(long, default_value = PLOT_FILE)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides())?;
            eprintln!("{} on {}, seeds {:?}", series_name(&cfg), cfg.domain, cfg.seeds);
            let result = run_experiment(&cfg, &out)?;
            if let Some(last) = result.aggregate.last() {
                println!(
                    "step {}: return {:.2} +- {:.2} over {} seeds",
                    last.step, last.mean, last.std, last.runs
                );
            }
            println!("{}", out.display());
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let (mean, std) = eval_checkpoint(&checkpoint, episodes, seed)?;
            println!("{}", serde_json::json!({ "episodes": episodes, "mean": mean, "std": std }));
        }
        Command::Serve {
            config,
            addr,
            seed,
            frame_interval_ms,
        } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides())?;
            let mut session = LiveSession::new(&cfg, seed)?;
            let listener = TcpListener::bind(&addr)?;
            eprintln!("live session on ws://{}", listener.local_addr()?);
            let options = ServeOptions {
                frame_interval: Duration::from_millis(frame_interval_ms),
                max_clients: None,
            };
            let summary = serve(&listener, &mut session, &options)?;
            eprintln!(
                "{} frames to {} clients, {} stale feedback messages",
                summary.frames_sent,
                summary.clients,
                session.dropped()
            );
        }
        Command::Pretrain { config, seed, out } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides())?;
            let n = write_pretrain_set(&cfg, seed, &out)?;
            println!("{n} tuples -> {}", out.display());
        }
        Command::Plot { runs, out } => {
            let rows = emit_metrics(&runs, &out)?;
            println!("{rows} rows -> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
