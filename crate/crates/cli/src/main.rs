use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use it2p::Result;
use it2p_cli::demo::{self, DemoOptions};
use it2p_cli::{eval, gen_data, session_config, train, Checkpoints, Experiment, ModelKind, Overrides, Scale};
use it2p_service::{AppState, Models, ServiceConfig, DEFAULT_PORT, ENV_PORT, ENV_QGN, ENV_T2P, ENV_VOCAB};

/// Language-grounded block picking that asks when it is unsure.
#[derive(Parser)]
#[command(name = "it2p", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

/// Settings shared by the subcommands. Flags win over `--config`, which wins
/// over the preset of `--scale`.
#[derive(Args, Clone, Default)]
struct Common {
    /// JSON file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Mirror-augment grounding training (default on for t2p).
    #[arg(long)]
    mirror: Option<bool>,
    /// Dropout samples per estimate.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Question rounds per session.
    #[arg(long)]
    rounds: Option<usize>,
    /// Ambiguous question samples for training the question network.
    #[arg(long)]
    qgn_ambiguous: Option<usize>,
    #[arg(long)]
    qgn_unambiguous: Option<usize>,
}

impl Common {
    fn resolve(&self, scenes: Option<usize>) -> Result<Overrides> {
        let flags = Overrides {
            seed: self.seed,
            scale: self.scale,
            scenes,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            dropout: self.dropout,
            mirror: self.mirror,
            mc_samples: self.mc_samples,
            beta: self.beta,
            rounds: self.rounds,
            qgn_ambiguous: self.qgn_ambiguous,
            qgn_unambiguous: self.qgn_unambiguous,
        };
        flags.with_file(self.config.as_deref())
    }
}

#[derive(Args)]
struct ModelPaths {
    #[arg(long, env = ENV_T2P)]
    t2p_ckpt: PathBuf,
    #[arg(long, env = ENV_QGN)]
    qgn_ckpt: PathBuf,
    #[arg(long, env = ENV_VOCAB)]
    vocab: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenes, images and grounding samples.
    GenData {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one network; writes the checkpoint and `<out>.log.json`.
    Train {
        #[arg(value_enum)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grounding checkpoint, required for `qgn`.
        #[arg(long)]
        t2p_ckpt: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment on the test split; writes report.json, report.md and chart.png.
    Eval {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        t2p_ckpt: Option<PathBuf>,
        #[arg(long)]
        qgn_ckpt: Option<PathBuf>,
        #[arg(long)]
        baseline_ckpt: Option<PathBuf>,
        /// Ground with a stub that reads the target off each command.
        #[arg(long)]
        perfect_stub: bool,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[command(flatten)]
        models: ModelPaths,
        #[arg(long, env = ENV_PORT, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Write finished sessions here.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Interactive session in the terminal.
    Demo {
        #[arg(long)]
        scene_seed: u64,
        /// Block you have in mind; drawn from the scene seed when omitted.
        #[arg(long)]
        target: Option<u32>,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenData { scenes, out, common } => {
            let s = gen_data(&out, &common.resolve(scenes)?)?;
            println!("wrote {} ({} scenes)", s.out.display(), s.config.n_scenes);
            println!("{}", serde_json::to_string_pretty(&s.counts)?);
            println!("manifest sha256 {}", s.fingerprint);
        }
        Cmd::Train { model, data, out, t2p_ckpt, common } => {
            let r = train(model, &data, &out, t2p_ckpt.as_deref(), &common.resolve(None)?)?;
            println!(
                "trained {:?} on {} samples in {:.0}s, final loss {:.4}; wrote {}",
                model,
                r.samples,
                r.seconds,
                r.final_loss.unwrap_or(f64::NAN),
                out.display()
            );
        }
        Cmd::Eval { experiment, data, t2p_ckpt, qgn_ckpt, baseline_ckpt, perfect_stub, report, common } => {
            let ckpts = Checkpoints { t2p: t2p_ckpt, qgn: qgn_ckpt, baseline: baseline_ckpt, perfect_stub };
            let r = eval(experiment, &data, &ckpts, &report, &common.resolve(None)?)?;
            print!("{}", r.to_markdown());
        }
        Cmd::Serve { models, port, host, transcripts, common } => {
            let o = common.resolve(None)?;
            let m = Models::load(&models.t2p_ckpt, &models.qgn_ckpt, &models.vocab)?;
            let state = AppState::new(Some(m), ServiceConfig { session: session_config(&o), transcript_dir: transcripts });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(it2p_service::serve(state, SocketAddr::new(host, port)))?;
        }
        Cmd::Demo { scene_seed, target, models, common } => {
            let o = common.resolve(None)?;
            let m = Models::load(&models.t2p_ckpt, &models.qgn_ckpt, &models.vocab)?;
            let opts = DemoOptions { scene_seed, target, session: session_config(&o) };
            let stdin = std::io::stdin();
            demo::run(&m, &opts, stdin.lock(), &mut std::io::stdout())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
