//! `ds2dl`: unsupervised hyperspectral clustering pipeline driver.
//!
//! Subcommands cover the full workflow: synthetic-scene generation,
//! autoencoder pretraining, latent encoding, superpixel segmentation,
//! diffusion clustering (latent `ds2dl` mode or raw-spectra `s2dl`
//! baseline), evaluation against ground truth, and label-map rendering.
//!
//! Exit codes: 0 success, 2 parameter/usage error, 3 I/O or file-format
//! error, 4 numeric or convergence failure.

mod commands;
mod config;
mod logging;
mod render;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{apply_entry, load_config, RunConfig};
use ds2dl_core::Error;
use logging::RunLog;

#[derive(Parser)]
#[command(name = "ds2dl", version, about = "Unsupervised hyperspectral image clustering")]
struct Cli {
    /// sectioned key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// random seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// worker thread count; 1 gives the bitwise-deterministic reference
    /// path (default: hardware parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON-lines run log (default: stderr)
    #[arg(long, global = true)]
    log: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene (cube + ground-truth labels)
    Synth {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        bands: usize,
        #[arg(long)]
        classes: usize,
        /// additive Gaussian noise standard deviation
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        out_cube: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
        /// generator parameter sidecar
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Pretrain the masked autoencoder on a cube
    Train {
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// per-epoch loss CSV
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Encode a cube into its latent feature map with a trained checkpoint
    Encode {
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// Entropy-rate superpixel segmentation of the 3-PC false color image
    Superpix {
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full diffusion clustering (s2dl on raw spectra, ds2dl on the latent)
    Cluster {
        /// s2dl | ds2dl
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// per-pixel (index, label, stage) CSV
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Evaluate a cluster map against ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// cluster map from a 2x-cluster-count run, for purity_2x
        #[arg(long)]
        pred_2x: Option<PathBuf>,
        /// cluster map from a 3x-cluster-count run, for purity_3x
        #[arg(long)]
        pred_3x: Option<PathBuf>,
        /// clustering wall time to report (from the cluster run log)
        #[arg(long, default_value_t = 0.0)]
        rt_seconds: f64,
    },
    /// Render a label map to a PPM image with a fixed palette
    Render {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Param(_) | Error::Contract(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numeric(_) | Error::Train { .. } => 4,
    }
}

fn override_path(cfg: &mut RunConfig, key: &str, value: &Option<PathBuf>) {
    if let Some(p) = value {
        cfg.paths.insert(key.to_string(), p.display().to_string());
    }
}

fn run(cli: Cli) -> ds2dl_core::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::param("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    }

    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        load_config(path, &mut cfg)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let log = RunLog::new(cli.log.clone());

    match &cli.command {
        Command::Synth {
            height,
            width,
            bands,
            classes,
            noise,
            out_cube,
            out_labels,
            provenance,
        } => {
            let args = commands::SynthArgs {
                height: *height,
                width: *width,
                bands: *bands,
                classes: *classes,
                noise: *noise,
                out_cube: out_cube.clone(),
                out_labels: out_labels.clone(),
                provenance: provenance.clone(),
            };
            commands::cmd_synth(&args, cfg.seed, &log)
        }
        Command::Train {
            cube,
            checkpoint,
            loss_log,
        } => {
            override_path(&mut cfg, "cube", cube);
            override_path(&mut cfg, "checkpoint", checkpoint);
            override_path(&mut cfg, "loss_log", loss_log);
            commands::cmd_train(&cfg, &log)
        }
        Command::Encode {
            cube,
            checkpoint,
            latent,
        } => {
            override_path(&mut cfg, "cube", cube);
            override_path(&mut cfg, "checkpoint", checkpoint);
            override_path(&mut cfg, "latent", latent);
            commands::cmd_encode(&cfg, &log)
        }
        Command::Superpix {
            cube,
            segments,
            out,
        } => {
            override_path(&mut cfg, "cube", cube);
            override_path(&mut cfg, "segmentation", out);
            if let Some(n) = segments {
                cfg.n_superpixels = *n;
            }
            commands::cmd_superpix(&cfg, &log)
        }
        Command::Cluster {
            mode,
            cube,
            latent,
            clusters,
            out,
            provenance,
        } => {
            override_path(&mut cfg, "cube", cube);
            override_path(&mut cfg, "latent", latent);
            override_path(&mut cfg, "cluster_map", out);
            override_path(&mut cfg, "provenance", provenance);
            if let Some(mode) = mode {
                apply_entry(&mut cfg, "diffusion", "mode", mode)?;
            }
            if let Some(k) = clusters {
                cfg.k_clusters = *k;
            }
            commands::cmd_cluster(&cfg, &log)
        }
        Command::Eval {
            pred,
            gt,
            out,
            pred_2x,
            pred_3x,
            rt_seconds,
        } => {
            let args = commands::EvalArgs {
                pred: pred.clone(),
                gt: gt.clone(),
                out: out.clone(),
                pred_2x: pred_2x.clone(),
                pred_3x: pred_3x.clone(),
                rt_seconds: *rt_seconds,
            };
            commands::cmd_eval(&args, &log)
        }
        Command::Render { labels, out } => commands::cmd_render(labels, out, &log),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
