use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use slicevol_core::eval::{evaluate, CorpusEntry, EvalConfig};
use slicevol_core::io::{load_masks, load_volume, save_masks, save_volume, write_atomic};
use slicevol_core::network::load_checkpoint;
use slicevol_core::phantom::synth_generate;
use slicevol_core::propagator::{propagate_volume, NetworkProvider};
use slicevol_core::trainer::{train, TrainConfig};
use slicevol_core::{Error, MaskPlane, PhantomSpec, PropagateOptions, WindowSpec};
use slicevol_service::ServiceConfig;

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Parser)]
#[command(name = "slicevol", version, about = "Slice-to-volume mask propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a correspondence network on a corpus of volumes.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate one annotated slice through a volume.
    Propagate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// SMK1 file holding either one plane or a full mask volume.
        #[arg(long)]
        seed_mask: PathBuf,
        #[arg(long)]
        seed_index: usize,
        /// Output directory for masks.smk and result.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_verify: bool,
        #[arg(long)]
        no_edge_profile: bool,
        #[arg(long)]
        threshold: Option<f64>,
        /// Dilation radius of the verification band.
        #[arg(long)]
        dilate: Option<usize>,
        /// Attention window radius.
        #[arg(long)]
        radius: Option<usize>,
        /// Keep propagating through empty slices.
        #[arg(long)]
        no_stop: bool,
        /// Ground truth used to add Dice to result.json.
        #[arg(long)]
        groundtruth: Option<PathBuf>,
    },
    /// Run the evaluation protocol described by a config file.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate synthetic phantoms with exact masks.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of phantoms; seeds count up from the spec's rng_seed.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Run the HTTP job service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Data directory (SLI2VOL_DATA takes precedence).
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Checkpoint for propagation jobs; defaults to <data>/model.sck.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory of static UI files served under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run_train(config: &Path, out: &Path) -> CliResult {
    let mut cfg: TrainConfig = read_json(config)?;
    let base = config_dir(config);
    for p in &mut cfg.corpus {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    let trained = train(&cfg, Some(out))?;
    println!("{}", serde_json::to_string_pretty(&trained.report)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_propagate(
    model: &Path,
    volume: &Path,
    seed_mask: &Path,
    seed_index: usize,
    out: &Path,
    options: PropagateOptions,
    groundtruth: Option<&Path>,
) -> CliResult {
    let ck = load_checkpoint(model)?;
    let provider = NetworkProvider::new(ck.network, ck.profile, options.edge_profile)?;
    let volume = load_volume(volume)?;
    let seeds = load_masks(seed_mask)?;
    let seed: MaskPlane = match seeds.depth() {
        1 => seeds.plane(0)?.clone(),
        d if d == volume.depth() => seeds.plane(seed_index)?.clone(),
        d => {
            return Err(Error::ShapeMismatch(format!(
                "seed mask file has {d} planes; expected 1 or {}",
                volume.depth()
            ))
            .into())
        }
    };
    let gt = groundtruth.map(load_masks).transpose()?;
    let result = propagate_volume(&provider, &volume, &seed, seed_index, &options)?;
    let summary = result.summary(gt.as_ref())?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    save_masks(&result.masks, out.join("masks.smk"))?;
    write_json(&out.join("result.json"), &summary)?;
    eprintln!(
        "propagated {} slices in {:.2}s ({:.2} slices/s)",
        summary.depth, summary.total_seconds, summary.slices_per_second
    );
    if let Some(d) = summary.volume_dice {
        eprintln!("volume dice {d:.2}");
    }
    Ok(())
}

fn run_eval(config: &Path) -> CliResult {
    let cfg: EvalConfig = read_json(config)?;
    let report = evaluate(&cfg.resolve_paths(&config_dir(config)))?;
    print!("{}", report.to_table());
    Ok(())
}

fn run_synth(spec: &Path, out: &Path, count: usize) -> CliResult {
    let spec: PhantomSpec = read_json(spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    let mut manifest = Vec::new();
    for i in 0..count {
        let s = PhantomSpec {
            rng_seed: spec.rng_seed + i as u64,
            ..spec.clone()
        };
        let (volume, masks) = synth_generate(&s)?;
        let id = format!("phantom_{:03}", s.rng_seed);
        save_volume(&volume, out.join(format!("{id}.svl")))?;
        save_masks(&masks, out.join(format!("{id}.smk")))?;
        manifest.push(CorpusEntry {
            volume: format!("{id}.svl").into(),
            groundtruth: format!("{id}.smk").into(),
            id,
        });
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    eprintln!("wrote {count} phantoms to {}", out.display());
    Ok(())
}

fn run_serve(cfg: ServiceConfig, addr: SocketAddr) -> CliResult {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(slicevol_service::serve(cfg, addr))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train { config, out } => run_train(&config, &out),
        Command::Propagate {
            model,
            volume,
            seed_mask,
            seed_index,
            out,
            no_verify,
            no_edge_profile,
            threshold,
            dilate,
            radius,
            no_stop,
            groundtruth,
        } => {
            let defaults = PropagateOptions::default();
            let options = PropagateOptions {
                threshold: threshold.unwrap_or(defaults.threshold),
                verification: !no_verify,
                dilation_radius: dilate.unwrap_or(defaults.dilation_radius),
                stop_on_empty: !no_stop,
                window: radius.map_or(defaults.window, WindowSpec::new),
                edge_profile: !no_edge_profile,
            };
            options.validate()?;
            run_propagate(
                &model,
                &volume,
                &seed_mask,
                seed_index,
                &out,
                options,
                groundtruth.as_deref(),
            )
        }
        Command::Eval { config } => run_eval(&config),
        Command::Synth { spec, out, count } => run_synth(&spec, &out, count),
        Command::Serve {
            port,
            host,
            data,
            workers,
            model,
            ui,
        } => {
            let data = std::env::var_os("SLI2VOL_DATA").map(PathBuf::from).unwrap_or(data);
            let model = model.unwrap_or_else(|| data.join("model.sck"));
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            run_serve(
                ServiceConfig {
                    data_dir: Some(data),
                    workers,
                    model: Some(model),
                    ui_dir: ui,
                },
                addr,
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
