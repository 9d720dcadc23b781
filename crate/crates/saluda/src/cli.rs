//! Command-line entry points. Every subcommand reads the same experiment
//! config (defaults, then `--config`, then `--set` overrides) and writes
//! its artifacts under the configured output directory.

use crate::benchmark::simulate_frame;
use crate::error::{Error, Result};
use crate::geom::cloud::{Domain, PointCloud};
use crate::io::config::{load_experiment, ExperimentConfig};
use crate::io::latents::dump_latents;
use crate::io::native::{load_cloud, save_cloud};
use crate::io::ply::{export_labeled_cloud, export_queries};
use crate::metrics::{evaluate, predict_frame};
use crate::model::state::{NetworkState};
use crate::queries::sample_visibility_queries;
use crate::seeds::{derive, derive_n};
use crate::train::{
    adapt_bn, self_train, trace_to_csv, train_step1, train_step1_with, FrameSet, TrainConfig,
};
use crate::validators::{entropy_validator, lambda_grid, select_hyperparameter, UnlabeledFrames};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "saluda", version, about = "Lidar domain adaptation workbench")]
pub struct Cli {
    /// Experiment config JSON; defaults are built in.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override config fields, e.g. --set train.lambda=0.01
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic benchmark splits as .slpc frames.
    Simulate,
    /// Stage-one training per the configured mode.
    Train,
    /// Stage-two self-training from a stage-one checkpoint.
    Selftrain {
        /// Checkpoint to start from; defaults to <output_dir>/model.salw
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Recompute BN statistics on target frames (AdaBN or DUA).
    AdaptBn {
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Lambda grid search with the entropy validator; trains the final
    /// model at the winning weight.
    Sweep,
    /// Evaluate a checkpoint on a labeled split.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "target-eval")]
        split: Split,
    },
    /// Write inspection artifacts (PLY clouds, latent CSV).
    Export {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        what: Artifact,
        #[arg(long, value_enum, default_value = "target-eval")]
        split: Split,
        /// Frame index within the split.
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    SourceTrain,
    SourceVal,
    TargetTrain,
    TargetEval,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Artifact {
    /// Ground-truth labels as colors.
    Truth,
    /// Model predictions as colors.
    Predictions,
    /// Occupancy query points, free/occupied palette.
    Queries,
    /// Latent codes as CSV.
    Latents,
}

fn split_dir<'c>(config: &'c ExperimentConfig, split: Split) -> &'c Path {
    match split {
        Split::SourceTrain => &config.data.source_train,
        Split::SourceVal => &config.data.source_val,
        Split::TargetTrain => &config.data.target_train,
        Split::TargetEval => &config.data.target_eval,
    }
}

fn split_domain(split: Split) -> Domain {
    match split {
        Split::SourceTrain | Split::SourceVal => Domain::Source,
        Split::TargetTrain | Split::TargetEval => Domain::Target,
    }
}

/// Load a split directory: every .slpc file in name order, frame ids by
/// position.
fn load_split(config: &ExperimentConfig, split: Split) -> Result<Vec<PointCloud>> {
    let dir = split_dir(config, split);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension().and_then(|e| e.to_str()) == Some("slpc")).then_some(path)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .slpc frames in {}", dir.display())));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let mut cloud = load_cloud(path)?;
        cloud.domain = split_domain(split);
        cloud.frame_id = i as u64;
        frames.push(cloud);
    }
    Ok(frames)
}

fn model_path(config: &ExperimentConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| config.output_dir.join("model.salw"))
}

fn load_model(config: &ExperimentConfig, explicit: &Option<PathBuf>) -> Result<NetworkState> {
    NetworkState::load(&model_path(config, explicit))
}

fn prepare(config: &ExperimentConfig, frames: &[PointCloud]) -> Result<FrameSet> {
    FrameSet::prepare(frames, config.voxel_size, &config.model)
}

fn cmd_simulate(config: &ExperimentConfig) -> Result<()> {
    let sim = &config.simulate;
    let jobs: [(Split, &str, u64, &crate::sim::scan::LidarModel, bool); 4] = [
        (Split::SourceTrain, "source-train", sim.source_train_frames, &sim.source_lidar, true),
        (Split::SourceVal, "source-val", sim.source_val_frames, &sim.source_lidar, true),
        // the adaptation split ships without labels, so nothing downstream
        // can cheat
        (Split::TargetTrain, "target-train", sim.target_train_frames, &sim.target_lidar, false),
        (Split::TargetEval, "target-eval", sim.target_eval_frames, &sim.target_lidar, true),
    ];
    for (split, name, count, lidar, labeled) in jobs {
        let dir = split_dir(config, split);
        std::fs::create_dir_all(dir)?;
        for i in 0..count {
            let mut cloud =
                simulate_frame(config.seed, name, i, &sim.scene, lidar, split_domain(split))?;
            if !labeled {
                cloud.labels = None;
            }
            save_cloud(&cloud, &dir.join(format!("{i:05}.slpc")))?;
        }
        println!("wrote {count} frames to {}", dir.display());
    }
    Ok(())
}

fn write_trace(config: &ExperimentConfig, name: &str, trace: &[crate::train::TraceRow]) -> Result<()> {
    let path = config.output_dir.join(name);
    std::fs::write(&path, trace_to_csv(trace))?;
    println!("trace written to {}", path.display());
    Ok(())
}

fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    let source = prepare(config, &load_split(config, Split::SourceTrain)?)?;
    let target = match load_split(config, Split::TargetTrain) {
        Ok(frames) => prepare(config, &frames)?,
        // source-only runs do not need the target split on disk
        Err(_) if config.train.mode == crate::train::TrainMode::SourceOnly => {
            FrameSet::empty(config.voxel_size)
        }
        Err(e) => return Err(e),
    };
    std::fs::create_dir_all(&config.output_dir)?;
    let mut net = NetworkState::init(config.model.clone(), derive(config.seed, "init"))?;
    let out = config.output_dir.clone();
    let report = train_step1_with(&source, &target, &config.train, &mut net, config.seed, |it, state| {
        state.save(&out.join(format!("ckpt_{it:06}.salw")))
    })?;
    net.save(&config.output_dir.join("model.salw"))?;
    write_trace(config, "trace.csv", &report.trace)?;
    println!(
        "trained {:?} for {} iterations ({} optimizer steps)",
        config.train.mode,
        config.train.total_iterations,
        report.optimizer_steps
    );
    println!("model written to {}", config.output_dir.join("model.salw").display());
    Ok(())
}

fn cmd_selftrain(config: &ExperimentConfig, init: &Option<PathBuf>) -> Result<()> {
    let start = load_model(config, init)?;
    let source = prepare(config, &load_split(config, Split::SourceTrain)?)?;
    let target = prepare(config, &load_split(config, Split::TargetTrain)?)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let (student, report) =
        self_train(&start, &source, &target, &config.self_train, &config.train, config.seed)?;
    let path = config.output_dir.join("model_selftrained.salw");
    student.save(&path)?;
    write_trace(config, "selftrain_trace.csv", &report.train.trace)?;
    println!(
        "self-trained for {} epochs: pseudo-label rate {:.1}%, {} target steps skipped",
        config.self_train.epochs,
        100.0 * report.pseudo_label_rate,
        report.skipped_target_steps
    );
    println!("student written to {}", path.display());
    Ok(())
}

fn cmd_adapt_bn(config: &ExperimentConfig, init: &Option<PathBuf>) -> Result<()> {
    let mut net = load_model(config, init)?;
    let target = prepare(config, &load_split(config, Split::TargetTrain)?)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let report = adapt_bn(&mut net, &target, &config.bn_adapt)?;
    let path = config.output_dir.join("model_bn_adapted.salw");
    net.save(&path)?;
    println!(
        "{:?} consumed {} target batches",
        config.bn_adapt.method, report.batches_consumed
    );
    println!("adapted model written to {}", path.display());
    Ok(())
}

fn cmd_sweep(config: &ExperimentConfig) -> Result<()> {
    let source = prepare(config, &load_split(config, Split::SourceTrain)?)?;
    let target_clouds = load_split(config, Split::TargetTrain)?;
    let target = prepare(config, &target_clouds)?;
    let unlabeled = UnlabeledFrames::strip(target_clouds);
    std::fs::create_dir_all(&config.output_dir)?;

    let seeds_per_lambda = 2;
    let grid = lambda_grid();
    let voxel = config.voxel_size;
    let (winner, report) = select_hyperparameter(
        &grid,
        seeds_per_lambda,
        |lambda, seed_index| {
            let cell = format!("sweep/l{:x}/s{seed_index}", lambda.to_bits());
            let mut cfg = TrainConfig {
                lambda,
                mode: crate::train::TrainMode::Saluda,
                seed: Some(derive(config.seed, &cell)),
                ..config.train.clone()
            };
            cfg.checkpoint_every = 0;
            let mut net = NetworkState::init(
                config.model.clone(),
                derive_n(config.seed, &format!("{cell}/init"), 0),
            )?;
            let report = train_step1(&source, &target, &cfg, &mut net, config.seed)?;
            log::info!(
                "sweep cell lambda={lambda} seed={seed_index}: {} steps",
                report.optimizer_steps
            );
            Ok(net)
        },
        |net| entropy_validator(net, &unlabeled, voxel),
    )?;

    let csv_path = config.output_dir.join("sweep.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    winner.save(&config.output_dir.join("model.salw"))?;
    let summary = serde_json::to_string_pretty(&report)?;
    std::fs::write(config.output_dir.join("sweep.json"), summary)?;
    println!("sweep written to {}", csv_path.display());
    println!("chosen lambda {}", report.chosen_lambda);
    println!("final model written to {}", config.output_dir.join("model.salw").display());
    Ok(())
}

fn cmd_eval(config: &ExperimentConfig, model: &Option<PathBuf>, split: Split) -> Result<()> {
    let mut net = load_model(config, model)?;
    let frames = load_split(config, split)?;
    let outcome = evaluate(
        &mut net,
        &frames,
        config.voxel_size,
        config.classes.ignore_id,
        &config.eval,
    )?;
    std::fs::create_dir_all(&config.output_dir)?;
    let json = serde_json::to_string_pretty(&outcome.report)?;
    std::fs::write(config.output_dir.join("metrics.json"), json)?;
    println!("mIoU {:.1}", 100.0 * outcome.report.miou);
    println!("fw-IoU {:.1}", 100.0 * outcome.report.fw_iou);
    for (name, iou) in config.classes.names.iter().zip(&outcome.report.class_iou) {
        match iou {
            Some(v) => println!("  {name}: {:.1}", 100.0 * v),
            None => println!("  {name}: -"),
        }
    }
    for band in &outcome.report.bands {
        match band.miou {
            Some(v) => println!(
                "  {:.1}-{:.1} m: mIoU {:.1} ({} points)",
                band.lo, band.hi, 100.0 * v, band.points
            ),
            None => println!("  {:.1}-{:.1} m: - ({} points)", band.lo, band.hi, band.points),
        }
    }
    println!("metrics written to {}", config.output_dir.join("metrics.json").display());
    Ok(())
}

fn cmd_export(
    config: &ExperimentConfig,
    model: &Option<PathBuf>,
    what: Artifact,
    split: Split,
    frame_index: usize,
) -> Result<()> {
    let frames = load_split(config, split)?;
    let frame = frames
        .get(frame_index)
        .ok_or_else(|| Error::Data(format!("split has only {} frames", frames.len())))?;
    std::fs::create_dir_all(&config.output_dir)?;
    let ignore = config.classes.ignore_id;
    match what {
        Artifact::Truth => {
            let labels = frame
                .labels
                .as_ref()
                .ok_or_else(|| Error::Data("frame has no labels to export".into()))?;
            let path = config.output_dir.join(format!("truth_{frame_index:05}.ply"));
            export_labeled_cloud(&path, frame, labels, ignore)?;
            println!("wrote {}", path.display());
        }
        Artifact::Predictions => {
            let mut net = load_model(config, model)?;
            let preds = predict_frame(&mut net, frame, config.voxel_size)?;
            let path = config.output_dir.join(format!("pred_{frame_index:05}.ply"));
            export_labeled_cloud(&path, frame, &preds, ignore)?;
            println!("wrote {}", path.display());
        }
        Artifact::Queries => {
            let queries = sample_visibility_queries(
                frame,
                config.train.delta,
                derive_n(config.seed, "export/queries", frame_index as u64),
                config.train.anchors_per_frame,
            )?;
            let path = config.output_dir.join(format!("queries_{frame_index:05}.ply"));
            export_queries(&path, &queries)?;
            println!("wrote {} ({} queries)", path.display(), queries.queries.len());
        }
        Artifact::Latents => {
            let mut net = load_model(config, model)?;
            let path = config.output_dir.join(format!("latents_{frame_index:05}.csv"));
            let rows =
                dump_latents(&mut net, std::slice::from_ref(frame), config.voxel_size, ignore, &path)?;
            println!("wrote {} ({rows} rows)", path.display());
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_experiment(cli.config.as_deref(), &cli.set)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&config),
        Command::Train => cmd_train(&config),
        Command::Selftrain { init } => cmd_selftrain(&config, init),
        Command::AdaptBn { init } => cmd_adapt_bn(&config, init),
        Command::Sweep => cmd_sweep(&config),
        Command::Eval { model, split } => cmd_eval(&config, model, *split),
        Command::Export { model, what, split, frame } => {
            cmd_export(&config, model, *what, *split, *frame)
        }
    }
}
