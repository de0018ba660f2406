//! Subcommand implementations.

use crate::{
    EditArgs, GenToyArgs, InferArgs, MetricsArgs, PrintConfigArgs, TrainArgs, WarpArgs,
};
use anyhow::{anyhow, bail, Context, Result};
use ndarray::{Array4, Axis};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use warpgen_core::config::{
    config_hash, load_full_config, preset, serialize_config, LossConfig, ModelConfig, TrainConfig,
};
use warpgen_net::correspondence::{export_sparse_correspondence, format_sparse_correspondence};
use warpgen_net::data::disk::{
    read_keypoints_json, read_labels_png, read_photo_png, write_photo_png, write_toy_dataset,
    DiskDataset,
};
use warpgen_net::data::raster::{rasterize_input, RasterSource};
use warpgen_net::data::toy::ToyShapesDataset;
use warpgen_net::data::{Dataset, TaskKind};
use warpgen_net::metrics::evaluate_records;
use warpgen_net::trainer::Trainer;

fn load_config_arg(spec: &str) -> Result<(ModelConfig, LossConfig, TrainConfig)> {
    if let Some(name) = spec.strip_prefix("preset:") {
        return preset(name).ok_or_else(|| anyhow!("unknown preset `{name}`"));
    }
    load_full_config(Path::new(spec)).with_context(|| format!("loading config {spec}"))
}

fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (model_cfg, loss_cfg, mut train_cfg) = load_config_arg(&args.config)?;
    train_cfg.apply_env_override();
    if args.deterministic {
        train_cfg.deterministic = true;
    }
    if let Some(steps) = args.steps {
        train_cfg.steps = steps;
    }

    let dataset = match (&args.data, args.toy) {
        (Some(dir), None) => Dataset::Disk(
            DiskDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?,
        ),
        (None, Some(n)) => {
            let kind = TaskKind::from_str(&args.task).map_err(|e| anyhow!(e))?;
            Dataset::Toy(ToyShapesDataset::new(n, model_cfg.image_size, kind, args.seed))
        }
        _ => bail!("exactly one of --data or --toy is required"),
    };
    if dataset.image_size() != model_cfg.image_size {
        bail!(
            "dataset images are {}px but the config expects {}px",
            dataset.image_size(),
            model_cfg.image_size
        );
    }

    let mut trainer = match &args.resume {
        Some(ck) => {
            let t = Trainer::restore(ck, &model_cfg, &loss_cfg, &train_cfg)
                .with_context(|| format!("resuming from {}", ck.display()))?;
            println!("resumed at iteration {}", t.state.iteration);
            t
        }
        None => Trainer::new(
            &model_cfg,
            &loss_cfg,
            &train_cfg,
            dataset.kind(),
            dataset.classes(),
            dataset.len(),
            args.seed,
        )?,
    };

    let run_dir = args.out.join(format!(
        "run-{:08x}-{}",
        config_hash(&model_cfg, &loss_cfg) as u32,
        timestamp()
    ));
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(
        run_dir.join("config.txt"),
        serialize_config(&model_cfg, &loss_cfg, &train_cfg),
    )?;
    let log_path = run_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let checkpoint_path = run_dir.join("checkpoint.wga");

    println!("run dir: {}", run_dir.display());
    let steps = train_cfg.steps;
    let log_every = train_cfg.log_every;
    let ckpt_every = train_cfg.checkpoint_every;
    for step in 0..steps {
        let report = trainer.step(&dataset)?;
        if step % log_every == 0 || step + 1 == steps {
            let line = serde_json::to_string(&report)?;
            writeln!(log, "{line}")?;
            if step % (log_every * 50) == 0 {
                println!("{line}");
            }
        }
        if ckpt_every > 0 && (step + 1) % ckpt_every == 0 && step + 1 != steps {
            trainer.save(&run_dir.join(format!("checkpoint-{:06}.wga", step + 1)))?;
        }
    }
    log.flush()?;
    trainer.save(&checkpoint_path)?;
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

/// Read the annotation input for the checkpoint's task and rasterize it.
fn load_input_raster(trainer: &Trainer, path: &Path) -> Result<Array4<f64>> {
    let task = trainer.model.meta.task;
    let classes = trainer.model.meta.classes;
    let size = trainer.model.config.image_size;
    let (raster, warnings) = match task {
        TaskKind::Mask | TaskKind::Edge => {
            let labels = read_labels_png(path)?;
            let (h, w) = labels.dim();
            if h != size || w != size {
                bail!("input is {h}x{w}, checkpoint expects {size}x{size}");
            }
            if task == TaskKind::Mask {
                if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                    bail!("input label {bad} exceeds checkpoint class count {classes}");
                }
            }
            rasterize_input(RasterSource::Labels(&labels), task, classes)?
        }
        TaskKind::Pose => {
            let points = read_keypoints_json(path)?;
            rasterize_input(RasterSource::Keypoints(&points, size), task, classes)?
        }
    };
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(raster.insert_axis(Axis(0)))
}

fn load_exemplar(path: &Path, size: usize) -> Result<Array4<f64>> {
    let photo = read_photo_png(path)?;
    let (_, h, w) = photo.dim();
    if h != size || w != size {
        bail!(
            "exemplar is {h}x{w}, checkpoint expects {size}x{size}"
        );
    }
    Ok(photo.insert_axis(Axis(0)))
}

fn write_image_batch0(path: &Path, img: &ndarray::Array4<f64>) -> Result<()> {
    let single = img.index_axis(Axis(0), 0).to_owned();
    write_photo_png(path, &single)?;
    Ok(())
}

pub fn infer(args: InferArgs) -> Result<()> {
    let trainer = Trainer::load_self_described(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let x_a = load_input_raster(&trainer, &args.input)?;
    let exemplar = load_exemplar(&args.exemplar, trainer.model.config.image_size)?;
    let (out, warped, _) = trainer
        .model
        .infer(&trainer.store, &x_a, &exemplar, args.seed)?;
    write_image_batch0(&args.out, out.data())?;
    println!("wrote {}", args.out.display());
    if let Some(warp_path) = &args.dump_warp {
        write_image_batch0(warp_path, warped.0.data())?;
        println!("wrote {}", warp_path.display());
    }
    Ok(())
}

fn parse_points_file(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let row: usize = it
            .next()
            .ok_or_else(|| anyhow!("line {}: missing row", lineno + 1))?
            .parse()
            .with_context(|| format!("line {}", lineno + 1))?;
        let col: usize = it
            .next()
            .ok_or_else(|| anyhow!("line {}: missing col", lineno + 1))?
            .parse()
            .with_context(|| format!("line {}", lineno + 1))?;
        points.push((row, col));
    }
    Ok(points)
}

pub fn warp(args: WarpArgs) -> Result<()> {
    let trainer = Trainer::load_self_described(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let x_a = load_input_raster(&trainer, &args.input)?;
    let exemplar = load_exemplar(&args.exemplar, trainer.model.config.image_size)?;
    let (_, warped, matrix) = trainer
        .model
        .infer(&trainer.store, &x_a, &exemplar, args.seed)?;
    write_image_batch0(&args.out, warped.0.data())?;
    println!("wrote {}", args.out.display());

    if let Some(points_path) = &args.points {
        let queries = parse_points_file(points_path)?;
        let matches = export_sparse_correspondence(&matrix, &queries)?;
        let out_path = args
            .points_out
            .clone()
            .unwrap_or_else(|| args.out.with_extension("points.txt"));
        std::fs::write(&out_path, format_sparse_correspondence(&queries, &matches))?;
        println!("wrote {}", out_path.display());
    }
    Ok(())
}

pub fn edit(args: EditArgs) -> Result<()> {
    let trainer = Trainer::load_self_described(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    if trainer.model.meta.task != TaskKind::Mask {
        bail!("edit requires a mask-task checkpoint");
    }
    let classes = trainer.model.meta.classes;
    let size = trainer.model.config.image_size;

    let original = read_labels_png(&args.mask)?;
    let edited = read_labels_png(&args.edited_mask)?;
    for (name, labels) in [("mask", &original), ("edited mask", &edited)] {
        let max = labels.iter().copied().max().unwrap_or(0);
        if max >= classes {
            bail!(
                "{name} uses class id {max} but the checkpoint was trained with {classes} classes"
            );
        }
        let (h, w) = labels.dim();
        if h != size || w != size {
            bail!("{name} is {h}x{w}, checkpoint expects {size}x{size}");
        }
    }

    let (raster, _) = rasterize_input(RasterSource::Labels(&edited), TaskKind::Mask, classes)?;
    let x_a = raster.insert_axis(Axis(0));
    let exemplar = load_exemplar(&args.image, size)?;
    let (out, _, _) = trainer
        .model
        .infer(&trainer.store, &x_a, &exemplar, args.seed)?;
    write_image_batch0(&args.out, out.data())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn metrics(args: MetricsArgs) -> Result<()> {
    let trainer = Trainer::load_self_described(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let disk = DiskDataset::load(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    if disk.val_indices().is_empty() {
        bail!("dataset has no val split; metrics need held-out samples");
    }
    let records: Vec<_> = disk.val_indices().iter().map(|&i| disk.record(i)).collect();
    let report = evaluate_records(&trainer.model, &trainer.store, &records, args.seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn gen_toy_data(args: GenToyArgs) -> Result<()> {
    let kind = TaskKind::from_str(&args.kind).map_err(|e| anyhow!(e))?;
    let dataset = ToyShapesDataset::new(args.n, args.size, kind, args.seed);
    let manifest = write_toy_dataset(&args.out, &dataset)?;
    println!("wrote {} scenes under {}", args.n, args.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

pub fn print_config(args: PrintConfigArgs) -> Result<()> {
    let (m, l, t) =
        preset(&args.preset).ok_or_else(|| anyhow!("unknown preset `{}`", args.preset))?;
    print!("{}", serialize_config(&m, &l, &t));
    Ok(())
}

