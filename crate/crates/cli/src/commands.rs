use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mostnet_autograd::Tensor;
use mostnet_core::geometry::write_homographies;
use mostnet_core::mostnet::{count_parameters, Ablation, ModelConfig, MostNet};
use mostnet_core::synthdata::{read_dataset, read_png, synthesize_dataset, write_png, Clip, DatasetIndex, Split};
use mostnet_core::training::{
    config_fingerprint, evaluate, oracle_prediction, predict_clip, score, Checkpoint, Evaluation, RunOptions,
    Trainer,
};
use serde::Serialize;

use crate::{CliError, Context};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_image(path: &Path, t: &Tensor<f32>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(write_png(path, t)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write_file(path, serde_json::to_string_pretty(value).expect("json") + "\n")
}

fn open_dataset(ctx: &Context, data: &Path) -> Result<DatasetIndex, CliError> {
    Ok(read_dataset(&ctx.resolve(data))?)
}

fn load_split(index: &DatasetIndex, split: Split) -> Result<Vec<Clip>, CliError> {
    let clips = index.load_split(split)?;
    if clips.is_empty() {
        return Err(CliError::Validation(format!(
            "dataset {} has no {} clips",
            index.root.display(),
            split.name()
        )));
    }
    Ok(clips)
}

/// Model configuration from the run config, sized to the dataset frames.
fn model_config(ctx: &Context, index: &DatasetIndex) -> Result<ModelConfig, CliError> {
    let cfg = ctx.cfg.model.clone().with_input_size(index.height, index.width);
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg.synth();
    cfg.validate()?;
    let out = ctx.out_dir("data");
    let index = synthesize_dataset(&cfg, ctx.cfg.seed, &out)?;
    println!("dataset written to {}", out.display());
    println!("{:<8}{:>8}{:>8}", "split", "videos", "frames");
    let (mut videos, mut frames) = (0, 0);
    for (split, v, f) in index.summary() {
        println!("{:<8}{v:>8}{f:>8}", split.name());
        videos += v;
        frames += f;
    }
    println!("{:<8}{videos:>8}{frames:>8}", "total");
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    start_step: u64,
    end_step: u64,
    steps_run: usize,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
    /// Mean loss of the first (last) ten steps of this invocation.
    first10_mean: Option<f64>,
    last10_mean: Option<f64>,
    wall_time_s: f64,
    checkpoint: PathBuf,
    fingerprint: String,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn train(ctx: &Context, data: &Path, resume: bool) -> Result<(), CliError> {
    ctx.cfg.train.validate()?;
    let index = open_dataset(ctx, data)?;
    let out = ctx.out_dir("runs/train");
    let ck_path = match &ctx.checkpoint {
        Some(p) => ctx.resolve(p),
        None => out.join("checkpoint.safetensors"),
    };
    let mut trainer = if resume {
        let ck = Checkpoint::load(&ck_path)?;
        if (ck.model_config.input_height, ck.model_config.input_width) != (index.height, index.width) {
            return Err(CliError::Validation(format!(
                "checkpoint expects {}x{} frames, dataset has {}x{}",
                ck.model_config.input_height, ck.model_config.input_width, index.height, index.width
            )));
        }
        Trainer::from_checkpoint(&ck, ctx.cfg.train.clone())?
    } else {
        Trainer::new(MostNet::new(model_config(ctx, &index)?)?, ctx.cfg.train.clone())?
    };
    let train = load_split(&index, Split::Train)?;
    let val = index.load_split(Split::Val)?;
    write_file(&out.join("config.toml"), ctx.cfg.to_toml())?;
    let opts = RunOptions {
        log_path: Some(out.join("train_log.jsonl")),
        checkpoint_path: Some(ck_path.clone()),
        dump_dir: Some(out.join("dumps")),
        max_steps: None,
    };
    let start_step = trainer.step;
    let total = trainer.cfg.steps;
    eprintln!(
        "training {} parameters from step {start_step} to {total} on {} clips",
        trainer.model.num_parameters(),
        train.len()
    );
    let started = Instant::now();
    let mut losses = Vec::new();
    let chunk = trainer.cfg.log_every.max(1) * 10;
    while trainer.step < total {
        let report = trainer.run(
            &train,
            &val,
            &RunOptions {
                max_steps: Some(chunk),
                ..opts.clone()
            },
        )?;
        losses.extend(report.losses);
        let recent = &losses[losses.len().saturating_sub(10)..];
        eprintln!(
            "step {:>6}/{total}  loss {:.4}  lr {:.2e}  {:.0}s",
            trainer.step,
            mean(recent).unwrap_or(f64::NAN),
            trainer.lr(),
            started.elapsed().as_secs_f64()
        );
    }
    if losses.is_empty() {
        trainer.checkpoint().save(&ck_path)?;
    }
    let summary = TrainSummary {
        start_step,
        end_step: trainer.step,
        steps_run: losses.len(),
        first_loss: losses.first().copied(),
        final_loss: losses.last().copied(),
        first10_mean: mean(&losses[..losses.len().min(10)]),
        last10_mean: mean(&losses[losses.len().saturating_sub(10)..]),
        wall_time_s: started.elapsed().as_secs_f64(),
        checkpoint: ck_path.clone(),
        fingerprint: config_fingerprint(trainer.model.config()),
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    println!("checkpoint written to {}", ck_path.display());
    Ok(())
}

/// Horizontal strip of equally sized `[C, H, W]` images.
fn side_by_side(frames: &[&Tensor<f32>]) -> Tensor<f32> {
    let s = frames[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let n = frames.len();
    let mut data = vec![0.0f32; c * h * w * n];
    for (k, f) in frames.iter().enumerate() {
        let src = f.data();
        for ch in 0..c {
            for y in 0..h {
                let dst = (ch * h + y) * w * n + k * w;
                let from = (ch * h + y) * w;
                data[dst..dst + w].copy_from_slice(&src[from..from + w]);
            }
        }
    }
    Tensor::new(&[c, h, w * n], data)
}

pub fn eval(ctx: &Context, data: &Path, ground_truth: bool) -> Result<(), CliError> {
    let index = open_dataset(ctx, data)?;
    let split = ctx.cfg.eval.split;
    let out = ctx.out_dir("runs/eval");
    let clips = load_split(&index, split)?;
    let model = if ground_truth {
        None
    } else {
        let ck = Checkpoint::load(&ctx.checkpoint()?)?;
        if ctx.file_sections.iter().any(|s| s == "model") {
            let expected = config_fingerprint(&model_config(ctx, &index)?);
            if expected != ck.fingerprint() {
                return Err(CliError::Validation(format!(
                    "checkpoint fingerprint {} does not match the configured model {expected}",
                    ck.fingerprint()
                )));
            }
        }
        Some(ck.to_model()?)
    };
    let ev: Evaluation = match &model {
        Some(m) => evaluate(m, &clips)?,
        None => {
            let preds = clips.iter().map(oracle_prediction).collect::<Result<Vec<_>, _>>()?;
            score(&clips, &preds, 0.0)?
        }
    };
    write_json(&out.join("report.json"), &ev.report)?;
    write_file(&out.join("per_scale.csv"), ev.per_scale_csv())?;
    if ctx.cfg.eval.side_by_side {
        for clip in &clips {
            let restored: Vec<Tensor<f32>> = match &model {
                Some(m) => predict_clip(m, clip)?.0.scales[0].take().expect("full-resolution output").restored,
                None => clip.restored[1..].to_vec(),
            };
            for (k, r) in restored.iter().enumerate() {
                let t = k + 1;
                let strip = side_by_side(&[&clip.degraded[t], r, &clip.restored[t]]);
                write_image(&out.join("frames").join(&clip.name).join(format!("frame_{t:04}.png")), &strip)?;
            }
        }
    }
    let r = &ev.report;
    println!(
        "{} clips ({}): PSNR {:.3} dB  SSIM {:.4}  MACE {:.4} px  IoU {}  E(W) {:.5}  {:.1} FPS",
        clips.len(),
        split.name(),
        r.psnr_db,
        r.ssim,
        r.mace_px,
        r.iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
        r.ew,
        r.fps
    );
    print!("{}", ev.per_scale_csv());
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: &'static str,
    params: usize,
    steps: u64,
    final_loss: f64,
    psnr_db: f64,
    ssim: f64,
    mace_px: f64,
    iou: Option<f64>,
    ew: f64,
}

pub fn ablate(ctx: &Context, data: &Path, steps: u64) -> Result<(), CliError> {
    if steps == 0 {
        return Err(CliError::Validation("--steps must be positive".into()));
    }
    let index = open_dataset(ctx, data)?;
    let base = model_config(ctx, &index)?;
    let mut train_cfg = ctx.cfg.train.clone();
    train_cfg.steps = steps;
    train_cfg.validate()?;
    let train = load_split(&index, Split::Train)?;
    let mut val = index.load_split(Split::Val)?;
    if val.is_empty() {
        val = train.clone();
    }
    let out = ctx.out_dir("runs/ablate");
    let mut rows = Vec::new();
    for ablation in Ablation::ALL {
        let started = Instant::now();
        let model = MostNet::new(base.clone().with_ablation(ablation))?;
        let params = model.num_parameters();
        let mut trainer = Trainer::new(model, train_cfg.clone())?;
        let report = trainer.run(
            &train,
            &[],
            &RunOptions {
                log_path: Some(out.join(format!("{}_log.jsonl", ablation.name()))),
                dump_dir: Some(out.join("dumps")),
                ..RunOptions::default()
            },
        )?;
        let ev = evaluate(&trainer.model, &val)?;
        eprintln!("{} done in {:.0}s", ablation.name(), started.elapsed().as_secs_f64());
        rows.push(AblationRow {
            variant: ablation.name(),
            params,
            steps: trainer.step,
            final_loss: *report.losses.last().expect("at least one step"),
            psnr_db: ev.report.psnr_db,
            ssim: ev.report.ssim,
            mace_px: ev.report.mace_px,
            iou: ev.report.iou,
            ew: ev.report.ew,
        });
    }
    let mut csv = String::from("variant,params,steps,final_loss,psnr_db,ssim,mace_px,iou,ew\n");
    println!(
        "{:<6}{:>10}{:>7}{:>12}{:>10}{:>8}{:>9}{:>8}{:>10}",
        "model", "params", "steps", "loss", "PSNR", "SSIM", "MACE", "IoU", "E(W)"
    );
    for r in &rows {
        let iou = r.iou.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.variant, r.params, r.steps, r.final_loss, r.psnr_db, r.ssim, r.mace_px, iou, r.ew
        ));
        println!(
            "{:<6}{:>10}{:>7}{:>12.4}{:>10.3}{:>8.4}{:>9.4}{:>8}{:>10.5}",
            r.variant,
            r.params,
            r.steps,
            r.final_loss,
            r.psnr_db,
            r.ssim,
            r.mace_px,
            r.iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            r.ew
        );
    }
    write_file(&out.join("ablation.csv"), csv)?;
    write_json(&out.join("ablation.json"), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    input_frames: usize,
    outputs: usize,
    seconds: f64,
    fps: f64,
}

pub fn infer(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(&ctx.checkpoint()?)?;
    let dir = ctx.resolve(input);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(CliError::Validation(format!("{} holds fewer than 2 PNG frames", dir.display())));
    }
    let frames = paths.iter().map(|p| read_png(p, 3)).collect::<Result<Vec<_>, _>>()?;
    let model = ck.to_model()?;
    let started = Instant::now();
    let run = model.process_video(&frames)?;
    let seconds = started.elapsed().as_secs_f64();
    let out = ctx.out_dir("runs/infer");
    let mut homographies = Vec::new();
    for (k, o) in run.outputs.iter().enumerate() {
        let s1 = o.at(1).expect("full-resolution output");
        let name = paths[k + 1].file_name().expect("file name");
        let squeeze = |t: &Tensor<f32>| t.clone().reshape(&t.shape()[1..]);
        write_image(&out.join("R").join(name), &squeeze(&s1.restored))?;
        if let Some(m) = &s1.mask {
            let mut m = squeeze(m);
            m.data_mut().iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
            write_image(&out.join("M").join(name), &m)?;
        }
        homographies.push(s1.homographies[0]);
    }
    let h_path = out.join("H.txt");
    write_homographies(&h_path, &homographies)?;
    let timing = Timing {
        input_frames: frames.len(),
        outputs: run.outputs.len(),
        seconds,
        fps: run.fps,
    };
    write_json(&out.join("timing.json"), &timing)?;
    println!(
        "{} frames -> {} outputs in {:.2}s ({:.1} FPS), written to {}",
        timing.input_frames,
        timing.outputs,
        seconds,
        timing.fps,
        out.display()
    );
    Ok(())
}

pub fn params(ctx: &Context, ablation: Option<Ablation>, json: bool) -> Result<(), CliError> {
    let mut cfg = ctx.cfg.model.clone();
    if let Some(a) = ablation {
        cfg.ablation = a;
    }
    let model = MostNet::<f32>::new(cfg.clone())?;
    let total = count_parameters(&cfg)?;
    let breakdown = model.parameter_breakdown();
    if json {
        let modules: serde_json::Map<String, serde_json::Value> =
            breakdown.iter().map(|(k, v)| (k.clone(), (*v).into())).collect();
        let v = serde_json::json!({"variant": cfg.ablation.name(), "total": total, "modules": modules});
        println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    } else {
        println!("variant {}", cfg.ablation.name());
        for (k, v) in &breakdown {
            println!("{k:<24}{v:>12}");
        }
        println!("{:<24}{total:>12}  ({:.2}M)", "total", total as f64 / 1e6);
    }
    Ok(())
}
