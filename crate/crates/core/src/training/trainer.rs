use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mostnet_autograd::{Adam, Graph, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{augment, cosine_lr, evaluate, mix_seed, Checkpoint, Evaluation, Sample, TrainConfig};
use crate::losses::{total_loss_graph, LossReport, LossTerm};
use crate::mostnet::{GraphState, MostNet};
use crate::synthdata::{label_pyramid, write_png, Clip, FrameLabels};
use crate::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub terms: Vec<LossTerm>,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Total loss per executed step.
    pub losses: Vec<f64>,
    pub validations: Vec<(u64, Evaluation)>,
    pub checkpoint: Option<PathBuf>,
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Append-only JSON-lines log.
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Directory for the dump written when the loss diverges.
    pub dump_dir: Option<PathBuf>,
    /// Stop after this many steps even if the schedule is longer.
    pub max_steps: Option<u64>,
}

pub struct Trainer {
    pub model: MostNet<f32>,
    pub opt: Adam<f32>,
    pub step: u64,
    pub cfg: TrainConfig,
}

struct Batch {
    clips: Vec<String>,
    starts: Vec<usize>,
    samples: Vec<Sample>,
}

fn stack_frames(samples: &[Sample], t: usize, pick: impl Fn(&Sample) -> &Vec<Tensor<f32>>) -> Tensor<f32> {
    Tensor::stack(&samples.iter().map(|s| pick(s)[t].clone()).collect::<Vec<_>>())
}

impl Trainer {
    pub fn new(model: MostNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            opt: Adam::default(),
            step: 0,
            cfg,
        })
    }

    /// Resumes from a checkpoint; `cfg` replaces the stored training config.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ck.to_model()?;
        let opt = ck.to_optimizer(&model)?;
        Ok(Self {
            model,
            opt,
            step: ck.step,
            cfg,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, Some(&self.opt), self.step, Some(&self.cfg))
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.step, self.cfg.steps, self.cfg.lr_start, self.cfg.lr_end)
    }

    fn sample_batch(&self, clips: &[Clip], rng: &mut ChaCha8Rng) -> Result<Batch> {
        let u = self.cfg.unroll_length;
        let mut batch = Batch {
            clips: Vec::new(),
            starts: Vec::new(),
            samples: Vec::new(),
        };
        for _ in 0..self.cfg.batch_size {
            let clip = &clips[rng.gen_range(0..clips.len())];
            if clip.n_frames() < u {
                return Err(Error::InvalidConfig(format!(
                    "clip {} has {} frames, fewer than unroll_length {u}",
                    clip.name,
                    clip.n_frames()
                )));
            }
            let start = rng.gen_range(0..=clip.n_frames() - u);
            let sample = augment(&Sample::window(clip, start, u), &self.cfg.augment, rng);
            batch.clips.push(clip.name.clone());
            batch.starts.push(start);
            batch.samples.push(sample);
        }
        Ok(batch)
    }

    /// Unrolled forward over one batch: cold start on the first frame, a loss
    /// at every later frame, averaged over the window.
    fn forward_loss(&self, g: &Graph<f32>, batch: &Batch) -> Result<(mostnet_autograd::Var, LossReport)> {
        let u = self.cfg.unroll_length;
        let mut state: Option<GraphState> = None;
        let mut losses = Vec::with_capacity(u - 1);
        let mut report = LossReport::default();
        for t in 0..u {
            let x = g.constant(stack_frames(&batch.samples, t, |s| &s.degraded));
            let step = self.model.step_graph(g, x, state.as_ref(), None)?;
            if t > 0 {
                let labels = FrameLabels::new(
                    stack_frames(&batch.samples, t, |s| &s.restored),
                    stack_frames(&batch.samples, t, |s| &s.masks),
                    batch.samples.iter().map(|s| s.homographies[t - 1]).collect(),
                )?;
                let (l, r) = total_loss_graph(g, &step, &label_pyramid(&labels), &self.cfg.weights, self.cfg.charbonnier_eps)?;
                losses.push(l);
                merge_report(&mut report, &r, 1.0 / (u - 1) as f64);
            }
            state = Some(step.state);
        }
        let total = g.scale(g.add_n(&losses), 1.0 / (u - 1) as f32);
        Ok((total, report))
    }

    /// One optimizer step on a random batch from `clips`.
    pub fn train_step(&mut self, clips: &[Clip], dump_dir: Option<&Path>) -> Result<StepRecord> {
        if clips.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, self.step));
        let batch = self.sample_batch(clips, &mut rng)?;
        let lr = self.lr();
        let g = Graph::with_seed(Mode::Train, mix_seed(self.cfg.seed ^ 0xD0, self.step));
        let forward = self.forward_loss(&g, &batch);
        let (loss, report) = match forward {
            Ok(v) => v,
            Err(Error::SingularConfiguration(detail)) => {
                return Err(self.diverged(&batch, None, format!("degenerate homography ({detail})"), dump_dir));
            }
            Err(e) => return Err(e),
        };
        let value = g.item(loss) as f64;
        if !value.is_finite() {
            return Err(self.diverged(&batch, Some(&report), format!("loss = {value}"), dump_dir));
        }
        let mut grads = g.backward(loss);
        if !grads.all_finite() {
            return Err(self.diverged(&batch, Some(&report), "non-finite gradients".into(), dump_dir));
        }
        let grad_norm = grads.clip_global_norm(self.cfg.grad_clip);
        let updates = g.take_buffer_updates();
        drop(g);
        self.opt.step(self.model.store_mut(), &grads, lr);
        self.model.store_mut().apply_buffer_updates(updates);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            lr,
            loss: value,
            grad_norm,
            terms: report.terms,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    fn diverged(&self, batch: &Batch, report: Option<&LossReport>, detail: String, dump_dir: Option<&Path>) -> Error {
        let mut detail = format!("{detail}; clips {:?} starting at frames {:?}", batch.clips, batch.starts);
        if let Some(dir) = dump_dir {
            match self.dump(batch, report, dir) {
                Ok(path) => detail.push_str(&format!("; batch dumped to {}", path.display())),
                Err(e) => detail.push_str(&format!("; dump failed: {e}")),
            }
        }
        Error::NonFiniteLoss { step: self.step, detail }
    }

    fn dump(&self, batch: &Batch, report: Option<&LossReport>, dir: &Path) -> Result<PathBuf> {
        let out = dir.join(format!("diverged_step_{:06}", self.step));
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let info = serde_json::json!({
            "step": self.step,
            "lr": self.lr(),
            "clips": batch.clips,
            "starts": batch.starts,
            "loss_terms": report.map(|r| &r.terms),
        });
        let info_path = out.join("batch.json");
        fs::write(&info_path, serde_json::to_string_pretty(&info).expect("json")).map_err(|e| Error::io(&info_path, e))?;
        for (b, s) in batch.samples.iter().enumerate() {
            for (t, frame) in s.degraded.iter().enumerate() {
                write_png(&out.join(format!("item{b}_frame{t}.png")), frame)?;
            }
        }
        Ok(out)
    }

    /// Trains until the schedule (or `max_steps`) is exhausted, logging,
    /// validating and checkpointing as configured.
    pub fn run(&mut self, train: &[Clip], val: &[Clip], opts: &RunOptions) -> Result<TrainReport> {
        let mut log: Option<File> = match &opts.log_path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                Some(OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?)
            }
            None => None,
        };
        let mut report = TrainReport::default();
        let end = match opts.max_steps {
            Some(m) => (self.step + m).min(self.cfg.steps),
            None => self.cfg.steps,
        };
        let run_start = Instant::now();
        while self.step < end {
            let rec = self.train_step(train, opts.dump_dir.as_deref())?;
            report.losses.push(rec.loss);
            if let (Some(f), Some(p)) = (log.as_mut(), &opts.log_path) {
                let every = self.cfg.log_every.max(1);
                if rec.step % every == 0 || rec.step == end {
                    let mut v = serde_json::to_value(&rec).expect("record serializes");
                    v["elapsed"] = serde_json::json!(run_start.elapsed().as_secs_f64());
                    writeln!(f, "{v}").map_err(|e| Error::io(p, e))?;
                }
            }
            if self.cfg.val_every > 0 && self.step % self.cfg.val_every == 0 && !val.is_empty() {
                let ev = evaluate(&self.model, val)?;
                if let (Some(f), Some(p)) = (log.as_mut(), &opts.log_path) {
                    let line = serde_json::json!({"step": self.step, "validation": ev.report});
                    writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
                }
                report.validations.push((self.step, ev));
            }
            if let Some(p) = &opts.checkpoint_path {
                if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                    self.checkpoint().save(p)?;
                }
            }
        }
        if let Some(p) = &opts.checkpoint_path {
            self.checkpoint().save(p)?;
            report.checkpoint = Some(p.clone());
        }
        Ok(report)
    }
}

fn merge_report(into: &mut LossReport, r: &LossReport, weight: f64) {
    into.total += weight * r.total;
    for t in &r.terms {
        match into.terms.iter_mut().find(|x| x.task == t.task && x.scale == t.scale) {
            Some(x) => x.value += weight * t.value,
            None => into.terms.push(LossTerm {
                value: weight * t.value,
                ..*t
            }),
        }
    }
}
