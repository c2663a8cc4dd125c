use mostnet_autograd::{upsample_bilinear2, Tensor};
use serde::{Deserialize, Serialize};

use crate::geometry::{mace, offsets_from_homography, scale_homography, FrameSize, Homography};
use crate::metrics::{iou, psnr, ssim, temporal_warp_error, EvalReport};
use crate::mostnet::MostNet;
use crate::synthdata::{gt_labels_at_scale, Clip, FrameLabels};
use crate::{Error, Result};

/// Outputs of one scale over a clip, for output steps `t = 1..n`.
#[derive(Clone, Debug)]
pub struct ScaleTrack {
    /// `[3, H_s, W_s]` per step.
    pub restored: Vec<Tensor<f32>>,
    /// `[1, H_s, W_s]` per step.
    pub masks: Option<Vec<Tensor<f32>>>,
    /// Scale-s homographies `t-1 -> t`.
    pub homographies: Vec<Homography>,
}

/// Per-scale predictions for one clip (index `s - 1`).
#[derive(Clone, Debug)]
pub struct ClipPrediction {
    pub scales: Vec<Option<ScaleTrack>>,
}

/// One row of the metric-by-scale table; lower scales are upsampled to full
/// resolution before scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub scale: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mace_px: f64,
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub per_scale: Vec<ScaleRow>,
}

impl Evaluation {
    /// `scale,psnr_db,ssim,mace_px,iou` rows.
    pub fn per_scale_csv(&self) -> String {
        let mut out = String::from("scale,psnr_db,ssim,mace_px,iou\n");
        for r in &self.per_scale {
            let iou = r.iou.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.scale, r.psnr_db, r.ssim, r.mace_px, iou));
        }
        out
    }
}

fn squeeze(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    t.clone().reshape(&s[1..])
}

/// Streams the degraded frames of a clip through the model.
pub fn predict_clip(model: &MostNet<f32>, clip: &Clip) -> Result<(ClipPrediction, f64)> {
    let run = model.process_video(&clip.degraded)?;
    let mut scales = Vec::new();
    for s in 1..=3 {
        if run.outputs[0].at(s).is_none() {
            scales.push(None);
            continue;
        }
        let outs: Vec<_> = run.outputs.iter().map(|o| o.at(s).expect("scale present every step")).collect();
        scales.push(Some(ScaleTrack {
            restored: outs.iter().map(|o| squeeze(&o.restored)).collect(),
            masks: outs[0]
                .mask
                .is_some()
                .then(|| outs.iter().map(|o| squeeze(o.mask.as_ref().expect("mask present"))).collect()),
            homographies: outs.iter().map(|o| o.homographies[0]).collect(),
        }));
    }
    Ok((ClipPrediction { scales }, run.fps))
}

/// Ground truth presented as a prediction at every scale.
pub fn oracle_prediction(clip: &Clip) -> Result<ClipPrediction> {
    let mut per_scale: Vec<ScaleTrack> = (0..3)
        .map(|_| ScaleTrack {
            restored: Vec::new(),
            masks: Some(Vec::new()),
            homographies: Vec::new(),
        })
        .collect();
    for t in 1..clip.n_frames() {
        let labels = FrameLabels::new(
            Tensor::stack(&[clip.restored[t].clone()]),
            Tensor::stack(&[clip.masks[t].clone()]),
            vec![clip.homographies[t - 1]],
        )?;
        for (i, track) in per_scale.iter_mut().enumerate() {
            let l = gt_labels_at_scale(&labels, i + 1);
            track.restored.push(squeeze(&l.restored));
            track.masks.as_mut().expect("oracle masks").push(squeeze(&l.mask));
            track.homographies.push(l.homographies[0]);
        }
    }
    Ok(ClipPrediction {
        scales: per_scale.into_iter().map(Some).collect(),
    })
}

fn upsample_to_full(t: &Tensor<f32>, s: usize) -> Tensor<f32> {
    let mut x = Tensor::stack(&[t.clone()]);
    for _ in 1..s {
        x = upsample_bilinear2(&x);
    }
    squeeze(&x)
}

#[derive(Default)]
struct Acc {
    psnr: f64,
    ssim: f64,
    mace: f64,
    iou: f64,
    n: usize,
    has_iou: bool,
}

/// Scores predictions against clip ground truth. Summary metrics use scale 1;
/// the per-scale table upsamples each scale to full resolution.
pub fn score(clips: &[Clip], preds: &[ClipPrediction], fps: f64) -> Result<Evaluation> {
    if clips.len() != preds.len() || clips.is_empty() {
        return Err(Error::InvalidConfig("one prediction per clip is required".into()));
    }
    let mut acc: Vec<Acc> = (0..3).map(|_| Acc::default()).collect();
    let mut ew = 0.0;
    for (clip, pred) in clips.iter().zip(preds) {
        let (h, w) = clip.size();
        let size = FrameSize::new(w, h);
        let steps = clip.n_frames() - 1;
        for (i, track) in pred.scales.iter().enumerate() {
            let Some(track) = track else { continue };
            let s = i + 1;
            if track.restored.len() != steps || track.homographies.len() != steps {
                return Err(Error::ShapeMismatch(format!("clip {}: expected {steps} predictions", clip.name)));
            }
            let a = &mut acc[i];
            for k in 0..steps {
                let t = k + 1;
                let r = upsample_to_full(&track.restored[k], s);
                a.psnr += psnr(&r, &clip.restored[t])?;
                a.ssim += ssim(&r, &clip.restored[t])?;
                let hf = scale_homography(&track.homographies[k], (1usize << (s - 1)) as f64);
                a.mace += mace(
                    &offsets_from_homography(&hf, size),
                    &offsets_from_homography(&clip.homographies[t - 1], size),
                );
                if let Some(masks) = &track.masks {
                    a.iou += iou(&upsample_to_full(&masks[k], s), &clip.masks[t], 0.5)?;
                    a.has_iou = true;
                }
                a.n += 1;
            }
            if s == 1 {
                ew += temporal_warp_error(&track.restored, &clip.homographies[1..], Some(&clip.masks[1..]))?;
            }
        }
    }
    let rows: Vec<ScaleRow> = acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.n > 0)
        .map(|(i, a)| {
            let n = a.n as f64;
            ScaleRow {
                scale: i + 1,
                psnr_db: a.psnr / n,
                ssim: a.ssim / n,
                mace_px: a.mace / n,
                iou: a.has_iou.then(|| a.iou / n),
            }
        })
        .collect();
    let full = rows
        .iter()
        .find(|r| r.scale == 1)
        .ok_or_else(|| Error::InvalidConfig("predictions lack full-resolution outputs".into()))?;
    let report = EvalReport {
        psnr_db: full.psnr_db,
        ssim: full.ssim,
        mace_px: full.mace_px,
        iou: full.iou,
        ew: ew / clips.len() as f64,
        fps,
        n_frames: acc[0].n,
    };
    Ok(Evaluation { report, per_scale: rows })
}

/// Evaluation-mode metrics of a model on clips.
pub fn evaluate(model: &MostNet<f32>, clips: &[Clip]) -> Result<Evaluation> {
    let mut preds = Vec::with_capacity(clips.len());
    let mut frames = 0usize;
    let mut secs = 0.0;
    for clip in clips {
        let (p, fps) = predict_clip(model, clip)?;
        frames += clip.n_frames();
        secs += clip.n_frames() as f64 / fps;
        preds.push(p);
    }
    score(clips, &preds, frames as f64 / secs.max(1e-9))
}
