//! Restoration, segmentation and corner-error losses and the weighted
//! multi-scale objective.

use mostnet_autograd::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::geometry::{mace, CornerOffsets};
use crate::mostnet::{PyramidOutputs, StepNodes};
use crate::synthdata::FrameLabels;
use crate::{Error, Result};

pub const CHARBONNIER_EPS: f64 = 1e-3;
const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub restoration: f64,
    pub segmentation: f64,
    pub homography: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            restoration: 2e-4,
            segmentation: 5e-5,
            homography: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(restoration: f64, segmentation: f64, homography: f64) -> Self {
        Self {
            restoration,
            segmentation,
            homography,
        }
    }

    pub fn weight(&self, task: Task) -> f64 {
        match task {
            Task::Restoration => self.restoration,
            Task::Segmentation => self.segmentation,
            Task::Homography => self.homography,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.restoration, self.segmentation, self.homography];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(format!("loss weights must be nonnegative, got {w:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Restoration,
    Segmentation,
    Homography,
}

/// Unweighted loss of one task at one scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub task: Task,
    pub scale: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

impl LossReport {
    pub fn get(&self, task: Task, scale: usize) -> Option<f64> {
        self.terms
            .iter()
            .find(|t| t.task == task && t.scale == scale)
            .map(|t| t.value)
    }

    /// Unweighted sum over scales of one task.
    pub fn task_sum(&self, task: Task) -> f64 {
        self.terms.iter().filter(|t| t.task == task).map(|t| t.value).sum()
    }
}

fn check_shapes<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean of `sqrt((pred - gt)^2 + eps^2)`.
pub fn charbonnier<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, eps: f64) -> Result<f64> {
    check_shapes("charbonnier", pred, gt)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| {
            let d = p.as_f64() - g.as_f64();
            (d * d + eps * eps).sqrt()
        })
        .sum();
    Ok(s / pred.numel() as f64)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_shapes("bce", pred, gt)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| {
            let (p, g) = (clamp_prob(p.as_f64()), g.as_f64());
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / pred.numel() as f64)
}

/// Same value as [`mace`].
pub fn mace_loss(pred: &CornerOffsets, gt: &CornerOffsets) -> f64 {
    mace(pred, gt)
}

/// Graph version of [`charbonnier`]; `gt` is a constant target.
pub fn charbonnier_node<T: Scalar>(g: &Graph<T>, pred: Var, gt: &Tensor<T>, eps: f64) -> Result<Var> {
    let pv = g.value(pred);
    let value = charbonnier(&pv, gt, eps)?;
    let inv_n = 1.0 / pv.numel() as f64;
    let dir: Vec<T> = pv
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, q)| {
            let d = p.as_f64() - q.as_f64();
            T::of(d / (d * d + eps * eps).sqrt() * inv_n)
        })
        .collect();
    let shape = pv.shape().to_vec();
    Ok(g.push(
        Tensor::scalar(T::of(value)),
        &[pred],
        Box::new(move |go, _| {
            let s = go.data()[0];
            vec![Some(Tensor::new(&shape, dir.iter().map(|&d| d * s).collect()))]
        }),
    ))
}

/// Graph version of [`bce`]. Clamped predictions receive no gradient.
pub fn bce_node<T: Scalar>(g: &Graph<T>, pred: Var, gt: &Tensor<T>) -> Result<Var> {
    let pv = g.value(pred);
    let value = bce(&pv, gt)?;
    let inv_n = 1.0 / pv.numel() as f64;
    let dir: Vec<T> = pv
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, q)| {
            let (p, q) = (p.as_f64(), q.as_f64());
            if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                T::zero()
            } else {
                T::of((p - q) / (p * (1.0 - p)) * inv_n)
            }
        })
        .collect();
    let shape = pv.shape().to_vec();
    Ok(g.push(
        Tensor::scalar(T::of(value)),
        &[pred],
        Box::new(move |go, _| {
            let s = go.data()[0];
            vec![Some(Tensor::new(&shape, dir.iter().map(|&d| d * s).collect()))]
        }),
    ))
}

/// Batch mean of [`mace_loss`] for predicted offsets `[N, 8]`.
pub fn mace_node<T: Scalar>(g: &Graph<T>, pred: Var, gt: &[CornerOffsets]) -> Result<Var> {
    let pv = g.value(pred);
    let n = gt.len();
    if pv.shape() != [n, 8] {
        return Err(Error::ShapeMismatch(format!("offsets {:?} for {n} targets", pv.shape())));
    }
    let mut value = 0.0;
    let mut dir = vec![T::zero(); n * 8];
    let scale = 1.0 / (4 * n) as f64;
    for (b, t) in gt.iter().enumerate() {
        let p = CornerOffsets::from_flat(&pv.data()[b * 8..(b + 1) * 8].iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        value += mace_loss(&p, t) / n as f64;
        for i in 0..4 {
            let dx = p.0[i][0] - t.0[i][0];
            let dy = p.0[i][1] - t.0[i][1];
            let d = (dx * dx + dy * dy).sqrt();
            if d > 0.0 {
                dir[b * 8 + 2 * i] = T::of(dx / d * scale);
                dir[b * 8 + 2 * i + 1] = T::of(dy / d * scale);
            }
        }
    }
    Ok(g.push(
        Tensor::scalar(T::of(value)),
        &[pred],
        Box::new(move |go, _| {
            let s = go.data()[0];
            vec![Some(Tensor::new(&[n, 8], dir.iter().map(|&d| d * s).collect()))]
        }),
    ))
}

fn labels_at<'a, T: Scalar>(labels: &'a [Option<FrameLabels<T>>], s: usize) -> Result<&'a FrameLabels<T>> {
    labels.get(s - 1).and_then(|l| l.as_ref()).ok_or(Error::MissingLabels(s))
}

/// Weighted objective of one step on graph nodes. `labels[s - 1]` holds the
/// ground truth at scale `s`.
pub fn total_loss_graph<T: Scalar>(
    g: &Graph<T>,
    step: &StepNodes,
    labels: &[Option<FrameLabels<T>>],
    w: &LossWeights,
    eps: f64,
) -> Result<(Var, LossReport)> {
    let mut parts = Vec::new();
    let mut report = LossReport::default();
    for out in step.scales.iter().flatten() {
        let s = out.scale;
        let gt = labels_at(labels, s)?;
        let mut add = |task: Task, node: Var| {
            let value = g.value(node).data()[0].as_f64();
            report.terms.push(LossTerm { task, scale: s, value });
            report.total += w.weight(task) * value;
            parts.push(g.scale(node, T::of(w.weight(task))));
        };
        add(Task::Restoration, charbonnier_node(g, out.restored, &gt.restored, eps)?);
        if let Some(m) = out.mask {
            add(Task::Segmentation, bce_node(g, m, &gt.mask)?);
        }
        add(Task::Homography, mace_node(g, out.offsets, &gt.offsets)?);
    }
    let total = if parts.is_empty() {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        g.add_n(&parts)
    };
    Ok((total, report))
}

/// Weighted objective evaluated on plain outputs.
pub fn total_loss<T: Scalar>(
    outputs: &PyramidOutputs<T>,
    labels: &[Option<FrameLabels<T>>],
    w: &LossWeights,
    eps: f64,
) -> Result<LossReport> {
    let mut report = LossReport::default();
    for (i, out) in outputs.scales.iter().enumerate() {
        let Some(out) = out else { continue };
        let s = i + 1;
        let gt = labels_at(labels, s)?;
        let mut add = |task: Task, value: f64| {
            report.terms.push(LossTerm { task, scale: s, value });
            report.total += w.weight(task) * value;
        };
        add(Task::Restoration, charbonnier(&out.restored, &gt.restored, eps)?);
        if let Some(m) = &out.mask {
            add(Task::Segmentation, bce(m, &gt.mask)?);
        }
        if out.offsets.len() != gt.offsets.len() {
            return Err(Error::ShapeMismatch("offset batch sizes differ".into()));
        }
        let m = out
            .offsets
            .iter()
            .zip(&gt.offsets)
            .map(|(p, t)| mace_loss(p, t))
            .sum::<f64>()
            / out.offsets.len().max(1) as f64;
        add(Task::Homography, m);
    }
    Ok(report)
}
