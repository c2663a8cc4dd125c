use std::time::Instant;

use mostnet_autograd::{Graph, Mode, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::blocks::{
    corner_cascade, ChannelAttentionFuse, DecoderStage, EncoderStage, MotionGatedAttention, OffsetRegressor,
    RestorationHead, SegmentationHead,
};
use crate::geometry::{scale_homography, warp_grid, CornerOffsets, FrameSize, Homography};
use crate::{Error, Result};

#[derive(Clone, Debug)]
struct ScaleHeads {
    restore: RestorationHead,
    segment: Option<SegmentationHead>,
    attention: MotionGatedAttention,
    regressor: OffsetRegressor,
}

/// The full network: parameters plus layer layout.
#[derive(Clone)]
pub struct MostNet<T: Scalar> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoders: Vec<EncoderStage>,
    fuse: Vec<ChannelAttentionFuse>,
    decoders: Vec<DecoderStage>,
    heads: Vec<Option<ScaleHeads>>,
}

/// Per-stream memory carried between frames. Index `s - 1` holds scale `s`.
#[derive(Clone, Debug)]
pub struct RecurrentState<T: Scalar> {
    f_prev: Vec<Tensor<T>>,
    h_prev: Vec<Option<Tensor<T>>>,
    initialized: bool,
}

impl<T: Scalar> Default for RecurrentState<T> {
    fn default() -> Self {
        Self::uninitialized()
    }
}

impl<T: Scalar> RecurrentState<T> {
    pub fn uninitialized() -> Self {
        Self {
            f_prev: Vec::new(),
            h_prev: Vec::new(),
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Previous encoder features at scale `s`.
    pub fn features(&self, s: usize) -> Option<&Tensor<T>> {
        self.f_prev.get(s - 1)
    }

    /// Previous motion features at scale `s` (absent where no head runs).
    pub fn motion_features(&self, s: usize) -> Option<&Tensor<T>> {
        self.h_prev.get(s - 1).and_then(|h| h.as_ref())
    }
}

/// Recurrent state expressed as graph nodes, for unrolled training.
#[derive(Clone, Debug)]
pub struct GraphState {
    pub f: Vec<Var>,
    pub h: Vec<Option<Var>>,
}

impl GraphState {
    pub fn detached<T: Scalar>(&self, g: &Graph<T>) -> GraphState {
        GraphState {
            f: self.f.iter().map(|&v| g.detach(v)).collect(),
            h: self.h.iter().map(|h| h.map(|v| g.detach(v))).collect(),
        }
    }
}

/// Task outputs at one scale as graph nodes.
#[derive(Clone, Debug)]
pub struct ScaleNodes {
    pub scale: usize,
    pub restored: Var,
    pub mask: Option<Var>,
    /// Cumulative corner offsets `[N, 8]` in scale-s pixels.
    pub offsets: Var,
    /// Residual offsets predicted at this scale.
    pub residual: Var,
    pub homographies: Vec<Homography>,
    pub priors: Vec<Homography>,
}

#[derive(Clone, Debug)]
pub struct StepNodes {
    /// Index `s - 1`; `None` where no outputs are emitted.
    pub scales: Vec<Option<ScaleNodes>>,
    pub state: GraphState,
}

impl StepNodes {
    pub fn at(&self, s: usize) -> Option<&ScaleNodes> {
        self.scales.get(s - 1).and_then(|o| o.as_ref())
    }
}

/// Task outputs at one scale.
#[derive(Clone, Debug)]
pub struct ScaleOutput<T: Scalar> {
    pub restored: Tensor<T>,
    pub mask: Option<Tensor<T>>,
    /// One per batch item, mapping frame t-1 to frame t in scale-s pixels.
    pub homographies: Vec<Homography>,
    /// Cumulative corner offsets matching `homographies`.
    pub offsets: Vec<CornerOffsets>,
    /// Cascade priors used at this scale.
    pub priors: Vec<Homography>,
}

#[derive(Clone, Debug)]
pub struct PyramidOutputs<T: Scalar> {
    pub scales: Vec<Option<ScaleOutput<T>>>,
}

impl<T: Scalar> PyramidOutputs<T> {
    pub fn at(&self, s: usize) -> Option<&ScaleOutput<T>> {
        self.scales.get(s - 1).and_then(|o| o.as_ref())
    }
}

/// Outputs of streaming a whole clip.
#[derive(Clone, Debug)]
pub struct VideoRun<T: Scalar> {
    pub outputs: Vec<PyramidOutputs<T>>,
    pub fps: f64,
}

fn as_batch<T: Scalar>(frame: &Tensor<T>) -> Tensor<T> {
    if frame.ndim() == 3 {
        let s = frame.shape();
        frame.clone().reshape(&[1, s[0], s[1], s[2]])
    } else {
        frame.clone()
    }
}

impl<T: Scalar> MostNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let widths = config.encoder_widths();
        let ablation = config.ablation;
        let mut encoders = Vec::new();
        let mut fuse = Vec::new();
        let mut decoders = Vec::new();
        for s in 1..=3 {
            let stride = if s == 1 { 1 } else { 2 };
            encoders.push(EncoderStage::new(&mut store, &format!("encoder.s{s}"), config.encoder_block(s), stride, &mut rng));
        }
        for s in 1..=3 {
            fuse.push(ChannelAttentionFuse::new(&mut store, &format!("fuse.s{s}"), widths[s - 1], &mut rng));
        }
        for s in 1..=3 {
            decoders.push(DecoderStage::new(&mut store, &format!("decoder.s{s}"), s, widths, &mut rng));
        }
        let output_scales = config.output_scales();
        let mut heads = Vec::new();
        for s in 1..=3 {
            if !output_scales.contains(&s) {
                heads.push(None);
                continue;
            }
            let name = format!("heads.s{s}");
            let backbone = decoders[s - 1].out_channels();
            let restore = RestorationHead::new(&mut store, &format!("{name}.restore"), backbone, &mut rng);
            let with_prior = s < 3 && ablation.multi_output();
            let segment = ablation
                .has_segmentation()
                .then(|| SegmentationHead::new(&mut store, &format!("{name}.segment"), backbone, with_prior, &mut rng));
            let attention = MotionGatedAttention::new(
                &mut store,
                &format!("{name}.attention"),
                widths[s - 1],
                ablation != super::Ablation::Ne,
                &mut rng,
            );
            let h_ch = attention.out_channels(widths[s - 1]);
            let regressor = OffsetRegressor::new(
                &mut store,
                &format!("{name}.regressor"),
                2 * h_ch,
                &config.regressor_widths_at(s),
                &mut rng,
            );
            heads.push(Some(ScaleHeads {
                restore,
                segment,
                attention,
                regressor,
            }));
        }
        Ok(Self {
            config,
            store,
            encoders,
            fuse,
            decoders,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// Learnable parameter counts grouped by top-level module.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for group in ["encoder", "fuse", "decoder"] {
            out.push((group.to_string(), self.store.num_trainable_with_prefix(&format!("{group}."))));
        }
        for s in 1..=3 {
            for part in ["restore", "segment", "attention", "regressor"] {
                let n = self.store.num_trainable_with_prefix(&format!("heads.s{s}.{part}."));
                if n > 0 {
                    out.push((format!("heads.s{s}.{part}"), n));
                }
            }
        }
        out
    }

    fn frame_size(&self, x: &[usize]) -> Result<FrameSize> {
        if x.len() != 4 || x[1] != 3 {
            return Err(Error::ShapeMismatch(format!("expected [N, 3, H, W] frames, got {x:?}")));
        }
        self.config.check_input_size(x[2], x[3])?;
        Ok(FrameSize::new(x[3], x[2]))
    }

    /// One recurrent step on graph nodes. `prev = None` is a cold start: the
    /// frame is paired with itself. `fixed_priors` replaces the cascade priors
    /// at scales 1 and 2 (index `s - 1`), which is useful for gradient checks.
    pub fn step_graph(
        &self,
        g: &Graph<T>,
        frame: Var,
        prev: Option<&GraphState>,
        fixed_priors: Option<&[Vec<Homography>; 3]>,
    ) -> Result<StepNodes> {
        let shape = g.shape(frame);
        let size = self.frame_size(&shape)?;
        let n = shape[0];
        let store = &self.store;
        let multi = self.config.ablation.multi_output();
        let ablation = self.config.ablation;

        let mut f_t = Vec::with_capacity(3);
        let mut x = frame;
        for enc in &self.encoders {
            x = enc.forward(g, store, x);
            f_t.push(x);
        }
        let mut degraded = vec![frame];
        for s in 1..3 {
            degraded.push(g.avg_pool2(degraded[s - 1]));
        }
        let f_prev: Vec<Var> = match prev {
            Some(p) => p.f.clone(),
            None => f_t.clone(),
        };

        let mut scales: Vec<Option<ScaleNodes>> = vec![None, None, None];
        let mut h_t: Vec<Option<Var>> = vec![None, None, None];
        let mut g_lower: Option<Var> = None;
        let mut mask_lower: Option<Var> = None;
        let mut homs_lower: Option<Vec<Homography>> = None;
        for s in (1..=3).rev() {
            let size_s = size.at_scale(s);
            let priors: Vec<Homography> = match (fixed_priors, &homs_lower) {
                _ if s == 3 || !multi => vec![Homography::identity(); n],
                (Some(fp), _) => fp[s - 1].clone(),
                (None, Some(hs)) => hs.iter().map(|h| scale_homography(h, 2.0)).collect(),
                (None, None) => vec![Homography::identity(); n],
            };
            let is_identity = priors.iter().all(|h| *h == Homography::identity());
            let align = |v: Var| -> Var {
                if is_identity {
                    v
                } else {
                    g.sample(v, warp_grid(&priors, size_s))
                }
            };
            let prev_f = if ablation == super::Ablation::Nw { f_prev[s - 1] } else { align(f_prev[s - 1]) };
            let fused = self.fuse[s - 1].forward(g, store, f_t[s - 1], prev_f)?;
            let (backbone, up) = self.decoders[s - 1].forward(g, store, fused, g_lower)?;
            g_lower = up;

            let Some(heads) = &self.heads[s - 1] else { continue };
            let restored = heads.restore.forward(g, store, backbone, degraded[s - 1]);
            let mask = match &heads.segment {
                Some(seg) => {
                    let prior = mask_lower.filter(|_| s < 3).map(|m| g.upsample_bilinear2(m));
                    Some(seg.forward(g, store, backbone, prior)?)
                }
                None => None,
            };
            let h = heads.attention.forward(g, store, f_t[s - 1], mask, restored);
            let h_prev = match prev.and_then(|p| p.h[s - 1]) {
                Some(hp) => align(hp),
                None => h,
            };
            let residual = heads.regressor.forward(g, store, h, h_prev)?;
            let (offsets, homographies) = corner_cascade(g, residual, &priors, size_s)?;
            h_t[s - 1] = Some(h);
            mask_lower = mask;
            homs_lower = Some(homographies.clone());
            scales[s - 1] = Some(ScaleNodes {
                scale: s,
                restored,
                mask,
                offsets,
                residual,
                homographies,
                priors,
            });
        }
        Ok(StepNodes {
            scales,
            state: GraphState { f: f_t, h: h_t },
        })
    }

    fn eval_graph(&self) -> Graph<T> {
        let g = Graph::new(Mode::Eval);
        g.set_grad_enabled(false);
        g
    }

    fn state_from_nodes(g: &Graph<T>, state: &GraphState) -> RecurrentState<T> {
        RecurrentState {
            f_prev: state.f.iter().map(|&v| (*g.value(v)).clone()).collect(),
            h_prev: state.h.iter().map(|h| h.map(|v| (*g.value(v)).clone())).collect(),
            initialized: true,
        }
    }

    fn state_to_nodes(g: &Graph<T>, state: &RecurrentState<T>) -> GraphState {
        GraphState {
            f: state.f_prev.iter().map(|t| g.constant(t.clone())).collect(),
            h: state.h_prev.iter().map(|h| h.as_ref().map(|t| g.constant(t.clone()))).collect(),
        }
    }

    /// Cold start from the first frame (`[3, H, W]` or `[N, 3, H, W]`).
    pub fn init_state(&self, b0: &Tensor<T>) -> Result<RecurrentState<T>> {
        let g = self.eval_graph();
        let x = g.constant(as_batch(b0));
        let step = self.step_graph(&g, x, None, None)?;
        Ok(Self::state_from_nodes(&g, &step.state))
    }

    /// Evaluation-mode step on the next frame.
    pub fn forward(&self, state: &RecurrentState<T>, b_t: &Tensor<T>) -> Result<(PyramidOutputs<T>, RecurrentState<T>)> {
        if !state.initialized {
            return Err(Error::UninitializedState);
        }
        let g = self.eval_graph();
        let x = g.constant(as_batch(b_t));
        let prev = Self::state_to_nodes(&g, state);
        if prev.f.first().map(|&f| g.shape(f)[0]) != Some(g.shape(x)[0]) {
            return Err(Error::ShapeMismatch("state and frame batch sizes differ".into()));
        }
        let step = self.step_graph(&g, x, Some(&prev), None)?;
        Ok((Self::read_outputs(&g, &step), Self::state_from_nodes(&g, &step.state)))
    }

    pub fn read_outputs(g: &Graph<T>, step: &StepNodes) -> PyramidOutputs<T> {
        let scales = step
            .scales
            .iter()
            .map(|o| {
                o.as_ref().map(|o| {
                    let off = g.value(o.offsets);
                    ScaleOutput {
                        restored: (*g.value(o.restored)).clone(),
                        mask: o.mask.map(|m| (*g.value(m)).clone()),
                        homographies: o.homographies.clone(),
                        offsets: off
                            .data()
                            .chunks(8)
                            .map(|c| CornerOffsets::from_flat(&c.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
                            .collect(),
                        priors: o.priors.clone(),
                    }
                })
            })
            .collect();
        PyramidOutputs { scales }
    }

    /// Streams a clip: cold start on the first frame, then one step per frame.
    pub fn process_video(&self, frames: &[Tensor<T>]) -> Result<VideoRun<T>> {
        if frames.len() < 2 {
            return Err(Error::InvalidConfig("a video needs at least 2 frames".into()));
        }
        let start = Instant::now();
        let mut state = self.init_state(&frames[0])?;
        let mut outputs = Vec::with_capacity(frames.len() - 1);
        for frame in &frames[1..] {
            let (out, next) = self.forward(&state, frame)?;
            outputs.push(out);
            state = next;
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        Ok(VideoRun {
            outputs,
            fps: frames.len() as f64 / secs,
        })
    }
}

/// Learnable parameter count of a configuration.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    Ok(MostNet::<f32>::new(config.clone())?.num_parameters())
}
