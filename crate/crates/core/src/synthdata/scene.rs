use mostnet_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{compose, warp, Homography};
use crate::{Error, Result};

/// How the object of interest moves between consecutive frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    /// Independent per-frame similarity increments drawn uniformly.
    Random {
        max_rotation_deg: f64,
        max_translation: f64,
        max_scale_change: f64,
    },
    /// The same increment every frame (about the object center).
    Constant {
        rotation_deg: f64,
        translation: [f64; 2],
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// Object polygon radius range in pixels.
    pub object_radius: [f64; 2],
    pub object_vertices: usize,
    pub motion: MotionSpec,
    /// Background drift in pixels per frame.
    pub background_drift: f64,
    pub distractor: bool,
    /// Distractor speed in pixels per frame.
    pub distractor_speed: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 80,
            height: 64,
            n_frames: 8,
            object_radius: [14.0, 20.0],
            object_vertices: 7,
            motion: MotionSpec::Random {
                max_rotation_deg: 2.0,
                max_translation: 2.0,
                max_scale_change: 0.01,
            },
            background_drift: 0.5,
            distractor: true,
            distractor_speed: 1.5,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene: {m}")));
        if self.n_frames < 2 {
            return bad("n_frames must be at least 2");
        }
        if self.width < 8 || self.height < 8 {
            return bad("frame must be at least 8x8");
        }
        if self.object_vertices < 3 {
            return bad("object needs at least 3 vertices");
        }
        let [r0, r1] = self.object_radius;
        if !(r0 > 0.0 && r1 >= r0) {
            return bad("object_radius must satisfy 0 < min <= max");
        }
        if 2.0 * r1 + 4.0 > self.width.min(self.height) as f64 {
            return bad("object does not fit inside the frame");
        }
        match &self.motion {
            MotionSpec::Random {
                max_rotation_deg,
                max_translation,
                max_scale_change,
            } => {
                if *max_rotation_deg < 0.0 || *max_translation < 0.0 || !(0.0..0.5).contains(max_scale_change) {
                    return bad("random motion bounds must be nonnegative (scale change < 0.5)");
                }
            }
            MotionSpec::Constant { scale, .. } => {
                if *scale <= 0.0 {
                    return bad("constant motion scale must be positive");
                }
            }
        }
        if self.background_drift < 0.0 || self.distractor_speed < 0.0 {
            return bad("speeds must be nonnegative");
        }
        Ok(())
    }
}

/// A clean rendered clip with exact labels.
#[derive(Clone, Debug)]
pub struct CleanSequence {
    pub width: usize,
    pub height: usize,
    /// `[3, H, W]` frames in `[0, 1]`.
    pub frames: Vec<Tensor<f32>>,
    /// `[1, H, W]` binary object masks.
    pub masks: Vec<Tensor<f32>>,
    /// Object motion from frame `t - 1` to `t`, `t = 1..n`.
    pub homographies: Vec<Homography>,
    /// Object pose per frame: canonical object coordinates to pixels.
    pub poses: Vec<Homography>,
    /// Per-pixel displacement from frame `t - 1` to `t`, `[2, H, W]` (zero at `t = 0`).
    pub velocities: Vec<Tensor<f32>>,
}

/// Smooth color texture: a few oriented sinusoids around a base color.
#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Texture {
    fn random(rng: &mut impl Rng, base: [f64; 3], amp: f64, n: usize, freq: (f64, f64)) -> Self {
        let waves = (0..n)
            .map(|_| {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let f = rng.gen_range(freq.0..freq.1);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let gain = [
                    rng.gen_range(-amp..amp),
                    rng.gen_range(-amp..amp),
                    rng.gen_range(-amp..amp),
                ];
                ([f * a.cos(), f * a.sin()], phase, gain)
            })
            .collect();
        Self { base, waves }
    }

    fn at(&self, p: [f64; 2]) -> [f64; 3] {
        let mut c = self.base;
        for (k, phase, gain) in &self.waves {
            let s = (k[0] * p[0] + k[1] * p[1] + phase).sin();
            for i in 0..3 {
                c[i] += gain[i] * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

fn inside_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// Convex polygon around the origin with counter-clockwise (in y-down pixel
/// coordinates: positive cross product) vertex order.
fn random_polygon(rng: &mut impl Rng, n: usize, radius: [f64; 2]) -> Vec<[f64; 2]> {
    let mut angles: Vec<f64> = (0..n)
        .map(|i| (i as f64 + rng.gen_range(0.2..0.8)) / n as f64 * std::f64::consts::TAU)
        .collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    let r = rng.gen_range(radius[0]..=radius[1]);
    let pts: Vec<[f64; 2]> = angles.iter().map(|a| [r * a.cos(), r * a.sin()]).collect();
    // Points on one circle in angular order always form a convex polygon.
    pts
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn object_fits(pose: &Homography, poly: &[[f64; 2]], w: usize, h: usize) -> bool {
    poly.iter().all(|&v| {
        let p = pose.apply(v);
        p[0] >= 2.0 && p[1] >= 2.0 && p[0] <= w as f64 - 2.0 && p[1] <= h as f64 - 2.0
    })
}

/// Renders a clean clip. The object is drawn through its cumulative pose in
/// the first frame; later frames resample the previous frame along `H_t`
/// with the bilinear warp, so object pixels obey `x_t = H_t x_{t-1}` and the
/// clean clip has zero warping error under the mask.
pub fn render_clean_sequence(spec: &SceneSpec) -> Result<CleanSequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut obj_rng = stream(spec.seed, 1);
    let mut bg_rng = stream(spec.seed, 2);
    let mut dis_rng = stream(spec.seed, 3);

    let poly = random_polygon(&mut obj_rng, spec.object_vertices, spec.object_radius);
    let obj_tex = Texture::random(&mut obj_rng, [0.85, 0.8, 0.65], 0.12, 4, (0.15, 0.5));
    let bg_tex = Texture::random(&mut bg_rng, [0.6, 0.3, 0.3], 0.2, 5, (0.08, 0.35));
    let drift_angle = bg_rng.gen_range(0.0..std::f64::consts::TAU);
    let drift = [spec.background_drift * drift_angle.cos(), spec.background_drift * drift_angle.sin()];

    let center = [w as f64 / 2.0, h as f64 / 2.0];
    let mut poses = vec![Homography::similarity(1.0, obj_rng.gen_range(-0.5..0.5), [0.0, 0.0], center)];
    if !object_fits(&poses[0], &poly, w, h) {
        return Err(Error::ObjectLeavesFrame { frame: 0 });
    }
    let mut homographies = Vec::with_capacity(spec.n_frames - 1);
    for t in 1..spec.n_frames {
        let prev = poses[t - 1];
        let c = prev.apply([0.0, 0.0]);
        let mut step = None;
        let attempts = if matches!(spec.motion, MotionSpec::Random { .. }) { 100 } else { 1 };
        for _ in 0..attempts {
            let (rot, tr, sc) = match &spec.motion {
                MotionSpec::Random {
                    max_rotation_deg,
                    max_translation,
                    max_scale_change,
                } => {
                    let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
                    let rot = sym(&mut obj_rng, *max_rotation_deg);
                    let tx = sym(&mut obj_rng, *max_translation);
                    let ty = sym(&mut obj_rng, *max_translation);
                    let sc = 1.0 + sym(&mut obj_rng, *max_scale_change);
                    (rot, [tx, ty], sc)
                }
                MotionSpec::Constant {
                    rotation_deg,
                    translation,
                    scale,
                } => (*rotation_deg, *translation, *scale),
            };
            let d = Homography::similarity(sc, rot.to_radians(), c, tr);
            if object_fits(&compose(&d, &prev), &poly, w, h) {
                step = Some(d);
                break;
            }
        }
        let d = step.ok_or(Error::ObjectLeavesFrame { frame: t })?;
        poses.push(compose(&d, &prev));
        homographies.push(d);
    }

    // Distractor: a disc moving linearly, bouncing off the frame border.
    let dis_r = dis_rng.gen_range(5.0..8.0);
    // Start clear of the object so that the distractor is visible.
    let obj_r = poly.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    let mut dis_pos = [0.0; 2];
    for _ in 0..100 {
        dis_pos = [
            dis_rng.gen_range(dis_r..w as f64 - dis_r),
            dis_rng.gen_range(dis_r..h as f64 - dis_r),
        ];
        if (dis_pos[0] - center[0]).hypot(dis_pos[1] - center[1]) > obj_r + dis_r {
            break;
        }
    }
    let dis_angle = dis_rng.gen_range(0.0..std::f64::consts::TAU);
    let mut dis_vel = [spec.distractor_speed * dis_angle.cos(), spec.distractor_speed * dis_angle.sin()];
    let dis_color = [dis_rng.gen_range(0.1..0.4), dis_rng.gen_range(0.3..0.6), dis_rng.gen_range(0.5..0.9)];

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut masks = Vec::with_capacity(spec.n_frames);
    let mut velocities = Vec::with_capacity(spec.n_frames);
    let plane = w * h;
    for t in 0..spec.n_frames {
        let inv = poses[t].inverse();
        let carried = (t > 0).then(|| warp(&frames[t - 1], &homographies[t - 1]));
        let step_inv = (t > 0).then(|| homographies[t - 1].inverse());
        let shift = [drift[0] * t as f64, drift[1] * t as f64];
        let dis_step = if t > 0 { dis_vel } else { [0.0, 0.0] };
        let mut img = vec![0.0f32; 3 * plane];
        let mut mask = vec![0.0f32; plane];
        let mut vel = vec![0.0f32; 2 * plane];
        for y in 0..h {
            for x in 0..w {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let i = y * w + x;
                let q = inv.apply(p);
                let (color, v) = if inside_convex(&poly, q) {
                    mask[i] = 1.0;
                    let v = match &step_inv {
                        Some(si) => {
                            let o = si.apply(p);
                            [p[0] - o[0], p[1] - o[1]]
                        }
                        None => [0.0, 0.0],
                    };
                    let color = match &carried {
                        Some(c) => [0, 1, 2].map(|k| (c.data()[k * plane + i] as f64).clamp(0.0, 1.0)),
                        None => obj_tex.at(q),
                    };
                    (color, v)
                } else if spec.distractor
                    && (p[0] - dis_pos[0]).powi(2) + (p[1] - dis_pos[1]).powi(2) <= dis_r * dis_r
                {
                    (dis_color, dis_step)
                } else {
                    let v = if t > 0 { drift } else { [0.0, 0.0] };
                    (bg_tex.at([p[0] - shift[0], p[1] - shift[1]]), v)
                };
                for c in 0..3 {
                    img[c * plane + i] = color[c] as f32;
                }
                vel[i] = v[0] as f32;
                vel[plane + i] = v[1] as f32;
            }
        }
        frames.push(Tensor::new(&[3, h, w], img));
        masks.push(Tensor::new(&[1, h, w], mask));
        velocities.push(Tensor::new(&[2, h, w], vel));
        for k in 0..2 {
            let lim = if k == 0 { w as f64 } else { h as f64 };
            let next = dis_pos[k] + dis_vel[k];
            if next < dis_r || next > lim - dis_r {
                dis_vel[k] = -dis_vel[k];
            }
            dis_pos[k] += dis_vel[k];
        }
    }
    Ok(CleanSequence {
        width: w,
        height: h,
        frames,
        masks,
        homographies,
        poses,
        velocities,
    })
}
