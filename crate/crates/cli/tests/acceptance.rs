//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mostnet_autograd::gradcheck::{check_input_gradient, check_input_gradient_screened};
use mostnet_autograd::Tensor;
use mostnet_core::geometry::*;
use mostnet_core::losses::{bce_node, charbonnier_node, mace_node, total_loss_graph, LossWeights, CHARBONNIER_EPS};
use mostnet_core::metrics::{iou, psnr, ssim, temporal_warp_error, PSNR_CAP_DB};
use mostnet_core::mostnet::{count_parameters, Ablation, ModelConfig, MostNet};
use mostnet_core::synthdata::*;
use mostnet_core::training::{oracle_prediction, score};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took <= limit, format!("took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()))
}

fn mostnet(args: &[&str], workspace: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mostnet"))
        .args(args)
        .env("MOSTNET_WORKSPACE", workspace)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], workspace: &Path) -> Result<String, String> {
    let out = mostnet(args, workspace);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`mostnet {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| format!("missing numeric {key}"))
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

// Independent oracles.

fn project(m: &[[f64; 3]; 3], p: [f64; 2]) -> [f64; 2] {
    let x = m[0][0] * p[0] + m[0][1] * p[1] + m[0][2];
    let y = m[1][0] * p[0] + m[1][1] * p[1] + m[1][2];
    let z = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
    [x / z, y / z]
}

fn rows(h: &Homography) -> [[f64; 3]; 3] {
    let m = h.matrix();
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

fn psnr_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.numel() as f64;
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let (c, h, w, n) = (s[0], s[1], s[2], 11);
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    for ch in 0..c {
        let (mut acc, mut count) = (0.0, 0);
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let px = |i: usize, j: usize| ch * h * w + (y0 + i) * w + x0 + j;
                let wt = |i: usize, j: usize| g[i] * g[j] / norm;
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        ma += wt(i, j) * a.data()[px(i, j)];
                        mb += wt(i, j) * b.data()[px(i, j)];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let (da, db) = (a.data()[px(i, j)] - ma, b.data()[px(i, j)] - mb);
                        va += wt(i, j) * da * da;
                        vb += wt(i, j) * db * db;
                        cov += wt(i, j) * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        sum += acc / count as f64;
    }
    sum / c as f64
}

fn iou_oracle(p: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
    let (mut i, mut u) = (0.0, 0.0);
    for (a, b) in p.data().iter().zip(g.data()) {
        let (a, b) = (*a > 0.5, *b > 0.5);
        i += (a && b) as u8 as f64;
        u += (a || b) as u8 as f64;
    }
    if u == 0.0 {
        1.0
    } else {
        i / u
    }
}

fn ew_oracle(frames: &[Tensor<f64>], hs: &[Homography]) -> f64 {
    let s = frames[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let sample = |x: &Tensor<f64>, ch: usize, u: f64, v: f64| {
        let (x0, y0) = (u.floor() as i64, v.floor() as i64);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let at = |xx: i64, yy: i64| {
            if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                0.0
            } else {
                x.data()[ch * h * w + yy as usize * w + xx as usize]
            }
        };
        at(x0, y0) * (1.0 - fx) * (1.0 - fy) + at(x0 + 1, y0) * fx * (1.0 - fy) + at(x0, y0 + 1) * (1.0 - fx) * fy
            + at(x0 + 1, y0 + 1) * fx * fy
    };
    let mut total = 0.0;
    for t in 1..frames.len() {
        let inv = rows(&hs[t - 1].inverse());
        let (mut acc, mut count) = (0.0, 0);
        for y in 0..h {
            for x in 0..w {
                let p = project(&inv, [x as f64 + 0.5, y as f64 + 0.5]);
                let (u, v) = (p[0] - 0.5, p[1] - 0.5);
                if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
                    continue;
                }
                for ch in 0..c {
                    acc += (frames[t].data()[ch * h * w + y * w + x] - sample(&frames[t - 1], ch, u, v)).abs();
                    count += 1;
                }
            }
        }
        total += acc / count as f64;
    }
    total / (frames.len() - 1) as f64
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

fn binary(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_bool(0.5) as u8 as f64)
}

// Criteria.

fn geometry_oracles() -> Outcome {
    let started = Instant::now();
    let size = FrameSize::new(80, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random_offsets = |amp: f64| {
        let mut d = [[0.0; 2]; 4];
        for c in &mut d {
            *c = [rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)];
        }
        CornerOffsets(d)
    };
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (oa, ob) = (random_offsets(10.0), random_offsets(10.0));
        let (a, b) = (dlt_solve(&oa, size).map_err(|e| e.to_string())?, dlt_solve(&ob, size).map_err(|e| e.to_string())?);
        // Round trip: corners land on the displaced corners and back.
        for (c, q) in size.corners().iter().zip(oa.displaced(size)) {
            let p = project(&rows(&a), *c);
            worst = worst.max((p[0] - q[0]).hypot(p[1] - q[1]));
        }
        let back = offsets_from_homography(&a, size);
        for (x, y) in back.0.iter().zip(&oa.0) {
            worst = worst.max((x[0] - y[0]).hypot(x[1] - y[1]));
        }
        // Composition maps points sequentially.
        let ab = compose(&a, &b);
        for c in size.corners() {
            let seq = project(&rows(&a), project(&rows(&b), c));
            let direct = project(&rows(&ab), c);
            worst = worst.max((seq[0] - direct[0]).hypot(seq[1] - direct[1]));
        }
        // Scaling conjugates the pixel grid.
        let half = scale_homography(&a, 0.5);
        for c in size.corners() {
            let p = project(&rows(&a), c);
            let q = project(&rows(&half), [c[0] * 0.5, c[1] * 0.5]);
            worst = worst.max((p[0] * 0.5 - q[0]).hypot(p[1] * 0.5 - q[1]));
        }
    }
    ensure(worst < 1e-6, format!("DLT/composition/scaling error {worst:e} px"))?;

    let (w, h) = (80, 64);
    let mut ransac_worst: f64 = 0.0;
    for (k, (rot, tx, ty)) in [(5.0f64, 2.5, -1.5), (-3.0, -1.0, 2.0), (8.0, 0.5, 0.5)].into_iter().enumerate() {
        let truth = Homography::similarity(1.0, rot.to_radians(), [40.0, 32.0], [tx, ty]);
        let mut field = MotionField::from_homography(&truth, w, h);
        let mask: Vec<bool> = (0..w * h).map(|i| (10..54).contains(&(i / w)) && (15..65).contains(&(i % w))).collect();
        let masked: Vec<usize> = (0..w * h).filter(|&i| mask[i]).collect();
        let mut r = ChaCha8Rng::seed_from_u64(9 + k as u64);
        for idx in rand::seq::index::sample(&mut r, masked.len(), masked.len() / 5).iter() {
            let (d, a) = (r.gen_range(10.0..40.0), r.gen_range(0.0..std::f64::consts::TAU));
            field.flow[masked[idx]][0] += d * a.cos();
            field.flow[masked[idx]][1] += d * a.sin();
        }
        let fit = ransac_partial_affine(&field, &mask, &RansacConfig::default()).map_err(|e| e.to_string())?;
        ransac_worst = ransac_worst.max(fit.homography.max_abs_diff(&truth));
    }
    ensure(ransac_worst < 1e-3, format!("RANSAC error {ransac_worst:e}"))?;
    within(started, Duration::from_secs(30))?;
    Ok(format!("max law error {worst:.1e} px, RANSAC error {ransac_worst:.1e}"))
}

fn differentiability() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut report = Vec::new();

    let h = Homography::similarity(1.03, 0.05, [5.0, 4.0], [0.37, -0.21]);
    let x = Tensor::<f64>::from_fn(&[1, 2, 8, 10], |_| rng.gen());
    let grid = warp_grid(&[h], FrameSize::new(10, 8));
    let weights = Tensor::<f64>::from_fn(&[1, 2, 8, 10], |i| ((i * 13 % 7) as f64) - 3.0);
    let c = check_input_gradient(&x, 1e-3, None, 1e-6, |g, v| {
        let y = g.sample(v, grid.clone());
        g.sum_all(g.mul(y, g.constant(weights.clone())))
    });
    report.push(("warp", c));

    let gt = uniform(&[1, 3, 5, 6], 0.0, 1.0, 2);
    let pred = uniform(&[1, 3, 5, 6], 0.0, 1.0, 3);
    report.push((
        "charbonnier",
        check_input_gradient(&pred, 1e-3, None, 1e-8, |g, x| charbonnier_node(g, x, &gt, CHARBONNIER_EPS).unwrap()),
    ));

    let pred = uniform(&[1, 1, 6, 7], 0.05, 0.95, 7);
    let gt = binary(&[1, 1, 6, 7], 8);
    report.push(("bce", check_input_gradient(&pred, 1e-3, None, 1e-8, |g, x| bce_node(g, x, &gt).unwrap())));

    let gt = vec![
        CornerOffsets::from_flat(&[1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.0, 1.0]),
        CornerOffsets::from_flat(&[0.0; 8]),
    ];
    let pred = uniform(&[2, 8], -3.0, 3.0, 9);
    report.push(("mace", check_input_gradient(&pred, 1e-3, None, 1e-8, |g, x| mace_node(g, x, &gt).unwrap())));

    // Full forward and total loss on a tiny frame. Elements whose central
    // differences change between step and step/4 straddle a ReLU or
    // max-pool kink and are left out.
    let (hh, ww) = (8, 12);
    let mut config = ModelConfig::desk().with_input_size(hh, ww);
    config.regressor_widths = vec![4; 5];
    config.enc_res_blocks = 1;
    let mut model = MostNet::<f64>::new(config).map_err(|e| e.to_string())?;
    model.store_mut().randomize(&mut ChaCha8Rng::seed_from_u64(50), 0.1);
    let ids: Vec<_> = model.store().ids().filter(|&id| model.store().name(id).contains(".restore.")).collect();
    for id in ids {
        let t = model.store().value(id).map(|v| v * 0.05);
        model.store_mut().set(id, t);
    }
    let size = FrameSize::new(ww, hh);
    let shift = |s: usize| {
        let k = 0.5f64.powi(s as i32 - 1);
        let c = size.at_scale(s);
        vec![Homography::similarity(1.01, 0.03, [c.width as f64 / 2.0, c.height as f64 / 2.0], [0.3 * k, -0.2 * k])]
    };
    let priors = [shift(1), shift(2), vec![Homography::identity()]];
    let frame = |seed| uniform(&[1, 3, hh, ww], 0.1, 0.9, seed);
    let mask = Tensor::from_fn(&[1, 1, hh, ww], |i| ((i % ww) >= 4 && (i % ww) < 9) as u8 as f64);
    let gt_h = Homography::similarity(1.0, 0.02, [6.0, 4.0], [0.5, 0.25]);
    let labels = label_pyramid(&FrameLabels::new(frame(51), mask, vec![gt_h]).map_err(|e| e.to_string())?);
    let weights = LossWeights::new(1.0, 1.0, 1.0);
    let (b0, b1) = (frame(52), frame(53));
    let full = check_input_gradient_screened(&b1, 1e-3, None, 1e-4, 1e-4, |g, x| {
        let cold = model.step_graph(g, g.constant(b0.clone()), None, Some(&priors)).unwrap();
        let step = model.step_graph(g, x, Some(&cold.state), Some(&priors)).unwrap();
        total_loss_graph(g, &step, &labels, &weights, CHARBONNIER_EPS).unwrap().0
    });
    ensure(full.skipped * 5 <= full.checked, format!("full model: too many kinked elements {full:?}"))?;
    report.push(("full model", full));

    for (name, c) in &report {
        ensure(c.max_rel_err < 1e-3, format!("{name}: rel err {:.2e}", c.max_rel_err))?;
    }
    within(started, Duration::from_secs(120))?;
    Ok(report
        .iter()
        .map(|(n, c)| format!("{n} {:.1e}", c.max_rel_err))
        .collect::<Vec<_>>()
        .join(", "))
}

fn structural() -> Outcome {
    let started = Instant::now();
    let err = |e: mostnet_core::Error| e.to_string();
    let full = count_parameters(&ModelConfig::paper()).map_err(err)?;
    let small = count_parameters(&ModelConfig::paper().with_input_size(64, 80)).map_err(err)?;
    let nmo = count_parameters(&ModelConfig::paper().with_ablation(Ablation::Nmo)).map_err(err)?;
    ensure((full as f64 - 9.8e6).abs() <= 0.15 * 9.8e6, format!("FULL has {full} parameters"))?;
    ensure(full == small, format!("count depends on input size: {full} vs {small}"))?;
    ensure(nmo < full, format!("NMO {nmo} >= FULL {full}"))?;
    within(started, Duration::from_secs(10))?;
    Ok(format!("FULL {:.3}M, NMO {:.3}M", full as f64 / 1e6, nmo as f64 / 1e6))
}

fn metric_oracles() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let a = uniform(&[3, 32, 32], 0.0, 1.0, 100 + seed);
        let b = uniform(&[3, 32, 32], 0.0, 1.0, 200 + seed);
        worst = worst.max((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs());
        worst = worst.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
        let (p, g) = (uniform(&[1, 32, 32], 0.0, 1.0, 300 + seed), binary(&[1, 32, 32], 400 + seed));
        worst = worst.max((iou(&p, &g, 0.5).unwrap() - iou_oracle(&p, &g)).abs());
        let frames: Vec<Tensor<f64>> = (0..4).map(|t| uniform(&[3, 32, 32], 0.0, 1.0, 500 + 10 * seed + t)).collect();
        let hs = vec![
            Homography::similarity(1.02, 0.05, [16.0, 16.0], [0.7, -0.4]),
            Homography::translation(-1.3, 0.6),
            Homography::similarity(0.97, -0.03, [16.0, 16.0], [0.2, 0.9]),
        ];
        worst = worst.max((temporal_warp_error(&frames, &hs, None).unwrap() - ew_oracle(&frames, &hs)).abs());
    }
    ensure(worst < 1e-6, format!("oracle mismatch {worst:e}"))?;

    let clips: Vec<Clip> = generate_clips(&SynthConfig::default(), 3)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let preds = clips.iter().map(|c| oracle_prediction(c).unwrap()).collect::<Vec<_>>();
    let r = score(&clips, &preds, 1.0).map_err(|e| e.to_string())?.report;
    ensure(r.psnr_db == PSNR_CAP_DB, format!("GT PSNR {}", r.psnr_db))?;
    ensure(r.iou == Some(1.0), format!("GT IoU {:?}", r.iou))?;
    ensure(r.ew < 1e-6, format!("GT E(W) {:e}", r.ew))?;
    within(started, Duration::from_secs(60))?;
    Ok(format!("max oracle diff {worst:.1e}; GT: PSNR {} IoU 1 E(W) {:.1e}", r.psnr_db, r.ew))
}

fn synthetic_invariants(ws: &Path) -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut ew_worst: f64 = 0.0;
    for seed in [21, 22, 23] {
        let seq = render_clean_sequence(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let (w, h) = (seq.width, seq.height);
        for t in 1..seq.frames.len() {
            let ht = seq.homographies[t - 1];
            let (inv_t, inv_prev, back) = (seq.poses[t].inverse(), seq.poses[t - 1].inverse(), ht.inverse());
            for i in (0..w * h).filter(|&i| seq.masks[t].data()[i] == 1.0) {
                let p = [(i % w) as f64 + 0.5, (i / w) as f64 + 0.5];
                let (a, b) = (inv_t.apply(p), inv_prev.apply(back.apply(p)));
                worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        ew_worst = ew_worst.max(temporal_warp_error(&seq.frames, &seq.homographies, Some(&seq.masks)).unwrap());
        let b = degrade(&seq, &DegradationSpec::identity(), 1).map_err(|e| e.to_string())?;
        ensure(b == seq.frames, "identity degradation changed the frames")?;
    }
    ensure(worst < 1e-9, format!("pose consistency residual {worst:e}"))?;
    ensure(ew_worst < 1e-6, format!("masked warping error of clean clips {ew_worst:e}"))?;

    for dir in ["c5a", "c5b"] {
        run_ok(&["synth", "--seed", "5", "--out", dir], ws)?;
    }
    let (a, b) = (tree(&ws.join("c5a")), tree(&ws.join("c5b")));
    ensure(!a.is_empty() && a == b, "same seed produced different dataset trees")?;
    within(started, Duration::from_secs(120))?;
    Ok(format!("motion residual {worst:.1e}, masked E(W) {ew_worst:.1e}, {} identical files", a.len()))
}

fn overfit(ws: &Path) -> (Outcome, Outcome) {
    let started = Instant::now();
    let main = (|| -> Result<(String, Value, String), String> {
        run_ok(&["synth", "--seed", "7", "--out", "c6/data"], ws)?;
        let cfg = ws.join("c6/overfit.toml");
        fs::write(&cfg, "[train.augment]\nflip_h = 0.0\nflip_v = 0.0\nchannel_perturb = 0.0\ncolor_jitter = 0.0\n")
            .map_err(|e| e.to_string())?;
        run_ok(&["train", "--config", "c6/overfit.toml", "--data", "c6/data", "--out", "c6/run", "--seed", "0"], ws)?;
        let summary = read_json(&ws.join("c6/run/train_summary.json"))?;
        let steps = num(&summary, "steps_run")?;
        let (first, last) = (num(&summary, "first10_mean")?, num(&summary, "last10_mean")?);
        let drop = 1.0 - last / first;
        run_ok(
            &[
                "eval", "--data", "c6/data", "--split", "train", "--checkpoint", "c6/run/checkpoint.safetensors",
                "--out", "c6/eval",
            ],
            ws,
        )?;
        let report = read_json(&ws.join("c6/eval/report.json"))?;
        let (p, m, i) = (num(&report, "psnr_db")?, num(&report, "mace_px")?, num(&report, "iou")?);
        let detail = format!(
            "{steps} steps, loss {first:.3} -> {last:.3} ({:.1}% drop), PSNR {p:.2} dB, MACE {m:.3} px, IoU {i:.3}, {:.0}s",
            100.0 * drop,
            started.elapsed().as_secs_f64()
        );
        ensure(steps <= 1000.0, format!("{steps} steps"))?;
        ensure(drop >= 0.8, format!("loss drop below 80%: {detail}"))?;
        ensure(p >= 28.0 && m <= 2.0 && i >= 0.85, format!("metrics below target: {detail}"))?;
        within(started, Duration::from_secs(15 * 60)).map_err(|e| format!("{e}: {detail}"))?;
        let csv = fs::read_to_string(ws.join("c6/eval/per_scale.csv")).map_err(|e| e.to_string())?;
        Ok((detail, report, csv))
    })();
    match main {
        Err(e) => (Err(e.clone()), Err(format!("overfit run failed: {e}"))),
        Ok((detail, _, csv)) => {
            let trend = (|| {
                let lines: Vec<&str> = csv.lines().collect();
                ensure(lines.len() == 4, format!("per-scale CSV has {} rows", lines.len().saturating_sub(1)))?;
                let psnr_at = |s: usize| -> Result<f64, String> {
                    lines[s].split(',').nth(1).and_then(|v| v.parse().ok()).ok_or_else(|| "bad CSV row".to_string())
                };
                let (p1, p2, p3) = (psnr_at(1)?, psnr_at(2)?, psnr_at(3)?);
                ensure(p1 >= p3 - 0.5, format!("s=1 PSNR {p1:.2} < s=3 PSNR {p3:.2} - 0.5"))?;
                Ok(format!("PSNR by scale: s1 {p1:.2}, s2 {p2:.2}, s3 {p3:.2} dB"))
            })();
            (Ok(detail), trend)
        }
    }
}

fn ablation_harness(ws: &Path) -> Outcome {
    let started = Instant::now();
    if !ws.join("c6/data").exists() {
        run_ok(&["synth", "--seed", "7", "--out", "c6/data"], ws)?;
    }
    run_ok(&["ablate", "--data", "c6/data", "--steps", "50", "--out", "c8"], ws)?;
    let rows = read_json(&ws.join("c8/ablation.json"))?;
    let rows = rows.as_array().ok_or("ablation.json is not a list")?;
    ensure(rows.len() == 5, format!("{} rows", rows.len()))?;
    let params = |name: &str| {
        rows.iter()
            .find(|r| r["variant"] == name)
            .and_then(|r| r["params"].as_u64())
            .ok_or_else(|| format!("missing {name}"))
    };
    for r in rows {
        ensure(r["steps"].as_u64() == Some(50), format!("{} ran {} steps", r["variant"], r["steps"]))?;
        ensure(r["final_loss"].as_f64().is_some_and(f64::is_finite), format!("{} loss is not finite", r["variant"]))?;
    }
    let (full, nmo) = (params("FULL")?, params("NMO")?);
    ensure(nmo < full, format!("NMO {nmo} >= FULL {full}"))?;
    within(started, Duration::from_secs(600))?;
    Ok(format!("5 variants x 50 steps in {:.0}s, params FULL {full} > NMO {nmo}", started.elapsed().as_secs_f64()))
}

fn end_to_end(ws: &Path) -> Outcome {
    run_ok(&["synth", "--seed", "9", "--out", "c9/data"], ws)?;
    run_ok(&["train", "--data", "c9/data", "--out", "c9/run", "--steps", "200"], ws)?;
    let ck = "c9/run/checkpoint.safetensors";
    let mut reports = Vec::new();
    for out in ["c9/eval_a", "c9/eval_b"] {
        run_ok(&["eval", "--data", "c9/data", "--checkpoint", ck, "--out", out], ws)?;
        let mut r = read_json(&ws.join(out).join("report.json"))?;
        let keys: Vec<&str> = r.as_object().ok_or("report is not an object")?.keys().map(String::as_str).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        ensure(
            sorted == ["ew", "fps", "iou", "mace_px", "n_frames", "psnr_db", "ssim"],
            format!("report keys {keys:?}"),
        )?;
        r.as_object_mut().unwrap().remove("fps");
        let csv = fs::read(ws.join(out).join("per_scale.csv")).map_err(|e| e.to_string())?;
        reports.push((serde_json::to_string(&r).unwrap(), csv));
    }
    ensure(reports[0] == reports[1], "eval reruns differ")?;
    ensure(String::from_utf8_lossy(&reports[0].1).lines().count() == 4, "per-scale CSV needs 3 rows")?;

    run_ok(&["eval", "--data", "c9/data", "--ground-truth", "--out", "c9/eval_gt"], ws)?;
    let gt = read_json(&ws.join("c9/eval_gt/report.json"))?;
    ensure(num(&gt, "psnr_db")? == PSNR_CAP_DB && num(&gt, "iou")? == 1.0, format!("GT report {gt}"))?;

    run_ok(&["infer", "--checkpoint", ck, "--input", "c9/data/test/clip_0000/B", "--out", "c9/infer"], ws)?;
    let n_in = fs::read_dir(ws.join("c9/data/test/clip_0000/B")).unwrap().count();
    let n_out = fs::read_dir(ws.join("c9/infer/R")).map_err(|e| e.to_string())?.count();
    let n_masks = fs::read_dir(ws.join("c9/infer/M")).map_err(|e| e.to_string())?.count();
    let h = read_homographies(&ws.join("c9/infer/H.txt")).map_err(|e| e.to_string())?;
    ensure(n_out == n_in - 1 && n_masks == n_in - 1 && h.len() == n_in - 1, format!("{n_in} frames gave {n_out} outputs"))?;
    let timing = read_json(&ws.join("c9/infer/timing.json"))?;
    ensure(num(&timing, "fps")? > 0.0, "non-positive FPS")?;
    Ok(format!(
        "synth -> train(200) -> eval x2 (identical) -> infer ({n_in} frames -> {n_out} outputs, {:.1} FPS)",
        num(&timing, "fps")?
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut emit = |n: usize, name: &'static str, o: Outcome| {
        let line = match &o {
            Ok(d) => format!("criterion {n} ({name}): PASS - {d}\n"),
            Err(e) => format!("criterion {n} ({name}): FAIL - {e}\n"),
        };
        // Written past the test harness capture so the lines always show.
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        results.push((n, name, o));
    };
    emit(1, "geometry oracles", guarded(geometry_oracles));
    emit(2, "differentiability", guarded(differentiability));
    emit(3, "parameter count", guarded(structural));
    emit(4, "metric oracles", guarded(metric_oracles));
    emit(5, "synthetic data invariants", guarded(|| synthetic_invariants(ws)));
    let (c6, c7) = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| overfit(ws)))
        .unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    emit(6, "overfit smoke test", c6);
    emit(7, "multi-scale trend", c7);
    emit(8, "ablation harness", guarded(|| ablation_harness(ws)));
    emit(9, "end-to-end CLI", guarded(|| end_to_end(ws)));
    let failed: Vec<_> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
