use mostnet_autograd::Tensor;
use mostnet_core::geometry::Homography;
use mostnet_core::metrics::*;
use mostnet_core::mostnet::{ModelConfig, MostNet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(0.0..1.0))
}

fn binary(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_bool(0.5) as u8 as f64)
}

fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let n = 11;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            win[i * n + j] = g[i] * g[j];
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = ch * h * w + (y0 + i) * w + x0 + j;
                        ma += win[i * n + j] * a.data()[k];
                        mb += win[i * n + j] * b.data()[k];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = ch * h * w + (y0 + i) * w + x0 + j;
                        let (da, db) = (a.data()[k] - ma, b.data()[k] - mb);
                        va += win[i * n + j] * da * da;
                        vb += win[i * n + j] * db * db;
                        cov += win[i * n + j] * da * db;
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

fn bilinear(x: &Tensor<f64>, ch: usize, u: f64, v: f64) -> f64 {
    let s = x.shape();
    let (h, w) = (s[1] as i64, s[2] as i64);
    let (x0, y0) = (u.floor() as i64, v.floor() as i64);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let at = |xx: i64, yy: i64| {
        if xx < 0 || yy < 0 || xx >= w || yy >= h {
            0.0
        } else {
            x.data()[ch * (h * w) as usize + (yy * w + xx) as usize]
        }
    };
    at(x0, y0) * (1.0 - fx) * (1.0 - fy) + at(x0 + 1, y0) * fx * (1.0 - fy) + at(x0, y0 + 1) * (1.0 - fx) * fy + at(x0 + 1, y0 + 1) * fx * fy
}

fn ew_oracle(frames: &[Tensor<f64>], hs: &[Homography]) -> f64 {
    let s = frames[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut total = 0.0;
    for t in 1..frames.len() {
        let inv = hs[t - 1].inverse();
        let (mut acc, mut count) = (0.0, 0);
        for y in 0..h {
            for x in 0..w {
                let p = inv.apply([x as f64 + 0.5, y as f64 + 0.5]);
                let (u, v) = (p[0] - 0.5, p[1] - 0.5);
                if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
                    continue;
                }
                for ch in 0..c {
                    acc += (frames[t].data()[ch * h * w + y * w + x] - bilinear(&frames[t - 1], ch, u, v)).abs();
                    count += 1;
                }
            }
        }
        total += acc / count as f64;
    }
    total / (frames.len() - 1) as f64
}

#[test]
fn psnr_examples_and_oracle() {
    let a = uniform(&[3, 32, 32], 1);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    let c = uniform(&[3, 32, 32], 2);
    let mse: f64 = a.data().iter().zip(c.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64;
    assert!((psnr(&a, &c).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-6);
    assert!((psnr(&a, &c).unwrap() - psnr(&c, &a).unwrap()).abs() < 1e-12);
    assert!(psnr(&a, &uniform(&[3, 32, 31], 3)).is_err());
}

#[test]
fn ssim_examples_and_oracle() {
    let a = uniform(&[3, 32, 32], 4);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let b = uniform(&[3, 32, 32], 5);
    let value = ssim(&a, &b).unwrap();
    assert!((value - ssim_oracle(&a, &b)).abs() < 1e-6);
    assert!((value - ssim(&b, &a).unwrap()).abs() < 1e-9);
    assert!((-1.0..=1.0).contains(&value));

    let (x, y) = (0.3, 0.7);
    let ca = Tensor::full(&[1, 16, 16], x);
    let cb = Tensor::full(&[1, 16, 16], y);
    let c1 = 1e-4;
    let expect = (2.0 * x * y + c1) / (x * x + y * y + c1);
    assert!((ssim(&ca, &cb).unwrap() - expect).abs() < 1e-9);

    assert!(ssim(&uniform(&[1, 10, 32], 6), &uniform(&[1, 10, 32], 7)).is_err());
}

#[test]
fn iou_examples_and_oracle() {
    let a = binary(&[1, 32, 32], 8);
    assert_eq!(iou(&a, &a, 0.5).unwrap(), 1.0);
    let left = Tensor::from_fn(&[1, 8, 8], |i| ((i % 8) < 4) as u8 as f64);
    let right = left.map(|v| 1.0 - v);
    assert_eq!(iou(&left, &right, 0.5).unwrap(), 0.0);
    let sq = |x0: usize| Tensor::from_fn(&[1, 8, 8], move |i| ((i % 8) >= x0 && (i % 8) < x0 + 4 && i / 8 < 4) as u8 as f64);
    assert!((iou(&sq(0), &sq(2), 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let zero = Tensor::<f64>::zeros(&[1, 4, 4]);
    assert_eq!(iou(&zero, &zero, 0.5).unwrap(), 1.0);

    let p = uniform(&[1, 32, 32], 9);
    let g = binary(&[1, 32, 32], 10);
    let (mut i, mut u) = (0.0, 0.0);
    for k in 0..p.numel() {
        let (pp, gg) = (p.data()[k] > 0.5, g.data()[k] == 1.0);
        i += (pp && gg) as u8 as f64;
        u += (pp || gg) as u8 as f64;
    }
    let value = iou(&p, &g, 0.5).unwrap();
    assert!((value - i / u).abs() < 1e-12);

    let mut perm: Vec<usize> = (0..p.numel()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let pp = Tensor::new(p.shape(), perm.iter().map(|&k| p.data()[k]).collect());
    let gp = Tensor::new(g.shape(), perm.iter().map(|&k| g.data()[k]).collect());
    assert_eq!(iou(&pp, &gp, 0.5).unwrap(), value);
}

#[test]
fn warp_error_examples_and_oracle() {
    let frame = uniform(&[3, 32, 32], 12);
    let still = vec![frame.clone(); 3];
    let id = vec![Homography::identity(); 2];
    assert_eq!(temporal_warp_error(&still, &id, None).unwrap(), 0.0);

    // Integer translation moves content exactly.
    let shift = Homography::translation(2.0, -1.0);
    let moved = Tensor::from_fn(&[3, 32, 32], |k| {
        let (c, y, x) = (k / 1024, (k / 32) % 32, k % 32);
        let (sx, sy) = (x as i64 - 2, y as i64 + 1);
        if sx < 0 || sy >= 32 {
            0.0
        } else {
            frame.data()[c * 1024 + sy as usize * 32 + sx as usize]
        }
    });
    let ew = temporal_warp_error(&[frame.clone(), moved], &[shift], None).unwrap();
    assert!(ew.abs() < 1e-12);

    let frames: Vec<Tensor<f64>> = (0..4).map(|t| uniform(&[3, 32, 32], 20 + t)).collect();
    let hs = vec![
        Homography::similarity(1.02, 0.05, [16.0, 16.0], [0.7, -0.4]),
        Homography::translation(-1.3, 0.6),
        Homography::similarity(0.97, -0.03, [16.0, 16.0], [0.2, 0.9]),
    ];
    let value = temporal_warp_error(&frames, &hs, None).unwrap();
    assert!((value - ew_oracle(&frames, &hs)).abs() < 1e-6);
    assert!(value >= 0.0);

    let ones: Vec<Tensor<f64>> = vec![Tensor::full(&[1, 32, 32], 1.0); 4];
    assert!((temporal_warp_error(&frames, &hs, Some(&ones)).unwrap() - value).abs() < 1e-12);
    assert!(temporal_warp_error(&frames, &hs[..2], None).is_err());
}

#[test]
fn fps_is_positive_and_falls_with_resolution() {
    let small = MostNet::<f32>::new(ModelConfig::desk().with_input_size(32, 40)).unwrap();
    let large = MostNet::<f32>::new(ModelConfig::desk().with_input_size(64, 80)).unwrap();
    let frames = |h, w| -> Vec<Tensor<f32>> { (0..12).map(|i| Tensor::full(&[1, 3, h, w], 0.1 * (i % 5) as f32)).collect() };
    let fs = measure_fps(&small, &frames(32, 40), 1).unwrap();
    let fl = measure_fps(&large, &frames(64, 80), 1).unwrap();
    let again = measure_fps(&small, &frames(32, 40), 1).unwrap();
    println!("fps 32x40: {fs:.1} / {again:.1}, 64x80: {fl:.1}");
    assert!(fs > 0.0 && fl > 0.0);
    assert!(fl <= fs);
    assert!(measure_fps(&small, &frames(32, 40)[..10], 1).is_err());
}

#[test]
fn report_serializes_flat() {
    let r = EvalReport {
        psnr_db: 30.0,
        ssim: 0.9,
        mace_px: 1.5,
        iou: Some(0.9),
        ew: 0.02,
        fps: 12.0,
        n_frames: 7,
    };
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in ["psnr_db", "ssim", "mace_px", "iou", "ew", "fps", "n_frames"] {
        assert!(keys.contains(&k));
    }
    let back: EvalReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
}
