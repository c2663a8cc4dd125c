use std::fs;
use std::path::Path;

use mostnet_autograd::Tensor;
use mostnet_core::geometry::{
    compose, ransac_partial_affine, FrameSize, Homography, MotionField, RansacConfig,
};
use mostnet_core::metrics::{psnr, temporal_warp_error};
use mostnet_core::synthdata::*;
use mostnet_core::Error;

fn static_scene() -> SceneSpec {
    SceneSpec {
        seed: 3,
        motion: MotionSpec::Constant {
            rotation_deg: 0.0,
            translation: [0.0, 0.0],
            scale: 1.0,
        },
        background_drift: 0.0,
        distractor: false,
        ..SceneSpec::default()
    }
}

fn translating(dx: f64) -> SceneSpec {
    SceneSpec {
        seed: 4,
        n_frames: 5,
        object_radius: [10.0, 12.0],
        motion: MotionSpec::Constant {
            rotation_deg: 0.0,
            translation: [dx, 0.0],
            scale: 1.0,
        },
        ..SceneSpec::default()
    }
}

#[test]
fn zero_motion_gives_identity_and_still_frames() {
    let seq = render_clean_sequence(&static_scene()).unwrap();
    assert_eq!(seq.frames.len(), 8);
    assert!(seq.homographies.iter().all(|h| *h == Homography::identity()));
    for t in 1..seq.frames.len() {
        assert_eq!(seq.frames[t].data(), seq.frames[0].data());
        assert_eq!(seq.masks[t].data(), seq.masks[0].data());
    }
}

#[test]
fn pure_translation_is_labelled_exactly() {
    let seq = render_clean_sequence(&translating(2.0)).unwrap();
    for h in &seq.homographies {
        assert!(h.max_abs_diff(&Homography::translation(2.0, 0.0)) < 1e-12);
    }
    // Object pixels move by exactly two columns.
    let (w, h) = (seq.width, seq.height);
    for t in 1..seq.frames.len() {
        for y in 0..h {
            for x in 2..w {
                let i = y * w + x;
                let j = y * w + x - 2;
                assert_eq!(seq.masks[t].data()[i], seq.masks[t - 1].data()[j]);
                if seq.masks[t].data()[i] == 1.0 {
                    for c in 0..3 {
                        assert_eq!(seq.frames[t].data()[c * w * h + i], seq.frames[t - 1].data()[c * w * h + j]);
                    }
                }
            }
        }
    }
    // With exact integer motion the clean clip has no warping error on the object.
    let masks: Vec<Tensor<f32>> = seq.masks.clone();
    let ew = temporal_warp_error(&seq.frames, &seq.homographies, Some(&masks)).unwrap();
    assert!(ew < 1e-6, "{ew}");
}

#[test]
fn object_pixels_obey_the_labelled_motion() {
    let spec = SceneSpec {
        seed: 21,
        ..SceneSpec::default()
    };
    let seq = render_clean_sequence(&spec).unwrap();
    let (w, h) = (seq.width, seq.height);
    for t in 1..seq.frames.len() {
        let ht = seq.homographies[t - 1];
        assert!(compose(&ht, &seq.poses[t - 1]).max_abs_diff(&seq.poses[t]) < 1e-12);
        let (inv_t, inv_prev, back) = (seq.poses[t].inverse(), seq.poses[t - 1].inverse(), ht.inverse());
        let mut worst: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                if seq.masks[t].data()[y * w + x] != 1.0 {
                    continue;
                }
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let a = inv_t.apply(p);
                let b = inv_prev.apply(back.apply(p));
                worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
            }
        }
        assert!(worst < 1e-9, "t={t}: {worst}");
    }
}

#[test]
fn clean_clips_have_no_warping_error_under_the_mask() {
    for seed in [21, 23, 24] {
        let seq = render_clean_sequence(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        let ew = temporal_warp_error(&seq.frames, &seq.homographies, Some(&seq.masks)).unwrap();
        assert!(ew < 1e-6, "seed {seed}: {ew}");
        // Without the mask, the background and the distractor do count.
        assert!(temporal_warp_error(&seq.frames, &seq.homographies, None).unwrap() > 1e-3);
    }
}

#[test]
fn motion_field_fit_recovers_the_labels() {
    let spec = SceneSpec {
        seed: 22,
        ..SceneSpec::default()
    };
    let seq = render_clean_sequence(&spec).unwrap();
    let (w, h) = (seq.width, seq.height);
    let plane = w * h;
    for t in 1..seq.frames.len() {
        let v = &seq.velocities[t];
        // The generator's field maps frame-t pixels back to frame t-1.
        let flow: Vec<[f64; 2]> = (0..plane)
            .map(|i| [-(v.data()[i] as f64), -(v.data()[plane + i] as f64)])
            .collect();
        let field = MotionField {
            width: w,
            height: h,
            flow,
            valid: vec![true; plane],
        };
        let mask: Vec<bool> = seq.masks[t].data().iter().map(|m| *m == 1.0).collect();
        let fit = ransac_partial_affine(&field, &mask, &RansacConfig::default()).unwrap();
        let recovered = fit.homography.inverse();
        assert!(recovered.max_abs_diff(&seq.homographies[t - 1]) < 1e-6, "t={t}");
    }
}

#[test]
fn identity_degradation_is_exact() {
    let seq = render_clean_sequence(&SceneSpec::default()).unwrap();
    let b = degrade(&seq, &DegradationSpec::identity(), 1).unwrap();
    for (x, y) in b.iter().zip(&seq.frames) {
        assert_eq!(x.data(), y.data());
    }
    let still = render_clean_sequence(&static_scene()).unwrap();
    for k in [3, 5, 9] {
        let spec = DegradationSpec {
            kernel_size: k,
            ..DegradationSpec::identity()
        };
        let b = degrade(&still, &spec, 1).unwrap();
        for (x, y) in b.iter().zip(&still.frames) {
            assert_eq!(x.data(), y.data());
        }
    }
}

#[test]
fn box_blur_of_a_moving_edge_matches_direct_convolution() {
    let (h, w) = (6, 16);
    let frame = Tensor::from_fn(&[1, h, w], |i| if i % w < 7 { 0.2 } else { 0.9 });
    let vel = Tensor::from_fn(&[2, h, w], |i| if i < h * w { 4.0 } else { 0.0 });
    let kernel = motion_kernel(5, [4.0, 0.0]);
    for (i, k) in kernel.iter().enumerate() {
        let expect = if i / 5 == 2 { 0.2 } else { 0.0 };
        assert!((k - expect).abs() < 1e-12);
    }
    let out = blur_frame(&frame, &vel, 5, 1.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -2i64..=2 {
                let xx = (x as i64 + d).clamp(0, w as i64 - 1) as usize;
                acc += frame.data()[y * w + xx] as f64 / 5.0;
            }
            assert!((out.data()[y * w + x] as f64 - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn kernels_are_normalized() {
    for v in [[0.0, 0.0], [1.3, -0.7], [10.0, 3.0], [-2.2, 4.1]] {
        for k in [1, 3, 5, 7] {
            let s: f64 = motion_kernel(k, v).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn more_noise_lowers_psnr() {
    let seq = render_clean_sequence(&SceneSpec::default()).unwrap();
    let mut last = f64::INFINITY;
    for eta in [0.0, 0.01, 0.03, 0.1] {
        let spec = DegradationSpec {
            eta,
            ..DegradationSpec::default()
        };
        let b = degrade(&seq, &spec, 5).unwrap();
        let p: f64 = b.iter().zip(&seq.frames).map(|(x, y)| psnr(x, y).unwrap()).sum::<f64>() / b.len() as f64;
        assert!(p < last, "eta {eta}: {p} >= {last}");
        last = p;
    }
}

#[test]
fn distractor_does_not_touch_labels() {
    let with = render_clean_sequence(&SceneSpec {
        seed: 9,
        ..SceneSpec::default()
    })
    .unwrap();
    let without = render_clean_sequence(&SceneSpec {
        seed: 9,
        distractor: false,
        ..SceneSpec::default()
    })
    .unwrap();
    assert_eq!(with.homographies, without.homographies);
    for (a, b) in with.masks.iter().zip(&without.masks) {
        assert_eq!(a.data(), b.data());
    }
    assert!(with.frames.iter().zip(&without.frames).any(|(a, b)| a.data() != b.data()));
}

#[test]
fn invalid_specs_are_rejected() {
    let big = SceneSpec {
        object_radius: [40.0, 45.0],
        ..SceneSpec::default()
    };
    assert!(matches!(render_clean_sequence(&big), Err(Error::InvalidConfig(_))));
    let runaway = SceneSpec {
        motion: MotionSpec::Constant {
            rotation_deg: 0.0,
            translation: [9.0, 0.0],
            scale: 1.0,
        },
        ..translating(0.0)
    };
    assert!(matches!(render_clean_sequence(&runaway), Err(Error::ObjectLeavesFrame { .. })));
    let even = DegradationSpec {
        kernel_size: 4,
        ..DegradationSpec::default()
    };
    assert!(even.validate().is_err());
    let negative = DegradationSpec {
        eta: -0.1,
        ..DegradationSpec::default()
    };
    assert!(negative.validate().is_err());
}

fn small_config() -> SynthConfig {
    SynthConfig {
        scene: SceneSpec {
            n_frames: 3,
            ..SceneSpec::default()
        },
        clips: SplitSizes {
            train: 2,
            val: 1,
            test: 0,
        },
        ..SynthConfig::default()
    }
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn datasets_are_reproducible_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthesize_dataset(&small_config(), 17, a.path()).unwrap();
    synthesize_dataset(&small_config(), 17, b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    synthesize_dataset(&small_config(), 18, c.path()).unwrap();
    assert_ne!(ta, read_tree(c.path()));
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let clips = generate_clips(&small_config(), 5).unwrap();
    let written = write_dataset(dir.path(), &clips).unwrap();
    let index = read_dataset(dir.path()).unwrap();
    assert_eq!(written, index);
    assert_eq!(index.summary(), vec![(Split::Train, 2, 6), (Split::Val, 1, 3), (Split::Test, 0, 0)]);
    for (entry, (_, clip)) in index.split(Split::Train).iter().zip(&clips) {
        let back = index.load_clip(entry).unwrap();
        assert_eq!(back.name, clip.name);
        for (a, b) in back.masks.iter().zip(&clip.masks) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in back.homographies.iter().zip(&clip.homographies) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        for (a, b) in back.restored.iter().chain(&back.degraded).zip(clip.restored.iter().chain(&clip.degraded)) {
            let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(err <= 1.0 / 255.0, "{err}");
        }
    }
    let entry = &index.split(Split::Train)[0];
    assert!(dir.path().join(&entry.dir).join("H.txt").is_file());
    assert!(dir.path().join(&entry.dir).join("M").join("frame_0002.png").is_file());
}

#[test]
fn missing_or_altered_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let index = synthesize_dataset(&small_config(), 6, dir.path()).unwrap();
    let entry = &index.split(Split::Val)[0];
    let victim = dir.path().join(&entry.dir).join("M").join("frame_0001.png");
    fs::remove_file(&victim).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Dataset { path, .. }) => assert_eq!(path, victim),
        other => panic!("expected a dataset error, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let index = synthesize_dataset(&small_config(), 6, dir.path()).unwrap();
    let h = dir.path().join(&index.split(Split::Train)[1].dir).join("H.txt");
    let mut text = fs::read_to_string(&h).unwrap();
    text.push('\n');
    text.push_str("1 0 0 0 1 0 0 0 1\n");
    fs::write(&h, text).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("H.txt"), "{err}");
    assert!(err.is_validation());
}

#[test]
fn labels_at_lower_scales() {
    let restored = Tensor::from_fn(&[1, 3, 16, 20], |i| (i % 13) as f32 / 13.0);
    let full = Tensor::full(&[1, 1, 16, 20], 1.0f32);
    let labels = FrameLabels::new(restored.clone(), full, vec![Homography::translation(4.0, 0.0)]).unwrap();
    let s1 = gt_labels_at_scale(&labels, 1);
    assert_eq!(s1.restored.data(), restored.data());
    assert_eq!(s1.homographies, labels.homographies);
    let s3 = gt_labels_at_scale(&labels, 3);
    assert!(s3.homographies[0].max_abs_diff(&Homography::translation(1.0, 0.0)) < 1e-12);
    assert!(s3.mask.data().iter().all(|v| *v == 1.0));
    assert_eq!(s3.mask.shape(), &[1, 1, 4, 5]);
    let o = s3.offsets[0].to_flat();
    for i in 0..4 {
        assert!((o[2 * i] - 1.0).abs() < 1e-12 && o[2 * i + 1].abs() < 1e-12);
    }
    assert_eq!(labels.frame_size(), FrameSize::new(20, 16));
}
