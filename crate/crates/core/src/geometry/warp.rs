use mostnet_autograd::{SampleGrid, Scalar, Tensor};

use super::{FrameSize, Homography};

/// Sampling position (index space) of output pixel `(x, y)` under reverse
/// mapping through `h^-1`.
#[inline]
fn preimage(inv: &Homography, x: usize, y: usize) -> (f64, f64) {
    let p = inv.apply([x as f64 + 0.5, y as f64 + 0.5]);
    (p[0] - 0.5, p[1] - 0.5)
}

/// Bilinear taps for warping a batch, one homography per item.
pub fn warp_grid(hs: &[Homography], size: FrameSize) -> SampleGrid {
    let invs: Vec<Homography> = hs.iter().map(Homography::inverse).collect();
    let dims = (size.height, size.width);
    SampleGrid::new(hs.len(), dims, dims, |b, x, y| preimage(&invs[b], x, y))
}

/// `out[c, y, x] = bilinear(x_in, h^-1 (x, y))` with zero padding outside the
/// frame. Accepts `[C,H,W]` or `[1,C,H,W]` input.
pub fn warp<T: Scalar>(x: &Tensor<T>, h: &Homography) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let x4 = if shape.len() == 3 {
        x.clone().reshape(&[1, shape[0], shape[1], shape[2]])
    } else {
        x.clone()
    };
    let (n, _, hh, ww) = x4.dims4();
    let grid = warp_grid(&vec![*h; n], FrameSize::new(ww, hh));
    grid.apply(&x4).reshape(&shape)
}

/// Pixels of the target frame whose pre-image under `h` lies inside the
/// source frame (between the outermost pixel centers).
pub fn valid_preimage_mask(h: &Homography, size: FrameSize) -> Vec<bool> {
    let inv = h.inverse();
    let (w, hh) = (size.width as f64, size.height as f64);
    let eps = 1e-9;
    let mut out = Vec::with_capacity(size.width * size.height);
    for y in 0..size.height {
        for x in 0..size.width {
            let (u, v) = preimage(&inv, x, y);
            out.push(u >= -eps && v >= -eps && u <= w - 1.0 + eps && v <= hh - 1.0 + eps);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[c, h, w], |i| ((i * 37 % 101) as f64) / 101.0)
    }

    #[test]
    fn identity_warp_is_exact() {
        let x = image(3, 8, 10);
        assert_eq!(warp(&x, &Homography::identity()), x);
    }

    #[test]
    fn integer_translation_shifts_columns() {
        let x = image(2, 5, 7);
        let y = warp(&x, &Homography::translation(1.0, 0.0));
        for c in 0..2 {
            for r in 0..5 {
                assert_eq!(y.data()[(c * 5 + r) * 7], 0.0);
                for col in 1..7 {
                    assert_eq!(y.data()[(c * 5 + r) * 7 + col], x.data()[(c * 5 + r) * 7 + col - 1]);
                }
            }
        }
    }

    #[test]
    fn half_pixel_shift_on_ramp_gives_midpoints() {
        let ramp = Tensor::from_fn(&[1, 4, 9], |i| (i % 9) as f64 * 0.1);
        let y = warp(&ramp, &Homography::translation(0.5, 0.0));
        for r in 0..4 {
            for col in 1..9 {
                let want = 0.5 * (ramp.data()[r * 9 + col - 1] + ramp.data()[r * 9 + col]);
                assert!((y.data()[r * 9 + col] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn valid_mask_excludes_uncovered_border() {
        let m = valid_preimage_mask(&Homography::translation(1.0, 0.0), FrameSize::new(6, 3));
        for r in 0..3 {
            assert!(!m[r * 6]);
            assert!(m[r * 6 + 1..r * 6 + 6].iter().all(|&v| v));
        }
    }
}
