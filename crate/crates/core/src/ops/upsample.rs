//! Trilinear upsampling with align-corners sampling.
//!
//! Output position `i` on an axis of length `n` scaled by `s` samples the
//! input at `i (n - 1) / (s n - 1)`, so the first and last samples land
//! exactly on the input corners. The three axes are interpolated one after
//! another, which is the same as trilinear weighting.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(lower index, upper index, weight of upper)` for each output position.
fn taps(n: usize, out: usize) -> Vec<(usize, usize, f64)> {
    if n == 1 || out == 1 {
        return vec![(0, 0, 0.0); out];
    }
    let (num, den) = (n - 1, out - 1);
    (0..out)
        .map(|i| {
            let lo = i * num / den;
            let rem = i * num % den;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, rem as f64 / den as f64)
        })
        .collect()
}

fn resample_axis(x: &Tensor, axis: usize, out_len: usize, adjoint: bool) -> Tensor {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let (src_len, dst_len) = if adjoint {
        (out_len, shape[axis])
    } else {
        (shape[axis], out_len)
    };
    let weights = taps(src_len, dst_len);
    let mut new_shape = shape.to_vec();
    new_shape[axis] = if adjoint { src_len } else { dst_len };
    let mut out = Tensor::zeros(new_shape);
    let (src, dst) = (x.data(), out.data_mut());
    let (in_axis, out_axis) = (shape[axis], out_len);
    for o in 0..outer {
        let src_block = &src[o * in_axis * inner..][..in_axis * inner];
        let dst_block = &mut dst[o * out_axis * inner..][..out_axis * inner];
        for (j, &(lo, hi, f)) in weights.iter().enumerate() {
            if adjoint {
                // x has the fine axis; scatter row j back onto rows lo/hi
                let row = &src_block[j * inner..][..inner];
                for (k, &v) in row.iter().enumerate() {
                    dst_block[lo * inner + k] += (1.0 - f) * v;
                    dst_block[hi * inner + k] += f * v;
                }
            } else {
                for k in 0..inner {
                    let a = src_block[lo * inner + k];
                    let b = src_block[hi * inner + k];
                    dst_block[j * inner + k] = a + f * (b - a);
                }
            }
        }
    }
    out
}

fn check_scale(scale: [usize; 3]) -> Result<()> {
    if scale.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!("upsample scale {scale:?} must be >= 1")));
    }
    Ok(())
}

pub fn trilinear_upsample(x: &Tensor, scale: [usize; 3]) -> Result<Tensor> {
    check_scale(scale)?;
    let dims = x.dims5()?;
    let mut y = x.clone();
    for a in 0..3 {
        if scale[a] > 1 {
            y = resample_axis(&y, 2 + a, dims[2 + a] * scale[a], false);
        }
    }
    Ok(y)
}

/// Adjoint of [`trilinear_upsample`]: maps an output gradient back to the input grid.
pub fn trilinear_upsample_backward(grad_out: &Tensor, scale: [usize; 3]) -> Result<Tensor> {
    check_scale(scale)?;
    let dims = grad_out.dims5()?;
    let mut g = grad_out.clone();
    for a in (0..3).rev() {
        if scale[a] > 1 {
            if dims[2 + a] % scale[a] != 0 {
                return Err(Error::InvalidShape {
                    op: "trilinear_upsample_backward",
                    detail: format!("axis {} of {:?} not divisible by {}", 2 + a, dims, scale[a]),
                });
            }
            g = resample_axis(&g, 2 + a, dims[2 + a] / scale[a], true);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(vec![1, 2, 2, 3, 3], 1.25);
        let y = trilinear_upsample(&x, [2, 2, 2]).unwrap();
        assert_eq!(y.shape(), [1, 2, 4, 6, 6]);
        assert!(y.data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
    }

    #[test]
    fn unit_scale_is_identity() {
        let mut r = rng::seeded(5);
        let x = Tensor::uniform(vec![1, 2, 2, 3, 4], -1.0, 1.0, &mut r);
        assert_eq!(trilinear_upsample(&x, [1, 1, 1]).unwrap(), x);
    }

    #[test]
    fn align_corners_positions() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let y = trilinear_upsample(&x, [1, 1, 2]).unwrap();
        let expect = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_is_adjoint() {
        let mut r = rng::seeded(6);
        let x = Tensor::uniform(vec![2, 2, 2, 3, 5], -1.0, 1.0, &mut r);
        let y = Tensor::uniform(vec![2, 2, 2, 6, 10], -1.0, 1.0, &mut r);
        let lhs = trilinear_upsample(&x, [1, 2, 2]).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&trilinear_upsample_backward(&y, [1, 2, 2]).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
