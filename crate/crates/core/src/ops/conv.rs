//! 3D convolution (cross-correlation, zero padding) and its transpose.
//!
//! Both directions share three kernels: the gather used by the forward
//! convolution, the scatter used by its input gradient (which is also the
//! transposed convolution), and the weight-gradient correlation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of one convolution layer.
///
/// For a transposed convolution `in_channels` is the channel count of *its*
/// input and the weight tensor is laid out `(in, out, kT, kH, kW)`, i.e. the
/// layout of the forward convolution it is the adjoint of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, no padding, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self {
            kernel,
            stride: [1; 3],
            padding: [0; 3],
            in_channels,
            out_channels,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// Padding that preserves size for odd kernels at stride 1.
    pub fn same_padding(self) -> Self {
        let k = self.kernel;
        self.padding([k[0] / 2, k[1] / 2, k[2] / 2])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.kernel.iter().chain(&self.stride).all(|&v| v >= 1)
            && self.in_channels >= 1
            && self.out_channels >= 1;
        if !positive {
            return Err(Error::InvalidArgument(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `floor((in + 2p - k) / s) + 1` per axis.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::InvalidShape {
                    op: "conv3d",
                    detail: format!(
                        "axis {a}: input {} with padding {} smaller than kernel {}",
                        input[a], self.padding[a], self.kernel[a]
                    ),
                });
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// `(in - 1) s - 2p + k` per axis.
    pub fn transposed_output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            if full <= 2 * self.padding[a] {
                return Err(Error::InvalidShape {
                    op: "transposed_conv3d",
                    detail: format!("axis {a}: padding {} consumes the whole output", self.padding[a]),
                });
            }
            out[a] = full - 2 * self.padding[a];
        }
        Ok(out)
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels, kt, kh, kw]
    }

    pub fn transposed_weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.in_channels, self.out_channels, kt, kh, kw]
    }

    /// The forward convolution whose adjoint this transposed spec computes.
    fn mirrored(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume()
            + if self.bias { self.out_channels } else { 0 }
    }
}

/// He-uniform weights, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn init_weight<R: Rng + ?Sized>(shape: [usize; 5], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

pub fn init_conv_weight<R: Rng + ?Sized>(spec: &ConvSpec, rng: &mut R) -> Tensor {
    init_weight(spec.weight_shape(), spec.in_channels * spec.kernel_volume(), rng)
}

pub fn init_transposed_weight<R: Rng + ?Sized>(spec: &ConvSpec, rng: &mut R) -> Tensor {
    // each output sees roughly kernel/stride taps per input channel
    let taps = spec.kernel_volume() / spec.stride.iter().product::<usize>();
    init_weight(spec.transposed_weight_shape(), spec.in_channels * taps.max(1), rng)
}

/// Range of output positions `o` for which `o * stride + k - pad` lies in `0..input`.
fn valid_range(k: usize, pad: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k {
        ((input - 1 + pad - k) / stride + 1).min(output)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }
    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }
    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Calls `f(in_offset, out_offset, len, in_step)` for every contiguous row
    /// pairing of kernel tap `(kt, kh, kw)`: output `w` positions
    /// `out_offset..out_offset+len` read input `in_offset + j * in_step`.
    fn for_each_row(&self, kt: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [it, ih, iw] = self.input;
        let [ot, oh, ow] = self.output;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        let (t_lo, t_hi) = valid_range(kt, pt, st, it, ot);
        let (h_lo, h_hi) = valid_range(kh, ph, sh, ih, oh);
        let (w_lo, w_hi) = valid_range(kw, pw, sw, iw, ow);
        if w_lo >= w_hi {
            return;
        }
        for to in t_lo..t_hi {
            let ti = to * st + kt - pt;
            for ho in h_lo..h_hi {
                let hi = ho * sh + kh - ph;
                let wi = w_lo * sw + kw - pw;
                f((ti * ih + hi) * iw + wi, (to * oh + ho) * ow + w_lo, w_hi - w_lo, sw);
            }
        }
    }
}

/// out[b, co] = sum over ci, taps of w[co, ci, tap] * x[b, ci, shifted]
fn gather(x: &[f64], w: &[f64], g: &Geometry, out: &mut [f64]) {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [kt_n, kh_n, kw_n] = g.kernel;
    out.par_chunks_mut(out_plane).enumerate().for_each(|(idx, dst)| {
        let (b, co) = (idx / g.cout, idx % g.cout);
        for ci in 0..g.cin {
            let src = &x[(b * g.cin + ci) * in_plane..][..in_plane];
            let wk = &w[(co * g.cin + ci) * kvol..][..kvol];
            for kt in 0..kt_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let wv = wk[(kt * kh_n + kh) * kw_n + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        g.for_each_row(kt, kh, kw, |io, oo, len, step| {
                            let row = &mut dst[oo..oo + len];
                            if step == 1 {
                                for (d, s) in row.iter_mut().zip(&src[io..io + len]) {
                                    *d += wv * s;
                                }
                            } else {
                                for (j, d) in row.iter_mut().enumerate() {
                                    *d += wv * src[io + j * step];
                                }
                            }
                        });
                    }
                }
            }
        }
    });
}

/// The adjoint of [`gather`] with respect to `x`.
fn scatter(gy: &[f64], w: &[f64], g: &Geometry, gx: &mut [f64]) {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [kt_n, kh_n, kw_n] = g.kernel;
    gx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, dst)| {
        let (b, ci) = (idx / g.cin, idx % g.cin);
        for co in 0..g.cout {
            let src = &gy[(b * g.cout + co) * out_plane..][..out_plane];
            let wk = &w[(co * g.cin + ci) * kvol..][..kvol];
            for kt in 0..kt_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let wv = wk[(kt * kh_n + kh) * kw_n + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        g.for_each_row(kt, kh, kw, |io, oo, len, step| {
                            for (j, s) in src[oo..oo + len].iter().enumerate() {
                                dst[io + j * step] += wv * s;
                            }
                        });
                    }
                }
            }
        }
    });
}

/// gw[co, ci, tap] = sum over batch and positions of gy[b, co] * x[b, ci, shifted]
fn weight_grad(x: &[f64], gy: &[f64], g: &Geometry) -> Vec<f64> {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let kvol = g.kvol();
    let [kt_n, kh_n, kw_n] = g.kernel;
    let mut gw = vec![0.0; g.cout * g.cin * kvol];
    gw.par_chunks_mut(kvol).enumerate().for_each(|(idx, dst)| {
        let (co, ci) = (idx / g.cin, idx % g.cin);
        for b in 0..g.batch {
            let xs = &x[(b * g.cin + ci) * in_plane..][..in_plane];
            let ys = &gy[(b * g.cout + co) * out_plane..][..out_plane];
            for kt in 0..kt_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let mut acc = 0.0;
                        g.for_each_row(kt, kh, kw, |io, oo, len, step| {
                            for (j, y) in ys[oo..oo + len].iter().enumerate() {
                                acc += y * xs[io + j * step];
                            }
                        });
                        dst[(kt * kh_n + kh) * kw_n + kw] += acc;
                    }
                }
            }
        }
    });
    gw
}

fn bias_grad(gy: &Tensor, channels: usize) -> Tensor {
    let [b, c, t, h, w] = gy.dims5().expect("rank-5 gradient");
    debug_assert_eq!(c, channels);
    let plane = t * h * w;
    let mut g = vec![0.0; c];
    for bi in 0..b {
        for (ci, acc) in g.iter_mut().enumerate() {
            *acc += gy.data()[(bi * c + ci) * plane..][..plane].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(vec![c], g).expect("bias shape")
}

fn add_bias(out: &mut Tensor, bias: &Tensor) {
    let [_, c, t, h, w] = out.dims5().expect("rank-5 output");
    let plane = t * h * w;
    for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let bv = bias.data()[idx % c];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

fn check_bias(op: &'static str, spec: &ConvSpec, channels: usize, bias: Option<&Tensor>) -> Result<()> {
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() == [channels] => Ok(()),
        (true, Some(b)) => Err(Error::ShapeMismatch {
            op,
            left: b.shape().to_vec(),
            right: vec![channels],
        }),
        (true, None) => Err(Error::InvalidArgument(format!("{op}: spec has a bias but none was given"))),
        (false, Some(_)) => Err(Error::InvalidArgument(format!("{op}: spec has no bias but one was given"))),
        (false, None) => Ok(()),
    }
}

fn conv_geometry(x: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    let [b, c, t, h, w] = x.dims5()?;
    if c != spec.in_channels {
        return Err(Error::InvalidShape {
            op: "conv3d",
            detail: format!("input has {c} channels, spec expects {}", spec.in_channels),
        });
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv3d weight",
            left: weight.shape().to_vec(),
            right: spec.weight_shape().to_vec(),
        });
    }
    Ok(Geometry {
        batch: b,
        cin: spec.in_channels,
        cout: spec.out_channels,
        input: [t, h, w],
        output: spec.output_dims([t, h, w])?,
        kernel: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    })
}

pub fn conv3d(x: &Tensor, spec: &ConvSpec, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let g = conv_geometry(x, weight, spec)?;
    check_bias("conv3d", spec, spec.out_channels, bias)?;
    let [ot, oh, ow] = g.output;
    let mut out = Tensor::zeros(vec![g.batch, g.cout, ot, oh, ow]);
    gather(x.data(), weight.data(), &g, out.data_mut());
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

/// Gradients of a convolution: `(input, weight, bias)`.
pub fn conv3d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let g = conv_geometry(x, weight, spec)?;
    let [ot, oh, ow] = g.output;
    if grad_out.shape() != [g.batch, g.cout, ot, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "conv3d_backward",
            left: grad_out.shape().to_vec(),
            right: vec![g.batch, g.cout, ot, oh, ow],
        });
    }
    let mut gx = Tensor::zeros_like(x);
    scatter(grad_out.data(), weight.data(), &g, gx.data_mut());
    let gw = Tensor::from_vec(weight.shape().to_vec(), weight_grad(x.data(), grad_out.data(), &g))?;
    let gb = spec.bias.then(|| bias_grad(grad_out, spec.out_channels));
    Ok((gx, gw, gb))
}

fn transposed_geometry(x: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    let [b, c, t, h, w] = x.dims5()?;
    if c != spec.in_channels {
        return Err(Error::InvalidShape {
            op: "transposed_conv3d",
            detail: format!("input has {c} channels, spec expects {}", spec.in_channels),
        });
    }
    if weight.shape() != spec.transposed_weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "transposed_conv3d weight",
            left: weight.shape().to_vec(),
            right: spec.transposed_weight_shape().to_vec(),
        });
    }
    let mirrored = spec.mirrored();
    let out = spec.transposed_output_dims([t, h, w])?;
    // geometry of the forward convolution mapping `out` back onto `x`
    Ok(Geometry {
        batch: b,
        cin: mirrored.in_channels,
        cout: mirrored.out_channels,
        input: out,
        output: [t, h, w],
        kernel: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    })
}

/// Transposed convolution: the exact adjoint of [`conv3d`] with shared weights.
pub fn transposed_conv3d(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    let g = transposed_geometry(x, weight, spec)?;
    check_bias("transposed_conv3d", spec, spec.out_channels, bias)?;
    let [ot, oh, ow] = g.input;
    let mut out = Tensor::zeros(vec![g.batch, spec.out_channels, ot, oh, ow]);
    scatter(x.data(), weight.data(), &g, out.data_mut());
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

/// Gradients of a transposed convolution: `(input, weight, bias)`.
pub fn transposed_conv3d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let g = transposed_geometry(x, weight, spec)?;
    let [ot, oh, ow] = g.input;
    if grad_out.shape() != [g.batch, spec.out_channels, ot, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "transposed_conv3d_backward",
            left: grad_out.shape().to_vec(),
            right: vec![g.batch, spec.out_channels, ot, oh, ow],
        });
    }
    let mut gx = Tensor::zeros_like(x);
    gather(grad_out.data(), weight.data(), &g, gx.data_mut());
    let gw = Tensor::from_vec(weight.shape().to_vec(), weight_grad(grad_out.data(), x.data(), &g))?;
    let gb = spec.bias.then(|| bias_grad(grad_out, spec.out_channels));
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Six-nested-loop direct summation, independent of the row kernels above.
    pub(crate) fn conv3d_oracle(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: Option<&Tensor>) -> Tensor {
        let [nb, ci_n, it, ih, iw] = x.dims5().unwrap();
        let [ot, oh, ow] = spec.output_dims([it, ih, iw]).unwrap();
        let mut out = Tensor::zeros(vec![nb, spec.out_channels, ot, oh, ow]);
        for bi in 0..nb {
            for co in 0..spec.out_channels {
                for to in 0..ot {
                    for ho in 0..oh {
                        for wo in 0..ow {
                            let mut acc = b.map_or(0.0, |b| b.data()[co]);
                            for ci in 0..ci_n {
                                for kt in 0..spec.kernel[0] {
                                    for kh in 0..spec.kernel[1] {
                                        for kw in 0..spec.kernel[2] {
                                            let t = (to * spec.stride[0] + kt) as isize - spec.padding[0] as isize;
                                            let h = (ho * spec.stride[1] + kh) as isize - spec.padding[1] as isize;
                                            let ww = (wo * spec.stride[2] + kw) as isize - spec.padding[2] as isize;
                                            if t < 0 || h < 0 || ww < 0 || t >= it as isize || h >= ih as isize || ww >= iw as isize {
                                                continue;
                                            }
                                            acc += w.get(&[co, ci, kt, kh, kw])
                                                * x.get(&[bi, ci, t as usize, h as usize, ww as usize]);
                                        }
                                    }
                                }
                            }
                            out.set(&[bi, co, to, ho, wo], acc);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_affine() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![3.0]).unwrap();
        let spec = ConvSpec::new(1, 1, [1, 1, 1]);
        let w = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let y = conv3d(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1, 1]);
        assert_eq!(y.data(), [7.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut r = rng::seeded(1);
        let x = Tensor::uniform(vec![2, 3, 3, 4, 5], -1.0, 1.0, &mut r);
        let spec = ConvSpec::new(3, 3, [3, 3, 3]).same_padding().no_bias();
        let mut w = Tensor::zeros(spec.weight_shape().to_vec());
        for c in 0..3 {
            w.set(&[c, c, 1, 1, 1], 1.0);
        }
        assert_eq!(conv3d(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn matches_direct_summation() {
        let mut r = rng::seeded(2);
        let x = Tensor::uniform(vec![1, 1, 2, 3, 3], -1.0, 1.0, &mut r);
        let spec = ConvSpec::new(1, 1, [2, 2, 2]).no_bias();
        let w = Tensor::uniform(spec.weight_shape().to_vec(), -1.0, 1.0, &mut r);
        let y = conv3d(&x, &spec, &w, None).unwrap();
        let expect = conv3d_oracle(&x, &spec, &w, None);
        assert_eq!(y.shape(), [1, 1, 1, 2, 2]);
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_summation_strided_padded() {
        let mut r = rng::seeded(3);
        for case in 0..20u64 {
            let mut r2 = rng::child(3, case);
            let kernel = [r2.random_range(1..4), r2.random_range(1..4), r2.random_range(1..4)];
            let stride = [r2.random_range(1..3), r2.random_range(1..3), r2.random_range(1..3)];
            let padding = [r2.random_range(0..2), r2.random_range(0..2), r2.random_range(0..3)];
            let spec = ConvSpec::new(2, 3, kernel).stride(stride).padding(padding);
            let x = Tensor::uniform(vec![2, 2, 4, 5, 6], -1.0, 1.0, &mut r);
            let w = Tensor::uniform(spec.weight_shape().to_vec(), -1.0, 1.0, &mut r);
            let b = Tensor::uniform(vec![3], -1.0, 1.0, &mut r);
            let y = conv3d(&x, &spec, &w, Some(&b)).unwrap();
            let expect = conv3d_oracle(&x, &spec, &w, Some(&b));
            assert_eq!(y.shape(), expect.shape());
            for (a, b) in y.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn transposed_single_window_scatter() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![1.5]).unwrap();
        let spec = ConvSpec::new(1, 1, [1, 2, 2]).stride([1, 2, 2]).no_bias();
        let w = Tensor::full(spec.transposed_weight_shape().to_vec(), 2.0);
        let y = transposed_conv3d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn transposed_zero_input_gives_bias() {
        let spec = ConvSpec::new(2, 3, [1, 4, 4]).stride([1, 2, 2]).padding([0, 1, 1]);
        let x = Tensor::zeros(vec![1, 2, 2, 3, 3]);
        let mut r = rng::seeded(4);
        let w = init_transposed_weight(&spec, &mut r);
        let b = Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = transposed_conv3d(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), [1, 3, 2, 6, 6]);
        for c in 0..3 {
            let plane = 2 * 36;
            assert!(y.data()[c * plane..(c + 1) * plane].iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn output_dims_errors() {
        let spec = ConvSpec::new(1, 1, [3, 3, 3]);
        assert!(spec.output_dims([2, 5, 5]).is_err());
        assert_eq!(spec.output_dims([3, 5, 5]).unwrap(), [1, 3, 3]);
        let bad = ConvSpec::new(1, 1, [0, 1, 1]);
        assert!(bad.validate().is_err());
        let x = Tensor::zeros(vec![1, 2, 3, 3, 3]);
        let w = Tensor::zeros(spec.weight_shape().to_vec());
        assert!(conv3d(&x, &spec, &w, None).is_err());
    }

    #[test]
    fn param_count_closed_form() {
        assert_eq!(ConvSpec::new(4, 8, [1, 1, 1]).param_count(), 40);
    }
}
