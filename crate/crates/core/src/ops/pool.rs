//! Max-pooling with switches, max-unpooling and the auxiliary pooling pair.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Argmax locations recorded by a max-pooling.
///
/// One index per pooled element, laid out like the pooled map
/// `(B, C, T', H', W')`. Each index is a row-major offset into the
/// `(T, H, W)` volume of the same batch item and channel of the pooling
/// input, whose dims are kept in `source`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Switches {
    shape: [usize; 5],
    source: [usize; 3],
    indices: Vec<usize>,
}

impl Switches {
    pub fn new(shape: [usize; 5], source: [usize; 3], indices: Vec<usize>) -> Result<Self> {
        if indices.len() != shape.iter().product::<usize>() {
            return Err(Error::InvalidShape {
                op: "switches",
                detail: format!("{} indices for shape {shape:?}", indices.len()),
            });
        }
        Ok(Self {
            shape,
            source,
            indices,
        })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    /// `(T, H, W)` of the map the switches index into.
    pub fn source_dims(&self) -> [usize; 3] {
        self.source
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Full `(B, C, T, H, W)` shape an unpooling with these switches produces.
    pub fn unpooled_shape(&self) -> [usize; 5] {
        let [b, c, ..] = self.shape;
        let [t, h, w] = self.source;
        [b, c, t, h, w]
    }
}

fn pooled_dims(input: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if kernel[a] == 0 || stride[a] == 0 {
            return Err(Error::InvalidArgument(format!(
                "pooling kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        if kernel[a] > input[a] {
            return Err(Error::InvalidShape {
                op: "maxpool3d",
                detail: format!("window {kernel:?} exceeds input {input:?} (pooling takes no padding)"),
            });
        }
        out[a] = (input[a] - kernel[a]) / stride[a] + 1;
    }
    Ok(out)
}

/// Max-pooling that also returns the argmax of every window.
///
/// Ties go to the first maximum in row-major scan order of the window.
pub fn maxpool3d_with_switches(
    x: &Tensor,
    kernel: [usize; 3],
    stride: [usize; 3],
) -> Result<(Tensor, Switches)> {
    let [b, c, t, h, w] = x.dims5()?;
    let [ot, oh, ow] = pooled_dims([t, h, w], kernel, stride)?;
    let in_plane = t * h * w;
    let out_plane = ot * oh * ow;
    let mut values = Vec::with_capacity(b * c * out_plane);
    let mut indices = Vec::with_capacity(b * c * out_plane);
    for src in x.data().chunks(in_plane) {
        for to in 0..ot {
            for ho in 0..oh {
                for wo in 0..ow {
                    let (t0, h0, w0) = (to * stride[0], ho * stride[1], wo * stride[2]);
                    let mut best = (w0 + w * (h0 + h * t0), f64::NEG_INFINITY);
                    let mut first = true;
                    for dt in 0..kernel[0] {
                        for dh in 0..kernel[1] {
                            let row = ((t0 + dt) * h + h0 + dh) * w + w0;
                            for (dw, &v) in src[row..row + kernel[2]].iter().enumerate() {
                                if first || v > best.1 {
                                    best = (row + dw, v);
                                    first = false;
                                }
                            }
                        }
                    }
                    indices.push(best.0);
                    values.push(best.1);
                }
            }
        }
    }
    let shape = [b, c, ot, oh, ow];
    Ok((
        Tensor::from_vec(shape.to_vec(), values)?,
        Switches::new(shape, [t, h, w], indices)?,
    ))
}

/// Routes the pooled gradient back to the recorded argmax positions.
pub fn maxpool3d_backward(grad_out: &Tensor, switches: &Switches) -> Result<Tensor> {
    scatter_switches(grad_out, switches, switches.unpooled_shape())
}

/// Max-unpooling: zeros everywhere except `output[s[i]] = z[i]`.
///
/// Values landing on the same position (only possible for switches from an
/// overlapping pooling) are summed, which keeps this the exact adjoint of
/// the gather in [`maxunpool3d_backward`].
pub fn maxunpool3d(z: &Tensor, switches: &Switches, output_shape: [usize; 5]) -> Result<Tensor> {
    scatter_switches(z, switches, output_shape)
}

fn scatter_switches(z: &Tensor, switches: &Switches, output_shape: [usize; 5]) -> Result<Tensor> {
    if z.shape() != switches.shape {
        return Err(Error::ShapeMismatch {
            op: "maxunpool3d",
            left: z.shape().to_vec(),
            right: switches.shape.to_vec(),
        });
    }
    let [b, c, t, h, w] = output_shape;
    if [b, c] != switches.shape[..2] {
        return Err(Error::ShapeMismatch {
            op: "maxunpool3d output",
            left: output_shape.to_vec(),
            right: switches.shape.to_vec(),
        });
    }
    let out_plane = t * h * w;
    let in_plane: usize = switches.shape[2..].iter().product();
    let mut out = Tensor::zeros(output_shape.to_vec());
    let dst = out.data_mut();
    for (plane, (vals, idx)) in z
        .data()
        .chunks(in_plane)
        .zip(switches.indices.chunks(in_plane))
        .enumerate()
    {
        let base = plane * out_plane;
        for (&v, &i) in vals.iter().zip(idx) {
            if i >= out_plane {
                return Err(Error::CorruptSwitches {
                    index: i,
                    len: out_plane,
                });
            }
            dst[base + i] += v;
        }
    }
    Ok(out)
}

/// Gradient of [`maxunpool3d`] with respect to `z`.
pub fn maxunpool3d_backward(grad_out: &Tensor, switches: &Switches) -> Result<Tensor> {
    let [b, c, t, h, w] = grad_out.dims5()?;
    if [b, c] != switches.shape[..2] {
        return Err(Error::ShapeMismatch {
            op: "maxunpool3d_backward",
            left: grad_out.shape().to_vec(),
            right: switches.shape.to_vec(),
        });
    }
    let out_plane = t * h * w;
    let in_plane: usize = switches.shape[2..].iter().product();
    let mut values = Vec::with_capacity(switches.indices.len());
    for (plane, idx) in switches.indices.chunks(in_plane).enumerate() {
        let src = &grad_out.data()[plane * out_plane..][..out_plane];
        for &i in idx {
            values.push(*src.get(i).ok_or(Error::CorruptSwitches {
                index: i,
                len: out_plane,
            })?);
        }
    }
    Tensor::from_vec(switches.shape.to_vec(), values)
}

/// Auxiliary pooling pair: switches in the decoder's reduced temporal length.
///
/// A `k x 1 x 1` max-pooling first shrinks the encoder map's time axis; a
/// spatial `1 x aH x aW` max-pooling over that temporally reduced map then
/// records the switches. Both pooled maps are discarded; only the second
/// pooling's switches come back, indexing into the `(T/k, H, W)` volume.
pub fn aux_pool_pair(z_e: &Tensor, temporal_factor: usize, spatial: [usize; 2]) -> Result<Switches> {
    let [_, _, t, h, w] = z_e.dims5()?;
    let [ah, aw] = spatial;
    if temporal_factor == 0
        || ah == 0
        || aw == 0
        || t % temporal_factor != 0
        || h % ah != 0
        || w % aw != 0
    {
        return Err(Error::InvalidShape {
            op: "aux_pool_pair",
            detail: format!(
                "dims (T={t}, H={h}, W={w}) not divisible by factors (k={temporal_factor}, aH={ah}, aW={aw})"
            ),
        });
    }
    let (reduced, _) = maxpool3d_with_switches(z_e, [temporal_factor, 1, 1], [temporal_factor, 1, 1])?;
    let (_, switches) = maxpool3d_with_switches(&reduced, [1, ah, aw], [1, ah, aw])?;
    Ok(switches)
}
