//! Per-channel batch normalization over `(B, T, H, W)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics, updated as `new = (1 - m) old + m batch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (old, new) in self.mean.iter_mut().zip(&batch.mean) {
            *old = (1.0 - BN_MOMENTUM) * *old + BN_MOMENTUM * new;
        }
        for (old, new) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *old = (1.0 - BN_MOMENTUM) * *old + BN_MOMENTUM * new;
        }
    }
}

/// Statistics of one training batch. The running variance tracks the
/// unbiased estimate; normalization itself uses the biased one.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn channel_planes(x: &Tensor) -> Result<(usize, usize, usize)> {
    let [b, c, t, h, w] = x.dims5()?;
    Ok((b, c, t * h * w))
}

/// Pure forward pass. In train mode also returns the batch statistics the
/// caller should fold into the running stats.
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache, Option<BatchStats>)> {
    let (b, c, plane) = channel_planes(x)?;
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running stats", running.channels()),
    ] {
        if len != c {
            return Err(Error::InvalidShape {
                op: "batchnorm",
                detail: format!("{name} has {len} channels, input has {c}"),
            });
        }
    }
    let count = (b * plane) as f64;
    let (mean, var, batch) = match mode {
        Mode::Eval => (running.mean.clone(), running.var.clone(), None),
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for (idx, chunk) in x.data().chunks(plane).enumerate() {
                mean[idx % c] += chunk.iter().sum::<f64>();
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for (idx, chunk) in x.data().chunks(plane).enumerate() {
                let m = mean[idx % c];
                var[idx % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            let unbiased = var
                .iter()
                .map(|v| if count > 1.0 { v / (count - 1.0) } else { *v })
                .collect();
            var.iter_mut().for_each(|v| *v /= count);
            let stats = BatchStats {
                mean: mean.clone(),
                unbiased_var: unbiased,
            };
            (mean, var, Some(stats))
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = x.clone();
    let mut out = x.clone();
    for (idx, (n, o)) in normalized
        .data_mut()
        .chunks_mut(plane)
        .zip(out.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let ch = idx % c;
        let (m, s, g, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for (nv, ov) in n.iter_mut().zip(o.iter_mut()) {
            *nv = (*nv - m) * s;
            *ov = *nv * g + be;
        }
    }
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
            mode,
        },
        batch,
    ))
}

/// Forward pass that updates `running` in train mode.
pub fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    let (out, _, batch) = batchnorm_forward(x, gamma, beta, running, mode)?;
    if let Some(batch) = batch {
        running.update(&batch);
    }
    Ok(out)
}

/// Gradients `(input, gamma, beta)`.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    gamma: &Tensor,
    cache: &BatchNormCache,
) -> Result<(Tensor, Tensor, Tensor)> {
    grad_out.check_same_shape("batchnorm_backward", &cache.normalized)?;
    let (b, c, plane) = channel_planes(grad_out)?;
    let count = (b * plane) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for (idx, (dy, xh)) in grad_out
        .data()
        .chunks(plane)
        .zip(cache.normalized.data().chunks(plane))
        .enumerate()
    {
        let ch = idx % c;
        for (d, n) in dy.iter().zip(xh) {
            sum_dy[ch] += d;
            sum_dy_xhat[ch] += d * n;
        }
    }
    let mut gx = grad_out.clone();
    for (idx, (gxc, xh)) in gx
        .data_mut()
        .chunks_mut(plane)
        .zip(cache.normalized.data().chunks(plane))
        .enumerate()
    {
        let ch = idx % c;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Eval => gxc.iter_mut().for_each(|d| *d *= scale),
            Mode::Train => {
                let (sd, sdx) = (sum_dy[ch] / count, sum_dy_xhat[ch] / count);
                for (d, n) in gxc.iter_mut().zip(xh) {
                    *d = scale * (*d - sd - n * sdx);
                }
            }
        }
    }
    Ok((
        gx,
        Tensor::from_vec(vec![c], sum_dy_xhat)?,
        Tensor::from_vec(vec![c], sum_dy)?,
    ))
}
