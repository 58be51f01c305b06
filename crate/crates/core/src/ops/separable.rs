//! Factorized spatiotemporal convolution: a `1 x kH x kW` spatial conv, an
//! optional intermediate activation, then a `kT x 1 x 1` temporal conv.

use crate::error::{Error, Result};
use crate::ops::activation::relu;
use crate::ops::conv::{conv3d, ConvSpec};
use crate::ops::norm::{batchnorm, Mode, RunningStats};
use crate::tensor::Tensor;

/// Weights of one convolution factor.
#[derive(Clone, Copy, Debug)]
pub struct ConvParams<'a> {
    pub spec: &'a ConvSpec,
    pub weight: &'a Tensor,
    pub bias: Option<&'a Tensor>,
}

/// What sits between the spatial and temporal factor.
#[derive(Debug)]
pub enum Intermediate<'a> {
    Identity,
    Relu,
    BatchNormRelu {
        gamma: &'a Tensor,
        beta: &'a Tensor,
        running: &'a mut RunningStats,
        mode: Mode,
    },
}

pub fn separable_conv3d(
    x: &Tensor,
    spatial: ConvParams<'_>,
    temporal: ConvParams<'_>,
    intermediate: Intermediate<'_>,
) -> Result<Tensor> {
    if spatial.spec.kernel[0] != 1 {
        return Err(Error::InvalidArgument(format!(
            "spatial factor must have a 1 x kH x kW kernel, got {:?}",
            spatial.spec.kernel
        )));
    }
    if temporal.spec.kernel[1..] != [1, 1] {
        return Err(Error::InvalidArgument(format!(
            "temporal factor must have a kT x 1 x 1 kernel, got {:?}",
            temporal.spec.kernel
        )));
    }
    let mid = conv3d(x, spatial.spec, spatial.weight, spatial.bias)?;
    let mid = match intermediate {
        Intermediate::Identity => mid,
        Intermediate::Relu => relu(&mid),
        Intermediate::BatchNormRelu {
            gamma,
            beta,
            running,
            mode,
        } => relu(&batchnorm(&mid, gamma, beta, running, mode)?),
    };
    conv3d(&mid, temporal.spec, temporal.weight, temporal.bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn delta(spec: &ConvSpec) -> Tensor {
        let mut w = Tensor::zeros(spec.weight_shape().to_vec());
        let [kt, kh, kw] = spec.kernel;
        for c in 0..spec.out_channels.min(spec.in_channels) {
            w.set(&[c, c, kt / 2, kh / 2, kw / 2], 1.0);
        }
        w
    }

    #[test]
    fn identity_factors() {
        let mut r = rng::seeded(21);
        let x = Tensor::uniform(vec![1, 2, 4, 5, 5], -1.0, 1.0, &mut r);
        let s = ConvSpec::new(2, 2, [1, 3, 3]).same_padding().no_bias();
        let t = ConvSpec::new(2, 2, [3, 1, 1]).same_padding().no_bias();
        let (ws, wt) = (delta(&s), delta(&t));
        let y = separable_conv3d(
            &x,
            ConvParams { spec: &s, weight: &ws, bias: None },
            ConvParams { spec: &t, weight: &wt, bias: None },
            Intermediate::Identity,
        )
        .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pointwise_factors_compose_as_matrices() {
        let mut r = rng::seeded(22);
        let x = Tensor::uniform(vec![1, 3, 2, 2, 2], -1.0, 1.0, &mut r);
        let s = ConvSpec::new(3, 4, [1, 1, 1]).no_bias();
        let t = ConvSpec::new(4, 2, [1, 1, 1]).no_bias();
        let ws = Tensor::uniform(s.weight_shape().to_vec(), -1.0, 1.0, &mut r);
        let wt = Tensor::uniform(t.weight_shape().to_vec(), -1.0, 1.0, &mut r);
        let y = separable_conv3d(
            &x,
            ConvParams { spec: &s, weight: &ws, bias: None },
            ConvParams { spec: &t, weight: &wt, bias: None },
            Intermediate::Identity,
        )
        .unwrap();
        // product matrix wt (2x4) * ws (4x3)
        let mut m = Tensor::zeros(vec![2, 3, 1, 1, 1]);
        for o in 0..2 {
            for i in 0..3 {
                let v: f64 = (0..4).map(|k| wt.data()[o * 4 + k] * ws.data()[k * 3 + i]).sum();
                m.set(&[o, i, 0, 0, 0], v);
            }
        }
        let direct = conv3d(&x, &ConvSpec::new(3, 2, [1, 1, 1]).no_bias(), &m, None).unwrap();
        for (a, b) in y.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equals_two_chained_convs() {
        let mut r = rng::seeded(23);
        let x = Tensor::uniform(vec![2, 2, 4, 6, 6], -1.0, 1.0, &mut r);
        let s = ConvSpec::new(2, 3, [1, 3, 3]).padding([0, 1, 1]).stride([1, 2, 2]);
        let t = ConvSpec::new(3, 3, [3, 1, 1]).padding([1, 0, 0]);
        let ws = Tensor::uniform(s.weight_shape().to_vec(), -1.0, 1.0, &mut r);
        let wt = Tensor::uniform(t.weight_shape().to_vec(), -1.0, 1.0, &mut r);
        let (bs, bt) = (Tensor::uniform(vec![3], -1.0, 1.0, &mut r), Tensor::uniform(vec![3], -1.0, 1.0, &mut r));
        let y = separable_conv3d(
            &x,
            ConvParams { spec: &s, weight: &ws, bias: Some(&bs) },
            ConvParams { spec: &t, weight: &wt, bias: Some(&bt) },
            Intermediate::Relu,
        )
        .unwrap();
        let mid = relu(&conv3d(&x, &s, &ws, Some(&bs)).unwrap());
        let expect = conv3d(&mid, &t, &wt, Some(&bt)).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn rejects_wrong_factor_shapes() {
        let x = Tensor::zeros(vec![1, 1, 3, 3, 3]);
        let s = ConvSpec::new(1, 1, [3, 3, 3]);
        let w = Tensor::zeros(s.weight_shape().to_vec());
        let b = Tensor::zeros(vec![1]);
        let p = ConvParams { spec: &s, weight: &w, bias: Some(&b) };
        assert!(separable_conv3d(&x, p, p, Intermediate::Identity).is_err());
    }
}
