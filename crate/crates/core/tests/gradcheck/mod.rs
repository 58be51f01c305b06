//! Central-finite-difference checks for every operator and the tiny network.
//! Shared by the core integration tests and the acceptance target.

#![allow(dead_code)]

use rand::Rng;
use tased_core::model::{ModelConfig, Network};
use tased_core::ops::{
    self, batchnorm_backward, batchnorm_forward, conv3d, conv3d_backward, maxpool3d_backward,
    maxpool3d_with_switches, maxunpool3d, maxunpool3d_backward, transposed_conv3d, transposed_conv3d_backward,
    trilinear_upsample, trilinear_upsample_backward, ConvSpec, Mode, RunningStats,
};
use tased_core::rng::{self, Prng};
use tased_core::tape::Tape;
use tased_core::tensor::{check_close, finite_difference_grad};
use tased_core::train::{kl_loss, kl_loss_with_grad};
use tased_core::Tensor;

pub const RTOL: f64 = 1e-3;
pub const ATOL: f64 = 1e-4;
pub const EPS: f64 = 1e-6;
pub const SEEDS: u64 = 20;

pub type Check = fn(u64) -> Result<(), String>;

pub const OPS: &[(&str, Check)] = &[
    ("conv3d", conv),
    ("transposed_conv3d", transposed),
    ("maxpool3d", maxpool),
    ("maxunpool3d", maxunpool),
    ("batchnorm (train)", batchnorm_train),
    ("batchnorm (eval)", batchnorm_eval),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("trilinear_upsample", trilinear),
    ("separable_conv3d (tape)", separable),
    ("aux-pooled unpooling (tape)", aux_unpool),
    ("kl_loss", kl),
];

fn err(e: tased_core::Error) -> String {
    e.to_string()
}

/// `<out, r>` with a fixed random projection, so every output element
/// contributes to the checked gradient.
fn project(out: &Tensor, r: &Tensor) -> f64 {
    out.dot(r).expect("projection shape")
}

fn close(what: &str, analytic: &Tensor, numeric: &Tensor) -> Result<(), String> {
    check_close(analytic, numeric, RTOL, ATOL).map_err(|e| format!("{what}: {e}"))
}

fn fd(f: impl FnMut(&Tensor) -> tased_core::Result<f64>, x: &Tensor) -> Result<Tensor, String> {
    finite_difference_grad(f, x, EPS).map_err(err)
}

fn random_spec(r: &mut Prng) -> ConvSpec {
    let kernel = [r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3)];
    let stride = [r.random_range(1..=2), r.random_range(1..=2), r.random_range(1..=2)];
    let padding = [0, 1, 2].map(|a| r.random_range(0..kernel[a]));
    let mut spec = ConvSpec::new(r.random_range(1..=3), r.random_range(1..=3), kernel)
        .stride(stride)
        .padding(padding);
    if r.random_bool(0.5) {
        spec = spec.no_bias();
    }
    spec
}

fn uniform(shape: Vec<usize>, r: &mut Prng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

pub fn conv(seed: u64) -> Result<(), String> {
    let mut r = rng::child(1, seed);
    let spec = random_spec(&mut r);
    let dims = [0, 1, 2].map(|a| spec.kernel[a] + r.random_range(0..3));
    let x = uniform(vec![r.random_range(1..=2), spec.in_channels, dims[0], dims[1], dims[2]], &mut r);
    let w = uniform(spec.weight_shape().to_vec(), &mut r);
    let b = uniform(vec![spec.out_channels], &mut r);
    let bias = spec.bias.then_some(&b);
    let out = conv3d(&x, &spec, &w, bias).map_err(err)?;
    let proj = uniform(out.shape().to_vec(), &mut r);
    let (gx, gw, gb) = conv3d_backward(&x, &spec, &w, &proj).map_err(err)?;
    close("input", &gx, &fd(|x| Ok(project(&conv3d(x, &spec, &w, bias)?, &proj)), &x)?)?;
    close("weight", &gw, &fd(|w| Ok(project(&conv3d(&x, &spec, w, bias)?, &proj)), &w)?)?;
    if let Some(gb) = gb {
        close("bias", &gb, &fd(|b| Ok(project(&conv3d(&x, &spec, &w, Some(b))?, &proj)), &b)?)?;
    }
    Ok(())
}

pub fn transposed(seed: u64) -> Result<(), String> {
    let mut r = rng::child(2, seed);
    let spec = random_spec(&mut r);
    let dims = [r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3)];
    let x = uniform(vec![r.random_range(1..=2), spec.in_channels, dims[0], dims[1], dims[2]], &mut r);
    let w = uniform(spec.transposed_weight_shape().to_vec(), &mut r);
    let b = uniform(vec![spec.out_channels], &mut r);
    let bias = spec.bias.then_some(&b);
    let out = match transposed_conv3d(&x, &spec, &w, bias) {
        Ok(out) => out,
        // padding larger than the produced output; draw is not a valid layer
        Err(_) => return Ok(()),
    };
    let proj = uniform(out.shape().to_vec(), &mut r);
    let (gx, gw, gb) = transposed_conv3d_backward(&x, &spec, &w, &proj).map_err(err)?;
    close("input", &gx, &fd(|x| Ok(project(&transposed_conv3d(x, &spec, &w, bias)?, &proj)), &x)?)?;
    close("weight", &gw, &fd(|w| Ok(project(&transposed_conv3d(&x, &spec, w, bias)?, &proj)), &w)?)?;
    if let Some(gb) = gb {
        close("bias", &gb, &fd(|b| Ok(project(&transposed_conv3d(&x, &spec, &w, Some(b))?, &proj)), &b)?)?;
    }
    Ok(())
}

/// Distinct values spaced well apart, so a finite-difference step never
/// changes an argmax.
fn separated(shape: Vec<usize>, r: &mut Prng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let data = order.iter().map(|&k| k as f64 / n as f64 - 0.5).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

pub fn maxpool(seed: u64) -> Result<(), String> {
    let mut r = rng::child(3, seed);
    let kernel = [r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3)];
    let stride = [0, 1, 2].map(|a| r.random_range(1..=kernel[a]));
    let dims = [0, 1, 2].map(|a| kernel[a] + r.random_range(0..3));
    let x = separated(vec![2, 2, dims[0], dims[1], dims[2]], &mut r);
    let (out, s) = maxpool3d_with_switches(&x, kernel, stride).map_err(err)?;
    let proj = uniform(out.shape().to_vec(), &mut r);
    let gx = maxpool3d_backward(&proj, &s).map_err(err)?;
    close(
        "input",
        &gx,
        &fd(|x| Ok(project(&maxpool3d_with_switches(x, kernel, stride)?.0, &proj)), &x)?,
    )
}

pub fn maxunpool(seed: u64) -> Result<(), String> {
    let mut r = rng::child(4, seed);
    let source = separated(vec![1, 2, 2, 4, 6], &mut r);
    let (pooled, s) = maxpool3d_with_switches(&source, [1, 2, 2], [1, 2, 2]).map_err(err)?;
    let z = uniform(pooled.shape().to_vec(), &mut r);
    let shape = s.unpooled_shape();
    let proj = uniform(shape.to_vec(), &mut r);
    let gz = maxunpool3d_backward(&proj, &s).map_err(err)?;
    close("input", &gz, &fd(|z| Ok(project(&maxunpool3d(z, &s, shape)?, &proj)), &z)?)
}

fn bn_case(seed: u64, stream: u64, mode: Mode) -> Result<(), String> {
    let mut r = rng::child(stream, seed);
    let c = r.random_range(1..=3);
    let x = Tensor::uniform(vec![2, c, 2, 2, 3], -2.0, 2.0, &mut r);
    let gamma = Tensor::uniform(vec![c], 0.5, 1.5, &mut r);
    let beta = uniform(vec![c], &mut r);
    let mut running = RunningStats::new(c);
    running.mean = (0..c).map(|_| r.random_range(-0.5..0.5)).collect();
    running.var = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
    let f = |x: &Tensor, g: &Tensor, b: &Tensor| -> tased_core::Result<Tensor> {
        Ok(batchnorm_forward(x, g, b, &running, mode)?.0)
    };
    let (out, cache, _) = batchnorm_forward(&x, &gamma, &beta, &running, mode).map_err(err)?;
    let proj = uniform(out.shape().to_vec(), &mut r);
    let (gx, gg, gb) = batchnorm_backward(&proj, &gamma, &cache).map_err(err)?;
    close("input", &gx, &fd(|x| Ok(project(&f(x, &gamma, &beta)?, &proj)), &x)?)?;
    close("gamma", &gg, &fd(|g| Ok(project(&f(&x, g, &beta)?, &proj)), &gamma)?)?;
    close("beta", &gb, &fd(|b| Ok(project(&f(&x, &gamma, b)?, &proj)), &beta)?)
}

pub fn batchnorm_train(seed: u64) -> Result<(), String> {
    bn_case(seed, 5, Mode::Train)
}

pub fn batchnorm_eval(seed: u64) -> Result<(), String> {
    bn_case(seed, 6, Mode::Eval)
}

/// Values bounded away from 0 so the kink is never straddled.
fn off_zero(shape: Vec<usize>, r: &mut Prng) -> Tensor {
    let t = Tensor::uniform(shape, 0.05, 1.0, r);
    let signs: Vec<f64> = t.data().iter().map(|&v| if r.random_bool(0.5) { v } else { -v }).collect();
    Tensor::from_vec(t.shape().to_vec(), signs).expect("shape")
}

pub fn relu(seed: u64) -> Result<(), String> {
    let mut r = rng::child(7, seed);
    let x = off_zero(vec![1, 2, 2, 3, 3], &mut r);
    let proj = uniform(x.shape().to_vec(), &mut r);
    let gx = ops::relu_backward(&x, &proj).map_err(err)?;
    close("input", &gx, &fd(|x| Ok(project(&ops::relu(x), &proj)), &x)?)
}

pub fn sigmoid(seed: u64) -> Result<(), String> {
    let mut r = rng::child(8, seed);
    let x = Tensor::uniform(vec![1, 2, 2, 3, 3], -6.0, 6.0, &mut r);
    let proj = uniform(x.shape().to_vec(), &mut r);
    let gx = ops::sigmoid_backward(&ops::sigmoid(&x), &proj).map_err(err)?;
    close("input", &gx, &fd(|x| Ok(project(&ops::sigmoid(x), &proj)), &x)?)
}

pub fn trilinear(seed: u64) -> Result<(), String> {
    let mut r = rng::child(9, seed);
    let scale = [r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3)];
    let x = uniform(vec![1, 2, r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=4)], &mut r);
    let out = trilinear_upsample(&x, scale).map_err(err)?;
    let proj = uniform(out.shape().to_vec(), &mut r);
    let gx = trilinear_upsample_backward(&proj, scale).map_err(err)?;
    close("input", &gx, &fd(|x| Ok(project(&trilinear_upsample(x, scale)?, &proj)), &x)?)
}

/// Spatial conv, batch norm, ReLU, temporal conv composed on the tape;
/// checks the input and both weights.
pub fn separable(seed: u64) -> Result<(), String> {
    let mut r = rng::child(10, seed);
    let (cin, cmid, cout) = (2, 3, 2);
    let spatial = ConvSpec::new(cin, cmid, [1, 3, 3]).padding([0, 1, 1]).no_bias();
    let temporal = ConvSpec::new(cmid, cout, [3, 1, 1]).padding([1, 0, 0]);
    let x = uniform(vec![2, cin, 3, 4, 4], &mut r);
    let ws = uniform(spatial.weight_shape().to_vec(), &mut r);
    let wt = uniform(temporal.weight_shape().to_vec(), &mut r);
    let bt = uniform(vec![cout], &mut r);
    let gamma = Tensor::uniform(vec![cmid], 0.5, 1.5, &mut r);
    let beta = uniform(vec![cmid], &mut r);
    let running = RunningStats::new(cmid);
    let proj = uniform(vec![2, cout, 3, 4, 4], &mut r);

    let forward = |x: &Tensor, ws: &Tensor, wt: &Tensor, record: bool| -> tased_core::Result<(Tape, [tased_core::tape::Var; 4])> {
        let mut tape = if record { Tape::new() } else { Tape::inference() };
        let vx = tape.leaf(x.clone());
        let vs = tape.param(0, ws.clone());
        let vt = tape.param(1, wt.clone());
        let vb = tape.param(2, bt.clone());
        let vg = tape.param(3, gamma.clone());
        let vbe = tape.param(4, beta.clone());
        let h = tape.conv3d(vx, vs, None, spatial)?;
        let (h, _) = tape.batchnorm(h, vg, vbe, &running, Mode::Train)?;
        let h = tape.relu(h);
        let y = tape.conv3d(h, vt, Some(vb), temporal)?;
        Ok((tape, [vx, vs, vt, y]))
    };
    let loss = |x: &Tensor, ws: &Tensor, wt: &Tensor| -> tased_core::Result<f64> {
        let (tape, v) = forward(x, ws, wt, false)?;
        Ok(project(tape.value(v[3]), &proj))
    };
    let (tape, [vx, vs, vt, y]) = forward(&x, &ws, &wt, true).map_err(err)?;
    let grads = tape.backward_with(y, proj.clone()).map_err(err)?;
    close("input", grads.get(vx).expect("input grad"), &fd(|x| loss(x, &ws, &wt), &x)?)?;
    close("spatial weight", grads.get(vs).expect("ws grad"), &fd(|w| loss(&x, w, &wt), &ws)?)?;
    close("temporal weight", grads.get(vt).expect("wt grad"), &fd(|w| loss(&x, &ws, w), &wt)?)
}

/// Unpooling driven by auxiliary-pooled switches of a separate encoder map.
pub fn aux_unpool(seed: u64) -> Result<(), String> {
    let mut r = rng::child(11, seed);
    let k = [1, 2, 4][r.random_range(0..3)];
    let encoder = separated(vec![1, 2, 2 * k, 4, 6], &mut r);
    let s = ops::aux_pool_pair(&encoder, k, [2, 2]).map_err(err)?;
    let z = uniform(s.shape().to_vec(), &mut r);
    let shape = s.unpooled_shape();
    let proj = uniform(shape.to_vec(), &mut r);
    let mut tape = Tape::new();
    let vz = tape.leaf(z.clone());
    let y = tape.maxunpool(vz, s.clone(), shape).map_err(err)?;
    let grads = tape.backward_with(y, proj.clone()).map_err(err)?;
    close(
        "input",
        grads.get(vz).expect("grad"),
        &fd(|z| Ok(project(&maxunpool3d(z, &s, shape)?, &proj)), &z)?,
    )
}

pub fn kl(seed: u64) -> Result<(), String> {
    let mut r = rng::child(12, seed);
    let p = Tensor::uniform(vec![2, 1, 4, 5], 0.05, 1.0, &mut r);
    let g = Tensor::uniform(vec![2, 1, 4, 5], 0.0, 1.0, &mut r);
    let (_, grad) = kl_loss_with_grad(&p, &g, 1e-7).map_err(err)?;
    close("prediction", &grad, &fd(|p| kl_loss(p, &g, 1e-7), &p)?)
}

/// End-to-end tiny network in train mode: KL loss of the output against a
/// random target, checked at random parameter and input coordinates.
pub fn tiny_network(seed: u64) -> Result<(), String> {
    let mut r = rng::child(13, seed);
    let net = Network::build(&ModelConfig::tiny(16).with_seed(seed)).map_err(err)?;
    let x = uniform(net.input_shape(2).to_vec(), &mut r);
    let [h, w] = net.config().input_size;
    let target = Tensor::uniform(vec![2, 1, h, w], 0.0, 1.0, &mut r);

    let loss_of = |net: &Network, x: &Tensor| -> tased_core::Result<f64> {
        let mut tape = Tape::inference();
        let vx = tape.leaf(x.clone());
        let (y, _) = net.forward_tape(&mut tape, vx, Mode::Train)?;
        kl_loss(tape.value(y), &target, 1e-7)
    };

    let mut tape = Tape::new();
    let vx = tape.leaf(x.clone());
    let (y, _) = net.forward_tape(&mut tape, vx, Mode::Train).map_err(err)?;
    let (_, gy) = kl_loss_with_grad(tape.value(y), &target, 1e-7).map_err(err)?;
    let grads = tape.backward_with(y, gy).map_err(err)?;
    let mut analytic: Vec<Option<Tensor>> = vec![None; net.params().len()];
    for (i, g) in grads.params() {
        analytic[i] = Some(g.clone());
    }

    // every parameter tensor, two random coordinates each
    for (i, p) in net.params().iter().enumerate() {
        let a = analytic[i].as_ref().ok_or_else(|| format!("{} received no gradient", p.name))?;
        for _ in 0..2 {
            let k = r.random_range(0..p.numel());
            let eval = |delta: f64| {
                let mut moved = net.clone();
                moved.params_mut()[i].value.data_mut()[k] += delta;
                loss_of(&moved, &x)
            };
            compare_any(&format!("{}[{k}]", p.name), a.data()[k], &numeric_candidates(eval).map_err(err)?)?;
        }
    }
    let gx = grads.get(vx).expect("input grad");
    for _ in 0..8 {
        let k = r.random_range(0..x.len());
        let eval = |delta: f64| {
            let mut moved = x.clone();
            moved.data_mut()[k] += delta;
            loss_of(&net, &moved)
        };
        compare_any(&format!("input[{k}]"), gx.data()[k], &numeric_candidates(eval).map_err(err)?)?;
    }
    Ok(())
}

fn compare(what: &str, analytic: f64, numeric: f64) -> Result<(), String> {
    if (analytic - numeric).abs() > ATOL + RTOL * numeric.abs() {
        return Err(format!("{what}: analytic {analytic}, numeric {numeric}"));
    }
    Ok(())
}

/// Admissible numeric gradients: the central difference at the first step
/// (from `EPS` down) whose one-sided slopes agree within tolerance. If every
/// step straddles a ReLU or max-pool kink, the point is non-differentiable and
/// either one-sided slope at the smallest step is accepted.
fn numeric_candidates(mut f: impl FnMut(f64) -> tased_core::Result<f64>) -> tased_core::Result<Vec<f64>> {
    let zero = f(0.0)?;
    let mut sides = Vec::new();
    for h in [EPS, EPS / 10.0, EPS / 100.0] {
        let (plus, minus) = (f(h)?, f(-h)?);
        let (fwd, bwd) = ((plus - zero) / h, (zero - minus) / h);
        let central = (plus - minus) / (2.0 * h);
        if (fwd - bwd).abs() <= ATOL + RTOL * central.abs() {
            return Ok(vec![central]);
        }
        sides = vec![fwd, bwd];
    }
    Ok(sides)
}

fn compare_any(what: &str, analytic: f64, candidates: &[f64]) -> Result<(), String> {
    if candidates.iter().any(|&n| compare(what, analytic, n).is_ok()) {
        return Ok(());
    }
    Err(format!("{what}: analytic {analytic}, numeric {candidates:?}"))
}

/// Runs every check over `seeds` seeds; returns `(name, failures)`.
pub fn run_suite(seeds: u64) -> Vec<(&'static str, Vec<String>)> {
    let mut checks: Vec<(&'static str, Check)> = OPS.to_vec();
    checks.push(("tiny network end-to-end", tiny_network));
    checks
        .into_iter()
        .map(|(name, check)| {
            let failures = (0..seeds)
                .filter_map(|s| check(s).err().map(|e| format!("seed {s}: {e}")))
                .collect();
            (name, failures)
        })
        .collect()
}
