use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{central_difference, grad_check, relative_error};
use crate::error::Result;
use crate::network::{combined_loss, Network, NetworkConfig, PoseMode};
use crate::pose::{pose_loss, quat_from_azimuth, Azimuth, Quaternion};
use crate::tensor::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, softmax_logloss, LayerParams, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Conv2d,
    Relu,
    Maxpool2,
    FullyConnected,
    SoftmaxLogloss,
    PoseLossAzimuth,
    PoseLossQuaternion,
    ObjCombo,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Conv2d,
        Component::Relu,
        Component::Maxpool2,
        Component::FullyConnected,
        Component::SoftmaxLogloss,
        Component::PoseLossAzimuth,
        Component::PoseLossQuaternion,
        Component::ObjCombo,
    ];

    /// Smooth kernels are held to 1e-6, the pose loss and the whole network
    /// to 1e-4.
    pub fn tolerance(self) -> f64 {
        match self {
            Component::PoseLossAzimuth | Component::PoseLossQuaternion | Component::ObjCombo => 1e-4,
            _ => 1e-6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv2d => "conv2d",
            Component::Relu => "relu",
            Component::Maxpool2 => "maxpool2",
            Component::FullyConnected => "fully_connected",
            Component::SoftmaxLogloss => "softmax_logloss",
            Component::PoseLossAzimuth => "pose_loss_azimuth",
            Component::PoseLossQuaternion => "pose_loss_quaternion",
            Component::ObjCombo => "obj_combo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Random instances per component.
    pub instances: usize,
    pub eps: f64,
    pub seed: u64,
    /// Network used for the whole-objective check.
    pub network: NetworkConfig,
    /// Parameters sampled per whole-network instance.
    pub network_coords: usize,
    pub lambda: f64,
    /// Negative-control fixture: scale this component's analytic gradient
    /// by 1.01 so the check must fail.
    pub corrupt: Option<Component>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 20,
            eps: 1e-5,
            seed: 0,
            network: NetworkConfig::gradcheck_small(),
            network_coords: 48,
            lambda: 1.0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub component: Component,
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
    /// Whole-network probes skipped because the perturbation crossed a kink
    /// or the sampled layer had no gradient above the roundoff floor.
    pub skipped: usize,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(ComponentResult::passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<22} worst_rel_err={:.3e} tol={:.0e} instances={} skipped={} {}",
                r.component.name(),
                r.worst,
                r.tolerance,
                r.instances,
                r.skipped,
                if r.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn rng_for(cfg: &GradcheckConfig, component: Component, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(instance as u64));
    rng.set_stream(component as u64 + 16);
    rng
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn corrupt(g: &mut [f64], on: bool) {
    if on {
        g.iter_mut().for_each(|v| *v *= 1.01);
    }
}

/// Smallest gradient entry a per-kernel instance may contain. Entries much
/// closer to zero are dominated by roundoff in the difference quotient, the
/// smooth analogue of sitting on a kink; such instances are redrawn.
const MIN_KERNEL_GRAD: f64 = 1e-2;

fn well_conditioned(parts: &[&[f64]]) -> bool {
    // exact zeros (flat ReLU region, pool losers) are exact on both sides
    parts.iter().all(|p| p.iter().all(|&g| g == 0.0 || g.abs() >= MIN_KERNEL_GRAD))
}

/// Random values bounded away from zero.
fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn check_conv(rng: &mut ChaCha8Rng, eps: f64, bad: bool) -> Result<f64> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let kernel = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    // choose an input extent the stride tiles exactly
    let out = rng.random_range(2..=4);
    let span = (out - 1) * stride + kernel;
    let pad = if span > 2 { rng.random_range(0..=1) } else { 0 };
    let size = span - 2 * pad;
    let x = Tensor::randn(&[n, c, size, size], 1.0, rng);
    let mut params = LayerParams::gaussian(&[k, c, kernel, kernel], k, 1.0, rng);
    params.bias = Tensor::randn(&[k], 1.0, rng);
    let (y, ctx) = conv2d_forward(&x, &params, stride, pad)?;
    let probe = Tensor::randn(y.shape(), 1.0, rng);
    let dx = conv2d_backward(&ctx, &mut params, &probe)?;
    if !well_conditioned(&[&dx.data, &params.weights.grad, &params.bias.grad]) {
        return check_conv(rng, eps, bad);
    }

    let (nx, nw) = (x.len(), params.weights.len());
    let point: Vec<f64> = [&x.data[..], &params.weights.data, &params.bias.data].concat();
    let mut analytic: Vec<f64> = [&dx.data[..], &params.weights.grad, &params.bias.grad].concat();
    corrupt(&mut analytic, bad);
    let (xs, ws, bs) = (x.shape().to_vec(), params.weights.shape().to_vec(), params.bias.shape().to_vec());
    let f = |v: &[f64]| {
        let x = Tensor::from_vec(&xs, v[..nx].to_vec()).unwrap();
        let p = LayerParams::new(
            Tensor::from_vec(&ws, v[nx..nx + nw].to_vec()).unwrap(),
            Tensor::from_vec(&bs, v[nx + nw..].to_vec()).unwrap(),
        );
        dot(&conv2d_forward(&x, &p, stride, pad).unwrap().0.data, &probe.data)
    };
    Ok(grad_check(f, &point, &analytic, eps))
}

fn check_relu(rng: &mut ChaCha8Rng, eps: f64, bad: bool) -> Result<f64> {
    let n = rng.random_range(4..40);
    let x = Tensor::from_vec(&[n], off_zero(rng, n))?;
    let (_, ctx) = relu_forward(&x)?;
    let probe = Tensor::randn(&[n], 1.0, rng);
    let mut analytic = relu_backward(&ctx, &probe)?.data;
    if !well_conditioned(&[&analytic]) {
        return check_relu(rng, eps, bad);
    }
    corrupt(&mut analytic, bad);
    // coordinates in the flat region have exactly zero gradient on both sides
    let f = |v: &[f64]| {
        let t = Tensor::from_vec(&[n], v.to_vec()).unwrap();
        dot(&relu_forward(&t).unwrap().0.data, &probe.data)
    };
    Ok(grad_check(f, &x.data, &analytic, eps))
}

fn check_maxpool(rng: &mut ChaCha8Rng, eps: f64, bad: bool) -> Result<f64> {
    let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
    let len = n * c * h * w;
    // distinct values at least 0.05 apart, so no window is within eps of a tie
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.05).collect();
    for i in (1..len).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::from_vec(&[n, c, h, w], vals)?;
    let (y, ctx) = maxpool2_forward(&x)?;
    let probe = Tensor::randn(y.shape(), 1.0, rng);
    let mut analytic = maxpool2_backward(&ctx, &probe)?.data;
    if !well_conditioned(&[&analytic]) {
        return check_maxpool(rng, eps, bad);
    }
    corrupt(&mut analytic, bad);
    let shape = x.shape().to_vec();
    let f = |v: &[f64]| {
        let t = Tensor::from_vec(&shape, v.to_vec()).unwrap();
        dot(&maxpool2_forward(&t).unwrap().0.data, &probe.data)
    };
    Ok(grad_check(f, &x.data, &analytic, eps))
}

fn check_fc(rng: &mut ChaCha8Rng, eps: f64, bad: bool) -> Result<f64> {
    let (n, fin, fout) = (rng.random_range(1..=3), rng.random_range(1..=8), rng.random_range(1..=6));
    let x = Tensor::randn(&[n, fin], 1.0, rng);
    let mut params = LayerParams::gaussian(&[fout, fin], fout, 1.0, rng);
    params.bias = Tensor::randn(&[fout], 1.0, rng);
    let (y, ctx) = fc_forward(&x, &params)?;
    let probe = Tensor::randn(y.shape(), 1.0, rng);
    let dx = fc_backward(&ctx, &mut params, &probe)?;
    if !well_conditioned(&[&dx.data, &params.weights.grad, &params.bias.grad]) {
        return check_fc(rng, eps, bad);
    }
    let (nx, nw) = (x.len(), params.weights.len());
    let point: Vec<f64> = [&x.data[..], &params.weights.data, &params.bias.data].concat();
    let mut analytic: Vec<f64> = [&dx.data[..], &params.weights.grad, &params.bias.grad].concat();
    corrupt(&mut analytic, bad);
    let f = |v: &[f64]| {
        let x = Tensor::from_vec(&[n, fin], v[..nx].to_vec()).unwrap();
        let p = LayerParams::new(
            Tensor::from_vec(&[fout, fin], v[nx..nx + nw].to_vec()).unwrap(),
            Tensor::from_vec(&[fout], v[nx + nw..].to_vec()).unwrap(),
        );
        dot(&fc_forward(&x, &p).unwrap().0.data, &probe.data)
    };
    Ok(grad_check(f, &point, &analytic, eps))
}

fn check_softmax(rng: &mut ChaCha8Rng, eps: f64, bad: bool) -> Result<f64> {
    let (n, c) = (rng.random_range(1..=6), rng.random_range(2..=6));
    let x = Tensor::randn(&[n, c], 1.0, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut analytic = softmax_logloss(&x, &labels)?.grad.data;
    if !well_conditioned(&[&analytic]) {
        return check_softmax(rng, eps, bad);
    }
    corrupt(&mut analytic, bad);
    let f = |v: &[f64]| {
        let t = Tensor::from_vec(&[n, c], v.to_vec()).unwrap();
        softmax_logloss(&t, &labels).unwrap().loss
    };
    Ok(grad_check(f, &x.data, &analytic, eps))
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.2 && n <= 1.0 {
            return q.normalize().expect("nonzero");
        }
    }
}

fn check_pose(rng: &mut ChaCha8Rng, eps: f64, bad: bool, dim: usize) -> Result<f64> {
    let n = rng.random_range(1..=8);
    let truths: Vec<Quaternion> = (0..n)
        .map(|_| {
            if dim == 2 {
                quat_from_azimuth(Azimuth::new(rng.random_range(0.0..std::f64::consts::TAU)))
            } else {
                random_unit_quaternion(rng)
            }
        })
        .collect();
    // keep |dot| away from 0 and 1 where the distance is not smooth
    let mut raw = Vec::with_capacity(n * dim);
    for q in &truths {
        let t: Vec<f64> = if dim == 2 { vec![q.w, q.z] } else { q.as_array().to_vec() };
        loop {
            let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let norm = dot(&r, &r).sqrt();
            if norm < 0.2 {
                continue;
            }
            let d = (dot(&r, &t) / norm).abs();
            if (0.05..0.95).contains(&d) {
                raw.extend(r);
                break;
            }
        }
    }
    let raw = Tensor::from_vec(&[n, dim], raw)?;
    let mut analytic = pose_loss(&raw, &truths)?.grad.data;
    corrupt(&mut analytic, bad);
    let f = |v: &[f64]| {
        let t = Tensor::from_vec(&[n, dim], v.to_vec()).unwrap();
        pose_loss(&t, &truths).unwrap().loss
    };
    Ok(grad_check(f, &raw.data, &analytic, eps))
}

const MIN_PROBE_GRAD: f64 = 1e-4;

/// Whole-network check on a sample of parameters. Coordinates whose
/// perturbation flips a ReLU or a pool argmax are skipped and counted.

fn check_network(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng, bad: bool) -> Result<(f64, usize)> {
    let mut netcfg = cfg.network.clone();
    if netcfg.pose_mode == PoseMode::None {
        netcfg.pose_mode = PoseMode::Azimuth;
    }
    let mut net = Network::build(netcfg.clone(), rng.random())?;
    for layer in net.layers_mut() {
        for b in &mut layer.bias.data {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    let [c, h, w] = netcfg.input;
    let n = 3;
    let x = Tensor::randn(&[n, c, h, w], 1.0, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..netcfg.classes)).collect();
    let truths: Vec<Quaternion> = (0..n)
        .map(|_| match netcfg.pose_mode {
            PoseMode::Quaternion => random_unit_quaternion(rng),
            _ => quat_from_azimuth(Azimuth::new(rng.random_range(0.0..std::f64::consts::TAU))),
        })
        .collect();
    let lambda = cfg.lambda;

    let objective = |net: &Network| -> Result<(f64, crate::network::ForwardOutput)> {
        let out = net.forward(&x)?;
        let loss = combined_loss(&out.logits, out.pose_raw.as_ref(), &labels, Some(&truths), lambda)?;
        Ok((loss.total, out))
    };
    let (_, base) = objective(&net)?;
    let loss = combined_loss(&base.logits, base.pose_raw.as_ref(), &labels, Some(&truths), lambda)?;
    net.zero_grad();
    net.backward(&base.cache, &loss.grads)?;

    let layers = net.layers().count();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for k in 0..cfg.network_coords {
        // cycle through layers so every one is sampled
        let layer = k % layers;
        // Only probe coordinates whose gradient stands clear of the
        // difference quotient's roundoff (dead units, saturated paths).
        let (is_bias, idx, mut analytic) = {
            let l = net.layers().nth(layer).unwrap();
            let eligible: Vec<(bool, usize)> = (l.weights.grad.iter().map(|g| (false, g)).enumerate())
                .chain(l.bias.grad.iter().map(|g| (true, g)).enumerate())
                .filter(|(_, (_, g))| g.abs() >= MIN_PROBE_GRAD)
                .map(|(i, (b, _))| (b, i))
                .collect();
            if eligible.is_empty() {
                skipped += 1;
                continue;
            }
            let (b, i) = eligible[rng.random_range(0..eligible.len())];
            (b, i, if b { l.bias.grad[i] } else { l.weights.grad[i] })
        };
        if bad {
            analytic *= 1.01;
        }
        let mut probe = net.clone();
        let mut kinked = false;
        let mut eval = |v: &[f64]| -> f64 {
            {
                let l = probe.layers_mut().nth(layer).unwrap();
                if is_bias {
                    l.bias.data[idx] = v[0];
                } else {
                    l.weights.data[idx] = v[0];
                }
            }
            let (f, out) = objective(&probe).expect("forward on perturbed network");
            kinked |= !out.cache.same_pattern(&base.cache);
            f
        };
        let start = {
            let l = net.layers().nth(layer).unwrap();
            if is_bias { l.bias.data[idx] } else { l.weights.data[idx] }
        };
        let numeric = central_difference(&mut eval, &mut [start], 0, cfg.eps);
        if kinked {
            skipped += 1;
            continue;
        }
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok((worst, skipped))
}

pub fn run_suite(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut results = Vec::new();
    for component in Component::ALL {
        let bad = cfg.corrupt == Some(component);
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        for i in 0..cfg.instances {
            let mut rng = rng_for(cfg, component, i);
            let err = match component {
                Component::Conv2d => check_conv(&mut rng, cfg.eps, bad)?,
                Component::Relu => check_relu(&mut rng, cfg.eps, bad)?,
                Component::Maxpool2 => check_maxpool(&mut rng, cfg.eps, bad)?,
                Component::FullyConnected => check_fc(&mut rng, cfg.eps, bad)?,
                Component::SoftmaxLogloss => check_softmax(&mut rng, cfg.eps, bad)?,
                Component::PoseLossAzimuth => check_pose(&mut rng, cfg.eps, bad, 2)?,
                Component::PoseLossQuaternion => check_pose(&mut rng, cfg.eps, bad, 4)?,
                Component::ObjCombo => {
                    let (e, s) = check_network(cfg, &mut rng, bad)?;
                    skipped += s;
                    e
                }
            };
            worst = worst.max(err);
        }
        results.push(ComponentResult {
            component,
            worst,
            tolerance: component.tolerance(),
            instances: cfg.instances,
            skipped,
        });
    }
    Ok(GradcheckReport { results })
}
