//! The convolutional classifier with an optional auxiliary pose head.
//!
//! The trunk is a stack of conv → ReLU → (pool) stages followed by a fully
//! connected hidden layer with ReLU. The classification head maps the top
//! hidden layer to class logits. The pose head is a single linear layer
//! reading one hidden layer (the top one by default) and contributes
//! `(N + 1) × p_d` parameters, where `N` is the width of that layer. It only
//! shapes the shared weights through its gradient and can be stripped after
//! training without touching anything else.

mod config;

pub use config::{ConvSpec, NetworkConfig, PoseMode};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pose::{pose_loss, Quaternion};
use crate::tensor::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, softmax_logloss, ConvCtx, FcCtx, LayerParams, PoolCtx, ReluCtx,
    Tensor,
};

/// RNG stream used for the pose head, kept apart from the shared layers so
/// that baseline and pose-aware networks built from one seed agree on every
/// shared parameter.
const POSE_HEAD_STREAM: u64 = 1;

#[derive(Debug)]
pub struct Network {
    config: NetworkConfig,
    seed: u64,
    convs: Vec<LayerParams>,
    hidden: LayerParams,
    class_head: LayerParams,
    pose_head: Option<LayerParams>,
    /// Bumped whenever parameter values change.
    version: u64,
    trunk_evals: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            config: self.config.clone(),
            seed: self.seed,
            convs: self.convs.clone(),
            hidden: self.hidden.clone(),
            class_head: self.class_head.clone(),
            pose_head: self.pose_head.clone(),
            version: self.version,
            trunk_evals: AtomicU64::new(self.trunk_evals.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Network {
    /// Structural equality on configuration, seed and parameters.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.seed == other.seed && self.layers().eq(other.layers())
    }
}

struct StageCache {
    conv: ConvCtx,
    relu: ReluCtx,
    pool: Option<PoolCtx>,
}

/// Everything [`Network::backward`] needs from a forward pass.
pub struct Cache {
    version: u64,
    batch: usize,
    stages: Vec<StageCache>,
    hidden_fc: FcCtx,
    hidden_relu: ReluCtx,
    class_fc: FcCtx,
    pose_fc: Option<FcCtx>,
    tap_shape: Vec<usize>,
}

impl Cache {
    pub fn batch_len(&self) -> usize {
        self.batch
    }

    /// True when every ReLU mask and pool argmax agrees with `other`, i.e.
    /// both passes lie in the same smooth piece of the network function.
    pub fn same_pattern(&self, other: &Cache) -> bool {
        self.stages.len() == other.stages.len()
            && self.stages.iter().zip(&other.stages).all(|(a, b)| {
                a.relu.mask() == b.relu.mask()
                    && match (&a.pool, &b.pool) {
                        (Some(p), Some(q)) => p.argmax() == q.argmax(),
                        (None, None) => true,
                        _ => false,
                    }
            })
            && self.hidden_relu.mask() == other.hidden_relu.mask()
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    pub pose_raw: Option<Tensor>,
    pub cache: Cache,
}

/// Gradients arriving at the two heads.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub class: Tensor,
    pub pose: Option<Tensor>,
}

/// Value of the combined objective on one batch, split by term.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    /// `class + lambda · pose`.
    pub total: f64,
    pub class: f64,
    /// Unweighted pose term; `None` without a pose head.
    pub pose: Option<f64>,
    pub lambda: f64,
    pub pose_distances: Vec<f64>,
    pub grads: HeadGrads,
}

/// Softmax log-loss plus `lambda` times the pose loss.
///
/// With `lambda == 0` the pose term is still evaluated and reported but no
/// gradient is sent into the pose head.
pub fn combined_loss(
    logits: &Tensor,
    pose_raw: Option<&Tensor>,
    labels: &[usize],
    truth: Option<&[Quaternion]>,
    lambda: f64,
) -> Result<CombinedLoss> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let class = softmax_logloss(logits, labels)?;
    let Some(raw) = pose_raw else {
        return Ok(CombinedLoss {
            total: class.loss,
            class: class.loss,
            pose: None,
            lambda,
            pose_distances: Vec::new(),
            grads: HeadGrads {
                class: class.grad,
                pose: None,
            },
        });
    };
    let truth = truth.ok_or_else(|| Error::Data("pose head present but no pose truth supplied".into()))?;
    let pose = pose_loss(raw, truth)?;
    let pose_grad = (lambda != 0.0).then(|| {
        let mut g = pose.grad.clone();
        g.data.iter_mut().for_each(|v| *v *= lambda);
        g
    });
    Ok(CombinedLoss {
        total: class.loss + lambda * pose.loss,
        class: class.loss,
        pose: Some(pose.loss),
        lambda,
        pose_distances: pose.distances,
        grads: HeadGrads {
            class: class.grad,
            pose: pose_grad,
        },
    })
}

impl Network {
    /// Gaussian weights with `config.init_std`, zero biases and velocities.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let std = config.init_std;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_channels = config.input[0];
        let mut convs = Vec::with_capacity(config.conv.len());
        for s in &config.conv {
            convs.push(LayerParams::gaussian(
                &[s.filters, in_channels, s.kernel, s.kernel],
                s.filters,
                std,
                &mut rng,
            ));
            in_channels = s.filters;
        }
        let flat = config.flat_features()?;
        let hidden = LayerParams::gaussian(&[config.hidden, flat], config.hidden, std, &mut rng);
        let class_head =
            LayerParams::gaussian(&[config.classes, config.hidden], config.classes, std, &mut rng);
        let pose_head = match config.pose_mode.dim() {
            0 => None,
            dim => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(POSE_HEAD_STREAM);
                let width = config.hidden_width(config.tap_index())?;
                Some(LayerParams::gaussian(&[dim, width], dim, std, &mut rng))
            }
        };
        Ok(Network {
            config,
            seed,
            convs,
            hidden,
            class_head,
            pose_head,
            version: 0,
            trunk_evals: AtomicU64::new(0),
        })
    }

    /// Reassemble a network from parameters in [`Network::layers`] order.
    pub fn from_layers(config: NetworkConfig, seed: u64, layers: Vec<LayerParams>) -> Result<Network> {
        let template = Network::build(config.clone(), seed)?;
        if layers.len() != template.layers().count() {
            return Err(Error::Dimension(format!(
                "expected {} layers, got {}",
                template.layers().count(),
                layers.len()
            )));
        }
        for (i, (a, b)) in template.layers().zip(&layers).enumerate() {
            if a.weights.shape() != b.weights.shape() || a.bias.shape() != b.bias.shape() {
                return Err(Error::Dimension(format!("layer {i} shape mismatch")));
            }
        }
        let mut it = layers.into_iter();
        let convs = (0..config.conv.len()).map(|_| it.next().unwrap()).collect();
        let hidden = it.next().unwrap();
        let class_head = it.next().unwrap();
        let pose_head = it.next();
        Ok(Network {
            config,
            seed,
            convs,
            hidden,
            class_head,
            pose_head,
            version: 0,
            trunk_evals: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_pose_head(&self) -> bool {
        self.pose_head.is_some()
    }

    /// Conv stages, hidden layer, class head, then the pose head if present.
    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.convs
            .iter()
            .chain([&self.hidden, &self.class_head])
            .chain(self.pose_head.as_ref())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.version += 1;
        self.convs
            .iter_mut()
            .chain([&mut self.hidden, &mut self.class_head])
            .chain(self.pose_head.as_mut())
    }

    /// Layers present in both the baseline and pose-aware variants.
    pub fn shared_layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.convs.iter().chain([&self.hidden, &self.class_head])
    }

    pub fn pose_head(&self) -> Option<&LayerParams> {
        self.pose_head.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(LayerParams::param_count).sum()
    }

    pub fn pose_head_param_count(&self) -> usize {
        self.pose_head.as_ref().map_or(0, LayerParams::param_count)
    }

    /// How many times the trunk has been evaluated.
    pub fn trunk_evaluations(&self) -> u64 {
        self.trunk_evals.load(Ordering::Relaxed)
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut_untracked() {
            l.zero_grad();
        }
    }

    fn layers_mut_untracked(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.convs
            .iter_mut()
            .chain([&mut self.hidden, &mut self.class_head])
            .chain(self.pose_head.as_mut())
    }

    /// A copy with cleared gradient buffers, for accumulating one slice of a
    /// batch.
    pub fn worker(&self) -> Network {
        let mut w = self.clone();
        w.zero_grad();
        w
    }

    /// Add the gradient buffers of `other` (same architecture) into `self`.
    pub fn accumulate_grad(&mut self, other: &Network) {
        for (a, b) in self.layers_mut_untracked().zip(other.layers()) {
            a.accumulate_grad(b);
        }
    }

    /// Copy of this network with the pose head removed. Every remaining
    /// parameter is carried over untouched.
    pub fn strip_pose_head(&self) -> Result<Network> {
        if self.pose_head.is_none() {
            return Err(Error::State("network has no pose head to strip".into()));
        }
        let mut stripped = self.clone();
        stripped.pose_head = None;
        stripped.config.pose_mode = PoseMode::None;
        stripped.config.pose_tap = None;
        stripped.trunk_evals = AtomicU64::new(0);
        Ok(stripped)
    }

    /// Runs the trunk once and both heads on its activations.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardOutput> {
        let [c, h, w] = self.config.input;
        let n = match batch.shape() {
            &[n, bc, bh, bw] if [bc, bh, bw] == [c, h, w] => n,
            s => {
                return Err(Error::Dimension(format!(
                    "batch {s:?} does not match network input {:?}",
                    self.config.input
                )))
            }
        };
        self.trunk_evals.fetch_add(1, Ordering::Relaxed);
        let tap = self.pose_head.as_ref().map(|_| self.config.tap_index());

        let mut stages = Vec::with_capacity(self.convs.len());
        let mut x = batch.clone();
        let mut pose_in = None;
        for (i, (spec, params)) in self.config.conv.iter().zip(&self.convs).enumerate() {
            let (y, conv) = conv2d_forward(&x, params, spec.stride, spec.pad)?;
            let (y, relu) = relu_forward(&y)?;
            let (y, pool) = if spec.pool {
                let (p, ctx) = maxpool2_forward(&y)?;
                (p, Some(ctx))
            } else {
                (y, None)
            };
            if tap == Some(i) {
                pose_in = Some(y.clone());
            }
            stages.push(StageCache { conv, relu, pool });
            x = y;
        }
        let (hid, hidden_fc) = fc_forward(&x, &self.hidden)?;
        let (hid, hidden_relu) = relu_forward(&hid)?;
        if tap == Some(self.convs.len()) {
            pose_in = Some(hid.clone());
        }
        let (logits, class_fc) = fc_forward(&hid, &self.class_head)?;
        let (pose_raw, pose_fc, tap_shape) = match (&self.pose_head, pose_in) {
            (Some(head), Some(input)) => {
                let shape = input.shape().to_vec();
                let (raw, ctx) = fc_forward(&input, head)?;
                (Some(raw), Some(ctx), shape)
            }
            _ => (None, None, Vec::new()),
        };
        Ok(ForwardOutput {
            logits,
            pose_raw,
            cache: Cache {
                version: self.version,
                batch: n,
                stages,
                hidden_fc,
                hidden_relu,
                class_fc,
                pose_fc,
                tap_shape,
            },
        })
    }

    /// Class logits; any pose output is discarded.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(batch)?.logits)
    }

    /// Accumulates gradients of every parameter given the gradients at the
    /// heads. The pose head and its tap receive gradient only when
    /// `grads.pose` is present.
    pub fn backward(&mut self, cache: &Cache, grads: &HeadGrads) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::State(format!(
                "forward cache is from parameter version {}, network is at {}",
                cache.version, self.version
            )));
        }
        if cache.stages.len() != self.convs.len() || cache.pose_fc.is_some() != self.pose_head.is_some() {
            return Err(Error::State("forward cache does not match this network".into()));
        }
        let mut tap_grad = match (&grads.pose, &mut self.pose_head, &cache.pose_fc) {
            (Some(g), Some(head), Some(ctx)) => {
                let d = fc_backward(ctx, head, g)?;
                debug_assert_eq!(d.shape(), cache.tap_shape.as_slice());
                Some(d)
            }
            (Some(_), _, _) => {
                return Err(Error::State("pose gradient given but network has no pose head".into()))
            }
            _ => None,
        };
        let tap = self.config.tap_index();

        let mut g = fc_backward(&cache.class_fc, &mut self.class_head, &grads.class)?;
        if tap == self.convs.len() {
            if let Some(t) = tap_grad.take() {
                add_into(&mut g, &t);
            }
        }
        let g = relu_backward(&cache.hidden_relu, &g)?;
        let mut g = fc_backward(&cache.hidden_fc, &mut self.hidden, &g)?;
        for (i, stage) in cache.stages.iter().enumerate().rev() {
            if tap == i {
                if let Some(t) = tap_grad.take() {
                    add_into(&mut g, &t);
                }
            }
            if let Some(pool) = &stage.pool {
                g = maxpool2_backward(pool, &g)?;
            }
            g = relu_backward(&stage.relu, &g)?;
            g = conv2d_backward(&stage.conv, &mut self.convs[i], &g)?;
        }
        Ok(())
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}
