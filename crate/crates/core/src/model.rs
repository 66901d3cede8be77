//! The trainable pieces: an MLP feature extractor with hand-written
//! backpropagation, the super-class classifier `V` and sub-class classifiers
//! `W_s`, the two-level softmax loss and its flat Cartesian reference, and SGD
//! with momentum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::clustering::HierarchicalPartition;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::preprocess::{prepare_input, Image, RotationLabel};

/// Affine map `x -> W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Weights drawn from `N(0, std²)`, zero bias.
    pub fn gaussian(outputs: usize, inputs: usize, std: f64, rng: &mut Rng) -> Self {
        let mut l = Self::zeros(outputs, inputs);
        l.weight.as_mut_slice().iter_mut().for_each(|w| *w = std * rng.normal());
        l
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.outputs(), self.inputs())
    }

    /// `x Wᵀ + b` for a batch `x` of shape `n x in`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_transposed(&self.weight)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Given `dL/dy` for the batch, adds `dL/dW` and `dL/db` into `grad` and
    /// returns `dL/dx`.
    fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        let (outs, ins) = (self.outputs(), self.inputs());
        let mut dx = Matrix::zeros(x.rows(), ins);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let dyr = dy.row(r);
            for o in 0..outs {
                let g = dyr[o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let gw = grad.weight.row_mut(o);
                for (w, &xi) in gw.iter_mut().zip(xr) {
                    *w += g * xi;
                }
                let wrow = self.weight.row(o);
                for (d, &w) in dx.row_mut(r).iter_mut().zip(wrow) {
                    *d += g * w;
                }
            }
        }
        dx
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Dropout applied to hidden activations during a training pass.
///
/// Each batch row draws its masks from its own seed, so the masks a row sees
/// do not depend on which other rows share its batch.
#[derive(Debug, Clone, Copy)]
pub struct Dropout<'a> {
    pub rate: f64,
    pub row_seeds: &'a [u64],
}

/// Rectified MLP. Every layer, the last included, is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    layers: Vec<Linear>,
}

/// Intermediate values of a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
    pub output: Matrix,
}

impl FeatureNet {
    /// He-initialised network with the given layer sizes
    /// (`[input, hidden..., feature_dim]`).
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must list at least input and output, all positive: {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Linear::gaussian(w[1], w[0], libm::sqrt(2.0 / w[0] as f64), rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[1].inputs() != w[0].outputs() {
                return Err(Error::DimensionMismatch {
                    context: "layer chain",
                    expected: w[0].outputs(),
                    found: w[1].inputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::outputs)
    }

    /// Layer sizes `[input, hidden..., feature_dim]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Linear::outputs));
        s
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: batch.cols(),
            });
        }
        Ok(())
    }

    /// Inference pass (no dropout).
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
            relu_in_place(&mut h);
        }
        Ok(h)
    }

    /// Training pass that keeps what [`FeatureNet::backward`] needs.
    pub fn forward_train(&self, batch: &Matrix, dropout: Option<Dropout<'_>>) -> Result<ForwardCache> {
        self.check_input(batch)?;
        if let Some(d) = dropout {
            if d.row_seeds.len() != batch.rows() {
                return Err(Error::DimensionMismatch {
                    context: "dropout seeds",
                    expected: batch.rows(),
                    found: d.row_seeds.len(),
                });
            }
        }
        let mut row_rngs: Option<Vec<Rng>> = dropout
            .filter(|d| d.rate > 0.0)
            .map(|d| d.row_seeds.iter().map(|&s| Rng::new(s)).collect());
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        let mut h = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            let mut a = z.clone();
            relu_in_place(&mut a);
            let mask = match (&mut row_rngs, dropout) {
                (Some(rngs), Some(d)) if l + 1 < n_layers => {
                    let keep = 1.0 / (1.0 - d.rate);
                    let mut m = Matrix::zeros(a.rows(), a.cols());
                    for (r, rng) in rngs.iter_mut().enumerate() {
                        for v in m.row_mut(r) {
                            *v = if rng.uniform() < d.rate { 0.0 } else { keep };
                        }
                    }
                    for (x, s) in a.as_mut_slice().iter_mut().zip(m.as_slice()) {
                        *x *= s;
                    }
                    Some(m)
                }
                _ => None,
            };
            inputs.push(h);
            pre.push(z);
            masks.push(mask);
            h = a;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            masks,
            output: h,
        })
    }

    /// Parameter gradients given `dL/d(features)`.
    pub fn backward(&self, cache: &ForwardCache, grad_features: &Matrix) -> Result<FeatureNet> {
        if grad_features.rows() != cache.output.rows() || grad_features.cols() != cache.output.cols() {
            return Err(Error::DimensionMismatch {
                context: "feature gradient",
                expected: cache.output.cols(),
                found: grad_features.cols(),
            });
        }
        let mut grads = self.zeros_like();
        let mut g = grad_features.clone();
        for l in (0..self.layers.len()).rev() {
            if let Some(mask) = &cache.masks[l] {
                for (x, s) in g.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *x *= s;
                }
            }
            for (x, z) in g.as_mut_slice().iter_mut().zip(cache.pre[l].as_slice()) {
                if *z <= 0.0 {
                    *x = 0.0;
                }
            }
            g = self.layers[l].backward(&cache.inputs[l], &g, &mut grads.layers[l]);
        }
        Ok(grads)
    }
}

fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Super-class classifier `V` (S outputs) and one sub-class classifier per
/// super-class.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifiers {
    pub v: Linear,
    pub w: Vec<Linear>,
}

/// Standard deviation of freshly initialised classifier weights.
pub const CLASSIFIER_INIT_STD: f64 = 0.01;

impl Classifiers {
    pub fn new(num_super: usize, sub_classes: usize, feature_dim: usize, rng: &mut Rng) -> Self {
        let v = Linear::gaussian(num_super, feature_dim, CLASSIFIER_INIT_STD, rng);
        let w = (0..num_super)
            .map(|_| Linear::gaussian(sub_classes, feature_dim, CLASSIFIER_INIT_STD, rng))
            .collect();
        Self { v, w }
    }

    pub fn num_super_classes(&self) -> usize {
        self.v.outputs()
    }
}

/// Training target of one (image, rotation) item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierTarget {
    pub super_class: usize,
    pub sub_class: usize,
}

/// Targets for the listed images under the listed rotations.
pub fn targets_for(
    part: &HierarchicalPartition,
    images: &[usize],
    rotations: &[RotationLabel],
) -> Result<Vec<HierTarget>> {
    if images.len() != rotations.len() {
        return Err(Error::DimensionMismatch {
            context: "targets_for rotations",
            expected: images.len(),
            found: rotations.len(),
        });
    }
    images
        .iter()
        .zip(rotations)
        .map(|(&i, &r)| {
            if i >= part.len() {
                return Err(Error::LabelOutOfRange {
                    label: i,
                    classes: part.len(),
                });
            }
            Ok(HierTarget {
                super_class: part.super_label(i, r)?,
                sub_class: part.sub_label(i),
            })
        })
        .collect()
}

/// `log softmax` computed with the max-shift.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(libm::exp).collect()
}

/// Softmax cross-entropy of `lin(feats)` against `labels`, scaled by
/// `scale`. Returns the scaled loss sum, parameter gradients and `dL/dfeats`.
fn linear_xent(lin: &Linear, feats: &Matrix, labels: &[usize], scale: f64) -> Result<(f64, Linear, Matrix)> {
    if feats.cols() != lin.inputs() {
        return Err(Error::DimensionMismatch {
            context: "classifier input",
            expected: lin.inputs(),
            found: feats.cols(),
        });
    }
    if feats.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "label count",
            expected: feats.rows(),
            found: labels.len(),
        });
    }
    let classes = lin.outputs();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let logits = lin.forward(feats)?;
    let mut dlogits = Matrix::zeros(feats.rows(), classes);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let logp = log_softmax(logits.row(r));
        loss -= logp[y];
        for (d, lp) in dlogits.row_mut(r).iter_mut().zip(&logp) {
            *d = scale * libm::exp(*lp);
        }
        dlogits.row_mut(r)[y] -= scale;
    }
    let mut grad = lin.zeros_like();
    let dfeats = lin.backward(feats, &dlogits, &mut grad);
    Ok((scale * loss, grad, dfeats))
}

/// Gradients of the hierarchical loss.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalGrads {
    pub v: Linear,
    /// `None` for sub-classifiers that no image in the batch selects; their
    /// gradient is exactly zero.
    pub w: Vec<Option<Linear>>,
    pub features: Matrix,
}

/// Loss and gradients of one super-class's share of a batch; the building
/// block of both the full loss and the per-group computation.
#[derive(Debug, Clone)]
pub(crate) struct GroupLoss {
    pub loss: f64,
    pub v: Linear,
    pub w: Linear,
    pub features: Matrix,
}

pub(crate) fn group_loss(
    v: &Linear,
    w: &Linear,
    super_class: usize,
    feats: &Matrix,
    sub_labels: &[usize],
    scale: f64,
) -> Result<GroupLoss> {
    let supers = vec![super_class; feats.rows()];
    let (lv, gv, mut df) = linear_xent(v, feats, &supers, scale)?;
    let (lw, gw, dfw) = linear_xent(w, feats, sub_labels, scale)?;
    for (a, b) in df.as_mut_slice().iter_mut().zip(dfw.as_slice()) {
        *a += b;
    }
    Ok(GroupLoss {
        loss: lv + lw,
        v: gv,
        w: gw,
        features: df,
    })
}

/// Mean over the batch of `ℓ(V f, y) + ℓ(W_y f, z)`, where `ℓ` is the
/// negative log-softmax. Only the sub-classifier of each row's own
/// super-class contributes.
pub fn hierarchical_loss(
    cls: &Classifiers,
    feats: &Matrix,
    targets: &[HierTarget],
) -> Result<(f64, HierarchicalGrads)> {
    if feats.rows() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "hierarchical_loss targets",
            expected: feats.rows(),
            found: targets.len(),
        });
    }
    let s_count = cls.w.len();
    if cls.v.outputs() != s_count {
        return Err(Error::DimensionMismatch {
            context: "classifier count",
            expected: cls.v.outputs(),
            found: s_count,
        });
    }
    if let Some(t) = targets.iter().find(|t| t.super_class >= s_count) {
        return Err(Error::LabelOutOfRange {
            label: t.super_class,
            classes: s_count,
        });
    }
    let scale = 1.0 / targets.len().max(1) as f64;
    let supers: Vec<usize> = targets.iter().map(|t| t.super_class).collect();
    let (mut loss, gv, mut df) = linear_xent(&cls.v, feats, &supers, scale)?;
    let mut gw: Vec<Option<Linear>> = vec![None; s_count];
    for (s, slot) in gw.iter_mut().enumerate() {
        let rows: Vec<usize> = (0..targets.len()).filter(|&r| supers[r] == s).collect();
        if rows.is_empty() {
            continue;
        }
        let subs: Vec<usize> = rows.iter().map(|&r| targets[r].sub_class).collect();
        let (l, g, d) = linear_xent(&cls.w[s], &feats.select_rows(&rows), &subs, scale)?;
        loss += l;
        for (i, &r) in rows.iter().enumerate() {
            for (a, b) in df.row_mut(r).iter_mut().zip(d.row(i)) {
                *a += b;
            }
        }
        *slot = Some(g);
    }
    Ok((
        loss,
        HierarchicalGrads {
            v: gv,
            w: gw,
            features: df,
        },
    ))
}

/// Gradients of a flat softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrads {
    pub classifier: Linear,
    pub features: Matrix,
}

/// Index of `(y, z)` in the Cartesian product space, `y · |Z| + z`.
pub fn joint_label(y: usize, z: usize, num_z: usize) -> usize {
    y * num_z + z
}

/// Mean softmax cross-entropy over the joint `|Y|·|Z|` label space.
pub fn cartesian_loss(flat: &Linear, feats: &Matrix, joint_labels: &[usize]) -> Result<(f64, FlatGrads)> {
    let scale = 1.0 / joint_labels.len().max(1) as f64;
    let (loss, classifier, features) = linear_xent(flat, feats, joint_labels, scale)?;
    Ok((loss, FlatGrads { classifier, features }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-5,
            dropout_rate: 0.5,
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(String::from(what)));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// A named view of one parameter block.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
}

/// Anything made of parameter blocks in a fixed order.
pub trait Parameters {
    fn blocks_mut(&mut self) -> Vec<ParamBlock<'_>>;

    /// Flattened `(name, values)` in block order.
    fn blocks(&self) -> Vec<(String, &[f64])>;
}

impl Parameters for Linear {
    fn blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock {
                name: "weight".into(),
                values: self.weight.as_mut_slice(),
                decay: true,
            },
            ParamBlock {
                name: "bias".into(),
                values: &mut self.bias,
                decay: false,
            },
        ]
    }

    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("weight".into(), self.weight.as_slice()),
            ("bias".into(), &self.bias[..]),
        ]
    }
}

impl Parameters for FeatureNet {
    fn blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            for mut b in l.blocks_mut() {
                b.name = format!("{i}.{}", b.name);
                out.push(b);
            }
        }
        out
    }

    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (n, v) in l.blocks() {
                out.push((format!("{i}.{n}"), v));
            }
        }
        out
    }
}

/// Momentum buffers, one per parameter block, zero until first used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Momentum {
    buffers: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    pub fn from_buffers(buffers: Vec<Vec<f64>>) -> Self {
        Self { buffers }
    }
}

/// One SGD step with momentum and decoupled-from-bias weight decay:
/// `buf ← μ·buf + g + λ·p` (λ only on weights), `p ← p − lr·buf`.
///
/// Nothing is modified if any gradient block is non-finite; the error names
/// the block as `prefix` + block name.
pub fn sgd_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    cfg: &SgdConfig,
    momentum: &mut Momentum,
    prefix: &str,
) -> Result<()> {
    let grad_blocks = grads.blocks();
    for (name, g) in &grad_blocks {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                block: format!("{prefix}{name}"),
            });
        }
    }
    let mut blocks = params.blocks_mut();
    if blocks.len() != grad_blocks.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient block count",
            expected: blocks.len(),
            found: grad_blocks.len(),
        });
    }
    for (b, (_, g)) in blocks.iter().zip(&grad_blocks) {
        if b.values.len() != g.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient block size",
                expected: b.values.len(),
                found: g.len(),
            });
        }
    }
    if momentum.buffers.len() != blocks.len() {
        momentum.buffers = blocks.iter().map(|b| vec![0.0; b.values.len()]).collect();
    }
    for ((block, (_, g)), buf) in blocks.iter_mut().zip(&grad_blocks).zip(&mut momentum.buffers) {
        let wd = if block.decay { cfg.weight_decay } else { 0.0 };
        for ((p, &gi), b) in block.values.iter_mut().zip(g.iter()).zip(buf.iter_mut()) {
            *b = cfg.momentum * *b + gi + wd * *p;
            *p -= cfg.learning_rate * *b;
        }
    }
    Ok(())
}

/// Feature extractor, classifiers and their optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: FeatureNet,
    pub classifiers: Classifiers,
    pub net_momentum: Momentum,
    pub v_momentum: Momentum,
    pub w_momentum: Vec<Momentum>,
}

impl Model {
    pub fn new(net: FeatureNet, classifiers: Classifiers) -> Self {
        let w_momentum = vec![Momentum::new(); classifiers.w.len()];
        Self {
            net,
            classifiers,
            net_momentum: Momentum::new(),
            v_momentum: Momentum::new(),
            w_momentum,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.net.layers.iter().all(Linear::is_finite)
            && self.classifiers.v.is_finite()
            && self.classifiers.w.iter().all(Linear::is_finite)
    }
}

/// Forward, hierarchical loss, backward and one SGD step on prepared network
/// inputs. Returns the loss before the update.
pub fn train_step_on_inputs(
    model: &mut Model,
    inputs: &Matrix,
    targets: &[HierTarget],
    cfg: &SgdConfig,
    dropout_seeds: &[u64],
) -> Result<f64> {
    cfg.validate()?;
    let dropout = (cfg.dropout_rate > 0.0).then_some(Dropout {
        rate: cfg.dropout_rate,
        row_seeds: dropout_seeds,
    });
    let cache = model.net.forward_train(inputs, dropout)?;
    let (loss, grads) = hierarchical_loss(&model.classifiers, &cache.output, targets)?;
    let net_grads = model.net.backward(&cache, &grads.features)?;

    sgd_step(&mut model.net, &net_grads, cfg, &mut model.net_momentum, "net.")?;
    sgd_step(&mut model.classifiers.v, &grads.v, cfg, &mut model.v_momentum, "v.")?;
    for (s, g) in grads.w.into_iter().enumerate() {
        let w = &mut model.classifiers.w[s];
        let g = g.unwrap_or_else(|| w.zeros_like());
        sgd_step(w, &g, cfg, &mut model.w_momentum[s], &format!("w{s}."))?;
    }
    Ok(loss)
}

/// Rotates each image, applies Sobel if asked, then takes one training step.
/// Dropout masks are seeded from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    images: &[&Image],
    rotations: &[RotationLabel],
    targets: &[HierTarget],
    use_sobel: bool,
    cfg: &SgdConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if images.len() != rotations.len() {
        return Err(Error::DimensionMismatch {
            context: "train_step rotations",
            expected: images.len(),
            found: rotations.len(),
        });
    }
    let rows: Vec<Vec<f64>> = images
        .iter()
        .zip(rotations)
        .map(|(img, &r)| prepare_input(img, r, use_sobel))
        .collect::<Result<_>>()?;
    let inputs = Matrix::from_rows(&rows)?;
    let seeds: Vec<u64> = (0..images.len()).map(|_| rng.next_u64()).collect();
    train_step_on_inputs(model, &inputs, targets, cfg, &seeds)
}
