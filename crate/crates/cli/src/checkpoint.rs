//! Mapping between a [`Model`] and the named blocks of a checkpoint.
//!
//! Layer `i` of the feature extractor is stored as `net.{i}.weight`
//! (outputs x inputs) and `net.{i}.bias` (1 x outputs); the classifiers as
//! `v.*` and `w.{s}.*`. Momentum buffers follow as single-row blocks
//! `momentum.net.{j}`, `momentum.v.{j}` and `momentum.w.{s}.{j}`, one per
//! parameter block in the same order, and are absent before the first step.

use deepercluster_core::model::{Classifiers, FeatureNet, Linear, Model, Momentum};
use deepercluster_core::numerics::Matrix;

use crate::formats::Checkpoint;

fn push_linear(out: &mut Vec<(String, Matrix)>, prefix: &str, l: &Linear) {
    out.push((format!("{prefix}.weight"), l.weight.clone()));
    let bias = Matrix::from_vec(1, l.bias.len(), l.bias.clone()).expect("bias row");
    out.push((format!("{prefix}.bias"), bias));
}

fn push_momentum(out: &mut Vec<(String, Matrix)>, prefix: &str, m: &Momentum) {
    for (j, buf) in m.buffers().iter().enumerate() {
        let row = Matrix::from_vec(1, buf.len(), buf.clone()).expect("buffer row");
        out.push((format!("momentum.{prefix}.{j}"), row));
    }
}

pub fn model_to_checkpoint(model: &Model) -> Checkpoint {
    let mut blocks = Vec::new();
    for (i, l) in model.net.layers().iter().enumerate() {
        push_linear(&mut blocks, &format!("net.{i}"), l);
    }
    push_linear(&mut blocks, "v", &model.classifiers.v);
    for (s, w) in model.classifiers.w.iter().enumerate() {
        push_linear(&mut blocks, &format!("w.{s}"), w);
    }
    push_momentum(&mut blocks, "net", &model.net_momentum);
    push_momentum(&mut blocks, "v", &model.v_momentum);
    for (s, m) in model.w_momentum.iter().enumerate() {
        push_momentum(&mut blocks, &format!("w.{s}"), m);
    }
    Checkpoint { blocks }
}

fn linear(ckpt: &Checkpoint, prefix: &str) -> Result<Option<Linear>, String> {
    let (Some(weight), Some(bias)) = (ckpt.get(&format!("{prefix}.weight")), ckpt.get(&format!("{prefix}.bias")))
    else {
        return Ok(None);
    };
    if bias.rows() != 1 || bias.cols() != weight.rows() {
        return Err(format!(
            "`{prefix}.bias` is {}x{}, expected 1x{}",
            bias.rows(),
            bias.cols(),
            weight.rows()
        ));
    }
    Ok(Some(Linear {
        weight: weight.clone(),
        bias: bias.as_slice().to_vec(),
    }))
}

fn momentum(ckpt: &Checkpoint, prefix: &str) -> Momentum {
    let buffers = (0..)
        .map_while(|j| ckpt.get(&format!("momentum.{prefix}.{j}")))
        .map(|m| m.as_slice().to_vec())
        .collect();
    Momentum::from_buffers(buffers)
}

pub fn network_from_checkpoint(ckpt: &Checkpoint) -> Result<FeatureNet, String> {
    let mut layers = Vec::new();
    while let Some(l) = linear(ckpt, &format!("net.{}", layers.len()))? {
        layers.push(l);
    }
    FeatureNet::from_layers(layers).map_err(|e| format!("feature network: {e}"))
}

pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model, String> {
    let net = network_from_checkpoint(ckpt)?;
    let v = linear(ckpt, "v")?.ok_or("missing block `v.weight` or `v.bias`")?;
    let mut w = Vec::new();
    while let Some(l) = linear(ckpt, &format!("w.{}", w.len()))? {
        w.push(l);
    }
    if w.len() != v.outputs() {
        return Err(format!("{} sub-classifiers for {} super-classes", w.len(), v.outputs()));
    }
    let w_momentum = (0..w.len()).map(|s| momentum(ckpt, &format!("w.{s}"))).collect();
    Ok(Model {
        net,
        classifiers: Classifiers { v, w },
        net_momentum: momentum(ckpt, "net"),
        v_momentum: momentum(ckpt, "v"),
        w_momentum,
    })
}
