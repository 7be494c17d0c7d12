//! Minimal deterministic forward-pass engine.
//!
//! Tensors are `h x w x c` feature maps stored channel-major (`[c][h][w]`),
//! matching the `[m][c][r][s]` weight layout. Convolution is cross-correlation
//! with symmetric zero padding. Each output value is accumulated in a fixed
//! order (`c`, then `r`, then `s` innermost) so results are bit-reproducible.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::net_ir::{infer_shapes, Dims, LayerKind, LayerSpec, NetworkSpec, ShapeInfo};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.volume() {
            return Err(Error::Shape(format!(
                "tensor {dims} needs {} values, got {}",
                dims.volume(),
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![0.0; dims.volume()],
        }
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.volume()],
        }
    }

    /// A flat vector as a `1 x 1 x n` tensor.
    pub fn flat(data: Vec<f32>) -> Self {
        Tensor {
            dims: Dims::new(1, 1, data.len()),
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(ch * self.dims.h + y) * self.dims.w + x]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Filter bank for one weighted layer, stored `[m][c][r][s]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlock {
    pub m: usize,
    pub c: usize,
    pub r: usize,
    pub s: usize,
    pub data: Vec<f32>,
}

impl WeightBlock {
    pub fn new(m: usize, c: usize, r: usize, s: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != m * c * r * s {
            return Err(Error::Shape(format!(
                "weight block [{m}][{c}][{r}][{s}] needs {} values, got {}",
                m * c * r * s,
                data.len()
            )));
        }
        Ok(WeightBlock { m, c, r, s, data })
    }

    pub fn filled(m: usize, c: usize, r: usize, s: usize, value: f32) -> Self {
        WeightBlock {
            m,
            c,
            r,
            s,
            data: vec![value; m * c * r * s],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.m, self.c, self.r, self.s]
    }

    #[inline]
    pub fn at(&self, m: usize, c: usize, r: usize, s: usize) -> f32 {
        self.data[((m * self.c + c) * self.r + r) * self.s + s]
    }
}

/// Weights keyed by layer id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    pub blocks: HashMap<String, WeightBlock>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, block: WeightBlock) {
        self.blocks.insert(id.into(), block);
    }

    pub fn get(&self, id: &str) -> Option<&WeightBlock> {
        self.blocks.get(id)
    }

    /// Checks that every weighted layer has a block of the right shape.
    pub fn check(&self, net: &NetworkSpec, shapes: &ShapeInfo) -> Result<()> {
        for (layer, shape) in net.layers.iter().zip(&shapes.layers) {
            if !layer.has_weights() {
                continue;
            }
            let block = self
                .get(&layer.id)
                .ok_or_else(|| Error::MissingWeights(layer.id.clone()))?;
            let want = expected_weight_dims(layer, shape.input.c);
            if block.dims() != want {
                return Err(Error::Shape(format!(
                    "layer `{}` expects weights {:?}, got {:?}",
                    layer.id,
                    want,
                    block.dims()
                )));
            }
        }
        Ok(())
    }
}

/// `[m, c, r, s]` for a weighted layer with `c` input channels.
pub fn expected_weight_dims(layer: &LayerSpec, c: usize) -> [usize; 4] {
    [
        layer.m.unwrap_or(0),
        c,
        layer.r.unwrap_or(0),
        layer.s.unwrap_or(0),
    ]
}

fn out_extent(input: usize, window: usize, stride: usize, pad: usize) -> Result<usize> {
    crate::net_ir::window_extent(input, window, stride, pad).ok_or_else(|| {
        Error::Shape(format!(
            "window {window} larger than padded input {input} (pad {pad})"
        ))
    })
}

pub fn conv_forward(x: &Tensor, w: &WeightBlock, stride: usize, pad: usize) -> Result<Tensor> {
    let d = x.dims;
    if w.c != d.c {
        return Err(Error::Shape(format!(
            "filter expects {} input channels, input {} has {}",
            w.c, d, d.c
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    let e = out_extent(d.h, w.r, stride, pad)?;
    let f = out_extent(d.w, w.s, stride, pad)?;
    let mut out = Vec::with_capacity(w.m * e * f);
    for m in 0..w.m {
        for oy in 0..e {
            for ox in 0..f {
                let mut acc = 0.0f32;
                for c in 0..d.c {
                    for r in 0..w.r {
                        let y = (oy * stride + r) as isize - pad as isize;
                        if y < 0 || y >= d.h as isize {
                            continue;
                        }
                        for s in 0..w.s {
                            let xx = (ox * stride + s) as isize - pad as isize;
                            if xx < 0 || xx >= d.w as isize {
                                continue;
                            }
                            acc += x.at(y as usize, xx as usize, c) * w.at(m, c, r, s);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(Dims::new(e, f, w.m), out)
}

/// Fully-connected layer: a convolution whose window spans the whole input.
pub fn fc_forward(x: &Tensor, w: &WeightBlock) -> Result<Tensor> {
    let d = x.dims;
    if w.r != d.h || w.s != d.w {
        return Err(Error::Shape(format!(
            "fc filter {}x{} must cover input {}",
            w.r, w.s, d
        )));
    }
    conv_forward(x, w, 1, 0)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!("add of {} and {}", a.dims, b.dims)));
    }
    Ok(Tensor {
        dims: a.dims,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn pool(
    x: &Tensor,
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
    init: f32,
    fold: impl Fn(f32, f32) -> f32,
    finish: impl Fn(f32) -> f32,
) -> Result<Tensor> {
    let d = x.dims;
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    let e = out_extent(d.h, r, stride, pad)?;
    let f = out_extent(d.w, s, stride, pad)?;
    let mut out = Vec::with_capacity(d.c * e * f);
    for c in 0..d.c {
        for oy in 0..e {
            for ox in 0..f {
                let mut acc = init;
                for dr in 0..r {
                    for ds in 0..s {
                        let y = (oy * stride + dr) as isize - pad as isize;
                        let xx = (ox * stride + ds) as isize - pad as isize;
                        let inside = y >= 0 && y < d.h as isize && xx >= 0 && xx < d.w as isize;
                        let v = if inside {
                            x.at(y as usize, xx as usize, c)
                        } else {
                            0.0
                        };
                        acc = fold(acc, v);
                    }
                }
                out.push(finish(acc));
            }
        }
    }
    Tensor::new(Dims::new(e, f, d.c), out)
}

/// Max pooling; padded cells read as zero.
pub fn maxpool(x: &Tensor, r: usize, s: usize, stride: usize, pad: usize) -> Result<Tensor> {
    pool(x, r, s, stride, pad, f32::NEG_INFINITY, f32::max, |v| v)
}

/// Average pooling over the full `r x s` window, padded cells included.
pub fn avgpool(x: &Tensor, r: usize, s: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let n = (r * s) as f32;
    pool(x, r, s, stride, pad, 0.0, |a, v| a + v, |a| a / n)
}

/// Evaluates one layer on its already-computed inputs.
pub fn layer_forward(layer: &LayerSpec, inputs: &[&Tensor], weights: &WeightSet) -> Result<Tensor> {
    let x = inputs[0];
    let window = || (layer.r.unwrap_or(0), layer.s.unwrap_or(0));
    match layer.kind {
        LayerKind::Conv | LayerKind::Fc => {
            let w = weights
                .get(&layer.id)
                .ok_or_else(|| Error::MissingWeights(layer.id.clone()))?;
            if layer.kind == LayerKind::Fc {
                fc_forward(x, w)
            } else {
                conv_forward(x, w, layer.stride, layer.pad)
            }
        }
        LayerKind::MaxPool => {
            let (r, s) = window();
            maxpool(x, r, s, layer.stride, layer.pad)
        }
        LayerKind::AvgPool => {
            let (r, s) = window();
            avgpool(x, r, s, layer.stride, layer.pad)
        }
        LayerKind::Relu => Ok(relu(x)),
        LayerKind::Add => add(x, inputs[1]),
    }
}

/// A validated network bound to its weights, ready to run.
pub struct Model<'a> {
    pub net: &'a NetworkSpec,
    pub weights: &'a WeightSet,
    pub shapes: ShapeInfo,
    /// Predecessor indices per layer; empty means the network input.
    preds: Vec<Vec<usize>>,
}

impl<'a> Model<'a> {
    pub fn new(net: &'a NetworkSpec, weights: &'a WeightSet) -> Result<Self> {
        let shapes = infer_shapes(net)?;
        weights.check(net, &shapes)?;
        let preds = net
            .layers
            .iter()
            .map(|l| {
                l.inputs
                    .iter()
                    .map(|id| net.index_of(id).expect("validated reference"))
                    .collect()
            })
            .collect();
        Ok(Model {
            net,
            weights,
            shapes,
            preds,
        })
    }

    /// Runs the network, letting `hook` rewrite each layer's output (by layer
    /// index) before downstream layers consume it. Returns the terminal output.
    pub fn run_with<F>(&self, x: &Tensor, mut hook: F) -> Result<Tensor>
    where
        F: FnMut(usize, Tensor) -> Result<Tensor>,
    {
        if x.dims != self.net.input {
            return Err(Error::Shape(format!(
                "network `{}` expects input {}, got {}",
                self.net.name, self.net.input, x.dims
            )));
        }
        let mut outputs: Vec<Option<Tensor>> = vec![None; self.net.layers.len()];
        for (idx, layer) in self.net.layers.iter().enumerate() {
            let inputs: Vec<&Tensor> = if self.preds[idx].is_empty() {
                vec![x]
            } else {
                self.preds[idx]
                    .iter()
                    .map(|&j| outputs[j].as_ref().expect("topological order"))
                    .collect()
            };
            let y = layer_forward(layer, &inputs, self.weights)?;
            outputs[idx] = Some(hook(idx, y)?);
        }
        Ok(outputs.pop().flatten().expect("non-empty network"))
    }

    pub fn run(&self, x: &Tensor) -> Result<Tensor> {
        self.run_with(x, |_, t| Ok(t))
    }
}

/// Runs `net` on `x` and returns the terminal output (the logits).
pub fn network_forward(net: &NetworkSpec, weights: &WeightSet, x: &Tensor) -> Result<Tensor> {
    Model::new(net, weights)?.run(x)
}

/// Predicted class of a logit tensor: argmax with ties to the lowest index.
/// A single logit `v` is read as the two-class pair `[0, v]`, so it predicts
/// class 1 exactly when `v > 0`.
pub fn classify(logits: &Tensor) -> usize {
    let data = logits.data();
    if data.len() == 1 {
        return usize::from(data[0] > 0.0);
    }
    let mut best = 0;
    for (i, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = i;
        }
    }
    best
}
