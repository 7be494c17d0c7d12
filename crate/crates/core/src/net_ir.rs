//! Architecture IR for layer graphs.
//!
//! A network is an ordered list of layers forming a DAG. Each layer stores the
//! filter geometry it owns (`r`, `s`, `m`, stride, padding); the input geometry
//! (`h`, `w`, `c`) and the output feature-map size (`e`, `f`) are derived by
//! shape inference. A fully-connected layer is a convolution whose filter
//! covers the entire input map, so `r = h`, `s = w` and `e = f = 1`.
//!
//! Bias terms are not modelled. Batch normalization is assumed folded into the
//! preceding convolution. Grouped convolution is not representable.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    MaxPool,
    AvgPool,
    Relu,
    Add,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Conv,
        LayerKind::Fc,
        LayerKind::MaxPool,
        LayerKind::AvgPool,
        LayerKind::Relu,
        LayerKind::Add,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
            LayerKind::MaxPool => "maxpool",
            LayerKind::AvgPool => "avgpool",
            LayerKind::Relu => "relu",
            LayerKind::Add => "add",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Conv and fc layers own weights; everything else only moves activations.
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Fc)
    }

    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }

    fn has_window(self) -> bool {
        self.has_weights() || self.is_pool()
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_stride() -> usize {
    1
}

fn is_default_stride(v: &usize) -> bool {
    *v == 1
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Filter height.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    /// Filter width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    /// Output channels (number of filters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "default_stride", skip_serializing_if = "is_default_stride")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub pad: usize,
    /// Predecessor layer ids; empty means the layer reads the network input.
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl LayerSpec {
    fn base(id: impl Into<String>, kind: LayerKind, inputs: Vec<String>) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            r: None,
            s: None,
            m: None,
            stride: 1,
            pad: 0,
            inputs,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        id: impl Into<String>,
        r: usize,
        s: usize,
        m: usize,
        stride: usize,
        pad: usize,
        inputs: &[&str],
    ) -> Self {
        LayerSpec {
            r: Some(r),
            s: Some(s),
            m: Some(m),
            stride,
            pad,
            ..Self::base(id, LayerKind::Conv, to_ids(inputs))
        }
    }

    pub fn fc(id: impl Into<String>, r: usize, s: usize, m: usize, inputs: &[&str]) -> Self {
        LayerSpec {
            r: Some(r),
            s: Some(s),
            m: Some(m),
            ..Self::base(id, LayerKind::Fc, to_ids(inputs))
        }
    }

    pub fn pool(
        id: impl Into<String>,
        kind: LayerKind,
        r: usize,
        s: usize,
        stride: usize,
        pad: usize,
        inputs: &[&str],
    ) -> Self {
        debug_assert!(kind.is_pool());
        LayerSpec {
            r: Some(r),
            s: Some(s),
            stride,
            pad,
            ..Self::base(id, kind, to_ids(inputs))
        }
    }

    pub fn relu(id: impl Into<String>, inputs: &[&str]) -> Self {
        Self::base(id, LayerKind::Relu, to_ids(inputs))
    }

    pub fn add(id: impl Into<String>, a: &str, b: &str) -> Self {
        Self::base(id, LayerKind::Add, to_ids(&[a, b]))
    }

    pub fn has_weights(&self) -> bool {
        self.kind.has_weights()
    }

    fn window(&self) -> Option<(usize, usize)> {
        Some((self.r?, self.s?))
    }
}

fn to_ids(inputs: &[&str]) -> Vec<String> {
    inputs.iter().map(|s| s.to_string()).collect()
}

/// Feature-map geometry: height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Dims { h, w, c }
    }

    pub fn volume(&self) -> usize {
        self.h * self.w * self.c
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Dims,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, input: Dims, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            name: name.into(),
            input,
            layers,
        }
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// Index of the single layer whose output no other layer consumes.
    pub fn terminal(&self) -> Option<usize> {
        let consumed: HashSet<&str> = self
            .layers
            .iter()
            .flat_map(|l| l.inputs.iter().map(String::as_str))
            .collect();
        let mut terminals = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| !consumed.contains(l.id.as_str()));
        match (terminals.next(), terminals.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    /// Indices of layers that read the output of layer `idx`.
    pub fn consumers(&self, idx: usize) -> Vec<usize> {
        let id = &self.layers[idx].id;
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.inputs.iter().any(|i| i == id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// A broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending layer, or `None` for network-level rules.
    pub layer: Option<String>,
    pub rule: String,
}

impl Violation {
    fn layer(id: &str, rule: impl Into<String>) -> Self {
        Violation {
            layer: Some(id.to_string()),
            rule: rule.into(),
        }
    }

    fn network(rule: impl Into<String>) -> Self {
        Violation {
            layer: None,
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.layer {
            Some(id) => write!(f, "layer `{id}`: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// Input and output geometry of one layer. The output height and width are
/// the `e` and `f` of the convolution loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Dims,
    pub output: Dims,
}

impl LayerShape {
    pub fn e(&self) -> usize {
        self.output.h
    }

    pub fn f(&self) -> usize {
        self.output.w
    }
}

/// Per-layer shapes, indexed like `NetworkSpec::layers`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeInfo {
    pub layers: Vec<LayerShape>,
}

impl ShapeInfo {
    pub fn output(&self) -> Option<Dims> {
        self.layers.last().map(|l| l.output)
    }
}

/// Sliding-window output extent, or `None` if the window exceeds the padded input.
pub fn window_extent(input: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if window > padded || stride == 0 {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// Checks every structural and shape invariant, returning all violations found.
pub fn validate(net: &NetworkSpec) -> Vec<Violation> {
    analyze(net).1
}

/// Infers per-layer shapes, failing with the violation list if the network is invalid.
pub fn infer_shapes(net: &NetworkSpec) -> Result<ShapeInfo> {
    let (shapes, violations) = analyze(net);
    if !violations.is_empty() {
        return Err(Error::InvalidNetwork(violations));
    }
    Ok(ShapeInfo {
        layers: shapes
            .into_iter()
            .map(|s| s.expect("valid net has all shapes"))
            .collect(),
    })
}

fn analyze(net: &NetworkSpec) -> (Vec<Option<LayerShape>>, Vec<Violation>) {
    let mut out = Vec::new();
    let input = net.input;
    if input.h == 0 || input.w == 0 || input.c == 0 {
        out.push(Violation::network(format!(
            "input dimensions must be positive (got {input})"
        )));
    }
    if net.layers.is_empty() {
        out.push(Violation::network("network has no layers"));
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut shapes: Vec<Option<LayerShape>> = Vec::with_capacity(net.layers.len());

    for (idx, layer) in net.layers.iter().enumerate() {
        let id = layer.id.as_str();
        let before = out.len();
        check_params(layer, &mut out);
        let params_ok = out.len() == before;

        let arity_ok = match layer.kind {
            LayerKind::Add => {
                if layer.inputs.len() != 2 {
                    out.push(Violation::layer(id, "add requires 2 inputs"));
                    false
                } else {
                    true
                }
            }
            _ => {
                if layer.inputs.len() > 1 {
                    out.push(Violation::layer(
                        id,
                        format!("{} requires at most 1 input", layer.kind),
                    ));
                    false
                } else {
                    true
                }
            }
        };

        let mut preds = Vec::with_capacity(layer.inputs.len());
        let mut refs_ok = true;
        for src in &layer.inputs {
            match seen.get(src.as_str()) {
                Some(&j) => preds.push(j),
                None => {
                    refs_ok = false;
                    let rule = if net.layers[idx..].iter().any(|l| &l.id == src) {
                        format!("input `{src}` is not an earlier layer")
                    } else {
                        format!("input `{src}` does not exist")
                    };
                    out.push(Violation::layer(id, rule));
                }
            }
        }

        if seen.insert(id, idx).is_some() {
            out.push(Violation::layer(id, "duplicate layer id"));
        }

        let in_dims: Option<Vec<Dims>> = if preds.is_empty() {
            Some(vec![input])
        } else {
            preds.iter().map(|&j| shapes[j].map(|s| s.output)).collect()
        };
        let shape = match (params_ok && arity_ok && refs_ok, in_dims) {
            (true, Some(dims)) => layer_shape(layer, &dims, &mut out),
            _ => None,
        };
        shapes.push(shape);
    }

    if !net.layers.is_empty() && net.terminal().is_none() {
        out.push(Violation::network(
            "network must have exactly one terminal layer",
        ));
    }
    (shapes, out)
}

fn check_params(layer: &LayerSpec, out: &mut Vec<Violation>) {
    let id = layer.id.as_str();
    let kind = layer.kind;
    if layer.id.is_empty() {
        out.push(Violation::layer(id, "layer id must be non-empty"));
    }
    if kind.has_window() {
        for (name, v) in [("r", layer.r), ("s", layer.s)] {
            match v {
                None => out.push(Violation::layer(id, format!("{kind} requires {name}"))),
                Some(0) => out.push(Violation::layer(id, format!("{name} must be >= 1"))),
                _ => {}
            }
        }
        if layer.stride == 0 {
            out.push(Violation::layer(id, "stride must be >= 1"));
        }
    } else {
        if layer.r.is_some() || layer.s.is_some() {
            out.push(Violation::layer(id, format!("{kind} carries no r/s")));
        }
        if layer.stride != 1 || layer.pad != 0 {
            out.push(Violation::layer(
                id,
                format!("{kind} carries no stride/pad"),
            ));
        }
    }
    if kind.has_weights() {
        match layer.m {
            None => out.push(Violation::layer(id, format!("{kind} requires m"))),
            Some(0) => out.push(Violation::layer(id, "m must be >= 1")),
            _ => {}
        }
    } else if layer.m.is_some() {
        out.push(Violation::layer(
            id,
            format!("{kind} carries no m (channels pass through)"),
        ));
    }
    if kind == LayerKind::Fc && layer.pad != 0 {
        out.push(Violation::layer(id, "fc takes no padding"));
    }
}

fn layer_shape(layer: &LayerSpec, inputs: &[Dims], out: &mut Vec<Violation>) -> Option<LayerShape> {
    let id = layer.id.as_str();
    let input = inputs[0];
    let output = match layer.kind {
        LayerKind::Relu => input,
        LayerKind::Add => {
            if inputs[0] != inputs[1] {
                out.push(Violation::layer(
                    id,
                    format!(
                        "add inputs must have identical shapes ({} vs {})",
                        inputs[0], inputs[1]
                    ),
                ));
                return None;
            }
            input
        }
        LayerKind::Fc => {
            let (r, s) = layer.window()?;
            if r != input.h || s != input.w {
                out.push(Violation::layer(
                    id,
                    format!(
                        "fc requires r = input H and s = input W (r={r}, s={s}, input {input})"
                    ),
                ));
                return None;
            }
            Dims::new(1, 1, layer.m?)
        }
        LayerKind::Conv | LayerKind::MaxPool | LayerKind::AvgPool => {
            let (r, s) = layer.window()?;
            let e = window_extent(input.h, r, layer.stride, layer.pad);
            let f = window_extent(input.w, s, layer.stride, layer.pad);
            let (Some(e), Some(f)) = (e, f) else {
                out.push(Violation::layer(
                    id,
                    format!(
                        "filter larger than padded input ({r}x{s} on {input}, pad {})",
                        layer.pad
                    ),
                ));
                return None;
            };
            let c_out = if layer.kind == LayerKind::Conv {
                layer.m?
            } else {
                input.c
            };
            Dims::new(e, f, c_out)
        }
    };
    Some(LayerShape { input, output })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub num_weights: u64,
    pub num_macs: u64,
    pub num_input_activations: u64,
    pub num_output_activations: u64,
}

impl Counts {
    fn checked_add(&self, o: &Counts) -> Option<Counts> {
        Some(Counts {
            num_weights: self.num_weights.checked_add(o.num_weights)?,
            num_macs: self.num_macs.checked_add(o.num_macs)?,
            num_input_activations: self
                .num_input_activations
                .checked_add(o.num_input_activations)?,
            num_output_activations: self
                .num_output_activations
                .checked_add(o.num_output_activations)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCounts {
    pub id: String,
    pub kind: LayerKind,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountReport {
    pub network: String,
    pub layers: Vec<LayerCounts>,
    pub total: Counts,
}

fn product(layer: &str, factors: &[usize]) -> Result<u64> {
    factors.iter().try_fold(1u64, |acc, &f| {
        acc.checked_mul(f as u64).ok_or_else(|| Error::Overflow {
            layer: layer.to_string(),
        })
    })
}

/// Counts for one layer given its inferred shape and the shapes of its inputs.
pub fn layer_counts(
    layer: &LayerSpec,
    shape: &LayerShape,
    input_volumes: &[usize],
) -> Result<Counts> {
    let id = layer.id.as_str();
    let out = shape.output;
    let num_output_activations = product(id, &[out.h, out.w, out.c])?;
    let num_input_activations = input_volumes.iter().try_fold(0u64, |acc, &v| {
        acc.checked_add(v as u64).ok_or_else(|| Error::Overflow {
            layer: id.to_string(),
        })
    })?;
    let (num_weights, num_macs) = if layer.has_weights() {
        let (r, s) = layer.window().expect("validated weighted layer has r, s");
        let m = layer.m.expect("validated weighted layer has m");
        let weights = product(id, &[r, s, shape.input.c, m])?;
        let macs = product(id, &[out.h, out.w])?
            .checked_mul(weights)
            .ok_or_else(|| Error::Overflow {
                layer: id.to_string(),
            })?;
        (weights, macs)
    } else {
        (0, 0)
    };
    Ok(Counts {
        num_weights,
        num_macs,
        num_input_activations,
        num_output_activations,
    })
}

pub fn count(net: &NetworkSpec) -> Result<CountReport> {
    let shapes = infer_shapes(net)?;
    count_with_shapes(net, &shapes)
}

pub fn count_with_shapes(net: &NetworkSpec, shapes: &ShapeInfo) -> Result<CountReport> {
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut total = Counts::default();
    for (layer, shape) in net.layers.iter().zip(&shapes.layers) {
        let volumes: Vec<usize> = if layer.inputs.is_empty() {
            vec![net.input.volume()]
        } else {
            layer
                .inputs
                .iter()
                .map(|src| {
                    let j = net.index_of(src).expect("validated input reference");
                    shapes.layers[j].output.volume()
                })
                .collect()
        };
        let counts = layer_counts(layer, shape, &volumes)?;
        total = total.checked_add(&counts).ok_or_else(|| Error::Overflow {
            layer: layer.id.clone(),
        })?;
        layers.push(LayerCounts {
            id: layer.id.clone(),
            kind: layer.kind,
            counts,
        });
    }
    Ok(CountReport {
        network: net.name.clone(),
        layers,
        total,
    })
}
