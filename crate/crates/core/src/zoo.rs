//! Shape-level model zoo.
//!
//! Architectures follow the canonical published layer tables. They carry no
//! weights. Notes on specific entries:
//!
//! - `alexnet` is the single-tower AlexNet (227x227 input, ungrouped conv2).
//! - `alexnet-k3` / `alexnet-k7` set every conv filter to `k x k`. Stride-1
//!   layers use `pad = (k-1)/2` so their output size is unchanged. conv1 keeps
//!   stride 4 and `pad = 0`; a smaller window can't be padded down to the
//!   original 55x55, so conv1 produces 57x57 (k=3) or 56x56 (k=7). Every map
//!   after pool2 matches the original.
//! - `resnet*` use projection shortcuts and put the stride on the 3x3 conv.
//! - `wide-resnet` is WRN-50-2: the ResNet-50 layout with bottleneck widths doubled.
//! - `toy-chain-D` is `D` scalar fc layers; `toy-avg-k` copies a `1 x k`
//!   input through a 1x1 conv and averages it with a `1 x k` avgpool.
//! - `deep-narrow` / `shallow-wide` are plain 3x3 conv stacks on 14x14 maps
//!   (16 layers of 64 channels vs 4 layers of 128 channels) with equal MACs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net_ir::{Dims, LayerKind, LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZooEntry {
    /// `None` is the original AlexNet; `Some(k)` sets every conv to `k x k`.
    AlexNet(Option<usize>),
    Vgg16,
    ResNet(usize),
    WideResNet,
    ToyChain(usize),
    ToyAvg(usize),
    DeepNarrow,
    ShallowWide,
}

impl ZooEntry {
    /// Every fixed entry plus representative parameterized ones.
    pub fn catalog() -> Vec<ZooEntry> {
        use ZooEntry::*;
        vec![
            AlexNet(None),
            AlexNet(Some(3)),
            AlexNet(Some(7)),
            Vgg16,
            ResNet(18),
            ResNet(50),
            ResNet(152),
            WideResNet,
            ToyChain(1),
            ToyChain(4),
            ToyChain(16),
            ToyAvg(1),
            ToyAvg(4),
            ToyAvg(16),
            DeepNarrow,
            ShallowWide,
        ]
    }

    pub fn description(&self) -> &'static str {
        match self {
            ZooEntry::AlexNet(None) => "AlexNet, 227x227 input",
            ZooEntry::AlexNet(Some(_)) => "AlexNet with every conv filter set to k x k",
            ZooEntry::Vgg16 => "VGG-16, 224x224 input",
            ZooEntry::ResNet(_) => "ResNet, 224x224 input",
            ZooEntry::WideResNet => "Wide ResNet-50-2, 224x224 input",
            ZooEntry::ToyChain(_) => "D scalar fc layers with unit weights (noise-depth fixture)",
            ZooEntry::ToyAvg(_) => "1x1 conv then 1xk average (filter-size fixture)",
            ZooEntry::DeepNarrow => "16 conv 3x3 layers, 64 channels, 14x14 maps",
            ZooEntry::ShallowWide => "4 conv 3x3 layers, 128 channels, 14x14 maps",
        }
    }

    pub fn build(&self) -> NetworkSpec {
        let net = match *self {
            ZooEntry::AlexNet(k) => alexnet(k),
            ZooEntry::Vgg16 => vgg16(),
            ZooEntry::ResNet(depth) => resnet(depth),
            ZooEntry::WideResNet => wide_resnet(),
            ZooEntry::ToyChain(d) => toy_chain(d),
            ZooEntry::ToyAvg(k) => toy_avg(k),
            ZooEntry::DeepNarrow => conv_stack("deep-narrow", 16, 64),
            ZooEntry::ShallowWide => conv_stack("shallow-wide", 4, 128),
        };
        debug_assert!(crate::net_ir::validate(&net).is_empty(), "{}", net.name);
        net
    }
}

impl fmt::Display for ZooEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZooEntry::AlexNet(None) => write!(f, "alexnet"),
            ZooEntry::AlexNet(Some(k)) => write!(f, "alexnet-k{k}"),
            ZooEntry::Vgg16 => write!(f, "vgg16"),
            ZooEntry::ResNet(d) => write!(f, "resnet{d}"),
            ZooEntry::WideResNet => write!(f, "wide-resnet"),
            ZooEntry::ToyChain(d) => write!(f, "toy-chain-{d}"),
            ZooEntry::ToyAvg(k) => write!(f, "toy-avg-{k}"),
            ZooEntry::DeepNarrow => write!(f, "deep-narrow"),
            ZooEntry::ShallowWide => write!(f, "shallow-wide"),
        }
    }
}

impl FromStr for ZooEntry {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let unknown = || Error::Config(format!("unknown zoo entry `{name}` (see `zoo list`)"));
        let positive = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(unknown)
        };
        Ok(match name {
            "alexnet" => ZooEntry::AlexNet(None),
            "alexnet-k3" => ZooEntry::AlexNet(Some(3)),
            "alexnet-k7" => ZooEntry::AlexNet(Some(7)),
            "vgg16" => ZooEntry::Vgg16,
            "resnet18" => ZooEntry::ResNet(18),
            "resnet50" => ZooEntry::ResNet(50),
            "resnet152" => ZooEntry::ResNet(152),
            "wide-resnet" => ZooEntry::WideResNet,
            "deep-narrow" => ZooEntry::DeepNarrow,
            "shallow-wide" => ZooEntry::ShallowWide,
            _ => {
                if let Some(d) = name.strip_prefix("toy-chain-") {
                    ZooEntry::ToyChain(positive(d)?)
                } else if let Some(k) = name.strip_prefix("toy-avg-") {
                    ZooEntry::ToyAvg(positive(k)?)
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

pub fn build(name: &str) -> Result<NetworkSpec> {
    Ok(name.parse::<ZooEntry>()?.build())
}

/// Appends layers while tracking the id of the most recent one.
struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new() }
    }

    fn last(&self) -> Vec<String> {
        self.layers
            .last()
            .map(|l| vec![l.id.clone()])
            .unwrap_or_default()
    }

    fn push(&mut self, mut layer: LayerSpec, chained: bool) -> String {
        if chained {
            layer.inputs = self.last();
        }
        let id = layer.id.clone();
        self.layers.push(layer);
        id
    }

    fn conv(&mut self, id: &str, k: usize, m: usize, stride: usize, pad: usize) -> String {
        self.push(LayerSpec::conv(id, k, k, m, stride, pad, &[]), true)
    }

    fn conv_relu(&mut self, id: &str, k: usize, m: usize, stride: usize, pad: usize) -> String {
        self.conv(id, k, m, stride, pad);
        self.relu(&format!("{id}_relu"))
    }

    fn relu(&mut self, id: &str) -> String {
        self.push(LayerSpec::relu(id, &[]), true)
    }

    fn maxpool(&mut self, id: &str, k: usize, stride: usize, pad: usize) -> String {
        self.push(
            LayerSpec::pool(id, LayerKind::MaxPool, k, k, stride, pad, &[]),
            true,
        )
    }

    fn fc(&mut self, id: &str, r: usize, s: usize, m: usize) -> String {
        self.push(LayerSpec::fc(id, r, s, m, &[]), true)
    }

    fn finish(self, name: &str, input: Dims) -> NetworkSpec {
        NetworkSpec::new(name, input, self.layers)
    }
}

fn alexnet(k: Option<usize>) -> NetworkSpec {
    let (k1, k2, k3) = match k {
        None => (11, 5, 3),
        Some(k) => (k, k, k),
    };
    let same = |k: usize| (k - 1) / 2;
    let mut b = Builder::new();
    b.conv_relu("conv1", k1, 96, 4, 0);
    b.maxpool("pool1", 3, 2, 0);
    b.conv_relu("conv2", k2, 256, 1, same(k2));
    b.maxpool("pool2", 3, 2, 0);
    b.conv_relu("conv3", k3, 384, 1, same(k3));
    b.conv_relu("conv4", k3, 384, 1, same(k3));
    b.conv_relu("conv5", k3, 256, 1, same(k3));
    b.maxpool("pool5", 3, 2, 0);
    b.fc("fc6", 6, 6, 4096);
    b.relu("fc6_relu");
    b.fc("fc7", 1, 1, 4096);
    b.relu("fc7_relu");
    b.fc("fc8", 1, 1, 1000);
    let name = match k {
        None => "alexnet".to_string(),
        Some(k) => format!("alexnet-k{k}"),
    };
    b.finish(&name, Dims::new(227, 227, 3))
}

fn vgg16() -> NetworkSpec {
    let mut b = Builder::new();
    let stages: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];
    for (si, &(n, m)) in stages.iter().enumerate() {
        for j in 0..n {
            b.conv_relu(&format!("conv{}_{}", si + 1, j + 1), 3, m, 1, 1);
        }
        b.maxpool(&format!("pool{}", si + 1), 2, 2, 0);
    }
    b.fc("fc6", 7, 7, 4096);
    b.relu("fc6_relu");
    b.fc("fc7", 1, 1, 4096);
    b.relu("fc7_relu");
    b.fc("fc8", 1, 1, 1000);
    b.finish("vgg16", Dims::new(224, 224, 3))
}

fn resnet_stem(b: &mut Builder) -> (String, usize) {
    b.conv_relu("conv1", 7, 64, 2, 3);
    (b.maxpool("pool1", 3, 2, 1), 64)
}

/// Residual join: `out = relu(main + shortcut)`. Adds a 1x1 projection when
/// the shortcut changes shape.
fn residual(
    b: &mut Builder,
    prefix: &str,
    input: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    main: &str,
) -> String {
    let shortcut = if in_ch != out_ch || stride != 1 {
        let id = format!("{prefix}_proj");
        b.push(
            LayerSpec::conv(&id, 1, 1, out_ch, stride, 0, &[input]),
            false,
        );
        id
    } else {
        input.to_string()
    };
    let add = format!("{prefix}_add");
    b.push(LayerSpec::add(&add, main, &shortcut), false);
    b.relu(&format!("{prefix}_relu"))
}

fn resnet_head(b: &mut Builder) {
    b.push(
        LayerSpec::pool("avgpool", LayerKind::AvgPool, 7, 7, 1, 0, &[]),
        true,
    );
    b.push(LayerSpec::fc("fc", 1, 1, 1000, &[]), true);
}

fn basic_resnet(name: &str, blocks: [usize; 4]) -> NetworkSpec {
    let mut b = Builder::new();
    let (mut x, mut ch) = resnet_stem(&mut b);
    for (si, &n) in blocks.iter().enumerate() {
        let width = 64 << si;
        for j in 0..n {
            let stride = if si > 0 && j == 0 { 2 } else { 1 };
            let p = format!("s{}b{}", si + 1, j + 1);
            b.push(
                LayerSpec::conv(format!("{p}_conv1"), 3, 3, width, stride, 1, &[&x]),
                false,
            );
            b.relu(&format!("{p}_conv1_relu"));
            let main = b.conv(&format!("{p}_conv2"), 3, width, 1, 1);
            x = residual(&mut b, &p, &x, ch, width, stride, &main);
            ch = width;
        }
    }
    resnet_head(&mut b);
    b.finish(name, Dims::new(224, 224, 3))
}

fn bottleneck_resnet(name: &str, blocks: [usize; 4], width_mult: usize) -> NetworkSpec {
    let mut b = Builder::new();
    let (mut x, mut ch) = resnet_stem(&mut b);
    for (si, &n) in blocks.iter().enumerate() {
        let mid = (64 << si) * width_mult;
        let out = 256 << si;
        for j in 0..n {
            let stride = if si > 0 && j == 0 { 2 } else { 1 };
            let p = format!("s{}b{}", si + 1, j + 1);
            b.push(
                LayerSpec::conv(format!("{p}_conv1"), 1, 1, mid, 1, 0, &[&x]),
                false,
            );
            b.relu(&format!("{p}_conv1_relu"));
            b.conv_relu(&format!("{p}_conv2"), 3, mid, stride, 1);
            let main = b.conv(&format!("{p}_conv3"), 1, out, 1, 0);
            x = residual(&mut b, &p, &x, ch, out, stride, &main);
            ch = out;
        }
    }
    resnet_head(&mut b);
    b.finish(name, Dims::new(224, 224, 3))
}

fn resnet(depth: usize) -> NetworkSpec {
    let name = format!("resnet{depth}");
    match depth {
        18 => basic_resnet(&name, [2, 2, 2, 2]),
        50 => bottleneck_resnet(&name, [3, 4, 6, 3], 1),
        152 => bottleneck_resnet(&name, [3, 8, 36, 3], 1),
        _ => unreachable!("zoo only parses resnet18/50/152"),
    }
}

fn wide_resnet() -> NetworkSpec {
    bottleneck_resnet("wide-resnet", [3, 4, 6, 3], 2)
}

/// `depth` scalar fc layers in sequence.
pub fn toy_chain(depth: usize) -> NetworkSpec {
    let mut b = Builder::new();
    for i in 0..depth {
        b.fc(&format!("fc{}", i + 1), 1, 1, 1);
    }
    b.finish(&format!("toy-chain-{depth}"), Dims::new(1, 1, 1))
}

/// `1 x k` input, 1x1 conv `copy`, then a `1 x k` average `avg`.
pub fn toy_avg(k: usize) -> NetworkSpec {
    let mut b = Builder::new();
    b.conv("copy", 1, 1, 1, 0);
    b.push(
        LayerSpec::pool("avg", LayerKind::AvgPool, 1, k, 1, 0, &[]),
        true,
    );
    b.finish(&format!("toy-avg-{k}"), Dims::new(1, k, 1))
}

fn conv_stack(name: &str, depth: usize, channels: usize) -> NetworkSpec {
    let mut b = Builder::new();
    for i in 0..depth {
        b.conv(&format!("conv{}", i + 1), 3, channels, 1, 1);
    }
    b.finish(name, Dims::new(14, 14, channels))
}
