//! Small networks with known noise and quantization behaviour.
//!
//! Closed forms (with `Phi` the standard normal CDF, noise std `sigma`):
//!
//! - [`unit_chain`]: `D` unit-weight scalar layers on input `+-m`. Each layer
//!   adds independent noise, so the logit is `N(+-m, D sigma^2)` and
//!   `P(correct) = Phi(m / (sigma sqrt(D)))`.
//! - [`averaging`]: `k` copies of `+-m` each pick up independent noise in the
//!   1x1 conv, then a `k`-tap average (weights `1/k`) reduces the variance to
//!   `sigma^2 / k`: `P(correct) = Phi(m sqrt(k) / sigma)`.

use crate::infer::{Tensor, WeightBlock, WeightSet};
use crate::net_ir::{Dims, LayerSpec, NetworkSpec};
use crate::robustness::Dataset;
use crate::zoo;

#[derive(Debug, Clone)]
pub struct Fixture {
    pub net: NetworkSpec,
    pub weights: WeightSet,
    pub data: Dataset,
}

/// `+m` labelled 1 and `-m` labelled 0, broadcast to `dims`.
fn symmetric_pair(dims: Dims, margin: f32) -> Dataset {
    Dataset::new(
        vec![Tensor::filled(dims, margin), Tensor::filled(dims, -margin)],
        vec![1, 0],
    )
    .expect("well-formed fixture data")
}

pub fn unit_chain(depth: usize, margin: f32) -> Fixture {
    let net = zoo::toy_chain(depth);
    let mut weights = WeightSet::new();
    for layer in &net.layers {
        weights.insert(layer.id.clone(), WeightBlock::filled(1, 1, 1, 1, 1.0));
    }
    let data = symmetric_pair(net.input, margin);
    Fixture { net, weights, data }
}

pub fn averaging(k: usize, margin: f32) -> Fixture {
    let net = zoo::toy_avg(k);
    let mut weights = WeightSet::new();
    weights.insert("copy", WeightBlock::filled(1, 1, 1, 1, 1.0));
    let data = symmetric_pair(net.input, margin);
    Fixture { net, weights, data }
}

fn linear_net(name: &str, coeffs: &[f32], depth: usize) -> (NetworkSpec, WeightSet) {
    let mut layers = vec![LayerSpec::fc("fc1", 1, 1, 1, &[])];
    let mut weights = WeightSet::new();
    weights.insert(
        "fc1",
        WeightBlock::new(1, coeffs.len(), 1, 1, coeffs.to_vec()).expect("coefficient block"),
    );
    for i in 2..=depth {
        let id = format!("fc{i}");
        let prev = format!("fc{}", i - 1);
        layers.push(LayerSpec::fc(&id, 1, 1, 1, &[&prev]));
        weights.insert(id, WeightBlock::filled(1, 1, 1, 1, 1.0));
    }
    let net = NetworkSpec::new(name, Dims::new(1, 1, coeffs.len()), layers);
    (net, weights)
}

fn vectors(rows: Vec<Vec<f32>>, labels: &[usize]) -> Dataset {
    Dataset::new(
        rows.into_iter().map(Tensor::flat).collect(),
        labels.to_vec(),
    )
    .expect("well-formed fixture data")
}

/// Two nets sharing a dataset whose accuracy order flips under noise.
///
/// Twenty samples, labelled by the sign of their first coordinate. `A` reads
/// that coordinate exactly and then passes it through 15 more unit layers
/// (16 noise sites); it is perfect when clean. `B` is one layer with a
/// leak `0.5 * b` from the second coordinate, which flips `(1, -4)` and
/// `(-1, 4)`, so its clean accuracy is 0.9. At `sigma = 0.5` `A` drops to
/// about `Phi(0.5) = 0.69` while `B` stays near
/// `0.9 Phi(2) + 0.1 Phi(-2) = 0.882`.
pub fn noise_rank_pair() -> (Fixture, Fixture) {
    let mut rows = vec![vec![1.0, 0.0]; 9];
    rows.push(vec![1.0, -4.0]);
    let mut labels = vec![1; 10];
    rows.extend(vec![vec![-1.0, 0.0]; 9]);
    rows.push(vec![-1.0, 4.0]);
    labels.extend([0; 10]);
    let data = vectors(rows, &labels);

    let (net_a, w_a) = linear_net("rank-deep", &[1.0, 0.0], 16);
    let (net_b, w_b) = linear_net("rank-shallow", &[1.0, 0.5], 1);
    (
        Fixture {
            net: net_a,
            weights: w_a,
            data: data.clone(),
        },
        Fixture {
            net: net_b,
            weights: w_b,
            data,
        },
    )
}

/// Two single-layer nets whose accuracy order flips at low weight precision.
///
/// Labels follow `a + 0.2 b + 0.6 c`, which is exactly `A`'s weight vector,
/// so `A` is perfect in full precision. At 2 bits `A` rounds to
/// `(1, 0, 1)` and misses all three samples. `B = (1, 0, 0)` is already on
/// every grid, misses only the first sample, and keeps 2/3 at every width.
pub fn quant_rank_pair() -> (Fixture, Fixture) {
    let data = vectors(
        vec![
            vec![1.0, -10.0, 0.0],
            vec![1.0, 0.0, -1.5],
            vec![2.0, 0.0, -3.0],
        ],
        &[0, 1, 1],
    );
    let (net_a, w_a) = linear_net("quant-fragile", &[1.0, 0.2, 0.6], 1);
    let (net_b, w_b) = linear_net("quant-robust", &[1.0, 0.0, 0.0], 1);
    (
        Fixture {
            net: net_a,
            weights: w_a,
            data: data.clone(),
        },
        Fixture {
            net: net_b,
            weights: w_b,
            data,
        },
    )
}

/// One linear layer `(1.0, 0.3)` whose samples all clear the worst-case
/// quantization perturbation `(scale / 2) * sum |x|` even at 2 bits.
pub fn margin_threshold() -> Fixture {
    let data = vectors(
        vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![2.0, 1.0],
            vec![-2.0, 1.0],
        ],
        &[1, 0, 1, 0, 1, 0],
    );
    let (net, weights) = linear_net("margin", &[1.0, 0.3], 1);
    Fixture { net, weights, data }
}
