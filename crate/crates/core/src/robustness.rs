//! Noise injection, weight quantization and Monte Carlo accuracy sweeps.
//!
//! Noise is additive zero-mean Gaussian, injected into the output activations
//! of every weighted layer. In fixed mode the standard deviation is an
//! absolute `sigma`; in rescaled mode it is `ratio` times the layer's maximum
//! absolute activation, taken from a clean forward pass.
//!
//! Every Gaussian stream is derived from `(master_seed, axis_index,
//! trial_index, sample_index, layer_index)`, so sweep results do not depend on
//! scheduling or thread count.

pub mod fixtures;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::infer::{classify, Model, Tensor, WeightBlock, WeightSet};
use crate::net_ir::{LayerKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// Standard deviation in activation units.
    Fixed { sigma: f64 },
    /// Standard deviation per unit of the layer's max |activation|.
    Rescaled { ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Fixed,
    Rescaled,
}

impl NoiseMode {
    pub fn spec(self, value: f64) -> NoiseSpec {
        match self {
            NoiseMode::Fixed => NoiseSpec::Fixed { sigma: value },
            NoiseMode::Rescaled => NoiseSpec::Rescaled { ratio: value },
        }
    }
}

impl NoiseSpec {
    pub fn mode(&self) -> NoiseMode {
        match self {
            NoiseSpec::Fixed { .. } => NoiseMode::Fixed,
            NoiseSpec::Rescaled { .. } => NoiseMode::Rescaled,
        }
    }

    fn level(&self) -> f64 {
        match *self {
            NoiseSpec::Fixed { sigma } => sigma,
            NoiseSpec::Rescaled { ratio } => ratio,
        }
    }

    /// Effective standard deviation for a layer with the given clean maximum.
    pub fn std_dev(&self, layer_max: Option<f32>) -> Result<f64> {
        let level = self.level();
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::Config(format!(
                "noise level must be finite and >= 0, got {level}"
            )));
        }
        match *self {
            NoiseSpec::Fixed { sigma } => Ok(sigma),
            NoiseSpec::Rescaled { ratio } => match layer_max {
                Some(max) if max >= 0.0 && max.is_finite() => Ok(ratio * max as f64),
                _ => Err(Error::MissingLayerMax),
            },
        }
    }
}

/// Where noise lands relative to a weighted layer's nonlinearity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InjectionPoint {
    /// On the raw conv/fc output.
    PreActivation,
    /// On the output of the relu that directly and exclusively follows the
    /// weighted layer, falling back to the raw output when there is none.
    #[default]
    PostActivation,
}

/// Which clean activations define the rescaled-mode layer maximum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MaxScope {
    /// Max over the current sample's activations.
    #[default]
    PerSample,
    /// Max over the whole dataset, per layer.
    PerDataset,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoiseOptions {
    pub point: InjectionPoint,
    pub max_scope: MaxScope,
}

/// Identifies the Gaussian streams for one sample of one trial at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub master_seed: u64,
    pub axis_index: u64,
    pub trial_index: u64,
    pub sample_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, axis_index: u64, trial_index: u64, sample_index: u64) -> Self {
        StreamKey {
            master_seed,
            axis_index,
            trial_index,
            sample_index,
        }
    }

    /// The stream for one layer. The key fills the 256-bit ChaCha seed and the
    /// layer index selects the ChaCha stream, so distinct tuples never share
    /// a keystream.
    pub fn rng(&self, layer_index: usize) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (chunk, v) in seed.chunks_exact_mut(8).zip([
            self.master_seed,
            self.axis_index,
            self.trial_index,
            self.sample_index,
        ]) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(layer_index as u64);
        rng
    }
}

/// Returns `x + n` with `n` i.i.d. Gaussian. A zero standard deviation returns
/// `x` unchanged, bit for bit.
pub fn inject_noise<R: Rng + ?Sized>(
    x: &Tensor,
    spec: &NoiseSpec,
    layer_max: Option<f32>,
    rng: &mut R,
) -> Result<Tensor> {
    let std = spec.std_dev(layer_max)?;
    if std == 0.0 {
        return Ok(x.clone());
    }
    Ok(x.map(|v| {
        let z: f64 = rng.sample(StandardNormal);
        v + (std * z) as f32
    }))
}

/// Layers whose outputs receive noise, as `(site_layer, weighted_layer)`
/// index pairs. The weighted layer's index names the RNG stream.
pub fn noise_sites(net: &NetworkSpec, point: InjectionPoint) -> Vec<(usize, usize)> {
    net.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_weights())
        .map(|(i, _)| {
            let site = match point {
                InjectionPoint::PreActivation => i,
                InjectionPoint::PostActivation => match net.consumers(i).as_slice() {
                    [j] if net.layers[*j].kind == LayerKind::Relu => *j,
                    _ => i,
                },
            };
            (site, i)
        })
        .collect()
}

/// Per-layer map from site layer index to its weighted layer index.
fn site_table(net: &NetworkSpec, point: InjectionPoint) -> Vec<Option<usize>> {
    let mut table = vec![None; net.layers.len()];
    for (site, weighted) in noise_sites(net, point) {
        table[site] = Some(weighted);
    }
    table
}

/// Clean max |activation| at every layer, indexed by layer.
pub fn clean_layer_maxima(model: &Model<'_>, x: &Tensor) -> Result<Vec<f32>> {
    let mut maxima = vec![0.0f32; model.net.layers.len()];
    model.run_with(x, |idx, t| {
        maxima[idx] = t.max_abs();
        Ok(t)
    })?;
    Ok(maxima)
}

/// A model plus the injection plan, reused across many noisy evaluations.
pub struct NoisyModel<'a> {
    model: Model<'a>,
    sites: Vec<Option<usize>>,
}

impl<'a> NoisyModel<'a> {
    pub fn new(net: &'a NetworkSpec, weights: &'a WeightSet, opts: NoiseOptions) -> Result<Self> {
        let model = Model::new(net, weights)?;
        let sites = site_table(net, opts.point);
        Ok(NoisyModel { model, sites })
    }

    pub fn model(&self) -> &Model<'a> {
        &self.model
    }

    /// Forward pass with noise at every site. `maxima` holds per-layer clean
    /// maxima (required in rescaled mode; computed per sample when `None`).
    pub fn forward(
        &self,
        x: &Tensor,
        spec: &NoiseSpec,
        key: StreamKey,
        maxima: Option<&[f32]>,
    ) -> Result<Tensor> {
        let computed;
        let maxima = match (spec.mode(), maxima) {
            (NoiseMode::Rescaled, None) => {
                computed = clean_layer_maxima(&self.model, x)?;
                Some(computed.as_slice())
            }
            (_, m) => m,
        };
        self.model.run_with(x, |idx, t| match self.sites[idx] {
            Some(weighted) => {
                let mut rng = key.rng(weighted);
                inject_noise(&t, spec, maxima.map(|m| m[idx]), &mut rng)
            }
            None => Ok(t),
        })
    }
}

/// One noisy forward pass; in rescaled mode the layer maxima come from a
/// clean pass over the same input.
pub fn noisy_forward(
    net: &NetworkSpec,
    weights: &WeightSet,
    x: &Tensor,
    spec: &NoiseSpec,
    opts: NoiseOptions,
    key: StreamKey,
) -> Result<Tensor> {
    NoisyModel::new(net, weights, opts)?.forward(x, spec, key, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    bits: u32,
}

impl QuantSpec {
    pub const MIN_BITS: u32 = 2;
    pub const MAX_BITS: u32 = 16;

    pub fn new(bits: u32) -> Result<Self> {
        if !(Self::MIN_BITS..=Self::MAX_BITS).contains(&bits) {
            return Err(Error::Config(format!(
                "weight bit width must be in {}..={}, got {bits}",
                Self::MIN_BITS,
                Self::MAX_BITS
            )));
        }
        Ok(QuantSpec { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Largest integer level, `2^(bits-1) - 1`.
    pub fn max_level(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }
}

/// Symmetric uniform per-tensor quantization. Returns the dequantized values
/// and the step size (zero for an all-zero tensor, which is returned as is).
pub fn quantize_tensor(values: &[f32], spec: QuantSpec) -> (Vec<f32>, f64) {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return (values.to_vec(), 0.0);
    }
    let levels = spec.max_level() as f64;
    let scale = max as f64 / levels;
    let out = values
        .iter()
        .map(|&w| {
            // f64::round rounds half away from zero
            let q = (w as f64 / scale).round().clamp(-levels, levels);
            (q * scale) as f32
        })
        .collect();
    (out, scale)
}

pub fn quantize_weights(weights: &WeightSet, spec: QuantSpec) -> WeightSet {
    let mut out = WeightSet::new();
    for (id, block) in &weights.blocks {
        let (data, _) = quantize_tensor(&block.data, spec);
        out.insert(
            id.clone(),
            WeightBlock {
                data,
                ..block.clone()
            },
        );
    }
    out
}

/// Labelled inputs sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.dims() != first.dims()) {
                return Err(Error::Shape(format!(
                    "dataset mixes sample shapes {} and {}",
                    first.dims(),
                    bad.dims()
                )));
            }
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Format(
                "dataset contains NaN or infinite values".into(),
            ));
        }
        Ok(Dataset { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, factor: f32) -> Dataset {
        Dataset {
            samples: self.samples.iter().map(|s| s.map(|v| v * factor)).collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub trials: usize,
    pub master_seed: u64,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl EvalConfig {
    pub fn new(trials: usize, master_seed: u64) -> Self {
        EvalConfig {
            trials,
            master_seed,
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub axis_value: f64,
    pub accuracy_mean: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub accuracy_std: f64,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn check_axis<T: PartialOrd + Copy + std::fmt::Debug>(axis: &[T]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Config("sweep axis is empty".into()));
    }
    // Written negated so NaN entries are rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if axis.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(format!(
            "sweep axis must be strictly increasing: {axis:?}"
        )));
    }
    Ok(())
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Clean accuracy of `model` on `data`.
pub fn accuracy(model: &Model<'_>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = data
        .samples
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &label)| model.run(x).map(|y| usize::from(classify(&y) == label)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / data.len() as f64)
}

/// Monte Carlo accuracy at each noise level on `axis`.
pub fn sweep_noise(
    net: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    mode: NoiseMode,
    axis: &[f64],
    cfg: &EvalConfig,
    opts: NoiseOptions,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    check_axis(axis)?;
    for &v in axis {
        mode.spec(v).std_dev(Some(0.0))?;
    }
    let noisy = NoisyModel::new(net, weights, opts)?;

    in_pool(cfg.threads, || {
        let maxima: Option<Vec<Vec<f32>>> = match mode {
            NoiseMode::Fixed => None,
            NoiseMode::Rescaled => {
                let per_sample = data
                    .samples
                    .par_iter()
                    .map(|x| clean_layer_maxima(noisy.model(), x))
                    .collect::<Result<Vec<_>>>()?;
                Some(match opts.max_scope {
                    MaxScope::PerSample => per_sample,
                    MaxScope::PerDataset => {
                        let global = per_sample
                            .iter()
                            .fold(vec![0.0f32; net.layers.len()], |acc, m| {
                                acc.iter().zip(m).map(|(a, b)| a.max(*b)).collect()
                            });
                        vec![global; data.len()]
                    }
                })
            }
        };

        let mut rows = Vec::with_capacity(axis.len());
        for (ai, &level) in axis.iter().enumerate() {
            let spec = mode.spec(level);
            let per_trial = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let correct = (0..data.len())
                        .into_par_iter()
                        .map(|i| {
                            let key =
                                StreamKey::new(cfg.master_seed, ai as u64, t as u64, i as u64);
                            let m = maxima.as_ref().map(|m| m[i].as_slice());
                            let y = noisy.forward(&data.samples[i], &spec, key, m)?;
                            Ok::<_, Error>(usize::from(classify(&y) == data.labels[i]))
                        })
                        .try_reduce(|| 0, |a, b| Ok(a + b))?;
                    Ok(correct as f64 / data.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std) = mean_std(&per_trial);
            rows.push(EvalRow {
                axis_value: level,
                accuracy_mean: mean,
                accuracy_std: std,
                trials: cfg.trials,
                master_seed: cfg.master_seed,
            });
        }
        Ok(EvalReport { rows })
    })?
}

/// Clean accuracy after quantizing all weights to each bit width on `bits`.
pub fn sweep_quant(
    net: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    bits: &[u32],
    threads: Option<usize>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_axis(bits)?;
    let specs = bits
        .iter()
        .map(|&b| QuantSpec::new(b))
        .collect::<Result<Vec<_>>>()?;
    Model::new(net, weights)?;
    in_pool(threads, || {
        let mut rows = Vec::with_capacity(specs.len());
        for spec in specs {
            let q = quantize_weights(weights, spec);
            let acc = accuracy(&Model::new(net, &q)?, data)?;
            rows.push(EvalRow {
                axis_value: spec.bits() as f64,
                accuracy_mean: acc,
                accuracy_std: 0.0,
                trials: 1,
                master_seed: 0,
            });
        }
        Ok(EvalReport { rows })
    })?
}
