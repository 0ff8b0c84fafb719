//! Spectral-domain discriminator: a stack of grouped 1-D convolutions over
//! time, with the time-frequency bins of the input representation as the
//! channels of the first layer. Every layer is weight-normalised
//! (`w = g * v / |v|` per output channel) and all but the last are followed
//! by a leaky ReLU. Convolutions use stride 1 and "same" zero padding; the
//! score is the mean of the final single-channel output over time.

use rand::Rng;

use crate::dsp::{Frontend, FrontendCache, Representation, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::real::{axpy, dot, Real};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub groups: usize,
}

/// Kernel sizes, output channels and groups of the seven-layer stack.
pub const TABLE1: [ConvSpec; 7] = [
    ConvSpec { kernel: 10, out_channels: 32, groups: 1 },
    ConvSpec { kernel: 21, out_channels: 128, groups: 8 },
    ConvSpec { kernel: 21, out_channels: 512, groups: 32 },
    ConvSpec { kernel: 21, out_channels: 1024, groups: 64 },
    ConvSpec { kernel: 21, out_channels: 1024, groups: 64 },
    ConvSpec { kernel: 5, out_channels: 1024, groups: 1 },
    ConvSpec { kernel: 3, out_channels: 1, groups: 1 },
];

pub const MULTISCALE_WINDOWS: [usize; 3] = [512, 1024, 2048];
pub const SINGLE_SCALE_WINDOW: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub layers: Vec<ConvSpec>,
    pub leaky_slope: f64,
    pub input: SpectrogramConfig,
    pub sample_rate: u32,
}

impl DiscriminatorConfig {
    /// The full-width seven-layer stack over `input`.
    pub fn table1(input: SpectrogramConfig, sample_rate: u32) -> Self {
        Self {
            layers: TABLE1.to_vec(),
            leaky_slope: 0.2,
            input,
            sample_rate,
        }
    }

    /// Same stack with hidden widths and group counts divided by `divisor`
    /// (groups never drop below 1). `divisor = 1` is the full model.
    pub fn table1_scaled(input: SpectrogramConfig, sample_rate: u32, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::Config("width divisor must be positive".into()));
        }
        let last = TABLE1.len() - 1;
        let layers = TABLE1
            .iter()
            .enumerate()
            .map(|(i, s)| ConvSpec {
                kernel: s.kernel,
                out_channels: if i == last { 1 } else { (s.out_channels / divisor).max(1) },
                groups: if i == last { 1 } else { (s.groups / divisor).max(1) },
            })
            .collect();
        let cfg = Self {
            layers,
            leaky_slope: 0.2,
            input,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input.n_channels()
        } else {
            self.layers[layer - 1].out_channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        if self.layers.is_empty() {
            return Err(Error::Config("discriminator needs at least one layer".into()));
        }
        for (i, s) in self.layers.iter().enumerate() {
            let cin = self.in_channels(i);
            if s.kernel == 0 || s.groups == 0 || s.out_channels == 0 {
                return Err(Error::Config(format!("layer {}: zero-sized spec {s:?}", i + 1)));
            }
            if cin % s.groups != 0 || s.out_channels % s.groups != 0 {
                return Err(Error::Config(format!(
                    "layer {}: {} -> {} channels not divisible by {} groups",
                    i + 1,
                    cin,
                    s.out_channels,
                    s.groups
                )));
            }
        }
        if self.layers.last().map(|s| s.out_channels) != Some(1) {
            return Err(Error::Config("final layer must have one output channel".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WnConv<T> {
    /// `[out, in / groups, kernel]`
    pub direction: Tensor<T>,
    /// `[out]`
    pub magnitude: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub layers: Vec<WnConv<T>>,
}

impl<T: Real> DiscriminatorParams<T> {
    pub fn zeros(config: &DiscriminatorConfig) -> Self {
        Self {
            layers: config
                .layers
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let cin_pg = config.in_channels(i) / s.groups;
                    WnConv {
                        direction: Tensor::zeros(&[s.out_channels, cin_pg, s.kernel]),
                        magnitude: Tensor::zeros(&[s.out_channels]),
                        bias: Tensor::zeros(&[s.out_channels]),
                    }
                })
                .collect(),
        }
    }

    /// Directions uniform in `±sqrt(1 / fan_in)`; magnitudes equal to the
    /// initial direction norms so the effective weights equal the raw draw.
    pub fn init<R: Rng + ?Sized>(config: &DiscriminatorConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        for (i, (layer, s)) in p.layers.iter_mut().zip(&config.layers).enumerate() {
            let cin_pg = config.in_channels(i) / s.groups;
            let bound = (1.0 / (cin_pg * s.kernel) as f64).sqrt();
            layer.direction = Tensor::uniform(&[s.out_channels, cin_pg, s.kernel], bound, rng);
            layer.bias = Tensor::uniform(&[s.out_channels], bound, rng);
            let row = cin_pg * s.kernel;
            for (o, m) in layer.magnitude.data_mut().iter_mut().enumerate() {
                let v = &layer.direction.data()[o * row..(o + 1) * row];
                *m = v.iter().map(|&x| x * x).sum::<T>().sqrt();
            }
        }
        p
    }
}

impl<T: Real> ParamSet<T> for DiscriminatorParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.direction"), &l.direction));
            out.push((format!("layers.{i}.magnitude"), &l.magnitude));
            out.push((format!("layers.{i}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.direction);
            out.push(&mut l.magnitude);
            out.push(&mut l.bias);
        }
        out
    }
}

/// Effective weight `g * v / |v|` per output row, in the parameter layout.
/// A row with zero direction gives a zero weight.
pub fn effective_weight<T: Real>(direction: &Tensor<T>, magnitude: &Tensor<T>) -> Tensor<T> {
    let rows = magnitude.len();
    let row = direction.len() / rows;
    let mut w = direction.clone();
    for (o, &g) in magnitude.data().iter().enumerate() {
        let v = &mut w.data_mut()[o * row..(o + 1) * row];
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        let s = if norm > T::zero() { g / norm } else { T::zero() };
        v.iter_mut().for_each(|x| *x *= s);
    }
    w
}

/// Gradients of the direction and magnitude given the gradient of the
/// effective weight.
pub fn weight_norm_backward<T: Real>(
    direction: &Tensor<T>,
    magnitude: &Tensor<T>,
    d_weight: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let rows = magnitude.len();
    let row = direction.len() / rows;
    let mut d_dir = Tensor::zeros(direction.shape());
    let mut d_mag = Tensor::zeros(magnitude.shape());
    for o in 0..rows {
        let v = &direction.data()[o * row..(o + 1) * row];
        let dw = &d_weight.data()[o * row..(o + 1) * row];
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let proj = dot(dw, v) / norm;
        d_mag.data_mut()[o] = proj;
        let g = magnitude.data()[o];
        let dd = &mut d_dir.data_mut()[o * row..(o + 1) * row];
        for ((d, &w), &x) in dd.iter_mut().zip(dw).zip(v) {
            *d = g / norm * (w - proj * x / norm);
        }
    }
    (d_dir, d_mag)
}

/// Weights rearranged to `[group][k][in_local][out_local]` for the inner
/// loops.
struct ComputeWeight<T> {
    data: Vec<T>,
    kernel: usize,
    groups: usize,
    cin_pg: usize,
    cout_pg: usize,
}

impl<T: Real> ComputeWeight<T> {
    fn from_param(w: &Tensor<T>, groups: usize) -> Self {
        let (cout, cin_pg, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let cout_pg = cout / groups;
        let mut data = vec![T::zero(); w.len()];
        for o in 0..cout {
            let (g, ol) = (o / cout_pg, o % cout_pg);
            for i in 0..cin_pg {
                for k in 0..kernel {
                    data[((g * kernel + k) * cin_pg + i) * cout_pg + ol] = w.data()[(o * cin_pg + i) * kernel + k];
                }
            }
        }
        Self {
            data,
            kernel,
            groups,
            cin_pg,
            cout_pg,
        }
    }

    fn to_param(&self) -> Tensor<T> {
        let cout = self.cout_pg * self.groups;
        let mut out = Tensor::zeros(&[cout, self.cin_pg, self.kernel]);
        for o in 0..cout {
            let (g, ol) = (o / self.cout_pg, o % self.cout_pg);
            for i in 0..self.cin_pg {
                for k in 0..self.kernel {
                    out.data_mut()[(o * self.cin_pg + i) * self.kernel + k] =
                        self.data[((g * self.kernel + k) * self.cin_pg + i) * self.cout_pg + ol];
                }
            }
        }
        out
    }

    #[inline(always)]
    fn block(&self, g: usize, k: usize, i: usize) -> &[T] {
        let off = ((g * self.kernel + k) * self.cin_pg + i) * self.cout_pg;
        &self.data[off..off + self.cout_pg]
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// `x`: `[frames x cin]` -> `[frames x cout]`.
    fn forward(&self, x: &[T], frames: usize, bias: &[T]) -> Vec<T> {
        let cin = self.cin_pg * self.groups;
        let cout = self.cout_pg * self.groups;
        let pl = self.pad_left();
        let mut y = vec![T::zero(); frames * cout];
        for t in 0..frames {
            let yt = &mut y[t * cout..(t + 1) * cout];
            yt.copy_from_slice(bias);
            for k in 0..self.kernel {
                let src = t + k;
                if src < pl || src - pl >= frames {
                    continue;
                }
                let xs = &x[(src - pl) * cin..(src - pl + 1) * cin];
                for g in 0..self.groups {
                    let yg = &mut yt[g * self.cout_pg..(g + 1) * self.cout_pg];
                    for i in 0..self.cin_pg {
                        axpy(yg, xs[g * self.cin_pg + i], self.block(g, k, i));
                    }
                }
            }
        }
        y
    }

    /// Returns (gradient of the weight in compute layout, gradient of x);
    /// either may be skipped, leaving it zero.
    fn backward(&self, x: &[T], frames: usize, dy: &[T], need_dw: bool, need_dx: bool) -> (ComputeWeight<T>, Vec<T>) {
        let cin = self.cin_pg * self.groups;
        let cout = self.cout_pg * self.groups;
        let pl = self.pad_left();
        let mut dw = ComputeWeight {
            data: if need_dw { vec![T::zero(); self.data.len()] } else { Vec::new() },
            ..*self
        };
        let mut dx = vec![T::zero(); if need_dx { frames * cin } else { 0 }];
        for t in 0..frames {
            let dyt = &dy[t * cout..(t + 1) * cout];
            for k in 0..self.kernel {
                let src = t + k;
                if src < pl || src - pl >= frames {
                    continue;
                }
                let s = src - pl;
                for g in 0..self.groups {
                    let dyg = &dyt[g * self.cout_pg..(g + 1) * self.cout_pg];
                    for i in 0..self.cin_pg {
                        let ci = g * self.cin_pg + i;
                        if need_dw {
                            let off = ((g * self.kernel + k) * self.cin_pg + i) * self.cout_pg;
                            axpy(&mut dw.data[off..off + self.cout_pg], x[s * cin + ci], dyg);
                        }
                        if need_dx {
                            dx[s * cin + ci] += dot(self.block(g, k, i), dyg);
                        }
                    }
                }
            }
        }
        (dw, dx)
    }
}

impl<T> Clone for ComputeWeight<T>
where
    T: Clone,
{
    fn clone(&self) -> Self {
        Self {
            data: self.data.clone(),
            kernel: self.kernel,
            groups: self.groups,
            cin_pg: self.cin_pg,
            cout_pg: self.cout_pg,
        }
    }
}

/// Grouped 1-D convolution, stride 1, "same" zero padding
/// (`(K - 1) / 2` frames on the left). `x` is `[frames x in_channels]` and
/// `weight` is `[out, in / groups, K]`.
pub fn conv1d_same<T: Real>(x: &[T], frames: usize, weight: &Tensor<T>, bias: &[T], groups: usize) -> Vec<T> {
    ComputeWeight::from_param(weight, groups).forward(x, frames, bias)
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache<T> {
    frontend: FrontendCache<T>,
    frames: usize,
    /// Input to each layer, `[frames x C_in]`.
    inputs: Vec<Vec<T>>,
    /// Post-activation output of each hidden layer (sign gives the mask).
    outputs: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Real> {
    config: DiscriminatorConfig,
    params: DiscriminatorParams<T>,
    frontend: Frontend<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, params: DiscriminatorParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = DiscriminatorParams::<T>::zeros(&config);
        for ((n, a), (_, b)) in params.named_tensors().iter().zip(expected.named_tensors().iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!("{n}: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        if params.layers.len() != expected.layers.len() {
            return Err(Error::Shape("layer count does not match config".into()));
        }
        let frontend = Frontend::new(config.input, config.sample_rate)?;
        Ok(Self {
            config,
            params,
            frontend,
        })
    }

    pub fn init<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = DiscriminatorParams::init(&config, rng);
        Self::new(config, params)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &DiscriminatorParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DiscriminatorParams<T> {
        &mut self.params
    }

    pub fn frontend(&self) -> &Frontend<T> {
        &self.frontend
    }

    pub fn forward(&self, audio: &[T]) -> Result<T> {
        self.run(audio, false).map(|(s, _)| s)
    }

    pub fn forward_cached(&self, audio: &[T]) -> Result<(T, DiscriminatorCache<T>)> {
        self.run(audio, true)
    }

    fn weights(&self) -> Vec<ComputeWeight<T>> {
        self.params
            .layers
            .iter()
            .zip(&self.config.layers)
            .map(|(l, s)| ComputeWeight::from_param(&effective_weight(&l.direction, &l.magnitude), s.groups))
            .collect()
    }

    fn run(&self, audio: &[T], keep: bool) -> Result<(T, DiscriminatorCache<T>)> {
        let (spec, fcache) = if keep {
            self.frontend.forward_cached(audio)?
        } else {
            (self.frontend.forward(audio)?, FrontendCache::default())
        };
        let frames = spec.n_frames;
        let slope = T::of(self.config.leaky_slope);
        let weights = self.weights();
        let last = weights.len() - 1;
        let mut x = spec.values;
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (i, w) in weights.iter().enumerate() {
            let mut y = w.forward(&x, frames, self.params.layers[i].bias.data());
            if i < last {
                y.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v *= slope
                    }
                });
            }
            if keep {
                inputs.push(std::mem::take(&mut x));
                if i < last {
                    outputs.push(y.clone());
                }
            }
            x = y;
        }
        let score = x.iter().copied().sum::<T>() / T::of(frames as f64);
        Ok((
            score,
            DiscriminatorCache {
                frontend: fcache,
                frames,
                inputs,
                outputs,
            },
        ))
    }

    /// Gradients of `upstream * score` with respect to every parameter and
    /// the input audio.
    pub fn backward(&self, cache: &DiscriminatorCache<T>, upstream: T) -> (DiscriminatorParams<T>, Vec<T>) {
        let (grads, dspec) = self.backward_inner(cache, upstream, true, true);
        let dx = self.frontend.backward(&cache.frontend, &dspec);
        (grads, dx)
    }

    /// Parameter gradients only; skips the front-end pass.
    pub fn backward_params(&self, cache: &DiscriminatorCache<T>, upstream: T) -> DiscriminatorParams<T> {
        self.backward_inner(cache, upstream, true, false).0
    }

    /// Input-audio gradient only.
    pub fn backward_input(&self, cache: &DiscriminatorCache<T>, upstream: T) -> Vec<T> {
        let (_, dspec) = self.backward_inner(cache, upstream, false, true);
        self.frontend.backward(&cache.frontend, &dspec)
    }

    fn backward_inner(
        &self,
        cache: &DiscriminatorCache<T>,
        upstream: T,
        need_params: bool,
        need_input: bool,
    ) -> (DiscriminatorParams<T>, Vec<T>) {
        assert_eq!(cache.inputs.len(), self.params.layers.len(), "forward pass was not cached");
        let frames = cache.frames;
        let slope = T::of(self.config.leaky_slope);
        let weights = self.weights();
        let last = weights.len() - 1;
        let mut grads = self.params.zeros_like();
        let mut dy = vec![upstream / T::of(frames as f64); frames];
        for i in (0..weights.len()).rev() {
            if i < last {
                for (d, &o) in dy.iter_mut().zip(&cache.outputs[i]) {
                    if o <= T::zero() {
                        *d *= slope;
                    }
                }
            }
            let need_dx = i > 0 || need_input;
            if need_params {
                let cout = self.config.layers[i].out_channels;
                let gb = grads.layers[i].bias.data_mut();
                for t in 0..frames {
                    axpy(gb, T::one(), &dy[t * cout..(t + 1) * cout]);
                }
            }
            let (dw, dx) = weights[i].backward(&cache.inputs[i], frames, &dy, need_params, need_dx);
            if need_params {
                let layer = &self.params.layers[i];
                let (d_dir, d_mag) = weight_norm_backward(&layer.direction, &layer.magnitude, &dw.to_param());
                grads.layers[i].direction = d_dir;
                grads.layers[i].magnitude = d_mag;
            }
            dy = dx;
        }
        (grads, dy)
    }
}

/// Sub-discriminators sharing one representation kind at different window
/// sizes.
#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator<T: Real> {
    subs: Vec<Discriminator<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleParams<T> {
    pub scales: Vec<DiscriminatorParams<T>>,
}

impl<T: Real> ParamSet<T> for MultiScaleParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.scales
            .iter()
            .enumerate()
            .flat_map(|(s, p)| {
                p.named_tensors()
                    .into_iter()
                    .map(move |(n, t)| (format!("scales.{s}.{n}"), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.scales.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}

/// Configs for one sub-discriminator per window size.
pub fn multiscale_configs(
    repr: Representation,
    windows: &[usize],
    n_mels: usize,
    log_epsilon: f64,
    sample_rate: u32,
    width_divisor: usize,
) -> Result<Vec<DiscriminatorConfig>> {
    windows
        .iter()
        .map(|&n| {
            let mut input = SpectrogramConfig::for_representation(n, repr, n_mels);
            input.log_epsilon = log_epsilon;
            DiscriminatorConfig::table1_scaled(input, sample_rate, width_divisor)
        })
        .collect()
}

impl<T: Real> MultiScaleDiscriminator<T> {
    pub fn new(subs: Vec<Discriminator<T>>) -> Result<Self> {
        if subs.is_empty() {
            return Err(Error::Config("need at least one sub-discriminator".into()));
        }
        Ok(Self { subs })
    }

    pub fn init<R: Rng + ?Sized>(configs: Vec<DiscriminatorConfig>, rng: &mut R) -> Result<Self> {
        let subs = configs
            .into_iter()
            .map(|c| Discriminator::init(c, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(subs)
    }

    pub fn from_params(configs: Vec<DiscriminatorConfig>, params: MultiScaleParams<T>) -> Result<Self> {
        if configs.len() != params.scales.len() {
            return Err(Error::Shape(format!(
                "{} configs but {} parameter sets",
                configs.len(),
                params.scales.len()
            )));
        }
        let subs = configs
            .into_iter()
            .zip(params.scales)
            .map(|(c, p)| Discriminator::new(c, p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(subs)
    }

    pub fn subs(&self) -> &[Discriminator<T>] {
        &self.subs
    }

    pub fn configs(&self) -> Vec<DiscriminatorConfig> {
        self.subs.iter().map(|d| d.config.clone()).collect()
    }

    pub fn params(&self) -> MultiScaleParams<T> {
        MultiScaleParams {
            scales: self.subs.iter().map(|d| d.params.clone()).collect(),
        }
    }

    pub fn set_params(&mut self, params: MultiScaleParams<T>) -> Result<()> {
        if params.scales.len() != self.subs.len() {
            return Err(Error::Shape("scale count mismatch".into()));
        }
        for (d, p) in self.subs.iter_mut().zip(params.scales) {
            d.params = p;
        }
        Ok(())
    }

    /// Applies `f` to each sub-discriminator's parameters in order.
    pub fn for_each_params_mut(&mut self, mut f: impl FnMut(usize, &mut DiscriminatorParams<T>)) {
        for (i, d) in self.subs.iter_mut().enumerate() {
            f(i, &mut d.params);
        }
    }

    pub fn forward(&self, audio: &[T]) -> Result<Vec<T>> {
        self.subs.iter().map(|d| d.forward(audio)).collect()
    }

    pub fn min_samples(&self) -> usize {
        self.subs
            .iter()
            .map(|d| d.config.input.window_size)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(repr: Representation) -> DiscriminatorConfig {
        DiscriminatorConfig {
            layers: vec![
                ConvSpec { kernel: 4, out_channels: 8, groups: 1 },
                ConvSpec { kernel: 3, out_channels: 1, groups: 1 },
            ],
            leaky_slope: 0.2,
            input: SpectrogramConfig::for_representation(128, repr, 16),
            sample_rate: 16000,
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn table1_matches_reference_layout() {
        let cfg = DiscriminatorConfig::table1(SpectrogramConfig::new(1024), 44100);
        cfg.validate().unwrap();
        let k: Vec<_> = cfg.layers.iter().map(|s| s.kernel).collect();
        let c: Vec<_> = cfg.layers.iter().map(|s| s.out_channels).collect();
        let g: Vec<_> = cfg.layers.iter().map(|s| s.groups).collect();
        assert_eq!(k, [10, 21, 21, 21, 21, 5, 3]);
        assert_eq!(c, [32, 128, 512, 1024, 1024, 1024, 1]);
        assert_eq!(g, [1, 8, 32, 64, 64, 1, 1]);
        assert_eq!(cfg.in_channels(0), 513);
        // layer 2: 32 -> 128 with 8 groups, i.e. 4 -> 16 per group
        assert_eq!((cfg.in_channels(1) / 8, 128 / 8), (4, 16));
        let p = DiscriminatorParams::<f32>::zeros(&cfg);
        assert_eq!(p.layers[1].direction.shape(), &[128, 4, 21]);
    }

    #[test]
    fn scaled_stack_is_valid() {
        for div in [1, 2, 4, 8] {
            let input = SpectrogramConfig::for_representation(512, Representation::LogMel, 160);
            DiscriminatorConfig::table1_scaled(input, 44100, div).unwrap();
        }
    }

    #[test]
    fn rejects_indivisible_groups() {
        let mut cfg = tiny(Representation::Spectrogram);
        cfg.layers[0].groups = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_params_score_zero() {
        let cfg = tiny(Representation::LogMel);
        let d = Discriminator::new(cfg.clone(), DiscriminatorParams::<f64>::zeros(&cfg)).unwrap();
        assert_eq!(d.forward(&noise(1000, 1)).unwrap(), 0.0);
    }

    #[test]
    fn too_short_audio_errors() {
        let cfg = tiny(Representation::Spectrogram);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::<f64>::init(cfg, &mut rng).unwrap();
        assert!(d.forward(&noise(100, 1)).is_err());
    }

    #[test]
    fn sign_flip_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::<f32>::init(tiny(Representation::LogSpectrogram), &mut rng).unwrap();
        let x: Vec<f32> = noise(900, 3).iter().map(|&v| v as f32).collect();
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        assert_eq!(d.forward(&x).unwrap(), d.forward(&neg).unwrap());
    }

    /// Dense brute-force convolution with block-diagonal weights.
    fn dense_conv(x: &[f64], frames: usize, cin: usize, w: &Tensor<f64>, bias: &[f64], groups: usize) -> Vec<f64> {
        let (cout, cin_pg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let cout_pg = cout / groups;
        let pl = (k - 1) / 2;
        let mut y = vec![0.0; frames * cout];
        for t in 0..frames {
            for o in 0..cout {
                let g = o / cout_pg;
                let mut acc = bias[o];
                for c in 0..cin {
                    if c / cin_pg != g {
                        continue;
                    }
                    for kk in 0..k {
                        let s = t as isize + kk as isize - pl as isize;
                        if s < 0 || s >= frames as isize {
                            continue;
                        }
                        acc += w.data()[(o * cin_pg + c % cin_pg) * k + kk] * x[s as usize * cin + c];
                    }
                }
                y[t * cout + o] = acc;
            }
        }
        y
    }

    #[test]
    fn grouped_conv_matches_dense_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (cin, cout, groups, k) in [(8, 12, 4, 5), (6, 6, 3, 10), (4, 8, 1, 3), (16, 4, 2, 21)] {
            let frames = 13;
            let x: Vec<f64> = (0..frames * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Tensor::<f64>::uniform(&[cout, cin / groups, k], 1.0, &mut rng);
            let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv1d_same(&x, frames, &w, &b, groups);
            let slow = dense_conv(&x, frames, cin, &w, &b, groups);
            for (a, s) in fast.iter().zip(&slow) {
                assert!((a - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_norm_row_norms_equal_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Tensor::<f64>::uniform(&[6, 3, 4], 1.0, &mut rng);
        let g = Tensor::<f64>::uniform(&[6], 2.0, &mut rng);
        let w = effective_weight(&v, &g);
        for o in 0..6 {
            let norm = w.data()[o * 12..(o + 1) * 12].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - g.data()[o].abs()).abs() <= 1e-6 * g.data()[o].abs());
        }
    }

    #[test]
    fn weight_norm_backward_matches_composed_map() {
        // oracle: finite differences of <dW, w(v, g)> along a random direction
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = Tensor::<f64>::uniform(&[4, 2, 3], 1.0, &mut rng);
        let g = Tensor::<f64>::uniform(&[4], 1.0, &mut rng);
        let dw = Tensor::<f64>::uniform(&[4, 2, 3], 1.0, &mut rng);
        let dv_dir = Tensor::<f64>::uniform(&[4, 2, 3], 1.0, &mut rng);
        let dg_dir = Tensor::<f64>::uniform(&[4], 1.0, &mut rng);
        let objective = |s: f64| {
            let mut vp = v.clone();
            let mut gp = g.clone();
            vp.data_mut().iter_mut().zip(dv_dir.data()).for_each(|(a, b)| *a += s * b);
            gp.data_mut().iter_mut().zip(dg_dir.data()).for_each(|(a, b)| *a += s * b);
            let w = effective_weight(&vp, &gp);
            w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-5;
        let fd = (objective(h) - objective(-h)) / (2.0 * h);
        let (d_dir, d_mag) = weight_norm_backward(&v, &g, &dw);
        let analytic: f64 = d_dir.data().iter().zip(dv_dir.data()).map(|(a, b)| a * b).sum::<f64>()
            + d_mag.data().iter().zip(dg_dir.data()).map(|(a, b)| a * b).sum::<f64>();
        assert!((fd - analytic).abs() / analytic.abs() < 1e-8, "{fd} vs {analytic}");
    }

    #[test]
    fn zero_direction_is_inert() {
        let v = Tensor::<f64>::zeros(&[2, 1, 3]);
        let g = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(effective_weight(&v, &g).data().iter().all(|&x| x == 0.0));
        let dw = Tensor::<f64>::from_vec(&[2, 1, 3], vec![1.0; 6]).unwrap();
        let (dd, dm) = weight_norm_backward(&v, &g, &dw);
        assert!(dd.data().iter().chain(dm.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn layers_preserve_frame_count() {
        let cfg = DiscriminatorConfig::table1(
            SpectrogramConfig::for_representation(512, Representation::LogMel, 160),
            44100,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = Discriminator::<f32>::init(cfg, &mut rng).unwrap();
        let x: Vec<f32> = noise(512 + 128 * 4, 8).iter().map(|&v| v as f32).collect();
        let (score, cache) = d.forward_cached(&x).unwrap();
        assert_eq!(cache.frames, 5);
        for (i, inp) in cache.inputs.iter().enumerate() {
            assert_eq!(inp.len(), 5 * d.config().in_channels(i));
        }
        assert!(score.is_finite());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Discriminator::<f64>::init(tiny(Representation::Mel), &mut rng).unwrap();
        let (_, cache) = d.forward_cached(&noise(600, 10)).unwrap();
        let (g, dx) = d.backward(&cache, 0.0);
        assert!(g.named_tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, repr) in Representation::ALL.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(20 + seed as u64);
            let cfg = tiny(repr);
            let d = Discriminator::<f64>::init(cfg.clone(), &mut rng).unwrap();
            let x = noise(700, 30 + seed as u64);
            let (_, cache) = d.forward_cached(&x).unwrap();
            let (grads, dx) = d.backward(&cache, 1.0);
            let h = 1e-4;
            let mut worst = 0.0f64;
            let names = grads.named_tensors();
            for (ti, (name, gt)) in names.iter().enumerate() {
                for e in 0..gt.len() {
                    let eval = |delta: f64| {
                        let mut p = d.params().clone();
                        p.tensors_mut()[ti].data_mut()[e] += delta;
                        Discriminator::new(cfg.clone(), p).unwrap().forward(&x).unwrap()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let an = gt.data()[e];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{repr} {name}[{e}]: fd {fd} vs {an}");
                    worst = worst.max(rel);
                }
            }
            let h = 1e-6;
            for i in (0..x.len()).step_by(5) {
                let eval = |delta: f64| {
                    let mut xp = x.clone();
                    xp[i] += delta;
                    d.forward(&xp).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (fd - dx[i]).abs() / fd.abs().max(dx[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "{repr} dx[{i}]: fd {fd} vs {}", dx[i]);
            }
        }
    }

    #[test]
    fn partial_backward_passes_agree_with_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Discriminator::<f64>::init(tiny(Representation::LogMel), &mut rng).unwrap();
        let (_, cache) = d.forward_cached(&noise(800, 12)).unwrap();
        let (g, dx) = d.backward(&cache, 0.7);
        assert_eq!(d.backward_params(&cache, 0.7), g);
        assert_eq!(d.backward_input(&cache, 0.7), dx);
    }

    #[test]
    fn multiscale_bin_counts_and_zero_params() {
        let cfgs = multiscale_configs(Representation::Spectrogram, &MULTISCALE_WINDOWS, 160, 1e-5, 44100, 8).unwrap();
        let bins: Vec<_> = cfgs.iter().map(|c| c.in_channels(0)).collect();
        assert_eq!(bins, [257, 513, 1025]);
        let mel = multiscale_configs(Representation::LogMel, &MULTISCALE_WINDOWS, 160, 1e-5, 44100, 8).unwrap();
        assert!(mel.iter().all(|c| c.in_channels(0) == 160));

        let params = MultiScaleParams {
            scales: cfgs.iter().map(DiscriminatorParams::<f32>::zeros).collect(),
        };
        let ms = MultiScaleDiscriminator::from_params(cfgs, params).unwrap();
        let x: Vec<f32> = noise(4096, 1).iter().map(|&v| v as f32).collect();
        assert_eq!(ms.forward(&x).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn multiscale_is_deterministic() {
        let cfgs = multiscale_configs(Representation::LogMel, &MULTISCALE_WINDOWS, 160, 1e-5, 44100, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ms = MultiScaleDiscriminator::<f32>::init(cfgs, &mut rng).unwrap();
        let x: Vec<f32> = noise(6000, 2).iter().map(|&v| v as f32).collect();
        let a = ms.forward(&x).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, ms.forward(&x).unwrap());
    }
}
