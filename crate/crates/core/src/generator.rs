//! Feedforward WaveNet: stacks of dilated causal gated convolutions with
//! residual connections, and a linear post-processor over the concatenated
//! gated outputs of every layer.
//!
//! Tensor layouts (chosen so inner loops run over contiguous output
//! channels):
//! - `input.weight`: `[C]`, the 1 -> C projection
//! - `layers.{l}.filter.weight`, `layers.{l}.gate.weight`: `[K, C_in, C_out]`;
//!   tap `k` reads the input delayed by `(K - 1 - k) * dilation`
//! - `layers.{l}.residual.weight`: `[C_gated, C_out]`
//! - `post.weight`: `[L, C]`, `post.bias`: `[1]`

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{axpy, dot, Real};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub n_stacks: usize,
    pub layers_per_stack: usize,
    pub kernel_size: usize,
    pub dilation_growth: usize,
    pub channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_stacks: 2,
            layers_per_stack: 9,
            kernel_size: 3,
            dilation_growth: 2,
            channels: 16,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stacks == 0 || self.layers_per_stack == 0 {
            return Err(Error::Config("generator needs at least one layer".into()));
        }
        if self.kernel_size == 0 || self.channels == 0 || self.dilation_growth == 0 {
            return Err(Error::Config(
                "kernel size, channels and dilation growth must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.n_stacks * self.layers_per_stack
    }

    /// Dilation of every layer in order: `growth^i` within each stack.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.n_stacks)
            .flat_map(|_| (0..self.layers_per_stack as u32).map(|i| self.dilation_growth.pow(i)))
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self)
    }
}

/// `1 + sum over layers of (kernel_size - 1) * dilation`.
pub fn receptive_field(config: &GeneratorConfig) -> usize {
    1 + config
        .dilations()
        .iter()
        .map(|d| (config.kernel_size - 1) * d)
        .sum::<usize>()
}

/// `tanh(filter) * sigmoid(gate)`, elementwise.
pub fn gated_activation<T: Real>(filter: &[T], gate: &[T]) -> Vec<T> {
    assert_eq!(filter.len(), gate.len(), "filter and gate paths differ in shape");
    filter
        .iter()
        .zip(gate)
        .map(|(&f, &g)| tanh(f) * sigmoid(g))
        .collect()
}

/// `tanh` through one `exp`; libm's `tanhf` dominates streaming cost.
#[inline(always)]
pub(crate) fn tanh<T: Real>(x: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((two * x).exp() + T::one())
}

#[inline(always)]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedLayer<T> {
    pub dilation: usize,
    pub filter_weight: Tensor<T>,
    pub filter_bias: Tensor<T>,
    pub gate_weight: Tensor<T>,
    pub gate_bias: Tensor<T>,
    pub residual_weight: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T> {
    pub input_weight: Tensor<T>,
    pub layers: Vec<GatedLayer<T>>,
    pub post_weight: Tensor<T>,
    pub post_bias: Tensor<T>,
}

impl<T: Real> GeneratorParams<T> {
    pub fn zeros(config: &GeneratorConfig) -> Self {
        let (c, k) = (config.channels, config.kernel_size);
        Self {
            input_weight: Tensor::zeros(&[c]),
            layers: config
                .dilations()
                .into_iter()
                .map(|dilation| GatedLayer {
                    dilation,
                    filter_weight: Tensor::zeros(&[k, c, c]),
                    filter_bias: Tensor::zeros(&[c]),
                    gate_weight: Tensor::zeros(&[k, c, c]),
                    gate_bias: Tensor::zeros(&[c]),
                    residual_weight: Tensor::zeros(&[c, c]),
                })
                .collect(),
            post_weight: Tensor::zeros(&[config.n_layers(), c]),
            post_bias: Tensor::zeros(&[1]),
        }
    }

    /// Every tensor uniform in `±sqrt(1 / fan_in)` of the layer it feeds.
    pub fn init<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Self {
        let (c, k) = (config.channels, config.kernel_size);
        let bound = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
        let conv = bound(c * k);
        let input_weight = Tensor::uniform(&[c], bound(1), rng);
        let layers = config
            .dilations()
            .into_iter()
            .map(|dilation| GatedLayer {
                dilation,
                filter_weight: Tensor::uniform(&[k, c, c], conv, rng),
                filter_bias: Tensor::uniform(&[c], conv, rng),
                gate_weight: Tensor::uniform(&[k, c, c], conv, rng),
                gate_bias: Tensor::uniform(&[c], conv, rng),
                residual_weight: Tensor::uniform(&[c, c], bound(c), rng),
            })
            .collect();
        let post = bound(config.n_layers() * c);
        Self {
            input_weight,
            layers,
            post_weight: Tensor::uniform(&[config.n_layers(), c], post, rng),
            post_bias: Tensor::uniform(&[1], post, rng),
        }
    }

    pub fn cast<U: Real>(&self) -> GeneratorParams<U> {
        GeneratorParams {
            input_weight: self.input_weight.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| GatedLayer {
                    dilation: l.dilation,
                    filter_weight: l.filter_weight.cast(),
                    filter_bias: l.filter_bias.cast(),
                    gate_weight: l.gate_weight.cast(),
                    gate_bias: l.gate_bias.cast(),
                    residual_weight: l.residual_weight.cast(),
                })
                .collect(),
            post_weight: self.post_weight.cast(),
            post_bias: self.post_bias.cast(),
        }
    }

    pub fn check_shapes(&self, config: &GeneratorConfig) -> Result<()> {
        let expected = Self::zeros(config);
        let mine = self.named_tensors();
        let theirs = expected.named_tensors();
        if mine.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                theirs.len(),
                mine.len()
            )));
        }
        for ((n, a), (_, b)) in mine.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!("{n}: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        if self.layers.iter().zip(&expected.layers).any(|(a, b)| a.dilation != b.dilation) {
            return Err(Error::Shape("dilations do not match config".into()));
        }
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for GeneratorParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("input.weight".to_string(), &self.input_weight)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.filter.weight"), &l.filter_weight));
            out.push((format!("layers.{i}.filter.bias"), &l.filter_bias));
            out.push((format!("layers.{i}.gate.weight"), &l.gate_weight));
            out.push((format!("layers.{i}.gate.bias"), &l.gate_bias));
            out.push((format!("layers.{i}.residual.weight"), &l.residual_weight));
        }
        out.push(("post.weight".to_string(), &self.post_weight));
        out.push(("post.bias".to_string(), &self.post_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.input_weight];
        for l in &mut self.layers {
            out.push(&mut l.filter_weight);
            out.push(&mut l.filter_bias);
            out.push(&mut l.gate_weight);
            out.push(&mut l.gate_bias);
            out.push(&mut l.residual_weight);
        }
        out.push(&mut self.post_weight);
        out.push(&mut self.post_bias);
        out
    }
}

/// Pre-activations of one layer at one time step, then the gated output.
/// `tap(k)` returns the layer input delayed by `(K - 1 - k) * dilation`.
/// Shared by the offline and streaming paths so both do identical
/// arithmetic.
#[inline(always)]
pub(crate) fn gated_unit<'a, T: Real>(
    layer: &GatedLayer<T>,
    kernel: usize,
    channels: usize,
    tap: impl Fn(usize) -> &'a [T],
    zf: &mut [T],
    zg: &mut [T],
) {
    zf.copy_from_slice(layer.filter_bias.data());
    zg.copy_from_slice(layer.gate_bias.data());
    let wf = layer.filter_weight.data();
    let wg = layer.gate_weight.data();
    for k in 0..kernel {
        let src = tap(k);
        for (i, &v) in src.iter().enumerate() {
            let off = (k * channels + i) * channels;
            axpy(zf, v, &wf[off..off + channels]);
            axpy(zg, v, &wg[off..off + channels]);
        }
    }
    for (f, g) in zf.iter_mut().zip(zg.iter_mut()) {
        *f = tanh(*f);
        *g = sigmoid(*g);
    }
}

/// `out = h + W_res^T a`.
#[inline(always)]
pub(crate) fn residual_unit<T: Real>(layer: &GatedLayer<T>, h: &[T], a: &[T], out: &mut [T]) {
    let c = h.len();
    out.copy_from_slice(h);
    let w = layer.residual_weight.data();
    for (o, &av) in a.iter().enumerate() {
        axpy(out, av, &w[o * c..(o + 1) * c]);
    }
}

/// Per-layer activations kept by [`Generator::forward_cached`].
#[derive(Debug, Clone)]
pub struct GeneratorCache<T> {
    x: Vec<T>,
    /// Input of each layer, `[T x C]`.
    h: Vec<Vec<T>>,
    /// `tanh` of the filter path and `sigmoid` of the gate path, `[T x C]`.
    th: Vec<Vec<T>>,
    sg: Vec<Vec<T>>,
}

/// A validated generator: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: GeneratorParams<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, params: GeneratorParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: GeneratorParams::init(&config, rng),
            config,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &GeneratorParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GeneratorParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> GeneratorParams<T> {
        self.params
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.run(x, false).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<(Vec<T>, GeneratorCache<T>)> {
        self.run(x, true)
    }

    fn run(&self, x: &[T], keep: bool) -> Result<(Vec<T>, GeneratorCache<T>)> {
        if x.is_empty() {
            return Err(Error::Data("generator input is empty".into()));
        }
        if !self.params.all_finite() {
            return Err(Error::Numerical("generator parameters are not finite".into()));
        }
        let n = x.len();
        let c = self.config.channels;
        let k = self.config.kernel_size;
        let zero = vec![T::zero(); c];

        let mut h = vec![T::zero(); n * c];
        let w_in = self.params.input_weight.data();
        for (t, &xv) in x.iter().enumerate() {
            for (o, &w) in w_in.iter().enumerate() {
                h[t * c + o] = w * xv;
            }
        }

        let mut y = vec![self.params.post_bias.data()[0]; n];
        let mut h_next = vec![T::zero(); n * c];
        let mut zf = vec![T::zero(); c];
        let mut zg = vec![T::zero(); c];
        let mut a = vec![T::zero(); c];
        let mut cache = GeneratorCache {
            x: if keep { x.to_vec() } else { Vec::new() },
            h: Vec::new(),
            th: Vec::new(),
            sg: Vec::new(),
        };
        let (mut th_all, mut sg_all) = (Vec::new(), Vec::new());

        for (l, layer) in self.params.layers.iter().enumerate() {
            let d = layer.dilation;
            let post = &self.params.post_weight.data()[l * c..(l + 1) * c];
            if keep {
                th_all = vec![T::zero(); n * c];
                sg_all = vec![T::zero(); n * c];
            }
            for t in 0..n {
                let h_ref = &h;
                let zero_ref = &zero;
                gated_unit(
                    layer,
                    k,
                    c,
                    |j| {
                        let delay = (k - 1 - j) * d;
                        if delay > t {
                            zero_ref.as_slice()
                        } else {
                            &h_ref[(t - delay) * c..(t - delay + 1) * c]
                        }
                    },
                    &mut zf,
                    &mut zg,
                );
                for ((av, &f), &g) in a.iter_mut().zip(&zf).zip(&zg) {
                    *av = f * g;
                }
                y[t] += dot(post, &a);
                residual_unit(layer, &h[t * c..(t + 1) * c], &a, &mut h_next[t * c..(t + 1) * c]);
                if keep {
                    th_all[t * c..(t + 1) * c].copy_from_slice(&zf);
                    sg_all[t * c..(t + 1) * c].copy_from_slice(&zg);
                }
            }
            if keep {
                cache.th.push(std::mem::take(&mut th_all));
                cache.sg.push(std::mem::take(&mut sg_all));
                cache.h.push(h.clone());
            }
            std::mem::swap(&mut h, &mut h_next);
        }
        Ok((y, cache))
    }

    /// Exact reverse-mode gradients for every parameter and for the input.
    pub fn backward(&self, cache: &GeneratorCache<T>, dy: &[T]) -> (GeneratorParams<T>, Vec<T>) {
        let n = cache.x.len();
        assert_eq!(dy.len(), n, "upstream gradient length mismatch");
        assert_eq!(cache.h.len(), self.params.layers.len(), "forward pass was not cached");
        let c = self.config.channels;
        let k = self.config.kernel_size;
        let mut grads = self.params.zeros_like();

        grads.post_bias.data_mut()[0] = dy.iter().copied().sum();

        let mut dh_next = vec![T::zero(); n * c];
        let mut a = vec![T::zero(); c];
        let mut da = vec![T::zero(); c];
        let mut dzf = vec![T::zero(); c];
        let mut dzg = vec![T::zero(); c];
        for (l, layer) in self.params.layers.iter().enumerate().rev() {
            let d = layer.dilation;
            let h = &cache.h[l];
            let th = &cache.th[l];
            let sg = &cache.sg[l];
            let post = &self.params.post_weight.data()[l * c..(l + 1) * c];
            let wr = layer.residual_weight.data();
            let wf = layer.filter_weight.data();
            let wg = layer.gate_weight.data();
            let g = &mut grads.layers[l];
            let mut dpost = vec![T::zero(); c];
            let mut dh = dh_next.clone();

            for t in 0..n {
                let tht = &th[t * c..(t + 1) * c];
                let sgt = &sg[t * c..(t + 1) * c];
                for ((av, &f), &s) in a.iter_mut().zip(tht).zip(sgt) {
                    *av = f * s;
                }
                axpy(&mut dpost, dy[t], &a);
                let dhn = &dh_next[t * c..(t + 1) * c];
                let dwr = g.residual_weight.data_mut();
                for o in 0..c {
                    da[o] = dy[t] * post[o] + dot(&wr[o * c..(o + 1) * c], dhn);
                    axpy(&mut dwr[o * c..(o + 1) * c], a[o], dhn);
                }
                for o in 0..c {
                    let (f, s) = (tht[o], sgt[o]);
                    dzf[o] = da[o] * s * (T::one() - f * f);
                    dzg[o] = da[o] * f * s * (T::one() - s);
                }
                axpy(g.filter_bias.data_mut(), T::one(), &dzf);
                axpy(g.gate_bias.data_mut(), T::one(), &dzg);
                for j in 0..k {
                    let delay = (k - 1 - j) * d;
                    if delay > t {
                        continue;
                    }
                    let src = t - delay;
                    let hs = &h[src * c..(src + 1) * c];
                    let dwf = g.filter_weight.data_mut();
                    for i in 0..c {
                        let off = (j * c + i) * c;
                        axpy(&mut dwf[off..off + c], hs[i], &dzf);
                    }
                    let dwg = g.gate_weight.data_mut();
                    for i in 0..c {
                        let off = (j * c + i) * c;
                        axpy(&mut dwg[off..off + c], hs[i], &dzg);
                    }
                    let dhs = &mut dh[src * c..(src + 1) * c];
                    for i in 0..c {
                        let off = (j * c + i) * c;
                        dhs[i] += dot(&wf[off..off + c], &dzf) + dot(&wg[off..off + c], &dzg);
                    }
                }
            }
            grads.post_weight.data_mut()[l * c..(l + 1) * c].copy_from_slice(&dpost);
            dh_next = dh;
        }

        let w_in = self.params.input_weight.data();
        let mut dx = vec![T::zero(); n];
        let dw_in = grads.input_weight.data_mut();
        for t in 0..n {
            let dh0 = &dh_next[t * c..(t + 1) * c];
            axpy(dw_in, cache.x[t], dh0);
            dx[t] = dot(w_in, dh0);
        }
        (grads, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_stacks: 2,
            layers_per_stack: 3,
            kernel_size: 3,
            dilation_growth: 2,
            channels: 4,
        }
    }

    #[test]
    fn receptive_field_examples() {
        assert_eq!(receptive_field(&GeneratorConfig::default()), 2045);
        let one = GeneratorConfig {
            n_stacks: 1,
            layers_per_stack: 1,
            ..GeneratorConfig::default()
        };
        assert_eq!(receptive_field(&one), 3);
        let nine = GeneratorConfig {
            n_stacks: 1,
            ..GeneratorConfig::default()
        };
        assert_eq!(receptive_field(&nine), 1 + 2 * 511);
        assert_eq!(GeneratorConfig::default().dilations()[8], 256);
    }

    #[test]
    fn gated_activation_examples() {
        assert_eq!(gated_activation(&[0.0f64], &[0.0]), vec![0.0]);
        let v = gated_activation(&[1.0f64], &[0.0])[0];
        assert!((v - 1f64.tanh() * 0.5).abs() < 1e-15);
        assert!((v - 0.3807970).abs() < 1e-7);
        let big = gated_activation(&[8.0f64], &[30.0])[0];
        assert!(big < 1.0 && big > 0.9999);
    }

    #[test]
    fn zero_params_give_bias_only_output() {
        let cfg = small();
        let mut p = GeneratorParams::<f64>::zeros(&cfg);
        let g = Generator::new(cfg, p.clone()).unwrap();
        assert!(g.forward(&[0.3, -0.2, 0.9]).unwrap().iter().all(|&v| v == 0.0));
        p.post_bias.data_mut()[0] = 0.25;
        let g = Generator::new(cfg, p).unwrap();
        assert_eq!(g.forward(&[0.3, -0.2, 0.9]).unwrap(), vec![0.25; 3]);
    }

    #[test]
    fn output_length_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f32>::init(small(), &mut rng).unwrap();
        for n in [1, 2, 7, 100] {
            assert_eq!(g.forward(&vec![0.1; n]).unwrap().len(), n);
        }
    }

    #[test]
    fn rejects_empty_input_and_nonfinite_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Generator::<f32>::init(small(), &mut rng).unwrap();
        assert!(g.forward(&[]).is_err());
        g.params_mut().post_bias.data_mut()[0] = f32::NAN;
        assert!(matches!(g.forward(&[0.0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn impulse_response_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small();
        let g = Generator::<f64>::init(cfg, &mut rng).unwrap();
        let n = 200;
        let at = 50;
        let base = g.forward(&vec![0.0; n]).unwrap();
        let mut x = vec![0.0; n];
        x[at] = 1.0;
        let y = g.forward(&x).unwrap();
        let changed: Vec<usize> = (0..n).filter(|&t| y[t] != base[t]).collect();
        assert_eq!(*changed.first().unwrap(), at);
        assert_eq!(*changed.last().unwrap(), at + cfg.receptive_field() - 1);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::<f64>::init(small(), &mut rng).unwrap();
        let (_, cache) = g.forward_cached(&[0.1, 0.5, -0.3, 0.2]).unwrap();
        let (grads, dx) = g.backward(&cache, &[0.0; 4]);
        assert!(grads.named_tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_additive_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Generator::<f64>::init(small(), &mut rng).unwrap();
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = g.forward_cached(&x).unwrap();
        let u1: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u2: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let (g1, d1) = g.backward(&cache, &u1);
        let (g2, d2) = g.backward(&cache, &u2);
        let (gs, ds) = g.backward(&cache, &sum);
        let mut acc = g1.clone();
        acc.accumulate(&g2);
        for ((_, a), (_, b)) in acc.named_tensors().iter().zip(gs.named_tensors().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
        for ((a, b), s) in d1.iter().zip(&d2).zip(&ds) {
            assert!((a + b - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn cast_round_trip_f32_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GeneratorParams::<f32>::init(&small(), &mut rng);
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
