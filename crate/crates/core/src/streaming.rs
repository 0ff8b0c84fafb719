//! Block-based real-time inference. Each layer keeps a ring buffer holding
//! the last `(K - 1) * dilation` inputs, so any block size produces the same
//! samples as one offline pass over the whole signal.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::generator::{sigmoid, tanh, Generator};
use crate::real::{axpy, dot, Real};
use crate::tensor::ParamSet;

/// Samples processed per internal pass; longer blocks are split.
const CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct StreamState<T: Real> {
    generator: Arc<Generator<T>>,
    model_sample_rate: Option<u32>,
    /// Per layer, channel-major input rows of `history + CHUNK` samples. The
    /// first `history = (K - 1) * dilation` entries of each row carry the
    /// tail of the previous chunk.
    inputs: Vec<Vec<T>>,
    history: Vec<usize>,
    zf: Vec<T>,
    zg: Vec<T>,
    a: Vec<T>,
    col: Vec<T>,
    y: Vec<T>,
}

impl<T: Real> StreamState<T> {
    pub fn new(generator: Arc<Generator<T>>) -> Result<Self> {
        if !generator.params().all_finite() {
            return Err(Error::Numerical("generator parameters are not finite".into()));
        }
        let cfg = *generator.config();
        let c = cfg.channels;
        let history: Vec<usize> = generator
            .params()
            .layers
            .iter()
            .map(|l| (cfg.kernel_size - 1) * l.dilation)
            .collect();
        let inputs = history.iter().map(|h| vec![T::zero(); c * (h + CHUNK)]).collect();
        Ok(Self {
            generator,
            model_sample_rate: None,
            inputs,
            history,
            zf: vec![T::zero(); c * CHUNK],
            zg: vec![T::zero(); c * CHUNK],
            a: vec![T::zero(); c * CHUNK],
            col: vec![T::zero(); c],
            y: vec![T::zero(); CHUNK],
        })
    }

    /// Rate the model was trained at; used only to warn on mismatch.
    pub fn with_sample_rate(mut self, sample_rate: u32) -> Self {
        self.model_sample_rate = Some(sample_rate);
        self
    }

    pub fn generator(&self) -> &Generator<T> {
        &self.generator
    }

    /// History length of each layer, in time steps.
    pub fn ring_capacities(&self) -> Vec<usize> {
        self.history.clone()
    }

    /// Clears all history, equivalent to offline left zero-padding.
    pub fn reset(&mut self) {
        for r in &mut self.inputs {
            r.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Processes one block in place of `output`; does not allocate.
    pub fn process(&mut self, input: &[T], output: &mut [T]) {
        assert_eq!(input.len(), output.len(), "block lengths differ");
        for (x, y) in input.chunks(CHUNK).zip(output.chunks_mut(CHUNK)) {
            self.process_chunk(x, y);
        }
    }

    // Per output element the arithmetic and summation order match the
    // offline forward pass, so results agree bit for bit.
    fn process_chunk(&mut self, input: &[T], output: &mut [T]) {
        let n = input.len();
        let gen = &*self.generator;
        let cfg = gen.config();
        let (c, k) = (cfg.channels, cfg.kernel_size);
        let params = gen.params();
        let post = params.post_weight.data();
        let n_layers = params.layers.len();

        let stride0 = self.history[0] + CHUNK;
        for (o, &w) in params.input_weight.data().iter().enumerate() {
            let row = &mut self.inputs[0][o * stride0 + self.history[0]..][..n];
            for (r, &x) in row.iter_mut().zip(input) {
                *r = w * x;
            }
        }
        let y = &mut self.y[..n];
        y.iter_mut().for_each(|v| *v = params.post_bias.data()[0]);

        for (l, layer) in params.layers.iter().enumerate() {
            let (hist, d) = (self.history[l], layer.dilation);
            let stride = hist + CHUNK;
            let (head, tail) = self.inputs.split_at_mut(l + 1);
            let xin = &mut head[l];
            let wf = layer.filter_weight.data();
            let wg = layer.gate_weight.data();
            for o in 0..c {
                let zf = &mut self.zf[o * CHUNK..][..n];
                let zg = &mut self.zg[o * CHUNK..][..n];
                zf.iter_mut().for_each(|v| *v = layer.filter_bias.data()[o]);
                zg.iter_mut().for_each(|v| *v = layer.gate_bias.data()[o]);
                for j in 0..k {
                    let delay = (k - 1 - j) * d;
                    for i in 0..c {
                        let src = &xin[i * stride + hist - delay..][..n];
                        let off = (j * c + i) * c + o;
                        axpy(zf, wf[off], src);
                        axpy(zg, wg[off], src);
                    }
                }
                for ((av, f), g) in self.a[o * CHUNK..][..n].iter_mut().zip(zf).zip(zg) {
                    *av = tanh(*f) * sigmoid(*g);
                }
            }
            let pl = &post[l * c..(l + 1) * c];
            for (t, yv) in y.iter_mut().enumerate() {
                for (o, cv) in self.col.iter_mut().enumerate() {
                    *cv = self.a[o * CHUNK + t];
                }
                *yv += dot(pl, &self.col);
            }
            if l + 1 < n_layers {
                let next_hist = self.history[l + 1];
                let next_stride = next_hist + CHUNK;
                let xout = &mut tail[0];
                let wr = layer.residual_weight.data();
                for ch in 0..c {
                    let dst = &mut xout[ch * next_stride + next_hist..][..n];
                    dst.copy_from_slice(&xin[ch * stride + hist..][..n]);
                    for o in 0..c {
                        axpy(dst, wr[o * c + ch], &self.a[o * CHUNK..][..n]);
                    }
                }
            }
            // keep the last `hist` samples of this layer's input
            if hist > 0 {
                for ch in 0..c {
                    xin.copy_within(ch * stride + n..ch * stride + n + hist, ch * stride);
                }
            }
        }
        output.copy_from_slice(y);
    }

    pub fn process_block(&mut self, input: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); input.len()];
        self.process(input, &mut out);
        out
    }
}

impl StreamState<f32> {
    /// Streams an audio buffer. A sample-rate mismatch with the model is
    /// logged, not rejected.
    pub fn process_buffer(&mut self, block: &AudioBuffer) -> Result<AudioBuffer> {
        if let Some(sr) = self.model_sample_rate {
            if sr != block.sample_rate() {
                log::warn!(
                    "input is {} Hz but the model was trained at {} Hz",
                    block.sample_rate(),
                    sr
                );
            }
        }
        AudioBuffer::new(self.process_block(block.samples()), block.sample_rate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealtimeReport {
    pub audio_seconds: f64,
    pub processing_seconds: f64,
    /// Processing time over audio duration; below 1 is faster than real time.
    pub factor: f64,
}

/// Streams `seconds` of seeded white noise through the generator in blocks
/// of `block_size` and reports the real-time factor.
pub fn benchmark_realtime(
    generator: Arc<Generator<f32>>,
    seconds: f64,
    block_size: usize,
    sample_rate: u32,
) -> Result<RealtimeReport> {
    if !(seconds > 0.0) || block_size == 0 || sample_rate == 0 {
        return Err(Error::Config(
            "benchmark needs positive duration, block size and sample rate".into(),
        ));
    }
    let n = (seconds * sample_rate as f64).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let input: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut output = vec![0.0f32; block_size];
    let mut state = StreamState::new(generator)?;

    let start = Instant::now();
    for block in input.chunks(block_size) {
        state.process(block, &mut output[..block.len()]);
    }
    let processing_seconds = start.elapsed().as_secs_f64();
    std::hint::black_box(&output);
    let audio_seconds = n as f64 / sample_rate as f64;
    Ok(RealtimeReport {
        audio_seconds,
        processing_seconds,
        factor: processing_seconds / audio_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;

    fn gen(cfg: GeneratorConfig, seed: u64) -> Arc<Generator<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arc::new(Generator::init(cfg, &mut rng).unwrap())
    }

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_stacks: 2,
            layers_per_stack: 4,
            channels: 6,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn ring_capacity_matches_dilation() {
        let g = gen(GeneratorConfig::default(), 1);
        let s = StreamState::new(g.clone()).unwrap();
        let expected: Vec<usize> = g.config().dilations().iter().map(|d| 2 * d).collect();
        assert_eq!(s.ring_capacities(), expected);
    }

    #[test]
    fn one_block_equals_offline_exactly() {
        let g = gen(small(), 2);
        let x = noise(3000, 3);
        let offline = g.forward(&x).unwrap();
        let mut s = StreamState::new(g).unwrap();
        assert_eq!(s.process_block(&x), offline);
    }

    #[test]
    fn single_sample_blocks_match_offline() {
        let g = gen(small(), 4);
        let x = noise(1500, 5);
        let offline = g.forward(&x).unwrap();
        let mut s = StreamState::new(g).unwrap();
        let streamed: Vec<f32> = x.iter().flat_map(|v| s.process_block(std::slice::from_ref(v))).collect();
        for (a, b) in streamed.iter().zip(&offline) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn reset_mid_stream_restarts_from_zero_history() {
        let g = gen(small(), 6);
        let x1 = noise(700, 7);
        let x2 = noise(900, 8);
        let mut s = StreamState::new(g.clone()).unwrap();
        s.process_block(&x1);
        s.reset();
        s.reset();
        assert_eq!(s.process_block(&x2), g.forward(&x2).unwrap());
    }

    #[test]
    fn kernel_one_has_no_history() {
        let cfg = GeneratorConfig {
            kernel_size: 1,
            ..small()
        };
        let g = gen(cfg, 9);
        let x = noise(64, 10);
        let mut s = StreamState::new(g.clone()).unwrap();
        assert_eq!(s.process_block(&x), g.forward(&x).unwrap());
    }

    #[test]
    fn tiny_model_is_far_faster_than_real_time() {
        let cfg = GeneratorConfig {
            n_stacks: 1,
            layers_per_stack: 1,
            channels: 2,
            ..GeneratorConfig::default()
        };
        let r = benchmark_realtime(gen(cfg, 11), 1.0, 512, 44100).unwrap();
        assert!(r.factor < 0.1, "{r:?}");
    }
}
