//! Flat `key = value` run configuration. Lines starting with `#` and blank
//! lines are ignored, unknown keys are rejected, and every key has a
//! default, so an empty file is a valid configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::discriminator::{multiscale_configs, DiscriminatorConfig, MULTISCALE_WINDOWS, SINGLE_SCALE_WINDOW};
use crate::dsp::Representation;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::metrics::MetricConfig;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Adversarial,
    Supervised,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Adversarial => "adversarial",
            TrainMode::Supervised => "supervised",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversarial" => Ok(TrainMode::Adversarial),
            "supervised" => Ok(TrainMode::Supervised),
            _ => Err(Error::Config(format!("unknown mode '{s}' (adversarial|supervised)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Alternating,
    Unpaired,
    /// Time-aligned files with matching names in two directories.
    Paired,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Alternating => "alternating",
            SplitMode::Unpaired => "unpaired",
            SplitMode::Paired => "paired",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(SplitMode::Alternating),
            "unpaired" => Ok(SplitMode::Unpaired),
            "paired" => Ok(SplitMode::Paired),
            _ => Err(Error::Config(format!("unknown split '{s}' (alternating|unpaired|paired)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub sample_rate: u32,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub d_steps_per_g_step: usize,
    pub discriminator: Representation,
    pub scales: usize,
    pub disc_width_divisor: usize,
    pub gen_stacks: usize,
    pub gen_layers: usize,
    pub gen_kernel: usize,
    pub gen_dilation_growth: usize,
    pub gen_channels: usize,
    pub n_mels: usize,
    pub log_epsilon: f64,
    pub preemph_coeff: f64,
    pub mask_receptive_field: bool,
    pub metric_fft_sizes: Vec<usize>,
    pub checkpoint_every: u64,
    pub validate_every: u64,
    pub split: SplitMode,
    pub trim_silence: bool,
    pub silence_threshold_db: f64,
    pub silence_window_ms: f64,
    pub trim_start_seconds: f64,
    pub clip_level: f64,
    pub clip_min_run: usize,
    pub clip_max_ratio: f64,
    pub block_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Adversarial,
            seed: 0,
            iterations: 400_000,
            batch_size: 5,
            segment_seconds: 2.0,
            sample_rate: 44100,
            lr_g: 1e-4,
            lr_d: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            d_steps_per_g_step: 1,
            discriminator: Representation::LogMel,
            scales: 3,
            disc_width_divisor: 1,
            gen_stacks: 2,
            gen_layers: 9,
            gen_kernel: 3,
            gen_dilation_growth: 2,
            gen_channels: 16,
            n_mels: 160,
            log_epsilon: 1e-5,
            preemph_coeff: 0.85,
            mask_receptive_field: true,
            metric_fft_sizes: vec![64, 128, 256, 512, 1024, 2048],
            checkpoint_every: 5000,
            validate_every: 1000,
            split: SplitMode::Alternating,
            trim_silence: true,
            silence_threshold_db: -60.0,
            silence_window_ms: 10.0,
            trim_start_seconds: 0.0,
            clip_level: 0.999,
            clip_min_run: 3,
            clip_max_ratio: 0.01,
            block_size: 512,
        }
    }
}

pub struct KeyDoc {
    pub key: &'static str,
    pub doc: &'static str,
}

macro_rules! keys {
    ($($k:literal => $d:literal),* $(,)?) => {
        &[$(KeyDoc { key: $k, doc: $d }),*]
    };
}

/// Every configuration key, in file order.
pub const KEYS: &[KeyDoc] = keys! {
    "mode" => "training mode: adversarial (unpaired) or supervised (paired, ESR loss)",
    "seed" => "seed for initialisation and batch sampling",
    "iterations" => "total training iterations",
    "batch_size" => "segments per domain per iteration",
    "segment_seconds" => "segment length used by preprocess",
    "sample_rate" => "sample rate for generated data and benchmarks",
    "lr_g" => "generator learning rate",
    "lr_d" => "discriminator learning rate (0 freezes the discriminator)",
    "beta1" => "Adam first-moment decay",
    "beta2" => "Adam second-moment decay",
    "adam_eps" => "Adam epsilon",
    "d_steps_per_g_step" => "discriminator updates per generator update",
    "discriminator" => "discriminator input: spectrogram, mel, log-spectrogram or log-mel",
    "scales" => "1 (window 1024) or 3 (windows 512, 1024, 2048)",
    "disc_width_divisor" => "divide discriminator hidden widths and groups by this factor",
    "gen_stacks" => "generator stacks",
    "gen_layers" => "dilated layers per stack",
    "gen_kernel" => "generator kernel size",
    "gen_dilation_growth" => "dilation factor between consecutive layers",
    "gen_channels" => "generator hidden channels",
    "n_mels" => "mel bands for mel representations and metrics",
    "log_epsilon" => "offset inside the log for log representations",
    "preemph_coeff" => "pre-emphasis coefficient c in 1 - c z^-1 for ESR",
    "mask_receptive_field" => "exclude the first receptive_field - 1 samples from the supervised loss",
    "metric_fft_sizes" => "comma-separated FFT sizes of the multi-scale spectral metrics",
    "checkpoint_every" => "iterations between periodic checkpoints",
    "validate_every" => "iterations between validation passes",
    "split" => "preprocess split: alternating (one directory), unpaired (input and target directories) or paired (time-aligned files matched by name)",
    "trim_silence" => "trim leading and trailing silence during preprocess",
    "silence_threshold_db" => "RMS threshold in dBFS for silence trimming",
    "silence_window_ms" => "RMS window for silence trimming",
    "trim_start_seconds" => "seconds dropped from the start of every file (count-in removal)",
    "clip_level" => "absolute level counted as clipped",
    "clip_min_run" => "minimum run of clipped samples",
    "clip_max_ratio" => "segments with a larger clipped fraction are dropped",
    "block_size" => "streaming block size for process and benchmark",
};

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mode" => self.mode.to_string(),
            "seed" => self.seed.to_string(),
            "iterations" => self.iterations.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "segment_seconds" => self.segment_seconds.to_string(),
            "sample_rate" => self.sample_rate.to_string(),
            "lr_g" => self.lr_g.to_string(),
            "lr_d" => self.lr_d.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "d_steps_per_g_step" => self.d_steps_per_g_step.to_string(),
            "discriminator" => self.discriminator.to_string(),
            "scales" => self.scales.to_string(),
            "disc_width_divisor" => self.disc_width_divisor.to_string(),
            "gen_stacks" => self.gen_stacks.to_string(),
            "gen_layers" => self.gen_layers.to_string(),
            "gen_kernel" => self.gen_kernel.to_string(),
            "gen_dilation_growth" => self.gen_dilation_growth.to_string(),
            "gen_channels" => self.gen_channels.to_string(),
            "n_mels" => self.n_mels.to_string(),
            "log_epsilon" => self.log_epsilon.to_string(),
            "preemph_coeff" => self.preemph_coeff.to_string(),
            "mask_receptive_field" => self.mask_receptive_field.to_string(),
            "metric_fft_sizes" => self
                .metric_fft_sizes
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "validate_every" => self.validate_every.to_string(),
            "split" => self.split.to_string(),
            "trim_silence" => self.trim_silence.to_string(),
            "silence_threshold_db" => self.silence_threshold_db.to_string(),
            "silence_window_ms" => self.silence_window_ms.to_string(),
            "trim_start_seconds" => self.trim_start_seconds.to_string(),
            "clip_level" => self.clip_level.to_string(),
            "clip_min_run" => self.clip_min_run.to_string(),
            "clip_max_ratio" => self.clip_max_ratio.to_string(),
            "block_size" => self.block_size.to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "segment_seconds" => self.segment_seconds = parse_num(key, v)?,
            "sample_rate" => self.sample_rate = parse_num(key, v)?,
            "lr_g" => self.lr_g = parse_num(key, v)?,
            "lr_d" => self.lr_d = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "d_steps_per_g_step" => self.d_steps_per_g_step = parse_num(key, v)?,
            "discriminator" => self.discriminator = v.parse()?,
            "scales" => self.scales = parse_num(key, v)?,
            "disc_width_divisor" => self.disc_width_divisor = parse_num(key, v)?,
            "gen_stacks" => self.gen_stacks = parse_num(key, v)?,
            "gen_layers" => self.gen_layers = parse_num(key, v)?,
            "gen_kernel" => self.gen_kernel = parse_num(key, v)?,
            "gen_dilation_growth" => self.gen_dilation_growth = parse_num(key, v)?,
            "gen_channels" => self.gen_channels = parse_num(key, v)?,
            "n_mels" => self.n_mels = parse_num(key, v)?,
            "log_epsilon" => self.log_epsilon = parse_num(key, v)?,
            "preemph_coeff" => self.preemph_coeff = parse_num(key, v)?,
            "mask_receptive_field" => self.mask_receptive_field = parse_bool(key, v)?,
            "metric_fft_sizes" => {
                self.metric_fft_sizes = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "validate_every" => self.validate_every = parse_num(key, v)?,
            "split" => self.split = v.parse()?,
            "trim_silence" => self.trim_silence = parse_bool(key, v)?,
            "silence_threshold_db" => self.silence_threshold_db = parse_num(key, v)?,
            "silence_window_ms" => self.silence_window_ms = parse_num(key, v)?,
            "trim_start_seconds" => self.trim_start_seconds = parse_num(key, v)?,
            "clip_level" => self.clip_level = parse_num(key, v)?,
            "clip_min_run" => self.clip_min_run = parse_num(key, v)?,
            "clip_max_ratio" => self.clip_max_ratio = parse_num(key, v)?,
            "block_size" => self.block_size = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.key, self.get(k.key).unwrap()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.segment_seconds > 0.0) {
            return fail("segment_seconds must be positive");
        }
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive");
        }
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0) {
            return fail("learning rates must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("Adam betas must be in [0, 1) and epsilon positive");
        }
        if self.d_steps_per_g_step == 0 {
            return fail("d_steps_per_g_step must be at least 1");
        }
        if self.scales != 1 && self.scales != 3 {
            return fail("scales must be 1 or 3");
        }
        if self.disc_width_divisor == 0 || self.block_size == 0 || self.clip_min_run == 0 {
            return fail("disc_width_divisor, block_size and clip_min_run must be positive");
        }
        if self.metric_fft_sizes.is_empty() || self.metric_fft_sizes.iter().any(|n| !n.is_power_of_two() || *n < 2) {
            return fail("metric_fft_sizes must be powers of two >= 2");
        }
        if !(self.log_epsilon > 0.0) {
            return fail("log_epsilon must be positive");
        }
        if !(self.silence_threshold_db < 0.0) || !(self.silence_window_ms > 0.0) {
            return fail("silence threshold must be negative and window positive");
        }
        if !(self.clip_level > 0.0 && self.clip_level <= 1.0) || !(0.0..=1.0).contains(&self.clip_max_ratio) {
            return fail("clip_level must be in (0, 1] and clip_max_ratio in [0, 1]");
        }
        if !(self.trim_start_seconds >= 0.0) {
            return fail("trim_start_seconds must be non-negative");
        }
        self.generator_config().validate()?;
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_stacks: self.gen_stacks,
            layers_per_stack: self.gen_layers,
            kernel_size: self.gen_kernel,
            dilation_growth: self.gen_dilation_growth,
            channels: self.gen_channels,
        }
    }

    pub fn discriminator_windows(&self) -> &'static [usize] {
        if self.scales == 3 {
            &MULTISCALE_WINDOWS
        } else {
            std::slice::from_ref(&SINGLE_SCALE_WINDOW)
        }
    }

    pub fn discriminator_configs(&self, sample_rate: u32) -> Result<Vec<DiscriminatorConfig>> {
        multiscale_configs(
            self.discriminator,
            self.discriminator_windows(),
            self.n_mels,
            self.log_epsilon,
            sample_rate,
            self.disc_width_divisor,
        )
    }

    pub fn metric_config(&self, sample_rate: u32) -> MetricConfig {
        MetricConfig {
            fft_sizes: self.metric_fft_sizes.clone(),
            n_mels: self.n_mels,
            log_epsilon: self.log_epsilon,
            preemph_coeff: self.preemph_coeff,
            sample_rate,
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.lr_g,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_eps,
        }
    }

    pub fn adam_d(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.lr_d,
            ..self.adam_g()
        }
    }
}
