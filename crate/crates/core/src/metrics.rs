//! Evaluation metrics for paired output/target audio.

use std::fmt::Write as _;

use crate::dsp::{Frontend, Representation, Scale, SpectrogramConfig, DEFAULT_LOG_EPSILON};
use crate::error::{Error, Result};
use crate::losses::{esr_loss, DEFAULT_PREEMPHASIS};

pub const DEFAULT_FFT_SIZES: [usize; 6] = [64, 128, 256, 512, 1024, 2048];
pub const MEL_WINDOW: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ms,
    Lms,
    Mel,
    Lmel,
    Esr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Ms, Metric::Lms, Metric::Mel, Metric::Lmel, Metric::Esr];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Ms => "e_ms",
            Metric::Lms => "e_lms",
            Metric::Mel => "e_mel",
            Metric::Lmel => "e_lmel",
            Metric::Esr => "e_esr",
        }
    }

    /// The metric computed on the same representation a discriminator sees.
    pub fn matching(repr: Representation) -> Self {
        match repr {
            Representation::Spectrogram => Metric::Ms,
            Representation::LogSpectrogram => Metric::Lms,
            Representation::Mel => Metric::Mel,
            Representation::LogMel => Metric::Lmel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub fft_sizes: Vec<usize>,
    pub n_mels: usize,
    pub log_epsilon: f64,
    pub preemph_coeff: f64,
    pub sample_rate: u32,
}

impl MetricConfig {
    pub fn new(sample_rate: u32) -> Self {
        Self {
            fft_sizes: DEFAULT_FFT_SIZES.to_vec(),
            n_mels: 160,
            log_epsilon: DEFAULT_LOG_EPSILON,
            preemph_coeff: DEFAULT_PREEMPHASIS,
            sample_rate,
        }
    }

    /// Shortest clip every metric can be computed on.
    pub fn min_len(&self) -> usize {
        self.fft_sizes.iter().copied().max().unwrap_or(0).max(MEL_WINDOW)
    }
}

fn check_pair(output: &[f64], target: &[f64], min_len: usize) -> Result<()> {
    if output.len() != target.len() {
        return Err(Error::Shape(format!(
            "output has {} samples, target {}",
            output.len(),
            target.len()
        )));
    }
    if output.len() < min_len {
        return Err(Error::Data(format!(
            "{} samples is shorter than the {min_len}-sample window",
            output.len()
        )));
    }
    Ok(())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn frontend_l1(fe: &Frontend<f64>, output: &[f64], target: &[f64]) -> Result<f64> {
    let so = fe.forward(output)?;
    let st = fe.forward(target)?;
    Ok(mean_abs_diff(&so.values, &st.values))
}

/// Mean over FFT sizes of the mean absolute difference between magnitude
/// spectrograms (hop N/4).
pub fn multiscale_spectral_loss(
    output: &[f64],
    target: &[f64],
    fft_sizes: &[usize],
    scale: Scale,
    log_epsilon: f64,
) -> Result<f64> {
    if fft_sizes.is_empty() {
        return Err(Error::Config("no FFT sizes".into()));
    }
    check_pair(output, target, fft_sizes.iter().copied().max().unwrap())?;
    let mut total = 0.0;
    for &n in fft_sizes {
        let mut cfg = SpectrogramConfig::new(n);
        cfg.scale = scale;
        cfg.log_epsilon = log_epsilon;
        // sample rate is irrelevant without a mel stage
        total += frontend_l1(&Frontend::new(cfg, 1)?, output, target)?;
    }
    Ok(total / fft_sizes.len() as f64)
}

/// Mean absolute difference of mel spectrograms (window 1024, hop 256).
pub fn mel_l1_loss(
    output: &[f64],
    target: &[f64],
    scale: Scale,
    n_mels: usize,
    log_epsilon: f64,
    sample_rate: u32,
) -> Result<f64> {
    check_pair(output, target, MEL_WINDOW)?;
    let repr = match scale {
        Scale::Linear => Representation::Mel,
        Scale::Log => Representation::LogMel,
    };
    let mut cfg = SpectrogramConfig::for_representation(MEL_WINDOW, repr, n_mels);
    cfg.log_epsilon = log_epsilon;
    frontend_l1(&Frontend::new(cfg, sample_rate)?, output, target)
}

/// Same quantity as the training loss; not symmetric in its arguments.
pub fn esr_metric(output: &[f64], target: &[f64], coeff: f64) -> Result<f64> {
    esr_loss(output, target, coeff)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues {
    pub e_ms: f64,
    pub e_lms: f64,
    pub e_mel: f64,
    pub e_lmel: f64,
    pub e_esr: f64,
}

impl MetricValues {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Ms => self.e_ms,
            Metric::Lms => self.e_lms,
            Metric::Mel => self.e_mel,
            Metric::Lmel => self.e_lmel,
            Metric::Esr => self.e_esr,
        }
    }

    pub fn is_finite(&self) -> bool {
        Metric::ALL.iter().all(|&m| self.get(m).is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipMetrics {
    pub name: String,
    pub len: usize,
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub aggregate: MetricValues,
    pub clips: Vec<ClipMetrics>,
}

/// Precomputed front-ends for scoring many clips with one configuration.
#[derive(Debug, Clone)]
pub struct MetricSuite {
    config: MetricConfig,
    linear: Vec<Frontend<f64>>,
    log: Vec<Frontend<f64>>,
    mel: Frontend<f64>,
    log_mel: Frontend<f64>,
}

impl MetricSuite {
    pub fn new(config: MetricConfig) -> Result<Self> {
        if config.fft_sizes.is_empty() {
            return Err(Error::Config("no FFT sizes".into()));
        }
        let make = |scale: Scale| -> Result<Vec<Frontend<f64>>> {
            config
                .fft_sizes
                .iter()
                .map(|&n| {
                    let mut c = SpectrogramConfig::new(n);
                    c.scale = scale;
                    c.log_epsilon = config.log_epsilon;
                    Frontend::new(c, config.sample_rate)
                })
                .collect()
        };
        let mel_fe = |repr: Representation| {
            let mut c = SpectrogramConfig::for_representation(MEL_WINDOW, repr, config.n_mels);
            c.log_epsilon = config.log_epsilon;
            Frontend::new(c, config.sample_rate)
        };
        Ok(Self {
            linear: make(Scale::Linear)?,
            log: make(Scale::Log)?,
            mel: mel_fe(Representation::Mel)?,
            log_mel: mel_fe(Representation::LogMel)?,
            config,
        })
    }

    pub fn config(&self) -> &MetricConfig {
        &self.config
    }

    pub fn clip(&self, output: &[f64], target: &[f64]) -> Result<MetricValues> {
        check_pair(output, target, self.config.min_len())?;
        let multi = |fes: &[Frontend<f64>]| -> Result<f64> {
            let mut total = 0.0;
            for fe in fes {
                total += frontend_l1(fe, output, target)?;
            }
            Ok(total / fes.len() as f64)
        };
        Ok(MetricValues {
            e_ms: multi(&self.linear)?,
            e_lms: multi(&self.log)?,
            e_mel: frontend_l1(&self.mel, output, target)?,
            e_lmel: frontend_l1(&self.log_mel, output, target)?,
            e_esr: esr_metric(output, target, self.config.preemph_coeff)?,
        })
    }

    pub fn clip_f32(&self, output: &[f32], target: &[f32]) -> Result<MetricValues> {
        let o: Vec<f64> = output.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = target.iter().map(|&v| v as f64).collect();
        self.clip(&o, &t)
    }
}

impl MetricReport {
    /// Aggregates are length-weighted means of the per-clip values.
    pub fn from_clips(clips: Vec<ClipMetrics>) -> Result<Self> {
        let total: usize = clips.iter().map(|c| c.len).sum();
        if clips.is_empty() || total == 0 {
            return Err(Error::Data("no clips to report".into()));
        }
        let w = |m: Metric| clips.iter().map(|c| c.values.get(m) * c.len as f64).sum::<f64>() / total as f64;
        let aggregate = MetricValues {
            e_ms: w(Metric::Ms),
            e_lms: w(Metric::Lms),
            e_mel: w(Metric::Mel),
            e_lmel: w(Metric::Lmel),
            e_esr: w(Metric::Esr),
        };
        Ok(Self { aggregate, clips })
    }

    /// Human-readable table, one clip per line, aggregate last.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "clip", "samples", "e_ms", "e_lms", "e_mel", "e_lmel", "e_esr"
        );
        let row = |s: &mut String, name: &str, len: usize, v: &MetricValues| {
            let _ = writeln!(
                s,
                "{:<24} {:>10} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                name, len, v.e_ms, v.e_lms, v.e_mel, v.e_lmel, v.e_esr
            );
        };
        for c in &self.clips {
            row(&mut s, &c.name, c.len, &c.values);
        }
        let total = self.clips.iter().map(|c| c.len).sum();
        row(&mut s, "aggregate", total, &self.aggregate);
        s
    }

    /// `key = value` lines; aggregate keys are bare, clip keys are prefixed
    /// with `<clip>.`.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for m in Metric::ALL {
            let _ = writeln!(s, "{} = {:e}", m.key(), self.aggregate.get(m));
        }
        for c in &self.clips {
            let _ = writeln!(s, "{}.samples = {}", c.name, c.len);
            for m in Metric::ALL {
                let _ = writeln!(s, "{}.{} = {:e}", c.name, m.key(), c.values.get(m));
            }
        }
        s
    }

    /// Validation-log form: `e_ms=.. e_lms=.. ...`.
    pub fn summary(&self) -> String {
        Metric::ALL
            .iter()
            .map(|&m| format!("{}={:.6e}", m.key(), self.aggregate.get(m)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft_magnitude;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identical_and_sign_flipped_pairs_score_zero() {
        let x = noise(4096, 1);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        for scale in [Scale::Linear, Scale::Log] {
            assert_eq!(multiscale_spectral_loss(&x, &x, &DEFAULT_FFT_SIZES, scale, 1e-5).unwrap(), 0.0);
            assert_eq!(multiscale_spectral_loss(&neg, &x, &DEFAULT_FFT_SIZES, scale, 1e-5).unwrap(), 0.0);
            assert_eq!(mel_l1_loss(&x, &x, scale, 160, 1e-5, 44100).unwrap(), 0.0);
        }
        let suite = MetricSuite::new(MetricConfig::new(44100)).unwrap();
        let v = suite.clip(&x, &x).unwrap();
        assert!(Metric::ALL.iter().all(|&m| v.get(m) == 0.0));
    }

    #[test]
    fn brute_force_multiscale_oracle() {
        // straight-line reimplementation over the same magnitude front-end
        let a = noise(5000, 2);
        let b = noise(5000, 3);
        let sizes = [64usize, 256, 2048];
        let mut acc = 0.0;
        for &n in &sizes {
            let sa = stft_magnitude::<f64>(&a, &SpectrogramConfig::new(n)).unwrap();
            let sb = stft_magnitude::<f64>(&b, &SpectrogramConfig::new(n)).unwrap();
            let mut sum = 0.0;
            let mut count = 0usize;
            for t in 0..sa.n_frames {
                for k in 0..sa.n_bins {
                    sum += (sa.get(t, k) - sb.get(t, k)).abs();
                    count += 1;
                }
            }
            acc += sum / count as f64;
        }
        let oracle = acc / sizes.len() as f64;
        assert_eq!(multiscale_spectral_loss(&a, &b, &sizes, Scale::Linear, 1e-5).unwrap(), oracle);
    }

    #[test]
    fn mel_against_silence_is_mean_mel_magnitude() {
        let x = noise(3000, 4);
        let fe = Frontend::<f64>::new(SpectrogramConfig::for_representation(1024, Representation::Mel, 160), 44100).unwrap();
        let s = fe.forward(&x).unwrap();
        let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
        let got = mel_l1_loss(&x, &vec![0.0; 3000], Scale::Linear, 160, 1e-5, 44100).unwrap();
        assert!((got - mean).abs() <= 1e-12 * mean);
    }

    #[test]
    fn triangle_inequality() {
        let (a, b, c) = (noise(2048, 5), noise(2048, 6), noise(2048, 7));
        for scale in [Scale::Linear, Scale::Log] {
            let ab = mel_l1_loss(&a, &b, scale, 160, 1e-5, 44100).unwrap();
            let bc = mel_l1_loss(&b, &c, scale, 160, 1e-5, 44100).unwrap();
            let ac = mel_l1_loss(&a, &c, scale, 160, 1e-5, 44100).unwrap();
            assert!(ac <= ab + bc + 1e-6);
            let ab = multiscale_spectral_loss(&a, &b, &DEFAULT_FFT_SIZES, scale, 1e-5).unwrap();
            let bc = multiscale_spectral_loss(&b, &c, &DEFAULT_FFT_SIZES, scale, 1e-5).unwrap();
            let ac = multiscale_spectral_loss(&a, &c, &DEFAULT_FFT_SIZES, scale, 1e-5).unwrap();
            assert!(ac <= ab + bc + 1e-6);
        }
    }

    #[test]
    fn spectral_metrics_are_symmetric() {
        let (a, b) = (noise(2048, 8), noise(2048, 9));
        let suite = MetricSuite::new(MetricConfig::new(44100)).unwrap();
        let ab = suite.clip(&a, &b).unwrap();
        let ba = suite.clip(&b, &a).unwrap();
        for m in [Metric::Ms, Metric::Lms, Metric::Mel, Metric::Lmel] {
            assert_eq!(ab.get(m), ba.get(m));
        }
        assert_ne!(ab.e_esr, ba.e_esr);
    }

    #[test]
    fn esr_identities() {
        let y = noise(3000, 10);
        let half: Vec<f64> = y.iter().map(|v| 0.5 * v).collect();
        assert!((esr_metric(&half, &y, 0.85).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(esr_metric(&vec![0.0; 3000], &y, 0.85).unwrap(), 1.0);
    }

    #[test]
    fn short_or_mismatched_pairs_error() {
        assert!(multiscale_spectral_loss(&[0.0; 100], &[0.0; 100], &DEFAULT_FFT_SIZES, Scale::Linear, 1e-5).is_err());
        assert!(mel_l1_loss(&[0.0; 2000], &[0.0; 2001], Scale::Log, 160, 1e-5, 44100).is_err());
    }

    #[test]
    fn suite_matches_free_functions() {
        let (a, b) = (noise(4096, 11), noise(4096, 12));
        let suite = MetricSuite::new(MetricConfig::new(44100)).unwrap();
        let v = suite.clip(&a, &b).unwrap();
        assert_eq!(v.e_ms, multiscale_spectral_loss(&a, &b, &DEFAULT_FFT_SIZES, Scale::Linear, 1e-5).unwrap());
        assert_eq!(v.e_lms, multiscale_spectral_loss(&a, &b, &DEFAULT_FFT_SIZES, Scale::Log, 1e-5).unwrap());
        assert_eq!(v.e_mel, mel_l1_loss(&a, &b, Scale::Linear, 160, 1e-5, 44100).unwrap());
        assert_eq!(v.e_lmel, mel_l1_loss(&a, &b, Scale::Log, 160, 1e-5, 44100).unwrap());
    }

    #[test]
    fn aggregate_is_length_weighted() {
        let mk = |name: &str, len, v| ClipMetrics {
            name: name.into(),
            len,
            values: MetricValues {
                e_ms: v,
                e_lms: v,
                e_mel: v,
                e_lmel: v,
                e_esr: v,
            },
        };
        let r = MetricReport::from_clips(vec![mk("a", 1000, 1.0), mk("b", 3000, 3.0)]).unwrap();
        assert_eq!(r.aggregate.e_lmel, 2.5);
        assert!(r.to_key_values().contains("b.e_esr = 3e0"));
        assert!(MetricReport::from_clips(vec![]).is_err());
    }

    #[test]
    fn window_aligned_concatenation_matches_weighted_clips() {
        // frames never straddle the boundary when clip lengths are multiples
        // of the hop and each clip is scored independently; the per-frame
        // means then combine by frame count, i.e. by length for equal tails
        let n = 1024;
        let hop = n / 4;
        let a = noise(n + 8 * hop, 13);
        let b = noise(n + 8 * hop, 14);
        let ta = noise(a.len(), 15);
        let tb = noise(b.len(), 16);
        let suite = MetricSuite::new(MetricConfig {
            fft_sizes: vec![n],
            ..MetricConfig::new(44100)
        })
        .unwrap();
        let va = suite.clip(&a, &ta).unwrap();
        let vb = suite.clip(&b, &tb).unwrap();
        let report = MetricReport::from_clips(vec![
            ClipMetrics { name: "a".into(), len: a.len(), values: va },
            ClipMetrics { name: "b".into(), len: b.len(), values: vb },
        ])
        .unwrap();
        let fe = Frontend::<f64>::new(SpectrogramConfig::new(n), 44100).unwrap();
        let frames = |x: &[f64], y: &[f64]| {
            let (sx, sy) = (fe.forward(x).unwrap(), fe.forward(y).unwrap());
            sx.values.iter().zip(&sy.values).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>()
        };
        let pooled: Vec<f64> = frames(&a, &ta).into_iter().chain(frames(&b, &tb)).collect();
        let pooled_mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        assert!((report.aggregate.e_ms - pooled_mean).abs() < 1e-6);
    }
}
