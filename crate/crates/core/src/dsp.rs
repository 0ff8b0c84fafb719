//! Time-frequency front-end: framed, windowed DFT magnitudes with optional
//! mel projection and log scaling, plus the reverse-mode pass back to the
//! waveform so spectral losses can train a time-domain model.
//!
//! Framing is uncentred: frame `t` covers samples `t*hop .. t*hop + N` and
//! the frame count is `floor((len - N) / hop) + 1`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        match self {
            WindowKind::Hann => (0..n)
                .map(|i| T::of(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
                .collect(),
            WindowKind::Rectangular => vec![T::one(); n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 160,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl MelConfig {
    pub fn resolved_f_max(&self, sample_rate: u32) -> f64 {
        self.f_max.unwrap_or(sample_rate as f64 / 2.0)
    }
}

/// The four discriminator input representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Spectrogram,
    Mel,
    LogSpectrogram,
    LogMel,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::Spectrogram,
        Representation::Mel,
        Representation::LogSpectrogram,
        Representation::LogMel,
    ];

    pub fn scale(self) -> Scale {
        match self {
            Representation::Spectrogram | Representation::Mel => Scale::Linear,
            Representation::LogSpectrogram | Representation::LogMel => Scale::Log,
        }
    }

    pub fn uses_mel(self) -> bool {
        matches!(self, Representation::Mel | Representation::LogMel)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Spectrogram => "spectrogram",
            Representation::Mel => "mel",
            Representation::LogSpectrogram => "log-spectrogram",
            Representation::LogMel => "log-mel",
        })
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrogram" | "spect" => Ok(Representation::Spectrogram),
            "mel" => Ok(Representation::Mel),
            "log-spectrogram" | "log-spect" => Ok(Representation::LogSpectrogram),
            "log-mel" => Ok(Representation::LogMel),
            other => Err(Error::Config(format!(
                "unknown representation {other:?} (spectrogram, mel, log-spectrogram, log-mel)"
            ))),
        }
    }
}

pub const DEFAULT_LOG_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub window_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub scale: Scale,
    pub mel: Option<MelConfig>,
    pub log_epsilon: f64,
}

impl SpectrogramConfig {
    /// Linear magnitude spectrogram, periodic Hann window, hop `N/4`.
    pub fn new(window_size: usize) -> Self {
        Self {
            window_size,
            hop: (window_size / 4).max(1),
            window: WindowKind::Hann,
            scale: Scale::Linear,
            mel: None,
            log_epsilon: DEFAULT_LOG_EPSILON,
        }
    }

    pub fn for_representation(window_size: usize, repr: Representation, n_mels: usize) -> Self {
        let mut c = Self::new(window_size);
        c.scale = repr.scale();
        if repr.uses_mel() {
            c.mel = Some(MelConfig {
                n_mels,
                ..MelConfig::default()
            });
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || self.hop < 1 {
            return Err(Error::Config(format!(
                "window {} / hop {} invalid",
                self.window_size, self.hop
            )));
        }
        if !self.window_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "window size {} is not a power of two",
                self.window_size
            )));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::Config("log epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn n_fft_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Channels seen by a consumer: mel bands or FFT bins.
    pub fn n_channels(&self) -> usize {
        self.mel.map_or(self.n_fft_bins(), |m| m.n_mels)
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.hop + 1
        }
    }
}

/// Frame-major matrix `[n_frames x n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub n_frames: usize,
    pub n_bins: usize,
    pub values: Vec<T>,
}

impl<T: Real> Spectrogram<T> {
    pub fn frame(&self, t: usize) -> &[T] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, bin: usize) -> T {
        self.values[t * self.n_bins + bin]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * ((mel - min_log_mel) * logstep).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular filters with peak value 1, stored sparsely per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank<T> {
    n_fft_bins: usize,
    /// Centre frequency of each filter in Hz, strictly increasing.
    centers_hz: Vec<f64>,
    rows: Vec<(usize, Vec<T>)>,
}

impl<T: Real> MelFilterbank<T> {
    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn n_fft_bins(&self) -> usize {
        self.n_fft_bins
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn row(&self, m: usize) -> (usize, &[T]) {
        let (start, w) = &self.rows[m];
        (*start, w)
    }

    /// Dense `[n_mels x n_fft_bins]` matrix.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        self.rows
            .iter()
            .map(|(start, w)| {
                let mut row = vec![T::zero(); self.n_fft_bins];
                row[*start..*start + w.len()].copy_from_slice(w);
                row
            })
            .collect()
    }

    fn project(&self, mag: &[T], out: &mut [T]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.rows) {
            *o = crate::real::dot(w, &mag[*start..*start + w.len()]);
        }
    }

    fn project_transpose(&self, grad: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (&g, (start, w)) in grad.iter().zip(&self.rows) {
            crate::real::axpy(&mut out[*start..*start + w.len()], g, w);
        }
    }
}

/// Triangular filters with centres equally spaced on the (Slaney) mel scale
/// between `f_min` and `f_max`. A filter narrower than one FFT bin on either
/// side of its centre is widened to one bin so that every row touches at
/// least one bin; this keeps dense mel layouts such as 160 bands at N = 512
/// well defined.
pub fn mel_filterbank<T: Real>(mel: &MelConfig, n_fft_bins: usize, sample_rate: u32) -> Result<MelFilterbank<T>> {
    let nyquist = sample_rate as f64 / 2.0;
    let f_max = mel.resolved_f_max(sample_rate);
    if mel.n_mels == 0 {
        return Err(Error::Config("n_mels must be at least 1".into()));
    }
    if !(mel.f_min >= 0.0 && mel.f_min < f_max && f_max <= nyquist) {
        return Err(Error::Config(format!(
            "mel range {}..{} Hz invalid for Nyquist {nyquist}",
            mel.f_min, f_max
        )));
    }
    if n_fft_bins < 2 {
        return Err(Error::Config("need at least two FFT bins".into()));
    }
    if mel.n_mels > n_fft_bins {
        return Err(Error::Config(format!(
            "{} mel bands exceed the resolution of {} FFT bins",
            mel.n_mels, n_fft_bins
        )));
    }

    let n_fft = 2 * (n_fft_bins - 1);
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let (m_lo, m_hi) = (hz_to_mel(mel.f_min), hz_to_mel(f_max));
    let points: Vec<f64> = (0..mel.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (mel.n_mels + 1) as f64))
        .collect();

    let mut rows = Vec::with_capacity(mel.n_mels);
    let mut centers_hz = Vec::with_capacity(mel.n_mels);
    for j in 0..mel.n_mels {
        let center = points[j + 1];
        let left = points[j].min(center - bin_hz);
        let right = points[j + 2].max(center + bin_hz);
        let mut weights = vec![0.0f64; n_fft_bins];
        for (k, w) in weights.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let v = if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            *w = v.max(0.0);
        }
        let first = weights.iter().position(|&w| w > 0.0);
        let last = weights.iter().rposition(|&w| w > 0.0);
        let (first, last) = match (first, last) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Config(format!(
                    "mel filter {j} covers no FFT bin"
                )))
            }
        };
        rows.push((first, weights[first..=last].iter().map(|&w| T::of(w)).collect()));
        centers_hz.push(center);
    }
    Ok(MelFilterbank {
        n_fft_bins,
        centers_hz,
        rows,
    })
}

/// Elementwise `ln(v + eps)` for log scale; identity for linear.
pub fn apply_scale<T: Real>(spec: &Spectrogram<T>, scale: Scale, log_epsilon: f64) -> Spectrogram<T> {
    match scale {
        Scale::Linear => spec.clone(),
        Scale::Log => {
            let eps = T::of(log_epsilon);
            Spectrogram {
                n_frames: spec.n_frames,
                n_bins: spec.n_bins,
                values: spec.values.iter().map(|&v| (v + eps).ln()).collect(),
            }
        }
    }
}

/// Linear magnitude STFT (the `scale` and `mel` fields of `config` are
/// ignored; see [`Frontend`] for the full representation).
pub fn stft_magnitude<T: Real>(samples: &[T], config: &SpectrogramConfig) -> Result<Spectrogram<T>> {
    let mut linear = *config;
    linear.scale = Scale::Linear;
    linear.mel = None;
    Frontend::new(linear, 1)?.forward(samples)
}

/// State kept by a forward pass for [`Frontend::backward`].
#[derive(Debug, Clone, Default)]
pub struct FrontendCache<T> {
    len: usize,
    n_frames: usize,
    /// Complex spectra, bins `0..=N/2`, per frame.
    spectra: Vec<Complex<T>>,
    /// Values fed to the log (magnitudes or mel energies), when log scale.
    pre_log: Vec<T>,
}

/// A configured, planned front-end for one sample rate.
#[derive(Clone)]
pub struct Frontend<T: Real> {
    config: SpectrogramConfig,
    window: Vec<T>,
    fft: Arc<dyn Fft<T>>,
    ifft: Arc<dyn Fft<T>>,
    mel: Option<MelFilterbank<T>>,
}

impl<T: Real> fmt::Debug for Frontend<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frontend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl<T: Real> Frontend<T> {
    pub fn new(config: SpectrogramConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let n = config.window_size;
        let mut planner = FftPlanner::new();
        let mel = match &config.mel {
            Some(m) => Some(mel_filterbank(m, config.n_fft_bins(), sample_rate)?),
            None => None,
        };
        Ok(Self {
            config,
            window: config.window.coefficients(n),
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            mel,
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.config
    }

    pub fn n_channels(&self) -> usize {
        self.config.n_channels()
    }

    pub fn mel(&self) -> Option<&MelFilterbank<T>> {
        self.mel.as_ref()
    }

    pub fn forward(&self, samples: &[T]) -> Result<Spectrogram<T>> {
        self.run(samples, false).map(|(s, _)| s)
    }

    pub fn forward_cached(&self, samples: &[T]) -> Result<(Spectrogram<T>, FrontendCache<T>)> {
        self.run(samples, true)
    }

    fn run(&self, samples: &[T], keep: bool) -> Result<(Spectrogram<T>, FrontendCache<T>)> {
        let n = self.config.window_size;
        let hop = self.config.hop;
        let n_frames = self.config.n_frames(samples.len());
        if n_frames == 0 {
            return Err(Error::Data(format!(
                "{} samples is shorter than the {n}-sample window",
                samples.len()
            )));
        }
        let n_bins = self.config.n_fft_bins();
        let n_out = self.n_channels();
        let log = self.config.scale == Scale::Log;
        let eps = T::of(self.config.log_epsilon);

        let mut values = vec![T::zero(); n_frames * n_out];
        let mut spectra = if keep { Vec::with_capacity(n_frames * n_bins) } else { Vec::new() };
        let mut pre_log = if keep && log { Vec::with_capacity(n_frames * n_out) } else { Vec::new() };

        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![T::zero(); n_bins];
        for t in 0..n_frames {
            let frame = &samples[t * hop..t * hop + n];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(x * w, T::zero());
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mag.iter_mut().zip(&buf[..n_bins]) {
                *m = c.norm();
            }
            if keep {
                spectra.extend_from_slice(&buf[..n_bins]);
            }
            let out = &mut values[t * n_out..(t + 1) * n_out];
            match &self.mel {
                Some(fb) => fb.project(&mag, out),
                None => out.copy_from_slice(&mag),
            }
            if log {
                if keep {
                    pre_log.extend_from_slice(out);
                }
                out.iter_mut().for_each(|v| *v = (*v + eps).ln());
            }
        }
        Ok((
            Spectrogram {
                n_frames,
                n_bins: n_out,
                values,
            },
            FrontendCache {
                len: samples.len(),
                n_frames,
                spectra,
                pre_log,
            },
        ))
    }

    /// Gradient with respect to the input samples, given the gradient with
    /// respect to the representation returned by the forward pass. Bins with
    /// exactly zero magnitude pass no gradient.
    pub fn backward(&self, cache: &FrontendCache<T>, grad: &[T]) -> Vec<T> {
        let n = self.config.window_size;
        let hop = self.config.hop;
        let n_bins = self.config.n_fft_bins();
        let n_out = self.n_channels();
        assert_eq!(grad.len(), cache.n_frames * n_out, "gradient shape mismatch");
        assert!(cache.spectra.len() == cache.n_frames * n_bins, "forward pass was not cached");
        let log = self.config.scale == Scale::Log;
        let eps = T::of(self.config.log_epsilon);

        let mut dx = vec![T::zero(); cache.len];
        let mut g_out = vec![T::zero(); n_out];
        let mut g_mag = vec![T::zero(); n_bins];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.ifft.get_inplace_scratch_len()];
        for t in 0..cache.n_frames {
            let g = &grad[t * n_out..(t + 1) * n_out];
            if log {
                let pre = &cache.pre_log[t * n_out..(t + 1) * n_out];
                for ((o, &gi), &v) in g_out.iter_mut().zip(g).zip(pre) {
                    *o = gi / (v + eps);
                }
            } else {
                g_out.copy_from_slice(g);
            }
            match &self.mel {
                Some(fb) => fb.project_transpose(&g_out, &mut g_mag),
                None => g_mag.copy_from_slice(&g_out),
            }
            if g_mag.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let spec = &cache.spectra[t * n_bins..(t + 1) * n_bins];
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < n_bins {
                    let mag = spec[k].norm();
                    if mag > T::zero() {
                        spec[k] * (g_mag[k] / mag)
                    } else {
                        Complex::new(T::zero(), T::zero())
                    }
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            let dst = &mut dx[t * hop..t * hop + n];
            for ((d, b), &w) in dst.iter_mut().zip(&buf).zip(&self.window) {
                *d += b.re * w;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(N^2) DFT magnitude oracle.
    fn brute_dft_mag(frame: &[f64], window: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += x * w * ang.cos();
                    im += x * w * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zeros_give_zeros() {
        let s = stft_magnitude(&vec![0.0f64; 2048], &SpectrogramConfig::new(512)).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.n_frames, (2048 - 512) / 128 + 1);
    }

    #[test]
    fn on_bin_sinusoid_peak() {
        let n = 1024;
        let k = 37;
        let a = 0.8;
        let x: Vec<f64> = (0..n)
            .map(|i| a * (2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64).cos())
            .collect();
        let s = stft_magnitude(&x, &SpectrogramConfig::new(n)).unwrap();
        let expected = a * n as f64 / 4.0;
        let w: Vec<f64> = WindowKind::Hann.coefficients(n);
        let oracle = brute_dft_mag(&x, &w)[k];
        assert!((oracle - expected).abs() / expected < 1e-9);
        assert!((s.get(0, k) - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn dc_of_ones_is_half_window_length() {
        let n = 512;
        let s = stft_magnitude(&vec![1.0f64; n], &SpectrogramConfig::new(n)).unwrap();
        let coherent_gain: f64 = WindowKind::Hann.coefficients::<f64>(n).iter().sum();
        assert!((coherent_gain - n as f64 / 2.0).abs() < 1e-9);
        assert!((s.get(0, 0) - n as f64 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn too_short_input_errors() {
        assert!(stft_magnitude(&vec![0.0f64; 511], &SpectrogramConfig::new(512)).is_err());
    }

    #[test]
    fn parseval_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 64;
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = SpectrogramConfig::new(n);
        let s = stft_magnitude(&x, &cfg).unwrap();
        let w: Vec<f64> = WindowKind::Hann.coefficients(n);
        for t in 0..s.n_frames {
            let frame = &x[t * cfg.hop..t * cfg.hop + n];
            let brute = brute_dft_mag(frame, &w);
            for (a, b) in s.frame(t).iter().zip(&brute) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            // full-spectrum energy from the half spectrum
            let full: f64 = (0..n)
                .map(|k| {
                    let kk = if k <= n / 2 { k } else { n - k };
                    s.get(t, kk).powi(2)
                })
                .sum();
            let energy: f64 = frame.iter().zip(&w).map(|(a, b)| (a * b).powi(2)).sum();
            assert!((full - energy * n as f64).abs() / (energy * n as f64) < 1e-6);
        }
    }

    #[test]
    fn mel_shape_and_ordering() {
        let fb = mel_filterbank::<f64>(&MelConfig::default(), 513, 44100).unwrap();
        let dense = fb.to_dense();
        assert_eq!((dense.len(), dense[0].len()), (160, 513));
        for row in &dense {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
        }
        assert!(fb.centers_hz().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_mel_band_spans_range() {
        let fb = mel_filterbank::<f64>(
            &MelConfig {
                n_mels: 1,
                f_min: 0.0,
                f_max: None,
            },
            513,
            44100,
        )
        .unwrap();
        let row = &fb.to_dense()[0];
        // direct construction: triangle (0, c, 22050) with c the mel midpoint
        let c = mel_to_hz(hz_to_mel(22050.0) / 2.0);
        assert!((fb.centers_hz()[0] - c).abs() < 1e-9);
        assert!(c > 0.0 && c < 22050.0);
        let bin_hz = 44100.0 / 1024.0;
        for (k, &v) in row.iter().enumerate() {
            let f = k as f64 * bin_hz;
            let expect = if f <= c { f / c } else { (22050.0 - f) / (22050.0 - c) };
            assert!((v - expect.max(0.0)).abs() < 1e-12);
        }
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(argmax > 0 && argmax < 512);
    }

    #[test]
    fn mel_rejects_more_bands_than_bins() {
        let cfg = MelConfig {
            n_mels: 40,
            ..MelConfig::default()
        };
        assert!(mel_filterbank::<f64>(&cfg, 33, 44100).is_err());
        let bad_range = MelConfig {
            n_mels: 10,
            f_min: 100.0,
            f_max: Some(50.0),
        };
        assert!(mel_filterbank::<f64>(&bad_range, 513, 44100).is_err());
    }

    #[test]
    fn dense_mel_at_small_window_has_no_empty_rows() {
        let fb = mel_filterbank::<f64>(&MelConfig::default(), 257, 44100).unwrap();
        for row in fb.to_dense() {
            assert!(row.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn log_scale_examples() {
        let s = Spectrogram {
            n_frames: 1,
            n_bins: 3,
            values: vec![0.0f64, 1.0, 2.0],
        };
        assert_eq!(apply_scale(&s, Scale::Linear, 1e-5), s);
        let l = apply_scale(&s, Scale::Log, 1e-5);
        assert!((l.values[0] - (1e-5f64).ln()).abs() < 1e-12);
        assert!((l.values[0] + 11.512925).abs() < 1e-6);
        assert!(l.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sign_flip_invariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f32> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let cfg = SpectrogramConfig::for_representation(1024, Representation::LogMel, 160);
        let fe = Frontend::<f32>::new(cfg, 44100).unwrap();
        assert_eq!(fe.forward(&x).unwrap(), fe.forward(&neg).unwrap());
    }

    #[test]
    fn backward_of_zero_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fe = Frontend::<f64>::new(SpectrogramConfig::new(128), 8000).unwrap();
        let (s, cache) = fe.forward_cached(&x).unwrap();
        let dx = fe.backward(&cache, &vec![0.0; s.values.len()]);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    fn fd_check(cfg: SpectrogramConfig, len: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fe = Frontend::<f64>::new(cfg, 16000).unwrap();
        let (s, cache) = fe.forward_cached(&x).unwrap();
        let up: Vec<f64> = (0..s.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &[f64]| -> f64 {
            let s = fe.forward(x).unwrap();
            s.values.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let dx = fe.backward(&cache, &up);
        let h = 1e-4;
        let scale = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..len {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let rel = (fd - dx[i]).abs() / fd.abs().max(dx[i].abs()).max(1e-6 * scale);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_linear() {
        fd_check(SpectrogramConfig::new(256), 1024, 11);
    }

    #[test]
    fn backward_matches_finite_differences_log_mel() {
        let cfg = SpectrogramConfig::for_representation(256, Representation::LogMel, 40);
        fd_check(cfg, 1024, 12);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..700).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fe = Frontend::<f64>::new(SpectrogramConfig::for_representation(128, Representation::Mel, 20), 8000).unwrap();
        let (s, cache) = fe.forward_cached(&x).unwrap();
        let up: Vec<f64> = (0..s.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = up.iter().map(|v| 2.5 * v).collect();
        let a = fe.backward(&cache, &up);
        let b = fe.backward(&cache, &scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((2.5 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}
