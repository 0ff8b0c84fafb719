//! Mono audio buffers, WAV I/O and the sample-level preprocessing steps:
//! silence trimming and clipping detection.

use std::ops::Range;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn slice(&self, range: Range<usize>) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[range].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Output encodings supported by [`save_audio`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Int16,
    Int24,
    Float32,
}

impl BitDepth {
    /// Size of one quantisation step relative to full scale.
    pub fn lsb(self) -> f64 {
        match self {
            BitDepth::Int16 => 1.0 / 32768.0,
            BitDepth::Int24 => 1.0 / 8_388_608.0,
            BitDepth::Float32 => 0.0,
        }
    }
}

/// Reads a PCM WAV file (16/24-bit integer or 32-bit float), averaging all
/// channels down to mono. Integer samples are scaled by `1 / 2^(bits-1)`.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding("zero channels".into()));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) | (SampleFormat::Int, 24) => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::wav(path, e))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };

    if interleaved.len() < channels {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }

    let samples = if channels == 1 {
        interleaved
    } else {
        let inv = 1.0 / channels as f64;
        interleaved
            .chunks_exact(channels)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() * inv) as f32)
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes a mono WAV file. Samples outside `[-1, 1]` are hard-clipped; the
/// number of clipped samples is returned.
pub fn save_audio(buffer: &AudioBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<usize> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::EmptyAudio("refusing to write an empty buffer".into()));
    }
    let (bits, format) = match depth {
        BitDepth::Int16 => (16, SampleFormat::Int),
        BitDepth::Int24 => (24, SampleFormat::Int),
        BitDepth::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;

    let mut clipped = 0usize;
    for &s in &buffer.samples {
        let c = if s > 1.0 {
            clipped += 1;
            1.0
        } else if s < -1.0 {
            clipped += 1;
            -1.0
        } else {
            s
        };
        let res = match depth {
            BitDepth::Float32 => writer.write_sample(c),
            BitDepth::Int16 | BitDepth::Int24 => {
                let full = (1i64 << (bits - 1)) as f64;
                let q = (c as f64 * full).round().clamp(-full, full - 1.0) as i32;
                writer.write_sample(q)
            }
        };
        res.map_err(|e| Error::wav(path, e))?;
    }
    writer.finalize().map_err(|e| Error::wav(path, e))?;
    if clipped > 0 {
        log::warn!("{}: hard-clipped {clipped} samples", path.display());
    }
    Ok(clipped)
}

/// Sample range spanning the first through the last analysis window whose
/// RMS exceeds `threshold_db` (dBFS). Windows are non-overlapping and start
/// at sample 0; the final window may be partial.
pub fn silence_bounds(samples: &[f32], sample_rate: u32, threshold_db: f64, window_ms: f64) -> Result<Range<usize>> {
    if !(threshold_db < 0.0) {
        return Err(Error::Config(format!(
            "silence threshold must be negative dB, got {threshold_db}"
        )));
    }
    if !(window_ms > 0.0) {
        return Err(Error::Config(format!("window must be positive, got {window_ms} ms")));
    }
    let window = ((window_ms * sample_rate as f64 / 1000.0).round() as usize).max(1);
    let threshold = 10f64.powf(threshold_db / 20.0);

    let loud = |chunk: &[f32]| {
        let ms = chunk.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / chunk.len() as f64;
        ms.sqrt() > threshold
    };

    let mut first = None;
    let mut last = None;
    for (w, chunk) in samples.chunks(window).enumerate() {
        if loud(chunk) {
            first.get_or_insert(w);
            last = Some(w);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => Ok(f * window..((l + 1) * window).min(samples.len())),
        _ => Err(Error::EmptyAudio(format!(
            "no window above {threshold_db} dBFS"
        ))),
    }
}

/// Removes leading and trailing silence; interior audio is untouched.
pub fn trim_silence(buffer: &AudioBuffer, threshold_db: f64, window_ms: f64) -> Result<AudioBuffer> {
    let range = silence_bounds(&buffer.samples, buffer.sample_rate, threshold_db, window_ms)?;
    Ok(buffer.slice(range))
}

/// Fraction of samples that belong to runs of at least `min_run`
/// consecutive samples with `|s| >= level`.
pub fn detect_clipping(samples: &[f32], level: f32, min_run: usize) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let min_run = min_run.max(1);
    let mut clipped = 0usize;
    let mut run = 0usize;
    for &s in samples {
        if s.abs() >= level {
            run += 1;
        } else {
            if run >= min_run {
                clipped += run;
            }
            run = 0;
        }
    }
    if run >= min_run {
        clipped += run;
    }
    clipped as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, amp: f32, freq: f32, sr: u32) -> Vec<f32> {
        (0..n)
            .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin())
            .collect()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
        assert!(AudioBuffer::new(vec![f32::NAN], 44100).is_err());
    }

    #[test]
    fn trim_keeps_buffer_without_silent_edges() {
        let b = AudioBuffer::new(sine(4410, 0.5, 441.0, 44100), 44100).unwrap();
        // 441 Hz at 44.1 kHz starts at zero but the first 10 ms window is loud
        let t = trim_silence(&b, -60.0, 10.0).unwrap();
        assert_eq!(t, b);
    }

    #[test]
    fn trim_finds_sine_between_silences() {
        let sr = 44100;
        let mut s = vec![0.0f32; sr as usize];
        s.extend(sine(sr as usize, 0.5, 440.0, sr));
        s.extend(vec![0.0f32; sr as usize]);
        let window = 441usize;

        // oracle: direct scan for the exact onset/offset of nonzero audio
        let onset = s.iter().position(|v| v.abs() > 0.0).unwrap();
        let offset = s.iter().rposition(|v| v.abs() > 0.0).unwrap() + 1;

        let r = silence_bounds(&s, sr, -60.0, 10.0).unwrap();
        assert!(r.start.abs_diff(onset) <= window, "{r:?} vs {onset}");
        assert!(r.end.abs_diff(offset) <= window, "{r:?} vs {offset}");
        assert_eq!(r, 44100..88200);
    }

    #[test]
    fn trim_all_zero_is_an_error() {
        let b = AudioBuffer::new(vec![0.0; 1000], 8000).unwrap();
        assert!(matches!(trim_silence(&b, -60.0, 10.0), Err(Error::EmptyAudio(_))));
    }

    #[test]
    fn trim_rejects_bad_parameters() {
        let b = AudioBuffer::new(vec![0.5; 1000], 8000).unwrap();
        assert!(trim_silence(&b, 0.0, 10.0).is_err());
        assert!(trim_silence(&b, -60.0, 0.0).is_err());
    }

    #[test]
    fn clipping_examples() {
        assert_eq!(detect_clipping(&[0.1, -0.5, 0.9], 0.999, 3), 0.0);

        let mut s = vec![0.0f32; 100];
        s[40..50].iter_mut().for_each(|v| *v = 1.0);
        // oracle: direct count of samples inside qualifying runs
        let expected = 10.0 / 100.0;
        assert!((detect_clipping(&s, 0.999, 3) - expected).abs() < 1e-15);

        let mut short = vec![0.0f32; 100];
        short[10] = 1.0;
        short[11] = -1.0;
        assert_eq!(detect_clipping(&short, 0.999, 3), 0.0);
        assert_eq!(detect_clipping(&[], 0.999, 3), 0.0);
    }

    #[test]
    fn clipping_run_at_buffer_end_counts() {
        let s = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(detect_clipping(&s, 0.999, 3), 0.75);
    }
}
