//! Built-in toy data: plucked-string phrases as the clean input domain and
//! a `tanh` waveshaper as the target "amp".

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetManifest, SegmentRef, SegmentStore};
use crate::error::{Error, Result};

pub const DEFAULT_DRIVE: f32 = 3.0;

/// `tanh(drive * x)` per sample.
pub fn tanh_distortion(x: &[f32], drive: f32) -> Vec<f32> {
    x.iter().map(|&v| (drive * v).tanh()).collect()
}

/// Karplus-Strong notes with random pitch (E2 to E5), level and length,
/// placed back to back with slight overlaps. Peak level stays below 0.7.
pub fn plucked_strings(seconds: f64, sample_rate: u32, seed: u64) -> Vec<f32> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f32; n];
    let mut start = 0usize;
    while start < n {
        let midi = rng.gen_range(40..77) as f64;
        let freq = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
        let level = rng.gen_range(0.15..0.45);
        let len = ((rng.gen_range(0.2..0.9)) * sr) as usize;
        let period = (sr / freq).round().max(2.0) as usize;
        let damping = rng.gen_range(0.990..0.998);
        let mut line: Vec<f64> = (0..period).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // soften the excitation
        for i in 1..period {
            line[i] = 0.5 * (line[i] + line[i - 1]);
        }
        let mut pos = 0usize;
        for t in 0..len.min(n - start) {
            let next = (pos + 1) % period;
            let v = line[pos];
            line[pos] = damping * 0.5 * (line[pos] + line[next]);
            pos = next;
            let env = (1.0 - (-(t as f64) / (0.002 * sr)).exp()).min(1.0);
            out[start + t] += (level * env * v) as f32;
        }
        let gap = (rng.gen_range(0.6..1.0) * len as f64) as usize;
        start += gap.max(1);
    }
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.7 {
        let s = 0.7 / peak;
        out.iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// Input and `tanh`-distorted target of the same phrase.
pub fn toy_pair(seconds: f64, sample_rate: u32, seed: u64, drive: f32) -> (Vec<f32>, Vec<f32>) {
    let x = plucked_strings(seconds, sample_rate, seed);
    let y = tanh_distortion(&x, drive);
    (x, y)
}

fn in_memory(
    sample_rate: u32,
    seg_len: usize,
    input: Vec<f32>,
    target: Vec<f32>,
    paired: bool,
) -> Result<SegmentStore> {
    if seg_len == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let (fx, fy) = (PathBuf::from("toy-input"), PathBuf::from("toy-target"));
    let segs = |file: &PathBuf, len: usize| -> Vec<SegmentRef> {
        (0..len / seg_len)
            .map(|k| SegmentRef {
                file: file.clone(),
                start: k * seg_len,
            })
            .collect()
    };
    let (nx, ny) = if paired {
        let n = input.len().min(target.len());
        (n, n)
    } else {
        (input.len(), target.len())
    };
    let manifest = DatasetManifest {
        sample_rate,
        segment_length: seg_len,
        input_segments: segs(&fx, nx),
        target_segments: segs(&fy, ny),
    };
    if manifest.input_segments.is_empty() || manifest.target_segments.is_empty() {
        return Err(Error::Data("toy audio is shorter than one segment".into()));
    }
    let mut files = BTreeMap::new();
    files.insert(fx, Arc::new(input));
    files.insert(fy, Arc::new(target));
    SegmentStore::from_memory(manifest, files)
}

/// Time-aligned input/target segments over one toy phrase.
pub fn paired_store(input: Vec<f32>, target: Vec<f32>, seg_len: usize, sample_rate: u32) -> Result<SegmentStore> {
    in_memory(sample_rate, seg_len, input, target, true)
}

/// Independent input and target recordings cut into segments.
pub fn unpaired_store(input: Vec<f32>, target: Vec<f32>, seg_len: usize, sample_rate: u32) -> Result<SegmentStore> {
    in_memory(sample_rate, seg_len, input, target, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = plucked_strings(1.5, 44100, 7);
        assert_eq!(a, plucked_strings(1.5, 44100, 7));
        assert_ne!(a, plucked_strings(1.5, 44100, 8));
        assert_eq!(a.len(), 66150);
        assert!(a.iter().all(|v| v.abs() <= 0.7 + 1e-6));
        let rms = (a.iter().map(|v| (v * v) as f64).sum::<f64>() / a.len() as f64).sqrt();
        assert!(rms > 0.01, "rms {rms}");
    }

    #[test]
    fn stores_have_expected_segments() {
        let (x, y) = toy_pair(1.0, 8000, 1, DEFAULT_DRIVE);
        let p = paired_store(x.clone(), y, 1000, 8000).unwrap();
        assert!(p.manifest().is_paired());
        assert_eq!(p.manifest().input_segments.len(), 8);
        let u = unpaired_store(x, plucked_strings(0.5, 8000, 2), 1000, 8000).unwrap();
        assert_eq!(u.manifest().target_segments.len(), 4);
        assert!(paired_store(vec![0.0; 10], vec![0.0; 10], 100, 8000).is_err());
    }

    #[test]
    fn distortion_is_tanh() {
        assert_eq!(tanh_distortion(&[0.0, 0.5], 3.0), vec![0.0, (1.5f32).tanh()]);
    }
}
