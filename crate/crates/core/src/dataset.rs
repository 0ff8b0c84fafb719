//! Segmentation of recordings into fixed-length training segments and the
//! line-oriented manifest format that records them.
//!
//! A manifest line is `<domain> <relative path> <start sample> <length>`,
//! preceded by a single `sample_rate=<int>` header. Segments reference the
//! source files by offset; audio is never copied.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use crate::audio::load_audio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Input,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Input => "input",
            Domain::Target => "target",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "input" => Some(Domain::Input),
            "target" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// A fixed-length segment of a source file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentRef {
    pub file: PathBuf,
    pub start: usize,
}

/// The usable region of a source file (after trimming).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: PathBuf,
    pub start: usize,
    pub len: usize,
    pub sample_rate: u32,
}

impl SourceSpan {
    pub fn whole(file: impl Into<PathBuf>, len: usize, sample_rate: u32) -> Self {
        Self {
            file: file.into(),
            start: 0,
            len,
            sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub sample_rate: u32,
    pub segment_length: usize,
    pub input_segments: Vec<SegmentRef>,
    pub target_segments: Vec<SegmentRef>,
}

pub fn segment_length(segment_seconds: f64, sample_rate: u32) -> Result<usize> {
    let n = (segment_seconds * sample_rate as f64).round();
    if !(n >= 1.0) {
        return Err(Error::Config(format!(
            "segment of {segment_seconds} s at {sample_rate} Hz is empty"
        )));
    }
    Ok(n as usize)
}

fn check_rates(spans: &[SourceSpan], sample_rate: u32) -> Result<()> {
    for s in spans {
        if s.sample_rate != sample_rate {
            return Err(Error::Data(format!(
                "{}: sample rate {} does not match {}",
                s.file.display(),
                s.sample_rate,
                sample_rate
            )));
        }
    }
    Ok(())
}

/// Consecutive non-overlapping segments of each span, in span order then
/// time order. Trailing partial segments are dropped.
pub fn segment_spans(spans: &[SourceSpan], seg_len: usize) -> Vec<SegmentRef> {
    spans
        .iter()
        .flat_map(|s| {
            (0..s.len / seg_len).map(move |k| SegmentRef {
                file: s.file.clone(),
                start: s.start + k * seg_len,
            })
        })
        .collect()
}

fn nonempty(segments: &[SegmentRef], domain: Domain) -> Result<()> {
    if segments.is_empty() {
        Err(Error::Data(format!("{} domain has no segments", domain.as_str())))
    } else {
        Ok(())
    }
}

/// Input segments from `files_x`, target segments from `files_y`.
pub fn build_unpaired_manifest(
    files_x: &[SourceSpan],
    files_y: &[SourceSpan],
    segment_seconds: f64,
    sample_rate: u32,
) -> Result<DatasetManifest> {
    build_unpaired_manifest_with(files_x, files_y, segment_seconds, sample_rate, &mut |_| true)
}

/// As [`build_unpaired_manifest`], keeping only segments accepted by `keep`.
pub fn build_unpaired_manifest_with(
    files_x: &[SourceSpan],
    files_y: &[SourceSpan],
    segment_seconds: f64,
    sample_rate: u32,
    keep: &mut dyn FnMut(&SegmentRef) -> bool,
) -> Result<DatasetManifest> {
    if files_x.is_empty() || files_y.is_empty() {
        return Err(Error::Data("both domains need at least one file".into()));
    }
    check_rates(files_x, sample_rate)?;
    check_rates(files_y, sample_rate)?;
    let seg_len = segment_length(segment_seconds, sample_rate)?;
    let input_segments: Vec<_> = segment_spans(files_x, seg_len).into_iter().filter(|s| keep(s)).collect();
    let target_segments: Vec<_> = segment_spans(files_y, seg_len).into_iter().filter(|s| keep(s)).collect();
    nonempty(&input_segments, Domain::Input)?;
    nonempty(&target_segments, Domain::Target)?;
    let m = DatasetManifest {
        sample_rate,
        segment_length: seg_len,
        input_segments,
        target_segments,
    };
    m.check_disjoint()?;
    Ok(m)
}

/// Splits one set of recordings into two unpaired domains: the global
/// segment sequence alternates input, target, input, ...
pub fn build_alternating_manifest(
    files: &[SourceSpan],
    segment_seconds: f64,
    sample_rate: u32,
) -> Result<DatasetManifest> {
    build_alternating_manifest_with(files, segment_seconds, sample_rate, &mut |_| true)
}

pub fn build_alternating_manifest_with(
    files: &[SourceSpan],
    segment_seconds: f64,
    sample_rate: u32,
    keep: &mut dyn FnMut(&SegmentRef) -> bool,
) -> Result<DatasetManifest> {
    if files.is_empty() {
        return Err(Error::Data("no files".into()));
    }
    check_rates(files, sample_rate)?;
    let seg_len = segment_length(segment_seconds, sample_rate)?;
    let mut input_segments = Vec::new();
    let mut target_segments = Vec::new();
    let kept = segment_spans(files, seg_len).into_iter().filter(|s| keep(s));
    for (i, seg) in kept.enumerate() {
        if i % 2 == 0 {
            input_segments.push(seg);
        } else {
            target_segments.push(seg);
        }
    }
    nonempty(&input_segments, Domain::Input)?;
    nonempty(&target_segments, Domain::Target)?;
    Ok(DatasetManifest {
        sample_rate,
        segment_length: seg_len,
        input_segments,
        target_segments,
    })
}

/// Time-aligned pairs: the i-th input segment and the i-th target segment
/// cover the same offsets of an (input file, target file) pair.
pub fn build_paired_manifest(
    pairs: &[(SourceSpan, SourceSpan)],
    segment_seconds: f64,
    sample_rate: u32,
) -> Result<DatasetManifest> {
    if pairs.is_empty() {
        return Err(Error::Data("no file pairs".into()));
    }
    let seg_len = segment_length(segment_seconds, sample_rate)?;
    let mut input_segments = Vec::new();
    let mut target_segments = Vec::new();
    for (x, y) in pairs {
        check_rates(std::slice::from_ref(x), sample_rate)?;
        check_rates(std::slice::from_ref(y), sample_rate)?;
        if x.start != y.start {
            return Err(Error::Data(format!(
                "pair {} / {} is not time-aligned",
                x.file.display(),
                y.file.display()
            )));
        }
        let len = x.len.min(y.len);
        for k in 0..len / seg_len {
            let start = x.start + k * seg_len;
            input_segments.push(SegmentRef {
                file: x.file.clone(),
                start,
            });
            target_segments.push(SegmentRef {
                file: y.file.clone(),
                start,
            });
        }
    }
    nonempty(&input_segments, Domain::Input)?;
    let m = DatasetManifest {
        sample_rate,
        segment_length: seg_len,
        input_segments,
        target_segments,
    };
    m.check_disjoint()?;
    Ok(m)
}

impl DatasetManifest {
    /// Inputs and targets correspond one-to-one at equal offsets.
    pub fn is_paired(&self) -> bool {
        self.input_segments.len() == self.target_segments.len()
            && self
                .input_segments
                .iter()
                .zip(&self.target_segments)
                .all(|(a, b)| a.start == b.start && a.file != b.file)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let inputs: HashSet<&SegmentRef> = self.input_segments.iter().collect();
        if let Some(dup) = self.target_segments.iter().find(|s| inputs.contains(s)) {
            return Err(Error::Data(format!(
                "segment {}@{} is in both domains",
                dup.file.display(),
                dup.start
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("sample_rate={}\n", self.sample_rate);
        for (domain, segs) in [
            (Domain::Input, &self.input_segments),
            (Domain::Target, &self.target_segments),
        ] {
            for s in segs {
                let path = s.file.to_string_lossy().replace('\\', "/");
                let _ = writeln!(out, "{} {} {} {}", domain.as_str(), path, s.start, self.segment_length);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty manifest".into()))?;
        let sample_rate: u32 = header
            .trim()
            .strip_prefix("sample_rate=")
            .and_then(|v| v.parse().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Data(format!("bad manifest header: {header:?}")))?;

        let mut segment_length = None;
        let mut input_segments = Vec::new();
        let mut target_segments = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let bad = || Error::Data(format!("manifest line {}: {line:?}", lineno + 2));
            let (domain, rest) = line.split_once(' ').ok_or_else(bad)?;
            let domain = Domain::parse(domain).ok_or_else(bad)?;
            let (rest, len) = rest.rsplit_once(' ').ok_or_else(bad)?;
            let (path, start) = rest.rsplit_once(' ').ok_or_else(bad)?;
            let start: usize = start.parse().map_err(|_| bad())?;
            let len: usize = len.parse().map_err(|_| bad())?;
            if path.is_empty() || len == 0 {
                return Err(bad());
            }
            match segment_length {
                None => segment_length = Some(len),
                Some(l) if l != len => {
                    return Err(Error::Data(format!(
                        "manifest mixes segment lengths {l} and {len}"
                    )))
                }
                _ => {}
            }
            let seg = SegmentRef {
                file: PathBuf::from(path),
                start,
            };
            match domain {
                Domain::Input => input_segments.push(seg),
                Domain::Target => target_segments.push(seg),
            }
        }
        let segment_length = segment_length.ok_or_else(|| Error::Data("manifest has no segments".into()))?;
        let m = Self {
            sample_rate,
            segment_length,
            input_segments,
            target_segments,
        };
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Audio for every file a manifest references, held in memory, with slices
/// served per segment.
#[derive(Debug, Clone)]
pub struct SegmentStore {
    manifest: DatasetManifest,
    files: BTreeMap<PathBuf, Arc<Vec<f32>>>,
}

impl SegmentStore {
    /// Loads the referenced files relative to `root` and checks every span.
    pub fn open(manifest: DatasetManifest, root: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        for seg in manifest.input_segments.iter().chain(&manifest.target_segments) {
            if files.contains_key(&seg.file) {
                continue;
            }
            let audio = load_audio(root.join(&seg.file))?;
            if audio.sample_rate() != manifest.sample_rate {
                return Err(Error::Data(format!(
                    "{}: sample rate {} but manifest says {}",
                    seg.file.display(),
                    audio.sample_rate(),
                    manifest.sample_rate
                )));
            }
            files.insert(seg.file.clone(), Arc::new(audio.into_samples()));
        }
        Self::from_memory(manifest, files)
    }

    pub fn from_memory(manifest: DatasetManifest, files: BTreeMap<PathBuf, Arc<Vec<f32>>>) -> Result<Self> {
        for seg in manifest.input_segments.iter().chain(&manifest.target_segments) {
            let data = files
                .get(&seg.file)
                .ok_or_else(|| Error::Data(format!("{} not loaded", seg.file.display())))?;
            if seg.start + manifest.segment_length > data.len() {
                return Err(Error::Data(format!(
                    "segment {}@{} runs past the end of the file ({} samples)",
                    seg.file.display(),
                    seg.start,
                    data.len()
                )));
            }
        }
        Ok(Self { manifest, files })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn segment(&self, seg: &SegmentRef) -> &[f32] {
        let data = &self.files[&seg.file];
        &data[seg.start..seg.start + self.manifest.segment_length]
    }

    pub fn input(&self, i: usize) -> &[f32] {
        self.segment(&self.manifest.input_segments[i])
    }

    pub fn target(&self, i: usize) -> &[f32] {
        self.segment(&self.manifest.target_segments[i])
    }
}

/// `batch` indices drawn uniformly with replacement from `0..n`.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}
