//! Directory-level preprocessing: load WAV files, drop count-ins, trim
//! silence, reject clipped material and build a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::audio::{detect_clipping, load_audio, silence_bounds};
use crate::config::{RunConfig, SplitMode};
use crate::dataset::{
    build_alternating_manifest_with, build_paired_manifest, build_unpaired_manifest_with, segment_length,
    DatasetManifest, SegmentRef, SourceSpan,
};
use crate::error::{Error, Result};
use crate::training::ValidationClip;

#[derive(Debug, Clone, PartialEq)]
pub struct PrepOptions {
    pub segment_seconds: f64,
    pub trim_silence: bool,
    pub silence_threshold_db: f64,
    pub silence_window_ms: f64,
    pub trim_start_seconds: f64,
    pub clip_level: f32,
    pub clip_min_run: usize,
    pub clip_max_ratio: f64,
}

impl From<&RunConfig> for PrepOptions {
    fn from(c: &RunConfig) -> Self {
        Self {
            segment_seconds: c.segment_seconds,
            trim_silence: c.trim_silence,
            silence_threshold_db: c.silence_threshold_db,
            silence_window_ms: c.silence_window_ms,
            trim_start_seconds: c.trim_start_seconds,
            clip_level: c.clip_level as f32,
            clip_min_run: c.clip_min_run,
            clip_max_ratio: c.clip_max_ratio,
        }
    }
}

/// `.wav` files directly inside `dir`, sorted by name.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no WAV files", dir.display())));
    }
    Ok(out)
}

/// How `path` is written into a manifest stored in `manifest_dir`:
/// relative when the file lives below it, absolute otherwise.
pub fn manifest_path(path: &Path, manifest_dir: &Path) -> PathBuf {
    let abs = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    let base = manifest_dir.canonicalize().unwrap_or_else(|_| manifest_dir.to_path_buf());
    abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs)
}

struct Prepared {
    span: SourceSpan,
    samples: Vec<f32>,
}

fn prepare(path: &Path, name: PathBuf, opts: &PrepOptions, keep_whole: bool) -> Result<Option<Prepared>> {
    let audio = load_audio(path)?;
    let sr = audio.sample_rate();
    let samples = audio.into_samples();
    let ratio = detect_clipping(&samples, opts.clip_level, opts.clip_min_run);
    if ratio > opts.clip_max_ratio {
        log::warn!(
            "{}: {:.2}% of samples clipped, file excluded",
            path.display(),
            100.0 * ratio
        );
        return Ok(None);
    }
    let skip = ((opts.trim_start_seconds * sr as f64).round() as usize).min(samples.len());
    let (start, end) = if opts.trim_silence && !keep_whole {
        match silence_bounds(&samples[skip..], sr, opts.silence_threshold_db, opts.silence_window_ms) {
            Ok(r) => (skip + r.start, skip + r.end),
            Err(Error::EmptyAudio(_)) => {
                log::warn!("{}: silent, file excluded", path.display());
                return Ok(None);
            }
            Err(e) => return Err(e),
        }
    } else {
        (skip, samples.len())
    };
    Ok(Some(Prepared {
        span: SourceSpan {
            file: name,
            start,
            len: end - start,
            sample_rate: sr,
        },
        samples,
    }))
}

fn prepare_dir(dir: &Path, manifest_dir: &Path, opts: &PrepOptions) -> Result<Vec<Prepared>> {
    let mut out = Vec::new();
    for path in list_wavs(dir)? {
        if let Some(p) = prepare(&path, manifest_path(&path, manifest_dir), opts, false)? {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: every file was rejected", dir.display())));
    }
    Ok(out)
}

fn common_rate(files: &[&Prepared]) -> Result<u32> {
    let sr = files[0].span.sample_rate;
    if let Some(f) = files.iter().find(|f| f.span.sample_rate != sr) {
        return Err(Error::Data(format!(
            "{}: sample rate {} differs from {sr}",
            f.span.file.display(),
            f.span.sample_rate
        )));
    }
    Ok(sr)
}

/// Segment-level clipping filter over the prepared files.
fn clip_filter<'a>(
    files: &'a BTreeMap<PathBuf, &'a [f32]>,
    seg_len: usize,
    opts: &'a PrepOptions,
) -> impl FnMut(&SegmentRef) -> bool + 'a {
    move |seg| {
        let data = files[&seg.file];
        let ratio = detect_clipping(&data[seg.start..seg.start + seg_len], opts.clip_level, opts.clip_min_run);
        if ratio > opts.clip_max_ratio {
            log::info!("{}@{}: clipped segment dropped", seg.file.display(), seg.start);
            false
        } else {
            true
        }
    }
}

/// Builds a manifest from one directory (`alternating`) or an input and a
/// target directory (`unpaired`, or `paired` where files are matched by
/// name and cut at identical offsets). Paths are written relative to
/// `manifest_dir` where possible.
pub fn build_manifest(
    split: SplitMode,
    input_dir: &Path,
    target_dir: Option<&Path>,
    manifest_dir: &Path,
    opts: &PrepOptions,
) -> Result<DatasetManifest> {
    match (split, target_dir) {
        (SplitMode::Alternating, None) => {
            let files = prepare_dir(input_dir, manifest_dir, opts)?;
            let sr = common_rate(&files.iter().collect::<Vec<_>>())?;
            let seg_len = segment_length(opts.segment_seconds, sr)?;
            let data: BTreeMap<PathBuf, &[f32]> =
                files.iter().map(|f| (f.span.file.clone(), f.samples.as_slice())).collect();
            let spans: Vec<SourceSpan> = files.iter().map(|f| f.span.clone()).collect();
            let mut keep = clip_filter(&data, seg_len, opts);
            let m = build_alternating_manifest_with(&spans, opts.segment_seconds, sr, &mut keep);
            m
        }
        (SplitMode::Unpaired, Some(tdir)) => {
            let xs = prepare_dir(input_dir, manifest_dir, opts)?;
            let ys = prepare_dir(tdir, manifest_dir, opts)?;
            let sr = common_rate(&xs.iter().chain(&ys).collect::<Vec<_>>())?;
            let seg_len = segment_length(opts.segment_seconds, sr)?;
            let data: BTreeMap<PathBuf, &[f32]> = xs
                .iter()
                .chain(&ys)
                .map(|f| (f.span.file.clone(), f.samples.as_slice()))
                .collect();
            let sx: Vec<SourceSpan> = xs.iter().map(|f| f.span.clone()).collect();
            let sy: Vec<SourceSpan> = ys.iter().map(|f| f.span.clone()).collect();
            let mut keep = clip_filter(&data, seg_len, opts);
            let m = build_unpaired_manifest_with(&sx, &sy, opts.segment_seconds, sr, &mut keep);
            m
        }
        (SplitMode::Paired, Some(tdir)) => build_paired(input_dir, tdir, manifest_dir, opts),
        (SplitMode::Alternating, Some(_)) => Err(Error::Config("alternating split takes a single directory".into())),
        (_, None) => Err(Error::Config(format!("{split} split needs an input and a target directory"))),
    }
}

fn build_paired(input_dir: &Path, target_dir: &Path, manifest_dir: &Path, opts: &PrepOptions) -> Result<DatasetManifest> {
    let mut pairs = Vec::new();
    let mut data = BTreeMap::new();
    for xp in list_wavs(input_dir)? {
        let yp = target_dir.join(xp.file_name().unwrap());
        if !yp.is_file() {
            return Err(Error::Data(format!("{}: no matching target file", xp.display())));
        }
        // trimming is decided on the input so both sides stay aligned
        let Some(x) = prepare(&xp, manifest_path(&xp, manifest_dir), opts, false)? else { continue };
        let Some(y) = prepare(&yp, manifest_path(&yp, manifest_dir), opts, true)? else { continue };
        if x.samples.len() != y.samples.len() {
            return Err(Error::Data(format!("{}: input and target lengths differ", xp.display())));
        }
        let ys = SourceSpan {
            start: x.span.start,
            len: x.span.len,
            ..y.span.clone()
        };
        data.insert(x.span.file.clone(), x.samples);
        data.insert(ys.file.clone(), y.samples);
        pairs.push((x.span, ys));
    }
    if pairs.is_empty() {
        return Err(Error::Data("every file pair was rejected".into()));
    }
    let sr = pairs[0].0.sample_rate;
    let mut m = build_paired_manifest(&pairs, opts.segment_seconds, sr)?;
    let seg_len = m.segment_length;
    let clipped = |seg: &SegmentRef| {
        let d = &data[&seg.file];
        detect_clipping(&d[seg.start..seg.start + seg_len], opts.clip_level, opts.clip_min_run) > opts.clip_max_ratio
    };
    let keep: Vec<bool> = m
        .input_segments
        .iter()
        .zip(&m.target_segments)
        .map(|(x, y)| !(clipped(x) || clipped(y)))
        .collect();
    let mut k = keep.iter();
    m.input_segments.retain(|_| *k.next().unwrap());
    let mut k = keep.iter();
    m.target_segments.retain(|_| *k.next().unwrap());
    if m.input_segments.is_empty() {
        return Err(Error::Data("no paired segments left after clipping rejection".into()));
    }
    Ok(m)
}

/// Loads `<name>-input.wav` / `<name>-target.wav` pairs from `dir`, sorted
/// by name. Returns the clips and their common sample rate.
pub fn load_paired_clips(dir: &Path) -> Result<(Vec<ValidationClip>, u32)> {
    let mut names = BTreeMap::new();
    for path in list_wavs(dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let (name, is_input) = if let Some(n) = stem.strip_suffix("-input") {
            (n.to_string(), true)
        } else if let Some(n) = stem.strip_suffix("-target") {
            (n.to_string(), false)
        } else {
            return Err(Error::Data(format!(
                "{}: expected <name>-input.wav or <name>-target.wav",
                path.display()
            )));
        };
        let entry: &mut (Option<PathBuf>, Option<PathBuf>) = names.entry(name).or_default();
        if is_input {
            entry.0 = Some(path);
        } else {
            entry.1 = Some(path);
        }
    }
    let mut clips = Vec::new();
    let mut rate = None;
    for (name, pair) in names {
        let (Some(xp), Some(yp)) = pair else {
            return Err(Error::Data(format!("{}: '{name}' has no matching input/target file", dir.display())));
        };
        let (x, y) = (load_audio(&xp)?, load_audio(&yp)?);
        for sr in [x.sample_rate(), y.sample_rate()] {
            if *rate.get_or_insert(sr) != sr {
                return Err(Error::Data(format!("{name}: sample rates differ within {}", dir.display())));
            }
        }
        if x.len() != y.len() {
            return Err(Error::Data(format!("{name}: input and target lengths differ")));
        }
        clips.push(ValidationClip {
            name,
            input: x.into_samples(),
            target: y.into_samples(),
        });
    }
    Ok((clips, rate.expect("list_wavs returns at least one file")))
}
