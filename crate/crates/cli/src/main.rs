use std::fs::OpenOptions;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use tonegan::audio::{load_audio, save_audio, AudioBuffer, BitDepth};
use tonegan::checkpoint::{Checkpoint, ModelKind};
use tonegan::config::{RunConfig, SplitMode, KEYS};
use tonegan::dataset::{DatasetManifest, SegmentStore};
use tonegan::generator::Generator;
use tonegan::metrics::MetricSuite;
use tonegan::prep::{build_manifest, load_paired_clips, PrepOptions};
use tonegan::streaming::{benchmark_realtime, StreamState};
use tonegan::synth;
use tonegan::training::{load_generator, validate_generator, Control, RunOptions, Trainer};
use tonegan::Error;

#[derive(Parser)]
#[command(name = "tonegan", version, about = "Guitar tone emulation with adversarially trained WaveNet generators")]
#[command(after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trim, screen and segment WAV recordings into a dataset manifest.
    Preprocess(PreprocessArgs),
    /// Train a generator (adversarial or supervised).
    #[command(after_help = config_help())]
    Train(TrainArgs),
    /// Score a generator on `<name>-input.wav` / `<name>-target.wav` pairs.
    Evaluate(EvaluateArgs),
    /// Stream a WAV file (or raw f32 samples) through a generator.
    Process(ProcessArgs),
    /// Measure the streaming real-time factor.
    Benchmark(BenchmarkArgs),
    /// Write a synthetic plucked-string dataset with a tanh "amp" target.
    ToyData(ToyDataArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut run = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            run.set(k.trim(), v.trim())?;
        }
        run.validate()?;
        Ok(run)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of input-domain WAV files (or the only directory for the alternating split).
    input_dir: PathBuf,
    /// Target-domain directory for unpaired and paired splits.
    #[arg(long)]
    target_dir: Option<PathBuf>,
    /// Manifest file to write.
    #[arg(short, long)]
    out: PathBuf,
    /// alternating, unpaired or paired.
    #[arg(long)]
    split: Option<String>,
    /// Segment length in seconds.
    #[arg(long)]
    segment_seconds: Option<f64>,
    /// Seconds dropped from the start of every file.
    #[arg(long)]
    trim_start_seconds: Option<f64>,
    /// Keep leading and trailing silence.
    #[arg(long)]
    no_trim: bool,
    /// Silence threshold in dBFS.
    #[arg(long)]
    silence_threshold_db: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset manifest written by `preprocess`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<name>-input.wav` / `<name>-target.wav` validation pairs.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Output directory for checkpoints, the loss log and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a `gen-*.ckpt` checkpoint; its stored config is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// adversarial or supervised.
    #[arg(long)]
    mode: Option<String>,
    /// spectrogram, mel, log-spectrogram or log-mel.
    #[arg(long)]
    discriminator: Option<String>,
    /// 1 or 3 discriminator scales.
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Small generator and discriminator for smoke tests.
    #[arg(long)]
    tiny: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of `<name>-input.wav` / `<name>-target.wav` pairs.
    dir: PathBuf,
    /// Key-value report file.
    #[arg(long, default_value = "report.txt")]
    report: PathBuf,
}

#[derive(Args)]
struct ProcessArgs {
    /// Generator checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input WAV (omit with --raw).
    input: Option<PathBuf>,
    /// Output WAV (omit with --raw).
    output: Option<PathBuf>,
    /// Read little-endian f32 samples from stdin and write them to stdout.
    #[arg(long)]
    raw: bool,
    /// Streaming block size; defaults to the checkpoint's `block_size`.
    #[arg(long)]
    block_size: Option<usize>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Generator checkpoint; a freshly initialised default generator otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    sample_rate: Option<u32>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ToyDataArgs {
    /// Output directory.
    out: PathBuf,
    /// Length of each training domain in seconds.
    #[arg(long, default_value_t = 120.0)]
    seconds: f64,
    /// Length of the validation pair in seconds.
    #[arg(long, default_value_t = 10.0)]
    validation_seconds: f64,
    #[arg(long, default_value_t = 44100)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gain before the tanh waveshaper.
    #[arg(long, default_value_t = synth::DEFAULT_DRIVE)]
    drive: f32,
}

fn config_help() -> String {
    let defaults = RunConfig::default();
    let mut s = String::from("Configuration keys (default):\n");
    for k in KEYS {
        let v = defaults.get(k.key).unwrap_or_default();
        s.push_str(&format!("  {} = {}\n      {}\n", k.key, v, k.doc));
    }
    s
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Process(a) => process(a),
        Command::Benchmark(a) => benchmark(a),
        Command::ToyData(a) => toy_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn preprocess(a: PreprocessArgs) -> Result<(), Error> {
    let mut run = a.config.resolve()?;
    if let Some(s) = &a.split {
        run.set("split", s)?;
    }
    if let Some(v) = a.segment_seconds {
        run.segment_seconds = v;
    }
    if let Some(v) = a.trim_start_seconds {
        run.trim_start_seconds = v;
    }
    if let Some(v) = a.silence_threshold_db {
        run.silence_threshold_db = v;
    }
    if a.no_trim {
        run.trim_silence = false;
    }
    run.validate()?;
    if a.target_dir.is_some() && run.split == SplitMode::Alternating {
        run.split = SplitMode::Unpaired;
    }
    let manifest_dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&manifest_dir).map_err(io_err(&manifest_dir))?;
    let m = build_manifest(
        run.split,
        &a.input_dir,
        a.target_dir.as_deref(),
        &manifest_dir,
        &PrepOptions::from(&run),
    )?;
    m.save(&a.out)?;
    log::info!(
        "{}: {} input and {} target segments of {} samples",
        a.out.display(),
        m.input_segments.len(),
        m.target_segments.len(),
        m.segment_length
    );
    Ok(())
}

fn open_store(path: &Path) -> Result<SegmentStore, Error> {
    let manifest = DatasetManifest::load(path)?;
    let root = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    SegmentStore::open(manifest, &root)
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let store = open_store(&a.manifest)?;
    let sr = store.manifest().sample_rate;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            if a.config.config.is_some() || !a.config.set.is_empty() || a.tiny {
                log::warn!("resuming: the checkpoint's stored configuration is used");
            }
            Trainer::resume(ckpt, a.iterations)?
        }
        None => {
            let mut run = a.config.resolve()?;
            if a.tiny {
                run.gen_stacks = 1;
                run.gen_layers = 4;
                run.gen_channels = 4;
                run.disc_width_divisor = 32;
            }
            for (k, v) in [
                ("mode", a.mode.clone()),
                ("discriminator", a.discriminator.clone()),
                ("scales", a.scales.map(|v| v.to_string())),
                ("iterations", a.iterations.map(|v| v.to_string())),
                ("seed", a.seed.map(|v| v.to_string())),
            ] {
                if let Some(v) = v {
                    run.set(k, &v)?;
                }
            }
            run.sample_rate = sr;
            run.validate()?;
            Trainer::new(run)?
        }
    };

    let validation = match &a.validation {
        Some(dir) => {
            let (clips, vsr) = load_paired_clips(dir)?;
            if vsr != sr {
                return Err(Error::Data(format!(
                    "validation audio is {vsr} Hz but the training data is {sr} Hz"
                )));
            }
            Some(clips)
        }
        None => None,
    };

    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let cfg_path = a.out.join("config.txt");
    std::fs::write(&cfg_path, trainer.config().to_text()).map_err(io_err(&cfg_path))?;
    let log_path = a.out.join("loss.log");
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log_writer = BufWriter::new(log_file);

    log::info!(
        "training {} from iteration {} to {}",
        trainer.config().mode,
        trainer.iteration(),
        trainer.config().iterations
    );
    let summary = trainer.run(
        &store,
        RunOptions {
            out_dir: Some(&a.out),
            validation: validation.as_deref(),
            log: Some(&mut log_writer),
        },
        |p| {
            if let Some(r) = p.validation {
                log::info!("iteration {}: {}", p.losses.iteration + 1, r.summary());
            }
            Control::Continue
        },
    )?;
    log::info!(
        "finished at iteration {}; {} checkpoint files written",
        summary.iterations,
        summary.checkpoints.len()
    );
    if let Some((v, it)) = summary.best {
        log::info!("best validation {} = {v:.6e} at iteration {it}", trainer.selection_metric().key());
    }
    Ok(())
}

fn load_gen_checkpoint(path: &Path) -> Result<(Generator<f32>, RunConfig), Error> {
    let c = Checkpoint::load(path)?;
    if c.kind != ModelKind::Generator {
        return Err(Error::Config(format!(
            "{}: expected a generator checkpoint, found {}",
            path.display(),
            c.kind.name()
        )));
    }
    let run = RunConfig::parse(&c.config)?;
    Ok((load_generator(&c)?, run))
}

fn evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let (generator, run) = load_gen_checkpoint(&a.checkpoint)?;
    let (clips, sr) = load_paired_clips(&a.dir)?;
    if sr != run.sample_rate {
        log::warn!("clips are {sr} Hz but the model was trained at {} Hz", run.sample_rate);
    }
    let suite = MetricSuite::new(run.metric_config(sr))?;
    let report = validate_generator(&generator, &suite, &clips)?;
    print!("{}", report.to_text());
    std::fs::write(&a.report, report.to_key_values()).map_err(io_err(&a.report))?;
    Ok(())
}

fn process(a: ProcessArgs) -> Result<(), Error> {
    let (generator, run) = load_gen_checkpoint(&a.checkpoint)?;
    let block = a.block_size.unwrap_or(run.block_size);
    if block == 0 {
        return Err(Error::Config("block size must be positive".into()));
    }
    let mut state = StreamState::new(Arc::new(generator))?.with_sample_rate(run.sample_rate);
    if a.raw {
        if a.input.is_some() || a.output.is_some() {
            return Err(Error::Config("--raw reads stdin and writes stdout; drop the file arguments".into()));
        }
        return process_raw(&mut state, block);
    }
    let (Some(input), Some(output)) = (&a.input, &a.output) else {
        return Err(Error::Config("process needs an input and an output WAV (or --raw)".into()));
    };
    let audio = load_audio(input)?;
    if audio.sample_rate() != run.sample_rate {
        log::warn!(
            "input is {} Hz but the model was trained at {} Hz",
            audio.sample_rate(),
            run.sample_rate
        );
    }
    let mut out = vec![0.0f32; audio.len()];
    for (x, y) in audio.samples().chunks(block).zip(out.chunks_mut(block)) {
        state.process(x, y);
    }
    let clipped = save_audio(&AudioBuffer::new(out, audio.sample_rate())?, output, BitDepth::Float32)?;
    if clipped > 0 {
        log::warn!("{clipped} output samples exceeded full scale and were clipped");
    }
    Ok(())
}

fn process_raw(state: &mut StreamState<f32>, block: usize) -> Result<(), Error> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let (mut input, mut output) = (stdin.lock(), stdout.lock());
    let err = |e| Error::Io {
        path: PathBuf::from("<stdio>"),
        source: e,
    };
    let mut bytes = vec![0u8; block * 4];
    let mut x = vec![0.0f32; block];
    let mut y = vec![0.0f32; block];
    let mut pending = 0usize;
    loop {
        let n = input.read(&mut bytes[pending..]).map_err(err)?;
        pending += n;
        let eof = n == 0;
        let samples = pending / 4;
        if samples == block || (eof && samples > 0) {
            for (v, b) in x.iter_mut().zip(bytes[..samples * 4].chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
            state.process(&x[..samples], &mut y[..samples]);
            let out: Vec<u8> = y[..samples].iter().flat_map(|v| v.to_le_bytes()).collect();
            output.write_all(&out).map_err(err)?;
            bytes.copy_within(samples * 4..pending, 0);
            pending -= samples * 4;
        }
        if eof {
            if pending > 0 {
                log::warn!("ignoring {pending} trailing bytes (not a whole f32 sample)");
            }
            break;
        }
    }
    output.flush().map_err(err)
}

fn benchmark(a: BenchmarkArgs) -> Result<(), Error> {
    let (generator, run) = match &a.checkpoint {
        Some(p) => load_gen_checkpoint(p)?,
        None => {
            let run = a.config.resolve()?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(run.seed);
            (Generator::init(run.generator_config(), &mut rng)?, run)
        }
    };
    let block = a.block_size.unwrap_or(run.block_size);
    let sr = a.sample_rate.unwrap_or(run.sample_rate);
    let r = benchmark_realtime(Arc::new(generator), a.seconds, block, sr)?;
    println!(
        "processed {:.2} s of audio in {:.3} s at {sr} Hz, block {block}",
        r.audio_seconds, r.processing_seconds
    );
    println!("real-time factor: {:.4}", r.factor);
    Ok(())
}

fn write_wav(path: &Path, samples: Vec<f32>, sr: u32) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_audio(&AudioBuffer::new(samples, sr)?, path, BitDepth::Float32)?;
    Ok(())
}

fn toy_data(a: ToyDataArgs) -> Result<(), Error> {
    let sr = a.sample_rate;
    let clean = synth::plucked_strings(a.seconds, sr, a.seed);
    let other = synth::plucked_strings(a.seconds, sr, a.seed.wrapping_add(1));
    write_wav(&a.out.join("input/clean.wav"), clean.clone(), sr)?;
    write_wav(&a.out.join("target/amp.wav"), synth::tanh_distortion(&other, a.drive), sr)?;
    write_wav(&a.out.join("paired/input/toy.wav"), clean.clone(), sr)?;
    write_wav(&a.out.join("paired/target/toy.wav"), synth::tanh_distortion(&clean, a.drive), sr)?;
    let (vx, vy) = synth::toy_pair(a.validation_seconds, sr, a.seed.wrapping_add(2), a.drive);
    write_wav(&a.out.join("validation/toy-input.wav"), vx, sr)?;
    write_wav(&a.out.join("validation/toy-target.wav"), vy, sr)?;
    log::info!("toy dataset written to {}", a.out.display());
    Ok(())
}
