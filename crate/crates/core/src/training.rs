//! Adversarial (hinge loss) and supervised (ESR) training loops.
//!
//! Every iteration draws its batches from an RNG derived only from the run
//! seed and the iteration number, so a resumed run replays the exact same
//! batches as an uninterrupted one.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::{RunConfig, TrainMode};
use crate::dataset::{sample_batch, SegmentStore};
use crate::discriminator::{DiscriminatorParams, MultiScaleDiscriminator, MultiScaleParams};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorParams};
use crate::losses::{
    batch_esr_with_grad, hinge_loss_d_grads, hinge_loss_d_multiscale, hinge_loss_g_grads, hinge_loss_g_multiscale,
};
use crate::metrics::{ClipMetrics, Metric, MetricReport, MetricSuite};
use crate::optim::{AdamState, StepOutcome};
use crate::tensor::{ParamSet, Tensor};

/// Batch-sampling RNG for one iteration.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - stream);
    rng
}

#[derive(Debug, Clone)]
pub struct ValidationClip {
    pub name: String,
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// Zero-based index of the iteration that produced these losses.
    pub iteration: u64,
    /// Discriminator loss before its update; absent in supervised mode.
    pub loss_d: Option<f64>,
    /// Generator loss (hinge or ESR) before its update.
    pub loss_g: f64,
    pub skipped_g: bool,
    pub skipped_d: bool,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        self.loss_g.is_finite() && self.loss_d.is_none_or(f64::is_finite)
    }

    pub fn log_line(&self, validation: Option<&MetricReport>) -> String {
        let d = self.loss_d.map_or_else(|| "-".to_string(), |v| format!("{v:.9e}"));
        let mut line = format!("{} {} {:.9e}", self.iteration, d, self.loss_g);
        if let Some(v) = validation {
            line.push(' ');
            line.push_str(&v.summary());
        }
        line
    }
}

pub struct Progress<'a> {
    pub losses: &'a StepLosses,
    pub validation: Option<&'a MetricReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Checkpoints are written here when set.
    pub out_dir: Option<&'a Path>,
    pub validation: Option<&'a [ValidationClip]>,
    pub log: Option<&'a mut dyn Write>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub last: Option<StepLosses>,
    pub best: Option<(f64, u64)>,
    pub checkpoints: Vec<PathBuf>,
}

pub struct Trainer {
    run: RunConfig,
    generator: Generator<f32>,
    opt_g: AdamState<GeneratorParams<f32>>,
    disc: Option<MultiScaleDiscriminator<f32>>,
    opt_d: Vec<AdamState<DiscriminatorParams<f32>>>,
    iteration: u64,
    best: Option<(f64, u64)>,
    suite: Option<MetricSuite>,
}

impl Trainer {
    /// Fresh models initialised from the run seed.
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let generator = Generator::init(run.generator_config(), &mut init_rng(run.seed, 0))?;
        let disc = match run.mode {
            TrainMode::Adversarial => Some(MultiScaleDiscriminator::init(
                run.discriminator_configs(run.sample_rate)?,
                &mut init_rng(run.seed, 1),
            )?),
            TrainMode::Supervised => None,
        };
        Self::from_parts(run, generator, disc)
    }

    pub fn from_parts(
        run: RunConfig,
        generator: Generator<f32>,
        disc: Option<MultiScaleDiscriminator<f32>>,
    ) -> Result<Self> {
        run.validate()?;
        if generator.config() != &run.generator_config() {
            return Err(Error::Config("generator does not match the run configuration".into()));
        }
        match (run.mode, &disc) {
            (TrainMode::Adversarial, None) => {
                return Err(Error::Config("adversarial training needs a discriminator".into()))
            }
            (TrainMode::Supervised, Some(_)) => {
                return Err(Error::Config("supervised training takes no discriminator".into()))
            }
            _ => {}
        }
        let opt_g = AdamState::new(run.adam_g(), generator.params());
        let opt_d = disc
            .as_ref()
            .map(|d| d.subs().iter().map(|s| AdamState::new(run.adam_d(), s.params())).collect())
            .unwrap_or_default();
        Ok(Self {
            run,
            generator,
            opt_g,
            disc,
            opt_d,
            iteration: 0,
            best: None,
            suite: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.run
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&MultiScaleDiscriminator<f32>> {
        self.disc.as_ref()
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn best(&self) -> Option<(f64, u64)> {
        self.best
    }

    /// Metric used to pick the best checkpoint.
    pub fn selection_metric(&self) -> Metric {
        match self.run.mode {
            TrainMode::Adversarial => Metric::matching(self.run.discriminator),
            TrainMode::Supervised => Metric::Esr,
        }
    }

    fn check_data(&self, data: &SegmentStore) -> Result<()> {
        let m = data.manifest();
        if m.sample_rate != self.run.sample_rate {
            return Err(Error::Config(format!(
                "data is {} Hz but the run is configured for {} Hz",
                m.sample_rate, self.run.sample_rate
            )));
        }
        if m.input_segments.is_empty() || m.target_segments.is_empty() {
            return Err(Error::Data("both domains need at least one segment".into()));
        }
        match self.run.mode {
            TrainMode::Supervised => {
                if !m.is_paired() {
                    return Err(Error::Config("supervised training needs a paired manifest".into()));
                }
                let rf = self.generator.receptive_field();
                if self.run.mask_receptive_field && m.segment_length < rf {
                    return Err(Error::Data(format!(
                        "segments of {} samples are shorter than the {rf}-sample receptive field",
                        m.segment_length
                    )));
                }
            }
            TrainMode::Adversarial => {
                let need = self.disc.as_ref().map_or(0, |d| d.min_samples());
                if m.segment_length < need {
                    return Err(Error::Data(format!(
                        "segments of {} samples are shorter than the {need}-sample discriminator window",
                        m.segment_length
                    )));
                }
            }
        }
        Ok(())
    }

    /// One training iteration.
    pub fn step(&mut self, data: &SegmentStore) -> Result<StepLosses> {
        self.check_data(data)?;
        let losses = match self.run.mode {
            TrainMode::Adversarial => self.adversarial_step(data)?,
            TrainMode::Supervised => self.supervised_step(data)?,
        };
        self.iteration += 1;
        Ok(losses)
    }

    fn supervised_step(&mut self, data: &SegmentStore) -> Result<StepLosses> {
        let mut rng = iteration_rng(self.run.seed, self.iteration);
        let n = data.manifest().input_segments.len();
        let idx = sample_batch(&mut rng, n, self.run.batch_size);
        let mut outputs = Vec::with_capacity(idx.len());
        let mut caches = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (y, cache) = self.generator.forward_cached(data.input(i))?;
            outputs.push(y);
            caches.push(cache);
        }
        let targets: Vec<&[f32]> = idx.iter().map(|&i| data.target(i)).collect();
        let mask = if self.run.mask_receptive_field {
            self.generator.receptive_field() - 1
        } else {
            0
        };
        let (loss, dys) = batch_esr_with_grad(&outputs, &targets, self.run.preemph_coeff, mask)?;
        let mut grads = self.generator.params().zeros_like();
        for (cache, dy) in caches.iter().zip(&dys) {
            grads.accumulate(&self.generator.backward(cache, dy).0);
        }
        let outcome = self.opt_g.update(self.generator.params_mut(), &grads);
        Ok(StepLosses {
            iteration: self.iteration,
            loss_d: None,
            loss_g: loss as f64,
            skipped_g: outcome == StepOutcome::SkippedNonFinite,
            skipped_d: false,
        })
    }

    fn adversarial_step(&mut self, data: &SegmentStore) -> Result<StepLosses> {
        let mut rng = iteration_rng(self.run.seed, self.iteration);
        let n_in = data.manifest().input_segments.len();
        let n_tgt = data.manifest().target_segments.len();
        let b = self.run.batch_size;
        let in_idx = sample_batch(&mut rng, n_in, b);

        let mut fakes = Vec::with_capacity(b);
        let mut g_caches = Vec::with_capacity(b);
        for &i in &in_idx {
            let (y, cache) = self.generator.forward_cached(data.input(i))?;
            fakes.push(y);
            g_caches.push(cache);
        }

        let disc = self.disc.as_mut().expect("adversarial trainer has a discriminator");
        let n_scales = disc.subs().len();

        // discriminator update(s)
        let mut first_loss_d = None;
        let mut skipped_d = false;
        for _ in 0..self.run.d_steps_per_g_step {
            let tgt_idx = sample_batch(&mut rng, n_tgt, b);
            let mut real = vec![Vec::with_capacity(b); n_scales];
            let mut fake = vec![Vec::with_capacity(b); n_scales];
            let mut real_caches = vec![Vec::with_capacity(b); n_scales];
            let mut fake_caches = vec![Vec::with_capacity(b); n_scales];
            for (s, sub) in disc.subs().iter().enumerate() {
                for &j in &tgt_idx {
                    let (score, c) = sub.forward_cached(data.target(j))?;
                    real[s].push(score);
                    real_caches[s].push(c);
                }
                for y in &fakes {
                    let (score, c) = sub.forward_cached(y)?;
                    fake[s].push(score);
                    fake_caches[s].push(c);
                }
            }
            let loss_d = hinge_loss_d_multiscale(&real, &fake)?;
            first_loss_d.get_or_insert(loss_d as f64);
            let (dr, df) = hinge_loss_d_grads(&real, &fake);
            let mut sub_grads = Vec::with_capacity(n_scales);
            for (s, sub) in disc.subs().iter().enumerate() {
                let mut g = sub.params().zeros_like();
                for (c, &u) in real_caches[s].iter().zip(&dr[s]).chain(fake_caches[s].iter().zip(&df[s])) {
                    if u != 0.0 {
                        g.accumulate(&sub.backward_params(c, u));
                    }
                }
                sub_grads.push(g);
            }
            if sub_grads.iter().all(|g| g.all_finite()) {
                let opts = &mut self.opt_d;
                disc.for_each_params_mut(|s, p| {
                    opts[s].update(p, &sub_grads[s]);
                });
            } else {
                skipped_d = true;
            }
        }

        // generator update through the updated discriminator
        let mut fake = vec![Vec::with_capacity(b); n_scales];
        let mut caches = vec![Vec::with_capacity(b); n_scales];
        for (s, sub) in disc.subs().iter().enumerate() {
            for y in &fakes {
                let (score, c) = sub.forward_cached(y)?;
                fake[s].push(score);
                caches[s].push(c);
            }
        }
        let loss_g = hinge_loss_g_multiscale(&fake)?;
        let up = hinge_loss_g_grads(&fake);
        let mut grads = self.generator.params().zeros_like();
        for (bi, g_cache) in g_caches.iter().enumerate() {
            let mut dy = vec![0.0f32; fakes[bi].len()];
            for (s, sub) in disc.subs().iter().enumerate() {
                let dx = sub.backward_input(&caches[s][bi], up[s][bi]);
                dy.iter_mut().zip(&dx).for_each(|(a, &v)| *a += v);
            }
            grads.accumulate(&self.generator.backward(g_cache, &dy).0);
        }
        let outcome = self.opt_g.update(self.generator.params_mut(), &grads);
        Ok(StepLosses {
            iteration: self.iteration,
            loss_d: first_loss_d,
            loss_g: loss_g as f64,
            skipped_g: outcome == StepOutcome::SkippedNonFinite,
            skipped_d,
        })
    }

    /// Scores the current generator on paired clips. Pure in the
    /// parameters and data.
    pub fn validate(&mut self, clips: &[ValidationClip]) -> Result<MetricReport> {
        if self.suite.is_none() {
            self.suite = Some(MetricSuite::new(self.run.metric_config(self.run.sample_rate))?);
        }
        validate_generator(&self.generator, self.suite.as_ref().unwrap(), clips)
    }

    /// Trains until `iterations` total iterations are complete or the
    /// callback stops the run. Logs one line per iteration, validates every
    /// `validate_every` iterations and writes periodic, best and final
    /// checkpoints when an output directory is given.
    pub fn run(
        &mut self,
        data: &SegmentStore,
        mut opts: RunOptions<'_>,
        mut on_progress: impl FnMut(&Progress<'_>) -> Control,
    ) -> Result<RunSummary> {
        self.check_data(data)?;
        if let Some(dir) = opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let total = self.run.iterations;
        let mut last = None;
        let mut checkpoints = Vec::new();
        let mut last_saved = None;
        while self.iteration < total {
            let losses = self.step(data)?;
            let done = self.iteration;
            if !losses.is_finite() {
                if let Some(dir) = opts.out_dir {
                    self.save(dir, "diverged")?;
                }
                return Err(Error::Numerical(format!(
                    "non-finite loss at iteration {}: {}",
                    losses.iteration,
                    losses.log_line(None)
                )));
            }
            let report = match opts.validation {
                Some(clips) if done % self.run.validate_every == 0 || done == total => Some(self.validate(clips)?),
                _ => None,
            };
            if let Some(w) = opts.log.as_deref_mut() {
                writeln!(w, "{}", losses.log_line(report.as_ref())).map_err(|e| Error::io("<loss log>", e))?;
            }
            if let Some(r) = &report {
                let v = r.aggregate.get(self.selection_metric());
                if self.best.is_none_or(|(b, _)| v < b) {
                    self.best = Some((v, done));
                    if let Some(dir) = opts.out_dir {
                        checkpoints.extend(self.save(dir, "best")?);
                    }
                }
            }
            if let Some(dir) = opts.out_dir {
                if done % self.run.checkpoint_every == 0 {
                    checkpoints.extend(self.save(dir, &format!("{done:08}"))?);
                    last_saved = Some(done);
                }
            }
            last = Some(losses);
            let stop = on_progress(&Progress {
                losses: &losses,
                validation: report.as_ref(),
            }) == Control::Stop;
            if stop {
                break;
            }
        }
        if let Some(dir) = opts.out_dir {
            if last_saved != Some(self.iteration) {
                checkpoints.extend(self.save(dir, &format!("{:08}", self.iteration))?);
            }
        }
        if let Some(w) = opts.log.as_deref_mut() {
            w.flush().map_err(|e| Error::io("<loss log>", e))?;
        }
        Ok(RunSummary {
            iterations: self.iteration,
            last,
            best: self.best,
            checkpoints,
        })
    }

    pub fn generator_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(ModelKind::Generator, self.iteration, self.run.seed, self.run.to_text());
        c.push_params("", self.generator.params())?;
        push_adam(&mut c, "", &self.opt_g)?;
        if let Some((v, it)) = self.best {
            c.push("train/best", &Tensor::<f64>::from_vec(&[2], vec![v, it as f64])?)?;
        }
        Ok(c)
    }

    pub fn discriminator_checkpoint(&self) -> Result<Option<Checkpoint>> {
        let Some(disc) = &self.disc else { return Ok(None) };
        let mut c = Checkpoint::new(ModelKind::MultiScale, self.iteration, self.run.seed, self.run.to_text());
        c.push_params("", &disc.params())?;
        for (s, opt) in self.opt_d.iter().enumerate() {
            push_adam(&mut c, &format!("scales.{s}."), opt)?;
        }
        Ok(Some(c))
    }

    /// Writes `gen-<tag>.ckpt` and, in adversarial mode, `disc-<tag>.ckpt`.
    pub fn save(&self, dir: &Path, tag: &str) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let g = dir.join(format!("gen-{tag}.ckpt"));
        self.generator_checkpoint()?.save(&g)?;
        out.push(g);
        if let Some(c) = self.discriminator_checkpoint()? {
            let d = dir.join(format!("disc-{tag}.ckpt"));
            c.save(&d)?;
            out.push(d);
        }
        Ok(out)
    }

    /// Restores a run from a generator checkpoint written by [`Trainer::save`];
    /// the matching `disc-` file is read from the same directory in
    /// adversarial mode. `iterations` may be raised to extend the run.
    pub fn resume(gen_path: &Path, iterations: Option<u64>) -> Result<Self> {
        let gc = Checkpoint::load(gen_path)?;
        let mut run = RunConfig::parse(&gc.config)?;
        if let Some(n) = iterations {
            run.iterations = n;
        }
        let generator = load_generator(&gc)?;
        let disc_ckpt = match run.mode {
            TrainMode::Supervised => None,
            TrainMode::Adversarial => {
                let name = gen_path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_prefix("gen-"))
                    .ok_or_else(|| Error::Checkpoint("generator checkpoint name must start with 'gen-'".into()))?;
                let dc = Checkpoint::load(gen_path.with_file_name(format!("disc-{name}")))?;
                if dc.step != gc.step {
                    return Err(Error::Checkpoint("generator and discriminator steps differ".into()));
                }
                Some(dc)
            }
        };
        let disc = disc_ckpt.as_ref().map(load_multiscale).transpose()?;
        let mut t = Self::from_parts(run, generator, disc)?;
        load_adam(&gc, "", &mut t.opt_g)?;
        if let Some(dc) = &disc_ckpt {
            for (s, opt) in t.opt_d.iter_mut().enumerate() {
                load_adam(dc, &format!("scales.{s}."), opt)?;
            }
        }
        t.iteration = gc.step;
        if let Some(raw) = gc.get("train/best") {
            let b = raw.to_tensor::<f64>()?;
            t.best = Some((b.data()[0], b.data()[1] as u64));
        }
        Ok(t)
    }
}

fn push_adam<P: ParamSet<f32>>(c: &mut Checkpoint, prefix: &str, opt: &AdamState<P>) -> Result<()> {
    for (n, t) in opt.m.named_tensors() {
        c.push(format!("adam_m/{prefix}{n}"), t)?;
    }
    for (n, t) in opt.v.named_tensors() {
        c.push(format!("adam_v/{prefix}{n}"), t)?;
    }
    c.push(format!("adam_step/{prefix}"), &Tensor::<f64>::from_vec(&[1], vec![opt.step as f64])?)
}

fn load_adam<P: ParamSet<f32>>(c: &Checkpoint, prefix: &str, opt: &mut AdamState<P>) -> Result<()> {
    c.load_params(&format!("adam_m/{prefix}"), &mut opt.m)?;
    c.load_params(&format!("adam_v/{prefix}"), &mut opt.v)?;
    let step = c
        .get(&format!("adam_step/{prefix}"))
        .ok_or_else(|| Error::Checkpoint("missing optimizer step".into()))?
        .to_tensor::<f64>()?;
    opt.step = step.data()[0] as u64;
    Ok(())
}

/// Rebuilds the generator stored in a checkpoint.
pub fn load_generator(c: &Checkpoint) -> Result<Generator<f32>> {
    if c.kind != ModelKind::Generator {
        return Err(Error::Checkpoint(format!("expected a generator checkpoint, found {}", c.kind.name())));
    }
    let run = RunConfig::parse(&c.config)?;
    let cfg = run.generator_config();
    let mut params = GeneratorParams::zeros(&cfg);
    c.load_params("", &mut params)?;
    Generator::new(cfg, params)
}

/// Rebuilds the discriminator stored in a checkpoint.
pub fn load_multiscale(c: &Checkpoint) -> Result<MultiScaleDiscriminator<f32>> {
    if c.kind != ModelKind::MultiScale {
        return Err(Error::Checkpoint(format!(
            "expected a multiscale discriminator checkpoint, found {}",
            c.kind.name()
        )));
    }
    let run = RunConfig::parse(&c.config)?;
    let configs = run.discriminator_configs(run.sample_rate)?;
    let mut params = MultiScaleParams {
        scales: configs.iter().map(DiscriminatorParams::zeros).collect(),
    };
    c.load_params("", &mut params)?;
    MultiScaleDiscriminator::from_params(configs, params)
}

/// Runs the generator offline over each clip and scores it against the
/// target.
pub fn validate_generator(
    generator: &Generator<f32>,
    suite: &MetricSuite,
    clips: &[ValidationClip],
) -> Result<MetricReport> {
    let mut out = Vec::with_capacity(clips.len());
    for c in clips {
        if c.input.len() != c.target.len() {
            return Err(Error::Data(format!("{}: input and target lengths differ", c.name)));
        }
        let y = generator.forward(&c.input)?;
        out.push(ClipMetrics {
            name: c.name.clone(),
            len: y.len(),
            values: suite.clip_f32(&y, &c.target)?,
        });
    }
    MetricReport::from_clips(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_rngs_differ_and_repeat() {
        use rand::Rng;
        let a: u64 = iteration_rng(1, 5).gen();
        let b: u64 = iteration_rng(1, 6).gen();
        let c: u64 = iteration_rng(1, 5).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn log_line_format() {
        let l = StepLosses {
            iteration: 3,
            loss_d: Some(2.0),
            loss_g: -0.5,
            skipped_g: false,
            skipped_d: false,
        };
        assert_eq!(l.log_line(None), "3 2.000000000e0 -5.000000000e-1");
        let s = StepLosses { loss_d: None, ..l };
        assert!(s.log_line(None).starts_with("3 - "));
    }
}
