//! Adversarial training at fixed resolution: losses, gradient penalty, Adam
//! and the alternating D/G loop.

use std::io::{BufRead, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self as ag, Var};
use crate::dataio::{batch_iter, BatchIter, ImageStore};
use crate::error::{Error, Result};
use crate::latent::{derive_seed, sample_bundles, PriorSpec};
use crate::model::{Checkpoint, Discriminator, Generator, ModelSpec, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nonsaturating,
    #[default]
    WganGp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub gp_weight: f32,
    pub batch_size: usize,
    pub total_steps: u64,
    pub d_steps_per_g_step: usize,
    pub optimizer: AdamConfig,
    /// Emit a checkpoint every this many generator steps; 0 = only at the end.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::WganGp,
            gp_weight: 10.0,
            batch_size: 16,
            total_steps: 10_000,
            d_steps_per_g_step: 1,
            optimizer: AdamConfig::default(),
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.d_steps_per_g_step == 0 {
            return bad("d_steps_per_g_step must be positive");
        }
        if !(self.gp_weight >= 0.0) {
            return bad("gp_weight must be >= 0");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer needs lr > 0, betas in [0, 1), eps > 0");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Discriminator loss. `gp_term` is only used by `WganGp`.
pub fn loss_d(kind: LossKind, real: &Var, fake: &Var, gp_term: Option<&Var>, gp_weight: f32) -> Var {
    match kind {
        // −log σ(r) = softplus(−r), −log(1 − σ(f)) = softplus(f)
        LossKind::Nonsaturating => ag::add(
            &ag::mean_all(&ag::softplus(&real.scale(-1.0))),
            &ag::mean_all(&ag::softplus(fake)),
        ),
        LossKind::WganGp => {
            let w = ag::sub(&ag::mean_all(fake), &ag::mean_all(real));
            match gp_term {
                Some(gp) => ag::add(&w, &gp.scale(gp_weight)),
                None => w,
            }
        }
    }
}

pub fn loss_g(kind: LossKind, fake: &Var) -> Var {
    match kind {
        LossKind::Nonsaturating => ag::mean_all(&ag::softplus(&fake.scale(-1.0))),
        LossKind::WganGp => ag::mean_all(fake).scale(-1.0),
    }
}

/// `mean((‖∇ₓ D(x̂)‖ − 1)²)` at `x̂ = ε·real + (1−ε)·fake`, `ε ~ U[0,1)` per
/// sample. The result stays differentiable w.r.t. the discriminator params.
pub fn gradient_penalty(critic: impl Fn(&Var) -> Var, real: &Tensor, fake: &Tensor, rng: &mut impl Rng) -> Var {
    let n = real.shape()[0];
    let per = real.len() / n;
    let mut mixed = Vec::with_capacity(real.len());
    for i in 0..n {
        let e: f32 = rng.random();
        let (r, f) = (
            &real.data()[i * per..(i + 1) * per],
            &fake.data()[i * per..(i + 1) * per],
        );
        mixed.extend(r.iter().zip(f).map(|(r, f)| e * r + (1.0 - e) * f));
    }
    let x_hat = Var::leaf(Tensor::new(real.shape().to_vec(), mixed));
    penalty_at(critic, &x_hat)
}

/// Gradient-norm penalty of `critic` at the leaf `x`.
pub fn penalty_at(critic: impl Fn(&Var) -> Var, x: &Var) -> Var {
    let scores = critic(x);
    let g = ag::grad(&ag::sum_all(&scores), &[x], true)
        .pop()
        .flatten()
        .unwrap_or_else(|| Var::constant(Tensor::zeros(x.shape())));
    // Tiny offset keeps the sqrt differentiable at a zero gradient.
    let norm = ag::powf(&ag::add_scalar(&ag::sum_per_sample(&g.mul(&g)), 1e-12), 0.5);
    ag::mean_all(&ag::powf(&ag::add_scalar(&norm, -1.0), 2.0))
}

// ---------------------------------------------------------------------------
// Optimizer

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; `grads[i]` matches the i-th parameter (None = no gradient).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Log

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub d_loss: f32,
    pub g_loss: f32,
    pub gp: Option<f32>,
    /// mean D(real) − mean D(fake)
    pub score_gap: f32,
    pub wall_clock_secs: f64,
}

/// Append-only JSON-lines log.
pub struct TrainLog<W: Write> {
    out: W,
}

impl<W: Write> TrainLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, rec: &TrainRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_log(r: impl BufRead) -> Result<Vec<TrainRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

// ---------------------------------------------------------------------------
// Trainer

const STREAM_D_LATENT: u64 = 1;
const STREAM_G_LATENT: u64 = 2;
const STREAM_GP: u64 = 3;
const STREAM_BATCH: u64 = 4;
const STREAM_INIT_G: u64 = 5;
const STREAM_INIT_D: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DStepStats {
    pub loss: f32,
    pub gp: Option<f32>,
    pub score_gap: f32,
}

/// Owns both networks, their optimizers and the seeded streams.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    batches: BatchIter,
    g_steps: u64,
    d_steps: u64,
}

fn grads_of(loss: &Var, leaves: &[Var]) -> Vec<Option<Tensor>> {
    let refs: Vec<&Var> = leaves.iter().collect();
    ag::grad(loss, &refs, false)
        .into_iter()
        .map(|g| g.map(|g| g.value().clone()))
        .collect()
}

fn finite(name: &str, v: f32) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} = {v}")))
    }
}

impl Trainer {
    pub fn new(spec: ModelSpec, prior: PriorSpec, config: TrainConfig, dataset_len: usize) -> Result<Self> {
        let generator = Generator::new(spec.clone(), prior, derive_seed(config.seed, STREAM_INIT_G))?;
        let discriminator = Discriminator::new(spec, derive_seed(config.seed, STREAM_INIT_D))?;
        Self::from_models(generator, discriminator, config, dataset_len, 0)
    }

    /// Continue from a checkpoint (optimizer moments restart from zero).
    pub fn resume(ckpt: Checkpoint, config: TrainConfig, dataset_len: usize) -> Result<Self> {
        Self::from_models(ckpt.generator, ckpt.discriminator, config, dataset_len, ckpt.step)
    }

    fn from_models(
        generator: Generator,
        discriminator: Discriminator,
        config: TrainConfig,
        dataset_len: usize,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if dataset_len == 0 {
            return Err(Error::EmptyDataset("training needs at least one image".into()));
        }
        let batches = batch_iter(
            dataset_len,
            config.batch_size.min(dataset_len),
            derive_seed(config.seed, STREAM_BATCH),
        )?;
        let d_steps = step * config.d_steps_per_g_step as u64;
        Ok(Self {
            opt_g: Adam::new(config.optimizer, &generator.params),
            opt_d: Adam::new(config.optimizer, &discriminator.params),
            config,
            generator,
            discriminator,
            batches,
            g_steps: step,
            d_steps,
        })
    }

    pub fn step(&self) -> u64 {
        self.g_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.g_steps,
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
        }
    }

    fn fake_batch(&self, stream: u64, index: u64, n: usize) -> Result<Vec<Var>> {
        let seed = derive_seed(derive_seed(self.config.seed, stream), index);
        let bundles = sample_bundles(&self.generator.prior, &self.generator.spec.layout, seed, n)?;
        self.generator.latent_vars(&bundles)
    }

    /// One discriminator update on the next real batch.
    pub fn d_step(&mut self, data: &ImageStore) -> Result<DStepStats> {
        let idx = self.batches.next().expect("batch stream is infinite");
        let real = data.batch(&idx);
        let n = idx.len();
        let fake = {
            let z = self.fake_batch(STREAM_D_LATENT, self.d_steps, n)?;
            let _ng = ag::no_grad();
            let gp = self.generator.params.bind(false);
            self.generator.forward(&gp, &z).value().clone()
        };
        let leaves = self.discriminator.params.bind(true);
        let disc = &self.discriminator;
        let critic = |x: &Var| disc.forward(&leaves, x);
        let s_real = critic(&Var::constant(real.clone()));
        let s_fake = critic(&Var::constant(fake.clone()));
        let gp = match self.config.loss {
            LossKind::WganGp if self.config.gp_weight > 0.0 => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.config.seed, STREAM_GP), self.d_steps));
                Some(gradient_penalty(critic, &real, &fake, &mut rng))
            }
            _ => None,
        };
        let loss = loss_d(self.config.loss, &s_real, &s_fake, gp.as_ref(), self.config.gp_weight);
        let mean = |v: &Var| v.value().data().iter().sum::<f32>() / n as f32;
        let stats = DStepStats {
            loss: finite("d_loss", loss.value().data()[0])?,
            gp: gp.as_ref().map(|g| g.value().data()[0]),
            score_gap: mean(&s_real) - mean(&s_fake),
        };
        let grads = grads_of(&loss, &leaves);
        drop(leaves);
        self.opt_d.step(&mut self.discriminator.params, &grads);
        self.d_steps += 1;
        Ok(stats)
    }

    /// One generator update.
    pub fn g_step(&mut self) -> Result<f32> {
        let n = self.config.batch_size;
        let z = self.fake_batch(STREAM_G_LATENT, self.g_steps, n)?;
        let leaves = self.generator.params.bind(true);
        let d_params = self.discriminator.params.bind(false);
        let fake = self.generator.forward(&leaves, &z);
        let scores = self.discriminator.forward(&d_params, &fake);
        let loss = loss_g(self.config.loss, &scores);
        let value = finite("g_loss", loss.value().data()[0])?;
        let grads = grads_of(&loss, &leaves);
        self.opt_g.step(&mut self.generator.params, &grads);
        self.g_steps += 1;
        Ok(value)
    }

    /// `d_steps_per_g_step` discriminator updates followed by one generator
    /// update.
    pub fn iteration(&mut self, data: &ImageStore) -> Result<TrainRecord> {
        let start = Instant::now();
        let mut d = None;
        for _ in 0..self.config.d_steps_per_g_step {
            d = Some(self.d_step(data)?);
        }
        let d = d.expect("at least one discriminator step");
        let g_loss = self.g_step()?;
        for (what, p) in [
            ("generator", &self.generator.params),
            ("discriminator", &self.discriminator.params),
        ] {
            if !p.tensors().all(Tensor::is_finite) {
                return Err(Error::NonFinite(format!(
                    "{what} parameters after step {}",
                    self.g_steps
                )));
            }
        }
        Ok(TrainRecord {
            step: self.g_steps,
            d_loss: d.loss,
            g_loss,
            gp: d.gp,
            score_gap: d.score_gap,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    }
}

pub enum TrainEvent<'a> {
    Record(&'a TrainRecord),
    Checkpoint(&'a Checkpoint),
    /// A non-finite value was hit; this is the state just before the failing step.
    Diverged(&'a Checkpoint),
}

/// Run `config.total_steps` iterations, reporting records and checkpoints
/// through `on_event`. Returns the final checkpoint.
pub fn train(
    data: &ImageStore,
    spec: ModelSpec,
    prior: PriorSpec,
    config: TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("training needs at least one image".into()));
    }
    if data.resolution() != spec.out_resolution || data.channels() != spec.rgb_channels {
        return Err(Error::Shape(format!(
            "dataset is {}ch {}px, model produces {}ch {}px",
            data.channels(),
            data.resolution(),
            spec.rgb_channels,
            spec.out_resolution
        )));
    }
    let total = config.total_steps;
    let every = config.checkpoint_every;
    let mut trainer = Trainer::new(spec, prior, config, data.len())?;
    while trainer.step() < total {
        let before = trainer.checkpoint();
        match trainer.iteration(data) {
            Ok(rec) => on_event(TrainEvent::Record(&rec))?,
            Err(e @ Error::NonFinite(_)) => {
                on_event(TrainEvent::Diverged(&before))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if every > 0 && trainer.step() % every == 0 && trainer.step() < total {
            on_event(TrainEvent::Checkpoint(&trainer.checkpoint()))?;
        }
    }
    let last = trainer.checkpoint();
    on_event(TrainEvent::Checkpoint(&last))?;
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic_store;
    use crate::latent::default_prior_spec;
    use crate::layout::{canonical_layout, LayoutKind};

    fn scalar(v: &Var) -> f32 {
        v.value().data()[0]
    }

    fn c(v: &[f32]) -> Var {
        Var::constant(Tensor::new(vec![v.len()], v.to_vec()))
    }

    #[test]
    fn nonsaturating_equilibrium() {
        let zero = c(&[0.0; 5]);
        let l = loss_d(LossKind::Nonsaturating, &zero, &zero, None, 10.0);
        assert!((scalar(&l) - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
        let g = loss_g(LossKind::Nonsaturating, &zero);
        assert!((scalar(&g) - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn wgan_same_scores_zero() {
        let s = c(&[0.3, -1.2, 4.0]);
        let gp = c(&[0.0]);
        assert_eq!(scalar(&loss_d(LossKind::WganGp, &s, &s, Some(&gp), 10.0)), 0.0);
        let gp = c(&[0.5]);
        assert!((scalar(&loss_d(LossKind::WganGp, &s, &s, Some(&gp), 10.0)) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn gp_zero_for_unit_linear_critic() {
        // D(x) = <w, x> with ‖w‖ = 1 has gradient norm 1 everywhere.
        let w = Var::leaf(Tensor::new(vec![4, 1], vec![0.5, -0.5, 0.5, 0.5]));
        let critic = |x: &Var| ag::reshape(&ag::matmul(x, &w), &[x.shape()[0]]);
        let real = Tensor::new(vec![3, 4], (0..12).map(|i| i as f32 * 0.1).collect());
        let fake = Tensor::new(vec![3, 4], (0..12).map(|i| -(i as f32)).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gp = gradient_penalty(critic, &real, &fake, &mut rng);
        assert!(scalar(&gp).abs() < 1e-6, "{}", scalar(&gp));
        // Scaling w by 2 gives (2 − 1)² = 1, and the penalty depends on w.
        let w2 = Var::leaf(Tensor::new(vec![4, 1], vec![1.0, -1.0, 1.0, 1.0]));
        let critic2 = |x: &Var| ag::reshape(&ag::matmul(x, &w2), &[x.shape()[0]]);
        let gp2 = gradient_penalty(critic2, &real, &fake, &mut rng);
        assert!((scalar(&gp2) - 1.0).abs() < 1e-5);
        let dw = ag::grad(&gp2, &[&w2], false)
            .pop()
            .flatten()
            .expect("penalty reaches w");
        // d/dw (‖w‖−1)² = 2(‖w‖−1) w/‖w‖ = w at ‖w‖ = 2
        for (g, w) in dw.value().data().iter().zip(w2.value().data()) {
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
    }

    /// Toy generator x = tanh(a·z + b), x2 = c·z + d; fixed critic.
    fn toy_loss(kind: LossKind, p: &[Var]) -> Var {
        let z = c(&[-1.0, 0.3, 0.8]);
        let ones = c(&[1.0; 3]);
        let x1 = ag::tanh(&ag::add(&p[0].mul(&z), &p[1].mul(&ones)));
        let x2 = ag::add(&p[2].mul(&z), &p[3].mul(&ones));
        let score = ag::add(&x1.scale(1.5), &ag::mul(&x2, &x1).scale(-0.7));
        loss_g(kind, &score)
    }

    #[test]
    fn loss_g_gradient_matches_finite_differences() {
        for kind in [LossKind::Nonsaturating, LossKind::WganGp] {
            let theta = [0.4f64, -0.2, 0.9, 0.1];
            let bind = |t: &[f64]| -> Vec<Var> { t.iter().map(|&v| Var::leaf(Tensor::full(&[3], v as f32))).collect() };
            // Each scalar parameter is broadcast over the 3 samples via a
            // constant-filled vector; its gradient is the sum of entries.
            let p = bind(&theta);
            let l = toy_loss(kind, &p);
            let refs: Vec<&Var> = p.iter().collect();
            let g: Vec<f64> = ag::grad(&l, &refs, false)
                .into_iter()
                .map(|g| g.unwrap().value().data().iter().map(|&v| v as f64).sum())
                .collect();
            let h = 1e-2;
            for i in 0..4 {
                let mut up = theta;
                let mut dn = theta;
                up[i] += h;
                dn[i] -= h;
                let f = |t: &[f64]| scalar(&toy_loss(kind, &bind(t))) as f64;
                // Richardson-extrapolated central difference
                let d1 = (f(&up) - f(&dn)) / (2.0 * h);
                let mut up2 = theta;
                let mut dn2 = theta;
                up2[i] += h / 2.0;
                dn2[i] -= h / 2.0;
                let d2 = (f(&up2) - f(&dn2)) / h;
                let fd = (4.0 * d2 - d1) / 3.0;
                let rel = (g[i] - fd).abs() / fd.abs().max(1e-3);
                assert!(
                    rel < 1e-3,
                    "{kind:?} param {i}: analytic {} vs fd {fd} (rel {rel})",
                    g[i]
                );
            }
        }
    }

    fn tiny() -> (ModelSpec, PriorSpec) {
        let layout = canonical_layout(LayoutKind::FaceSwap);
        let spec = ModelSpec::new(layout.clone(), 8, 16).with_channel_halving(4);
        (spec, default_prior_spec(&layout, 1))
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            total_steps: 3,
            checkpoint_every: 0,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn alternation_touches_only_the_updated_network() {
        let (spec, prior) = tiny();
        let data = synthetic_store(8, 16, 0);
        let mut t = Trainer::new(spec, prior, small_config(1), data.len()).unwrap();
        let (g0, d0) = (t.generator.params.fingerprint(), t.discriminator.params.fingerprint());
        t.d_step(&data).unwrap();
        let (g1, d1) = (t.generator.params.fingerprint(), t.discriminator.params.fingerprint());
        assert_eq!(g0, g1);
        assert_ne!(d0, d1);
        t.g_step().unwrap();
        let (g2, d2) = (t.generator.params.fingerprint(), t.discriminator.params.fingerprint());
        assert_ne!(g1, g2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn zero_steps_returns_init_and_empty_log() {
        let (spec, prior) = tiny();
        let data = synthetic_store(4, 16, 0);
        let cfg = TrainConfig {
            total_steps: 0,
            ..small_config(3)
        };
        let mut records = 0;
        let ck = train(&data, spec.clone(), prior.clone(), cfg.clone(), |e| {
            if let TrainEvent::Record(_) = e {
                records += 1;
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(records, 0);
        assert_eq!(ck.step, 0);
        let init = Trainer::new(spec, prior, cfg, 4).unwrap().checkpoint();
        assert_eq!(ck, init);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let (spec, prior) = tiny();
        let data = synthetic_store(8, 16, 0);
        for loss in [LossKind::WganGp, LossKind::Nonsaturating] {
            let cfg = TrainConfig {
                loss,
                ..small_config(7)
            };
            let run = || train(&data, spec.clone(), prior.clone(), cfg.clone(), |_| Ok(())).unwrap();
            let (a, b) = (run(), run());
            assert_eq!(a.to_bytes(), b.to_bytes());
            assert_eq!(a.step, 3);
        }
    }

    #[test]
    fn empty_or_mismatched_dataset_rejected() {
        let (spec, prior) = tiny();
        let empty = ImageStore::new(16, 3, vec![]).unwrap();
        assert!(matches!(
            train(&empty, spec.clone(), prior.clone(), small_config(0), |_| Ok(())),
            Err(Error::EmptyDataset(_))
        ));
        let wrong = synthetic_store(4, 8, 0);
        assert!(train(&wrong, spec, prior, small_config(0), |_| Ok(())).is_err());
    }

    #[test]
    fn divergence_reports_diagnostic_checkpoint() {
        let (spec, prior) = tiny();
        let data = synthetic_store(4, 16, 0);
        let cfg = TrainConfig {
            optimizer: AdamConfig {
                lr: f32::MAX,
                ..AdamConfig::default()
            },
            total_steps: 5,
            ..small_config(0)
        };
        let mut diag = None;
        let res = train(&data, spec, prior, cfg, |e| {
            if let TrainEvent::Diverged(c) = e {
                diag = Some(c.step);
            }
            Ok(())
        });
        assert!(matches!(res, Err(Error::NonFinite(_))), "{res:?}");
        assert!(diag.is_some());
    }

    #[test]
    fn config_toml_rejects_unknown_keys() {
        let cfg: TrainConfig =
            toml::from_str("loss = \"nonsaturating\"\nbatch_size = 8\n[optimizer]\nlr = 0.001\n").unwrap();
        assert_eq!(cfg.loss, LossKind::Nonsaturating);
        assert_eq!(cfg.optimizer.beta2, 0.99);
        assert!(toml::from_str::<TrainConfig>("bogus = 1\n").is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_round_trip() {
        let rec = TrainRecord {
            step: 1,
            d_loss: 0.5,
            g_loss: -0.25,
            gp: Some(0.1),
            score_gap: 0.3,
            wall_clock_secs: 0.01,
        };
        let mut buf = Vec::new();
        let mut log = TrainLog::new(&mut buf);
        log.append(&rec).unwrap();
        log.append(&rec).unwrap();
        assert_eq!(read_log(buf.as_slice()).unwrap(), vec![rec.clone(), rec]);
    }
}
