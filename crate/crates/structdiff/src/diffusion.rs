//! Forward noising, the training loop, and the ancestral sampler.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetKind;
use crate::error::{Error, Result};
use crate::net::{DenoiserNet, EmbedTable};
use crate::optim::{EmaState, OptimizerState};
use crate::points::PointBatch;
use crate::regularizer::{
    draw_mmd_reference, total_loss, LossTerms, RegularizerKind, RegularizerSpec,
};
use crate::rng::substream;
use crate::schedule::{build_schedule, Schedule, ScheduleKind};

/// Noises `x0` rows to their per-row timestep:
/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
/// t = 0 is admitted and returns x0 unchanged (alpha_bar_0 = 1).
pub fn q_sample(
    x0: &Array2<f64>,
    t_batch: &[usize],
    eps: &Array2<f64>,
    s: &Schedule,
) -> Result<Array2<f64>> {
    if x0.dim() != eps.dim() {
        return Err(Error::ShapeMismatch(format!(
            "x0 {:?} vs eps {:?}",
            x0.dim(),
            eps.dim()
        )));
    }
    if t_batch.len() != x0.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} timesteps",
            x0.nrows(),
            t_batch.len()
        )));
    }
    let mut out = Array2::zeros(x0.dim());
    for (i, &t) in t_batch.iter().enumerate() {
        let ab = s.alpha_bar(t)?;
        let a = ab.sqrt();
        let b = (1.0 - ab).sqrt();
        for j in 0..x0.ncols() {
            out[[i, j]] = a * x0[[i, j]] + b * eps[[i, j]];
        }
    }
    Ok(out)
}

fn default_batch_size() -> usize {
    256
}
fn default_steps() -> usize {
    30000
}
fn default_lr() -> f64 {
    2e-4
}
fn default_ema_decay() -> f64 {
    0.9999
}
fn default_clip_norm() -> f64 {
    1.0
}
fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_embed_dim() -> usize {
    64
}

/// One training run. The dataset's own seed fixes the data pool; the master
/// `seed` drives every training-time random stream (init, batch indices,
/// timesteps, noise, dropout, per-step MMD references) through named
/// substreams, so toggling the regularizer leaves all other draws untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(dataset: DatasetKind, seed: u64) -> Self {
        Self {
            dataset,
            schedule: ScheduleKind::default(),
            regularizer: RegularizerSpec::default(),
            batch_size: default_batch_size(),
            steps: default_steps(),
            lr: default_lr(),
            ema_decay: default_ema_decay(),
            clip_norm: default_clip_norm(),
            dropout: 0.0,
            hidden: default_hidden(),
            embed_dim: default_embed_dim(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regularizer.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        // d = 2 everywhere here, but the bound is stated generally.
        let d = 2;
        if self.regularizer.kind.needs_covariance() && self.batch_size < d + 1 {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} too small for a covariance-based regularizer (need >= {})",
                self.batch_size,
                d + 1
            )));
        }
        if self.regularizer.kind == RegularizerKind::Mmd && self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "MMD regularizer needs batch_size >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Per-step objective terms. `penalty` is the lambda-weighted contribution
/// actually added to the objective, so a disabled regularizer logs zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub simple_loss: f64,
    pub penalty: f64,
    pub total: f64,
}

pub struct TrainOutput {
    pub net: DenoiserNet,
    pub ema: EmaState,
    pub optimizer: OptimizerState,
    pub log: Vec<LogRow>,
}

impl TrainOutput {
    /// "step,simple_loss,penalty,total" rows.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,simple_loss,penalty,total\n");
        for row in &self.log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.step, row.simple_loss, row.penalty, row.total
            ));
        }
        out
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let data = crate::dataset::generate(&cfg.dataset)?.into_array();
    let (n_data, d) = data.dim();
    let schedule = build_schedule(&cfg.schedule)?;
    let t_max = schedule.timesteps();
    let embeds = EmbedTable::new(t_max, cfg.embed_dim)?;

    let mut init_rng = substream(cfg.seed, "init");
    let mut batch_rng = substream(cfg.seed, "batch");
    let mut t_rng = substream(cfg.seed, "timestep");
    let mut noise_rng = substream(cfg.seed, "noise");
    let mut dropout_rng = substream(cfg.seed, "dropout");
    let mut mmd_rng = substream(cfg.seed, "mmd-step-reference");

    let mut net = DenoiserNet::new(d, cfg.embed_dim, &cfg.hidden, &mut init_rng)?;
    let mut opt = OptimizerState::new(&net, cfg.lr, cfg.clip_norm)?;
    let mut ema = EmaState::new(&net, cfg.ema_decay)?;

    let spec = cfg.regularizer;
    let lambda = spec.lambda;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut x0: Array2<f64> = Array2::zeros((cfg.batch_size, d));
    let mut t_batch = vec![0usize; cfg.batch_size];
    let mut eps: Array2<f64> = Array2::zeros((cfg.batch_size, d));

    for step in 1..=cfg.steps {
        for (i, mut row) in x0.rows_mut().into_iter().enumerate() {
            let idx = batch_rng.random_range(0..n_data);
            row.assign(&data.row(idx));
            t_batch[i] = t_rng.random_range(1..=t_max);
        }
        eps.mapv_inplace(|_| noise_rng.sample(StandardNormal));
        let x_t = q_sample(&x0, &t_batch, &eps, &schedule)?;

        let dropout_arg = if cfg.dropout > 0.0 {
            Some(&mut dropout_rng)
        } else {
            None
        };
        let (pred, cache) = net.forward_train(&x_t, &t_batch, &embeds, cfg.dropout, dropout_arg)?;

        let mmd_ref = if spec.kind == RegularizerKind::Mmd {
            let count = spec.mmd.reference_count.unwrap_or(cfg.batch_size);
            Some(draw_mmd_reference(count, d, &mut mmd_rng))
        } else {
            None
        };
        let loss = match total_loss(&eps, &pred, &spec, mmd_ref.as_ref()) {
            Ok(l) => l,
            // A degenerate prediction batch (notably the zero-initialized
            // output layer at step 1) has no usable covariance; the penalty
            // is skipped for that step and the simple term still drives the
            // update, after which predictions are non-degenerate.
            Err(Error::SingularCovariance(_)) => {
                let diff = &pred - &eps;
                let simple = diff.iter().map(|v| v * v).sum::<f64>() / cfg.batch_size as f64;
                LossTerms {
                    simple,
                    penalty_value: 0.0,
                    total: simple,
                    grad: diff * (2.0 / cfg.batch_size as f64),
                }
            }
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { step }),
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }

        let grads = net.backward(&cache, &loss.grad)?;
        opt.adam_step(&mut net, grads)
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { step },
                other => other,
            })?;
        if !net.all_finite() {
            return Err(Error::NonFinite(format!("parameters after step {step}")));
        }
        ema.update(&net)?;

        log.push(LogRow {
            step,
            simple_loss: loss.simple,
            penalty: lambda * loss.penalty_value,
            total: loss.total,
        });
    }

    Ok(TrainOutput {
        net,
        ema,
        optimizer: opt,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// sigma_t^2 = posterior variance beta-tilde (zero at t = 1).
    Posterior,
    /// sigma_t^2 = beta_t.
    Beta,
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::Posterior
    }
}

fn default_n_samples() -> usize {
    10000
}
fn default_use_ema() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_use_ema")]
    pub use_ema: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: default_n_samples(),
            sigma_mode: SigmaMode::Posterior,
            seed: 0,
            use_ema: true,
        }
    }
}

/// Ancestral reverse-diffusion sampling. Starts from x_T ~ N(0, I) drawn
/// from the config's "sampler" substream (initial batch first, then the
/// per-step noise for t = T..2, newest timestep first), and applies
/// x_{t-1} = (x_t - sampler_coef_t * eps_hat) / sqrt(alpha_t) + sigma_t * z
/// with z = 0 at t = 1.
pub fn sample(
    net: &DenoiserNet,
    ema: Option<&EmaState>,
    s: &Schedule,
    cfg: &SamplerConfig,
) -> Result<PointBatch> {
    if cfg.n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let sampler_net = if cfg.use_ema {
        match ema {
            Some(e) => e.snapshot_net(net)?,
            None => {
                return Err(Error::InvalidConfig(
                    "use_ema is set but no EMA state was provided".into(),
                ))
            }
        }
    } else {
        net.clone()
    };

    let d = sampler_net.point_dim();
    let t_max = s.timesteps();
    let embeds = EmbedTable::new(t_max, sampler_net.embed_dim())?;
    let mut rng = substream(cfg.seed, "sampler");

    let m = cfg.n_samples;
    let mut x: Array2<f64> = Array2::zeros((m, d));
    x.mapv_inplace(|_| rng.sample(StandardNormal));

    let mut t_batch = vec![0usize; m];
    let mut z: Array2<f64> = Array2::zeros((m, d));
    for t in (1..=t_max).rev() {
        t_batch.fill(t);
        let eps_hat = sampler_net.forward(&x, &t_batch, &embeds)?;
        let coef = s.sampler_coef(t)?;
        let inv_sqrt_alpha = 1.0 / s.alpha(t)?.sqrt();
        let sigma = match cfg.sigma_mode {
            SigmaMode::Posterior => s.posterior_var(t)?.sqrt(),
            SigmaMode::Beta => s.beta(t)?.sqrt(),
        };
        if t > 1 {
            z.mapv_inplace(|_| rng.sample(StandardNormal));
            ndarray::Zip::from(&mut x)
                .and(&eps_hat)
                .and(&z)
                .for_each(|x, &e, &zz| *x = (*x - coef * e) * inv_sqrt_alpha + sigma * zz);
        } else {
            ndarray::Zip::from(&mut x)
                .and(&eps_hat)
                .for_each(|x, &e| *x = (*x - coef * e) * inv_sqrt_alpha);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler state at t = {t}")));
        }
    }
    PointBatch::new(x)
}

/// Empirical mean/variance of the forward marginal at t over `draws` noised
/// samples, with x0 rows cycled from the pool. Used by closure tests.
pub fn forward_marginal_stats(
    pool: &Array2<f64>,
    t: usize,
    s: &Schedule,
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = pool.dim();
    let mut rng = substream(seed, "forward-marginal");
    let mut sums = vec![0.0; d];
    let mut sq_sums = vec![0.0; d];
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    for i in 0..draws {
        let row = pool.row(i % n);
        for j in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            let v = a * row[j] + b * eps;
            sums[j] += v;
            sq_sums[j] += v * v;
        }
    }
    let k = draws as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / k).collect();
    let vars: Vec<f64> = sq_sums
        .iter()
        .zip(&means)
        .map(|(sq, m)| sq / k - m * m)
        .collect();
    Ok((means, vars))
}

/// Writes the batch means/axes of `log` into sums useful for trend tests:
/// median simple loss over a step range.
pub fn median_simple_loss(log: &[LogRow], range: std::ops::Range<usize>) -> f64 {
    let mut vals: Vec<f64> = log[range].iter().map(|r| r.simple_loss).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if vals.len() % 2 == 1 {
        vals[vals.len() / 2]
    } else {
        0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
    }
}

/// Convenience wrapper: x0 rows as a PointBatch view for callers that work
/// in batch types.
pub fn q_sample_batch(
    x0: &PointBatch,
    t_batch: &[usize],
    eps: &PointBatch,
    s: &Schedule,
) -> Result<PointBatch> {
    PointBatch::new(q_sample(x0.as_array(), t_batch, eps.as_array(), s)?)
}
