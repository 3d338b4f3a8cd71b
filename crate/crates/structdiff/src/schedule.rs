//! Noise schedules for the forward diffusion process.
//!
//! A schedule fixes the per-step variances `beta_t` for `t = 1..=T` and every
//! quantity derived from them. Timesteps are 1-based throughout; the product
//! `alpha_bar` is stored with an explicit leading entry `alpha_bar[0] = 1` so
//! that posterior coefficients at `t = 1` need no special casing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of the beta sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    /// Betas linearly spaced from `beta_start` to `beta_end`.
    Linear,
    /// Betas derived from a squared-cosine alpha_bar curve (offset 0.008);
    /// ignores `beta_start` / `beta_end`.
    Cosine,
    /// Square roots of the betas linearly spaced, then squared.
    Quadratic,
    /// Betas follow a logistic ramp between the endpoints over inputs
    /// linearly spaced in [-6, 6].
    Sigmoid,
}

impl ScheduleFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Cosine => "cosine",
            ScheduleFamily::Quadratic => "quadratic",
            ScheduleFamily::Sigmoid => "sigmoid",
        }
    }
}

fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}
fn default_timesteps() -> usize {
    1000
}
fn default_family() -> ScheduleFamily {
    ScheduleFamily::Linear
}

/// Schedule identity: family, endpoints, and step count. Every field has a
/// config-file default, so `{"schedule": "cosine"}` is a complete spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleKind {
    #[serde(rename = "schedule", default = "default_family")]
    pub family: ScheduleFamily,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(rename = "T", default = "default_timesteps")]
    pub timesteps: usize,
}

impl Default for ScheduleKind {
    fn default() -> Self {
        Self {
            family: ScheduleFamily::Linear,
            beta_start: 1e-4,
            beta_end: 0.02,
            timesteps: 1000,
        }
    }
}

/// A fully materialized schedule. All vectors of length T are indexed by
/// `t - 1`; `alpha_bars` has length T + 1 and is indexed by `t` directly.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
    mean_coef_x0: Vec<f64>,
    mean_coef_xt: Vec<f64>,
    sampler_coef: Vec<f64>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cosine_alpha_bar(t: f64, timesteps: f64) -> f64 {
    const OFFSET: f64 = 0.008;
    let f = |u: f64| {
        let arg = (u / timesteps + OFFSET) / (1.0 + OFFSET) * std::f64::consts::FRAC_PI_2;
        arg.cos().powi(2)
    };
    f(t) / f(0.0)
}

/// Builds the full schedule for `kind`.
///
/// Endpoint validation applies to every family even though the cosine curve
/// does not consume the endpoints; a kind is either valid or not regardless
/// of family.
pub fn build_schedule(kind: &ScheduleKind) -> Result<Schedule> {
    let t_max = kind.timesteps;
    if t_max == 0 {
        return Err(Error::InvalidSchedule("T must be at least 1".into()));
    }
    if !(kind.beta_start.is_finite() && kind.beta_end.is_finite()) {
        return Err(Error::InvalidSchedule("beta endpoints must be finite".into()));
    }
    if !(0.0 < kind.beta_start && kind.beta_start < kind.beta_end && kind.beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start < beta_end < 1, got {} and {}",
            kind.beta_start, kind.beta_end
        )));
    }

    let betas: Vec<f64> = match kind.family {
        ScheduleFamily::Linear => linspace(kind.beta_start, kind.beta_end, t_max),
        ScheduleFamily::Quadratic => linspace(kind.beta_start.sqrt(), kind.beta_end.sqrt(), t_max)
            .into_iter()
            .map(|r| r * r)
            .collect(),
        ScheduleFamily::Sigmoid => linspace(-6.0, 6.0, t_max)
            .into_iter()
            .map(|u| kind.beta_start + sigmoid(u) * (kind.beta_end - kind.beta_start))
            .collect(),
        ScheduleFamily::Cosine => {
            // beta_t = 1 - abar(t)/abar(t-1), clipped; every derived array is
            // then recomputed from the clipped betas so the stored alpha_bars
            // remain the exact running product of the stored alphas.
            let tf = t_max as f64;
            let mut prev = cosine_alpha_bar(0.0, tf);
            let mut out = Vec::with_capacity(t_max);
            for t in 1..=t_max {
                let cur = cosine_alpha_bar(t as f64, tf);
                out.push((1.0 - cur / prev).clamp(1e-8, 0.999));
                prev = cur;
            }
            out
        }
    };

    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_max + 1);
    alpha_bars.push(1.0);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }

    let mut posterior_vars = Vec::with_capacity(t_max);
    let mut mean_coef_x0 = Vec::with_capacity(t_max);
    let mut mean_coef_xt = Vec::with_capacity(t_max);
    let mut sampler_coef = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let beta = betas[t - 1];
        let alpha = alphas[t - 1];
        let ab_prev = alpha_bars[t - 1];
        let ab = alpha_bars[t];
        let one_minus_ab = 1.0 - ab;
        posterior_vars.push((1.0 - ab_prev) / one_minus_ab * beta);
        mean_coef_x0.push(ab_prev.sqrt() * beta / one_minus_ab);
        mean_coef_xt.push(alpha.sqrt() * (1.0 - ab_prev) / one_minus_ab);
        sampler_coef.push((1.0 - alpha) / one_minus_ab.sqrt());
    }

    Ok(Schedule {
        kind: *kind,
        betas,
        alphas,
        alpha_bars,
        posterior_vars,
        mean_coef_x0,
        mean_coef_xt,
        sampler_coef,
    })
}

impl Schedule {
    pub fn timesteps(&self) -> usize {
        self.kind.timesteps
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.kind.timesteps {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.kind.timesteps,
            });
        }
        Ok(())
    }

    /// beta_t, t in 1..=T.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    /// alpha_t = 1 - beta_t.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alphas[t - 1])
    }

    /// Running product alpha_bar_t; defined for t in 0..=T with
    /// alpha_bar_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t > self.kind.timesteps {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.kind.timesteps,
            });
        }
        Ok(self.alpha_bars[t])
    }

    /// Posterior variance of x_{t-1} given (x_t, x_0); zero at t = 1.
    pub fn posterior_var(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.posterior_vars[t - 1])
    }

    /// Coefficient on x_0 in the posterior mean.
    pub fn mean_coef_x0(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.mean_coef_x0[t - 1])
    }

    /// Coefficient on x_t in the posterior mean.
    pub fn mean_coef_xt(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.mean_coef_xt[t - 1])
    }

    /// Coefficient on the predicted noise inside the reverse-step mean:
    /// (1 - alpha_t) / sqrt(1 - alpha_bar_t).
    pub fn sampler_coef(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.sampler_coef[t - 1])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}
