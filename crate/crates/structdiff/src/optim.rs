//! Adam with global-norm gradient clipping, and the EMA parameter shadow
//! used at sampling time.

use ndarray::{Array1, Array2, Zip};

use crate::error::{Error, Result};
use crate::net::{DenoiserNet, Gradients};

#[derive(Debug, Clone)]
pub struct OptimizerState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl OptimizerState {
    pub fn new(net: &DenoiserNet, lr: f64, clip_norm: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {lr}")));
        }
        if !(clip_norm.is_finite() && clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!("clip norm {clip_norm}")));
        }
        Ok(Self {
            m_w: net.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: net.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
        })
    }

    /// Restores moments saved in a checkpoint.
    pub fn with_moments(
        mut self,
        m_w: Vec<Array2<f64>>,
        v_w: Vec<Array2<f64>>,
        m_b: Vec<Array1<f64>>,
        v_b: Vec<Array1<f64>>,
        step: u64,
    ) -> Result<Self> {
        let shapes_match = m_w.len() == self.m_w.len()
            && v_w.len() == self.v_w.len()
            && m_b.len() == self.m_b.len()
            && v_b.len() == self.v_b.len()
            && m_w.iter().zip(&self.m_w).all(|(a, b)| a.dim() == b.dim())
            && v_w.iter().zip(&self.v_w).all(|(a, b)| a.dim() == b.dim())
            && m_b.iter().zip(&self.m_b).all(|(a, b)| a.len() == b.len())
            && v_b.iter().zip(&self.v_b).all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(Error::ShapeMismatch("optimizer moment shapes".into()));
        }
        self.m_w = m_w;
        self.v_w = v_w;
        self.m_b = m_b;
        self.v_b = v_b;
        self.step = step;
        Ok(self)
    }

    pub fn moment_tensors(
        &self,
    ) -> (&[Array2<f64>], &[Array2<f64>], &[Array1<f64>], &[Array1<f64>]) {
        (&self.m_w, &self.v_w, &self.m_b, &self.v_b)
    }

    /// One Adam update: clip the global gradient norm to `clip_norm`, fold
    /// the clipped gradient into the moments, then apply the bias-corrected
    /// step. Non-finite gradients abort before any state changes.
    pub fn adam_step(&mut self, net: &mut DenoiserNet, mut grads: Gradients) -> Result<()> {
        if grads.weights.len() != self.m_w.len() || grads.biases.len() != self.m_b.len() {
            return Err(Error::ShapeMismatch("gradient layer count".into()));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let norm = grads.global_norm();
        if norm > self.clip_norm {
            grads.scale(self.clip_norm / norm);
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let lr = self.lr;

        let (weights, biases) = net.params_mut();
        for l in 0..weights.len() {
            Zip::from(&mut weights[l])
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            Zip::from(&mut biases[l])
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Exponential moving average of the parameters:
/// shadow <- decay * shadow + (1 - decay) * param.
#[derive(Debug, Clone)]
pub struct EmaState {
    shadow_w: Vec<Array2<f64>>,
    shadow_b: Vec<Array1<f64>>,
    pub decay: f64,
}

impl EmaState {
    /// Shadow starts as a copy of the current parameters.
    pub fn new(net: &DenoiserNet, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidConfig(format!(
                "EMA decay must be in [0, 1), got {decay}"
            )));
        }
        Ok(Self {
            shadow_w: net.weights().to_vec(),
            shadow_b: net.biases().to_vec(),
            decay,
        })
    }

    pub fn from_shadows(
        shadow_w: Vec<Array2<f64>>,
        shadow_b: Vec<Array1<f64>>,
        decay: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidConfig(format!(
                "EMA decay must be in [0, 1), got {decay}"
            )));
        }
        Ok(Self {
            shadow_w,
            shadow_b,
            decay,
        })
    }

    pub fn shadows(&self) -> (&[Array2<f64>], &[Array1<f64>]) {
        (&self.shadow_w, &self.shadow_b)
    }

    pub fn update(&mut self, net: &DenoiserNet) -> Result<()> {
        if net.weights().len() != self.shadow_w.len() {
            return Err(Error::ShapeMismatch("EMA layer count".into()));
        }
        let d = self.decay;
        for (s, p) in self.shadow_w.iter_mut().zip(net.weights()) {
            if s.dim() != p.dim() {
                return Err(Error::ShapeMismatch("EMA weight shape".into()));
            }
            Zip::from(s).and(p).for_each(|s, p| *s = d * *s + (1.0 - d) * p);
        }
        for (s, p) in self.shadow_b.iter_mut().zip(net.biases()) {
            if s.len() != p.len() {
                return Err(Error::ShapeMismatch("EMA bias shape".into()));
            }
            Zip::from(s).and(p).for_each(|s, p| *s = d * *s + (1.0 - d) * p);
        }
        Ok(())
    }

    /// A standalone net carrying the shadow parameters, for sampling.
    pub fn snapshot_net(&self, like: &DenoiserNet) -> Result<DenoiserNet> {
        DenoiserNet::from_parts(
            self.shadow_w.clone(),
            self.shadow_b.clone(),
            like.point_dim(),
            like.embed_dim(),
        )
    }
}
