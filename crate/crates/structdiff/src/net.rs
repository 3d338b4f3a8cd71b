//! The denoiser: an MLP over [point, time-embedding] inputs with SiLU hidden
//! activations, an identity output layer, and exact manual backpropagation.
//!
//! Forward passes hand back an opaque cache; `backward` consumes it together
//! with an upstream output gradient. A version counter ties caches to the
//! exact parameter state that produced them, so a cache from before any
//! parameter update is rejected instead of silently yielding wrong gradients.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sinusoidal embedding of a single timestep: interleaved
/// (sin(t*w_k), cos(t*w_k)) pairs with w_k = 10000^(-2k/E).
pub fn time_embed(t: usize, t_max: usize, embed_dim: usize) -> Result<Array1<f64>> {
    if embed_dim == 0 || embed_dim % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "time embedding size must be even and positive, got {embed_dim}"
        )));
    }
    if t < 1 || t > t_max {
        return Err(Error::TimestepOutOfRange { t, max: t_max });
    }
    let mut out = Array1::zeros(embed_dim);
    let tf = t as f64;
    for k in 0..embed_dim / 2 {
        let omega = 10000f64.powf(-2.0 * k as f64 / embed_dim as f64);
        out[2 * k] = (tf * omega).sin();
        out[2 * k + 1] = (tf * omega).cos();
    }
    Ok(out)
}

/// All timestep embeddings precomputed; row lookup replaces per-row sin/cos
/// in the hot loops.
#[derive(Debug, Clone)]
pub struct EmbedTable {
    table: Array2<f64>,
    t_max: usize,
}

impl EmbedTable {
    pub fn new(t_max: usize, embed_dim: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be at least 1".into()));
        }
        let mut table = Array2::zeros((t_max + 1, embed_dim));
        for t in 1..=t_max {
            table.row_mut(t).assign(&time_embed(t, t_max, embed_dim)?);
        }
        Ok(Self { table, t_max })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn embed_dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn row(&self, t: usize) -> Result<ArrayView1<'_, f64>> {
        if t < 1 || t > self.t_max {
            return Err(Error::TimestepOutOfRange { t, max: self.t_max });
        }
        Ok(self.table.row(t))
    }
}

/// Per-layer parameter gradients, shaped exactly like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenoiserNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for w in &self.weights {
            sq += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            sq += b.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * s);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Activations retained by a training forward pass for the backward sweep.
#[derive(Debug)]
pub struct ForwardCache {
    // Input to each weight layer, in order (layer_inputs[0] is the assembled
    // [x | embed] matrix).
    layer_inputs: Vec<Array2<f64>>,
    // Pre-activations and their sigmoids for each hidden layer.
    pre_acts: Vec<Array2<f64>>,
    sigmoids: Vec<Array2<f64>>,
    // Inverted-dropout multipliers (already scaled by 1/(1-p)), if active.
    drop_masks: Vec<Option<Array2<f64>>>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct DenoiserNet {
    weights: Vec<Array2<f64>>, // (fan_in, fan_out) each
    biases: Vec<Array1<f64>>,
    point_dim: usize,
    embed_dim: usize,
    version: u64,
}

impl DenoiserNet {
    /// Kaiming-uniform fan-in init for hidden layers, zero biases, and a
    /// zero output layer so the initial noise prediction is identically 0.
    pub fn new(
        point_dim: usize,
        embed_dim: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if point_dim == 0 {
            return Err(Error::InvalidConfig("point_dim must be positive".into()));
        }
        if embed_dim == 0 || embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "time embedding size must be even and positive, got {embed_dim}"
            )));
        }
        if hidden.iter().any(|w| *w == 0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(point_dim + embed_dim);
        widths.extend_from_slice(hidden);
        widths.push(point_dim);

        let layers = widths.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let mut w = Array2::zeros((fan_in, fan_out));
            if l + 1 < layers {
                let bound = (6.0 / fan_in as f64).sqrt();
                w.mapv_inplace(|_| rng.random_range(-bound..bound));
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            weights,
            biases,
            point_dim,
            embed_dim,
            version: 0,
        })
    }

    /// Rebuilds a net from explicit parameter tensors (checkpoint load, EMA
    /// snapshots). Shapes must chain and match the declared dims.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        point_dim: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::ShapeMismatch(
                "weights/biases layer counts differ or are empty".into(),
            ));
        }
        if weights[0].nrows() != point_dim + embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "first layer fan-in {} != point_dim {} + embed_dim {}",
                weights[0].nrows(),
                point_dim,
                embed_dim
            )));
        }
        if weights.last().unwrap().ncols() != point_dim {
            return Err(Error::ShapeMismatch(format!(
                "last layer fan-out {} != point_dim {}",
                weights.last().unwrap().ncols(),
                point_dim
            )));
        }
        for l in 0..weights.len() {
            if biases[l].len() != weights[l].ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} bias length {} != fan-out {}",
                    biases[l].len(),
                    weights[l].ncols()
                )));
            }
            if l + 1 < weights.len() && weights[l].ncols() != weights[l + 1].nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} fan-out {} != layer {} fan-in {}",
                    weights[l].ncols(),
                    l + 1,
                    weights[l + 1].nrows()
                )));
            }
        }
        Ok(Self {
            weights,
            biases,
            point_dim,
            embed_dim,
            version: 0,
        })
    }

    pub fn point_dim(&self) -> usize {
        self.point_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Widths [d+E, hidden..., d].
    pub fn widths(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.weights.iter().map(|w| w.nrows()).collect();
        v.push(self.point_dim);
        v
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to all parameter tensors; invalidates outstanding
    /// forward caches.
    pub fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        self.version += 1;
        (&mut self.weights, &mut self.biases)
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Adds `delta` to the parameter at flat index `idx` (weights first, in
    /// layer order row-major, then biases). Used by finite-difference tests.
    pub fn nudge_param(&mut self, idx: usize, delta: f64) -> Result<()> {
        self.version += 1;
        let mut offset = idx;
        for w in &mut self.weights {
            if offset < w.len() {
                let v = w.as_slice_mut().expect("weights are contiguous");
                v[offset] += delta;
                return Ok(());
            }
            offset -= w.len();
        }
        for b in &mut self.biases {
            if offset < b.len() {
                b[offset] += delta;
                return Ok(());
            }
            offset -= b.len();
        }
        Err(Error::ShapeMismatch(format!(
            "parameter index {idx} out of range {}",
            self.param_count()
        )))
    }

    /// Reads the gradient entry matching [`nudge_param`](Self::nudge_param)'s
    /// flat indexing.
    pub fn grad_at(grads: &Gradients, idx: usize) -> Result<f64> {
        let mut offset = idx;
        for w in &grads.weights {
            if offset < w.len() {
                return Ok(w.as_slice().expect("contiguous")[offset]);
            }
            offset -= w.len();
        }
        for b in &grads.biases {
            if offset < b.len() {
                return Ok(b[offset]);
            }
            offset -= b.len();
        }
        Err(Error::ShapeMismatch(format!("gradient index {idx} out of range")))
    }

    fn assemble_input(&self, x: &Array2<f64>, t_batch: &[usize], embeds: &EmbedTable) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        if d != self.point_dim {
            return Err(Error::ShapeMismatch(format!(
                "input dim {d} != net point_dim {}",
                self.point_dim
            )));
        }
        if t_batch.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} rows but {} timesteps",
                t_batch.len()
            )));
        }
        if embeds.embed_dim() != self.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "embed table dim {} != net embed_dim {}",
                embeds.embed_dim(),
                self.embed_dim
            )));
        }
        let mut input = Array2::zeros((n, d + self.embed_dim));
        for (i, (row, t)) in x.rows().into_iter().zip(t_batch).enumerate() {
            let mut dst = input.row_mut(i);
            dst.slice_mut(ndarray::s![..d]).assign(&row);
            dst.slice_mut(ndarray::s![d..]).assign(&embeds.row(*t)?);
        }
        Ok(input)
    }

    fn run_layers(&self, input: Array2<f64>, mut cache: Option<&mut ForwardCache>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut act = input;
        for l in 0..last {
            if let Some(c) = cache.as_deref_mut() {
                c.layer_inputs.push(act.clone());
            }
            let mut z = act.dot(&self.weights[l]);
            z += &self.biases[l];
            let sig = z.mapv(|v| 1.0 / (1.0 + (-v).exp()));
            act = &z * &sig;
            if let Some(c) = cache.as_deref_mut() {
                c.pre_acts.push(z);
                c.sigmoids.push(sig);
                c.drop_masks.push(None);
            }
        }
        if let Some(c) = cache.as_deref_mut() {
            c.layer_inputs.push(act.clone());
        }
        let mut out = act.dot(&self.weights[last]);
        out += &self.biases[last];
        out
    }

    /// Inference pass: predicted noise for each row of `x` at its timestep.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        t_batch: &[usize],
        embeds: &EmbedTable,
    ) -> Result<Array2<f64>> {
        let input = self.assemble_input(x, t_batch, embeds)?;
        Ok(self.run_layers(input, None))
    }

    /// Training pass: prediction plus the cache required by `backward`.
    /// `dropout` > 0 applies inverted dropout to hidden activations, with
    /// masks drawn from `rng` and retained for the backward sweep.
    pub fn forward_train(
        &self,
        x: &Array2<f64>,
        t_batch: &[usize],
        embeds: &EmbedTable,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {dropout}"
            )));
        }
        let mut cache = ForwardCache {
            layer_inputs: Vec::with_capacity(self.weights.len()),
            pre_acts: Vec::with_capacity(self.weights.len() - 1),
            sigmoids: Vec::with_capacity(self.weights.len() - 1),
            drop_masks: Vec::with_capacity(self.weights.len() - 1),
            version: self.version,
        };
        let input = self.assemble_input(x, t_batch, embeds)?;

        if dropout == 0.0 {
            let out = self.run_layers(input, Some(&mut cache));
            return Ok((out, cache));
        }
        let rng = rng.ok_or_else(|| {
            Error::InvalidConfig("dropout > 0 requires a mask generator".into())
        })?;

        let keep = 1.0 - dropout;
        let last = self.weights.len() - 1;
        let mut act = input;
        for l in 0..last {
            cache.layer_inputs.push(act.clone());
            let mut z = act.dot(&self.weights[l]);
            z += &self.biases[l];
            let sig = z.mapv(|v| 1.0 / (1.0 + (-v).exp()));
            act = &z * &sig;
            let mask = Array2::from_shape_simple_fn(act.dim(), || {
                if rng.random_range(0.0..1.0) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            act *= &mask;
            cache.pre_acts.push(z);
            cache.sigmoids.push(sig);
            cache.drop_masks.push(Some(mask));
        }
        cache.layer_inputs.push(act.clone());
        let mut out = act.dot(&self.weights[last]);
        out += &self.biases[last];
        Ok((out, cache))
    }

    /// Exact parameter gradients for upstream gradient `d_out` (shape N x d),
    /// using the cached activations. Fails if parameters changed since the
    /// forward pass.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let last = self.weights.len() - 1;
        let n = cache.layer_inputs[0].nrows();
        if d_out.dim() != (n, self.point_dim) {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} != ({n}, {})",
                d_out.dim(),
                self.point_dim
            )));
        }

        let mut grads = Gradients {
            weights: Vec::with_capacity(last + 1),
            biases: Vec::with_capacity(last + 1),
        };
        // Filled back-to-front, reversed at the end.
        let mut g = d_out.clone();
        for l in (0..=last).rev() {
            grads.weights.push(cache.layer_inputs[l].t().dot(&g));
            grads.biases.push(g.sum_axis(Axis(0)));
            if l > 0 {
                let mut upstream = g.dot(&self.weights[l].t());
                if let Some(mask) = &cache.drop_masks[l - 1] {
                    upstream *= mask;
                }
                // d/dz [z * sigmoid(z)] = sigmoid(z) * (1 + z * (1 - sigmoid(z)))
                let sig = &cache.sigmoids[l - 1];
                let z = &cache.pre_acts[l - 1];
                let deriv = sig * &(z * &(1.0 - sig) + 1.0);
                g = upstream * &deriv;
            }
        }
        grads.weights.reverse();
        grads.biases.reverse();
        Ok(grads)
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
