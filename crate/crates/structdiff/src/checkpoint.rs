//! Binary checkpoint format.
//!
//! Layout, all little-endian:
//!   magic "SDF1"
//!   u32 layer count L
//!   L x (u32 fan_in, u32 fan_out)
//!   f64 parameters in declaration order (per layer: W row-major, then b)
//!   f64 EMA shadows, same order
//!   f64 Adam first moments, same order, then second moments, same order
//!   u64 optimizer step counter
//!
//! The time-embedding width is recoverable as fan_in(first) - fan_out(last),
//! so no separate header field exists for it.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::net::DenoiserNet;
use crate::optim::{EmaState, OptimizerState};

const MAGIC: &[u8; 4] = b"SDF1";

pub fn save_checkpoint(
    path: &Path,
    net: &DenoiserNet,
    ema: &EmaState,
    opt: &OptimizerState,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let layers = net.layer_count();
    buf.extend_from_slice(&(layers as u32).to_le_bytes());
    for w in net.weights() {
        buf.extend_from_slice(&(w.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(w.ncols() as u32).to_le_bytes());
    }

    let push_layer_params = |buf: &mut Vec<u8>, ws: &[Array2<f64>], bs: &[Array1<f64>]| {
        for l in 0..ws.len() {
            for v in ws[l].iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in bs[l].iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    };

    push_layer_params(&mut buf, net.weights(), net.biases());
    let (sw, sb) = ema.shadows();
    push_layer_params(&mut buf, sw, sb);
    let (m_w, v_w, m_b, v_b) = opt.moment_tensors();
    push_layer_params(&mut buf, m_w, m_b);
    push_layer_params(&mut buf, v_w, v_b);
    buf.extend_from_slice(&opt.step.to_le_bytes());

    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Everything a checkpoint holds. Hyperparameters (learning rate, decay,
/// clip norm) are not stored; callers re-supply them from config when
/// resuming optimization.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: DenoiserNet,
    ema_w: Vec<Array2<f64>>,
    ema_b: Vec<Array1<f64>>,
    adam_m_w: Vec<Array2<f64>>,
    adam_v_w: Vec<Array2<f64>>,
    adam_m_b: Vec<Array1<f64>>,
    adam_v_b: Vec<Array1<f64>>,
    pub step: u64,
}

impl Checkpoint {
    /// Net carrying the EMA shadow parameters.
    pub fn ema_net(&self) -> Result<DenoiserNet> {
        DenoiserNet::from_parts(
            self.ema_w.clone(),
            self.ema_b.clone(),
            self.net.point_dim(),
            self.net.embed_dim(),
        )
    }

    pub fn ema_state(&self, decay: f64) -> Result<EmaState> {
        EmaState::from_shadows(self.ema_w.clone(), self.ema_b.clone(), decay)
    }

    pub fn optimizer(&self, lr: f64, clip_norm: f64) -> Result<OptimizerState> {
        OptimizerState::new(&self.net, lr, clip_norm)?.with_moments(
            self.adam_m_w.clone(),
            self.adam_v_w.clone(),
            self.adam_m_b.clone(),
            self.adam_v_b.clone(),
            self.step,
        )
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::BadCheckpoint {
            path: self.path.to_string(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.bad(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, len: usize) -> Result<Vec<f64>> {
        let bytes = self.take(len * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pstr = path.display().to_string();
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
        path: &pstr,
    };

    if r.take(4)? != MAGIC {
        return Err(r.bad("bad magic, not a checkpoint file"));
    }
    let layers = r.u32()? as usize;
    if layers == 0 || layers > 1024 {
        return Err(r.bad(format!("implausible layer count {layers}")));
    }
    let mut dims = Vec::with_capacity(layers);
    for _ in 0..layers {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        if fan_in == 0 || fan_out == 0 {
            return Err(r.bad("zero layer dimension"));
        }
        dims.push((fan_in, fan_out));
    }
    let point_dim = dims[layers - 1].1;
    if dims[0].0 <= point_dim {
        return Err(r.bad("first fan-in must exceed output dim (no room for time embedding)"));
    }
    let embed_dim = dims[0].0 - point_dim;
    if embed_dim % 2 != 0 {
        return Err(r.bad(format!("derived embedding width {embed_dim} is odd")));
    }

    let read_set = |r: &mut Reader| -> Result<(Vec<Array2<f64>>, Vec<Array1<f64>>)> {
        let mut ws = Vec::with_capacity(layers);
        let mut bs = Vec::with_capacity(layers);
        for &(fan_in, fan_out) in &dims {
            let w = r.f64_vec(fan_in * fan_out)?;
            let w = Array2::from_shape_vec((fan_in, fan_out), w)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            ws.push(w);
            bs.push(Array1::from_vec(r.f64_vec(fan_out)?));
        }
        Ok((ws, bs))
    };

    let (w, b) = read_set(&mut r)?;
    let (ema_w, ema_b) = read_set(&mut r)?;
    let (adam_m_w, adam_m_b) = read_set(&mut r)?;
    let (adam_v_w, adam_v_b) = read_set(&mut r)?;
    let step = r.u64()?;
    if r.pos != bytes.len() {
        return Err(r.bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let net = DenoiserNet::from_parts(w, b, point_dim, embed_dim)?;
    Ok(Checkpoint {
        net,
        ema_w,
        ema_b,
        adam_m_w,
        adam_v_w,
        adam_m_b,
        adam_v_b,
        step,
    })
}
