//! Small parameterized building blocks shared by the encoder and decoder.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{conv_fan_in, trunc_normal, BoundParams, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const LAYERNORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Position-wise linear map; weight layout `[in_dim, out_dim]`.
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), trunc_normal(&[in_dim, out_dim], INIT_STD, rng))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        match self.b {
            Some(b) => g.add(y, p.var(b)),
            None => Ok(y),
        }
    }
}

/// Layer normalization parameters (gamma initialized to one, beta to zero).
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn init<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        g.layernorm(x, p.var(self.gamma), p.var(self.beta), T::from_f64(LAYERNORM_EPS))
    }
}

/// Convolution layer with fan-in scaled uniform weight init and zero bias.
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            conv_fan_in(&[out_ch, in_ch / groups, kernel, kernel], rng),
        )?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_ch]))?;
        Ok(Conv2d { w, b, stride, pad, groups })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.stride, self.pad, self.groups)
    }
}

/// `[B, C, H, W]` -> `[B, H*W, C]` token view.
pub fn to_tokens<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    g.permute(flat, &[0, 2, 1])
}

/// `[B, N, C]` tokens back to `[B, C, H, W]`; N must equal `h * w`.
pub fn to_spatial<T: Real>(g: &mut Graph<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let chw = g.permute(x, &[0, 2, 1])?;
    g.reshape(chw, &[s[0], s[2], h, w])
}
