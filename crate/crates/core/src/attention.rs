//! Multi-head attention with token-count reduction on the key/value path,
//! plus encoder-decoder cross-attention.
//!
//! The reduction reshapes the kv token sequence from (N, C) to (N/R, C·R)
//! and recovers channel dim C with a linear map, cutting the score matrix
//! from N×N to N×N/R. The compressed sequence feeds both K and V; queries
//! always keep full length.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::{BoundParams, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Attention hyper-parameters. `reduction` is the token-compression factor R.
#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub reduction: usize,
}

impl AttentionConfig {
    pub fn new(embed_dim: usize, num_heads: usize, reduction: usize) -> Result<Self> {
        if num_heads == 0 || embed_dim % num_heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {embed_dim} not divisible by {num_heads} heads"
            )));
        }
        if reduction == 0 {
            return Err(Error::Config("reduction ratio must be >= 1".to_string()));
        }
        Ok(AttentionConfig { embed_dim, num_heads, reduction })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Token-count compatibility: N must divide by R. Called when a network
    /// is constructed for a given input size, before any forward pass runs.
    pub fn check_tokens(&self, n: usize) -> Result<()> {
        if self.reduction > 1 && n % self.reduction != 0 {
            return Err(Error::Config(format!(
                "token count {n} not divisible by reduction ratio {}",
                self.reduction
            )));
        }
        Ok(())
    }
}

/// Projections shared by self- and cross-attention. Q/K/V carry no bias, the
/// output projection does; the reduction-recovery linear is bias-free so an
/// identity weight makes it an exact identity.
pub struct AttentionParams {
    pub cfg: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub recover: Linear,
}

impl AttentionParams {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        let c = cfg.embed_dim;
        Ok(AttentionParams {
            cfg,
            query: Linear::init(store, rng, &format!("{name}.q"), c, c, false)?,
            key: Linear::init(store, rng, &format!("{name}.k"), c, c, false)?,
            value: Linear::init(store, rng, &format!("{name}.v"), c, c, false)?,
            out: Linear::init(store, rng, &format!("{name}.out"), c, c, true)?,
            recover: Linear::init(store, rng, &format!("{name}.recover"), c * cfg.reduction, c, false)?,
        })
    }

    /// Overwrites the recovery map with identity (only meaningful for R = 1).
    pub fn set_identity_recovery<T: Real>(&self, store: &mut ParamStore<T>) {
        let c = self.cfg.embed_dim;
        let w = store.get_mut(self.recover.w);
        let rows = w.shape()[0];
        let data = w.data_mut();
        data.fill(T::zero());
        for i in 0..rows.min(c) {
            data[i * c + i] = T::one();
        }
    }

    /// Core scaled dot-product attention between `q_in: [B, Kq, C]` and
    /// `kv_in: [B, N, C]`. Returns the output `[B, Kq, C]` and the
    /// post-softmax weights `[B, heads, Kq, N/R]`.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        q_in: Var,
        kv_in: Var,
    ) -> Result<(Var, Var)> {
        let c = self.cfg.embed_dim;
        let h = self.cfg.num_heads;
        let d = self.cfg.head_dim();
        let r = self.cfg.reduction;
        let qs = g.shape(q_in).to_vec();
        let ks = g.shape(kv_in).to_vec();
        if qs.len() != 3 || ks.len() != 3 || qs[2] != c || ks[2] != c || qs[0] != ks[0] {
            return Err(Error::dim(
                "attention",
                format!("expected [B, *, {c}] token tensors, got {:?} and {:?}", qs, ks),
            ));
        }
        let (b, kq, n) = (qs[0], qs[1], ks[1]);
        self.cfg.check_tokens(n)?;
        let nr = n / r;

        // Compress the kv sequence: (N, C) -> (N/R, C·R) -> linear -> (N/R, C).
        let kv = if r == 1 {
            self.recover.forward(g, p, kv_in)?
        } else {
            let grouped = g.reshape(kv_in, &[b, nr, c * r])?;
            self.recover.forward(g, p, grouped)?
        };

        let q = self.query.forward(g, p, q_in)?;
        let k = self.key.forward(g, p, kv)?;
        let v = self.value.forward(g, p, kv)?;

        // Split heads: [B, tokens, C] -> [B, h, tokens, d].
        let qh = g.reshape(q, &[b, kq, h, d])?;
        let qh = g.permute(qh, &[0, 2, 1, 3])?;
        let kh = g.reshape(k, &[b, nr, h, d])?;
        let kh = g.permute(kh, &[0, 2, 3, 1])?; // [B, h, d, N/R]
        let vh = g.reshape(v, &[b, nr, h, d])?;
        let vh = g.permute(vh, &[0, 2, 1, 3])?;

        let scores = g.matmul(qh, kh)?;
        let scaled = g.mul_scalar(scores, T::from_f64(1.0 / (d as f64).sqrt()))?;
        let weights = g.softmax(scaled, 3)?;

        let ctx = g.matmul(weights, vh)?; // [B, h, Kq, d]
        let merged = g.permute(ctx, &[0, 2, 1, 3])?;
        let merged = g.reshape(merged, &[b, kq, c])?;
        let out = self.out.forward(g, p, merged)?;
        Ok((out, weights))
    }
}

/// Self-attention over one token sequence; K and V come from the
/// R-compressed sequence, queries from the full one.
pub struct SelfAttention {
    pub params: AttentionParams,
}

impl SelfAttention {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        Ok(SelfAttention { params: AttentionParams::init(store, rng, name, cfg)? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        Ok(self.params.attend(g, p, x, x)?.0)
    }

    pub fn forward_with_weights<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
    ) -> Result<(Var, Var)> {
        self.params.attend(g, p, x, x)
    }
}

/// Cross-attention: queries from one sequence, keys/values from another.
pub struct CrossAttention {
    pub params: AttentionParams,
}

impl CrossAttention {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        Ok(CrossAttention { params: AttentionParams::init(store, rng, name, cfg)? })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        q_in: Var,
        kv_in: Var,
    ) -> Result<Var> {
        Ok(self.params.attend(g, p, q_in, kv_in)?.0)
    }

    pub fn forward_with_weights<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        q_in: Var,
        kv_in: Var,
    ) -> Result<(Var, Var)> {
        self.params.attend(g, p, q_in, kv_in)
    }
}

/// Copies the post-softmax weights out of the graph for inspection.
pub fn attention_weights<T: Real>(g: &Graph<T>, weights: Var) -> Tensor<T> {
    g.value(weights).clone()
}
