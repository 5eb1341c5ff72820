//! Weather-type query decoder, task-feature fusion, and the convolutional
//! projection tail that produces the restored image.
//!
//! The decoder runs at a single stage: learnable query embeddings attend over
//! the deepest encoder features through a small stack of cross-attention
//! blocks. The mean of the decoded rows is the task feature vector; a learned
//! linear map per stage projects it onto each pyramid level as an additive
//! bias before the tail upsamples back to image resolution.

use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, CrossAttention};
use crate::encoder::{FeaturePyramid, StageOutput};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Linear, Norm};
use crate::params::{trunc_normal, BoundParams, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Var};

const FFN_HIDDEN_MULT: usize = 4;

/// Learnable weather-type query embeddings, one row per query.
pub struct WeatherQueries {
    pub embed: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl WeatherQueries {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        count: usize,
        dim: usize,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("query count must be >= 1".to_string()));
        }
        let embed = store.add(format!("{name}.embed"), trunc_normal(&[count, dim], 0.02, rng))?;
        Ok(WeatherQueries { embed, count, dim })
    }
}

/// Decoded queries plus their pooled task vector.
pub struct TaskFeature {
    /// `[B, Kq, C]` decoded query features.
    pub decoded: Var,
    /// `[B, C]` mean over the query axis.
    pub pooled: Var,
}

/// One decoder block: pre-norm cross-attention followed by a position-wise
/// FFN (no depth-wise conv here), both residual.
pub struct DecoderBlock {
    pub norm_q: Norm,
    pub cross: CrossAttention,
    pub norm_f: Norm,
    pub expand: Linear,
    pub contract: Linear,
}

impl DecoderBlock {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        let dim = cfg.embed_dim;
        Ok(DecoderBlock {
            norm_q: Norm::init(store, &format!("{name}.norm_q"), dim)?,
            cross: CrossAttention::init(store, rng, &format!("{name}.cross"), cfg)?,
            norm_f: Norm::init(store, &format!("{name}.norm_f"), dim)?,
            expand: Linear::init(store, rng, &format!("{name}.expand"), dim, dim * FFN_HIDDEN_MULT, true)?,
            contract: Linear::init(store, rng, &format!("{name}.contract"), dim * FFN_HIDDEN_MULT, dim, true)?,
        })
    }

    /// Returns the refined queries and the block's attention weights.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        q: Var,
        kv: Var,
    ) -> Result<(Var, Var)> {
        let qn = self.norm_q.forward(g, p, q)?;
        let (att, weights) = self.cross.forward_with_weights(g, p, qn, kv)?;
        let a = g.add(q, att)?;
        let fn_in = self.norm_f.forward(g, p, a)?;
        let wide = self.expand.forward(g, p, fn_in)?;
        let act = g.gelu(wide)?;
        let narrow = self.contract.forward(g, p, act)?;
        let out = g.add(a, narrow)?;
        Ok((out, weights))
    }
}

/// Decoder over the last encoder stage with multiple blocks.
pub struct QueryDecoder {
    pub queries: WeatherQueries,
    pub blocks: Vec<DecoderBlock>,
}

impl QueryDecoder {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        query_count: usize,
        dim: usize,
        heads: usize,
        depth: usize,
    ) -> Result<Self> {
        let queries = WeatherQueries::init(store, rng, &format!("{name}.queries"), query_count, dim)?;
        let cfg = AttentionConfig::new(dim, heads, 1)?;
        let blocks = (0..depth)
            .map(|b| DecoderBlock::init(store, rng, &format!("{name}.block{b}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(QueryDecoder { queries, blocks })
    }

    /// Decodes against `[B, N, C]` tokens from the last encoder stage.
    /// Also returns the final block's attention weights `[B, h, Kq, N]`.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        stage_tokens: Var,
    ) -> Result<(TaskFeature, Var)> {
        let s = g.shape(stage_tokens).to_vec();
        let b = s[0];
        let q0 = g.broadcast_to(p.var(self.queries.embed), &[b, self.queries.count, self.queries.dim])?;
        let mut q = q0;
        let mut last_weights = None;
        for block in &self.blocks {
            let (next, w) = block.forward(g, p, q, stage_tokens)?;
            q = next;
            last_weights = Some(w);
        }
        let pooled = g.mean_axis(q, 1)?;
        let weights = last_weights.ok_or_else(|| Error::Config("decoder needs >= 1 block".to_string()))?;
        Ok((TaskFeature { decoded: q, pooled }, weights))
    }
}

/// Per-stage linear maps that project the pooled task vector onto each
/// pyramid level as a broadcast additive term.
pub struct TaskFusion {
    pub maps: Vec<Linear>,
}

impl TaskFusion {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        task_dim: usize,
        stage_dims: &[usize],
    ) -> Result<Self> {
        let maps = stage_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| Linear::init(store, rng, &format!("{name}.s{}", i + 1), task_dim, dim, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskFusion { maps })
    }

    pub fn fuse<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        pyramid: FeaturePyramid,
        task: &TaskFeature,
    ) -> Result<FeaturePyramid> {
        let mut stages = Vec::with_capacity(pyramid.stages.len());
        for (stage, map) in pyramid.stages.into_iter().zip(&self.maps) {
            let bias = map.forward(g, p, task.pooled)?; // [B, C_i]
            let s = g.shape(bias).to_vec();
            let bias = g.reshape(bias, &[s[0], s[1], 1, 1])?;
            let spread = g.broadcast_to(bias, g.shape(stage.var).to_vec().as_slice())?;
            let fused = g.add(stage.var, spread)?;
            stages.push(StageOutput { var: fused, ..stage });
        }
        Ok(FeaturePyramid { stages })
    }
}

/// Four upsample+conv layers with encoder skips on the first three; the last
/// layer maps to 3 channels through tanh, so outputs lie in (-1, 1).
pub struct ProjectionTail {
    pub convs: Vec<Conv2d>,
}

impl ProjectionTail {
    /// `stage_dims` are the encoder channel dims, shallow to deep.
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        stage_dims: &[usize],
    ) -> Result<Self> {
        if stage_dims.len() != 4 {
            return Err(Error::Config(format!(
                "projection tail expects 4 pyramid levels, got {}",
                stage_dims.len()
            )));
        }
        // Channel plan mirrors the encoder dims downward: each layer halves
        // the width of the previous, the last emits RGB.
        let widths = [stage_dims[2], stage_dims[1], stage_dims[0], 3];
        let mut convs = Vec::with_capacity(4);
        let mut in_ch = stage_dims[3];
        for (l, &out_ch) in widths.iter().enumerate() {
            let skip = match l {
                0 => stage_dims[2],
                1 => stage_dims[1],
                2 => stage_dims[0],
                _ => 0,
            };
            convs.push(Conv2d::init(
                store,
                rng,
                &format!("{name}.conv{}", l + 1),
                in_ch + skip,
                out_ch,
                3,
                1,
                1,
                1,
            )?);
            in_ch = out_ch;
        }
        Ok(ProjectionTail { convs })
    }

    pub fn project<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        pyramid: &FeaturePyramid,
    ) -> Result<Var> {
        if pyramid.stages.len() != 4 {
            return Err(Error::Contract(format!(
                "projection tail expects 4 pyramid levels, got {}",
                pyramid.stages.len()
            )));
        }
        let mut x = pyramid.last().var;
        for (l, conv) in self.convs.iter().enumerate() {
            let up = g.upsample_nearest(x, 2)?;
            let joined = if l < 3 {
                let skip = &pyramid.stages[2 - l];
                let us = g.shape(up).to_vec();
                if us[2] != skip.h || us[3] != skip.w {
                    return Err(Error::Contract(format!(
                        "tail layer {} upsampled to {}x{} but skip stage is {}x{}",
                        l + 1,
                        us[2],
                        us[3],
                        skip.h,
                        skip.w
                    )));
                }
                g.concat(&[up, skip.var], 1)?
            } else {
                up
            };
            x = conv.forward(g, p, joined)?;
        }
        g.tanh(x)
    }
}
