//! Network assembly: configuration, parameter initialization, and the
//! single weather-agnostic forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{ProjectionTail, QueryDecoder, TaskFusion};
use crate::encoder::{Encoder, StageConfig};
use crate::error::{Error, Result};
use crate::layers::to_tokens;
use crate::params::ParamStore;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Full architecture description, including the ablation toggles.
///
/// `hierarchical = false` keeps transformer blocks only in the deepest stage
/// (the shallower merges act as a plain conv stem); `intra_pt` adds the
/// sub-patch branches; `weather_queries` adds the decoder and task fusion.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub depths: [usize; 4],
    pub dims: [usize; 4],
    pub heads: [usize; 4],
    pub reductions: [usize; 4],
    pub intra_reductions: [usize; 4],
    pub strides: [usize; 4],
    pub merge_kernels: [usize; 4],
    pub hierarchical: bool,
    pub intra_pt: bool,
    pub weather_queries: bool,
    pub query_count: usize,
    pub decoder_depth: usize,
}

impl Default for NetworkConfig {
    /// Desk-scale defaults. Strides of 2 at every stage place the deepest
    /// features at H/16, which the four x2 tail upsamples bring back to H.
    /// The intra-patch reduction shrinks with depth so that the tiny deep
    /// grids keep token counts divisible.
    fn default() -> Self {
        NetworkConfig {
            depths: [2, 2, 2, 2],
            dims: [16, 32, 64, 128],
            heads: [1, 2, 4, 8],
            reductions: [4, 2, 2, 1],
            intra_reductions: [8, 8, 4, 1],
            strides: [2, 2, 2, 2],
            merge_kernels: [3, 3, 3, 3],
            hierarchical: true,
            intra_pt: true,
            weather_queries: true,
            query_count: 8,
            decoder_depth: 2,
        }
    }
}

/// The four ablation rungs, weakest first; the ordering follows declaration
/// order, so `>=` reads as "includes".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ablation {
    Base,
    Hierarchical,
    IntraPatch,
    WeatherQueries,
}

impl NetworkConfig {
    /// Applies one ablation rung on top of the current dims/depths.
    pub fn with_ablation(mut self, rung: Ablation) -> Self {
        self.hierarchical = rung >= Ablation::Hierarchical;
        self.intra_pt = rung >= Ablation::IntraPatch;
        self.weather_queries = rung >= Ablation::WeatherQueries;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if self.dims[i] == 0 || self.heads[i] == 0 {
                return Err(Error::Config(format!("stage {} has zero dim or heads", i + 1)));
            }
            if self.dims[i] % self.heads[i] != 0 {
                return Err(Error::Config(format!(
                    "stage {} dim {} not divisible by {} heads",
                    i + 1,
                    self.dims[i],
                    self.heads[i]
                )));
            }
            if self.strides[i] < 2 {
                return Err(Error::Config(format!(
                    "stage {} stride must be >= 2 so spatial dims strictly decrease",
                    i + 1
                )));
            }
            if i > 0 && self.dims[i] <= self.dims[i - 1] {
                return Err(Error::Config(format!(
                    "channel dims must strictly increase across stages, got {:?}",
                    self.dims
                )));
            }
        }
        if self.weather_queries && (self.query_count == 0 || self.decoder_depth == 0) {
            return Err(Error::Config(
                "weather queries enabled but query count or decoder depth is zero".to_string(),
            ));
        }
        Ok(())
    }

    pub fn stage_configs(&self) -> Vec<StageConfig> {
        (0..4)
            .map(|i| StageConfig {
                index: i + 1,
                depth: if self.hierarchical || i == 3 { self.depths[i] } else { 0 },
                embed_dim: self.dims[i],
                heads: self.heads[i],
                reduction: self.reductions[i],
                intra_reduction: self.intra_reductions[i],
                stride: self.strides[i],
                merge_kernel: self.merge_kernels[i],
                intra_enabled: self.intra_pt,
            })
            .collect()
    }

    /// Total downsampling factor of the encoder.
    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }
}

/// The assembled restoration network. Holds parameter handles only; tensor
/// values live in the [`ParamStore`] created alongside it.
pub struct Restorer {
    pub cfg: NetworkConfig,
    pub encoder: Encoder,
    pub decoder: Option<QueryDecoder>,
    pub fusion: Option<TaskFusion>,
    pub tail: ProjectionTail,
}

impl Restorer {
    /// Builds the network and a freshly initialized parameter store.
    /// Identical (config, seed) pairs produce bit-identical stores.
    pub fn init<T: Real>(cfg: &NetworkConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, &mut rng, "enc", &cfg.stage_configs())?;
        let (decoder, fusion) = if cfg.weather_queries {
            let dec = QueryDecoder::init(
                &mut store,
                &mut rng,
                "dec",
                cfg.query_count,
                cfg.dims[3],
                cfg.heads[3],
                cfg.decoder_depth,
            )?;
            let fusion = TaskFusion::init(&mut store, &mut rng, "fuse", cfg.dims[3], &cfg.dims)?;
            (Some(dec), Some(fusion))
        } else {
            (None, None)
        };
        let tail = ProjectionTail::init(&mut store, &mut rng, "tail", &cfg.dims)?;
        Ok((
            Restorer { cfg: cfg.clone(), encoder, decoder, fusion, tail },
            store,
        ))
    }

    /// Forward pass on a `[B, 3, H, W]` image in [-1, 1]. Returns the
    /// restored image and, when the decoder is enabled, its final
    /// cross-attention weights `[B, h, Kq, N4]`.
    pub fn forward_with_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &crate::params::BoundParams,
        image: Var,
    ) -> Result<(Var, Option<Var>)> {
        let pyramid = self.encoder.forward(g, p, image)?;
        let (pyramid, weights) = match (&self.decoder, &self.fusion) {
            (Some(dec), Some(fusion)) => {
                let last = pyramid.last();
                let tokens = to_tokens(g, last.var)?;
                let (task, weights) = dec.decode(g, p, tokens)?;
                (fusion.fuse(g, p, pyramid, &task)?, Some(weights))
            }
            _ => (pyramid, None),
        };
        let out = self.tail.project(g, p, &pyramid)?;
        Ok((out, weights))
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &crate::params::BoundParams,
        image: Var,
    ) -> Result<Var> {
        Ok(self.forward_with_attention(g, p, image)?.0)
    }

    /// Inference helper: runs one image (or batch) through a throwaway graph
    /// without recording gradients.
    pub fn restore<T: Real>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = store.bind_all_frozen(&mut g);
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    /// Like [`Restorer::restore`] but also returns decoder attention weights.
    pub fn restore_with_attention<T: Real>(
        &self,
        store: &ParamStore<T>,
        image: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut g = Graph::new();
        let p = store.bind_all_frozen(&mut g);
        let x = g.constant(image.clone());
        let (out, weights) = self.forward_with_attention(&mut g, &p, x)?;
        Ok((
            g.value(out).clone(),
            weights.map(|w| g.value(w).clone()),
        ))
    }
}
