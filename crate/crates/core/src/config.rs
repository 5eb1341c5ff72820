//! Plain-text `key=value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
//! Every key has a documented default (see [`RunConfig::describe_keys`]).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::NetworkConfig;
use crate::optim::Schedule;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub schedule: Schedule,
    pub grad_clip: Option<f32>,
    pub checkpoint_every: usize,
    /// Side length of generated square scenes.
    pub image_size: usize,
    /// Degradation intensity in (0, 1].
    pub intensity: f32,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            grad_clip: None,
            checkpoint_every: 0,
            image_size: 64,
            intensity: 0.5,
            data: None,
            out: None,
        }
    }
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Input(format!("{key}: expected on/off, got `{value}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Input(format!("{key}: cannot parse `{value}`")))
}

fn parse_four(key: &str, value: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Input(format!("{key}: expected 4 comma-separated values")))
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "depths" => self.network.depths = parse_four(key, value)?,
            "dims" => self.network.dims = parse_four(key, value)?,
            "heads" => self.network.heads = parse_four(key, value)?,
            "reductions" => self.network.reductions = parse_four(key, value)?,
            "intra_reductions" => self.network.intra_reductions = parse_four(key, value)?,
            "strides" => self.network.strides = parse_four(key, value)?,
            "merge_kernels" => self.network.merge_kernels = parse_four(key, value)?,
            "hierarchical" => self.network.hierarchical = parse_flag(key, value)?,
            "intra_pt" => self.network.intra_pt = parse_flag(key, value)?,
            "weather_queries" => self.network.weather_queries = parse_flag(key, value)?,
            "query_count" => self.network.query_count = parse_num(key, value)?,
            "decoder_depth" => self.network.decoder_depth = parse_num(key, value)?,
            "lambda_perceptual" => self.loss.lambda_perceptual = parse_num(key, value)?,
            "feature_seed" => self.loss.feature_seed = parse_num(key, value)?,
            "base_lr" => self.schedule.base_lr = parse_num(key, value)?,
            "halve_epochs" => {
                self.schedule.halve_epochs = value
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| parse_num(key, p.trim()))
                    .collect::<Result<_>>()?
            }
            "total_epochs" => self.schedule.total_epochs = parse_num(key, value)?,
            "batch_size" => self.schedule.batch_size = parse_num(key, value)?,
            "grad_clip" => {
                self.grad_clip = if value == "off" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "image_size" => self.image_size = parse_num(key, value)?,
            "intensity" => self.intensity = parse_num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Input(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let text = std::fs::read_to_string(path)?;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Input(format!("{}:{}: expected key=value", path.display(), ln + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), ln + 1)))?;
        }
        Ok(cfg)
    }

    /// One line per key: name, default, meaning.
    pub fn describe_keys() -> &'static str {
        "\
seed              = 0              master RNG seed
depths            = 2,2,2,2        transformer blocks per encoder stage
dims              = 16,32,64,128   embedding dim per stage
heads             = 1,2,4,8        attention heads per stage
reductions        = 4,2,2,1        kv token reduction ratio per stage
intra_reductions  = 8,8,4,1        reduction ratio of the intra-patch blocks
strides           = 2,2,2,2        patch-merge stride per stage
merge_kernels     = 3,3,3,3        patch-merge kernel per stage (must exceed stride)
hierarchical      = on             blocks at every stage (off = deepest stage only)
intra_pt          = on             intra-patch side branches
weather_queries   = on             query decoder and task fusion
query_count       = 8              learnable weather-type queries (full scale: 512)
decoder_depth     = 2              decoder blocks
lambda_perceptual = 0.04           weight of the perceptual loss term
feature_seed      = 1069           seed of the frozen feature extractor
base_lr           = 0.0002         Adam learning rate
halve_epochs      = 100,150        epochs after which the rate halves
total_epochs      = 200            training epochs
batch_size        = 4              images per optimizer step (full scale: 32)
grad_clip         = off            global-norm clip, or off
checkpoint_every  = 0              save every N epochs (0 = final only)
image_size        = 64             generated scene side length
intensity         = 0.5            degradation intensity in (0, 1]
data              = (unset)        default dataset manifest path
out               = (unset)        default output path"
    }
}
