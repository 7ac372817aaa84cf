//! TOML run configuration: layout, model, prior, data and training sections.
//! Unknown keys are rejected everywhere; [`RunConfig::to_toml`] writes the
//! fully resolved form so a run can be replayed exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{synthetic_store, ImageStore};
use crate::error::{Error, Result};
use crate::latent::{default_prior_spec, PriorFamily, PriorSpec};
use crate::layout::{canonical_layout, LayoutKind, PartLayout};
use crate::model::{Activation, ModelSpec};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    pub kind: LayoutKind,
    /// Layout file; takes precedence over `kind`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            kind: LayoutKind::FacialParts,
            file: None,
        }
    }
}

impl LayoutConfig {
    pub fn load(&self) -> Result<PartLayout> {
        match &self.file {
            Some(path) => load_layout_file(path),
            None => Ok(canonical_layout(self.kind)),
        }
    }
}

/// Parse and validate a layout file.
pub fn load_layout_file(path: &Path) -> Result<PartLayout> {
    let text = std::fs::read_to_string(path)?;
    PartLayout::from_text(&text)?.validated()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub head_channels: usize,
    /// Halve channels at each upsampling level down to this floor; equal to
    /// `head_channels` for a constant width.
    pub min_channels: usize,
    pub out_resolution: usize,
    pub kernel_size: usize,
    pub leaky_slope: f32,
    pub pixel_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head_channels: 128,
            min_channels: 128,
            out_resolution: 32,
            kernel_size: 3,
            leaky_slope: 0.2,
            pixel_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, layout: PartLayout) -> Result<ModelSpec> {
        let mut spec =
            ModelSpec::new(layout, self.head_channels, self.out_resolution).with_channel_halving(self.min_channels);
        spec.kernel_size = self.kernel_size;
        spec.activation = Activation::LeakyRelu(self.leaky_slope);
        spec.pixel_norm = self.pixel_norm;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// `d_i = latent_scale × |cells_i|` unless `dims` is given.
    pub latent_scale: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            latent_scale: 1,
            dims: None,
        }
    }
}

impl PriorConfig {
    pub fn spec(&self, layout: &PartLayout) -> Result<PriorSpec> {
        let spec = match &self.dims {
            Some(dims) => PriorSpec {
                dims: dims.clone(),
                distribution: PriorFamily::StandardNormal,
            },
            None if self.latent_scale == 0 => return Err(Error::Config("latent_scale must be >= 1".into())),
            None => default_prior_spec(layout, self.latent_scale),
        };
        spec.check(layout)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Preprocessed image store.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Without a store: this many procedural faces.
    pub synthetic_count: usize,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            store: None,
            synthetic_count: 2048,
            synthetic_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn load(&self, resolution: usize) -> Result<ImageStore> {
        match &self.store {
            Some(path) => ImageStore::load(path),
            None => Ok(synthetic_store(self.synthetic_count, resolution, self.synthetic_seed)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub layout: LayoutConfig,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Layout, model and prior, checked against each other.
    pub fn resolve(&self) -> Result<(ModelSpec, PriorSpec)> {
        let layout = self.layout.load()?;
        let spec = self.model.spec(layout.clone())?;
        let prior = self.prior.spec(&layout)?;
        self.train.validate()?;
        Ok((spec, prior))
    }
}
