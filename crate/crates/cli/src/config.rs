//! Run configuration: one JSON document covering every subcommand.

use std::path::Path;

use orient_core::nn::{EncoderConfig, TrainConfig};
use orient_core::simulator::{PhantomSpec, SimConfig, Volume};
use orient_core::so3::SymmetryKind;
use orient_core::uncertainty::Statistic;
use orient_core::Real;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Seeded blob phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub n_blobs: usize,
    pub seed: u64,
    pub d: usize,
    pub pixel_size: f64,
    /// Multiplies every blob width.
    pub width_scale: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_blobs: 12,
            seed: 1,
            d: 48,
            pixel_size: 2.86 * 128.0 / 48.0,
            width_scale: 1.0,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self, symmetry: SymmetryKind) -> PhantomSpec {
        let mut spec = PhantomSpec::random(self.n_blobs, self.seed, symmetry);
        for b in &mut spec.blobs {
            b.sigma = b.sigma.map(|s| s * self.width_scale);
        }
        spec
    }

    pub fn volume<T: Real>(&self, symmetry: SymmetryKind) -> orient_core::Result<Volume<T>> {
        self.spec(symmetry).rasterize(self.d, self.pixel_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub keep_fraction: f64,
    pub statistic: Statistic,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            keep_fraction: 0.75,
            statistic: Statistic::Trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub phantom: PhantomConfig,
    pub simulate: SimConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub filter: FilterConfig,
    pub ablate: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            phantom: PhantomConfig::default(),
            simulate: SimConfig::default(),
            encoder: EncoderConfig::desk(),
            train: TrainConfig::default(),
            filter: FilterConfig::default(),
            ablate: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", p.display())))
            }
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(dir.join("config.json"), text + "\n").map_err(Failure::io)
    }
}
