//! One TOML file per run. Every section except `seed` has defaults.
//!
//! ```toml
//! seed = 7                      # mandatory
//!
//! [data]                        # windowing and surrogate record sizes
//! horizon = 60
//! stride = 5
//! features = 8                  # expected columns; files stored transposed are fixed up
//! classes = 13
//! runs_per_class = 4
//! warmup = 100
//! length = 400
//! test_onset = 160              # first faulty sample of `dNN_te.dat` files without sidecar labels
//!
//! [split]
//! train = 0.6
//! validation = 0.2
//! test = 0.2
//! contiguous = true
//!
//! [model]                       # level-1 and flat models; [level2] overrides for level 2
//! encoder = [16]
//! decoder = [8]                 # must end at `data.features`
//! lambda1 = 1.0
//! lambda2 = 1.0
//! lambda3 = 1e-4
//! learning_rate = 1e-2
//! epochs = 30
//! batch_size = 64
//! clip_norm = 5.0
//!
//! [hierarchy]
//! normal = 0
//! incipient = [3, 9, 12]
//!
//! [prbs]                        # excitation design; omit to simulate without it
//! target = "sp2"
//! tau_ol = 6.0
//! tau_cl = 3.0
//!
//! [tune]
//! budget = 8
//! initial_epochs = 2
//! ```
//!
//! `[plant]` may hold a full plant description; it defaults to the built-in
//! eight-column surrogate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::SplitSpec;
use crate::error::{FddError, Result};
use crate::model::ModelConfig;
use crate::pipeline::{DataSpec, PrbsSpec};
use crate::plant::{PlantConfig, DEFAULT_INCIPIENT};
use crate::tune::SearchSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub level2: Option<ModelSection>,
    #[serde(default)]
    pub hierarchy: HierarchySection,
    #[serde(default)]
    pub prbs: Option<PrbsSpec>,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub plant: Option<PlantConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub horizon: usize,
    pub stride: usize,
    pub features: usize,
    pub classes: usize,
    pub runs_per_class: usize,
    pub warmup: usize,
    pub length: usize,
    pub test_onset: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataSpec::default();
        Self {
            horizon: d.horizon,
            stride: d.stride,
            features: 8,
            classes: 13,
            runs_per_class: d.runs_per_class,
            warmup: d.warmup,
            length: d.length,
            test_onset: 160,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> DataSpec {
        DataSpec {
            runs_per_class: self.runs_per_class,
            warmup: self.warmup,
            length: self.length,
            horizon: self.horizon,
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub contiguous: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            contiguous: true,
        }
    }
}

impl SplitSection {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.train,
            validation: self.validation,
            test: self.test,
            contiguous: self.contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: vec![16],
            decoder: vec![8],
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1e-4,
            learning_rate: 1e-2,
            epochs: 30,
            batch_size: 64,
            clip_norm: 5.0,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, classes: usize, features: usize, horizon: usize, seed: u64) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(self.encoder.clone(), self.decoder.clone(), classes, features, horizon, seed);
        c.lambda1 = self.lambda1;
        c.lambda2 = self.lambda2;
        c.lambda3 = self.lambda3;
        c.learning_rate = self.learning_rate;
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.clip_norm = self.clip_norm;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySection {
    pub normal: usize,
    pub incipient: Vec<usize>,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            normal: 0,
            incipient: DEFAULT_INCIPIENT.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub budget: usize,
    pub initial_epochs: usize,
    pub space: SearchSpace,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            budget: 8,
            initial_epochs: 2,
            space: SearchSpace::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FddError::Input(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FddError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.horizon == 0 || d.stride == 0 || d.features == 0 {
            return Err(FddError::Config("horizon, stride and features must be positive".into()));
        }
        if d.classes < 2 {
            return Err(FddError::Config("at least two classes required".into()));
        }
        self.split.spec().validate()?;
        if let Some(p) = &self.plant {
            p.validate()?;
        }
        Ok(())
    }

    pub fn plant(&self) -> PlantConfig {
        let mut p = self.plant.clone().unwrap_or_else(|| PlantConfig::surrogate(self.seed));
        p.seed = self.seed;
        p
    }

    pub fn level2_section(&self) -> &ModelSection {
        self.level2.as_ref().unwrap_or(&self.model)
    }
}
