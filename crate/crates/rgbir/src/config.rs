//! Aggregated pipeline configuration, read from TOML with unknown keys
//! rejected.

use std::path::{Path, PathBuf};

use rgbir_core::detector::DetectorConfig;
use rgbir_core::eval::{Split, DEFAULT_IOU_THRESHOLD};
use rgbir_core::ian::IanConfig;
use rgbir_core::style::{EnhanceConfig, TranslatorConfig};
use rgbir_core::thermal::{SimConfig, ThermalProfile};
use rgbir_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};
use crate::io::read_text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub splits: Vec<Split>,
    pub iou_threshold: f64,
    /// Untimed `fuse` calls before latency sampling starts.
    pub warmup: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            splits: Split::ALL.to_vec(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            warmup: 3,
        }
    }
}

/// How stylized frames get masks for heat-signature enhancement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    /// Ellipses inscribed in the label boxes.
    Boxes,
    /// No masks; enhancement is skipped.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StylizeConfig {
    pub enhance: EnhanceConfig,
    pub masks: MaskSource,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        StylizeConfig {
            enhance: EnhanceConfig::default(),
            masks: MaskSource::Boxes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seed for scene generation.
    pub seed: u64,
    pub sim: SimConfig,
    pub profile: ThermalProfile,
    pub split: SplitConfig,
    pub translator: TranslatorConfig,
    pub stylize: StylizeConfig,
    pub rgb_detector: DetectorConfig,
    pub ir_detector: DetectorConfig,
    pub ian: IanConfig,
    pub eval: EvalConfig,
    /// Default directory for checkpoints when commands are not given one.
    pub checkpoints: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            sim: SimConfig::default(),
            profile: ThermalProfile::default(),
            split: SplitConfig::default(),
            translator: TranslatorConfig::default(),
            stylize: StylizeConfig::default(),
            rgb_detector: DetectorConfig {
                seed: 1,
                ..DetectorConfig::for_modality(Modality::Rgb)
            },
            ir_detector: DetectorConfig {
                seed: 2,
                ..DetectorConfig::for_modality(Modality::Ir)
            },
            ian: IanConfig {
                seed: 3,
                ..IanConfig::default()
            },
            eval: EvalConfig::default(),
            checkpoints: PathBuf::from("checkpoints"),
        }
    }
}

impl PipelineConfig {
    /// Parses `text` as overrides on top of [`PipelineConfig::default`]:
    /// tables merge key by key, everything else replaces the default.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let fail = |message: String| IoError::Config {
            path: path.to_path_buf(),
            message,
        };
        let user: toml::Table = toml::from_str(text).map_err(|e| fail(e.to_string()))?;
        let mut merged = toml::Table::try_from(PipelineConfig::default()).expect("pipeline config serializes to TOML");
        merge(&mut merged, user);
        let config: PipelineConfig = merged.try_into().map_err(|e: toml::de::Error| fail(e.to_string()))?;
        config.validate(path)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config serializes to TOML")
    }

    pub fn detector(&self, modality: Modality) -> &DetectorConfig {
        match modality {
            Modality::Rgb => &self.rgb_detector,
            Modality::Ir => &self.ir_detector,
        }
    }

    /// Replaces every seed in the configuration.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = seed;
        self.translator.seed = seed;
        self.rgb_detector.seed = seed;
        self.ir_detector.seed = seed;
        self.ian.seed = seed;
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let fail = |message: String| IoError::Config {
            path: path.to_path_buf(),
            message,
        };
        self.sim.camera.validate().map_err(|e| fail(e.to_string()))?;
        self.profile.validate().map_err(|e| fail(e.to_string()))?;
        for (name, m) in [("rgb_detector", Modality::Rgb), ("ir_detector", Modality::Ir)] {
            let d = self.detector(m);
            d.validate().map_err(|e| fail(format!("{name}: {e}")))?;
            if d.in_channels != m.channels() {
                return Err(fail(format!("{name}.in_channels must be {}", m.channels())));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(fail(format!(
                "split.train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.stylize.enhance.alpha) {
            return Err(fail(format!(
                "stylize.enhance.alpha must lie in [0, 1], got {}",
                self.stylize.enhance.alpha
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
