use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::pseudo::PseudoSource;
use crate::error::{Error, Result};
use crate::nets::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled source dataset (file, or directory holding `dataset.mm23`).
    pub source: PathBuf,
    /// Unlabeled target dataset; required for adaptation.
    pub target: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    /// Fraction of steps spent warming up.
    pub warmup: f64,
    /// Initial learning rate is `peak_lr / div_factor`.
    pub div_factor: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 15,
            batch_size: 4,
            peak_lr: 1e-3,
            floor_lr: 1e-5,
            warmup: 0.3,
            div_factor: 25.0,
            weight_decay: 0.01,
            augment: true,
            log_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UdaSection {
    pub lambda_s: f64,
    /// Pseudo-label weight; only meaningful with pseudo-labels. Leaving it
    /// unset means 0.1 when pseudo-labels are supplied.
    pub lambda_t: Option<f64>,
    pub lambda_xs: f64,
    pub lambda_xt: f64,
    /// Treat the mimicry target as a constant.
    pub detach_target: bool,
    pub keep_fraction: f64,
    pub pseudo_source: PseudoSource,
    /// Pseudo-label file for a self-training round.
    pub pseudo: Option<PathBuf>,
}

impl Default for UdaSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_s: w.lambda_s,
            lambda_t: None,
            lambda_xs: w.lambda_xs,
            lambda_xt: w.lambda_xt,
            detach_target: true,
            keep_fraction: 0.66,
            pseudo_source: PseudoSource::Branch,
            pseudo: None,
        }
    }
}

impl UdaSection {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_s: self.lambda_s,
            lambda_t: self.lambda_t.unwrap_or(LossWeights::default().lambda_t),
            lambda_xs: self.lambda_xs,
            lambda_xt: self.lambda_xt,
        }
    }
}

/// Full run configuration. Without `[uda]` the run is source-only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub uda: Option<UdaSection>,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.source);
        if let Some(t) = cfg.data.target.as_mut() {
            fix(t);
        }
        if let Some(p) = cfg.uda.as_mut().and_then(|u| u.pseudo.as_mut()) {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        let bad = |m: String| Err(Error::Config(m));
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("train: epochs and batch_size must be positive".into());
        }
        if !(t.peak_lr > 0.0 && t.floor_lr >= 0.0 && t.floor_lr <= t.peak_lr) {
            return bad(format!("train: need 0 <= floor_lr <= peak_lr, peak_lr > 0 (got {} / {})", t.floor_lr, t.peak_lr));
        }
        if !(0.0..1.0).contains(&t.warmup) || !(t.div_factor >= 1.0) || !(t.weight_decay >= 0.0) {
            return bad("train: warmup in [0, 1), div_factor >= 1, weight_decay >= 0".into());
        }
        if let Some(u) = &self.uda {
            u.weights().validate()?;
            if !(u.keep_fraction > 0.0 && u.keep_fraction <= 1.0) {
                return bad(format!("uda: keep_fraction must be in (0, 1], got {}", u.keep_fraction));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_sections() {
        let cfg = TrainConfig::from_toml(
            r#"
            [data]
            source = "src"
            target = "tgt"
            [model]
            depth_input = false
            [train]
            epochs = 2
            [uda]
            lambda_xt = 0.05
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.peak_lr, 1e-3);
        assert!(!cfg.model.depth_input);
        let u = cfg.uda.unwrap();
        assert_eq!(u.weights().lambda_xt, 0.05);
        assert_eq!(u.weights().lambda_s, 0.8);
        assert_eq!(u.keep_fraction, 0.66);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[uda]\nlambda_xs = -1.0",
            "[train]\nepochs = 0",
            "[train]\nbogus = 1",
            "[uda]\nkeep_fraction = 0.0",
            "[model]\nvoxel_size = -0.1",
        ] {
            assert!(matches!(TrainConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig {
            uda: Some(UdaSection::default()),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
