//! Run configuration: one section per stage, two named profiles, and
//! layered overrides.

use serde::{Deserialize, Serialize};

use crate::baseline::LogRegConfig;
use crate::data::{AugmentConfig, Layout, SynthParams};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::nn::{Backbone, EncoderConfig};
use crate::pretrain::PretrainConfig;
use crate::rng::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            _ => Err(Error::invalid(format!("unknown profile `{s}` (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset root (folder layout) or manifest file. `None` generates the
    /// synthetic dataset instead.
    pub source: Option<String>,
    pub layout: Layout,
    pub n_rare: usize,
    pub synthetic: SynthParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Copied into every section's seed by [`RunConfig::resolve`].
    pub seed: u64,
    pub output_dir: String,
    pub data: DataSection,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub pretrain: PretrainConfig,
    pub baseline: LogRegConfig,
    pub distill: DistillConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 0,
            output_dir: "runs/desk".into(),
            data: DataSection {
                source: None,
                layout: Layout::FolderPerClass,
                n_rare: 3,
                synthetic: SynthParams::default(),
            },
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            pretrain: PretrainConfig::desk(),
            baseline: LogRegConfig::default(),
            distill: DistillConfig::desk(),
            eval: EvalSection {
                n_way: 3,
                k_shot: 5,
                n_tasks: 3,
            },
        }
    }

    /// Full-scale settings: 224 px inputs, the residual backbone and the
    /// published optimization schedule.
    pub fn paper() -> Self {
        let size = 224;
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            output_dir: "runs/paper".into(),
            data: DataSection {
                synthetic: SynthParams {
                    image_size: size,
                    ..desk.data.synthetic
                },
                ..desk.data
            },
            encoder: EncoderConfig {
                backbone: Backbone::Resnet12Like,
                input_size: size,
                embed_dim: 128,
                width: 64,
            },
            augment: AugmentConfig {
                output_size: size,
                blur_sigma_range: (0.1, 2.0),
                ..AugmentConfig::default()
            },
            pretrain: PretrainConfig::paper(),
            distill: DistillConfig::paper(),
            ..desk
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Deep-merges `overlay` (any serde value tree, e.g. a parsed TOML file)
    /// over the profile defaults. Unknown keys are rejected.
    pub fn layered(profile: Profile, overlay: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut base, overlay);
        if let Some(obj) = base.as_object_mut() {
            // The profile named by the caller wins over one named in the overlay.
            obj.insert("profile".into(), serde_json::to_value(profile)?);
        }
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg.resolve())
    }

    /// Propagates the top-level seed into every section.
    pub fn resolve(mut self) -> Self {
        self.data.synthetic.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.distill.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source.is_none() {
            self.data.synthetic.validate()?;
            if self.data.synthetic.image_size != self.encoder.input_size {
                return Err(Error::invalid("synthetic image_size must equal encoder input_size"));
            }
        }
        self.encoder.validate()?;
        self.augment.validate()?;
        if self.augment.output_size != self.encoder.input_size {
            return Err(Error::invalid("augment output_size must equal encoder input_size"));
        }
        self.pretrain.validate()?;
        self.distill.validate()?;
        if !(self.baseline.c > 0.0 && self.baseline.tol > 0.0 && self.baseline.max_iter > 0) {
            return Err(Error::invalid("baseline c, tol and max_iter must be positive"));
        }
        if self.eval.n_way < 2 || self.eval.k_shot == 0 || self.eval.n_tasks == 0 {
            return Err(Error::invalid("eval needs n_way ≥ 2, k_shot ≥ 1 and n_tasks ≥ 1"));
        }
        if self.data.n_rare < self.eval.n_way {
            return Err(Error::invalid("n_rare must be at least n_way"));
        }
        Ok(())
    }

    /// Seed of the `i`-th evaluation task.
    pub fn task_seed(&self, i: usize) -> u64 {
        rng::derive(self.seed, &[stream::TASK, i as u64])
    }

    pub fn task_seeds(&self) -> Vec<u64> {
        (0..self.eval.n_tasks).map(|i| self.task_seed(i)).collect()
    }
}

fn merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn profiles_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
        let p = RunConfig::paper();
        assert_eq!((p.pretrain.epochs, p.pretrain.batch_size, p.pretrain.lr), (200, 16, 0.03));
        assert_eq!(p.pretrain.queue_size, 1280);
        assert_eq!(p.distill.alpha_final, 0.7);
    }

    #[test]
    fn overlay_overrides_and_keeps_defaults() {
        let cfg = RunConfig::layered(
            Profile::Desk,
            &json!({"seed": 9, "pretrain": {"epochs": 3}, "augment": {"flip_prob": 0.0}}),
        )
        .unwrap();
        assert_eq!(cfg.pretrain.epochs, 3);
        assert_eq!(cfg.pretrain.lr, 0.03);
        assert_eq!(cfg.augment.flip_prob, 0.0);
        assert_eq!((cfg.pretrain.seed, cfg.distill.seed, cfg.data.synthetic.seed), (9, 9, 9));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::layered(Profile::Desk, &json!({"pretrain": {"epoch": 3}})).is_err());
        assert!(RunConfig::layered(Profile::Desk, &json!({"extra": 1})).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::paper();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(RunConfig::layered(Profile::Paper, &v).unwrap(), cfg.resolve());
    }
}
