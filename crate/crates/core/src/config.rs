//! Run configuration, shipped profiles, and the Φ checkpoint format.
//!
//! Checkpoint layout (little-endian): magic `FHVECKPT`, `u32` version,
//! `u32` metadata length, metadata JSON (model config and Φ layout),
//! `u64` parameter count, then the parameters as `f64`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::{ExperimentConfig, FederationSpec, LabelSkew, ProbeConfig};
use crate::federation::FederationConfig;
use crate::model::{Architecture, ModelConfig};
use crate::numerics::{ParamLayout, ParamVector};
use crate::privacy::{DPConfig, NoiseSetting};
use crate::synthesis::SynthesisConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-scale settings: 10 clients, 50 rounds of 5 local
    /// epochs, learning rate 1e-3, Dirichlet α = 0.3, C = 1.5, (ε, δ) = (1, 1e-4).
    #[default]
    Full,
    /// Small widths and larger steps so a three-seed run finishes in minutes.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: FederationSpec,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub synthesis: SynthesisConfig,
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::default())
    }
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Full => Self {
                data: FederationSpec {
                    clients: 10,
                    label_skew: LabelSkew::Dirichlet(0.3),
                    ..FederationSpec::default()
                },
                model: ModelConfig::default(),
                federation: FederationConfig::default(),
                synthesis: SynthesisConfig::default(),
                probe: ProbeConfig::default(),
                seeds: vec![1, 2, 3],
                out_dir: PathBuf::from("out"),
            },
            Profile::Desk => Self {
                data: FederationSpec::default(),
                model: ModelConfig {
                    latent_dim: 8,
                    hidden_dim: 32,
                    code_dim: 8,
                    domain_dim: 8,
                    label_embed_dim: 4,
                    hyper_hidden_dim: 16,
                    ..ModelConfig::default()
                },
                federation: FederationConfig {
                    clients: 4,
                    rounds: 30,
                    local_epochs: 2,
                    batch_size: 16,
                    lr_encoder: 0.02,
                    lr_code: 0.02,
                    lr_hyper: 1.0,
                    lambda_mmd: 1.0,
                    lambda_lip: 1e-3,
                    lambda_code: 1e-3,
                    dp: DPConfig {
                        enabled: false,
                        noise_multiplier: NoiseSetting::AUTO,
                        ..DPConfig::default()
                    },
                    ..FederationConfig::default()
                },
                synthesis: SynthesisConfig {
                    samples: 128,
                    steps: 200,
                    lr: 0.05,
                    count: 1500,
                    ..SynthesisConfig::default()
                },
                probe: ProbeConfig::default(),
                seeds: vec![1, 2, 3],
                out_dir: PathBuf::from("out"),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            data: self.data.clone(),
            model: self.model.clone(),
            federation: self.federation.clone(),
            synthesis: self.synthesis.clone(),
            probe: self.probe.clone(),
        }
    }

    /// Parses a config file. Keys that are absent take their values from the
    /// profile named by the optional top-level `"profile"` key (default
    /// `full`); unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut patch: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {}", e.line()), e.to_string()))?;
        let profile = match patch.as_object_mut().and_then(|o| o.remove("profile")) {
            None => Profile::default(),
            Some(v) => serde_json::from_value(v).map_err(|e| Error::config("profile", e.to_string()))?,
        };
        let mut merged = serde_json::to_value(Self::profile(profile))?;
        merge_json(&mut merged, patch);
        let cfg: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".to_owned() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Overlays `patch` onto `base`. Objects merge key by key, except single-key
/// objects with different keys (enum variants), which replace.
fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !is_variant_switch(b, &p) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn is_variant_switch(b: &serde_json::Map<String, serde_json::Value>, p: &serde_json::Map<String, serde_json::Value>) -> bool {
    b.len() == 1 && p.len() == 1 && b.keys().next() != p.keys().next()
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FHVECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub layout: ParamLayout,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub phi: ParamVector,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&CheckpointMeta {
            model: self.model.clone(),
            layout: (**self.phi.layout()).clone(),
        })?;
        let mut out = Vec::with_capacity(24 + meta.len() + 8 * self.phi.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.phi.len() as u64).to_le_bytes());
        for v in self.phi.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_owned(),
        };
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing FHVECKPT header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let meta_end = 16 + meta_len;
        if bytes.len() < meta_end + 8 {
            return Err(bad("truncated metadata"));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..meta_end])?;
        let n = u64::from_le_bytes(bytes[meta_end..meta_end + 8].try_into().unwrap()) as usize;
        let body = &bytes[meta_end + 8..];
        if body.len() != 8 * n {
            return Err(bad("parameter count does not match file size"));
        }
        let arch = Architecture::new(meta.model.clone())?;
        if *arch.phi_layout != meta.layout {
            return Err(Error::LayoutMismatch(format!(
                "checkpoint layout in {} does not match its model config",
                path.display()
            )));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            model: meta.model,
            phi: ParamVector::from_data(Arc::clone(&arch.phi_layout), data)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn profiles_validate_and_round_trip() {
        for p in [Profile::Full, Profile::Desk] {
            let c = RunConfig::profile(p);
            c.validate().unwrap();
            let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn full_profile_carries_reference_settings() {
        let c = RunConfig::profile(Profile::Full);
        assert_eq!(c.federation.clients, 10);
        assert_eq!(c.federation.rounds, 50);
        assert_eq!(c.federation.local_epochs, 5);
        assert_eq!(c.federation.lr_hyper, 1e-3);
        assert_eq!(c.federation.dirichlet_alpha, 0.3);
        assert_eq!(c.federation.dp.clip_bound, 1.5);
        assert_eq!(c.federation.dp.target_epsilon, 1.0);
        assert_eq!(c.federation.dp.delta, 1e-4);
    }

    #[test]
    fn unknown_keys_are_rejected_with_field_name() {
        let err = RunConfig::from_json(r#"{"federation": {"roundz": 3}}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "federation.roundz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_keys_come_from_the_named_profile() {
        let c = RunConfig::from_json(r#"{"profile": "desk", "federation": {"rounds": 3}}"#).unwrap();
        let mut want = RunConfig::profile(Profile::Desk);
        want.federation.rounds = 3;
        assert_eq!(c, want);
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::profile(Profile::Full));
    }

    #[test]
    fn enum_values_can_switch_variant() {
        let c = RunConfig::from_json(r#"{"profile": "full", "data": {"label_skew": "iid"}}"#).unwrap();
        assert_eq!(c.data.label_skew, LabelSkew::Iid);
        let c = RunConfig::from_json(r#"{"profile": "desk", "data": {"label_skew": {"dirichlet": 0.5}}, "federation": {"dp": {"noise_multiplier": 2.0}}}"#).unwrap();
        assert_eq!(c.data.label_skew, LabelSkew::Dirichlet(0.5));
        assert_eq!(c.federation.dp.noise_multiplier.fixed(), Some(2.0));
    }

    #[test]
    fn zero_rounds_rejected() {
        let err = RunConfig::from_json(r#"{"federation": {"rounds": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "federation.rounds"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let arch = Architecture::new(RunConfig::default().model).unwrap();
        let phi = arch.init_phi(&mut ChaCha8Rng::seed_from_u64(0));
        let ck = Checkpoint {
            model: arch.cfg.clone(),
            phi: phi.clone(),
        };
        let mut bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.phi.as_slice(), phi.as_slice());
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Path::new("mem")),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
    }
}
