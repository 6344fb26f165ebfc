//! JSON checkpoints. Floats are written with shortest round-trip formatting
//! and parsed with correct rounding, so a load reproduces every bit.

use std::fs;
use std::path::Path;

use crate::error::{GcdError, Result};
use crate::losses::EmaState;
use crate::model::ModelParams;
use crate::trainer::{TrainConfig, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// FNV-1a hash of the canonical JSON form of the training config.
    pub config_hash: String,
    pub epoch: usize,
    pub params: ModelParams,
    pub ema: EmaState,
}

/// Stable 64-bit FNV-1a digest of the config, as 16 hex digits.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serialises");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, cfg: &TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(cfg),
            epoch: state.epoch,
            params: state.params.clone(),
            ema: state.ema.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| GcdError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(s).map_err(|e| GcdError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(GcdError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use proptest::prelude::*;

    #[test]
    fn hash_tracks_config() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            beta: 0.5,
            ..a.clone()
        };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn version_mismatch_rejected() {
        let cfg = TrainConfig::default();
        let state = TrainState::new(&ModelDims::new(3, 2), &cfg).unwrap();
        let mut ck = Checkpoint::from_state(&state, &cfg);
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), scale in 1e-300f64..1e300) {
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let mut state = TrainState::new(&ModelDims::new(4, 3), &cfg).unwrap();
            state.params.w1.as_mut_slice()[0] *= scale;
            state.params.b1.as_mut_slice()[0] = -0.0;
            let ck = Checkpoint::from_state(&state, &cfg);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let bits = |c: &Checkpoint| c.params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&ck), bits(&back));
            prop_assert_eq!(ck, back);
        }
    }
}
