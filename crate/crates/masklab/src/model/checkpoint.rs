//! Versioned snapshots of a training run.
//!
//! A checkpoint carries everything needed to resume or re-evaluate:
//! parameters, optimizer moments, the invisible-token set in force, the
//! run seed, and how many iterations have completed. JSON keeps every
//! `f64` exact (shortest round-trip formatting), so save/load is bitwise
//! faithful.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{AdamState, Parameters};
use crate::visibility::InvisibleSet;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Parameters,
    /// Present when the run may resume; evaluation-only snapshots drop it.
    pub optimizer: Option<AdamState>,
    pub invisible: Option<InvisibleSet>,
    pub run_seed: u64,
    pub iterations_done: usize,
}

/// The version field alone, for cheap compatibility probing.
#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl Checkpoint {
    pub fn new(params: Parameters, run_seed: u64) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params,
            optimizer: None,
            invisible: None,
            run_seed,
            iterations_done: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Rejects other versions before attempting a full parse, so a format
    /// change surfaces as a version error rather than a field mismatch.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let probe: VersionProbe = serde_json::from_slice(&bytes)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_slice(&bytes)?)
    }
}
