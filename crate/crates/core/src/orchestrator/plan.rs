//! Deterministic expansion of a manifest into run cells.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OrchestratorError;
use crate::workspace::{Item, Manifest};

/// Which temperature a plan samples at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    /// `S` replicates at the estimation temperature.
    #[default]
    Estimation,
    /// One draw per (item, prompt, model) at the final temperature.
    Final,
}

/// Identity of one draw `y_{ius}^{(m)}`; indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub item_id: String,
    pub u: usize,
    pub s: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub derived_seed: u64,
    /// Label indices in display order.
    pub option_permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub pass: Pass,
    pub cells: Vec<Cell>,
}

/// Keyed hash of the cell coordinates and retry index, truncated to 64 bits.
pub fn derive_seed(domain: &str, base_seed: u64, item_id: &str, u: usize, s: usize, m: usize, retry: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0]);
    h.update(base_seed.to_le_bytes());
    h.update((item_id.len() as u64).to_le_bytes());
    h.update(item_id.as_bytes());
    for x in [u as u64, s as u64, m as u64, u64::from(retry)] {
        h.update(x.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed for attempt `retry` of a cell (attempt 0 is the cell's own seed).
pub fn attempt_seed(collection_seed: u64, id: &CellId, retry: u32) -> u64 {
    derive_seed("collection", collection_seed, &id.item_id, id.u, id.s, id.m, retry)
}

pub fn plan_runs(manifest: &Manifest, items: &[Item], k: usize, pass: Pass) -> Result<RunPlan, OrchestratorError> {
    if items.is_empty() {
        return Err(OrchestratorError::EmptyCorpus);
    }
    let samples = match pass {
        Pass::Estimation => manifest.s,
        Pass::Final => 1,
    };
    let mut cells = Vec::with_capacity(items.len() * manifest.p * samples * manifest.m);
    for item in items {
        for u in 1..=manifest.p {
            for m in 1..=manifest.m {
                for s in 1..=samples {
                    let id = CellId { item_id: item.item_id.clone(), u, s, m };
                    let mut perm: Vec<usize> = (0..k).collect();
                    if manifest.randomize_options {
                        let seed = derive_seed("shuffle", manifest.seeds.shuffling, &id.item_id, u, s, m, 0);
                        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                    }
                    let derived_seed = attempt_seed(manifest.seeds.collection, &id, 0);
                    cells.push(Cell { id, derived_seed, option_permutation: perm });
                }
            }
        }
    }
    Ok(RunPlan { pass, cells })
}
