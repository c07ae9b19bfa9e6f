//! Word deletion and bounded local shuffling for the denoising objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::subword::{IdSequence, NUM_SPECIALS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub drop_prob: f64,
    pub shuffle_window: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.1,
            shuffle_window: 3,
        }
    }
}

/// Drops each non-special unit with `drop_prob` (keeping at least one), then
/// sorts survivors by `i + U(0, window + 1)`, which moves no unit more than
/// `window` places. Anchor flags travel with their units.
pub fn corrupt<R: Rng + ?Sized>(seq: &IdSequence, cfg: &NoiseConfig, rng: &mut R) -> IdSequence {
    if seq.is_empty() {
        return seq.clone();
    }
    let mut kept: Vec<usize> = (0..seq.len())
        .filter(|&i| seq.ids[i] < NUM_SPECIALS || cfg.drop_prob <= 0.0 || !rng.random_bool(cfg.drop_prob))
        .collect();
    if kept.is_empty() {
        kept.push(rng.random_range(0..seq.len()));
    }
    if cfg.shuffle_window > 0 {
        let span = cfg.shuffle_window as f64 + 1.0;
        let mut keyed: Vec<(f64, usize)> = kept
            .iter()
            .enumerate()
            .map(|(pos, &orig)| (pos as f64 + rng.random::<f64>() * span, orig))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        kept = keyed.into_iter().map(|(_, i)| i).collect();
    }
    IdSequence {
        ids: kept.iter().map(|&i| seq.ids[i]).collect(),
        anchor_mask: kept.iter().map(|&i| seq.anchor_mask[i]).collect(),
    }
}
