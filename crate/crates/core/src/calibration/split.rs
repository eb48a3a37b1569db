//! Deterministic fit / held-out partition of item ids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

/// Split ids into `(fit, held_out)`. Ids are sorted and deduplicated
/// before a seeded shuffle, so the result does not depend on input order.
pub fn held_out_split(ids: &[String], seed: u64, holdout_fraction: f64) -> (Vec<String>, Vec<String>) {
    let mut ids: Vec<String> = ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_hold = ((ids.len() as f64) * holdout_fraction.clamp(0.0, 1.0)).round() as usize;
    let held = ids.split_off(ids.len() - n_hold);
    let mut fit = ids;
    let mut held = held;
    fit.sort();
    held.sort();
    (fit, held)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent_and_disjoint() {
        let ids: Vec<String> = (0..50).map(|i| format!("item-{i:03}")).collect();
        let mut rev = ids.clone();
        rev.reverse();
        let (fit, held) = held_out_split(&ids, 9, DEFAULT_HOLDOUT_FRACTION);
        assert_eq!((fit.clone(), held.clone()), held_out_split(&rev, 9, DEFAULT_HOLDOUT_FRACTION));
        assert_eq!(held.len(), 10);
        assert_eq!(fit.len(), 40);
        assert!(held.iter().all(|h| !fit.contains(h)));
        assert_ne!(held, held_out_split(&ids, 10, DEFAULT_HOLDOUT_FRACTION).1);
    }
}
