use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ChannelSequence;
use crate::error::{invalid, Result};

/// New sequence whose element `k` is `seq[indices[k]]`, renumbered from
/// slot 0.
pub fn augment_with_indices(seq: &ChannelSequence, indices: &[usize]) -> Result<ChannelSequence> {
    if indices.is_empty() {
        return Err(invalid("augmented sequence needs at least one element"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= seq.len()) {
        return Err(invalid(format!("index {bad} outside sequence of {}", seq.len())));
    }
    let slots = indices
        .iter()
        .enumerate()
        .map(|(k, &i)| seq.slots()[i].clone().with_slot(k as u64))
        .collect();
    let positions = indices.iter().map(|&i| seq.positions()[i]).collect();
    ChannelSequence::new(slots, positions, seq.mobility)
}

pub fn augment_sequence(seq: &ChannelSequence, out_len: usize, seed: u64) -> Result<ChannelSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..out_len).map(|_| rng.random_range(0..seq.len())).collect();
    augment_with_indices(seq, &indices)
}
