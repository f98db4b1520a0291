//! Seeded inputs shared by the benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` rows of `dim` uniform values in [-1, 1).
pub fn random_matrix(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// `n` action sequences of length 1 to `max_len` over `arity` tools.
pub fn random_sequences(n: usize, max_len: usize, arity: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len).map(|_| rng.gen_range(0..arity)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_seeded() {
        assert_eq!(random_matrix(3, 4, 1), random_matrix(3, 4, 1));
        assert_ne!(random_matrix(3, 4, 1), random_matrix(3, 4, 2));
        assert!(random_sequences(50, 6, 3, 0).iter().all(|s| (1..=6).contains(&s.len())));
    }
}
