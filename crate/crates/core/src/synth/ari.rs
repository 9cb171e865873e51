use std::collections::HashMap;

use super::SynthError;

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(truth: &[usize], predicted: &[usize]) -> Result<f64, SynthError> {
    if truth.len() != predicted.len() {
        return Err(SynthError::LengthMismatch(truth.len(), predicted.len()));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in truth.iter().zip(predicted) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| pairs(v)).sum();
    let total = pairs(truth.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rand index over explicit pairs, adjusted with the permutation model.
    fn brute_force(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                both += f64::from(u8::from(sa && sb));
                in_a += f64::from(u8::from(sa));
                in_b += f64::from(u8::from(sb));
            }
        }
        let total = (n * (n - 1) / 2) as f64;
        let expected = in_a * in_b / total;
        (both - expected) / (0.5 * (in_a + in_b) - expected)
    }

    #[test]
    fn identical_and_permuted_labelings_score_one() {
        let t = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(adjusted_rand_index(&t, &t).unwrap(), 1.0);
        let p: Vec<usize> = t.iter().map(|&c| [5, 9, 1][c]).collect();
        assert!((adjusted_rand_index(&t, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_pairwise_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
            let got = adjusted_rand_index(&a, &b).unwrap();
            assert!((got - brute_force(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_labelings_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..7)).collect();
        let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..7)).collect();
        assert!(adjusted_rand_index(&a, &b).unwrap().abs() < 0.02);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            adjusted_rand_index(&[0, 1], &[0]).unwrap_err(),
            SynthError::LengthMismatch(2, 1)
        );
    }
}
