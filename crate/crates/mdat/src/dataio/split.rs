use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::{Error, Result};

/// Stratified train/test partition of sample indices.
///
/// Each class with `n` samples contributes `round(fraction * n)` samples
/// to the training part, clamped so that both parts get at least one. Both
/// index lists are in ascending order.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(mdat_core::Error::InsufficientSamples {
                class,
                needed: 2,
                available: members.len(),
            }
            .into());
        }
        let n = members.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_dataset(samples: &[Sample], train_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (train, test) = stratified_split(&labels, train_fraction, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| samples[i].clone()).collect();
    Ok((pick(train), pick(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eighty_twenty_per_class() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let (train, test) = stratified_split(&labels, 0.8, 3).unwrap();
        for c in 0..4 {
            assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 80);
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
        assert_eq!(stratified_split(&labels, 0.8, 3).unwrap(), (train, test));
    }

    #[test]
    fn singleton_class_is_rejected() {
        assert!(stratified_split(&[0, 0, 1], 0.5, 0).is_err());
        assert!(stratified_split(&[0, 0], 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_and_balanced(
            counts in prop::collection::vec(2usize..30, 1..6),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
            let (train, test) = stratified_split(&labels, fraction, seed).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in counts.iter().enumerate() {
                let got = train.iter().filter(|&&i| labels[i] == c).count() as f64;
                let want = fraction * n as f64;
                prop_assert!((got - want).abs() <= 1.0);
            }
        }
    }
}
