use rand::seq::SliceRandom;

use super::{Dataset, Label, SplitTag};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Stratified three-way split into (train, val, test).
///
/// Each class is shuffled with a seed derived from `(seed, class)` and cut
/// by largest-remainder rounding of `fractions`. Within each part samples
/// keep their original relative order.
pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(fractions.to_vec()));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in Label::ALL {
        let mut idx: Vec<usize> = dataset
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng_for(seed, label.index() as u64));
        let sizes = allocate(idx.len(), &fractions);
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    let tags = [SplitTag::Train, SplitTag::Val, SplitTag::Test];
    let mut out = Vec::with_capacity(3);
    for (mut part, tag) in parts.into_iter().zip(tags) {
        part.sort_unstable();
        if part.is_empty() {
            return Err(Error::InvalidDataset(format!("split {tag:?} would be empty")));
        }
        out.push(dataset.select(&part, tag)?);
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val, test))
}

/// Largest-remainder apportionment of `n` items by `fractions`.
fn allocate(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::*;
    use crate::data::Sample;

    fn dataset(n_per_class: usize) -> Dataset {
        let samples: Vec<Sample> = (0..2 * n_per_class)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Truthful } else { Label::Ooc };
                sample(&format!("s{i}"), label, &[1.0, i as f32], &[0.5, 1.0])
            })
            .collect();
        Dataset::new(samples, SplitTag::Train, "t").unwrap()
    }

    #[test]
    fn sizes_and_ratios() {
        let ds = dataset(500);
        let (tr, va, te) = split_dataset(&ds, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (800, 100, 100));
        for part in [&tr, &va, &te] {
            let c = part.class_counts();
            assert!((c[0] as i64 - c[1] as i64).abs() <= 1);
        }
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let ds = dataset(37);
        let (tr, va, te) = split_dataset(&ds, [0.6, 0.25, 0.15], 9).unwrap();
        let mut ids: Vec<&str> = tr
            .samples()
            .iter()
            .chain(va.samples())
            .chain(te.samples())
            .map(|s| s.id.as_str())
            .collect();
        ids.sort_unstable();
        let mut all: Vec<&str> = ds.samples().iter().map(|s| s.id.as_str()).collect();
        all.sort_unstable();
        assert_eq!(ids, all);
    }

    #[test]
    fn bad_fractions() {
        let ds = dataset(10);
        assert!(matches!(
            split_dataset(&ds, [0.5, 0.5, 0.1], 0),
            Err(Error::BadFractions(_))
        ));
    }

    #[test]
    fn deterministic_in_seed() {
        let ds = dataset(50);
        let a = split_dataset(&ds, [0.8, 0.1, 0.1], 1).unwrap();
        let b = split_dataset(&ds, [0.8, 0.1, 0.1], 1).unwrap();
        let c = split_dataset(&ds, [0.8, 0.1, 0.1], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn allocation_sums_to_n() {
        for n in 1..50 {
            let s = allocate(n, &[0.7, 0.2, 0.1]);
            assert_eq!(s.iter().sum::<usize>(), n);
        }
    }
}
