use std::collections::BTreeMap;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub subject_wise: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2, subject_wise: false, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Source indices of each part, sorted ascending.
    pub indices: [Vec<usize>; 3],
}

/// Train gets `round(f_train*N)` samples, val `round(f_val*N)`, test the rest.
/// In subject-wise mode whole subjects are assigned greedily in shuffled order
/// until each quota is met.
pub fn split_indices(n: usize, subjects: Option<&[i32]>, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let n_train = ((spec.train * n as f64).round() as usize).min(n);
    let n_val = ((spec.val * n as f64).round() as usize).min(n - n_train);
    let mut rng = Rng::new(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();

    if spec.subject_wise {
        let subjects =
            subjects.ok_or_else(|| Error::Config("subject-wise split requires subject ids".into()))?;
        let mut by_subject: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, &s) in subjects.iter().enumerate().take(n) {
            by_subject.entry(s).or_default().push(i);
        }
        let mut groups: Vec<Vec<usize>> = by_subject.into_values().collect();
        rng.shuffle(&mut groups);
        for g in groups {
            let slot = if parts[0].len() < n_train {
                0
            } else if parts[1].len() < n_val {
                1
            } else {
                2
            };
            parts[slot].extend(g);
        }
    } else {
        let perm = rng.permutation(n);
        parts[0] = perm[..n_train].to_vec();
        parts[1] = perm[n_train..n_train + n_val].to_vec();
        parts[2] = perm[n_train + n_val..].to_vec();
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let indices = split_indices(ds.len(), ds.subjects.as_deref(), spec)?;
    Ok(Splits {
        train: ds.subset(&indices[0]),
        val: ds.subset(&indices[1]),
        test: ds.subset(&indices[2]),
        indices,
    })
}

/// Random subset of `round(fraction*N)` samples (at least one). When
/// `stratified`, each present class keeps `max(1, round(fraction*n_c))`.
pub fn label_subsample_indices(
    labels: &[usize],
    classes: usize,
    fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Param(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    let mut rng = Rng::new(seed);
    let mut picked = if stratified {
        let mut per_class = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            per_class[l].push(i);
        }
        let mut picked = Vec::new();
        for mut members in per_class.into_iter().filter(|m| !m.is_empty()) {
            let k = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
            rng.shuffle(&mut members);
            picked.extend_from_slice(&members[..k]);
        }
        picked
    } else {
        let n = labels.len();
        let k = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
        let mut perm = rng.permutation(n);
        perm.truncate(k);
        perm
    };
    picked.sort_unstable();
    Ok(picked)
}

pub fn label_subsample(ds: &Dataset, fraction: f64, stratified: bool, seed: u64) -> Result<Dataset> {
    let idx = label_subsample_indices(&ds.labels, ds.classes, fraction, stratified, seed)?;
    Ok(ds.subset(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize, subjects: Option<Vec<i32>>) -> Dataset {
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new("s", (0..n).map(|i| i as f64).collect(), labels, subjects, 1, 1, 3).unwrap()
    }

    #[test]
    fn sixty_twenty_twenty() {
        let s = split_dataset(&dataset(100, None), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
    }

    #[test]
    fn same_seed_same_indices() {
        let spec = SplitSpec { seed: 11, ..SplitSpec::default() };
        let a = split_indices(57, None, &spec).unwrap();
        let b = split_indices(57, None, &spec).unwrap();
        assert_eq!(a, b);
        let c = split_indices(57, None, &SplitSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn subject_wise_needs_subjects() {
        let spec = SplitSpec { subject_wise: true, ..SplitSpec::default() };
        assert!(matches!(split_dataset(&dataset(10, None), &spec), Err(Error::Config(_))));
    }

    #[test]
    fn bad_fractions() {
        for (a, b, c) in [(0.6, 0.2, 0.3), (0.8, 0.2, 0.0), (1.2, -0.1, -0.1)] {
            let spec = SplitSpec { train: a, val: b, test: c, ..SplitSpec::default() };
            assert!(spec.validate().is_err());
        }
    }

    #[test]
    fn subsample_sizes() {
        let labels: Vec<usize> = (0..9200).map(|i| i % 2).collect();
        assert_eq!(label_subsample_indices(&labels, 2, 0.01, false, 0).unwrap().len(), 92);
        assert_eq!(label_subsample_indices(&labels, 2, 0.10, false, 0).unwrap().len(), 920);
        assert_eq!(label_subsample_indices(&labels, 2, 1.0, false, 0).unwrap(), (0..9200).collect::<Vec<_>>());
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(label_subsample_indices(&labels, 2, f, false, 0).is_err());
        }
    }

    #[test]
    fn stratified_keeps_proportions() {
        let labels: Vec<usize> = (0..100).map(|i| if i < 60 { 0 } else if i < 90 { 1 } else { 2 }).collect();
        for f in [0.05, 0.1, 0.33, 0.5] {
            let idx = label_subsample_indices(&labels, 3, f, true, 3).unwrap();
            let mut counts = [0usize; 3];
            for &i in &idx {
                counts[labels[i]] += 1;
            }
            for (c, n_c) in [60.0, 30.0, 10.0].into_iter().enumerate() {
                let want = (f * n_c).max(1.0);
                assert!((counts[c] as f64 - want).abs() <= 1.0, "f={f} class {c}: {counts:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn splits_partition_indices(n in 3usize..300, seed in 0u64..1000, a in 0.1f64..0.8) {
            let spec = SplitSpec { train: a, val: (1.0 - a) / 2.0, test: (1.0 - a) / 2.0, subject_wise: false, seed };
            let parts = split_indices(n, None, &spec).unwrap();
            let mut all: Vec<usize> = parts.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn subject_wise_keeps_subjects_together(n in 10usize..200, n_subj in 1i32..15, seed in 0u64..1000) {
            let subjects: Vec<i32> = (0..n as i32).map(|i| i % n_subj).collect();
            let spec = SplitSpec { subject_wise: true, seed, ..SplitSpec::default() };
            let parts = split_indices(n, Some(&subjects), &spec).unwrap();
            let mut all: Vec<usize> = parts.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sets: Vec<std::collections::HashSet<i32>> =
                parts.iter().map(|p| p.iter().map(|&i| subjects[i]).collect()).collect();
            for x in 0..3 {
                for y in x + 1..3 {
                    prop_assert!(sets[x].is_disjoint(&sets[y]));
                }
            }
        }

        #[test]
        fn subsample_is_a_sorted_subset(n in 1usize..500, f in 0.001f64..1.0, strat: bool, seed in 0u64..100) {
            let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 4).collect();
            let idx = label_subsample_indices(&labels, 4, f, strat, seed).unwrap();
            prop_assert!(!idx.is_empty());
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(*idx.last().unwrap() < n);
            prop_assert_eq!(&idx, &label_subsample_indices(&labels, 4, f, strat, seed).unwrap());
        }
    }
}
