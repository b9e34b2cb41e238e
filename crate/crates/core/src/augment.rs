//! Weak (scale + jitter) and strong (segment permutation + jitter) views.

use crate::data::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub max_segments: usize,
    pub jitter_sigma_weak: f64,
    pub jitter_sigma_strong: f64,
    pub scale_mean: f64,
    pub scale_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_segments: 10,
            jitter_sigma_weak: 0.05,
            jitter_sigma_strong: 0.8,
            scale_mean: 2.0,
            scale_sigma: 0.1,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_segments == 0 {
            return Err(Error::Param("max_segments must be at least 1".into()));
        }
        for (name, v) in [
            ("jitter_sigma_weak", self.jitter_sigma_weak),
            ("jitter_sigma_strong", self.jitter_sigma_strong),
            ("scale_sigma", self.scale_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !self.scale_mean.is_finite() {
            return Err(Error::Param("scale_mean must be finite".into()));
        }
        Ok(())
    }
}

/// How one series was cut and reordered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPermutation {
    /// Segment start positions, ascending, beginning with 0.
    pub starts: Vec<usize>,
    /// Output segment `j` is input segment `order[j]`.
    pub order: Vec<usize>,
    pub length: usize,
}

impl SegmentPermutation {
    pub fn segments(&self) -> usize {
        self.starts.len()
    }

    pub fn segment_range(&self, s: usize) -> std::ops::Range<usize> {
        let end = self.starts.get(s + 1).copied().unwrap_or(self.length);
        self.starts[s]..end
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        (0..self.segments()).map(|s| self.segment_range(s).len()).collect()
    }

    pub fn apply(&self, series: &[f64]) -> Vec<f64> {
        debug_assert_eq!(series.len(), self.length);
        let mut out = Vec::with_capacity(self.length);
        for &s in &self.order {
            out.extend_from_slice(&series[self.segment_range(s)]);
        }
        out
    }

    /// `m - 1` distinct interior cut points and a uniform segment order.
    pub fn draw(length: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        if m == 0 || m > length {
            return Err(Error::Param(format!("segment count {m} outside 1..={length}")));
        }
        let mut interior: Vec<usize> = (1..length).collect();
        for i in 0..m - 1 {
            let j = i + rng.below(interior.len() - i);
            interior.swap(i, j);
        }
        let mut starts = vec![0];
        starts.extend_from_slice(&interior[..m - 1]);
        starts.sort_unstable();
        let order = rng.permutation(m);
        Ok(Self { starts, order, length })
    }
}

pub fn segment_permute(series: &[f64], m: usize, rng: &mut Rng) -> Result<(Vec<f64>, SegmentPermutation)> {
    let perm = SegmentPermutation::draw(series.len(), m, rng)?;
    Ok((perm.apply(series), perm))
}

fn add_jitter(values: &mut [f64], sigma: f64, rng: &mut Rng) {
    if sigma > 0.0 {
        values.iter_mut().for_each(|v| *v += rng.normal(0.0, sigma));
    }
}

/// Each sample-channel is scaled by `s ~ N(scale_mean, scale_sigma^2)`, then
/// jittered. Sample `i` draws from `rng.split(i)`.
pub fn weak_augment(x: &TimeSeriesBatch, p: &AugmentParams, rng: &Rng) -> Result<TimeSeriesBatch> {
    p.validate()?;
    let l = x.length;
    let mut values = x.values.clone();
    for (i, sample) in values.chunks_mut(x.channels * l).enumerate() {
        let mut r = rng.split(i as u64);
        for channel in sample.chunks_mut(l) {
            let s = r.normal(p.scale_mean, p.scale_sigma);
            if s != 1.0 {
                channel.iter_mut().for_each(|v| *v *= s);
            }
        }
        add_jitter(sample, p.jitter_sigma_weak, &mut r);
    }
    Ok(x.with_values(values))
}

pub fn strong_augment(x: &TimeSeriesBatch, p: &AugmentParams, rng: &Rng) -> Result<TimeSeriesBatch> {
    strong_augment_traced(x, p, rng).map(|(b, _)| b)
}

/// [`strong_augment`] plus the permutation applied to every sample. All
/// channels of a sample share one permutation.
pub fn strong_augment_traced(
    x: &TimeSeriesBatch,
    p: &AugmentParams,
    rng: &Rng,
) -> Result<(TimeSeriesBatch, Vec<SegmentPermutation>)> {
    p.validate()?;
    let l = x.length;
    if p.max_segments > l {
        return Err(Error::Param(format!("max_segments {} exceeds series length {l}", p.max_segments)));
    }
    let mut values = Vec::with_capacity(x.values.len());
    let mut records = Vec::with_capacity(x.batch);
    for i in 0..x.batch {
        let mut r = rng.split(i as u64);
        let m = 1 + r.below(p.max_segments);
        let perm = SegmentPermutation::draw(l, m, &mut r)?;
        let start = values.len();
        for channel in x.sample(i).chunks(l) {
            values.extend(perm.apply(channel));
        }
        add_jitter(&mut values[start..], p.jitter_sigma_strong, &mut r);
        records.push(perm);
    }
    Ok((x.with_values(values), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn batch(b: usize, c: usize, l: usize, seed: u64) -> TimeSeriesBatch {
        let mut rng = Rng::new(seed);
        let values = (0..b * c * l).map(|_| rng.normal(0.0, 1.0)).collect();
        let mut x = TimeSeriesBatch::from_values(values, b, c, l).unwrap();
        x.labels = Some((0..b).map(|i| i % 3).collect());
        x.subjects = Some((0..b as i32).collect());
        x
    }

    fn bits(x: &TimeSeriesBatch) -> Vec<u64> {
        x.values.iter().map(|v| v.to_bits()).collect()
    }

    fn quiet() -> AugmentParams {
        AugmentParams { jitter_sigma_weak: 0.0, jitter_sigma_strong: 0.0, scale_sigma: 0.0, ..AugmentParams::default() }
    }

    #[test]
    fn weak_scaling_by_two_is_exact() {
        let x = batch(4, 3, 20, 1);
        let y = weak_augment(&x, &quiet(), &Rng::new(5)).unwrap();
        for (a, b) in x.values.iter().zip(&y.values) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn identity_configs_are_bit_identical() {
        let mut x = batch(4, 2, 33, 2);
        x.values[3] = -0.0;
        let weak = AugmentParams { scale_mean: 1.0, ..quiet() };
        assert_eq!(bits(&weak_augment(&x, &weak, &Rng::new(9)).unwrap()), bits(&x));
        let strong = AugmentParams { max_segments: 1, ..quiet() };
        assert_eq!(bits(&strong_augment(&x, &strong, &Rng::new(9)).unwrap()), bits(&x));
    }

    #[test]
    fn weak_jitter_moments() {
        let x = batch(100, 10, 100, 3);
        let p = AugmentParams { jitter_sigma_weak: 0.05, scale_sigma: 0.0, ..AugmentParams::default() };
        let y = weak_augment(&x, &p, &Rng::new(4)).unwrap();
        let eps: Vec<f64> = y.values.iter().zip(&x.values).map(|(b, a)| b - 2.0 * a).collect();
        let n = eps.len() as f64;
        let mean = eps.iter().sum::<f64>() / n;
        let std = (eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((std - 0.05).abs() < 0.005, "std {std}");
    }

    #[test]
    fn weak_scale_is_per_sample_channel() {
        let x = TimeSeriesBatch::from_values(vec![1.0; 2 * 3 * 8], 2, 3, 8).unwrap();
        let p = AugmentParams { jitter_sigma_weak: 0.0, ..AugmentParams::default() };
        let y = weak_augment(&x, &p, &Rng::new(0)).unwrap();
        let scales: Vec<f64> = y.values.chunks(8).map(|c| c[0]).collect();
        for (c, &s) in y.values.chunks(8).zip(&scales) {
            assert!(c.iter().all(|&v| v == s));
        }
        let distinct: std::collections::HashSet<u64> = scales.iter().map(|s| s.to_bits()).collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn epilepsy_length_segments() {
        let x = batch(50, 1, 178, 5);
        let p = AugmentParams { max_segments: 12, jitter_sigma_strong: 0.0, ..AugmentParams::default() };
        let (_, records) = strong_augment_traced(&x, &p, &Rng::new(1)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for r in records {
            assert!((1..=12).contains(&r.segments()));
            assert_eq!(r.segment_lengths().len(), r.segments());
            assert!(r.segment_lengths().iter().all(|&n| n > 0));
            assert_eq!(r.segment_lengths().iter().sum::<usize>(), 178);
            seen.insert(r.segments());
        }
        assert!(seen.len() > 5, "segment counts {seen:?}");
    }

    #[test]
    fn too_many_segments() {
        let x = batch(1, 1, 8, 0);
        let p = AugmentParams { max_segments: 9, ..AugmentParams::default() };
        assert!(matches!(strong_augment(&x, &p, &Rng::new(0)), Err(Error::Param(_))));
        let mut r = Rng::new(0);
        assert!(segment_permute(&[1.0, 2.0], 3, &mut r).is_err());
        assert!(segment_permute(&[1.0, 2.0], 0, &mut r).is_err());
    }

    #[test]
    fn segment_permute_edges() {
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        let (y, rec) = segment_permute(&s, 1, &mut Rng::new(3)).unwrap();
        assert_eq!(y, s);
        assert_eq!(rec.order, vec![0]);
        let (y, rec) = segment_permute(&s, 10, &mut Rng::new(3)).unwrap();
        assert_eq!(rec.starts, (0..10).collect::<Vec<_>>());
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, s);
        let again = segment_permute(&s, 10, &mut Rng::new(3)).unwrap();
        assert_eq!(again.1, rec);
    }

    #[test]
    fn channels_share_one_permutation() {
        let l = 40;
        let values: Vec<f64> = (0..3).flat_map(|c| (0..l).map(move |t| (c * 1000 + t) as f64)).collect();
        let x = TimeSeriesBatch::from_values(values, 1, 3, l).unwrap();
        let p = AugmentParams { jitter_sigma_strong: 0.0, ..AugmentParams::default() };
        let y = strong_augment(&x, &p, &Rng::new(8)).unwrap();
        let base: Vec<f64> = y.values[..l].to_vec();
        for c in 1..3 {
            for t in 0..l {
                assert_eq!(y.values[c * l + t], base[t] + (c * 1000) as f64);
            }
        }
    }

    proptest! {
        #[test]
        fn strong_without_jitter_preserves_channel_multisets(
            b in 1usize..5, c in 1usize..4, l in 4usize..60, m in 1usize..12, seed in 0u64..10_000
        ) {
            let x = batch(b, c, l, seed);
            let p = AugmentParams { max_segments: m.min(l), jitter_sigma_strong: 0.0, ..AugmentParams::default() };
            let y = strong_augment(&x, &p, &Rng::new(seed + 1)).unwrap();
            for (cx, cy) in x.values.chunks(l).zip(y.values.chunks(l)) {
                let mut a: Vec<u64> = cx.iter().map(|v| v.to_bits()).collect();
                let mut bb: Vec<u64> = cy.iter().map(|v| v.to_bits()).collect();
                a.sort_unstable();
                bb.sort_unstable();
                prop_assert_eq!(a, bb);
            }
        }

        #[test]
        fn augmentations_preserve_metadata_and_determinism(b in 1usize..6, c in 1usize..4, l in 10usize..40, seed in 0u64..10_000) {
            let x = batch(b, c, l, seed);
            let p = AugmentParams::default();
            for f in [weak_augment, strong_augment] {
                let y = f(&x, &p, &Rng::new(seed)).unwrap();
                prop_assert_eq!((y.batch, y.channels, y.length), (b, c, l));
                prop_assert_eq!(&y.labels, &x.labels);
                prop_assert_eq!(&y.subjects, &x.subjects);
                prop_assert_eq!(bits(&y), bits(&f(&x, &p, &Rng::new(seed)).unwrap()));
            }
        }
    }
}
