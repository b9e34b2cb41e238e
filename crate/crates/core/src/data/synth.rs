//! Synthetic labeled time series with one generative family per class.

use std::f64::consts::TAU;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassFamily {
    /// Sine wave with frequency drawn from a band.
    Sinusoid,
    Sawtooth,
    /// Fixed pseudo-noise carrier under a Gaussian envelope.
    NoiseBurst,
    /// Resonant AR(2) process driven by fixed innovations.
    Ar2,
}

impl ClassFamily {
    /// Classes cycle through the four families; later cycles move to higher
    /// frequency bands.
    pub fn of_class(class: usize) -> (ClassFamily, usize) {
        let family = match class % 4 {
            0 => ClassFamily::Sinusoid,
            1 => ClassFamily::Sawtooth,
            2 => ClassFamily::NoiseBurst,
            _ => ClassFamily::Ar2,
        };
        (family, class / 4)
    }

    /// Cycles per window.
    fn band(self, variant: usize) -> (f64, f64) {
        let (lo, hi) = match self {
            ClassFamily::Sinusoid => (3.0, 6.0),
            ClassFamily::Sawtooth => (2.0, 4.0),
            ClassFamily::NoiseBurst => (0.8, 1.2),
            ClassFamily::Ar2 => (8.0, 12.0),
        };
        let k = 1.0 + 1.5 * variant as f64;
        (lo * k, hi * k)
    }
}

/// Global working-condition change applied before normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainShift {
    /// Multiplies the clean signal.
    pub scale: f64,
    /// Standard deviation of extra additive noise.
    pub noise_floor: f64,
    /// Multiplies every drawn frequency.
    pub freq_scale: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self { scale: 1.0, noise_floor: 0.0, freq_scale: 1.0 }
    }
}

impl DomainShift {
    /// Number of built-in working conditions.
    pub const PRESETS: usize = 4;

    /// Built-in working condition `i` (0 is unshifted).
    pub fn preset(i: usize) -> Result<Self> {
        let (scale, noise_floor, freq_scale) = match i {
            0 => (1.0, 0.0, 1.0),
            1 => (1.6, 0.3, 1.08),
            2 => (0.6, 0.5, 0.93),
            3 => (1.2, 0.9, 1.15),
            _ => return Err(Error::Param(format!("domain preset {i} outside 0..{}", Self::PRESETS))),
        };
        Ok(Self { scale, noise_floor, freq_scale })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub classes: usize,
    pub samples: usize,
    pub channels: usize,
    pub length: usize,
    /// Standard deviation of additive Gaussian noise on the clean signal.
    pub noise: f64,
    pub shift: DomainShift,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            classes: 3,
            samples: 2500,
            channels: 3,
            length: 128,
            noise: 0.6,
            shift: DomainShift::default(),
            subjects: 10,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.length < 32 {
            return bad(format!("series length must be at least 32, got {}", self.length));
        }
        if self.samples == 0 || self.channels == 0 || self.subjects == 0 {
            return bad("samples, channels and subjects must be positive".into());
        }
        let s = &self.shift;
        if !(self.noise >= 0.0 && self.noise.is_finite() && s.noise_floor >= 0.0 && s.noise_floor.is_finite()) {
            return bad("noise levels must be finite and non-negative".into());
        }
        if !(s.scale > 0.0 && s.scale.is_finite() && s.freq_scale > 0.0 && s.freq_scale.is_finite()) {
            return bad("domain scale factors must be finite and positive".into());
        }
        Ok(())
    }

    /// Per-sample generative draws, in dataset order, before noise.
    pub fn sample_params(&self) -> Result<Vec<SampleParams>> {
        self.validate()?;
        let root = Rng::new(self.seed);
        let mut labels: Vec<usize> = (0..self.samples).map(|i| i % self.classes).collect();
        root.split(1).shuffle(&mut labels);
        let draws = root.split(2);
        Ok(labels
            .into_iter()
            .enumerate()
            .map(|(i, class)| {
                let mut rng = draws.split(i as u64);
                let (family, variant) = ClassFamily::of_class(class);
                let (lo, hi) = family.band(variant);
                SampleParams {
                    class,
                    freq: rng.uniform_range(lo, hi) * self.shift.freq_scale,
                    amplitude: rng.uniform_range(0.8, 1.2),
                    phase: rng.uniform_range(0.0, TAU),
                }
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleParams {
    pub class: usize,
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl SampleParams {
    /// Noise-free `(channels, length)` signal.
    pub fn render(&self, channels: usize, length: usize) -> Vec<f64> {
        let (family, variant) = ClassFamily::of_class(self.class);
        let a = self.amplitude;
        let mut out = Vec::with_capacity(channels * length);
        for ch in 0..channels {
            let offset = 0.7 * ch as f64;
            let gain = 1.0 / (1.0 + 0.25 * ch as f64);
            let phase = self.phase + offset;
            match family {
                ClassFamily::Sinusoid => out.extend((0..length).map(|t| {
                    let tau = t as f64 / length as f64;
                    gain * a * (TAU * self.freq * tau + phase).sin()
                })),
                ClassFamily::Sawtooth => out.extend((0..length).map(|t| {
                    let tau = t as f64 / length as f64;
                    let u = self.freq * tau + phase / TAU;
                    gain * a * (2.0 * (u - u.floor()) - 1.0)
                })),
                ClassFamily::NoiseBurst => {
                    let mut carrier = Rng::new(0xB0_0000 + variant as u64).split(ch as u64);
                    let center = 0.2 + 0.6 * self.phase / TAU;
                    let width = 0.08 * self.freq;
                    out.extend((0..length).map(|t| {
                        let tau = t as f64 / length as f64;
                        let env = (-0.5 * ((tau - center) / width).powi(2)).exp();
                        2.0 * gain * a * env * carrier.normal(0.0, 1.0)
                    }));
                }
                ClassFamily::Ar2 => {
                    let r: f64 = 0.97;
                    let theta = TAU * self.freq / length as f64;
                    let (c1, c2) = (2.0 * r * theta.cos(), -r * r);
                    let start = ((self.phase / TAU) * length as f64) as usize;
                    let mut innov = Rng::new(0xA2_0000 + variant as u64).split(ch as u64);
                    let total = 2 * length + start;
                    let (mut x1, mut x2) = (0.0, 0.0);
                    let mut series = Vec::with_capacity(total);
                    for _ in 0..total {
                        let x = c1 * x1 + c2 * x2 + innov.normal(0.0, 1.0);
                        x2 = x1;
                        x1 = x;
                        series.push(x);
                    }
                    // Stationary std for these poles is roughly 1 / sqrt(1 - r^2) / sin(theta).
                    let norm = (1.0 - r * r).sqrt() * theta.sin().max(0.1);
                    out.extend(series[length + start..].iter().map(|x| gain * a * norm * x));
                }
            }
        }
        out
    }
}

/// Draws a dataset, adds noise, applies the domain shift and z-normalizes
/// each channel over all samples and timesteps.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    let params = spec.sample_params()?;
    let (c, l) = (spec.channels, spec.length);
    let noise_root = Rng::new(spec.seed).split(3);
    let sigma = (spec.noise.powi(2) + spec.shift.noise_floor.powi(2)).sqrt();
    let mut values = Vec::with_capacity(spec.samples * c * l);
    for (i, p) in params.iter().enumerate() {
        let mut rng = noise_root.split(i as u64);
        values.extend(p.render(c, l).into_iter().map(|v| spec.shift.scale * v + rng.normal(0.0, sigma)));
    }
    normalize_channels(&mut values, spec.samples, c, l);
    let labels = params.iter().map(|p| p.class).collect();
    let subjects = (0..spec.samples).map(|i| (i % spec.subjects) as i32).collect();
    Dataset::new(spec.name.clone(), values, labels, Some(subjects), c, l, spec.classes)
}

fn normalize_channels(values: &mut [f64], n: usize, c: usize, l: usize) {
    let count = (n * l) as f64;
    for ch in 0..c {
        let idx = |i: usize, t: usize| (i * c + ch) * l + t;
        let mut mean = 0.0;
        for i in 0..n {
            for t in 0..l {
                mean += values[idx(i, t)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for i in 0..n {
            for t in 0..l {
                var += (values[idx(i, t)] - mean).powi(2);
            }
        }
        let std = (var / count).sqrt();
        let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
        for i in 0..n {
            for t in 0..l {
                let v = &mut values[idx(i, t)];
                *v = (*v - mean) * inv;
            }
        }
    }
}
