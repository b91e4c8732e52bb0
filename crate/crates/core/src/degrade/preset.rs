//! Degradation kinds, their parameter ranges and the bundled presets.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fully parameterized degradation, as applied and logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    None,
    /// Additive white noise; `sigma` on the 0-255 scale.
    GaussianNoise {
        sigma: f64,
    },
    Jpeg {
        quality: u8,
    },
    GaussianFilter {
        kernel: usize,
        sigma: f64,
    },
    MedianFilter {
        kernel: usize,
    },
    /// Shot noise with `alpha * 255` photons at full scale.
    PoissonNoise {
        alpha: f64,
    },
    /// Hue rotation in HSV, as a fraction of the hue circle.
    Hue {
        shift: f64,
    },
    Brightness {
        factor: f64,
    },
    /// Scaling around the per-image gray mean.
    Contrast {
        factor: f64,
    },
}

impl Degradation {
    pub fn name(&self) -> &'static str {
        match self {
            Degradation::None => "none",
            Degradation::GaussianNoise { .. } => "gaussian_noise",
            Degradation::Jpeg { .. } => "jpeg",
            Degradation::GaussianFilter { .. } => "gaussian_filter",
            Degradation::MedianFilter { .. } => "median_filter",
            Degradation::PoissonNoise { .. } => "poisson_noise",
            Degradation::Hue { .. } => "hue",
            Degradation::Brightness { .. } => "brightness",
            Degradation::Contrast { .. } => "contrast",
        }
    }
}

/// Sampling ranges for one menu entry; bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradationRange {
    None,
    GaussianNoise { sigma: (f64, f64) },
    Jpeg { quality: (u8, u8) },
    GaussianFilter { kernel: usize, sigma: (f64, f64) },
    MedianFilter { kernel: usize },
    PoissonNoise { alpha: f64 },
    Hue { shift: (f64, f64) },
    Brightness { factor: (f64, f64) },
    Contrast { factor: (f64, f64) },
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::config(format!("{name}: invalid range [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::config(format!("filter kernel must be odd, got {kernel}")));
    }
    Ok(())
}

impl DegradationRange {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationRange::None => Ok(()),
            DegradationRange::GaussianNoise { sigma } => {
                check_range("gaussian_noise.sigma", sigma)?;
                if sigma.0 < 0.0 {
                    return Err(Error::config("gaussian_noise.sigma must be non-negative"));
                }
                Ok(())
            }
            DegradationRange::Jpeg { quality: (lo, hi) } => {
                if lo == 0 || hi > 100 || lo > hi {
                    return Err(Error::config(format!("jpeg.quality: invalid range [{lo}, {hi}]")));
                }
                Ok(())
            }
            DegradationRange::GaussianFilter { kernel, sigma } => {
                check_kernel(kernel)?;
                check_range("gaussian_filter.sigma", sigma)?;
                if sigma.0 <= 0.0 {
                    return Err(Error::config("gaussian_filter.sigma must be positive"));
                }
                Ok(())
            }
            DegradationRange::MedianFilter { kernel } => check_kernel(kernel),
            DegradationRange::PoissonNoise { alpha } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::config("poisson_noise.alpha must be positive"));
                }
                Ok(())
            }
            DegradationRange::Hue { shift } => check_range("hue.shift", shift),
            DegradationRange::Brightness { factor } => check_range("brightness.factor", factor),
            DegradationRange::Contrast { factor } => check_range("contrast.factor", factor),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Degradation {
        match *self {
            DegradationRange::None => Degradation::None,
            DegradationRange::GaussianNoise { sigma } => Degradation::GaussianNoise { sigma: sample_range(rng, sigma) },
            DegradationRange::Jpeg { quality: (lo, hi) } => Degradation::Jpeg { quality: rng.random_range(lo..=hi) },
            DegradationRange::GaussianFilter { kernel, sigma } => {
                Degradation::GaussianFilter { kernel, sigma: sample_range(rng, sigma) }
            }
            DegradationRange::MedianFilter { kernel } => Degradation::MedianFilter { kernel },
            DegradationRange::PoissonNoise { alpha } => Degradation::PoissonNoise { alpha },
            DegradationRange::Hue { shift } => Degradation::Hue { shift: sample_range(rng, shift) },
            DegradationRange::Brightness { factor } => Degradation::Brightness { factor: sample_range(rng, factor) },
            DegradationRange::Contrast { factor } => Degradation::Contrast { factor: sample_range(rng, factor) },
        }
    }

    /// Whether a sampled degradation lies inside this entry's ranges.
    pub fn contains(&self, d: &Degradation) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
        match (*self, *d) {
            (DegradationRange::None, Degradation::None) => true,
            (DegradationRange::GaussianNoise { sigma }, Degradation::GaussianNoise { sigma: s }) => within(s, sigma),
            (DegradationRange::Jpeg { quality: (lo, hi) }, Degradation::Jpeg { quality }) => {
                lo <= quality && quality <= hi
            }
            (
                DegradationRange::GaussianFilter { kernel, sigma },
                Degradation::GaussianFilter { kernel: k, sigma: s },
            ) => kernel == k && within(s, sigma),
            (DegradationRange::MedianFilter { kernel }, Degradation::MedianFilter { kernel: k }) => kernel == k,
            (DegradationRange::PoissonNoise { alpha }, Degradation::PoissonNoise { alpha: a }) => alpha == a,
            (DegradationRange::Hue { shift }, Degradation::Hue { shift: s }) => within(s, shift),
            (DegradationRange::Brightness { factor }, Degradation::Brightness { factor: f }) => within(f, factor),
            (DegradationRange::Contrast { factor }, Degradation::Contrast { factor: f }) => within(f, factor),
            _ => false,
        }
    }
}

/// A named degradation menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationPreset {
    /// Whether the training graph should carry gradients through the
    /// degradation (JPEG switches to its soft-rounding surrogate).
    pub differentiable: bool,
    pub menu: Vec<DegradationRange>,
}

impl DegradationPreset {
    pub fn validate(&self) -> Result<()> {
        self.menu.iter().try_for_each(DegradationRange::validate)
    }

    /// Draws one entry uniformly and samples its parameters. An empty menu
    /// yields [`Degradation::None`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Degradation {
        if self.menu.is_empty() {
            return Degradation::None;
        }
        let i = rng.random_range(0..self.menu.len());
        self.menu[i].sample(rng)
    }

    pub fn contains(&self, d: &Degradation) -> bool {
        if self.menu.is_empty() {
            return *d == Degradation::None;
        }
        self.menu.iter().any(|r| r.contains(d))
    }
}

pub const BUNDLED_PRESETS: &str = include_str!("presets.toml");

/// Preset tables keyed by name (`train`, `eval`, `none` ship by default).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PresetTable {
    pub presets: BTreeMap<String, DegradationPreset>,
}

impl PresetTable {
    pub fn parse(text: &str) -> Result<Self> {
        let table: Self = toml::from_str(text).map_err(|e| Error::config(format!("degradation presets: {e}")))?;
        for (name, p) in &table.presets {
            p.validate().map_err(|e| Error::config(format!("preset {name}: {e}")))?;
        }
        Ok(table)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PRESETS).expect("bundled presets are valid")
    }

    pub fn get(&self, name: &str) -> Result<&DegradationPreset> {
        self.presets.get(name).ok_or_else(|| {
            let known: Vec<_> = self.presets.keys().cloned().collect();
            Error::config(format!("unknown degradation preset `{name}` (known: {})", known.join(", ")))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_presets_hold_the_reference_tables() {
        let t = PresetTable::bundled();
        let train = t.get("train").unwrap();
        assert!(train.differentiable);
        assert_eq!(
            train.menu,
            vec![
                DegradationRange::GaussianNoise { sigma: (1.0, 16.0) },
                DegradationRange::Jpeg { quality: (75, 95) },
                DegradationRange::GaussianFilter { kernel: 3, sigma: (1.0, 1.0) },
                DegradationRange::MedianFilter { kernel: 3 },
            ]
        );
        let eval = t.get("eval").unwrap();
        assert_eq!(eval.menu.len(), 8);
        assert!(eval.menu.contains(&DegradationRange::Jpeg { quality: (90, 90) }));
        assert!(eval.menu.contains(&DegradationRange::PoissonNoise { alpha: 4.0 }));
        assert!(eval.menu.contains(&DegradationRange::Hue { shift: (-0.1, 0.1) }));
        assert!(eval.menu.contains(&DegradationRange::Contrast { factor: (0.7, 1.3) }));
        assert!(t.get("none").unwrap().menu.is_empty());
        assert!(t.get("bogus").is_err());
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        let text = "[x]\ndifferentiable = false\nmenu = [{ kind = \"swirl\" }]\n";
        assert!(PresetTable::parse(text).is_err());
        let text = "[x]\ndifferentiable = false\nmenu = [{ kind = \"median_filter\", kernel = 4 }]\n";
        assert!(PresetTable::parse(text).is_err());
    }

    #[test]
    fn samples_stay_in_range_and_cover_the_menu() {
        let t = PresetTable::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in ["train", "eval"] {
            let p = t.get(name).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for _ in 0..1000 {
                let d = p.sample(&mut rng);
                assert!(p.contains(&d), "{name}: {d:?}");
                seen.insert(d.name());
            }
            assert_eq!(seen.len(), p.menu.len());
        }
        assert_eq!(t.get("none").unwrap().sample(&mut rng), Degradation::None);
    }

    #[test]
    fn degradation_serializes_with_kind_tag() {
        let d = Degradation::Jpeg { quality: 90 };
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"kind":"jpeg","quality":90}"#);
    }
}
