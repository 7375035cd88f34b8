//! Uniform quantization of continuous model updates onto `h` discrete levels.
//!
//! The grid spans `[-x_max, x_max]` with level `l` mapped to
//! `c_l = -x_max + (l-1) * 2*x_max / (h-1)`. Stochastic rounding picks one of
//! the two bracketing levels with probability proportional to proximity, which
//! keeps the dequantized value unbiased; nearest rounding is deterministic
//! with ties resolved toward the lower level.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    Stochastic,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    /// Number of discrete levels, at least 2.
    pub levels: u16,
    /// Clipping bound; inputs are clamped to `[-x_max, x_max]`.
    pub x_max: f64,
    pub mode: RoundingMode,
}

impl QuantizerConfig {
    pub fn new(levels: u16, x_max: f64, mode: RoundingMode) -> Result<Self> {
        let cfg = Self {
            levels,
            x_max,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config(format!(
                "quantizer needs at least 2 levels, got {}",
                self.levels
            )));
        }
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(Error::Config(format!(
                "quantizer x_max must be positive and finite, got {}",
                self.x_max
            )));
        }
        Ok(())
    }

    /// Distance between adjacent grid levels.
    pub fn step(&self) -> f64 {
        2.0 * self.x_max / (self.levels as f64 - 1.0)
    }

    /// Grid value of level `l` (1-based).
    pub fn level_value(&self, l: u16) -> f64 {
        -self.x_max + (l as f64 - 1.0) * self.step()
    }
}

/// A client's reported model update after quantization: one signal in
/// `{1..=levels}` per model parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalVector {
    signals: Vec<u16>,
    levels: u16,
}

impl SignalVector {
    pub fn new(signals: Vec<u16>, levels: u16) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Config(format!(
                "signal vector needs at least 2 levels, got {levels}"
            )));
        }
        for (index, &s) in signals.iter().enumerate() {
            if s < 1 || s > levels {
                return Err(Error::SignalOutOfRange {
                    signal: s,
                    levels,
                    index,
                });
            }
        }
        Ok(Self { signals, levels })
    }

    pub fn levels(&self) -> u16 {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn signals(&self) -> &[u16] {
        &self.signals
    }

    pub fn get(&self, index: usize) -> u16 {
        self.signals[index]
    }
}

/// Quantize a continuous update onto the signal grid.
pub fn quantize<R: Rng + ?Sized>(
    update: &[f64],
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<SignalVector> {
    cfg.validate()?;
    let step = cfg.step();
    let mut signals = Vec::with_capacity(update.len());
    for (index, &x) in update.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite { index });
        }
        let clamped = x.clamp(-cfg.x_max, cfg.x_max);
        // Position on the grid in units of `step`, in [0, levels-1].
        let pos = (clamped + cfg.x_max) / step;
        let lower = (pos.floor() as u16).min(cfg.levels - 2);
        let frac = (pos - lower as f64).clamp(0.0, 1.0);
        let up = match cfg.mode {
            RoundingMode::Stochastic => rng.random::<f64>() < frac,
            RoundingMode::Nearest => frac > 0.5,
        };
        signals.push(lower + 1 + u16::from(up));
    }
    Ok(SignalVector {
        signals,
        levels: cfg.levels,
    })
}

/// Map signals back to their grid values.
pub fn dequantize(sig: &SignalVector, cfg: &QuantizerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if sig.levels != cfg.levels {
        return Err(Error::Config(format!(
            "signal vector has {} levels but quantizer has {}",
            sig.levels, cfg.levels
        )));
    }
    sig.signals
        .iter()
        .enumerate()
        .map(|(index, &s)| {
            if s < 1 || s > cfg.levels {
                Err(Error::SignalOutOfRange {
                    signal: s,
                    levels: cfg.levels,
                    index,
                })
            } else {
                Ok(cfg.level_value(s))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;

    fn cfg(levels: u16, x_max: f64, mode: RoundingMode) -> QuantizerConfig {
        QuantizerConfig::new(levels, x_max, mode).unwrap()
    }

    #[test]
    fn grid_endpoints_map_to_extreme_levels() {
        let c = cfg(8, 0.1, RoundingMode::Stochastic);
        let mut rng = rng_for(1, &[]);
        let sig = quantize(&[-0.1, 0.1], &c, &mut rng).unwrap();
        assert_eq!(sig.signals(), &[1, 8]);
    }

    #[test]
    fn clamping_handles_out_of_range() {
        let c = cfg(8, 0.1, RoundingMode::Nearest);
        let mut rng = rng_for(2, &[]);
        let sig = quantize(&[-5.0, 5.0], &c, &mut rng).unwrap();
        assert_eq!(sig.signals(), &[1, 8]);
    }

    #[test]
    fn dequantize_endpoints() {
        let c = cfg(8, 0.1, RoundingMode::Nearest);
        let sig = SignalVector::new(vec![8, 1, 2], 8).unwrap();
        let vals = dequantize(&sig, &c).unwrap();
        assert!((vals[0] - 0.1).abs() < 1e-15);
        assert!((vals[1] + 0.1).abs() < 1e-15);
        // level 2 on the 8-level grid over [-0.1, 0.1]
        let expected = -0.1 + 0.2 / 7.0;
        assert!((vals[2] - expected).abs() < 1e-15);
        assert!((vals[2] - (-0.071_428_6)).abs() < 1e-6);
    }

    #[test]
    fn midpoint_is_fifty_fifty_in_stochastic_mode() {
        let c = cfg(2, 0.1, RoundingMode::Stochastic);
        let mut rng = rng_for(3, &[]);
        let mut counts = [0u32; 2];
        let n = 100_000;
        for _ in 0..n {
            let sig = quantize(&[0.0], &c, &mut rng).unwrap();
            counts[(sig.get(0) - 1) as usize] += 1;
        }
        let frac = counts[0] as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "level-1 fraction {frac}");
    }

    #[test]
    fn stochastic_rounding_is_unbiased() {
        // Empirical mean within 3 * step / sqrt(4N) of the input.
        let c = cfg(8, 0.1, RoundingMode::Stochastic);
        let n = 100_000;
        let bound = 3.0 * c.step() / (4.0 * n as f64).sqrt();
        for (i, &x) in [0.0371, -0.07, 0.0999, 0.013].iter().enumerate() {
            let mut rng = rng_for(4, &[i as u64]);
            let mut sum = 0.0;
            for _ in 0..n {
                let sig = quantize(&[x], &c, &mut rng).unwrap();
                sum += dequantize(&sig, &c).unwrap()[0];
            }
            let mean = sum / n as f64;
            assert!(
                (mean - x).abs() < bound,
                "x={x} mean={mean} bound={bound}"
            );
        }
    }

    #[test]
    fn nearest_mode_ties_round_down() {
        let c = cfg(2, 0.1, RoundingMode::Nearest);
        let mut rng = rng_for(5, &[]);
        // 0.0 is exactly midway between the two levels.
        let sig = quantize(&[0.0], &c, &mut rng).unwrap();
        assert_eq!(sig.get(0), 1);
    }

    #[test]
    fn non_finite_input_names_index() {
        let c = cfg(8, 0.1, RoundingMode::Nearest);
        let mut rng = rng_for(6, &[]);
        let err = quantize(&[0.0, f64::NAN], &c, &mut rng).unwrap_err();
        match err {
            Error::NonFinite { index } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dequantize_rejects_out_of_range_signal() {
        let c = cfg(4, 0.1, RoundingMode::Nearest);
        let sig = SignalVector {
            signals: vec![5],
            levels: 4,
        };
        assert!(dequantize(&sig, &c).is_err());
    }

    #[test]
    fn roundtrip_of_grid_points_is_identity() {
        let c = cfg(8, 0.1, RoundingMode::Stochastic);
        let grid: Vec<f64> = (1..=8).map(|l| c.level_value(l)).collect();
        let mut rng = rng_for(7, &[]);
        let sig = quantize(&grid, &c, &mut rng).unwrap();
        let back = dequantize(&sig, &c).unwrap();
        for (a, b) in grid.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_seeds_identical_signals() {
        let c = cfg(8, 0.1, RoundingMode::Stochastic);
        let xs: Vec<f64> = (0..500).map(|i| (i as f64 / 500.0 - 0.5) * 0.25).collect();
        let s1 = quantize(&xs, &c, &mut rng_for(8, &[1])).unwrap();
        let s2 = quantize(&xs, &c, &mut rng_for(8, &[1])).unwrap();
        assert_eq!(s1, s2);
    }
}
