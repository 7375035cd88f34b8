//! Client reporting behavior as a column-stochastic strategy matrix:
//! `f[r][a]` is the probability of reporting level `r` when the trained
//! signal is `a`. A strategy whose rows are constant ignores the true signal
//! entirely (uninformed); anything else carries information.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::SignalVector;

const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMatrix {
    levels: u16,
    /// Row-major h*h entries; entry `(r, a)` at `r * h + a`.
    entries: Vec<f64>,
}

impl StrategyMatrix {
    /// Build from row-major entries, validating column stochasticity.
    pub fn new(levels: u16, entries: Vec<f64>) -> Result<Self> {
        let h = levels as usize;
        if levels < 2 {
            return Err(Error::Config(format!(
                "strategy matrix needs at least 2 levels, got {levels}"
            )));
        }
        if entries.len() != h * h {
            return Err(Error::LengthMismatch {
                expected: h * h,
                actual: entries.len(),
                context: "strategy matrix entries",
            });
        }
        let m = Self { levels, entries };
        for a in 0..h {
            let mut sum = 0.0;
            for r in 0..h {
                let v = m.entries[r * h + a];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!(
                        "strategy entry ({r},{a}) = {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::Config(format!(
                    "strategy column {a} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(m)
    }

    /// Build from dense rows as read from a config file.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let h = rows.len();
        if h < 2 || h > u16::MAX as usize {
            return Err(Error::Config(format!(
                "strategy matrix needs 2..=65535 rows, got {h}"
            )));
        }
        let mut entries = Vec::with_capacity(h * h);
        for row in rows {
            if row.len() != h {
                return Err(Error::LengthMismatch {
                    expected: h,
                    actual: row.len(),
                    context: "strategy matrix row",
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(h as u16, entries)
    }

    /// Truthful reporting.
    pub fn identity(levels: u16) -> Self {
        let h = levels as usize;
        let mut entries = vec![0.0; h * h];
        for d in 0..h {
            entries[d * h + d] = 1.0;
        }
        Self { levels, entries }
    }

    /// Report uniformly at random regardless of the true signal.
    pub fn uniform(levels: u16) -> Self {
        let h = levels as usize;
        Self {
            levels,
            entries: vec![1.0 / h as f64; h * h],
        }
    }

    /// Always report `level` regardless of the true signal.
    pub fn constant(levels: u16, level: u16) -> Result<Self> {
        if level < 1 || level > levels {
            return Err(Error::SignalOutOfRange {
                signal: level,
                levels,
                index: 0,
            });
        }
        let h = levels as usize;
        let mut entries = vec![0.0; h * h];
        for a in 0..h {
            entries[(level as usize - 1) * h + a] = 1.0;
        }
        Ok(Self { levels, entries })
    }

    /// Deterministic relabeling: true signal `a` is reported as `perm[a-1]`.
    pub fn permutation(levels: u16, perm: &[u16]) -> Result<Self> {
        let h = levels as usize;
        if perm.len() != h {
            return Err(Error::LengthMismatch {
                expected: h,
                actual: perm.len(),
                context: "permutation",
            });
        }
        let mut seen = vec![false; h];
        for &r in perm {
            if r < 1 || r > levels || seen[(r - 1) as usize] {
                return Err(Error::Config(format!("invalid permutation {perm:?}")));
            }
            seen[(r - 1) as usize] = true;
        }
        let mut entries = vec![0.0; h * h];
        for (a, &r) in perm.iter().enumerate() {
            entries[(r as usize - 1) * h + a] = 1.0;
        }
        Ok(Self { levels, entries })
    }

    pub fn levels(&self) -> u16 {
        self.levels
    }

    /// Probability of reporting `r` given true signal `a` (1-based).
    pub fn get(&self, r: u16, a: u16) -> f64 {
        let h = self.levels as usize;
        self.entries[(r as usize - 1) * h + (a as usize - 1)]
    }

    /// Distribution-level composition: applying `self` after `inner` equals
    /// sampling from `self.compose(&inner)`.
    pub fn compose(&self, inner: &StrategyMatrix) -> Result<StrategyMatrix> {
        if self.levels != inner.levels {
            return Err(Error::Config(format!(
                "cannot compose strategies with {} and {} levels",
                self.levels, inner.levels
            )));
        }
        let h = self.levels as usize;
        let mut entries = vec![0.0; h * h];
        for r in 0..h {
            for a in 0..h {
                let mut sum = 0.0;
                for s in 0..h {
                    sum += self.entries[r * h + s] * inner.entries[s * h + a];
                }
                entries[r * h + a] = sum;
            }
        }
        Ok(StrategyMatrix {
            levels: self.levels,
            entries,
        })
    }
}

/// Sample a reported signal vector: each report drawn independently from the
/// column of the true signal.
pub fn apply_strategy<R: Rng + ?Sized>(
    true_signals: &SignalVector,
    f: &StrategyMatrix,
    rng: &mut R,
) -> Result<SignalVector> {
    if f.levels != true_signals.levels() {
        return Err(Error::Config(format!(
            "strategy has {} levels but signals have {}",
            f.levels,
            true_signals.levels()
        )));
    }
    let h = f.levels as usize;
    let mut out = Vec::with_capacity(true_signals.len());
    for &a in true_signals.signals() {
        let col = (a - 1) as usize;
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut chosen = f.levels;
        for r in 0..h {
            cum += f.entries[r * h + col];
            if u < cum {
                chosen = (r + 1) as u16;
                break;
            }
        }
        out.push(chosen);
    }
    SignalVector::new(out, f.levels)
}

/// True iff every row is constant within `tol`: the report distribution does
/// not depend on the true signal.
pub fn is_uninformed(f: &StrategyMatrix, tol: f64) -> bool {
    let h = f.levels as usize;
    for r in 0..h {
        let row = &f.entries[r * h..(r + 1) * h];
        let first = row[0];
        if row.iter().any(|&v| (v - first).abs() > tol) {
            return false;
        }
    }
    true
}
