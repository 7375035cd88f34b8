//! Contribution scoring from reported signals alone.
//!
//! The server never sees client data; it estimates, for each pair of clients,
//! an h-by-h delta matrix (joint signal frequency minus the product of the
//! marginals) and rewards a client when her signal on a bonus parameter agrees
//! with a peer's in a positively correlated cell, minus the same agreement
//! measured on two unrelated penalty parameters. Delta matrices are estimated
//! on one half of the parameters and applied to bonus parameters in the other
//! half, so the score matrix used on a parameter is independent of the reports
//! it scores.

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::SignalVector;

/// Estimated correlation between two clients' signals on a parameter set.
///
/// Entries are `T(a,b) - T_i(a) * T_j(b)` where `T` are empirical
/// frequencies. Every row and column sums to zero up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    levels: u16,
    entries: Vec<f64>,
    sample_count: usize,
}

impl DeltaMatrix {
    pub fn levels(&self) -> u16 {
        self.levels
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Entry for signal pair `(a, b)`, 1-based.
    pub fn get(&self, a: u16, b: u16) -> f64 {
        let h = self.levels as usize;
        self.entries[(a as usize - 1) * h + (b as usize - 1)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Build directly from entries; used by callers that supply a known
    /// population delta (homogeneous CA) rather than an estimate.
    pub fn from_entries(levels: u16, entries: Vec<f64>, sample_count: usize) -> Result<Self> {
        let h = levels as usize;
        if entries.len() != h * h {
            return Err(Error::LengthMismatch {
                expected: h * h,
                actual: entries.len(),
                context: "delta matrix entries",
            });
        }
        if entries.iter().any(|e| !e.is_finite() || e.abs() > 1.0) {
            return Err(Error::Config(
                "delta matrix entries must be finite and in [-1, 1]".into(),
            ));
        }
        Ok(Self {
            levels,
            entries,
            sample_count,
        })
    }

    /// Largest absolute row or column sum; zero for a well-formed estimate.
    pub fn max_marginal_sum(&self) -> f64 {
        let h = self.levels as usize;
        let mut worst = 0.0_f64;
        for a in 0..h {
            let row: f64 = self.entries[a * h..(a + 1) * h].iter().sum();
            worst = worst.max(row.abs());
        }
        for b in 0..h {
            let col: f64 = (0..h).map(|a| self.entries[a * h + b]).sum();
            worst = worst.max(col.abs());
        }
        worst
    }
}

/// Binary score matrix: 1 where the delta entry is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreMatrix {
    levels: u16,
    entries: Vec<u8>,
}

impl ScoreMatrix {
    pub fn levels(&self) -> u16 {
        self.levels
    }

    /// Score for signal pair `(a, b)`, 1-based.
    pub fn get(&self, a: u16, b: u16) -> i32 {
        let h = self.levels as usize;
        self.entries[(a as usize - 1) * h + (b as usize - 1)] as i32
    }
}

/// Entrywise indicator of strict positivity.
pub fn sign_matrix(delta: &DeltaMatrix) -> ScoreMatrix {
    ScoreMatrix {
        levels: delta.levels,
        entries: delta
            .entries
            .iter()
            .map(|&e| u8::from(e > 0.0))
            .collect(),
    }
}

/// Per-client contribution in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContributionScore {
    pub client: u64,
    pub q: f64,
}

/// PCA scorer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaConfig {
    /// Number of peers drawn per focus client.
    pub peers: usize,
    /// Size of the bonus parameter set M1.
    pub bonus_size: usize,
    /// Minimum number of penalty parameters required in each half.
    pub min_penalty_pool: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            peers: 5,
            bonus_size: 1000,
            min_penalty_pool: 2,
        }
    }
}

impl PcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.peers < 1 {
            return Err(Error::Config("pca peer count must be at least 1".into()));
        }
        if self.bonus_size < 1 {
            return Err(Error::Config("pca bonus size must be at least 1".into()));
        }
        if self.min_penalty_pool < 2 {
            return Err(Error::Config(
                "pca min_penalty_pool must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

fn check_same_shape(reports: &[SignalVector]) -> Result<(usize, u16)> {
    let first = reports.first().ok_or(Error::EmptyInput("reports"))?;
    let n = first.len();
    let h = first.levels();
    for r in reports {
        if r.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: r.len(),
                context: "report vector length",
            });
        }
        if r.levels() != h {
            return Err(Error::Config(format!(
                "mixed level counts in reports: {} vs {}",
                h,
                r.levels()
            )));
        }
    }
    Ok((n, h))
}

/// Joint and marginal counts of a client pair over one parameter set.
struct PairCounts {
    joint: Vec<u64>,
    mi: Vec<u64>,
    mj: Vec<u64>,
    n: usize,
}

fn pair_counts(i: &SignalVector, j: &SignalVector, set: &[usize], h: u16) -> PairCounts {
    let h = h as usize;
    let mut joint = vec![0u64; h * h];
    let mut mi = vec![0u64; h];
    let mut mj = vec![0u64; h];
    for &p in set {
        let a = (i.get(p) - 1) as usize;
        let b = (j.get(p) - 1) as usize;
        joint[a * h + b] += 1;
        mi[a] += 1;
        mj[b] += 1;
    }
    PairCounts {
        joint,
        mi,
        mj,
        n: set.len(),
    }
}

/// Delta entries from counts. The numerator `c_ab * n - c_a * c_b` is an
/// exact integer (n <= 2^26 keeps it within f64's integer range), so the
/// sign of each entry is exact and `Sign` never misfires on rounding noise.
fn delta_from_counts(c: &PairCounts, levels: u16) -> DeltaMatrix {
    let h = levels as usize;
    let n = c.n as i64;
    let denom = (c.n * c.n) as f64;
    let mut entries = vec![0.0; h * h];
    for a in 0..h {
        for b in 0..h {
            let num = c.joint[a * h + b] as i64 * n - c.mi[a] as i64 * c.mj[b] as i64;
            entries[a * h + b] = num as f64 / denom;
        }
    }
    DeltaMatrix {
        levels,
        entries,
        sample_count: c.n,
    }
}

/// Estimate the delta matrices of a client pair on two disjoint parameter
/// sets. Returns `(delta_a, delta_b)`.
pub fn compute_delta(
    i: &SignalVector,
    j: &SignalVector,
    set_a: &[usize],
    set_b: &[usize],
) -> Result<(DeltaMatrix, DeltaMatrix)> {
    if i.len() != j.len() {
        return Err(Error::LengthMismatch {
            expected: i.len(),
            actual: j.len(),
            context: "report vector length",
        });
    }
    if i.levels() != j.levels() {
        return Err(Error::Config(format!(
            "mixed level counts in reports: {} vs {}",
            i.levels(),
            j.levels()
        )));
    }
    if set_a.is_empty() {
        return Err(Error::EmptyInput("parameter set A"));
    }
    if set_b.is_empty() {
        return Err(Error::EmptyInput("parameter set B"));
    }
    let len = i.len();
    let mut seen = vec![false; len];
    for &p in set_a.iter().chain(set_b.iter()) {
        if p >= len {
            return Err(Error::IndexOutOfBounds { index: p, len });
        }
        if seen[p] {
            return Err(Error::Config(format!(
                "parameter sets A and B must be disjoint; index {p} repeated"
            )));
        }
        seen[p] = true;
    }
    let h = i.levels();
    let da = delta_from_counts(&pair_counts(i, j, set_a, h), h);
    let db = delta_from_counts(&pair_counts(i, j, set_b, h), h);
    Ok((da, db))
}

/// Draw two distinct indices from `0..len`.
fn two_distinct<R: Rng + ?Sized>(rng: &mut R, len: usize) -> (usize, usize) {
    debug_assert!(len >= 2);
    let first = rng.random_range(0..len);
    let mut second = rng.random_range(0..len - 1);
    if second >= first {
        second += 1;
    }
    (first, second)
}

/// Correlated-agreement baseline for homogeneous users: the delta matrix is
/// shared and supplied by the caller rather than estimated per pair.
pub fn ca_homogeneous<R: Rng + ?Sized>(
    reports: &[SignalVector],
    delta: &DeltaMatrix,
    bonus: &[usize],
    penalty: &[usize],
    rng: &mut R,
) -> Result<Vec<ContributionScore>> {
    let (len, h) = check_same_shape(reports)?;
    if reports.len() < 2 {
        return Err(Error::InsufficientClients {
            needed: 2,
            actual: reports.len(),
        });
    }
    if penalty.len() < 2 {
        return Err(Error::Config(format!(
            "CA needs at least 2 penalty parameters, got {}",
            penalty.len()
        )));
    }
    if bonus.is_empty() {
        return Err(Error::EmptyInput("bonus parameter set"));
    }
    if delta.levels() != h {
        return Err(Error::Config(format!(
            "delta matrix has {} levels but reports have {}",
            delta.levels(),
            h
        )));
    }
    for &p in bonus.iter().chain(penalty.iter()) {
        if p >= len {
            return Err(Error::IndexOutOfBounds { index: p, len });
        }
    }
    let score = sign_matrix(delta);
    let n_clients = reports.len();
    let mut out = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        let mut total = 0i64;
        for &p in bonus {
            let mut j = rng.random_range(0..n_clients - 1);
            if j >= i {
                j += 1;
            }
            let (qa, qb) = two_distinct(rng, penalty.len());
            let (q, q2) = (penalty[qa], penalty[qb]);
            let bonus_term = score.get(reports[i].get(p), reports[j].get(p));
            let penalty_term = score.get(reports[i].get(q), reports[j].get(q2));
            total += (bonus_term - penalty_term) as i64;
        }
        out.push(ContributionScore {
            client: i as u64,
            q: total as f64 / bonus.len() as f64,
        });
    }
    Ok(out)
}

/// Recommended per-half sample count for epsilon-accurate delta estimation:
/// `ceil(9 h^2 ln(1/delta) / epsilon^2)`.
pub fn required_sample_size(levels: u16, epsilon: f64, delta: f64) -> Result<u64> {
    if levels < 2 {
        return Err(Error::Config(format!(
            "level count must be at least 2, got {levels}"
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let h = levels as f64;
    Ok((9.0 * h * h * (1.0 / delta).ln() / (epsilon * epsilon)).ceil() as u64)
}

/// Split `0..len` into bonus set M1 (as a membership mask) of `bonus_size`.
fn draw_bonus_mask<R: Rng + ?Sized>(rng: &mut R, len: usize, bonus_size: usize) -> Vec<bool> {
    let mut mask = vec![false; len];
    for idx in sample(rng, len, bonus_size) {
        mask[idx] = true;
    }
    mask
}

/// One client's score against one peer under one A/B split. Shared by the
/// sampling scorer and the exact enumerator so both exercise the same logic.
struct HalfView<'a> {
    /// Parameter indices in this half.
    indices: &'a [usize],
    /// Score matrix estimated on the *other* half.
    score: &'a ScoreMatrix,
}

fn score_half<R: Rng + ?Sized>(
    focus: &SignalVector,
    peer: &SignalVector,
    half: &HalfView,
    bonus_mask: &[bool],
    min_penalty_pool: usize,
    label: char,
    rng: &mut R,
) -> Result<i64> {
    let bonus: Vec<usize> = half
        .indices
        .iter()
        .copied()
        .filter(|&p| bonus_mask[p])
        .collect();
    let pool: Vec<usize> = half
        .indices
        .iter()
        .copied()
        .filter(|&p| !bonus_mask[p])
        .collect();
    if bonus.is_empty() {
        return Ok(0);
    }
    if pool.len() < min_penalty_pool {
        return Err(Error::InsufficientPenaltyPool {
            half: label,
            actual: pool.len(),
            needed: min_penalty_pool,
        });
    }
    let mut total = 0i64;
    for &p in &bonus {
        let (qa, qb) = two_distinct(rng, pool.len());
        let (q, q2) = (pool[qa], pool[qb]);
        let bonus_term = half.score.get(focus.get(p), peer.get(p));
        let penalty_term = half.score.get(focus.get(q), peer.get(q2));
        total += (bonus_term - penalty_term) as i64;
    }
    Ok(total)
}

fn split_halves<R: Rng + ?Sized>(rng: &mut R, len: usize) -> (Vec<usize>, Vec<usize>) {
    let size_a = len.div_ceil(2);
    let mut in_a = vec![false; len];
    for idx in sample(rng, len, size_a) {
        in_a[idx] = true;
    }
    let mut a = Vec::with_capacity(size_a);
    let mut b = Vec::with_capacity(len - size_a);
    for (p, &flag) in in_a.iter().enumerate() {
        if flag {
            a.push(p);
        } else {
            b.push(p);
        }
    }
    (a, b)
}

/// Score a single focus client given its per-client stream.
fn pca_score_focus(
    reports: &[SignalVector],
    order: &[usize],
    focus_pos: usize,
    bonus_mask: &[bool],
    bonus_size: usize,
    cfg: &PcaConfig,
    stream: &mut ChaCha8Rng,
) -> Result<f64> {
    let focus = &reports[order[focus_pos]];
    let n_clients = order.len();
    // Peers drawn without replacement from the other clients, in id order so
    // the draw is stable under permutations of the input.
    let mut others: Vec<usize> = Vec::with_capacity(n_clients - 1);
    for (pos, &idx) in order.iter().enumerate() {
        if pos != focus_pos {
            others.push(idx);
        }
    }
    let peer_picks = sample(&mut *stream, others.len(), cfg.peers);
    let mut total = 0i64;
    for pick in peer_picks {
        let peer = &reports[others[pick]];
        let (set_a, set_b) = split_halves(&mut *stream, focus.len());
        let (delta_a, delta_b) = compute_delta(focus, peer, &set_a, &set_b)?;
        let score_a = sign_matrix(&delta_a);
        let score_b = sign_matrix(&delta_b);
        // Bonus parameters in A are scored with the matrix estimated on B,
        // and vice versa.
        total += score_half(
            focus,
            peer,
            &HalfView {
                indices: &set_a,
                score: &score_b,
            },
            bonus_mask,
            cfg.min_penalty_pool,
            'A',
            stream,
        )?;
        total += score_half(
            focus,
            peer,
            &HalfView {
                indices: &set_b,
                score: &score_a,
            },
            bonus_mask,
            cfg.min_penalty_pool,
            'B',
            stream,
        )?;
    }
    Ok(total as f64 / (cfg.peers * bonus_size) as f64)
}

fn validate_pca_inputs(reports: &[SignalVector], cfg: &PcaConfig) -> Result<usize> {
    cfg.validate()?;
    let (len, _) = check_same_shape(reports)?;
    if reports.len() < cfg.peers + 1 {
        return Err(Error::InsufficientClients {
            needed: cfg.peers + 1,
            actual: reports.len(),
        });
    }
    // Even if every penalty parameter of one half lands opposite, each half
    // needs enough room for the penalty pool.
    let min_half = len / 2;
    if cfg.bonus_size + cfg.min_penalty_pool > min_half {
        return Err(Error::Config(format!(
            "parameter count {len} too small: each half holds {min_half} parameters \
             but bonus_size {} + min_penalty_pool {} may exceed it",
            cfg.bonus_size, cfg.min_penalty_pool
        )));
    }
    Ok(len)
}

/// Pairwise correlated agreement over heterogeneous clients, with explicit
/// client keys. Each client's randomness is a stream derived from
/// `(master_seed, key)`, so scores are a function of (key, report) pairs and
/// are unchanged under permutation of the input order; scoring distinct
/// clients runs in parallel.
pub fn pca_score_keyed(
    reports: &[SignalVector],
    keys: &[u64],
    cfg: &PcaConfig,
    master_seed: u64,
) -> Result<Vec<ContributionScore>> {
    if keys.len() != reports.len() {
        return Err(Error::LengthMismatch {
            expected: reports.len(),
            actual: keys.len(),
            context: "client keys",
        });
    }
    {
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("client keys must be unique".into()));
        }
    }
    let len = validate_pca_inputs(reports, cfg)?;

    // Canonical processing order by key; the bonus/penalty split is shared.
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    let mut shared = ChaCha8Rng::seed_from_u64(master_seed);
    let bonus_mask = draw_bonus_mask(&mut shared, len, cfg.bonus_size);

    let scored: Result<Vec<(usize, f64)>> = order
        .par_iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let mut stream = ChaCha8Rng::seed_from_u64(
                crate::seeding::derive_seed(master_seed, &[keys[idx]]),
            );
            let q = pca_score_focus(
                reports,
                &order,
                pos,
                &bonus_mask,
                cfg.bonus_size,
                cfg,
                &mut stream,
            )?;
            Ok((idx, q))
        })
        .collect();
    // Return in input order.
    let mut by_input: Vec<Option<ContributionScore>> = vec![None; reports.len()];
    for (idx, q) in scored? {
        by_input[idx] = Some(ContributionScore {
            client: keys[idx],
            q,
        });
    }
    Ok(by_input.into_iter().map(Option::unwrap).collect())
}

/// Pairwise correlated agreement with positional client ids 0..n.
pub fn pca_score<R: RngCore + ?Sized>(
    reports: &[SignalVector],
    cfg: &PcaConfig,
    rng: &mut R,
) -> Result<Vec<ContributionScore>> {
    let keys: Vec<u64> = (0..reports.len() as u64).collect();
    pca_score_keyed(reports, &keys, cfg, rng.next_u64())
}

/// Exact expected contribution of every client under full enumeration of the
/// scorer's random choices (bonus split, A/B split, penalty draws, peer
/// choice). Exponential in the parameter count; intended for small instances.
pub fn pca_expected_q(reports: &[SignalVector], cfg: &PcaConfig) -> Result<Vec<Ratio<i128>>> {
    use itertools::Itertools;

    let len = validate_pca_inputs(reports, cfg)?;
    let n_clients = reports.len();
    if len > 16 {
        return Err(Error::Config(format!(
            "exact enumeration supports at most 16 parameters, got {len}"
        )));
    }

    let all: Vec<usize> = (0..len).collect();
    let size_a = len.div_ceil(2);
    let mut out = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        let mut acc = Ratio::new(0i128, 1i128);
        let mut outcomes = 0i128;
        for bonus in all.iter().copied().combinations(cfg.bonus_size) {
            let mut bonus_mask = vec![false; len];
            for &p in &bonus {
                bonus_mask[p] = true;
            }
            for set_a in all.iter().copied().combinations(size_a) {
                let in_a: Vec<bool> = {
                    let mut m = vec![false; len];
                    for &p in &set_a {
                        m[p] = true;
                    }
                    m
                };
                let set_b: Vec<usize> = all.iter().copied().filter(|&p| !in_a[p]).collect();
                // Expectation is linear in the peer draw: a uniform m-subset
                // of the others contributes the per-peer mean.
                let mut peer_sum = Ratio::new(0i128, 1i128);
                for j in 0..n_clients {
                    if j == i {
                        continue;
                    }
                    let (delta_a, delta_b) = compute_delta(&reports[i], &reports[j], &set_a, &set_b)?;
                    let score_a = sign_matrix(&delta_a);
                    let score_b = sign_matrix(&delta_b);
                    for (label, half, score) in
                        [('A', &set_a, &score_b), ('B', &set_b, &score_a)]
                    {
                        let bonus_here: Vec<usize> =
                            half.iter().copied().filter(|&p| bonus_mask[p]).collect();
                        let pool: Vec<usize> =
                            half.iter().copied().filter(|&p| !bonus_mask[p]).collect();
                        if bonus_here.is_empty() {
                            continue;
                        }
                        if pool.len() < cfg.min_penalty_pool {
                            return Err(Error::InsufficientPenaltyPool {
                                half: label,
                                actual: pool.len(),
                                needed: cfg.min_penalty_pool,
                            });
                        }
                        // Mean penalty over ordered distinct (q, q') pairs.
                        let mut penalty_sum = 0i128;
                        for &q in &pool {
                            for &q2 in &pool {
                                if q != q2 {
                                    penalty_sum +=
                                        score.get(reports[i].get(q), reports[j].get(q2)) as i128;
                                }
                            }
                        }
                        let pairs = (pool.len() * (pool.len() - 1)) as i128;
                        for &p in &bonus_here {
                            let bonus_term =
                                score.get(reports[i].get(p), reports[j].get(p)) as i128;
                            peer_sum += Ratio::new(bonus_term, 1) - Ratio::new(penalty_sum, pairs);
                        }
                    }
                }
                acc += peer_sum / Ratio::new((n_clients - 1) as i128, 1);
                outcomes += 1;
            }
        }
        let q = acc / Ratio::new(outcomes * cfg.bonus_size as i128, 1);
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::SignalVector;
    use crate::seeding::rng_for;

    fn sv(vals: &[u16], h: u16) -> SignalVector {
        SignalVector::new(vals.to_vec(), h).unwrap()
    }

    #[test]
    fn sign_matrix_is_strict_positivity() {
        let delta = DeltaMatrix::from_entries(2, vec![0.25, 0.0, -0.25, 0.1], 4).unwrap();
        let s = sign_matrix(&delta);
        assert_eq!(s.get(1, 1), 1);
        assert_eq!(s.get(1, 2), 0);
        assert_eq!(s.get(2, 1), 0);
        assert_eq!(s.get(2, 2), 1);
    }

    #[test]
    fn delta_examples_match_hand_counts() {
        let a_set = [0usize, 1, 2, 3];
        let b_set = [4usize, 5];
        let pad = |v: &[u16]| {
            let mut w = v.to_vec();
            w.extend_from_slice(&[1, 2]);
            sv(&w, 2)
        };
        // Perfectly correlated.
        let (da, _) = compute_delta(&pad(&[1, 1, 2, 2]), &pad(&[1, 1, 2, 2]), &a_set, &b_set).unwrap();
        assert_eq!(da.entries(), &[0.25, -0.25, -0.25, 0.25]);
        // Anti-correlated.
        let (da, _) = compute_delta(&pad(&[1, 1, 2, 2]), &pad(&[2, 2, 1, 1]), &a_set, &b_set).unwrap();
        assert_eq!(da.entries(), &[-0.25, 0.25, 0.25, -0.25]);
        // Empirically independent.
        let (da, _) = compute_delta(&pad(&[1, 2, 1, 2]), &pad(&[1, 1, 2, 2]), &a_set, &b_set).unwrap();
        assert_eq!(da.entries(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn delta_rejects_overlapping_or_empty_sets() {
        let i = sv(&[1, 2, 1, 2], 2);
        let j = sv(&[1, 1, 2, 2], 2);
        assert!(compute_delta(&i, &j, &[0, 1], &[1, 2]).is_err());
        assert!(compute_delta(&i, &j, &[], &[1, 2]).is_err());
        assert!(compute_delta(&i, &j, &[0, 9], &[1]).is_err());
        let short = sv(&[1, 2], 2);
        assert!(compute_delta(&i, &short, &[0], &[1]).is_err());
    }

    #[test]
    fn delta_rows_and_columns_sum_to_zero() {
        let mut rng = rng_for(11, &[]);
        for trial in 0..50u64 {
            let n = 40 + (trial as usize % 60);
            let h = 2 + (trial % 7) as u16;
            let i = sv(
                &(0..n)
                    .map(|_| rng.random_range(1..=h))
                    .collect::<Vec<_>>(),
                h,
            );
            let j = sv(
                &(0..n)
                    .map(|_| rng.random_range(1..=h))
                    .collect::<Vec<_>>(),
                h,
            );
            let half: Vec<usize> = (0..n / 2).collect();
            let rest: Vec<usize> = (n / 2..n).collect();
            let (da, db) = compute_delta(&i, &j, &half, &rest).unwrap();
            assert!(da.max_marginal_sum() < 1e-9, "{}", da.max_marginal_sum());
            assert!(db.max_marginal_sum() < 1e-9);
        }
    }

    #[test]
    fn required_sample_size_matches_formula() {
        assert_eq!(required_sample_size(8, 0.1, 0.05).unwrap(), 172_555);
        assert_eq!(required_sample_size(2, 1.0, 1.0 / std::f64::consts::E).unwrap(), 36);
        // Doubling epsilon quarters the requirement (up to ceiling).
        let g1 = required_sample_size(8, 0.05, 0.05).unwrap();
        let g2 = required_sample_size(8, 0.1, 0.05).unwrap();
        assert!((g1 as f64 / g2 as f64 - 4.0).abs() < 1e-4);
        assert!(required_sample_size(1, 0.1, 0.05).is_err());
        assert!(required_sample_size(8, 0.0, 0.05).is_err());
        assert!(required_sample_size(8, 0.1, 1.0).is_err());
    }

    #[test]
    fn ca_all_zero_delta_scores_zero() {
        let delta = DeltaMatrix::from_entries(2, vec![0.0; 4], 10).unwrap();
        let reports = vec![sv(&[1, 2, 1, 2], 2), sv(&[2, 1, 2, 1], 2)];
        let mut rng = rng_for(12, &[]);
        let scores = ca_homogeneous(&reports, &delta, &[0, 1], &[2, 3], &mut rng).unwrap();
        assert!(scores.iter().all(|s| s.q == 0.0));
    }

    #[test]
    fn ca_forced_instance_scores_one() {
        // Two clients reporting [1,1,2]; bonus p0, penalty {p1,p2}; identity
        // score matrix. Both penalty orderings hit S(1,2)=S(2,1)=0.
        let delta = DeltaMatrix::from_entries(2, vec![0.25, -0.25, -0.25, 0.25], 4).unwrap();
        let reports = vec![sv(&[1, 1, 2], 2), sv(&[1, 1, 2], 2)];
        for seed in 0..20 {
            let mut rng = rng_for(13, &[seed]);
            let scores = ca_homogeneous(&reports, &delta, &[0], &[1, 2], &mut rng).unwrap();
            assert_eq!(scores[0].q, 1.0);
            assert_eq!(scores[1].q, 1.0);
        }
    }

    #[test]
    fn ca_rejects_degenerate_inputs() {
        let delta = DeltaMatrix::from_entries(2, vec![0.0; 4], 4).unwrap();
        let one = vec![sv(&[1, 1, 2], 2)];
        let mut rng = rng_for(14, &[]);
        assert!(ca_homogeneous(&one, &delta, &[0], &[1, 2], &mut rng).is_err());
        let two = vec![sv(&[1, 1, 2], 2), sv(&[1, 2, 2], 2)];
        assert!(ca_homogeneous(&two, &delta, &[0], &[1], &mut rng).is_err());
    }

    // Monte-Carlo check of the CA expectation on a correlated instance: all
    // clients identical, uniform binary signals, identity score matrix. The
    // bonus term is always 1; the penalty term hits 1 exactly when the two
    // drawn penalty parameters carry equal signals.
    #[test]
    fn ca_expectation_matches_enumeration_oracle() {
        let mut rng = rng_for(15, &[]);
        let n = 64;
        let vals: Vec<u16> = (0..n).map(|_| rng.random_range(1..=2)).collect();
        let reports = vec![sv(&vals, 2), sv(&vals, 2), sv(&vals, 2)];
        let delta = DeltaMatrix::from_entries(2, vec![0.25, -0.25, -0.25, 0.25], n).unwrap();
        let bonus: Vec<usize> = (0..8).collect();
        let penalty: Vec<usize> = (8..n).collect();

        // Oracle: exact E[penalty] by enumerating ordered distinct pairs.
        let mut eq_pairs = 0u64;
        let mut pairs = 0u64;
        for &q in &penalty {
            for &q2 in &penalty {
                if q != q2 {
                    pairs += 1;
                    eq_pairs += u64::from(vals[q] == vals[q2]);
                }
            }
        }
        let expected = 1.0 - eq_pairs as f64 / pairs as f64;

        let trials = 4000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for t in 0..trials {
            let mut trng = rng_for(16, &[t]);
            let scores = ca_homogeneous(&reports, &delta, &bonus, &penalty, &mut trng).unwrap();
            sum += scores[0].q;
            sumsq += scores[0].q * scores[0].q;
        }
        let mean = sum / trials as f64;
        let var = (sumsq / trials as f64 - mean * mean).max(0.0);
        let se = (var / trials as f64).sqrt();
        assert!(
            (mean - expected).abs() < 4.0 * se + 1e-9,
            "mean {mean} expected {expected} se {se}"
        );
    }

    fn correlated_reports(n_clients: usize, n_params: usize, seed: u64) -> Vec<SignalVector> {
        use crate::quantize::{quantize, QuantizerConfig, RoundingMode};
        let qc = QuantizerConfig::new(8, 0.1, RoundingMode::Stochastic).unwrap();
        let mut base_rng = rng_for(seed, &[0]);
        let consensus: Vec<f64> = (0..n_params)
            .map(|_| base_rng.random_range(-0.1..0.1))
            .collect();
        (0..n_clients)
            .map(|c| {
                let mut crng = rng_for(seed, &[1, c as u64]);
                let noisy: Vec<f64> = consensus
                    .iter()
                    .map(|&v| v + 0.02 * (crng.random::<f64>() - 0.5))
                    .collect();
                quantize(&noisy, &qc, &mut crng).unwrap()
            })
            .collect()
    }

    #[test]
    fn pca_identical_uniform_binary_reports_score_half() {
        // One shared uniform binary vector: bonus term 1, penalty term is an
        // agreement indicator with probability ~1/2, so E[Q] ~ 0.5. A single
        // draw has std error ~0.05; check the Monte-Carlo mean.
        let mut rng = rng_for(17, &[]);
        let vals: Vec<u16> = (0..4000).map(|_| rng.random_range(1..=2)).collect();
        let reports = vec![sv(&vals, 2), sv(&vals, 2)];
        let cfg = PcaConfig {
            peers: 1,
            bonus_size: 100,
            min_penalty_pool: 2,
        };
        let runs = 50;
        let mut mean = 0.0;
        for seed in 0..runs {
            let mut run_rng = rng_for(17, &[seed]);
            let scores = pca_score(&reports, &cfg, &mut run_rng).unwrap();
            assert!((scores[0].q - 0.5).abs() <= 0.25, "q = {}", scores[0].q);
            mean += scores[0].q;
        }
        mean /= runs as f64;
        assert!((mean - 0.5).abs() <= 0.05, "mean q = {mean}");
    }

    #[test]
    fn pca_constant_reporter_scores_exactly_zero() {
        let reports_rest = correlated_reports(6, 3000, 18);
        let mut reports = vec![sv(&vec![1u16; 3000], 8)];
        reports.extend(reports_rest);
        let cfg = PcaConfig {
            peers: 3,
            bonus_size: 200,
            min_penalty_pool: 2,
        };
        for seed in 0..5 {
            let mut rng = rng_for(19, &[seed]);
            let scores = pca_score(&reports, &cfg, &mut rng).unwrap();
            assert_eq!(scores[0].q, 0.0, "constant reporter must score 0");
            assert!(scores[1..].iter().all(|s| s.q > 0.0));
        }
    }

    #[test]
    fn pca_scores_are_bounded() {
        let reports = correlated_reports(8, 600, 20);
        let cfg = PcaConfig {
            peers: 4,
            bonus_size: 50,
            min_penalty_pool: 2,
        };
        let mut rng = rng_for(21, &[]);
        let scores = pca_score(&reports, &cfg, &mut rng).unwrap();
        for s in &scores {
            assert!(s.q >= -1.0 && s.q <= 1.0);
        }
    }

    #[test]
    fn pca_rejects_insufficient_clients_and_parameters() {
        let reports = correlated_reports(3, 100, 22);
        let cfg = PcaConfig {
            peers: 5,
            bonus_size: 10,
            min_penalty_pool: 2,
        };
        let mut rng = rng_for(23, &[]);
        match pca_score(&reports, &cfg, &mut rng) {
            Err(Error::InsufficientClients { needed, actual }) => {
                assert_eq!((needed, actual), (6, 3));
            }
            other => panic!("expected InsufficientClients, got {other:?}"),
        }
        let cfg = PcaConfig {
            peers: 2,
            bonus_size: 49,
            min_penalty_pool: 2,
        };
        assert!(pca_score(&reports, &cfg, &mut rng).is_err());
    }

    #[test]
    fn pca_keyed_is_permutation_equivariant() {
        let reports = correlated_reports(7, 800, 24);
        let keys: Vec<u64> = vec![10, 3, 52, 7, 21, 40, 33];
        let cfg = PcaConfig {
            peers: 3,
            bonus_size: 60,
            min_penalty_pool: 2,
        };
        let base = pca_score_keyed(&reports, &keys, &cfg, 999).unwrap();
        // Permute clients; scores must follow their keys exactly.
        let perm = [4usize, 0, 6, 2, 5, 1, 3];
        let perm_reports: Vec<SignalVector> =
            perm.iter().map(|&p| reports[p].clone()).collect();
        let perm_keys: Vec<u64> = perm.iter().map(|&p| keys[p]).collect();
        let permuted = pca_score_keyed(&perm_reports, &perm_keys, &cfg, 999).unwrap();
        for (pos, &p) in perm.iter().enumerate() {
            assert_eq!(permuted[pos].client, base[p].client);
            assert_eq!(permuted[pos].q, base[p].q);
        }
    }

    #[test]
    fn pca_keyed_rejects_duplicate_keys() {
        let reports = correlated_reports(4, 200, 25);
        let cfg = PcaConfig {
            peers: 2,
            bonus_size: 10,
            min_penalty_pool: 2,
        };
        assert!(pca_score_keyed(&reports, &[1, 2, 2, 4], &cfg, 1).is_err());
    }

    #[test]
    fn pca_is_deterministic_per_master_seed() {
        let reports = correlated_reports(6, 500, 26);
        let keys: Vec<u64> = (0..6).collect();
        let cfg = PcaConfig {
            peers: 2,
            bonus_size: 40,
            min_penalty_pool: 2,
        };
        let a = pca_score_keyed(&reports, &keys, &cfg, 7).unwrap();
        let b = pca_score_keyed(&reports, &keys, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = pca_score_keyed(&reports, &keys, &cfg, 8).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.q != y.q));
    }

    #[test]
    fn score_matrix_depends_only_on_estimation_half() {
        // Changing reports on A's indices must leave the delta estimated on B
        // untouched: the score applied to A is a function of B's reports only.
        let i = correlated_reports(2, 400, 27).remove(0);
        let j = correlated_reports(2, 400, 28).remove(1);
        let set_a: Vec<usize> = (0..200).collect();
        let set_b: Vec<usize> = (200..400).collect();
        let (_, db) = compute_delta(&i, &j, &set_a, &set_b).unwrap();
        // Scramble the A-half of both reports.
        let mut i2 = i.signals().to_vec();
        let mut j2 = j.signals().to_vec();
        for p in 0..200 {
            i2[p] = (i2[p] % 8) + 1;
            j2[p] = ((j2[p] + 3) % 8) + 1;
        }
        let i2 = sv(&i2, 8);
        let j2 = sv(&j2, 8);
        let (_, db2) = compute_delta(&i2, &j2, &set_a, &set_b).unwrap();
        assert_eq!(db.entries(), db2.entries());
    }
}
