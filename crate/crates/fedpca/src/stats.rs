//! Ranking metrics and two-sample diagnostics: AUC, Spearman rank
//! correlation, and the two-sample Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Statistic plus asymptotic p-value of a hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub statistic: f64,
    pub p_value: f64,
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive outranks a random negative; tied
/// scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: labels.len(),
            context: "auc labels",
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("auc scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("auc scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Config(
            "auc needs both positive and negative labels".into(),
        ));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Spearman rank correlation with average-rank ties; p-value from the
/// t-approximation with n-2 degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestVerdict> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
            context: "spearman inputs",
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Config(format!(
            "spearman needs at least 3 observations, got {n}"
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Config("spearman inputs must be finite".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::Config(
            "spearman undefined for constant input (no rank variation)".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let nf = n as f64;
    let has_ties = |r: &[f64]| {
        let mut s = r.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.windows(2).any(|w| w[0] == w[1])
    };
    let rho = if has_ties(&rx) || has_ties(&ry) {
        // Pearson correlation of the (tie-averaged) ranks.
        let mean = (nf + 1.0) / 2.0;
        let mut cov = 0.0;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        for i in 0..n {
            let dx = rx[i] - mean;
            let dy = ry[i] - mean;
            cov += dx * dy;
            var_x += dx * dx;
            var_y += dy * dy;
        }
        cov / (var_x.sqrt() * var_y.sqrt())
    } else {
        // Tie-free ranks are integers: the rank-difference form
        // 1 - 6 sum(d^2) / (n (n^2 - 1)) is exact.
        let d2: f64 = rx
            .iter()
            .zip(&ry)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum();
        1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0))
    };
    let rho = rho.clamp(-1.0, 1.0);

    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((nf - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, nf - 2.0)
            .map_err(|e| Error::Config(format!("t distribution: {e}")))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(TestVerdict {
        statistic: rho,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

/// Survival function of the Kolmogorov distribution,
/// `Q(lambda) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut q = 0.0;
    let base = -2.0 * lambda * lambda;
    for j in 1..=200 {
        let jf = j as f64;
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * 2.0 * (base * jf * jf).exp();
        q += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    q.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test: statistic is the supremum distance
/// between the empirical CDFs; p-value from the asymptotic Kolmogorov
/// distribution with effective sample size `n*m/(n+m)`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<TestVerdict> {
    if x.is_empty() {
        return Err(Error::EmptyInput("ks sample x"));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("ks sample y"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Config("ks inputs must be finite".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let m = ys.len();
    let mut i = 0;
    let mut j = 0;
    let mut stat = 0.0_f64;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] == v {
            i += 1;
        }
        while j < m && ys[j] == v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        stat = stat.max(diff);
    }
    // Once one sample is exhausted its ECDF is pinned at 1 and the gap can
    // only shrink, so the sweep above already saw the supremum.
    let effective = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = effective.sqrt() * stat;
    Ok(TestVerdict {
        statistic: stat,
        p_value: kolmogorov_survival(lambda),
    })
}
