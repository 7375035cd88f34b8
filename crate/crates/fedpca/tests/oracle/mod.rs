//! Brute-force oracle for the pairwise scorer, written from first
//! principles and independent of the library's scoring internals: empirical
//! joint/marginal frequencies as exact rationals, strict-positivity signs,
//! and full enumeration over every bonus split, half split, and ordered
//! penalty-pair draw.

use num_rational::Ratio;

type Q = Ratio<i128>;

fn q(n: i128, d: i128) -> Q {
    Ratio::new(n, d)
}

/// All size-k subsets of 0..n in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

/// Exact delta matrix of the report pair over `set`: joint frequency minus
/// the product of the marginals, as rationals.
fn delta(a: &[u16], b: &[u16], levels: u16, set: &[usize]) -> Vec<Vec<Q>> {
    let h = levels as usize;
    let n = set.len() as i128;
    let mut joint = vec![vec![0i128; h]; h];
    let mut ma = vec![0i128; h];
    let mut mb = vec![0i128; h];
    for &p in set {
        let x = (a[p] - 1) as usize;
        let y = (b[p] - 1) as usize;
        joint[x][y] += 1;
        ma[x] += 1;
        mb[y] += 1;
    }
    let mut out = vec![vec![q(0, 1); h]; h];
    for x in 0..h {
        for y in 0..h {
            out[x][y] = q(joint[x][y], n) - q(ma[x], n) * q(mb[y], n);
        }
    }
    out
}

fn sign(v: Q) -> i128 {
    i128::from(v > q(0, 1))
}

/// Exact expected contribution of `reports[focus]` under the pairwise
/// correlated agreement scorer with one peer, enumerating every random
/// choice uniformly: the bonus subset, the half split (A gets the larger
/// half when the count is odd), and the two distinct penalty draws within
/// the same half as each bonus parameter. Bonus parameters in one half are
/// scored with the sign of the delta estimated on the other half.
pub fn expected_q(reports: &[Vec<u16>], levels: u16, focus: usize, bonus_size: usize) -> Q {
    assert_eq!(reports.len(), 2, "oracle covers the two-client case");
    let peer = 1 - focus;
    let a = &reports[focus];
    let b = &reports[peer];
    let n = a.len();
    let size_a = n - n / 2;

    let mut total = q(0, 1);
    let mut outcomes = 0i128;
    for bonus in subsets(n, bonus_size) {
        let in_bonus = |p: usize| bonus.contains(&p);
        for set_a in subsets(n, size_a) {
            let set_b: Vec<usize> = (0..n).filter(|p| !set_a.contains(p)).collect();
            let delta_a = delta(a, b, levels, &set_a);
            let delta_b = delta(a, b, levels, &set_b);
            let mut score = q(0, 1);
            for (half, other_delta) in [(&set_a, &delta_b), (&set_b, &delta_a)] {
                let pool: Vec<usize> =
                    half.iter().copied().filter(|&p| !in_bonus(p)).collect();
                for &p in half.iter().filter(|&&p| in_bonus(p)) {
                    let bonus_term =
                        sign(other_delta[(a[p] - 1) as usize][(b[p] - 1) as usize]);
                    // Mean penalty over ordered pairs (q1, q2), q1 != q2.
                    let mut penalty = q(0, 1);
                    let mut pairs = 0i128;
                    for &q1 in &pool {
                        for &q2 in &pool {
                            if q1 != q2 {
                                penalty += q(
                                    sign(
                                        other_delta[(a[q1] - 1) as usize]
                                            [(b[q2] - 1) as usize],
                                    ),
                                    1,
                                );
                                pairs += 1;
                            }
                        }
                    }
                    assert!(pairs >= 2, "penalty pool too small for the oracle");
                    score += q(bonus_term, 1) - penalty / q(pairs, 1);
                }
            }
            total += score;
            outcomes += 1;
        }
    }
    total / q(outcomes, 1) / q(bonus_size as i128, 1)
}
