//! Brute-force rank-sum test: enumerate every way to label the pooled
//! sample and count pairwise wins directly.

use cup_curriculum::stats::Alternative;

/// Pairwise Mann-Whitney U, ties counted as one half.
pub fn pairwise_u(xs: &[f64], ys: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in xs {
        for y in ys {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// `(U, p)` by enumerating all `C(n + m, n)` labelings.
pub fn brute_force(xs: &[f64], ys: &[f64], alternative: Alternative) -> (f64, f64) {
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let total_n = pooled.len();
    let n = xs.len();
    let observed = pairwise_u(xs, ys);
    let (mut total, mut le, mut ge) = (0u64, 0u64, 0u64);
    for bits in 0u32..(1 << total_n) {
        if bits.count_ones() as usize != n {
            continue;
        }
        let (a, b): (Vec<f64>, Vec<f64>) = {
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(total_n - n);
            for (i, &v) in pooled.iter().enumerate() {
                if bits & (1 << i) != 0 {
                    a.push(v);
                } else {
                    b.push(v);
                }
            }
            (a, b)
        };
        let u = pairwise_u(&a, &b);
        total += 1;
        if u <= observed {
            le += 1;
        }
        if u >= observed {
            ge += 1;
        }
    }
    let p_le = le as f64 / total as f64;
    let p_ge = ge as f64 / total as f64;
    let p = match alternative {
        Alternative::Less => p_le,
        Alternative::Greater => p_ge,
        Alternative::TwoSided => (2.0 * p_le.min(p_ge)).min(1.0),
    };
    (observed, p)
}
