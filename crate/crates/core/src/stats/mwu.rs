use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{average_ranks, Method, StatResult};
use crate::error::{Error, Result};

/// Largest `n + m` for which tie-free samples get the exact null
/// distribution.
pub const EXACT_MAX_N: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `x` tends to be larger than `y`.
    Greater,
    /// `x` tends to be smaller than `y`.
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            _ => Err(Error::input(format!(
                "unknown alternative {s:?} (two-sided, greater, less)"
            ))),
        }
    }
}

/// Number of arrangements giving each value of `U_x` (count of pairs with
/// `x > y`) under the null, for sample sizes `n` and `m`.
pub fn mwu_exact_distribution(n: usize, m: usize) -> Vec<u64> {
    // table[i][j] = distribution for sizes (i, j).
    let mut table: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            let mut d = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                d[0] = 1;
            } else {
                // Largest element from x: it beats all j y's.
                for (u, &c) in table[i - 1][j].iter().enumerate() {
                    d[u + j] += c;
                }
                for (u, &c) in table[i][j - 1].iter().enumerate() {
                    d[u] += c;
                }
            }
            table[i][j] = d;
        }
    }
    std::mem::take(&mut table[n][m])
}

pub fn mann_whitney_u(x: &[f64], y: &[f64], alternative: Alternative) -> Result<StatResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::input("Mann-Whitney U needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::input("Mann-Whitney U: NaN in sample"));
    }
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = average_ranks(&pooled);
    let rx: f64 = ranks[..n].iter().sum();
    let u = rx - (n * (n + 1)) as f64 / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut has_ties = false;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        if t > 1.0 {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        i = j + 1;
    }

    let (p, method) = if !has_ties && n + m <= EXACT_MAX_N {
        let dist = mwu_exact_distribution(n, m);
        let total: u64 = dist.iter().sum();
        let u_obs = u.round() as usize;
        let le: u64 = dist[..=u_obs].iter().sum();
        let ge: u64 = dist[u_obs..].iter().sum();
        let (le, ge) = (le as f64 / total as f64, ge as f64 / total as f64);
        let p = match alternative {
            Alternative::Less => le,
            Alternative::Greater => ge,
            Alternative::TwoSided => (2.0 * le.min(ge)).min(1.0),
        };
        (p, Method::Exact)
    } else {
        let big_n = (n + m) as f64;
        let nm = (n * m) as f64;
        let mu = nm / 2.0;
        let var = nm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let sd = var.sqrt();
            let z = Normal::standard();
            match alternative {
                Alternative::Greater => z.sf((u - mu - 0.5) / sd),
                Alternative::Less => z.cdf((u - mu + 0.5) / sd),
                Alternative::TwoSided => (2.0 * z.sf(((u - mu).abs() - 0.5).max(0.0) / sd)).min(1.0),
            }
        };
        (p, Method::NormalApprox)
    };
    Ok(StatResult {
        statistic: u,
        p_value: p.clamp(0.0, 1.0),
        method,
        n_x: n,
        n_y: m,
        alpha: 0.05,
        significant: p < 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All ways to choose which pooled ranks belong to x.
    fn brute(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
        let n = x.len();
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let total = pooled.len();
        let u_of = |members: &[bool]| {
            let mut u = 0usize;
            for a in 0..total {
                for b in 0..total {
                    if members[a] && !members[b] && pooled[a] > pooled[b] {
                        u += 1;
                    }
                }
            }
            u
        };
        let mut obs = vec![false; total];
        obs[..n].fill(true);
        let u_obs = u_of(&obs);
        let (mut le, mut ge, mut count) = (0usize, 0usize, 0usize);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let members: Vec<bool> = (0..total).map(|i| mask >> i & 1 == 1).collect();
            let u = u_of(&members);
            count += 1;
            le += usize::from(u <= u_obs);
            ge += usize::from(u >= u_obs);
        }
        let (le, ge) = (le as f64 / count as f64, ge as f64 / count as f64);
        (le, ge, (2.0 * le.min(ge)).min(1.0))
    }

    #[test]
    fn small_examples() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::Less).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, Method::Exact);
        assert!((r.p_value - 1.0 / 6.0).abs() < 1e-15);
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::TwoSided).unwrap();
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_show_nothing() {
        let x = [0.3, 0.5, 0.5, 0.9, 1.2, 0.1];
        let r = mann_whitney_u(&x, &x, Alternative::TwoSided).unwrap();
        assert_eq!(r.method, Method::NormalApprox);
        assert!(r.p_value >= 0.99);
        let r = mann_whitney_u(&[1.0; 4], &[1.0; 4], Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn large_separated_samples() {
        let x: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let y: Vec<f64> = (0..10).map(|i| -1.0 - i as f64).collect();
        let r = mann_whitney_u(&x, &y, Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 100.0);
        assert!(r.p_value < 1e-3);
        assert!(mann_whitney_u(&[], &y, Alternative::Greater).is_err());
    }

    #[test]
    fn distribution_sums_to_binomial() {
        let d = mwu_exact_distribution(7, 7);
        assert_eq!(d.iter().sum::<u64>(), 3432);
        assert_eq!(d.len(), 50);
    }

    proptest! {
        #[test]
        fn exact_path_matches_enumeration(
            vals in proptest::collection::btree_set(-1000i32..1000, 2..=10),
            split in 1usize..9,
            alt in 0usize..3,
        ) {
            let vals: Vec<f64> = vals.into_iter().map(f64::from).collect();
            prop_assume!(split < vals.len());
            // Interleave so x is not always the smallest values.
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (i, v) in vals.iter().enumerate() {
                if (i * 7 + split) % vals.len() < split { x.push(*v) } else { y.push(*v) }
            }
            prop_assume!(!x.is_empty() && !y.is_empty());
            let alternative = [Alternative::Less, Alternative::Greater, Alternative::TwoSided][alt];
            let r = mann_whitney_u(&x, &y, alternative).unwrap();
            let (le, ge, two) = brute(&x, &y);
            let expect = [le, ge, two][alt];
            prop_assert_eq!(r.method, Method::Exact);
            prop_assert!((r.p_value - expect).abs() < 1e-12);
        }

        #[test]
        fn monotone_transform_invariance(
            vals in proptest::collection::btree_set(-50i32..50, 4..=20),
            split in 1usize..4,
        ) {
            let vals: Vec<f64> = vals.into_iter().map(f64::from).collect();
            let (x, y) = vals.split_at(split);
            let f = |v: &[f64]| v.iter().map(|a| (a / 10.0).exp() * 3.0 + 1.0).collect::<Vec<_>>();
            let a = mann_whitney_u(x, y, Alternative::TwoSided).unwrap();
            let b = mann_whitney_u(&f(x), &f(y), Alternative::TwoSided).unwrap();
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert_eq!(a.p_value, b.p_value);
        }
    }
}
