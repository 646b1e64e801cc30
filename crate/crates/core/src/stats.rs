//! Paired sign test used by the statistical acceptance checks.

use statrs::distribution::{Binomial, DiscreteCDF};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs where the first sample is strictly smaller.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided p-value for "first < second" under the null of no
    /// difference (ties dropped).
    pub p_value: f64,
}

impl SignTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// One-sided sign test that `a[i] < b[i]` more often than not.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "paired samples");
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let ties = a.len() - wins - losses;
    let n = (wins + losses) as u64;
    let p_value = if n == 0 {
        1.0
    } else {
        // P(X >= wins) for X ~ Bin(n, 1/2)
        let bin = Binomial::new(0.5, n).expect("valid binomial");
        if wins == 0 {
            1.0
        } else {
            bin.sf(wins as u64 - 1)
        }
    };
    SignTest { wins, losses, ties, p_value }
}
