//! Simulators shared by the integration tests. They compute HAR regressors
//! themselves so that they stay independent of the library code under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// (daily, weekly, monthly) for predicting `x[t]`; `overlap` selects the
/// windows {t−5..t−1}/{t−22..t−1} against {t−5..t−2}/{t−22..t−6}.
pub fn har_regressors(x: &[f64], t: usize, overlap: bool) -> [f64; 3] {
    let mean = |lo: usize, hi: usize| x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    if overlap {
        [x[t - 1], mean(t - 5, t - 1), mean(t - 22, t - 1)]
    } else {
        [x[t - 1], mean(t - 5, t - 2), mean(t - 22, t - 6)]
    }
}

/// Multivariate HAR process
/// `y_t = α + B_d d_t + B_w w_t + B_m m_t + σ ε_t`
/// started from 22 uniform draws on [0.5, 1.5].
pub struct HarProcess {
    pub alpha: DVector<f64>,
    pub bd: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub bm: DMatrix<f64>,
    pub overlap: bool,
}

impl HarProcess {
    pub fn diagonal(alpha: f64, b: [f64; 3], n: usize, overlap: bool) -> Self {
        Self {
            alpha: DVector::from_element(n, alpha),
            bd: DMatrix::from_diagonal_element(n, n, b[0]),
            bw: DMatrix::from_diagonal_element(n, n, b[1]),
            bm: DMatrix::from_diagonal_element(n, n, b[2]),
            overlap,
        }
    }

    pub fn simulate(&self, t: usize, sigma: f64, seed: u64) -> DMatrix<f64> {
        let n = self.alpha.len();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut cols: Vec<Vec<f64>> = (0..n).map(|_| (0..22).map(|_| rng.gen_range(0.5..1.5)).collect()).collect();
        for s in 22..t {
            let f: Vec<[f64; 3]> = cols.iter().map(|c| har_regressors(c, s, self.overlap)).collect();
            let d = DVector::from_fn(n, |i, _| f[i][0]);
            let w = DVector::from_fn(n, |i, _| f[i][1]);
            let m = DVector::from_fn(n, |i, _| f[i][2]);
            let next = &self.alpha + &self.bd * d + &self.bw * w + &self.bm * m;
            for i in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                cols[i].push(next[i] + sigma * e);
            }
        }
        DMatrix::from_fn(t, n, |r, c| cols[c][r])
    }
}
