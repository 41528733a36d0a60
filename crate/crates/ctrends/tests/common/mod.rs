//! Helpers shared by the integration test suites.
#![allow(dead_code)]

use ctrends::detrend::DetMode;
use ctrends::fdata::{make_basis, BasisKind, FunctionalSeries};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// T×p coordinates with the first `trends` columns random walks and the rest
/// mildly autocorrelated stationary noise.
pub fn walk_coords(seed: u64, t: usize, p: usize, trends: usize) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut coords = DMatrix::zeros(t, p);
    let mut level = vec![0.0f64; p];
    for i in 0..t {
        for j in 0..p {
            let e: f64 = StandardNormal.sample(&mut rng);
            if j < trends {
                level[j] += e;
            } else {
                level[j] = 0.4 * level[j] + e;
            }
            coords[(i, j)] = level[j];
        }
    }
    coords
}

pub fn series_from(coords: DMatrix<f64>) -> FunctionalSeries {
    let p = coords.ncols();
    let basis = make_basis(BasisKind::RawCoordinates, p, None).unwrap();
    FunctionalSeries::from_coords(coords, basis).unwrap()
}

/// Ordinary least-squares residuals against a constant, or a constant and a
/// linear trend, written out directly.
pub fn ols_residuals(x: &DMatrix<f64>, det: DetMode) -> DMatrix<f64> {
    let (t, p) = (x.nrows(), x.ncols());
    let mut u = x.clone();
    match det {
        DetMode::None => u,
        DetMode::Intercept => {
            for j in 0..p {
                let mean = (0..t).map(|i| x[(i, j)]).sum::<f64>() / t as f64;
                for i in 0..t {
                    u[(i, j)] -= mean;
                }
            }
            u
        }
        DetMode::Trend => {
            let tbar = (t as f64 + 1.0) / 2.0;
            let sxx: f64 = (1..=t).map(|i| (i as f64 - tbar).powi(2)).sum();
            for j in 0..p {
                let mean = (0..t).map(|i| x[(i, j)]).sum::<f64>() / t as f64;
                let sxy: f64 = (0..t).map(|i| (i as f64 + 1.0 - tbar) * x[(i, j)]).sum();
                let slope = sxy / sxx;
                for i in 0..t {
                    u[(i, j)] -= mean + slope * (i as f64 + 1.0 - tbar);
                }
            }
            u
        }
    }
}

/// Ascending real eigenvalues of B relative to A computed through the dense
/// nonsymmetric route inv(A) * B.
pub fn dense_pencil_eigs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let m = a.clone().try_inverse().expect("left matrix invertible") * b;
    let mut eigs: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.re).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

/// Breitung's cointegration-rank statistic for the hypothesis of d0 common
/// trends: T^2 times the sum of the d0 smallest eigenvalues of the pencil of
/// the outer-product sums of the residuals and their partial sums.
pub fn breitung_statistic(x: &DMatrix<f64>, d0: usize, det: DetMode) -> f64 {
    let (t, p) = (x.nrows(), x.ncols());
    let u = ols_residuals(x, det);
    let mut s = DMatrix::zeros(t, p);
    for j in 0..p {
        let mut acc = 0.0;
        for i in 0..t {
            acc += u[(i, j)];
            s[(i, j)] = acc;
        }
    }
    let a = s.transpose() * &s; // partial-sum outer products
    let b = u.transpose() * &u; // residual outer products
    let eigs = dense_pencil_eigs(&a, &b);
    (t as f64).powi(2) * eigs.iter().take(d0).sum::<f64>()
}

/// The standard KPSS statistic with a Tukey-Hanning long-run variance at
/// bandwidth h, written out directly.
pub fn kpss_statistic(y: &[f64], det: DetMode, h: usize) -> f64 {
    let t = y.len();
    let x = DMatrix::from_column_slice(t, 1, y);
    let u = ols_residuals(&x, det);
    let mut cum = 0.0;
    let mut num = 0.0;
    for i in 0..t {
        cum += u[(i, 0)];
        num += cum * cum;
    }
    let gamma = |s: usize| -> f64 {
        (0..t - s).map(|i| u[(i, 0)] * u[(i + s, 0)]).sum::<f64>() / t as f64
    };
    let mut omega = gamma(0);
    for s in 1..=h {
        let x = s as f64 / h as f64;
        let k = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
        omega += 2.0 * k * gamma(s);
    }
    num / (t as f64).powi(2) / omega
}

pub fn random_orthogonal(seed: u64, p: usize) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    g.qr().q()
}

pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(f)
}
