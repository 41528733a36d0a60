//! Cross-checks against independent direct implementations: the statistic for
//! the (2,1) problem with K = p and no kernels reduces to Breitung's
//! cointegration-rank statistic, the scalar inverse statistic with h_L = 0
//! reduces to the KPSS statistic, and the generalized eigensolver must agree
//! with a dense nonsymmetric eigensolver.

mod common;

use common::*;
use ctrends::detrend::DetMode;
use ctrends::gev::{solve_gev, VrConfig};
use ctrends::lrcov::BandwidthSpec;
use ctrends::runner::run_eigen;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn breitung_equivalence_50_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(7101);
    for i in 0..50 {
        let t = rng.random_range(60..160);
        let p = rng.random_range(2..6usize);
        let trends = rng.random_range(1..=p.min(3));
        let d0 = trends;
        let det = if i % 2 == 0 { DetMode::Intercept } else { DetMode::Trend };
        let coords = walk_coords(rng.random(), t, p, trends);

        let oracle = breitung_statistic(&coords, d0, det);

        let series = series_from(coords);
        let mut cfg = VrConfig::vr21(d0, det);
        cfg.k = p;
        let gev = run_eigen(&series, &cfg).unwrap();
        let stat: f64 = gev.mu_tilde.iter().take(d0).sum();

        let rd = rel_diff(stat, oracle);
        assert!(
            rd < 1e-8,
            "instance {i}: T={t} p={p} d0={d0} det={det:?}: {stat} vs {oracle} (rel {rd:.2e})"
        );
    }
}

#[test]
fn kpss_equivalence_50_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(9205);
    for i in 0..50 {
        let t = rng.random_range(80..300);
        let h = rng.random_range(1..12usize);
        let det = if i % 2 == 0 { DetMode::Intercept } else { DetMode::Trend };
        let mut y = Vec::with_capacity(t);
        let mut state = 0.0;
        for _ in 0..t {
            let e: f64 = StandardNormal.sample(&mut rng);
            state = 0.5 * state + e;
            y.push(state);
        }

        let oracle = kpss_statistic(&y, det, h);

        let series = series_from(DMatrix::from_column_slice(t, 1, &y));
        let mut cfg = VrConfig::inverse(0, det).with_k(1);
        cfg.bw_l = BandwidthSpec::Fixed(0);
        cfg.bw_r = BandwidthSpec::Fixed(h);
        cfg.bw_p = BandwidthSpec::Fixed(h);
        let gev = run_eigen(&series, &cfg).unwrap();
        let stat = 1.0 / gev.mu_tilde[0];

        let rd = rel_diff(stat, oracle);
        assert!(rd < 1e-8, "instance {i}: T={t} h={h} det={det:?}: {stat} vs {oracle} (rel {rd:.2e})");
    }
}

#[test]
fn gev_matches_dense_eigensolver_100_pairs() {
    let mut rng = ChaCha12Rng::seed_from_u64(31137);
    for i in 0..100 {
        let k = rng.random_range(2..9usize);
        let normal = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
        let a = &normal * normal.transpose() + DMatrix::identity(k, k) * 0.1;
        let normal2 = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
        let b = &normal2 * normal2.transpose() + DMatrix::identity(k, k) * 0.1;

        let sol = solve_gev(&a, &b).unwrap();
        let dense = dense_pencil_eigs(&a, &b);
        for j in 0..k {
            let rd = rel_diff(sol.mu[j], dense[j]);
            assert!(
                rd < 1e-8,
                "pair {i} eigenvalue {j}: {} vs {} (rel {rd:.2e})",
                sol.mu[j],
                dense[j]
            );
        }
    }
}
