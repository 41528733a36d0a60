//! Dimension determination (sequential TD / BU / UD procedures, eigenvalue
//! ratio estimators) and subspace hypothesis tests.

use nalgebra::{DMatrix, DVector};

use crate::detrend::DetMode;
use crate::error::{CtError, Result};
use crate::fdata::FunctionalSeries;
use crate::gev::{TestFamily, VrConfig};
use crate::limits::TableStore;
use crate::runner::{run_test, TestReport};

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRecord {
    pub d0: usize,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DimEstimate {
    pub estimate: usize,
    pub trace: Vec<StepRecord>,
}

/// Per-step choice of the projection rank K as a function of d0.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub enum KRule {
    /// K(d0) = d0 + m.
    PerStep(usize),
    Fixed(usize),
}

impl Default for KRule {
    fn default() -> Self {
        KRule::PerStep(2)
    }
}

impl KRule {
    fn k_for(&self, d0: usize, family: TestFamily, p: usize) -> usize {
        let min_k = match family {
            TestFamily::Vr => d0.max(1),
            TestFamily::InverseVr => d0 + 1,
        };
        let k = match self {
            KRule::PerStep(m) => d0 + m,
            KRule::Fixed(k) => *k,
        };
        k.max(min_k).min(p)
    }
}

/// Top-down skeleton: tests d0 = d_max, d_max-1, ..., 1 and returns the
/// first non-rejected d0, else 0.
pub fn sequential_td_with(
    d_max: usize,
    mut step: impl FnMut(usize) -> Result<StepRecord>,
) -> Result<DimEstimate> {
    if d_max < 1 {
        return Err(CtError::Parameter("d_max must be >= 1".into()));
    }
    let mut trace = Vec::new();
    for d0 in (1..=d_max).rev() {
        let rec = step(d0)?;
        let reject = rec.reject;
        trace.push(rec);
        if !reject {
            return Ok(DimEstimate { estimate: d0, trace });
        }
    }
    Ok(DimEstimate { estimate: 0, trace })
}

/// Bottom-up skeleton: tests d0 = 0, 1, ... and returns the first
/// non-rejected d0; the cap guards nontermination.
pub fn sequential_bu_with(
    d0_cap: usize,
    mut step: impl FnMut(usize) -> Result<StepRecord>,
) -> Result<DimEstimate> {
    let mut trace = Vec::new();
    for d0 in 0..=d0_cap {
        let rec = step(d0)?;
        let reject = rec.reject;
        trace.push(rec);
        if !reject {
            return Ok(DimEstimate { estimate: d0, trace });
        }
    }
    Err(CtError::NoDecision {
        cap: d0_cap,
        trace: trace.iter().map(|r| (r.d0, r.reject)).collect(),
    })
}

fn run_step(
    series: &FunctionalSeries,
    base: &VrConfig,
    d0: usize,
    k_rule: KRule,
    alpha: f64,
    store: &TableStore,
) -> Result<StepRecord> {
    let mut cfg = base.clone();
    cfg.d0 = d0;
    cfg.k = k_rule.k_for(d0, cfg.family, series.dim());
    let (_, rep) = run_test(series, &cfg, alpha, store)?;
    Ok(StepRecord {
        d0,
        statistic: rep.statistic,
        critical_value: rep.critical_value_used,
        reject: rep.reject,
    })
}

/// Top-down procedure over a VR family.
pub fn sequential_td(
    series: &FunctionalSeries,
    base: &VrConfig,
    d_max: usize,
    k_rule: KRule,
    alpha: f64,
    store: &TableStore,
) -> Result<DimEstimate> {
    if base.family != TestFamily::Vr {
        return Err(CtError::Config("top-down procedure needs a VR family".into()));
    }
    sequential_td_with(d_max, |d0| run_step(series, base, d0, k_rule, alpha, store))
}

/// Bottom-up procedure over the inverse VR family.
pub fn sequential_bu(
    series: &FunctionalSeries,
    base: &VrConfig,
    d0_cap: usize,
    k_rule: KRule,
    alpha: f64,
    store: &TableStore,
) -> Result<DimEstimate> {
    if base.family != TestFamily::InverseVr {
        return Err(CtError::Config("bottom-up procedure needs the inverse VR family".into()));
    }
    sequential_bu_with(d0_cap, |d0| run_step(series, base, d0, k_rule, alpha, store))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct UdEstimate {
    pub estimate: usize,
    pub d_bu: usize,
    pub d_max: usize,
    pub bu_trace: Vec<StepRecord>,
    pub td_trace: Vec<StepRecord>,
}

/// Up-down hybrid: bottom-up first, then top-down from d_BU + m.
pub fn sequential_ud(
    series: &FunctionalSeries,
    bu_base: &VrConfig,
    td_base: &VrConfig,
    m: usize,
    k_rule: KRule,
    alpha: f64,
    store: &TableStore,
) -> Result<UdEstimate> {
    // inverse VR needs K > d0 with K <= p, so d0 can be at most p - 1
    let cap = series.dim().saturating_sub(1);
    let bu = sequential_bu(series, bu_base, cap, k_rule, alpha, store)?;
    let d_max = (bu.estimate + m).min(series.dim());
    if d_max == 0 {
        return Ok(UdEstimate {
            estimate: 0,
            d_bu: bu.estimate,
            d_max,
            bu_trace: bu.trace,
            td_trace: Vec::new(),
        });
    }
    let td = sequential_td(series, td_base, d_max, k_rule, alpha, store)?;
    Ok(UdEstimate {
        estimate: td.estimate,
        d_bu: bu.estimate,
        d_max,
        bu_trace: bu.trace,
        td_trace: td.trace,
    })
}

/// Ratio estimator on ascending generalized eigenvalues: the trend count is
/// where mu_{j+1}/mu_j peaks.
pub fn eig_ratio_estimator(mu: &[f64], d_max: usize) -> Result<usize> {
    if d_max + 1 > mu.len() {
        return Err(CtError::Parameter(format!(
            "need K >= d_max+1 eigenvalues, got {} for d_max={d_max}",
            mu.len()
        )));
    }
    let mut best_j = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut any = false;
    for j in 1..=d_max {
        let lo = mu[j - 1];
        let hi = mu[j];
        if lo <= 0.0 {
            continue; // zero eigenvalues are skipped
        }
        let r = hi / lo;
        if r.is_finite() {
            any = true;
            if r > best {
                best = r;
                best_j = j;
            }
        }
    }
    if !any {
        return Err(CtError::EstimatorFailure("all eigenvalue ratios non-finite".into()));
    }
    Ok(best_j)
}

/// Thresholded smallest-ratio estimator on descending variance eigenvalues:
/// eigenvalues below kappa (relative to the largest) are treated as zero
/// and 0/0 counts as 1.
pub fn lrs_estimator(eigs: &[f64], kappa: f64, d_max: usize) -> Result<usize> {
    if kappa <= 0.0 {
        return Err(CtError::Parameter("kappa must be > 0".into()));
    }
    if d_max + 1 > eigs.len() {
        return Err(CtError::Parameter(format!(
            "need d_max+1 eigenvalues, got {} for d_max={d_max}",
            eigs.len()
        )));
    }
    let top = eigs[0];
    let thresholded: Vec<f64> = eigs
        .iter()
        .map(|&e| if top > 0.0 && e / top < kappa { 0.0 } else { e })
        .collect();
    let mut best_j = 1usize;
    let mut best = f64::INFINITY;
    for j in 1..=d_max {
        let num = thresholded[j];
        let den = thresholded[j - 1];
        let r = if den == 0.0 {
            if num == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            num / den
        };
        if r < best {
            best = r;
            best_j = j;
        }
    }
    Ok(best_j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceKind {
    /// H0 is contained in the nonstationary subspace (d0 = d_N - p0).
    ContainedInN,
    /// H0 spans the nonstationary subspace (d0 = 0 on the residuals).
    SpansN,
    /// H0 is contained in the stationary subspace (d0 = 0 on the projection).
    ContainedInS,
}

/// Gram-Schmidt with a rank check; returns p x p0 orthonormal columns.
pub fn orthonormalize(vectors: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if vectors.is_empty() {
        return Err(CtError::Rank("no hypothesis vectors given".into()));
    }
    let p = vectors[0].len();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != p {
            return Err(CtError::Dimension("hypothesis vectors have mixed lengths".into()));
        }
        let mut u = v.clone();
        for c in &cols {
            let proj = c.dot(&u);
            u -= c * proj;
        }
        let norm = u.norm();
        if norm <= 1e-10 * v.norm().max(1e-300) {
            return Err(CtError::Rank(format!(
                "hypothesis vector {} is linearly dependent on the previous ones",
                i + 1
            )));
        }
        cols.push(u / norm);
    }
    let mut out = DMatrix::zeros(p, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    Ok(out)
}

/// Residual series (I - P_{H0}) X_t in the original coordinates.
pub fn residual_series(series: &FunctionalSeries, v: &DMatrix<f64>) -> Result<FunctionalSeries> {
    if v.nrows() != series.dim() {
        return Err(CtError::Dimension("hypothesis vectors do not match series dimension".into()));
    }
    let proj_coords = (&series.coords * v) * v.transpose();
    let mut out = series.clone();
    out.coords = &series.coords - proj_coords;
    out.deterministic_mode = DetMode::None;
    Ok(out)
}

pub fn subspace_test(
    series: &FunctionalSeries,
    h0_vectors: &[DVector<f64>],
    kind: SubspaceKind,
    d_n: usize,
    det: DetMode,
    alpha: f64,
    k_override: Option<usize>,
    store: &TableStore,
) -> Result<TestReport> {
    let v = orthonormalize(h0_vectors)?;
    let p0 = v.ncols();
    match kind {
        SubspaceKind::ContainedInN if d_n < p0 => {
            return Err(CtError::Config(format!(
                "contained-in-N requires d_N >= p0, got d_N={d_n}, p0={p0}"
            )));
        }
        SubspaceKind::SpansN if p0 < d_n => {
            return Err(CtError::Config(format!(
                "spans-N requires p0 >= d_N, got d_N={d_n}, p0={p0}"
            )));
        }
        _ => {}
    }

    let (work, d0, k) = match kind {
        SubspaceKind::ContainedInN => {
            let d0 = d_n - p0;
            let resid = residual_series(series, &v)?;
            let k = k_override.unwrap_or(d0 + 2);
            (resid, d0, k)
        }
        SubspaceKind::SpansN => {
            let resid = residual_series(series, &v)?;
            let k = k_override.unwrap_or(2);
            (resid, 0, k)
        }
        SubspaceKind::ContainedInS => {
            let z = &series.coords * &v;
            let basis = crate::fdata::make_basis(crate::fdata::BasisKind::RawCoordinates, p0, None)?;
            let fs = FunctionalSeries::from_coords(z, basis)?;
            (fs, 0, p0)
        }
    };

    // Degenerate residuals (H0 spanning the whole space): report a flagged
    // non-rejection rather than failing.
    let scale = series.coords.norm().max(1e-300);
    if work.coords.norm() <= 1e-10 * scale {
        let cfg = VrConfig::inverse(d0, det).with_k(k.max(d0 + 1));
        let fam = crate::runner::limit_family_for(&cfg);
        let table = store.get(&fam)?;
        return Ok(TestReport {
            family: TestFamily::InverseVr,
            d_l: cfg.d_l,
            d_r: cfg.d_r,
            d0,
            k: cfg.k,
            det,
            functional: cfg.functional,
            statistic: 0.0,
            n_t: 0.0,
            mu_tilde: Vec::new(),
            h_l: 0,
            h_r: 0,
            h_p: 0,
            t_eff: series.nrows(),
            alpha,
            critical_values: table.quantiles,
            critical_value_used: table.quantile_at(1.0 - alpha),
            p_bracket: (0.0, 1.0),
            reject: false,
            flags: vec!["degenerate residual series; non-rejection by convention".to_string()],
        });
    }

    let cfg = VrConfig::inverse(d0, det).with_k(k.max(d0 + 1).min(work.dim()));
    let (_, rep) = run_test(&work, &cfg, alpha, store)?;
    Ok(rep)
}

/// Nelson-Siegel level/slope/curvature factors over maturities.
pub fn ns_factors(maturities: &[f64], sigma: f64) -> Result<[Vec<f64>; 3]> {
    if sigma <= 0.0 {
        return Err(CtError::Parameter("shape parameter must be > 0".into()));
    }
    if maturities.iter().any(|&t| t < 0.0) {
        return Err(CtError::Parameter("maturities must be >= 0".into()));
    }
    let mut g0 = Vec::with_capacity(maturities.len());
    let mut g1 = Vec::with_capacity(maturities.len());
    let mut g2 = Vec::with_capacity(maturities.len());
    for &tau in maturities {
        g0.push(1.0);
        if tau == 0.0 {
            g1.push(1.0);
            g2.push(0.0);
        } else {
            let e = (-tau / sigma).exp();
            let v1 = sigma * (1.0 - e) / tau;
            g1.push(v1);
            g2.push(v1 - e);
        }
    }
    Ok([g0, g1, g2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_step(decisions: &[(usize, bool)]) -> impl FnMut(usize) -> Result<StepRecord> + '_ {
        move |d0| {
            let reject = decisions
                .iter()
                .find(|(d, _)| *d == d0)
                .map(|(_, r)| *r)
                .unwrap_or(false);
            Ok(StepRecord { d0, statistic: 0.0, critical_value: 1.0, reject })
        }
    }

    #[test]
    fn td_control_flow() {
        let est = sequential_td_with(3, mock_step(&[(3, true), (2, false)])).unwrap();
        assert_eq!(est.estimate, 2);
        let est0 = sequential_td_with(2, mock_step(&[(2, true), (1, true)])).unwrap();
        assert_eq!(est0.estimate, 0);
    }

    #[test]
    fn bu_control_flow() {
        let est = sequential_bu_with(5, mock_step(&[(0, true), (1, false)])).unwrap();
        assert_eq!(est.estimate, 1);
        match sequential_bu_with(2, mock_step(&[(0, true), (1, true), (2, true)])) {
            Err(CtError::NoDecision { cap, trace }) => {
                assert_eq!(cap, 2);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("expected no-decision, got {other:?}"),
        }
    }

    #[test]
    fn ud_wiring_starts_td_at_bu_plus_m() {
        // mocked: BU accepts at 3, TD rejects 8..4 then accepts at 3
        let bu = sequential_bu_with(10, mock_step(&[(0, true), (1, true), (2, true), (3, false)]))
            .unwrap();
        assert_eq!(bu.estimate, 3);
        let d_max = bu.estimate + 5;
        assert_eq!(d_max, 8);
        let td = sequential_td_with(
            d_max,
            mock_step(&[
                (8, true),
                (7, true),
                (6, true),
                (5, true),
                (4, true),
                (3, false),
            ]),
        )
        .unwrap();
        assert_eq!(td.estimate, 3);
    }

    #[test]
    fn ratio_estimator_cases() {
        assert_eq!(eig_ratio_estimator(&[0.1, 0.2, 5.0, 6.0], 3).unwrap(), 2);
        // geometric: constant ratios, tie-break smallest index
        let geo: Vec<f64> = (0..5).map(|j| 2.0f64.powi(j)).collect();
        assert_eq!(eig_ratio_estimator(&geo, 4).unwrap(), 1);
        assert!(eig_ratio_estimator(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn lrs_cases() {
        assert_eq!(lrs_estimator(&[10.0, 1.0, 1e-9, 1e-10], 1e-4, 3).unwrap(), 2);
        let geo: Vec<f64> = (0..5).map(|j| 0.5f64.powi(j)).collect();
        assert_eq!(lrs_estimator(&geo, 1e-4, 4).unwrap(), 1);
        assert!(lrs_estimator(&geo, 0.0, 3).is_err());
    }

    #[test]
    fn gram_schmidt_projector() {
        let v1 = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let v2 = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        let v = orthonormalize(&[v1.clone(), v2]).unwrap();
        let p = &v * v.transpose();
        assert!(((&p * &p) - &p).abs().max() < 1e-10);
        assert!((&p.transpose() - &p).abs().max() < 1e-12);
        // dependent vectors rejected
        let dep = orthonormalize(&[v1.clone(), v1 * 2.0]);
        assert!(matches!(dep, Err(CtError::Rank(_))));
    }

    #[test]
    fn ns_factor_values() {
        let [g0, g1, g2] = ns_factors(&[0.0, 1.37, 30.0], 1.37).unwrap();
        assert_eq!(g0, vec![1.0, 1.0, 1.0]);
        assert!((g1[0] - 1.0).abs() < 1e-12);
        assert!(g2[0].abs() < 1e-12);
        let want = 1.0 - (-1.0f64).exp(); // tau = sigma
        assert!((g1[1] - want).abs() < 1e-12);
        assert!(ns_factors(&[1.0], 0.0).is_err());
        assert!(ns_factors(&[-1.0], 1.0).is_err());
    }
}
