//! High-level test execution: deterministic adjustment, slack extraction,
//! eigenvalue problem, normalization, and critical-value lookup in one call.

use crate::detrend::{adjust, DetMode};
use crate::error::{CtError, Result};
use crate::extractor::slack_extractor;
use crate::fdata::FunctionalSeries;
use crate::gev::{statistic_value, vr_eigen, GevResult, TestFamily, VrConfig};
use crate::limits::{LimitFamily, Quantiles, TableStore};

#[derive(Debug, Clone, serde::Serialize)]
pub struct TestReport {
    pub family: TestFamily,
    pub d_l: usize,
    pub d_r: usize,
    pub d0: usize,
    pub k: usize,
    pub det: DetMode,
    pub functional: crate::gev::Functional,
    pub statistic: f64,
    pub n_t: f64,
    pub mu_tilde: Vec<f64>,
    pub h_l: usize,
    pub h_r: usize,
    pub h_p: usize,
    pub t_eff: usize,
    pub alpha: f64,
    pub critical_values: Quantiles,
    pub critical_value_used: f64,
    pub p_bracket: (f64, f64),
    pub reject: bool,
    pub flags: Vec<String>,
}

/// The limiting law matching a finite-sample configuration.
pub fn limit_family_for(cfg: &VrConfig) -> LimitFamily {
    match (cfg.family, cfg.d_r) {
        (TestFamily::Vr, 1) => LimitFamily::vr_dl1(cfg.d0, cfg.d_l, cfg.det, cfg.functional),
        (TestFamily::Vr, _) => LimitFamily::vr_dl0(cfg.d0, cfg.d_l, cfg.det, cfg.functional),
        (TestFamily::InverseVr, _) => {
            LimitFamily::inverse_vr(cfg.d0, cfg.k, cfg.d_l, cfg.det, cfg.functional)
        }
    }
}

/// Run one VR or inverse-VR test end to end on a level series.
/// The series may be unadjusted (mode none) or already adjusted to cfg.det.
pub fn run_test(
    series: &FunctionalSeries,
    cfg: &VrConfig,
    alpha: f64,
    store: &TableStore,
) -> Result<(GevResult, TestReport)> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(CtError::Parameter(format!("alpha must be in (0, 0.5), got {alpha}")));
    }
    let adjusted;
    let series = if series.deterministic_mode == cfg.det {
        series
    } else {
        adjusted = adjust(series, cfg.det)?;
        &adjusted
    };
    let t = series.nrows();
    let a_r_pos = cfg.a_r_positive(t)?;
    let proj = slack_extractor(series, cfg.k, a_r_pos, cfg.kernel_p, &cfg.bw_p)?;
    let gev = vr_eigen(series, cfg, &proj)?;
    let statistic = statistic_value(&gev, cfg)?;

    let fam = limit_family_for(cfg);
    let table = store.get(&fam)?;
    let cv = table.quantile_at(1.0 - alpha);
    let p_bracket = table.p_bracket(statistic);

    let mut flags = Vec::new();
    if gev.ridge_applied {
        flags.push("ridge-regularized left operator".to_string());
    }
    if proj.indefinite_warning {
        flags.push("indefinite long-run extractor source".to_string());
    }

    let report = TestReport {
        family: cfg.family,
        d_l: cfg.d_l,
        d_r: cfg.d_r,
        d0: cfg.d0,
        k: cfg.k,
        det: cfg.det,
        functional: cfg.functional,
        statistic,
        n_t: gev.n_t,
        mu_tilde: gev.mu_tilde.clone(),
        h_l: gev.h_l,
        h_r: gev.h_r,
        h_p: proj.h_p,
        t_eff: t,
        alpha,
        critical_values: table.quantiles,
        critical_value_used: cv,
        p_bracket,
        reject: statistic > cv,
        flags,
    };
    Ok((gev, report))
}

/// Eigenvalues only (no critical values), e.g. for ratio estimators.
pub fn run_eigen(series: &FunctionalSeries, cfg: &VrConfig) -> Result<GevResult> {
    cfg.validate()?;
    let adjusted;
    let series = if series.deterministic_mode == cfg.det {
        series
    } else {
        adjusted = adjust(series, cfg.det)?;
        &adjusted
    };
    let t = series.nrows();
    let a_r_pos = cfg.a_r_positive(t)?;
    let proj = slack_extractor(series, cfg.k, a_r_pos, cfg.kernel_p, &cfg.bw_p)?;
    vr_eigen(series, cfg, &proj)
}
