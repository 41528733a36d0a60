//! Deterministic-component adjustment and integer-order integration or
//! differencing of coordinate series. Adjustment is applied once to the
//! level series; differencing/partial summation act on whatever they are
//! given and bookkeep the integration order offset.

use nalgebra::DMatrix;

use crate::error::{CtError, Result};
use crate::fdata::FunctionalSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetMode {
    None,
    Intercept,
    Trend,
}

impl std::fmt::Display for DetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetMode::None => write!(f, "none"),
            DetMode::Intercept => write!(f, "intercept"),
            DetMode::Trend => write!(f, "trend"),
        }
    }
}

/// Column-wise mean removal.
pub fn demean_cols(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.nrows();
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / t as f64;
        for i in 0..t {
            out[(i, j)] -= mean;
        }
    }
    out
}

/// Column-wise OLS residuals on (1, t) with t = 1..T and tbar = (T+1)/2.
pub fn detrend_cols(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.nrows();
    let tf = t as f64;
    let tbar = (tf + 1.0) / 2.0;
    let denom: f64 = (1..=t).map(|s| (s as f64 - tbar).powi(2)).sum();
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / tf;
        let mut num = 0.0;
        for i in 0..t {
            num += ((i + 1) as f64 - tbar) * x[(i, j)];
        }
        let slope = num / denom;
        for i in 0..t {
            out[(i, j)] = x[(i, j)] - mean - slope * ((i + 1) as f64 - tbar);
        }
    }
    out
}

/// First differences; output has T-1 rows.
pub fn diff_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, p) = (x.nrows(), x.ncols());
    DMatrix::from_fn(t - 1, p, |i, j| x[(i + 1, j)] - x[(i, j)])
}

/// Running cumulative sum over rows.
pub fn cumsum_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, p) = (x.nrows(), x.ncols());
    let mut out = DMatrix::zeros(t, p);
    for j in 0..p {
        let mut acc = 0.0;
        for i in 0..t {
            acc += x[(i, j)];
            out[(i, j)] = acc;
        }
    }
    out
}

/// Build the d-times "integrated" version of a level (d=1) series:
/// d=0 differences once, d=1 is the identity, d>=2 cumulates d-1 times.
pub fn integration_level(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    match d {
        0 => diff_rows(x),
        1 => x.clone(),
        _ => {
            let mut out = x.clone();
            for _ in 1..d {
                out = cumsum_rows(&out);
            }
            out
        }
    }
}

pub fn adjust(series: &FunctionalSeries, mode: DetMode) -> Result<FunctionalSeries> {
    if mode != DetMode::None && series.deterministic_mode != DetMode::None {
        return Err(CtError::Config(format!(
            "series already adjusted ({}); refusing double adjustment",
            series.deterministic_mode
        )));
    }
    let coords = match mode {
        DetMode::None => return Ok(series.clone()),
        DetMode::Intercept => demean_cols(&series.coords),
        DetMode::Trend => {
            if series.nrows() < 3 {
                return Err(CtError::InsufficientData(
                    "trend adjustment needs T >= 3".into(),
                ));
            }
            detrend_cols(&series.coords)
        }
    };
    let mut out = series.clone();
    out.coords = coords;
    out.deterministic_mode = mode;
    Ok(out)
}

pub fn difference(series: &FunctionalSeries) -> Result<FunctionalSeries> {
    if series.nrows() < 2 {
        return Err(CtError::InsufficientData("differencing needs T >= 2".into()));
    }
    let mut out = series.clone();
    out.coords = diff_rows(&series.coords);
    out.integration_order_offset -= 1;
    Ok(out)
}

pub fn partial_sum(series: &FunctionalSeries, d: usize) -> Result<FunctionalSeries> {
    if d < 1 {
        return Err(CtError::Parameter("partial_sum requires d >= 1".into()));
    }
    let mut out = series.clone();
    for _ in 1..d {
        out.coords = cumsum_rows(&out.coords);
    }
    out.integration_order_offset += d as i32 - 1;
    Ok(out)
}
