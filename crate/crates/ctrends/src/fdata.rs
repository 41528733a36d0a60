//! Raw grid-sampled series, finite orthonormal bases, and the projection
//! onto basis coordinates that turns curve data into Euclidean coordinates.

use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;

use crate::detrend::DetMode;
use crate::error::{CtError, Result};

/// Observed series: rows are time points, columns are grid points (or plain
/// vector coordinates when no grid is attached).
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub values: DMatrix<f64>,
    pub grid: Option<Vec<f64>>,
    pub label: Option<String>,
}

impl RawSeries {
    pub fn new(values: DMatrix<f64>, grid: Option<Vec<f64>>, label: Option<String>) -> Result<Self> {
        let (t, g) = (values.nrows(), values.ncols());
        if t < 4 {
            return Err(CtError::InsufficientData(format!(
                "need at least 4 time points, got {t}"
            )));
        }
        if g < 1 {
            return Err(CtError::Dimension("need at least one column".into()));
        }
        if let Some(gr) = &grid {
            if gr.len() != g {
                return Err(CtError::Dimension(format!(
                    "grid length {} != number of columns {g}",
                    gr.len()
                )));
            }
            if gr.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(CtError::Parameter("grid must be strictly increasing".into()));
            }
            if gr.iter().any(|v| !v.is_finite()) {
                return Err(CtError::Parameter("grid contains non-finite values".into()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CtError::Numerical("data contains non-finite values".into()));
        }
        Ok(Self { values, grid, label })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Read a rectangular numeric CSV; rows are time points. When `grid_row` is
/// set the (single) header row is interpreted as the grid abscissae.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, grid_row: bool) -> Result<RawSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut grid: Option<Vec<f64>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && (has_header || grid_row) {
            if grid_row {
                let parsed: Result<Vec<f64>> = cells
                    .iter()
                    .map(|c| {
                        c.parse::<f64>().map_err(|_| CtError::Parse {
                            line: lineno,
                            msg: format!("non-numeric grid cell '{c}'"),
                        })
                    })
                    .collect();
                let parsed = parsed?;
                width = Some(parsed.len());
                grid = Some(parsed);
            }
            continue;
        }
        let parsed: Result<Vec<f64>> = cells
            .iter()
            .map(|c| {
                c.parse::<f64>().map_err(|_| CtError::Parse {
                    line: lineno,
                    msg: format!("non-numeric cell '{c}'"),
                })
            })
            .collect();
        let parsed = parsed?;
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(CtError::Parse {
                    line: lineno,
                    msg: format!("row has {} cells, expected {w}", parsed.len()),
                })
            }
            _ => {}
        }
        rows.push(parsed);
    }

    let t = rows.len();
    if t < 4 {
        return Err(CtError::InsufficientData(format!(
            "need at least 4 data rows, got {t}"
        )));
    }
    let g = width.unwrap_or(0);
    let values = DMatrix::from_fn(t, g, |i, j| rows[i][j]);
    RawSeries::new(values, grid, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    RawCoordinates,
    Legendre,
    Fourier,
}

/// A finite basis evaluated on the data grid. For smoothing bases the
/// columns are re-orthonormalized against the discrete quadrature Gram
/// matrix, so `gram` is the identity up to rounding and coordinates can be
/// treated as Euclidean downstream.
#[derive(Debug, Clone)]
pub struct Basis {
    pub kind: BasisKind,
    pub dimension: usize,
    /// G x p matrix of basis functions evaluated at the grid points.
    pub evaluation: DMatrix<f64>,
    /// p x p Gram matrix under the quadrature rule.
    pub gram: DMatrix<f64>,
    pub grid: Vec<f64>,
    /// Equal Riemann quadrature weight (b - a) / G; 1 for raw coordinates.
    pub weight: f64,
}

fn check_uniform(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Ok(());
    }
    let d0 = grid[1] - grid[0];
    let tol = 1e-8 * d0.abs().max(1e-12);
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - d0).abs() > tol {
            return Err(CtError::Parameter(
                "smoothing bases require a regular (uniform) grid".into(),
            ));
        }
    }
    Ok(())
}

pub fn make_basis(kind: BasisKind, p: usize, grid: Option<&[f64]>) -> Result<Basis> {
    if p < 1 {
        return Err(CtError::Dimension("basis dimension must be >= 1".into()));
    }
    match kind {
        BasisKind::RawCoordinates => {
            let grid = grid
                .map(|g| g.to_vec())
                .unwrap_or_else(|| (1..=p).map(|i| i as f64).collect());
            if grid.len() != p {
                return Err(CtError::Dimension(format!(
                    "raw-coordinates basis needs p = G, got p={p}, G={}",
                    grid.len()
                )));
            }
            Ok(Basis {
                kind,
                dimension: p,
                evaluation: DMatrix::identity(p, p),
                gram: DMatrix::identity(p, p),
                grid,
                weight: 1.0,
            })
        }
        BasisKind::Legendre | BasisKind::Fourier => {
            let grid = grid.ok_or_else(|| {
                CtError::Parameter("smoothing bases require a grid".into())
            })?;
            let g = grid.len();
            if p > g {
                return Err(CtError::Dimension(format!(
                    "basis dimension p={p} exceeds grid size G={g}"
                )));
            }
            check_uniform(grid)?;
            let (a, b) = (grid[0], grid[g - 1]);
            let span = if b > a { b - a } else { 1.0 };
            let weight = span / g as f64;
            let mut eval = DMatrix::zeros(g, p);
            match kind {
                BasisKind::Legendre => {
                    // Shifted Legendre via the three-term recurrence on [-1, 1].
                    for (i, &u) in grid.iter().enumerate() {
                        let x = 2.0 * (u - a) / span - 1.0;
                        let mut pm1 = 1.0;
                        let mut pm2 = 0.0;
                        for k in 0..p {
                            let val = if k == 0 {
                                1.0
                            } else if k == 1 {
                                let v = x;
                                pm2 = pm1;
                                pm1 = v;
                                v
                            } else {
                                let kf = k as f64;
                                let v = ((2.0 * kf - 1.0) * x * pm1 - (kf - 1.0) * pm2) / kf;
                                pm2 = pm1;
                                pm1 = v;
                                v
                            };
                            eval[(i, k)] = val;
                        }
                    }
                }
                BasisKind::Fourier => {
                    for (i, &u) in grid.iter().enumerate() {
                        let x = (u - a) / span;
                        for k in 0..p {
                            eval[(i, k)] = fourier_fn(k + 1, x);
                        }
                    }
                }
                BasisKind::RawCoordinates => unreachable!(),
            }
            // Re-orthonormalize against the discrete Gram so that downstream
            // code can treat coordinates as Euclidean.
            let gram_raw = (eval.transpose() * &eval) * weight;
            let chol = nalgebra::Cholesky::new(gram_raw).ok_or_else(|| {
                CtError::IllConditioned("basis Gram matrix is not positive definite".into())
            })?;
            let l = chol.l();
            // eval <- eval * L^{-T}: solve L X^T = eval^T.
            let solved = l
                .solve_lower_triangular(&eval.transpose())
                .ok_or_else(|| CtError::IllConditioned("triangular solve failed".into()))?;
            let eval = solved.transpose();
            let gram = (eval.transpose() * &eval) * weight;
            Ok(Basis {
                kind,
                dimension: p,
                evaluation: eval,
                gram,
                grid: grid.to_vec(),
                weight,
            })
        }
    }
}

/// Fourier system on [0,1]: 1, sqrt(2) sin(2 pi x), sqrt(2) cos(2 pi x),
/// sqrt(2) sin(4 pi x), ... indexed from 1.
pub fn fourier_fn(j: usize, x: f64) -> f64 {
    if j == 1 {
        1.0
    } else {
        let k = (j / 2) as f64;
        let arg = 2.0 * std::f64::consts::PI * k * x;
        if j % 2 == 0 {
            std::f64::consts::SQRT_2 * arg.sin()
        } else {
            std::f64::consts::SQRT_2 * arg.cos()
        }
    }
}

/// Coordinate representation of the series in a chosen basis.
#[derive(Debug, Clone)]
pub struct FunctionalSeries {
    /// T x p; row t holds the coordinates of observation t.
    pub coords: DMatrix<f64>,
    pub basis: Basis,
    pub deterministic_mode: DetMode,
    /// Net differencing (negative) / partial summation (positive) applied.
    pub integration_order_offset: i32,
}

impl FunctionalSeries {
    pub fn from_coords(coords: DMatrix<f64>, basis: Basis) -> Result<Self> {
        if coords.ncols() != basis.dimension {
            return Err(CtError::Dimension(format!(
                "coords have {} columns but basis dimension is {}",
                coords.ncols(),
                basis.dimension
            )));
        }
        if coords.nrows() < 2 {
            return Err(CtError::InsufficientData("need at least 2 time points".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(CtError::Numerical("coords contain non-finite values".into()));
        }
        Ok(Self {
            coords,
            basis,
            deterministic_mode: DetMode::None,
            integration_order_offset: 0,
        })
    }

    pub fn nrows(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    /// Evaluate the represented curves back on the grid: T x G values.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.coords * self.basis.evaluation.transpose()
    }
}

pub fn project(raw: &RawSeries, basis: &Basis) -> Result<FunctionalSeries> {
    if raw.ncols() != basis.evaluation.nrows() {
        return Err(CtError::Dimension(format!(
            "data has {} columns but basis is evaluated on {} grid points",
            raw.ncols(),
            basis.evaluation.nrows()
        )));
    }
    if let (Some(data_grid), true) = (&raw.grid, basis.kind != BasisKind::RawCoordinates) {
        let tol = 1e-8;
        if data_grid.len() != basis.grid.len()
            || data_grid
                .iter()
                .zip(&basis.grid)
                .any(|(a, b)| (a - b).abs() > tol * (1.0 + b.abs()))
        {
            return Err(CtError::Dimension("data grid does not match basis grid".into()));
        }
    }
    let coords = match basis.kind {
        BasisKind::RawCoordinates => raw.values.clone(),
        _ => {
            // Least squares under the quadrature inner product:
            // c_t = gram^{-1} (w E' y_t).
            let rhs = (basis.evaluation.transpose() * raw.values.transpose()) * basis.weight;
            let chol = nalgebra::Cholesky::new(basis.gram.clone()).ok_or_else(|| {
                CtError::IllConditioned("singular normal equations".into())
            })?;
            chol.solve(&rhs).transpose()
        }
    };
    FunctionalSeries::from_coords(coords, basis.clone())
}

/// Coordinates of curves sampled on the basis grid; input is G x m with
/// columns as curves, output is p x m.
pub fn coordinates_of(basis: &Basis, curves: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if curves.nrows() != basis.evaluation.nrows() {
        return Err(CtError::Dimension(format!(
            "curves have {} grid points but basis is evaluated on {}",
            curves.nrows(),
            basis.evaluation.nrows()
        )));
    }
    match basis.kind {
        BasisKind::RawCoordinates => Ok(curves.clone()),
        _ => {
            let rhs = basis.evaluation.transpose() * curves * basis.weight;
            let chol = nalgebra::Cholesky::new(basis.gram.clone())
                .ok_or_else(|| CtError::IllConditioned("singular normal equations".into()))?;
            Ok(chol.solve(&rhs))
        }
    }
}
