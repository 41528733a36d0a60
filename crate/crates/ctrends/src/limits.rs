//! Simulated limiting laws of the test statistics: eigenvalue functionals of
//! integrated / demeaned / detrended Brownian motions and bridges, with
//! persisted quantile tables for critical values and p-value brackets.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::detrend::{demean_cols, detrend_cols, DetMode};
use crate::error::{CtError, Result};
use crate::gev::{solve_gev, Functional};

pub const TABLE_DIR_ENV: &str = "CTRENDS_TABLE_DIR";
pub const TABLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_N_GRID: usize = 1000;
pub const DEFAULT_AUTO_REPS: usize = 20_000;
pub const SHIPPED_REPS: usize = 100_000;
pub const DEFAULT_TABLE_SEED: u64 = 0x0c7_2e4d5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    VrDl1,
    VrDl0,
    InverseVr,
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FamilyKind::VrDl1 => "vr-dl-1",
            FamilyKind::VrDl0 => "vr-dl-0",
            FamilyKind::InverseVr => "inverse-vr",
        };
        write!(f, "{s}")
    }
}

/// One limiting law, keyed by everything it depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct LimitFamily {
    pub family: FamilyKind,
    pub d0: usize,
    /// Projection rank; only the inverse-VR law depends on it (through
    /// K - d0 bridge dimensions). Stored as 0 for the other families.
    pub k: usize,
    pub d_l: usize,
    pub det: DetMode,
    pub functional: Functional,
}

impl LimitFamily {
    pub fn vr_dl1(d0: usize, d_l: usize, det: DetMode, functional: Functional) -> Self {
        Self { family: FamilyKind::VrDl1, d0, k: 0, d_l, det, functional }
    }

    pub fn vr_dl0(d0: usize, d_l: usize, det: DetMode, functional: Functional) -> Self {
        Self { family: FamilyKind::VrDl0, d0, k: 0, d_l, det, functional }
    }

    pub fn inverse_vr(d0: usize, k: usize, d_l: usize, det: DetMode, functional: Functional) -> Self {
        Self { family: FamilyKind::InverseVr, d0, k, d_l, det, functional }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            FamilyKind::VrDl1 => {
                if self.d0 < 1 || self.d_l < 2 {
                    return Err(CtError::Config("vr-dl-1 needs d0 >= 1 and d_L >= 2".into()));
                }
            }
            FamilyKind::VrDl0 => {
                if self.d0 < 1 || self.d_l < 1 {
                    return Err(CtError::Config("vr-dl-0 needs d0 >= 1 and d_L >= 1".into()));
                }
            }
            FamilyKind::InverseVr => {
                if self.k <= self.d0 {
                    return Err(CtError::Config("inverse-vr needs K > d0".into()));
                }
                if self.d_l < 2 {
                    return Err(CtError::Config("inverse-vr needs d_L >= 2".into()));
                }
            }
        }
        Ok(())
    }

    pub fn file_stem(&self) -> String {
        format!(
            "{}_d{}_K{}_dl{}_{}_{}",
            self.family, self.d0, self.k, self.d_l, self.det, self.functional
        )
    }
}

/// Standard normal increment matrix n x q.
fn normal_matrix(n: usize, q: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(rng))
}

fn apply_det(path: &DMatrix<f64>, det: DetMode) -> DMatrix<f64> {
    match det {
        DetMode::None => path.clone(),
        DetMode::Intercept => demean_cols(path),
        DetMode::Trend => detrend_cols(path),
    }
}

/// Brownian motion path on n grid steps from iid increments, then the
/// deterministic adjustment applied to the path itself.
fn bm_path(n: usize, q: usize, det: DetMode, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let inc = normal_matrix(n, q, rng);
    let scale = 1.0 / (n as f64).sqrt();
    let mut path = DMatrix::zeros(n, q);
    for j in 0..q {
        let mut acc = 0.0;
        for i in 0..n {
            acc += inc[(i, j)] * scale;
            path[(i, j)] = acc;
        }
    }
    apply_det(&path, det)
}

/// (Second-level) Brownian bridge path: partial sums of demeaned
/// (resp. detrended) white-noise increments. With det = none this is a
/// plain Brownian motion. This is the weak limit of the partial-sum
/// process of the corresponding residual series, which is how the bridge
/// substitutions enter the inverse-VR limit.
fn bridge_path(n: usize, q: usize, det: DetMode, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let inc = apply_det(&normal_matrix(n, q, rng), det);
    let scale = 1.0 / (n as f64).sqrt();
    let mut path = DMatrix::zeros(n, q);
    for j in 0..q {
        let mut acc = 0.0;
        for i in 0..n {
            acc += inc[(i, j)] * scale;
            path[(i, j)] = acc;
        }
    }
    path
}

/// Recursive Riemann cumulation lifting W_1 to W_d.
fn integrate_path(path: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = path.nrows();
    let mut out = path.clone();
    for _ in 1..d {
        let mut next = DMatrix::zeros(n, out.ncols());
        for j in 0..out.ncols() {
            let mut acc = 0.0;
            for i in 0..n {
                acc += out[(i, j)] / n as f64;
                next[(i, j)] = acc;
            }
        }
        out = next;
    }
    out
}

/// Riemann approximation of the Gram integral (1/n) P'Q.
fn cross_integral(p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    (p.transpose() * q) / p.nrows() as f64
}

/// One draw from the limiting law of the family's statistic.
pub fn simulate_limit_draw(fam: &LimitFamily, n_grid: usize, rng: &mut ChaCha12Rng) -> Result<f64> {
    fam.validate()?;
    if n_grid < 200 {
        return Err(CtError::Parameter("n_grid must be >= 200".into()));
    }
    match fam.family {
        FamilyKind::VrDl1 => {
            let w1 = bm_path(n_grid, fam.d0, fam.det, rng);
            let wd = integrate_path(&w1, fam.d_l);
            let m_l = cross_integral(&wd, &wd);
            let m_r = cross_integral(&w1, &w1);
            let sol = solve_gev(&m_l, &m_r)?;
            Ok(fam.functional.apply(sol.mu.iter().copied()))
        }
        FamilyKind::VrDl0 => {
            let w1 = bm_path(n_grid, fam.d0, fam.det, rng);
            let wd = integrate_path(&w1, fam.d_l);
            let m_l = cross_integral(&wd, &wd);
            let eig = m_l.symmetric_eigen();
            Ok(fam
                .functional
                .apply(eig.eigenvalues.iter().map(|l| 1.0 / l)))
        }
        FamilyKind::InverseVr => {
            let m = fam.k - fam.d0;
            let b = bridge_path(n_grid, m, fam.det, rng);
            let mut a = cross_integral(&b, &b);
            if fam.d0 >= 1 {
                let w1 = bm_path(n_grid, fam.d0, fam.det, rng);
                let wd = integrate_path(&w1, fam.d_l);
                let m_l = cross_integral(&wd, &wd);
                let c = cross_integral(&b, &wd); // m x d0
                let chol = nalgebra::Cholesky::new(m_l).ok_or_else(|| {
                    CtError::Numerical("singular trend Gram in limit draw".into())
                })?;
                let sol = chol.solve(&c.transpose()); // d0 x m
                a -= &c * sol;
            }
            let eig = a.symmetric_eigen();
            Ok(fam.functional.apply(eig.eigenvalues.iter().copied()))
        }
    }
}

/// Type-7 quantile of a sorted sample.
pub fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return xs[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    xs[lo] * (1.0 - w) + xs[hi] * w
}

pub const CDF_GRID_POINTS: usize = 512;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CriticalValueTable {
    pub version: u32,
    pub family: LimitFamily,
    pub reps: usize,
    pub n_grid: usize,
    pub seed: u64,
    /// Quantiles at probabilities 0.90 / 0.95 / 0.99.
    pub quantiles: Quantiles,
    /// 512 points (x, F(x)) of the empirical CDF.
    pub cdf_grid: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Quantiles {
    pub q90: f64,
    pub q95: f64,
    pub q99: f64,
}

impl CriticalValueTable {
    pub fn quantile_at(&self, level: f64) -> f64 {
        match level {
            l if (l - 0.90).abs() < 1e-12 => self.quantiles.q90,
            l if (l - 0.95).abs() < 1e-12 => self.quantiles.q95,
            l if (l - 0.99).abs() < 1e-12 => self.quantiles.q99,
            l => {
                // fall back to the CDF grid
                let mut prev = self.cdf_grid[0];
                for &pt in &self.cdf_grid {
                    if pt.1 >= l {
                        return pt.0;
                    }
                    prev = pt;
                }
                prev.0
            }
        }
    }

    /// Bracket the upper-tail p-value of a statistic using the CDF grid.
    pub fn p_bracket(&self, statistic: f64) -> (f64, f64) {
        let grid = &self.cdf_grid;
        // largest index with x <= statistic
        let mut below: Option<usize> = None;
        for (i, &(x, _)) in grid.iter().enumerate() {
            if x <= statistic {
                below = Some(i);
            } else {
                break;
            }
        }
        match below {
            None => (1.0 - grid[0].1, 1.0),
            Some(i) if i + 1 >= grid.len() => (0.0, 1.0 - grid[i].1),
            Some(i) => (1.0 - grid[i + 1].1, 1.0 - grid[i].1),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let table: CriticalValueTable = serde_json::from_slice(&bytes)?;
        if table.version != TABLE_FORMAT_VERSION {
            return Err(CtError::Config(format!(
                "table format version {} unsupported",
                table.version
            )));
        }
        Ok(table)
    }
}

/// Simulate a critical-value table. Replications use per-index RNG streams,
/// so the result is bitwise identical at any thread count.
pub fn critical_table(
    fam: &LimitFamily,
    reps: usize,
    n_grid: usize,
    seed: u64,
) -> Result<CriticalValueTable> {
    fam.validate()?;
    if reps < 1000 {
        return Err(CtError::Parameter("reps must be >= 1000".into()));
    }
    let draws: Result<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            simulate_limit_draw(fam, n_grid, &mut rng)
        })
        .collect();
    let mut draws = draws?;
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantiles = Quantiles {
        q90: quantile_sorted(&draws, 0.90),
        q95: quantile_sorted(&draws, 0.95),
        q99: quantile_sorted(&draws, 0.99),
    };
    let cdf_grid = (0..CDF_GRID_POINTS)
        .map(|j| {
            let p = j as f64 / (CDF_GRID_POINTS - 1) as f64;
            (quantile_sorted(&draws, p), p)
        })
        .collect();
    Ok(CriticalValueTable {
        version: TABLE_FORMAT_VERSION,
        family: *fam,
        reps,
        n_grid,
        seed,
        quantiles,
        cdf_grid,
    })
}

/// Cache of critical-value tables: in-memory memo plus an optional table
/// directory (explicit or from CTRENDS_TABLE_DIR). Missing tables are
/// simulated on first use.
pub struct TableStore {
    dir: Option<PathBuf>,
    pub auto_reps: usize,
    pub n_grid: usize,
    pub seed: u64,
    pub warn_on_build: bool,
    memo: Mutex<HashMap<LimitFamily, Arc<CriticalValueTable>>>,
}

impl TableStore {
    pub fn new(dir: Option<PathBuf>) -> Self {
        let dir = dir.or_else(|| std::env::var_os(TABLE_DIR_ENV).map(PathBuf::from));
        Self {
            dir,
            auto_reps: DEFAULT_AUTO_REPS,
            n_grid: DEFAULT_N_GRID,
            seed: DEFAULT_TABLE_SEED,
            warn_on_build: true,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_auto_reps(mut self, reps: usize) -> Self {
        self.auto_reps = reps;
        self
    }

    pub fn quiet(mut self) -> Self {
        self.warn_on_build = false;
        self
    }

    fn path_for(&self, fam: &LimitFamily) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.json", fam.file_stem())))
    }

    /// Fetch (load or build) the table for a family.
    pub fn get(&self, fam: &LimitFamily) -> Result<Arc<CriticalValueTable>> {
        let mut memo = self.memo.lock().unwrap();
        if let Some(t) = memo.get(fam) {
            return Ok(t.clone());
        }
        if let Some(path) = self.path_for(fam) {
            if path.exists() {
                match CriticalValueTable::load(&path) {
                    Ok(t) if t.family == *fam && t.reps >= self.auto_reps => {
                        let t = Arc::new(t);
                        memo.insert(*fam, t.clone());
                        return Ok(t);
                    }
                    Ok(_) => {} // stale or too small; rebuild
                    Err(e) => {
                        eprintln!("warning: ignoring unreadable table {}: {e}", path.display());
                    }
                }
            }
        }
        if self.warn_on_build {
            eprintln!(
                "warning: simulating critical values for {} at reps={} (prebuild with `ctrends critvals` or set {TABLE_DIR_ENV} for reuse)",
                fam.file_stem(),
                self.auto_reps
            );
        }
        let table = critical_table(fam, self.auto_reps, self.n_grid, self.seed)?;
        if let Some(path) = self.path_for(fam) {
            if let Err(e) = table.save(&path) {
                eprintln!("warning: could not persist table {}: {e}", path.display());
            }
        }
        let t = Arc::new(table);
        memo.insert(*fam, t.clone());
        Ok(t)
    }

    /// Build (if needed) all tables up front; call before parallel loops so
    /// workers only hit the memo.
    pub fn ensure(&self, fams: &[LimitFamily]) -> Result<()> {
        for fam in fams {
            self.get(fam)?;
        }
        Ok(())
    }
}
