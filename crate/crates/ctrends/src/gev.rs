//! Generalized symmetric-definite eigenvalue solver and the normalized
//! VR / inverse-VR statistics computed in projected coordinates.

use nalgebra::DMatrix;

use crate::detrend::DetMode;
use crate::detrend::integration_level;
use crate::error::{CtError, Result};
use crate::extractor::Projection;
use crate::fdata::FunctionalSeries;
use crate::lrcov::{kernel_mass, lrcov_matrix, BandwidthSpec, KernelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    Max,
    Trace,
}

impl std::fmt::Display for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Functional::Max => write!(f, "max"),
            Functional::Trace => write!(f, "trace"),
        }
    }
}

impl Functional {
    pub fn apply(&self, vals: impl Iterator<Item = f64>) -> f64 {
        match self {
            Functional::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            Functional::Trace => vals.sum(),
        }
    }
}

/// Test family: plain VR rejects for large normalized small eigenvalues,
/// inverse VR rejects for large reciprocals of the trailing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFamily {
    Vr,
    InverseVr,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VrConfig {
    pub family: TestFamily,
    pub d_l: usize,
    pub d_r: usize,
    pub d0: usize,
    pub k: usize,
    pub det: DetMode,
    pub functional: Functional,
    pub kernel_l: KernelKind,
    pub bw_l: BandwidthSpec,
    pub kernel_r: KernelKind,
    pub bw_r: BandwidthSpec,
    pub kernel_p: KernelKind,
    pub bw_p: BandwidthSpec,
}

impl VrConfig {
    /// VR(2,1) with the plain-variance convention h_P = h_L = h_R = 0.
    pub fn vr21(d0: usize, det: DetMode) -> Self {
        Self {
            family: TestFamily::Vr,
            d_l: 2,
            d_r: 1,
            d0,
            k: d0 + 2,
            det,
            functional: Functional::Trace,
            kernel_l: KernelKind::TukeyHanning,
            bw_l: BandwidthSpec::Fixed(0),
            kernel_r: KernelKind::TukeyHanning,
            bw_r: BandwidthSpec::Fixed(0),
            kernel_p: KernelKind::TukeyHanning,
            bw_p: BandwidthSpec::Fixed(0),
        }
    }

    /// VR(d_L,0): long-run variance on the right (Andrews bandwidth),
    /// h_P = [T^{1/3}], h_L selectable as 0 or [T^{1/3}].
    pub fn vr_d0_right(d_l: usize, d0: usize, det: DetMode, h_l_cube_root: bool) -> Self {
        Self {
            family: TestFamily::Vr,
            d_l,
            d_r: 0,
            d0,
            k: d0 + 2,
            det,
            functional: Functional::Trace,
            kernel_l: KernelKind::TukeyHanning,
            bw_l: if h_l_cube_root {
                BandwidthSpec::Power { a: 1.0, b: 1.0 / 3.0 }
            } else {
                BandwidthSpec::Fixed(0)
            },
            kernel_r: KernelKind::TukeyHanning,
            bw_r: BandwidthSpec::AndrewsPlugin,
            kernel_p: KernelKind::TukeyHanning,
            bw_p: BandwidthSpec::Power { a: 1.0, b: 1.0 / 3.0 },
        }
    }

    /// Inverse VR on the (2,1) problem: h_L = [T^{1/3}], h_R = [T^{1/5}],
    /// h_P = [T^{1/3}].
    pub fn inverse(d0: usize, det: DetMode) -> Self {
        Self {
            family: TestFamily::InverseVr,
            d_l: 2,
            d_r: 1,
            d0,
            k: d0 + 2,
            det,
            functional: Functional::Trace,
            kernel_l: KernelKind::TukeyHanning,
            bw_l: BandwidthSpec::Power { a: 1.0, b: 1.0 / 3.0 },
            kernel_r: KernelKind::TukeyHanning,
            bw_r: BandwidthSpec::Power { a: 1.0, b: 0.2 },
            kernel_p: KernelKind::TukeyHanning,
            bw_p: BandwidthSpec::Power { a: 1.0, b: 1.0 / 3.0 },
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_r > 1 {
            return Err(CtError::Config("d_R must be 0 or 1".into()));
        }
        if self.d_l < self.d_r + 1 {
            return Err(CtError::Config("d_L must exceed d_R".into()));
        }
        match self.family {
            TestFamily::Vr => {
                if self.k < self.d0 {
                    return Err(CtError::Config(format!(
                        "VR requires K >= d0, got K={}, d0={}",
                        self.k, self.d0
                    )));
                }
                if self.d0 < 1 {
                    return Err(CtError::Config("VR requires d0 >= 1".into()));
                }
            }
            TestFamily::InverseVr => {
                if self.k <= self.d0 {
                    return Err(CtError::Config(format!(
                        "inverse VR requires K > d0, got K={}, d0={}",
                        self.k, self.d0
                    )));
                }
                if self.d_r != 1 || self.d_l < 2 {
                    return Err(CtError::Config(
                        "inverse VR uses the (d_L >= 2, d_R = 1) problem".into(),
                    ));
                }
            }
        }
        self.bw_l.validate()?;
        self.bw_r.validate()?;
        self.bw_p.validate()?;
        Ok(())
    }

    /// Whether the right side uses a genuine long-run variance (a_R > 0),
    /// which also controls the slack-extractor source operator.
    pub fn a_r_positive(&self, t: usize) -> Result<bool> {
        Ok(match &self.bw_r {
            BandwidthSpec::Fixed(h) => *h > 0,
            BandwidthSpec::Power { .. } => {
                self.bw_r.resolve(t, self.kernel_r, None)?.h > 0
            }
            BandwidthSpec::AndrewsPlugin => true,
        })
    }
}

/// Solution of mu A nu = B nu with A treated as the definite matrix.
#[derive(Debug, Clone)]
pub struct GevSolution {
    /// Ascending.
    pub mu: Vec<f64>,
    /// Columns are A-orthonormal eigenvectors, matching `mu`.
    pub vectors: DMatrix<f64>,
    pub ridge_applied: bool,
    pub max_residual: f64,
}

pub fn solve_gev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GevSolution> {
    let k = a.nrows();
    if a.ncols() != k || b.nrows() != k || b.ncols() != k {
        return Err(CtError::Dimension("solve_gev needs square matrices of equal size".into()));
    }
    let a_sym = (a + a.transpose()) * 0.5;
    let b_sym = (b + b.transpose()) * 0.5;

    // condition estimate of A to decide on a ridge
    let a_eigs = a_sym.clone().symmetric_eigen().eigenvalues;
    let amax = a_eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let amin = a_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let needs_ridge = !(amin > 0.0) || amax / amin > 1e12;
    let (a_used, ridge_applied) = if needs_ridge {
        let eps = 1e-12 * a_sym.trace().abs().max(f64::MIN_POSITIVE) / k as f64;
        (&a_sym + DMatrix::identity(k, k) * eps, true)
    } else {
        (a_sym.clone(), false)
    };

    let chol = nalgebra::Cholesky::new(a_used.clone()).ok_or_else(|| {
        CtError::Numerical("left operator is not positive definite even after ridge".into())
    })?;
    let l = chol.l();
    // C = L^{-1} B L^{-T}
    let s1 = l
        .solve_lower_triangular(&b_sym)
        .ok_or_else(|| CtError::Numerical("triangular solve failed".into()))?;
    let c_raw = l
        .solve_lower_triangular(&s1.transpose())
        .ok_or_else(|| CtError::Numerical("triangular solve failed".into()))?;
    let c = (&c_raw + c_raw.transpose()) * 0.5;
    let eig = c.symmetric_eigen();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    // nu = L^{-T} y
    let lt = l.transpose();
    let mut vectors = DMatrix::zeros(k, k);
    for (jj, &i) in order.iter().enumerate() {
        let y = eig.eigenvectors.column(i).into_owned();
        let nu = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| CtError::Numerical("triangular solve failed".into()))?;
        vectors.set_column(jj, &nu);
    }

    // residual bound check on every solve
    let norm_a = a_sym.norm();
    let norm_b = b_sym.norm();
    let mut max_residual = 0.0f64;
    for j in 0..k {
        let nu = vectors.column(j);
        let r = (&a_sym * nu) * mu[j] - &b_sym * nu;
        let bound = 1e-8 * (norm_a + norm_b) * nu.norm();
        let rn = r.norm();
        if rn > bound && !ridge_applied {
            return Err(CtError::Numerical(format!(
                "eigenpair residual {rn:.3e} exceeds bound {bound:.3e}"
            )));
        }
        max_residual = max_residual.max(rn);
    }

    Ok(GevSolution { mu, vectors, ridge_applied, max_residual })
}

/// Eigenvalues of the VR problem for one configuration, with normalization.
#[derive(Debug, Clone)]
pub struct GevResult {
    pub mu: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub n_t: f64,
    pub mu_tilde: Vec<f64>,
    pub h_l: usize,
    pub h_r: usize,
    pub t_eff: usize,
    pub ridge_applied: bool,
    pub max_residual: f64,
}

fn side_factor(h: usize, kernel: KernelKind) -> Result<f64> {
    if h == 0 {
        Ok(1.0)
    } else {
        Ok(h as f64 * kernel_mass(kernel)?)
    }
}

/// Solve the projected VR eigenvalue problem. The series must be the level
/// series, already adjusted to cfg.det.
pub fn vr_eigen(series: &FunctionalSeries, cfg: &VrConfig, proj: &Projection) -> Result<GevResult> {
    cfg.validate()?;
    if series.deterministic_mode != cfg.det {
        return Err(CtError::Config(format!(
            "series adjustment ({}) does not match configuration ({})",
            series.deterministic_mode, cfg.det
        )));
    }
    if proj.p() != series.dim() {
        return Err(CtError::Dimension("projection dimension mismatch".into()));
    }
    if proj.k() != cfg.k {
        return Err(CtError::Dimension(format!(
            "projection rank {} does not match configured K={}",
            proj.k(),
            cfg.k
        )));
    }
    let t = series.nrows();
    if t <= 4 * (cfg.d_l + 1) {
        return Err(CtError::InsufficientData(format!(
            "effective T={t} too small for d_L={}",
            cfg.d_l
        )));
    }

    let z = &series.coords * &proj.vectors;
    let left = integration_level(&z, cfg.d_l);
    let right = integration_level(&z, cfg.d_r);

    let h_l = cfg.bw_l.resolve(t, cfg.kernel_l, Some(&left))?.h;
    let h_r = cfg.bw_r.resolve(t, cfg.kernel_r, Some(&right))?.h;
    if cfg.d_r == 0 && h_r == 0 {
        return Err(CtError::Config(
            "VR with d_R = 0 requires a long-run right side (h_R > 0)".into(),
        ));
    }
    if cfg.family == TestFamily::InverseVr && h_r == 0 {
        return Err(CtError::Config("inverse VR requires h_R > 0".into()));
    }

    let lam_l = lrcov_matrix(&left, cfg.kernel_l, h_l)?;
    let lam_r = lrcov_matrix(&right, cfg.kernel_r, h_r)?;
    let sol = solve_gev(&lam_l, &lam_r)?;

    let tf = t as f64;
    let fac_l = side_factor(h_l, cfg.kernel_l)?;
    let n_t = match (cfg.family, cfg.d_r) {
        (TestFamily::Vr, 1) => {
            let fac_r = side_factor(h_r, cfg.kernel_r)?;
            tf.powi(2 * cfg.d_l as i32 - 2) * fac_l / fac_r
        }
        (TestFamily::Vr, 0) => tf.powi(2 * cfg.d_l as i32 - 1) * fac_l,
        (TestFamily::InverseVr, _) => tf.powi(2 * cfg.d_l as i32 - 3) * fac_l,
        _ => unreachable!(),
    };
    let mu_tilde: Vec<f64> = sol.mu.iter().map(|m| n_t * m).collect();
    Ok(GevResult {
        mu: sol.mu,
        vectors: sol.vectors,
        n_t,
        mu_tilde,
        h_l,
        h_r,
        t_eff: t,
        ridge_applied: sol.ridge_applied,
        max_residual: sol.max_residual,
    })
}

/// The scalar test statistic for the configured family.
pub fn statistic_value(g: &GevResult, cfg: &VrConfig) -> Result<f64> {
    match cfg.family {
        TestFamily::Vr => {
            if cfg.d0 > g.mu_tilde.len() {
                return Err(CtError::Config("d0 exceeds available eigenvalues".into()));
            }
            Ok(cfg
                .functional
                .apply(g.mu_tilde.iter().take(cfg.d0).copied()))
        }
        TestFamily::InverseVr => {
            if cfg.d0 >= g.mu_tilde.len() {
                return Err(CtError::Config("K must exceed d0".into()));
            }
            Ok(cfg
                .functional
                .apply(g.mu_tilde.iter().skip(cfg.d0).map(|m| 1.0 / m)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn diagonal_cases() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        let s = solve_gev(&a, &b).unwrap();
        assert_abs_diff_eq!(s.mu[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mu[1], 3.0, epsilon = 1e-12);

        let a2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let s2 = solve_gev(&a2, &b).unwrap();
        assert_abs_diff_eq!(s2.mu[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s2.mu[1], 3.0, epsilon = 1e-12);
    }

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn dense_eigensolver_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = 2 + (rng.random::<u32>() % 5) as usize;
            let a = random_spd(n, &mut rng);
            let b = random_spd(n, &mut rng);
            let s = solve_gev(&a, &b).unwrap();
            // brute force: eigenvalues of A^{-1} B via the general solver
            let ainv_b = a.clone().try_inverse().unwrap() * &b;
            let mut ev: Vec<f64> = ainv_b.complex_eigenvalues().iter().map(|c| c.re).collect();
            ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for j in 0..n {
                let rel = (s.mu[j] - ev[j]).abs() / ev[j].abs().max(1e-300);
                assert!(rel < 1e-8, "mismatch at {j}: {} vs {}", s.mu[j], ev[j]);
            }
        }
    }

    #[test]
    fn a_orthonormal_vectors() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let a = random_spd(4, &mut rng);
        let b = random_spd(4, &mut rng);
        let s = solve_gev(&a, &b).unwrap();
        let g = s.vectors.transpose() * &a * &s.vectors;
        assert!((&g - DMatrix::identity(4, 4)).abs().max() < 1e-8);
    }

    #[test]
    fn ridge_on_singular_left() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::identity(2, 2);
        let s = solve_gev(&a, &b).unwrap();
        assert!(s.ridge_applied);
    }

    #[test]
    fn config_validation() {
        assert!(VrConfig::vr21(1, DetMode::None).validate().is_ok());
        let mut bad = VrConfig::vr21(1, DetMode::None);
        bad.d_r = 2;
        assert!(bad.validate().is_err());
        let inv = VrConfig::inverse(0, DetMode::Intercept);
        assert!(inv.validate().is_ok());
        assert!(inv.with_k(0).validate().is_err());
    }

    #[test]
    fn functional_apply() {
        assert_eq!(Functional::Trace.apply([1.0, 2.0, 3.5].into_iter()), 6.5);
        assert_eq!(Functional::Max.apply([1.0, 4.0, 3.5].into_iter()), 4.0);
    }
}
