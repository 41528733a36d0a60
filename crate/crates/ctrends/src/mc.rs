//! Data-generating processes and the Monte Carlo experiment driver.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::detrend::{adjust, DetMode};
use crate::error::{CtError, Result};
use crate::fdata::{fourier_fn, make_basis, project, Basis, BasisKind, FunctionalSeries, RawSeries};
use crate::gev::{TestFamily, VrConfig};
use crate::limits::{LimitFamily, TableStore};
use crate::procedures::{
    eig_ratio_estimator, lrs_estimator, sequential_bu, sequential_td, sequential_ud, KRule,
};
use crate::runner::{limit_family_for, run_eigen, run_test};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    Far1,
    Var10,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub d_n: usize,
    pub t: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub basis_dim: usize,
    pub burn_in: usize,
}

impl DgpSpec {
    pub fn far1(d_n: usize, t: usize, seed: u64) -> Self {
        Self { kind: DgpKind::Far1, d_n, t, seed, grid_size: 200, basis_dim: 40, burn_in: 200 }
    }

    pub fn var10(d_n: usize, t: usize, seed: u64) -> Self {
        Self { kind: DgpKind::Var10, d_n, t, seed, grid_size: 10, basis_dim: 10, burn_in: 200 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DgpKind::Far1 => {
                if self.d_n > 8 {
                    return Err(CtError::Parameter("far1 requires d_N <= 8".into()));
                }
                if self.grid_size < self.basis_dim {
                    return Err(CtError::Parameter(
                        "grid size must be at least the analysis basis dimension".into(),
                    ));
                }
            }
            DgpKind::Var10 => {
                if self.d_n > 10 {
                    return Err(CtError::Parameter("var10 requires d_N <= 10".into()));
                }
            }
        }
        if self.t < 20 {
            return Err(CtError::InsufficientData(format!(
                "sample size {} is too small for simulation",
                self.t
            )));
        }
        Ok(())
    }
}

/// Functional AR(1) draw: random-walk block with AR(1) increments plus a
/// 12-component stationary AR(1) block and a random intercept curve,
/// evaluated on a regular grid of [0,1].
pub fn dgp_far1(spec: &DgpSpec, rng: &mut impl Rng) -> Result<RawSeries> {
    spec.validate()?;
    let d_n = spec.d_n;
    let t = spec.t;
    let n_fourier = 40usize;

    // random basis choices: N-block from {g_1..g_{d_n+3}}, S-block 12 of {g_15..g_30}
    let n_idx: Vec<usize> = if d_n > 0 {
        sample(rng, d_n + 3, d_n).iter().map(|i| i + 1).collect()
    } else {
        Vec::new()
    };
    let s_idx: Vec<usize> = sample(rng, 16, 12).iter().map(|i| i + 15).collect();

    let alphas: Vec<f64> = (0..d_n).map(|_| rng.random_range(-0.8..=0.8)).collect();
    let betas: Vec<f64> = (0..12).map(|_| rng.random_range(-0.8..=0.8)).collect();

    // intercept curve coefficients
    let mut zeta = vec![0.0f64; n_fourier];
    for (j, z) in zeta.iter_mut().take(30).enumerate() {
        let th: f64 = StandardNormal.sample(rng);
        *z = 0.9f64.powi(j as i32) * th;
    }

    let decay: Vec<f64> = (0..n_fourier).map(|j| 0.9f64.powi(j as i32)).collect();
    let mut eps = vec![0.0f64; n_fourier];
    let mut delta_n = vec![0.0f64; d_n]; // AR(1) increments of the N block
    let mut s_state = vec![0.0f64; 12];
    let mut n_level = vec![0.0f64; d_n];

    let mut coeff_rows: Vec<Vec<f64>> = Vec::with_capacity(t);
    for step in 0..(spec.burn_in + t) {
        for (j, e) in eps.iter_mut().enumerate() {
            let th: f64 = StandardNormal.sample(rng);
            *e = decay[j] * th;
        }
        for j in 0..d_n {
            delta_n[j] = alphas[j] * delta_n[j] + eps[n_idx[j] - 1];
        }
        for j in 0..12 {
            s_state[j] = decay[j] * betas[j] * s_state[j] + eps[s_idx[j] - 1];
        }
        if step < spec.burn_in {
            continue;
        }
        if step == spec.burn_in {
            n_level = vec![0.0; d_n]; // trends start at the origin
        }
        for j in 0..d_n {
            n_level[j] += delta_n[j];
        }
        // coordinates outside the N and S blocks keep their white-noise
        // innovation component
        let mut c: Vec<f64> = zeta.iter().zip(&eps).map(|(z, e)| z + e).collect();
        for j in 0..d_n {
            c[n_idx[j] - 1] = zeta[n_idx[j] - 1] + n_level[j];
        }
        for j in 0..12 {
            c[s_idx[j] - 1] = zeta[s_idx[j] - 1] + s_state[j];
        }
        coeff_rows.push(c);
    }

    // evaluate on grid midpoints
    let g = spec.grid_size;
    let grid: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
    let mut eval = DMatrix::zeros(n_fourier, g);
    for j in 0..n_fourier {
        for (gi, &x) in grid.iter().enumerate() {
            eval[(j, gi)] = fourier_fn(j + 1, x);
        }
    }
    let coeffs = DMatrix::from_fn(t, n_fourier, |i, j| coeff_rows[i][j]);
    let values = coeffs * eval;
    RawSeries::new(values, Some(grid), None)
}

/// VAR coefficients drawn once per experiment and fixed across replications.
#[derive(Debug, Clone)]
pub struct VarCoefficients {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn draw_var_coefficients(d_n: usize, rng: &mut impl Rng) -> Result<VarCoefficients> {
    if d_n > 10 {
        return Err(CtError::Parameter("var10 requires d_N <= 10".into()));
    }
    let d_s = 10 - d_n;
    for _ in 0..100 {
        let a11 = DMatrix::from_fn(d_n, d_s, |_, _| rng.random_range(-1.0..=1.0));
        let a12 = DMatrix::from_fn(d_n, d_s, |_, _| rng.random_range(-1.0..=1.0));
        let mut a22 = DMatrix::from_diagonal_element(d_s, d_s, 0.3);
        for i in 0..d_s {
            if d_s >= 3 {
                let off = sample(rng, d_s - 1, 2);
                for o in off.iter() {
                    let j = if o >= i { o + 1 } else { o };
                    a22[(i, j)] = -0.3;
                }
            }
        }
        // x_S is a VAR(2) in x_{t-2} only; its companion eigenvalues are the
        // square roots of those of A22
        if d_s > 0 && spectral_radius(&a22).sqrt() >= 1.0 {
            continue;
        }
        let mut d = DMatrix::identity(10, 10);
        for i in 0..d_s {
            if d_n >= 2 {
                let picks = sample(rng, d_n, 2);
                d[(d_n + i, picks.index(0))] = -1.0;
                d[(d_n + i, picks.index(1))] = 1.0;
            } else if d_n == 1 {
                d[(d_n + i, 0)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        let det: f64 = d.clone().lu().determinant();
        if det.abs() < 1e-8 {
            continue;
        }
        return Ok(VarCoefficients { a11, a12, a22, d });
    }
    Err(CtError::Experiment("could not draw stable VAR coefficients".into()))
}

/// Ten-dimensional VAR draw: d_N random-walk coordinates fed by the lagged
/// stationary block, mixed through a full-rank matrix.
pub fn dgp_var(spec: &DgpSpec, coef: &VarCoefficients, rng: &mut impl Rng) -> Result<RawSeries> {
    spec.validate()?;
    let d_n = spec.d_n;
    let d_s = 10 - d_n;
    let t = spec.t;
    let sd = 0.8f64.sqrt();

    let mut s_prev2 = nalgebra::DVector::zeros(d_s);
    let mut s_prev1 = nalgebra::DVector::zeros(d_s);
    let mut n_state = nalgebra::DVector::zeros(d_n);
    let mut values = DMatrix::zeros(t, 10);
    for step in 0..(spec.burn_in + t) {
        let eps_s = nalgebra::DVector::from_fn(d_s, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        });
        let eps_n = nalgebra::DVector::from_fn(d_n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        });
        let s_new = &coef.a22 * &s_prev2 + eps_s;
        if step >= spec.burn_in {
            if step == spec.burn_in {
                n_state.fill(0.0);
            }
            n_state += &coef.a11 * &s_prev1 + &coef.a12 * &s_prev2 + eps_n;
            let mut x = nalgebra::DVector::zeros(10);
            x.rows_mut(0, d_n).copy_from(&n_state);
            x.rows_mut(d_n, d_s).copy_from(&s_new);
            let mixed = &coef.d * x;
            for j in 0..10 {
                values[(step - spec.burn_in, j)] = mixed[j];
            }
        }
        s_prev2 = s_prev1;
        s_prev1 = s_new;
    }
    RawSeries::new(values, None, None)
}

#[derive(Debug, Clone, serde::Serialize)]
pub enum MethodSpec {
    /// Single test at the configuration's d0; reports rejection frequency.
    Test { cfg: VrConfig },
    Td { base: VrConfig, d_max: usize, k_rule: KRule },
    Bu { base: VrConfig, cap: usize, k_rule: KRule },
    Ud { bu: VrConfig, td: VrConfig, m: usize, k_rule: KRule },
    /// Eigenvalue-ratio estimator on the VR(2,1) problem.
    Ratio { det: DetMode, d_max: usize },
    /// Thresholded ratio estimator on sample-variance eigenvalues.
    Lrs { det: DetMode, d_max: usize, kappa: f64 },
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Test { cfg } => format!("{:?}(d_l={},d_r={}) d0={}", cfg.family, cfg.d_l, cfg.d_r, cfg.d0),
            MethodSpec::Td { d_max, .. } => format!("td(d_max={d_max})"),
            MethodSpec::Bu { cap, .. } => format!("bu(cap={cap})"),
            MethodSpec::Ud { m, .. } => format!("ud(m={m})"),
            MethodSpec::Ratio { d_max, .. } => format!("ratio(d_max={d_max})"),
            MethodSpec::Lrs { d_max, kappa, .. } => format!("lrs(d_max={d_max},kappa={kappa})"),
        }
    }

    fn needed_families(&self, p: usize) -> Vec<LimitFamily> {
        let mut fams = Vec::new();
        match self {
            MethodSpec::Test { cfg } => fams.push(limit_family_for(cfg)),
            MethodSpec::Td { base, d_max, k_rule } => {
                for d0 in 1..=*d_max {
                    fams.push(limit_family_for(&step_cfg(base, d0, *k_rule, p)));
                }
            }
            MethodSpec::Bu { base, cap, k_rule } => {
                for d0 in 0..=*cap {
                    fams.push(limit_family_for(&step_cfg(base, d0, *k_rule, p)));
                }
            }
            MethodSpec::Ud { bu, td, k_rule, .. } => {
                for d0 in 0..p {
                    fams.push(limit_family_for(&step_cfg(bu, d0, *k_rule, p)));
                }
                for d0 in 1..=p {
                    fams.push(limit_family_for(&step_cfg(td, d0, *k_rule, p)));
                }
            }
            MethodSpec::Ratio { .. } | MethodSpec::Lrs { .. } => {}
        }
        fams.sort_by_key(|f| format!("{f:?}"));
        fams.dedup_by_key(|f| format!("{f:?}"));
        fams
    }
}

fn step_cfg(base: &VrConfig, d0: usize, k_rule: KRule, p: usize) -> VrConfig {
    let mut cfg = base.clone();
    cfg.d0 = d0;
    let min_k = match cfg.family {
        TestFamily::Vr => d0.max(1),
        TestFamily::InverseVr => d0 + 1,
    };
    cfg.k = match k_rule {
        KRule::PerStep(m) => d0 + m,
        KRule::Fixed(k) => k,
    }
    .max(min_k)
    .min(p);
    cfg
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Reject(bool),
    Estimate(usize),
    NoDecision,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Cell {
    pub label: String,
    pub count: usize,
    pub frequency: f64,
    pub se: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentReport {
    pub dgp: DgpSpec,
    pub method: String,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub failures: usize,
    pub cells: Vec<Cell>,
}

impl ExperimentReport {
    /// Frequency for an exact cell label, 0.0 if absent.
    pub fn frequency(&self, label: &str) -> f64 {
        self.cells.iter().find(|c| c.label == label).map(|c| c.frequency).unwrap_or(0.0)
    }

    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dgp={:?} d_N={} T={} method={} reps={} alpha={} seed={} failures={}\n",
            self.dgp.kind, self.dgp.d_n, self.dgp.t, self.method, self.reps, self.alpha,
            self.seed, self.failures
        ));
        let w = self.cells.iter().map(|c| c.label.len()).max().unwrap_or(5).max(7);
        out.push_str(&format!("{:<w$}  {:>8}  {:>8}  {:>8}\n", "outcome", "count", "freq", "se"));
        for c in &self.cells {
            out.push_str(&format!(
                "{:<w$}  {:>8}  {:>8.4}  {:>8.4}\n",
                c.label, c.count, c.frequency, c.se
            ));
        }
        out
    }
}

fn binomial_se(f: f64, n: usize) -> f64 {
    (f * (1.0 - f) / n as f64).sqrt()
}

fn aggregate(
    dgp: DgpSpec,
    method: String,
    alpha: f64,
    outcomes: Vec<Result<Outcome>>,
) -> Result<ExperimentReport> {
    let reps = outcomes.len();
    let mut failures = 0usize;
    let mut ok: Vec<Outcome> = Vec::with_capacity(reps);
    let mut first_err: Option<String> = None;
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => {
                failures += 1;
                if first_err.is_none() {
                    first_err = Some(e.to_string());
                }
            }
        }
    }
    if failures * 100 > reps {
        return Err(CtError::Experiment(format!(
            "{failures}/{reps} replications failed (first: {})",
            first_err.unwrap_or_default()
        )));
    }
    let n = ok.len();
    let mut cells: Vec<Cell> = Vec::new();
    let mut push = |label: String, count: usize| {
        let f = count as f64 / n as f64;
        cells.push(Cell { label, count, frequency: f, se: binomial_se(f, n) });
    };
    let is_test = matches!(ok.first(), Some(Outcome::Reject(_)));
    if is_test {
        let count = ok.iter().filter(|o| matches!(o, Outcome::Reject(true))).count();
        push("reject".to_string(), count);
    } else {
        let mut values: Vec<usize> = ok
            .iter()
            .filter_map(|o| match o {
                Outcome::Estimate(d) => Some(*d),
                _ => None,
            })
            .collect();
        values.sort_unstable();
        let mut i = 0;
        while i < values.len() {
            let v = values[i];
            let j = values[i..].iter().take_while(|&&x| x == v).count();
            push(format!("d={v}"), j);
            i += j;
        }
        let nd = ok.iter().filter(|o| matches!(o, Outcome::NoDecision)).count();
        if nd > 0 {
            push("no-decision".to_string(), nd);
        }
        let correct =
            ok.iter().filter(|o| matches!(o, Outcome::Estimate(d) if *d == dgp.d_n)).count();
        push("correct".to_string(), correct);
    }
    Ok(ExperimentReport { dgp, method, reps, alpha, seed: dgp.seed, failures, cells })
}

/// Generic replication driver: deterministic for a fixed spec at any thread
/// count (per-replication RNG streams, ordered aggregation).
pub fn run_experiment_with(
    dgp: DgpSpec,
    method: String,
    alpha: f64,
    reps: usize,
    rep_fn: impl Fn(usize, &mut ChaCha12Rng) -> Result<Outcome> + Sync,
) -> Result<ExperimentReport> {
    if reps < 100 {
        return Err(CtError::Parameter("need at least 100 replications".into()));
    }
    let outcomes: Vec<Result<Outcome>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha12Rng::seed_from_u64(dgp.seed);
            rng.set_stream(rep as u64 + 1);
            rep_fn(rep, &mut rng)
        })
        .collect();
    aggregate(dgp, method, alpha, outcomes)
}

fn apply_method(
    series: &FunctionalSeries,
    method: &MethodSpec,
    alpha: f64,
    store: &TableStore,
) -> Result<Outcome> {
    match method {
        MethodSpec::Test { cfg } => {
            let (_, rep) = run_test(series, cfg, alpha, store)?;
            Ok(Outcome::Reject(rep.reject))
        }
        MethodSpec::Td { base, d_max, k_rule } => {
            let est = sequential_td(series, base, *d_max, *k_rule, alpha, store)?;
            Ok(Outcome::Estimate(est.estimate))
        }
        MethodSpec::Bu { base, cap, k_rule } => {
            match sequential_bu(series, base, *cap, *k_rule, alpha, store) {
                Ok(est) => Ok(Outcome::Estimate(est.estimate)),
                Err(CtError::NoDecision { .. }) => Ok(Outcome::NoDecision),
                Err(e) => Err(e),
            }
        }
        MethodSpec::Ud { bu, td, m, k_rule } => {
            match sequential_ud(series, bu, td, *m, *k_rule, alpha, store) {
                Ok(est) => Ok(Outcome::Estimate(est.estimate)),
                Err(CtError::NoDecision { .. }) => Ok(Outcome::NoDecision),
                Err(e) => Err(e),
            }
        }
        MethodSpec::Ratio { det, d_max } => {
            // d0 is irrelevant for the eigenvalues; any valid value works
            let mut cfg = VrConfig::vr21(1, *det);
            cfg.k = (*d_max + 1).min(series.dim());
            let gev = run_eigen(series, &cfg)?;
            Ok(Outcome::Estimate(eig_ratio_estimator(&gev.mu, *d_max)?))
        }
        MethodSpec::Lrs { det, d_max, kappa } => {
            let adjusted = adjust(series, *det)?;
            let proj = crate::extractor::slack_extractor(
                &adjusted,
                (*d_max + 1).min(adjusted.dim()),
                false,
                crate::lrcov::KernelKind::TukeyHanning,
                &crate::lrcov::BandwidthSpec::Fixed(0),
            )?;
            Ok(Outcome::Estimate(lrs_estimator(&proj.source_eigenvalues, *kappa, *d_max)?))
        }
    }
}

/// Full experiment: generate, project, apply the method, aggregate.
pub fn run_experiment(
    dgp: DgpSpec,
    method: &MethodSpec,
    reps: usize,
    alpha: f64,
    store: &TableStore,
) -> Result<ExperimentReport> {
    dgp.validate()?;
    let basis: Basis = match dgp.kind {
        DgpKind::Far1 => {
            let g = dgp.grid_size;
            let grid: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
            make_basis(BasisKind::Legendre, dgp.basis_dim, Some(&grid))?
        }
        DgpKind::Var10 => make_basis(BasisKind::RawCoordinates, 10, None)?,
    };
    // var10 coefficients are fixed across replications
    let var_coef = match dgp.kind {
        DgpKind::Var10 => {
            let mut rng = ChaCha12Rng::seed_from_u64(dgp.seed);
            rng.set_stream(0);
            Some(draw_var_coefficients(dgp.d_n, &mut rng)?)
        }
        DgpKind::Far1 => None,
    };
    store.ensure(&method.needed_families(basis.dimension))?;

    run_experiment_with(dgp, method.name(), alpha, reps, |_, rng| {
        let raw = match dgp.kind {
            DgpKind::Far1 => dgp_far1(&dgp, rng)?,
            DgpKind::Var10 => dgp_var(&dgp, var_coef.as_ref().unwrap(), rng)?,
        };
        let series = project(&raw, &basis)?;
        apply_method(&series, method, alpha, store)
    })
}
