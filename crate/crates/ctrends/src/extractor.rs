//! Slack extraction: leading eigenvectors of the sample (long-run) variance
//! of the level series, used to reduce the data to K coordinates that retain
//! all stochastic trends.

use nalgebra::DMatrix;

use crate::error::{CtError, Result};
use crate::fdata::FunctionalSeries;
use crate::lrcov::{lrcov_matrix, BandwidthSpec, KernelKind};

/// Estimated rank-K extractor with the spectral information it came from.
#[derive(Debug, Clone)]
pub struct Projection {
    /// p x K, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// K+1 leading eigenvalues of the source operator (padded with 0 when
    /// the space has only K directions).
    pub source_eigenvalues: Vec<f64>,
    /// Whether the source was a long-run variance (a_R > 0).
    pub long_run: bool,
    /// Set when the long-run source operator had eigenvalues materially
    /// below zero (indefinite in finite sample).
    pub indefinite_warning: bool,
    pub h_p: usize,
    pub t_eff: usize,
}

impl Projection {
    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn p(&self) -> usize {
        self.vectors.nrows()
    }

    /// p x p orthogonal projector V V'.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.vectors * self.vectors.transpose()
    }
}

/// Eigendecompose a symmetric matrix, eigenvalues descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

fn fix_signs(v: &mut DMatrix<f64>) {
    for j in 0..v.ncols() {
        let col = v.column(j);
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..col.len() {
            if col[i].abs() > best_abs {
                best_abs = col[i].abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            let neg = -v.column(j).clone_owned();
            v.set_column(j, &neg);
        }
    }
}

/// Estimate the slack extractor from the level series. The series should
/// already carry whatever deterministic adjustment the caller wants.
pub fn slack_extractor(
    series: &FunctionalSeries,
    k: usize,
    a_r_positive: bool,
    kernel_p: KernelKind,
    bw_p: &BandwidthSpec,
) -> Result<Projection> {
    let p = series.dim();
    let t = series.nrows();
    if k < 1 || k > p {
        return Err(CtError::Dimension(format!(
            "extractor rank K={k} must satisfy 1 <= K <= p={p}"
        )));
    }
    if k > t.saturating_sub(1) {
        return Err(CtError::InsufficientData(format!(
            "extractor rank K={k} needs T-1 >= K, got T={t}"
        )));
    }
    let h_p = if a_r_positive {
        bw_p.resolve(t, kernel_p, Some(&series.coords))?.h
    } else {
        0
    };
    let lam = lrcov_matrix(&series.coords, kernel_p, h_p)?;
    let (vals, mut vecs) = sym_eigen_desc(&lam);
    let top = vals[0].max(0.0);
    let indefinite = a_r_positive && vals.iter().any(|&v| v < -1e-10 * top.max(1e-300));
    let mut source_eigenvalues: Vec<f64> = vals.iter().take(k + 1).copied().collect();
    while source_eigenvalues.len() < k + 1 {
        source_eigenvalues.push(0.0);
    }
    let mut vectors = vecs.columns(0, k).into_owned();
    fix_signs(&mut vectors);
    fix_signs(&mut vecs);
    Ok(Projection {
        vectors,
        source_eigenvalues,
        long_run: a_r_positive,
        indefinite_warning: indefinite,
        h_p,
        t_eff: t,
    })
}

/// Gap between the K-th and (K+1)-th source eigenvalues, with the sampling
/// scale M_T^{-1/2} for an informal separation check.
#[derive(Debug, Clone, Copy)]
pub struct GapDiagnostic {
    pub gap: f64,
    pub scale: f64,
}

pub fn gap_diagnostic(proj: &Projection) -> GapDiagnostic {
    let k = proj.k();
    let gap = proj.source_eigenvalues[k - 1] - proj.source_eigenvalues[k];
    let m_t = if proj.long_run && proj.h_p > 0 {
        proj.t_eff as f64 / proj.h_p as f64
    } else {
        proj.t_eff as f64
    };
    GapDiagnostic { gap, scale: m_t.powf(-0.5) }
}

/// Upper-bound heuristic: the largest ratio of consecutive leading
/// eigenvalues marks the trend count; add a slack.
pub fn dmax_heuristic(eigs: &[f64], s_bar: usize, slack_k: usize) -> Result<usize> {
    if eigs.len() < s_bar + 1 {
        return Err(CtError::Parameter(format!(
            "need at least s_bar+1 = {} eigenvalues, got {}",
            s_bar + 1,
            eigs.len()
        )));
    }
    let mut best_j = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut any = false;
    for j in 0..s_bar {
        let denom = eigs[j + 1].max(0.0);
        let num = eigs[j].max(0.0);
        if denom <= 0.0 {
            continue;
        }
        let r = num / denom;
        if r.is_finite() {
            any = true;
            if r > best {
                best = r;
                best_j = j + 1; // 1-based index
            }
        }
    }
    if !any {
        return Err(CtError::HeuristicFailure(
            "no finite eigenvalue ratios available".into(),
        ));
    }
    Ok(best_j + slack_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::{make_basis, BasisKind, FunctionalSeries};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn series(coords: DMatrix<f64>) -> FunctionalSeries {
        let p = coords.ncols();
        let b = make_basis(BasisKind::RawCoordinates, p, None).unwrap();
        FunctionalSeries::from_coords(coords, b).unwrap()
    }

    fn var_bw() -> BandwidthSpec {
        BandwidthSpec::Fixed(0)
    }

    #[test]
    fn low_rank_data_recovered() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
        let t = 60;
        let mut coords = DMatrix::zeros(t, 4);
        for i in 0..t {
            coords[(i, 0)] = 3.0 * (rng.random::<f64>() - 0.5);
            coords[(i, 1)] = 1.0 * (rng.random::<f64>() - 0.5);
        }
        let s = series(coords);
        let proj = slack_extractor(&s, 2, false, KernelKind::TukeyHanning, &var_bw()).unwrap();
        let pm = proj.projector();
        let mut want = DMatrix::zeros(4, 4);
        want[(0, 0)] = 1.0;
        want[(1, 1)] = 1.0;
        assert!((&pm - &want).abs().max() < 1e-10);
        // orthonormality
        let vtv = proj.vectors.transpose() * &proj.vectors;
        assert!((&vtv - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn full_rank_projector_identity() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(22);
        let coords = DMatrix::from_fn(50, 4, |_, _| rng.random::<f64>() - 0.5);
        let s = series(coords);
        let proj = slack_extractor(&s, 4, false, KernelKind::TukeyHanning, &var_bw()).unwrap();
        let pm = proj.projector();
        assert!((&pm - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        assert_eq!(proj.source_eigenvalues.len(), 5);
        assert_eq!(proj.source_eigenvalues[4], 0.0); // padded
    }

    #[test]
    fn embedding_orthogonal_scale_invariance() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(23);
        let coords = DMatrix::from_fn(80, 3, |_, _| rng.random::<f64>() - 0.5);
        let s = series(coords.clone());
        let proj = slack_extractor(&s, 2, false, KernelKind::TukeyHanning, &var_bw()).unwrap();

        // zero padding
        let mut padded = DMatrix::zeros(80, 5);
        padded.view_mut((0, 0), (80, 3)).copy_from(&coords);
        let sp = series(padded);
        let proj_p = slack_extractor(&sp, 2, false, KernelKind::TukeyHanning, &var_bw()).unwrap();
        let pm = proj.projector();
        let pm_p = proj_p.projector();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i < 3 && j < 3 { pm[(i, j)] } else { 0.0 };
                assert!((pm_p[(i, j)] - want).abs() < 1e-10);
            }
        }
        for j in 0..2 {
            assert!((proj.source_eigenvalues[j] - proj_p.source_eigenvalues[j]).abs() < 1e-10);
        }

        // orthogonal map
        let theta: f64 = 0.77;
        let mut q = DMatrix::identity(3, 3);
        q[(0, 0)] = theta.cos();
        q[(0, 2)] = -theta.sin();
        q[(2, 0)] = theta.sin();
        q[(2, 2)] = theta.cos();
        let sq = series(&coords * &q);
        let proj_q = slack_extractor(&sq, 2, false, KernelKind::TukeyHanning, &var_bw()).unwrap();
        let want = q.transpose() * &pm * &q;
        assert!((&proj_q.projector() - &want).abs().max() < 1e-10);

        // scaling
        let sc = series(&coords * 3.0);
        let proj_c = slack_extractor(&sc, 2, false, KernelKind::TukeyHanning, &var_bw()).unwrap();
        assert!((&proj_c.projector() - &pm).abs().max() < 1e-10);
        for j in 0..3 {
            let r = proj_c.source_eigenvalues[j] / proj.source_eigenvalues[j];
            assert!((r - 9.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gap_values() {
        let base = Projection {
            vectors: DMatrix::identity(4, 2),
            source_eigenvalues: vec![5.0, 3.0, 1.0],
            long_run: false,
            indefinite_warning: false,
            h_p: 0,
            t_eff: 100,
        };
        let g = gap_diagnostic(&base);
        assert_eq!(g.gap, 2.0);
        assert!((g.scale - 0.1).abs() < 1e-12);

        let mut tied = base.clone();
        tied.vectors = DMatrix::identity(4, 3);
        tied.source_eigenvalues = vec![5.0, 3.0, 1.0, 1.0];
        assert_eq!(gap_diagnostic(&tied).gap, 0.0);
    }

    #[test]
    fn duplicated_columns_zero_gap() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(29);
        let base = DMatrix::from_fn(40, 1, |_, _| rng.random::<f64>() - 0.5);
        let coords = DMatrix::from_fn(40, 3, |i, j| if j < 2 { base[(i, 0)] } else { 0.1 * base[(i, 0)] });
        let s = series(coords);
        // data are rank one: second and third eigenvalues are both ~0
        let proj = slack_extractor(&s, 2, false, KernelKind::TukeyHanning, &var_bw()).unwrap();
        assert!(gap_diagnostic(&proj).gap.abs() < 1e-10);
    }

    #[test]
    fn dmax_heuristic_cases() {
        let eigs = [10.0, 5.0, 0.5, 0.4, 0.3];
        assert_eq!(dmax_heuristic(&eigs, 4, 0).unwrap(), 2);
        assert_eq!(dmax_heuristic(&eigs, 4, 2).unwrap(), 4);
        // geometric: all ratios equal -> smallest index wins
        let geo: Vec<f64> = (0..6).map(|j| 0.5f64.powi(j)).collect();
        assert_eq!(dmax_heuristic(&geo, 5, 0).unwrap(), 1);
        assert!(dmax_heuristic(&[0.0, 0.0, 0.0], 2, 0).is_err());
    }
}
