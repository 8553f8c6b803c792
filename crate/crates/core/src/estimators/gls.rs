//! Normal equations assembled from per-cluster cell summaries.
//!
//! The mean model has parameters `(μ, δ, φ₁)`; a cluster's baseline cell has
//! design row `(1, 0, 0)` and its post cell `(1, S_i, 1)`.

use crate::linalg::{Cholesky, SymMatrix};
use crate::model::{
    BlockCache, CellBlock, ClusterSummary, CorrelationStructure, ObservedTrial, TrialSummary,
    VarianceComponents, WeightingScheme,
};
use crate::{Error, Result, Scalar};

pub(crate) const P: usize = 3;
pub(crate) const DELTA: usize = 1;

/// Solution of a GLS system: coefficients, the inverse information matrix
/// and the weighted residual quadratic form.
#[derive(Debug, Clone)]
pub(crate) struct GlsSolution<T> {
    pub theta: Vec<T>,
    pub inv_info: SymMatrix<T>,
    pub rss: T,
    pub logdet_info: T,
    pub logdet_blocks: T,
}

fn rows<T: Scalar>(c: &ClusterSummary<T>) -> [[T; P]; 2] {
    let (z, o) = (T::zero(), T::one());
    [[o, z, z], [o, c.s(), o]]
}

/// Solves `Σ X'CX θ = Σ X'Cȳ` with one cell block per cluster.
pub(crate) fn solve_cells<T: Scalar>(
    summary: &TrialSummary<T>,
    mut block: impl FnMut(&ClusterSummary<T>) -> Result<CellBlock<T>>,
) -> Result<GlsSolution<T>> {
    let mut info = SymMatrix::zeros(P);
    let mut score = [T::zero(); P];
    let mut blocks = Vec::with_capacity(summary.clusters.len());
    let mut logdet_blocks = T::zero();
    for c in &summary.clusters {
        let cb = block(c)?;
        let x = rows(c);
        let cm = [[cb.c00, cb.c01], [cb.c01, cb.c11]];
        for a in 0..2 {
            let cy = cm[a][0] * c.mean[0] + cm[a][1] * c.mean[1];
            for p in 0..P {
                score[p] = score[p] + x[a][p] * cy;
                for b in 0..2 {
                    for q in 0..P {
                        info.add(p, q, x[a][p] * cm[a][b] * x[b][q]);
                    }
                }
            }
        }
        logdet_blocks = logdet_blocks + cb.logdet;
        blocks.push(cb);
    }
    let chol = Cholesky::new(&info)
        .map_err(|e| Error::Singular(format!("mean-model information matrix: {e}")))?;
    let theta = chol.solve(&score);
    let mut rss = T::zero();
    for (c, cb) in summary.clusters.iter().zip(&blocks) {
        let x = rows(c);
        let fit = |a: usize| (0..P).map(|p| x[a][p] * theta[p]).sum::<T>();
        let r0 = c.mean[0] - fit(0);
        let r1 = c.mean[1] - fit(1);
        rss = rss + (c.within_ss[0] + c.within_ss[1]) * cb.inv_sigma2 + cb.quad(r0, r1);
    }
    Ok(GlsSolution {
        theta,
        inv_info: chol.inverse(),
        rss,
        logdet_info: chol.logdet(),
        logdet_blocks,
    })
}

/// Cell block of an independence fit with per-participant weight `ω_ij`
/// (1, or `1/K_ij` when weighted), expressed in units of the residual scale.
pub(crate) fn independence_block<T: Scalar>(
    c: &ClusterSummary<T>,
    weighting: WeightingScheme,
) -> (CellBlock<T>, [T; 2]) {
    let n0 = T::from_count(c.size[0]);
    let n1 = T::from_count(c.size[1]);
    let omega = match weighting {
        WeightingScheme::Unweighted => [T::one(), T::one()],
        WeightingScheme::InverseClusterPeriodSize => [n0.recip(), n1.recip()],
    };
    let cb = CellBlock {
        c00: n0 * omega[0],
        c01: T::zero(),
        c11: n1 * omega[1],
        inv_sigma2: T::one(),
        logdet: T::zero(),
    };
    (cb, omega)
}

/// Weighted residual sum of squares of an independence-type fit given the
/// per-cluster cell residuals.
fn weighted_rss<T: Scalar>(
    summary: &TrialSummary<T>,
    weighting: WeightingScheme,
    mut residual: impl FnMut(usize, &ClusterSummary<T>) -> [T; 2],
) -> T {
    summary
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (cb, omega) = independence_block(c, weighting);
            let r = residual(i, c);
            omega[0] * c.within_ss[0] + omega[1] * c.within_ss[1] + cb.c00 * r[0] * r[0] + cb.c11 * r[1] * r[1]
        })
        .sum()
}

/// Coefficients, δ variance and residual scale of one fit.
#[derive(Debug, Clone)]
pub(crate) struct PointFit<T> {
    pub theta: Vec<T>,
    pub var_delta: T,
    pub scale: T,
}

fn residual_df<T: Scalar>(summary: &TrialSummary<T>, p: usize) -> Result<T> {
    let n = summary.n_obs();
    if n <= p {
        return Err(Error::Estimation(format!(
            "{n} observations leave no residual degrees of freedom for {p} parameters"
        )));
    }
    Ok(T::from_count(n - p))
}

/// OLS / WLS on all participants with period and treatment terms.
pub(crate) fn fit_independence<T: Scalar>(
    summary: &TrialSummary<T>,
    weighting: WeightingScheme,
) -> Result<PointFit<T>> {
    let sol = solve_cells(summary, |c| Ok(independence_block(c, weighting).0))?;
    let t = &sol.theta;
    let rss = weighted_rss(summary, weighting, |_, c| {
        [c.mean[0] - t[0], c.mean[1] - t[0] - c.s() * t[1] - t[2]]
    });
    let scale = rss / residual_df(summary, P)?;
    Ok(PointFit {
        var_delta: scale * sol.inv_info.get(DELTA, DELTA),
        theta: sol.theta,
        scale,
    })
}

/// Two-way fixed effects; the cluster intercepts are profiled out, leaving a
/// weighted regression of the within-cluster change `ȳ_i1 − ȳ_i0` on
/// `(S_i, 1)` with weight `h_i = c_i0 c_i1 / (c_i0 + c_i1)`, where `c_ij` is
/// the total weight of cell `(i, j)`.
pub(crate) fn fit_fixed_effects<T: Scalar>(
    summary: &TrialSummary<T>,
    weighting: WeightingScheme,
) -> Result<PointFit<T>> {
    let mut m = SymMatrix::zeros(2);
    let mut b = [T::zero(); 2];
    for c in &summary.clusters {
        let (cb, _) = independence_block(c, weighting);
        let h = cb.c00 * cb.c11 / (cb.c00 + cb.c11);
        let s = c.s();
        let d = c.mean[1] - c.mean[0];
        m.add(0, 0, h * s * s);
        m.add(0, 1, h * s);
        m.add(1, 0, h * s);
        m.add(1, 1, h);
        b[0] = b[0] + h * s * d;
        b[1] = b[1] + h * d;
    }
    let chol = Cholesky::new(&m)
        .map_err(|e| Error::Singular(format!("fixed-effects information matrix: {e}")))?;
    let beta = chol.solve(&b);
    let (delta, phi) = (beta[0], beta[1]);
    let intercepts: Vec<T> = summary
        .clusters
        .iter()
        .map(|c| {
            let (cb, _) = independence_block(c, weighting);
            (cb.c00 * c.mean[0] + cb.c11 * (c.mean[1] - phi - c.s() * delta)) / (cb.c00 + cb.c11)
        })
        .collect();
    let rss = weighted_rss(summary, weighting, |i, c| {
        let a = intercepts[i];
        [c.mean[0] - a, c.mean[1] - a - phi - c.s() * delta]
    });
    let scale = rss / residual_df(summary, summary.n_clusters() + 2)?;
    let var_delta = scale * chol.inverse().get(0, 0);
    let mu = intercepts[0];
    let mut theta = vec![mu, delta, phi];
    theta.extend(intercepts[1..].iter().map(|&a| a - mu));
    Ok(PointFit { theta, var_delta, scale })
}

/// Cluster weight relative to the mean cluster-period size.
fn relative_weights<T: Scalar>(summary: &TrialSummary<T>) -> Result<Vec<T>> {
    if let Some(c) = summary.clusters.iter().find(|c| !c.equal_periods()) {
        return Err(Error::Unsupported(format!(
            "weighted correlated fits need equal period sizes; cluster {} has {} and {}",
            c.id, c.size[0], c.size[1]
        )));
    }
    let mean = summary.clusters.iter().map(|c| T::from_count(c.size[0])).sum::<T>()
        / T::from_count(summary.n_clusters());
    Ok(summary.clusters.iter().map(|c| mean / T::from_count(c.size[0])).collect())
}

/// GLS with plug-in variance components; weighting uses `Q_i = w_i R_i` with
/// `w_i = K_i / mean(K)`.
pub(crate) fn fit_mixed<T: Scalar>(
    summary: &TrialSummary<T>,
    structure: CorrelationStructure,
    vc: &VarianceComponents<T>,
    weighting: WeightingScheme,
) -> Result<PointFit<T>> {
    let sol = solve_mixed(summary, structure, vc, weighting)?;
    Ok(PointFit {
        var_delta: sol.inv_info.get(DELTA, DELTA),
        theta: sol.theta,
        scale: vc.sigma_w2,
    })
}

pub(crate) fn solve_mixed<T: Scalar>(
    summary: &TrialSummary<T>,
    structure: CorrelationStructure,
    vc: &VarianceComponents<T>,
    weighting: WeightingScheme,
) -> Result<GlsSolution<T>> {
    let scale = match weighting {
        WeightingScheme::Unweighted => None,
        WeightingScheme::InverseClusterPeriodSize => Some(relative_weights(summary)?),
    };
    let mut cache = BlockCache::new(structure, *vc);
    let mut idx = 0;
    solve_cells(summary, |c| {
        let cb = cache.get(c.size[0], c.size[1])?;
        let cb = match &scale {
            Some(w) => cb.scaled(w[idx]),
            None => cb,
        };
        idx += 1;
        Ok(cb)
    })
}

/// GLS coefficients `(μ, δ, φ₁)` for a fixed working covariance.
///
/// Independence with inverse cell-size weighting is the cell-mean regression.
pub fn gls_point_estimate<T: Scalar>(
    trial: &ObservedTrial<T>,
    structure: CorrelationStructure,
    vc: &VarianceComponents<T>,
    weighting: WeightingScheme,
) -> Result<Vec<T>> {
    let summary = trial.summarize()?;
    let sol = match structure {
        CorrelationStructure::Independence => {
            solve_cells(&summary, |c| Ok(independence_block(c, weighting).0))?
        }
        _ => solve_mixed(&summary, structure, vc, weighting)?,
    };
    Ok(sol.theta)
}
