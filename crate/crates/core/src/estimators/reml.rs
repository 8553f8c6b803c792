//! Restricted maximum likelihood for the variance components of the
//! unweighted mixed models.
//!
//! The residual variance is profiled out analytically. With `V = σ² Ṽ(θ)`,
//! where `θ` holds the variance ratios `τ²/σ²`, minus twice the restricted
//! log-likelihood is, up to a constant,
//! `(n−p) ln(Q/(n−p)) + Σ ln|Ṽ_i| + ln|Z'Ṽ⁻¹Z|` with `Q` the GLS residual
//! quadratic form; the optimum has `σ̂² = Q/(n−p)`.

use serde::{Deserialize, Serialize};

use super::gls::{fit_independence, solve_cells, P};
use crate::model::{
    BlockCache, CorrelationStructure, ObservedTrial, TrialSummary, VarianceComponents,
    WeightingScheme,
};
use crate::optim::{golden_section, nelder_mead_box};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemlOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RemlOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemlFit<T> {
    pub vc: VarianceComponents<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Minimized `-2 × restricted log-likelihood` without constants.
    pub objective: T,
}

/// Largest ICC the search may reach.
const RHO_MAX: f64 = 1.0 - 1e-6;

const RHO_GRID: [f64; 22] = [
    0.0, 0.001, 0.005, 0.01, 0.02, 0.04, 0.07, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8,
    0.85, 0.9, 0.95, 0.99, 0.999, RHO_MAX,
];
const RHO_WP_GRID: [f64; 10] = [0.0, 0.005, 0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 0.9];
const CAC_GRID: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0];

struct Profile<'a, T> {
    summary: &'a TrialSummary<T>,
    structure: CorrelationStructure,
    df: T,
    floor: T,
}

impl<'a, T: Scalar> Profile<'a, T> {
    fn new(summary: &'a TrialSummary<T>, structure: CorrelationStructure) -> Result<Self> {
        let n = summary.n_obs();
        if n <= P + 1 {
            return Err(Error::Estimation(format!("{n} observations are too few for REML")));
        }
        if summary.n_clusters() < 2 {
            return Err(Error::Estimation("REML needs at least two clusters".into()));
        }
        let scale = summary
            .clusters
            .iter()
            .flat_map(|c| c.mean)
            .fold(T::zero(), |m, y| m.max(y.abs()))
            .max(T::min_positive_value());
        let eps = T::epsilon() * T::lit(64.0) * scale;
        Ok(Self {
            summary,
            structure,
            df: T::from_count(n - P),
            floor: T::from_count(n) * eps * eps,
        })
    }

    /// Objective and residual quadratic form at variance ratios
    /// `(θ_α, θ_γ)` relative to `σ² = 1`.
    fn eval(&self, theta_a: T, theta_g: T) -> Result<(T, T)> {
        let vc = VarianceComponents { sigma_w2: T::one(), tau_alpha2: theta_a, tau_gamma2: theta_g };
        let mut cache = BlockCache::new(self.structure, vc);
        let sol = solve_cells(self.summary, |c| cache.get(c.size[0], c.size[1]))?;
        if !(sol.rss > self.floor) {
            return Err(Error::Degenerate(
                "outcomes are fitted exactly; the residual variance is zero".into(),
            ));
        }
        let obj = self.df * (sol.rss / self.df).ln() + sol.logdet_blocks + sol.logdet_info;
        Ok((obj, sol.rss))
    }

    fn objective(&self, theta_a: T, theta_g: T) -> T {
        self.eval(theta_a, theta_g).map(|r| r.0).unwrap_or(T::infinity())
    }

    fn finish(&self, theta_a: T, theta_g: T, converged: bool, iterations: usize) -> Result<RemlFit<T>> {
        let (objective, q) = self.eval(theta_a, theta_g)?;
        let sigma_w2 = q / self.df;
        Ok(RemlFit {
            vc: VarianceComponents {
                sigma_w2,
                tau_alpha2: theta_a * sigma_w2,
                tau_gamma2: theta_g * sigma_w2,
            },
            converged,
            iterations,
            objective,
        })
    }
}

fn odds<T: Scalar>(rho: T) -> T {
    rho / (T::one() - rho)
}

/// REML variance components of the unweighted model with the given working
/// structure. Independence returns the residual mean square.
pub fn estimate_variance_components<T: Scalar>(
    trial: &ObservedTrial<T>,
    structure: CorrelationStructure,
    options: &RemlOptions,
) -> Result<RemlFit<T>> {
    reml(&trial.summarize()?, structure, options)
}

pub(crate) fn reml<T: Scalar>(
    summary: &TrialSummary<T>,
    structure: CorrelationStructure,
    options: &RemlOptions,
) -> Result<RemlFit<T>> {
    let profile = Profile::new(summary, structure)?;
    // Fails early, with a specific error, on exactly fitted data.
    profile.eval(T::zero(), T::zero())?;
    match structure {
        CorrelationStructure::Independence => {
            let fit = fit_independence(summary, WeightingScheme::Unweighted)?;
            let (objective, _) = profile.eval(T::zero(), T::zero())?;
            Ok(RemlFit {
                vc: VarianceComponents::independent(fit.scale)?,
                converged: true,
                iterations: 0,
                objective,
            })
        }
        CorrelationStructure::Exchangeable => reml_exchangeable(&profile, options),
        CorrelationStructure::NestedExchangeable => reml_nested(&profile, options),
    }
}

/// One-dimensional search over `ρ` on the exchangeable (`θ_γ = 0`) line.
fn search_rho<T: Scalar>(
    profile: &Profile<'_, T>,
    options: &RemlOptions,
    theta_of: impl Fn(T) -> (T, T),
) -> (T, T, bool, usize) {
    let f = |rho: T| {
        let (a, g) = theta_of(rho);
        profile.objective(a, g)
    };
    let values: Vec<T> = RHO_GRID.iter().map(|&r| f(T::lit(r))).collect();
    let best = (0..values.len())
        .min_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    let lo = T::lit(RHO_GRID[best.saturating_sub(1)]);
    let hi = T::lit(RHO_GRID[(best + 1).min(RHO_GRID.len() - 1)]);
    let tol = T::lit(options.tol * 1e-2).max(T::epsilon() * T::lit(4.0));
    let m = golden_section(f, lo, hi, tol, options.max_iter);
    let (rho, value) = if m.value <= values[best] {
        (m.x[0], m.value)
    } else {
        (T::lit(RHO_GRID[best]), values[best])
    };
    (rho, value, m.converged, m.iterations)
}

fn reml_exchangeable<T: Scalar>(profile: &Profile<'_, T>, options: &RemlOptions) -> Result<RemlFit<T>> {
    let (rho, _, converged, iterations) = search_rho(profile, options, |r| (odds(r), T::zero()));
    profile.finish(odds(rho), T::zero(), converged, iterations)
}

/// Nested structure, parameterized by the within-period ICC and the cluster
/// autocorrelation, both kept in their natural ranges.
fn reml_nested<T: Scalar>(profile: &Profile<'_, T>, options: &RemlOptions) -> Result<RemlFit<T>> {
    let thetas = |rho_wp: T, cac: T| {
        let total = odds(rho_wp);
        (cac * total, (T::one() - cac) * total)
    };
    let f = |x: &[T]| {
        let (a, g) = thetas(x[0], x[1]);
        profile.objective(a, g)
    };

    let mut start = [T::zero(), T::one()];
    let mut start_value = T::infinity();
    for &r in &RHO_WP_GRID {
        for &c in &CAC_GRID {
            let x = [T::lit(r), T::lit(c)];
            let v = f(&x);
            if v < start_value {
                start_value = v;
                start = x;
            }
        }
    }
    let lower = [T::zero(), T::zero()];
    let upper = [T::lit(RHO_MAX), T::one()];
    let m = nelder_mead_box(f, &start, T::lit(0.05), &lower, &upper, T::lit(options.tol), options.max_iter);
    let mut best = (m.x[0], m.x[1], m.value);
    let (converged, iterations) = (m.converged, m.iterations);

    // The optimum often sits on an edge of the box; polish the edges the
    // simplex can only approach.
    let keep = |best: &mut (T, T, T), x0: T, x1: T, v: T| {
        if v <= best.2 {
            *best = (x0, x1, v);
        }
    };
    let rho_wp = best.0;
    keep(&mut best, rho_wp, T::one(), f(&[rho_wp, T::one()]));
    keep(&mut best, rho_wp, T::zero(), f(&[rho_wp, T::zero()]));
    keep(&mut best, T::zero(), T::one(), f(&[T::zero(), T::one()]));
    if best.1 >= T::lit(0.999) {
        let (rho, v, _, _) = search_rho(profile, options, |r| thetas(r, T::one()));
        keep(&mut best, rho, T::one(), v);
    }
    if !best.2.is_finite() {
        return Err(Error::Estimation("REML objective is not finite anywhere on the search grid".into()));
    }
    let (a, g) = thetas(best.0, best.1);
    profile.finish(a, g, converged, iterations)
}
