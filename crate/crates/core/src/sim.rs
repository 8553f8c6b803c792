//! Seeded Monte Carlo studies of the estimators.
//!
//! Replicate `r` draws all of its randomness from a ChaCha8 stream keyed by
//! `(master_seed, r)`, so a study gives identical results for any thread
//! count or execution order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{fit_summary_many, EstimatorKind, FitOptions};
use crate::inference::{confidence_interval, wald_test, VarianceSource};
use crate::model::{ObservedTrial, Record, VarianceComponents};
use crate::oracle::{true_cate, true_pate, PopulationMixture, Subpopulation};
use crate::{Error, Result, Scalar};

/// One cluster type of the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSubpop<T> {
    pub p: T,
    /// Mean cluster-period size (shared by both periods).
    pub k: T,
    pub delta: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeLaw {
    /// Zero-truncated Poisson with mean parameter `k`.
    #[default]
    Poisson,
    /// Exactly `k` participants per period.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubpopAssignment {
    /// Each cluster draws its type independently with probabilities `p_u`.
    #[default]
    Random,
    /// Types are allotted in fixed proportions `round(p_u I)`.
    FixedSplit,
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

fn default_level() -> f64 {
    0.95
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario<T> {
    #[serde(alias = "I")]
    pub n_clusters: usize,
    pub mixture: Vec<ScenarioSubpop<T>>,
    /// Variance components of the generating model; `sigma_w2 = 0` gives
    /// noiseless outcomes.
    pub vc: VarianceComponents<T>,
    pub mu: T,
    pub phi1: T,
    pub reps: usize,
    #[serde(alias = "seed")]
    pub master_seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub size_law: SizeLaw,
    #[serde(default)]
    pub assignment: SubpopAssignment,
    #[serde(default = "default_true")]
    pub jackknife: bool,
}

impl<T: Scalar> SimScenario<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 4 || !self.n_clusters.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "number of clusters must be even and at least 4, got {}",
                self.n_clusters
            )));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid("no estimators requested"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::invalid(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        let v = &self.vc;
        if [v.sigma_w2, v.tau_alpha2, v.tau_gamma2].iter().any(|x| !(x.is_finite() && *x >= T::zero())) {
            return Err(Error::invalid("generating variance components must be finite and non-negative"));
        }
        if !self.mu.is_finite() || !self.phi1.is_finite() {
            return Err(Error::invalid("mu and phi1 must be finite"));
        }
        if self.mixture.iter().any(|s| !(s.k >= T::one())) {
            return Err(Error::invalid("mean cluster-period sizes must be at least 1"));
        }
        self.nominal_mixture().map(|_| ())
    }

    fn nominal_mixture(&self) -> Result<PopulationMixture<T>> {
        PopulationMixture::new(
            self.mixture.iter().map(|s| Subpopulation::new(s.p, s.k, s.delta)).collect(),
        )
    }

    /// The superpopulation of cluster types implied by the size law, with
    /// Poisson sizes enumerated exactly.
    pub fn population_mixture(&self) -> Result<PopulationMixture<T>> {
        match self.size_law {
            SizeLaw::Fixed => PopulationMixture::new(
                self.mixture
                    .iter()
                    .map(|s| Subpopulation::new(s.p, s.k.round(), s.delta))
                    .collect(),
            ),
            SizeLaw::Poisson => PopulationMixture::zero_truncated_poisson(
                &self.mixture.iter().map(|s| (s.p, s.k, s.delta)).collect::<Vec<_>>(),
            ),
        }
    }

    /// Superpopulation pATE and cATE.
    pub fn targets(&self) -> Result<(T, T)> {
        let mix = self.population_mixture()?;
        Ok((true_pate(&mix), true_cate(&mix)))
    }
}

/// A generated trial together with the cluster types that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedTrial<T> {
    pub trial: ObservedTrial<T>,
    /// Type index of each cluster, in cluster-id order.
    pub subpop: Vec<usize>,
    pub sizes: Vec<usize>,
    pub treated: Vec<bool>,
}

impl<T: Scalar> GeneratedTrial<T> {
    /// Cluster-average effect of this trial's clusters.
    pub fn sample_cate(&self, scenario: &SimScenario<T>) -> T {
        let sum: T = self.subpop.iter().map(|&u| scenario.mixture[u].delta).sum();
        sum / T::from_count(self.subpop.len())
    }

    /// Participant-average effect of this trial's clusters.
    pub fn sample_pate(&self, scenario: &SimScenario<T>) -> T {
        let (num, den) = self.subpop.iter().zip(&self.sizes).fold((T::zero(), T::zero()), |(n, d), (&u, &k)| {
            let k = T::from_count(k);
            (n + k * scenario.mixture[u].delta, d + k)
        });
        num / den
    }
}

fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn assign_subpops<T: Scalar>(scenario: &SimScenario<T>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = scenario.n_clusters;
    let probs: Vec<f64> = scenario.mixture.iter().map(|s| s.p.to_f64_lossy()).collect();
    match scenario.assignment {
        SubpopAssignment::Random => (0..n)
            .map(|_| {
                let mut u: f64 = rng.random();
                for (i, p) in probs.iter().enumerate() {
                    if u < *p {
                        return i;
                    }
                    u -= p;
                }
                probs.len() - 1
            })
            .collect(),
        SubpopAssignment::FixedSplit => {
            // Cumulative rounding keeps the counts summing to n.
            let mut out = Vec::with_capacity(n);
            let mut cum = 0.0;
            for (i, p) in probs.iter().enumerate() {
                cum += p;
                let upto = if i + 1 == probs.len() { n } else { (cum * n as f64).round() as usize };
                while out.len() < upto.min(n) {
                    out.push(i);
                }
            }
            out
        }
    }
}

/// Generates replicate `index` of the scenario.
pub fn generate_replicate<T: Scalar>(scenario: &SimScenario<T>, index: usize) -> Result<GeneratedTrial<T>> {
    scenario.validate()?;
    let mut rng = replicate_rng(scenario.master_seed, index);
    let n = scenario.n_clusters;
    let subpop = assign_subpops(scenario, &mut rng);

    let mut sizes = Vec::with_capacity(n);
    for &u in &subpop {
        let mean = scenario.mixture[u].k.to_f64_lossy();
        let k = match scenario.size_law {
            SizeLaw::Fixed => mean.round() as usize,
            SizeLaw::Poisson => {
                let law = Poisson::new(mean).map_err(|e| Error::invalid(format!("size law: {e}")))?;
                loop {
                    let k = law.sample(&mut rng) as usize;
                    if k > 0 {
                        break k;
                    }
                }
            }
        };
        sizes.push(k);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut treated = vec![false; n];
    for &i in &order[..n / 2] {
        treated[i] = true;
    }

    let sd = |v: T| v.to_f64_lossy().sqrt();
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| Error::invalid(format!("normal law: {e}")));
    let alpha = normal(sd(scenario.vc.tau_alpha2))?;
    let gamma = normal(sd(scenario.vc.tau_gamma2))?;
    let eps = normal(sd(scenario.vc.sigma_w2))?;
    let width = n.to_string().len();
    let mut records = Vec::with_capacity(sizes.iter().sum::<usize>() * 2);
    for i in 0..n {
        let id = format!("c{:0width$}", i + 1);
        let s = u8::from(treated[i]);
        let a = alpha.sample(&mut rng);
        let g = [gamma.sample(&mut rng), gamma.sample(&mut rng)];
        let delta = scenario.mixture[subpop[i]].delta;
        for j in 0..2u8 {
            let mut mean = scenario.mu + T::lit(a + g[j as usize]);
            if j == 1 {
                mean = mean + scenario.phi1;
                if treated[i] {
                    mean = mean + delta;
                }
            }
            for _ in 0..sizes[i] {
                records.push(Record::new(id.clone(), j, s, mean + T::lit(eps.sample(&mut rng))));
            }
        }
    }
    Ok(GeneratedTrial { trial: ObservedTrial::new(records)?, subpop, sizes, treated })
}

/// Generates replicate `index` of the scenario as a trial.
pub fn generate_trial<T: Scalar>(scenario: &SimScenario<T>, index: usize) -> Result<ObservedTrial<T>> {
    Ok(generate_replicate(scenario, index)?.trial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord<T> {
    pub delta_hat: T,
    pub model_var: T,
    pub jk_var: Option<T>,
    pub vc_hat: Option<VarianceComponents<T>>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord<T> {
    pub index: usize,
    pub sample_pate: T,
    pub sample_cate: T,
    /// One entry per requested estimator; `None` when the fit failed.
    pub estimates: Vec<Option<EstimateRecord<T>>>,
}

/// Summary of one estimator against one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow<T> {
    pub estimator: EstimatorKind,
    pub weighting: String,
    pub target: String,
    pub rel_bias_pct: T,
    pub rmse: T,
    pub mean_model_var: T,
    pub mean_jk_var: Option<T>,
    pub mc_var: T,
    pub coverage_model: T,
    pub coverage_jk: Option<T>,
    pub power_model: T,
    pub power_jk: Option<T>,
    pub target_value: T,
    pub mean_estimate: T,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport<T> {
    pub scenario: SimScenario<T>,
    pub pate: T,
    pub cate: T,
    pub rows: Vec<ReportRow<T>>,
    pub replicates: Vec<ReplicateRecord<T>>,
}

impl<T: Scalar> SimReport<T> {
    pub fn row(&self, estimator: EstimatorKind, target: &str) -> Option<&ReportRow<T>> {
        self.rows.iter().find(|r| r.estimator == estimator && r.target == target)
    }

    /// Successful estimates of one estimator, in replicate order.
    pub fn estimates(&self, estimator: EstimatorKind) -> Vec<&EstimateRecord<T>> {
        let Some(k) = self.scenario.estimators.iter().position(|&e| e == estimator) else {
            return Vec::new();
        };
        self.replicates.iter().filter_map(|r| r.estimates[k].as_ref()).collect()
    }
}

/// Largest tolerated share of failed fits per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.05;

fn run_replicate<T: Scalar>(scenario: &SimScenario<T>, index: usize) -> Result<ReplicateRecord<T>> {
    let generated = generate_replicate(scenario, index)?;
    let summary = generated.trial.summarize()?;
    let options = FitOptions { jackknife: scenario.jackknife, ..FitOptions::default() };
    let fits = fit_summary_many(&summary, &scenario.estimators, &options);
    Ok(ReplicateRecord {
        index,
        sample_pate: generated.sample_pate(scenario),
        sample_cate: generated.sample_cate(scenario),
        estimates: fits
            .into_iter()
            .map(|f| {
                f.ok().map(|f| EstimateRecord {
                    delta_hat: f.delta_hat,
                    model_var: f.model_based_var,
                    jk_var: f.jackknife_var,
                    vc_hat: f.vc_hat,
                    converged: f.converged,
                })
            })
            .collect(),
    })
}

/// Runs every replicate and aggregates bias, RMSE, variance, coverage and
/// power against both the pATE and the cATE.
pub fn run_study<T: Scalar>(scenario: &SimScenario<T>) -> Result<SimReport<T>> {
    scenario.validate()?;
    let (pate, cate) = scenario.targets()?;
    let replicates = (0..scenario.reps)
        .into_par_iter()
        .map(|r| run_replicate(scenario, r))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (k, &kind) in scenario.estimators.iter().enumerate() {
        let ok: Vec<&EstimateRecord<T>> = replicates.iter().filter_map(|r| r.estimates[k].as_ref()).collect();
        let failed = scenario.reps - ok.len();
        if failed as f64 > MAX_FAILURE_RATE * scenario.reps as f64 || ok.is_empty() {
            return Err(Error::Study(format!(
                "{kind} failed in {failed} of {} replicates",
                scenario.reps
            )));
        }
        for (target, value) in [("pATE", pate), ("cATE", cate)] {
            rows.push(summarize_estimator(scenario, kind, target, value, &ok, failed)?);
        }
    }
    Ok(SimReport { scenario: scenario.clone(), pate, cate, rows, replicates })
}

fn mean<T: Scalar>(xs: impl Iterator<Item = T>) -> T {
    let (s, n) = xs.fold((T::zero(), 0usize), |(s, n), x| (s + x, n + 1));
    s / T::from_count(n)
}

fn summarize_estimator<T: Scalar>(
    scenario: &SimScenario<T>,
    kind: EstimatorKind,
    target: &str,
    value: T,
    ok: &[&EstimateRecord<T>],
    failed: usize,
) -> Result<ReportRow<T>> {
    let n = ok.len();
    let m = mean(ok.iter().map(|e| e.delta_hat));
    let mc_var = if n > 1 {
        ok.iter().map(|e| (e.delta_hat - m) * (e.delta_hat - m)).sum::<T>() / T::from_count(n - 1)
    } else {
        T::zero()
    };
    let rmse = mean(ok.iter().map(|e| (e.delta_hat - value) * (e.delta_hat - value))).sqrt();
    let alpha = 1.0 - scenario.ci_level;
    let rate = |hits: usize| T::from_count(hits) / T::from_count(n);
    let mut cover = [0usize; 2];
    let mut reject = [0usize; 2];
    for e in ok {
        for (s, var) in [(0, Some(e.model_var)), (1, e.jk_var)] {
            let Some(var) = var else { continue };
            let source = if s == 0 { VarianceSource::ModelBased } else { VarianceSource::Jackknife };
            let ci = confidence_interval(e.delta_hat, var, scenario.n_clusters, scenario.ci_level, source)?;
            cover[s] += usize::from(ci.covers(value));
            reject[s] += usize::from(wald_test(e.delta_hat, var, scenario.n_clusters)? < alpha);
        }
    }
    let has_jk = ok.iter().all(|e| e.jk_var.is_some());
    Ok(ReportRow {
        estimator: kind,
        weighting: if kind.is_weighted() { "weighted" } else { "unweighted" }.to_owned(),
        target: target.to_owned(),
        rel_bias_pct: (m - value) / value * T::lit(100.0),
        rmse,
        mean_model_var: mean(ok.iter().map(|e| e.model_var)),
        mean_jk_var: has_jk.then(|| mean(ok.iter().filter_map(|e| e.jk_var))),
        mc_var,
        coverage_model: rate(cover[0]),
        coverage_jk: has_jk.then(|| rate(cover[1])),
        power_model: rate(reject[0]),
        power_jk: has_jk.then(|| rate(reject[1])),
        target_value: value,
        mean_estimate: m,
        n_ok: n,
        n_failed: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> SimScenario<f64> {
        SimScenario {
            n_clusters: 6,
            mixture: vec![
                ScenarioSubpop { p: 0.5, k: 5.0, delta: 0.2 },
                ScenarioSubpop { p: 0.5, k: 9.0, delta: 0.5 },
            ],
            vc: VarianceComponents { sigma_w2: 1.0, tau_alpha2: 0.05, tau_gamma2: 0.01 },
            mu: 1.0,
            phi1: 0.2,
            reps: 3,
            master_seed: 11,
            estimators: EstimatorKind::ALL.to_vec(),
            ci_level: 0.95,
            size_law: SizeLaw::Poisson,
            assignment: SubpopAssignment::Random,
            jackknife: false,
        }
    }

    #[test]
    fn replicate_is_deterministic() {
        let s = scenario();
        let a = generate_trial(&s, 2).unwrap();
        let b = generate_trial(&s, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_trial(&s, 3).unwrap());
    }

    #[test]
    fn half_treated_and_fixed_split() {
        let mut s = scenario();
        s.assignment = SubpopAssignment::FixedSplit;
        for r in 0..5 {
            let g = generate_replicate(&s, r).unwrap();
            assert_eq!(g.treated.iter().filter(|&&t| t).count(), 3);
            assert_eq!(g.subpop.iter().filter(|&&u| u == 0).count(), 3);
        }
    }

    #[test]
    fn scenario_json_aliases() {
        let json = r#"{"I": 10, "mixture": [{"p": 1.0, "k": 20, "delta": 0.35}],
            "vc": {"sigma_w2": 1, "tau_alpha2": 0.053, "tau_gamma2": 0.013},
            "mu": 1, "phi1": 0.2, "reps": 5, "seed": 42}"#;
        let s: SimScenario<f64> = serde_json::from_str(json).unwrap();
        assert_eq!(s.n_clusters, 10);
        assert_eq!(s.master_seed, 42);
        assert_eq!(s.estimators.len(), 8);
        assert!(s.jackknife);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_odd_cluster_count() {
        let mut s = scenario();
        s.n_clusters = 7;
        assert!(s.validate().is_err());
    }
}
