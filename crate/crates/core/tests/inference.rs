mod common;

use std::f64::consts::PI;

use pbcrt::inference::{jackknife_from_replicates, t_critical};
use pbcrt::sim::{ScenarioSubpop, SizeLaw, SubpopAssignment};
use pbcrt::{
    confidence_interval, fit, jackknife_variance, model_based_variance, wald_test, EstimatorKind, FitOptions,
    ObservedTrialF64, SimScenarioF64, VarianceComponentsF64, VarianceSource,
};
use proptest::prelude::*;

/// `P(|T| < t)` for Student's t with integer degrees of freedom, by the
/// finite trigonometric series.
fn t_central_mass(t: f64, df: usize) -> f64 {
    let theta = (t / (df as f64).sqrt()).atan();
    let (s, c2) = (theta.sin(), theta.cos().powi(2));
    if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = 1.0;
            sum = 1.0;
            let mut k = 1;
            while 2 * k + 1 < df {
                term *= (2 * k) as f64 / (2 * k + 1) as f64 * c2;
                sum += term;
                k += 1;
            }
        }
        2.0 / PI * (theta + s * theta.cos() * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while 2 * k < df {
            term *= (2 * k - 1) as f64 / (2 * k) as f64 * c2;
            sum += term;
            k += 1;
        }
        s * sum
    }
}

#[test]
fn series_oracle_sanity() {
    // Cauchy: P(|T| < 1) = 1/2.
    assert!((t_central_mass(1.0, 1) - 0.5).abs() < 1e-15);
    // df = 2: P(|T| < t) = t / sqrt(2 + t²).
    assert!((t_central_mass(1.5, 2) - 1.5 / (2.0f64 + 2.25).sqrt()).abs() < 1e-15);
}

#[test]
fn critical_values_match_series() {
    for df in 1..=40 {
        for level in [0.8, 0.9, 0.95, 0.99] {
            let t = t_critical(level, df).unwrap();
            assert!((t_central_mass(t, df) - level).abs() < 1e-9, "df {df} level {level}");
        }
    }
}

#[test]
fn half_width_at_ten_clusters() {
    let ci = confidence_interval(0.0_f64, 1.0, 10, 0.95, VarianceSource::ModelBased).unwrap();
    assert!((ci.upper - 2.306004135).abs() < 1e-8);
    assert_eq!(ci.df, 8);
}

proptest! {
    #[test]
    fn wald_p_values_match_series(t in 0.01f64..8.0, n in 3usize..40) {
        let p = wald_test(t, 1.0, n).unwrap();
        prop_assert!((p - (1.0 - t_central_mass(t, n - 2))).abs() < 1e-9);
    }

    #[test]
    fn interval_excludes_zero_iff_test_rejects(d in -3.0f64..3.0, v in 0.01f64..2.0, n in 4usize..30) {
        let ci = confidence_interval(d, v, n, 0.95, VarianceSource::Jackknife).unwrap();
        let p = wald_test(d, v, n).unwrap();
        let excludes = ci.lower > 0.0 || ci.upper < 0.0;
        // Skip the measure-zero boundary where rounding decides.
        prop_assume!((p - 0.05).abs() > 1e-9);
        prop_assert_eq!(excludes, p < 0.05);
    }

    #[test]
    fn jackknife_is_shift_invariant(xs in prop::collection::vec(-10.0f64..10.0, 3..20), c in -100.0f64..100.0) {
        let a = jackknife_from_replicates(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((jackknife_from_replicates(&shifted) - a).abs() < 1e-9 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }
}

fn iid_trial(n_clusters: usize, seed: u64, index: usize) -> ObservedTrialF64 {
    let s = SimScenarioF64 {
        n_clusters,
        mixture: vec![ScenarioSubpop { p: 1.0, k: 10.0, delta: 0.3 }],
        vc: VarianceComponentsF64::independent(1.0).unwrap(),
        mu: 0.0,
        phi1: 0.1,
        reps: 1,
        master_seed: seed,
        estimators: vec![EstimatorKind::Iee],
        ci_level: 0.95,
        size_law: SizeLaw::Fixed,
        assignment: SubpopAssignment::Random,
        jackknife: true,
    };
    pbcrt::generate_trial(&s, index).unwrap()
}

#[test]
fn jackknife_matches_brute_force_refits() {
    let t = iid_trial(8, 5, 0);
    let opts = FitOptions::default();
    for kind in EstimatorKind::ALL {
        let (var, reps) = jackknife_variance(&t, kind, &opts).unwrap();
        let ids: Vec<String> = t.cell_sizes().into_keys().collect();
        let brute: Vec<f64> = ids
            .iter()
            .map(|id| {
                let kept = t.records().iter().filter(|r| &r.cluster_id != id).cloned().collect();
                fit(&ObservedTrialF64::new(kept).unwrap(), kind, &opts).unwrap().delta_hat
            })
            .collect();
        let n = brute.len() as f64;
        let mean = brute.iter().sum::<f64>() / n;
        let want = (n - 1.0) / n * brute.iter().map(|d| (d - mean).powi(2)).sum::<f64>();
        for (a, b) in reps.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12, "{kind}");
        }
        assert!((var - want).abs() < 1e-12 * want.max(1.0), "{kind}: {var} vs {want}");
        let model = model_based_variance(&t, kind, &opts).unwrap();
        assert!(model > 0.0);
    }
}

#[test]
fn jackknife_needs_three_clusters() {
    let t = iid_trial(4, 6, 0);
    let first_of_each_arm = |s: u8| t.records().iter().find(|r| r.sequence == s).unwrap().cluster_id.clone();
    let keep = [first_of_each_arm(0), first_of_each_arm(1)];
    let two = ObservedTrialF64::new(t.records().iter().filter(|r| keep.contains(&r.cluster_id)).cloned().collect()).unwrap();
    assert!(fit(&two, EstimatorKind::Iee, &FitOptions::default()).is_ok());
    assert!(jackknife_variance(&two, EstimatorKind::Iee, &FitOptions::default()).is_err());
}

#[test]
fn jackknife_tracks_model_variance_for_iid_data() {
    let opts = FitOptions::with_jackknife();
    let (mut jk, mut model) = (0.0, 0.0);
    for r in 0..40 {
        let f = fit(&iid_trial(100, 7, r), EstimatorKind::Iee, &opts).unwrap();
        jk += f.jackknife_var.unwrap();
        model += f.model_based_var;
    }
    let ratio = jk / model;
    assert!((0.8..=1.5).contains(&ratio), "ratio {ratio}");
}
