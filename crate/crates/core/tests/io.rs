mod common;

use std::io::Write as _;

use pbcrt::io::{jiah_fixture_trial, parse_trial_reader, read_scenario, write_report_csv, REPORT_HEADER};
use pbcrt::sim::{SizeLaw, SubpopAssignment};
use pbcrt::{
    fit, parse_trial_csv, run_study, write_trial_csv, Error, EstimatorKind, FitOptions, ObservedTrialF64,
    SimScenarioF64,
};

const MINIMAL: &str = "cluster_id,period,sequence,outcome\na,0,0,1.0\na,1,0,1.5\nb,0,1,2.0\nb,1,1,3.0\n";

fn round_trip(t: &ObservedTrialF64) -> ObservedTrialF64 {
    let mut buf = Vec::new();
    write_trial_csv(t, &mut buf).unwrap();
    parse_trial_reader(buf.as_slice()).unwrap()
}

#[test]
fn minimal_file_round_trips() {
    let t: ObservedTrialF64 = parse_trial_reader(MINIMAL.as_bytes()).unwrap();
    assert_eq!(t.records().len(), 4);
    let mut buf = Vec::new();
    write_trial_csv(&t, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), MINIMAL.replace(".0,", ",").replace(".0\n", "\n"));
}

#[test]
fn reads_from_disk_with_reordered_columns() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(f, "outcome,sequence,cluster_id,period,site\n2.5,1,x,0,n\n3.5,1,x,1,n\n1,0,y,0,s\n0.5,0,y,1,s\n").unwrap();
    let t: ObservedTrialF64 = parse_trial_csv(f.path()).unwrap();
    assert_eq!(t.cell_sizes()["x"], (1, 1));
    assert_eq!(t.records()[0].outcome, 2.5);
}

#[test]
fn mixed_sequence_names_the_cluster() {
    let csv = "cluster_id,period,sequence,outcome\nward7,0,0,1\nb,0,1,1\nward7,1,1,2\n";
    let err = parse_trial_reader::<f64>(csv.as_bytes()).unwrap_err();
    match &err {
        Error::Parse { line, message } => {
            assert_eq!(*line, 4);
            assert!(message.contains("ward7"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.is_validation());
}

#[test]
fn malformed_fields_report_their_line() {
    for (body, line) in [("a,0,0,x\n", 2), ("a,0,0,1\na,1,2,1\n", 3), ("a,0,0,1\n,1,0,1\n", 3), ("a,0,0,1\na,0,0,inf\n", 3)] {
        let csv = format!("cluster_id,period,sequence,outcome\n{body}");
        match parse_trial_reader::<f64>(csv.as_bytes()) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body:?}"),
            other => panic!("{body:?}: unexpected {other:?}"),
        }
    }
}

#[test]
fn header_only_is_rejected() {
    assert!(parse_trial_reader::<f64>("cluster_id,period,sequence,outcome\n".as_bytes()).is_err());
    let err = parse_trial_reader::<f64>("cluster,period,sequence,outcome\na,0,0,1\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("cluster_id"));
}

#[test]
fn fixture_sizes_survive_the_csv() {
    let t = jiah_fixture_trial(|i, j, m| i as f64 + 0.5 * j as f64 + 0.01 * m as f64).unwrap();
    let back = round_trip(&t);
    let sizes = back.cell_sizes();
    assert_eq!(sizes.len(), 28);
    assert_eq!(sizes["jiah01"], (48, 70));
    assert_eq!(sizes, t.cell_sizes());
    // Unequal periods fit for the unweighted kinds.
    for kind in [EstimatorKind::Iee, EstimatorKind::Fe, EstimatorKind::Eme, EstimatorKind::Neme] {
        assert!(fit(&back, kind, &FitOptions::default()).is_ok(), "{kind}");
    }
}

#[test]
fn generated_trials_round_trip_exactly() {
    let mut rng = common::rng(31);
    for _ in 0..10 {
        let t = common::random_trial(&mut rng, false, false);
        let back = round_trip(&t);
        assert_eq!(back.records().len(), t.records().len());
        for (a, b) in t.records().iter().zip(back.records()) {
            assert_eq!((&a.cluster_id, a.period, a.sequence), (&b.cluster_id, b.period, b.sequence));
            assert!((a.outcome - b.outcome).abs() <= 1e-12 * a.outcome.abs().max(1.0));
        }
    }
}

fn scenario_json(extra: &str) -> String {
    format!(
        r#"{{"I": 6, "mixture": [{{"p": 0.5, "k": 8, "delta": 0.2}}, {{"p": 0.5, "k": 30, "delta": 0.5}}],
        "vc": {{"sigma_w2": 1.0, "tau_alpha2": 0.05, "tau_gamma2": 0.01}},
        "mu": 1.0, "phi1": 0.2, "reps": 4, "seed": 12{extra}}}"#
    )
}

#[test]
fn scenario_defaults_and_aliases() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(scenario_json("").as_bytes()).unwrap();
    let s: SimScenarioF64 = read_scenario(f.path()).unwrap();
    assert_eq!((s.n_clusters, s.master_seed, s.reps), (6, 12, 4));
    assert_eq!(s.estimators, EstimatorKind::ALL.to_vec());
    assert_eq!(s.ci_level, 0.95);
    assert_eq!((s.size_law, s.assignment), (SizeLaw::Poisson, SubpopAssignment::Random));

    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(scenario_json(r#", "estimators": ["IEE", "FEW"], "size_law": "fixed", "jackknife": false"#).as_bytes())
        .unwrap();
    let s: SimScenarioF64 = read_scenario(f.path()).unwrap();
    assert_eq!(s.estimators, vec![EstimatorKind::Iee, EstimatorKind::Few]);
    assert_eq!(s.size_law, SizeLaw::Fixed);
    assert!(!s.jackknife);
}

#[test]
fn invalid_scenarios_fail_validation() {
    for bad in [
        scenario_json("").replace("\"I\": 6", "\"I\": 5"),
        scenario_json("").replace("\"p\": 0.5, \"k\": 8", "\"p\": 0.6, \"k\": 8"),
        scenario_json("").replace("\"tau_gamma2\": 0.01", "\"tau_gamma2\": -0.01"),
        scenario_json(r#", "ci_level": 1.5"#),
        "{".to_string(),
    ] {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bad.as_bytes()).unwrap();
        let err = read_scenario::<f64>(f.path()).unwrap_err();
        assert!(err.is_validation(), "{bad}: {err}");
    }
}

#[test]
fn report_csv_has_the_documented_columns() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(scenario_json(r#", "estimators": ["IEE", "EMEW"]"#).as_bytes()).unwrap();
    let s: SimScenarioF64 = read_scenario(f.path()).unwrap();
    let report = run_study(&s).unwrap();
    let mut buf = Vec::new();
    write_report_csv(&report, &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(header, REPORT_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!((&rows[0][0], &rows[0][1], &rows[0][2]), ("IEE", "unweighted", "pATE"));
    assert_eq!((&rows[3][0], &rows[3][1], &rows[3][2]), ("EMEW", "weighted", "cATE"));
    for r in &rows {
        assert!(r[3].parse::<f64>().is_ok());
        assert!(r[9].parse::<f64>().unwrap() <= 1.0);
    }
}
