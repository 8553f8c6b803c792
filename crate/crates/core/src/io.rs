//! Trial CSV files, scenario documents and report emission.
//!
//! The trial format is long form with header
//! `cluster_id,period,sequence,outcome`; every row is one participant.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::model::{ObservedTrial, Record};
use crate::sim::{SimReport, SimScenario};
use crate::{Error, Result, Scalar};

pub const TRIAL_HEADER: [&str; 4] = ["cluster_id", "period", "sequence", "outcome"];

pub fn parse_trial_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<ObservedTrial<T>> {
    parse_trial_reader(File::open(path)?)
}

pub fn parse_trial_reader<T: Scalar>(reader: impl Read) -> Result<ObservedTrial<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 4];
    for (slot, name) in col.iter_mut().zip(TRIAL_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column '{name}'") })?;
    }

    let mut records = Vec::new();
    let mut first_seen: HashMap<String, (u8, usize)> = HashMap::new();
    let mut last_line = 1;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        last_line = line;
        let field = |i: usize| row.get(col[i]).unwrap_or("");
        let binary = |i: usize| -> Result<u8> {
            match field(i) {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Parse {
                    line,
                    message: format!("{} must be 0 or 1, got '{other}'", TRIAL_HEADER[i]),
                }),
            }
        };
        let id = field(0);
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty cluster_id".into() });
        }
        let period = binary(1)?;
        let sequence = binary(2)?;
        let outcome = field(3)
            .parse::<f64>()
            .ok()
            .filter(|y| y.is_finite())
            .ok_or_else(|| Error::Parse { line, message: format!("invalid outcome '{}'", field(3)) })?;
        match first_seen.get(id) {
            Some(&(s, at)) if s != sequence => {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "cluster {id} has sequence {sequence} here but sequence {s} on line {at}"
                    ),
                })
            }
            Some(_) => {}
            None => {
                first_seen.insert(id.to_owned(), (sequence, line));
            }
        }
        records.push(Record::new(id, period, sequence, T::lit(outcome)));
    }
    if records.is_empty() {
        return Err(Error::Parse { line: last_line, message: "no records".into() });
    }
    ObservedTrial::new(records).map_err(|e| match e {
        Error::InvalidInput(message) => Error::Parse { line: last_line, message },
        other => other,
    })
}

pub fn write_trial_csv<T: Scalar>(trial: &ObservedTrial<T>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIAL_HEADER)?;
    for r in trial.records() {
        w.write_record([
            r.cluster_id.as_str(),
            &r.period.to_string(),
            &r.sequence.to_string(),
            &r.outcome.to_f64_lossy().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenario<T: Scalar + serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<SimScenario<T>> {
    let scenario: SimScenario<T> = serde_json::from_reader(File::open(path)?)?;
    scenario.validate()?;
    Ok(scenario)
}

pub const REPORT_HEADER: [&str; 12] = [
    "estimator",
    "weighting",
    "target",
    "rel_bias_pct",
    "rmse",
    "mean_model_var",
    "mean_jk_var",
    "mc_var",
    "coverage_model",
    "coverage_jk",
    "power_model",
    "power_jk",
];

/// One CSV row per estimator and target. Jackknife columns are empty when
/// the study ran without the jackknife.
pub fn write_report_csv<T: Scalar>(report: &SimReport<T>, writer: impl Write) -> Result<()> {
    let num = |v: T| v.to_f64_lossy().to_string();
    let opt = |v: Option<T>| v.map(num).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.estimator.to_string(),
            r.weighting.clone(),
            r.target.clone(),
            num(r.rel_bias_pct),
            num(r.rmse),
            num(r.mean_model_var),
            opt(r.mean_jk_var),
            num(r.mc_var),
            num(r.coverage_model),
            opt(r.coverage_jk),
            num(r.power_model),
            opt(r.power_jk),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The full report, including every replicate's estimates.
pub fn write_report_json<T: Scalar + Serialize>(report: &SimReport<T>, writer: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(writer, report)?;
    Ok(())
}

const JIAH_SIZES: &str = include_str!("../fixtures/jiah_cluster_period_sizes.csv");

/// Cluster-period sizes `(K_i0, K_i1)` of a two-period HIV-testing trial,
/// used as an unequal-size ingestion fixture.
pub fn jiah_cluster_period_sizes() -> Vec<(usize, usize)> {
    JIAH_SIZES
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',').map(|v| v.trim().parse::<usize>().expect("fixture sizes are integers"));
            (it.next().expect("baseline size"), it.next().expect("post size"))
        })
        .collect()
}

/// A trial with the fixture's sizes, alternating sequences and outcomes
/// from `outcome(cluster, period, participant)`.
pub fn jiah_fixture_trial<T: Scalar>(outcome: impl Fn(usize, u8, usize) -> T) -> Result<ObservedTrial<T>> {
    let sizes = jiah_cluster_period_sizes();
    let mut records = Vec::new();
    for (i, &(k0, k1)) in sizes.iter().enumerate() {
        let id = format!("jiah{:02}", i + 1);
        let s = (i % 2) as u8;
        for (j, k) in [(0u8, k0), (1u8, k1)] {
            for m in 0..k {
                records.push(Record::new(id.clone(), j, s, outcome(i, j, m)));
            }
        }
    }
    ObservedTrial::new(records)
}
