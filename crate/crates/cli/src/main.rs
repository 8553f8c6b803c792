mod number;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pbcrt::io::{read_scenario, write_report_csv, write_report_json};
use pbcrt::oracle::weight_curve;
use pbcrt::{
    confidence_interval, fit, optimal_icc, optimal_sampling_prob, parse_trial_csv, plim, run_study, true_cate,
    true_pate, wald_test, Error, EstimatorKind, FitOptions, ObservedTrialF64, PopulationMixtureF64, SimScenarioF64,
    VarianceComponentsF64, VarianceSource, WeightScheme,
};
use serde_json::json;

use number::sig6;

#[derive(Parser)]
#[command(name = "pbcrt", version, about = "Parallel cluster randomized trials with a baseline period")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study described by a JSON scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit treatment-effect estimators to a trial CSV.
    Fit {
        csv: PathBuf,
        /// An estimator name such as EMEW, or "all".
        #[arg(long, default_value = "all")]
        estimator: String,
        #[arg(long, value_enum, default_value_t = VarianceArg::Both)]
        variance: VarianceArg,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Write the results as JSON to this path ("-" for standard output).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Estimands and probability limits of all estimators for a two-type mixture.
    Limits {
        #[command(flatten)]
        mix: MixtureArgs,
        #[arg(long, default_value_t = 0.2)]
        delta1: f64,
        #[arg(long, default_value_t = 0.5)]
        delta2: f64,
        #[arg(long = "sigma-w2", default_value_t = 1.0)]
        sigma_w2: f64,
        #[arg(long = "tau-alpha2", default_value_t = 0.053)]
        tau_alpha2: f64,
        #[arg(long = "tau-gamma2", default_value_t = 0.013)]
        tau_gamma2: f64,
        /// Treat k1 and k2 as zero-truncated Poisson means instead of fixed sizes.
        #[arg(long)]
        poisson: bool,
    },
    /// Estimand weights of a weighted mixed model along a grid of ICC values.
    Weights {
        #[arg(long, value_enum, default_value_t = SchemeArg::Emew)]
        scheme: SchemeArg,
        #[command(flatten)]
        mix: MixtureArgs,
        /// Ratio of between-period to within-period ICC for the nested scheme.
        #[arg(long, default_value_t = 0.5)]
        cac: f64,
        /// Grid points over [0, 1).
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct MixtureArgs {
    #[arg(long, default_value_t = 0.5)]
    p1: f64,
    #[arg(long, default_value_t = 20.0)]
    k1: f64,
    #[arg(long, default_value_t = 100.0)]
    k2: f64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum VarianceArg {
    Model,
    Jackknife,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Emew,
    Nemew,
}

/// Failure of a subcommand, mapped to the process exit code.
enum Failure {
    Validation(String),
    Estimation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Estimation(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Simulate { config, seed, out_dir } => simulate(config, seed, out_dir),
        Command::Fit { csv, estimator, variance, level, json } => fit_cmd(csv, &estimator, variance, level, json),
        Command::Limits { mix, delta1, delta2, sigma_w2, tau_alpha2, tau_gamma2, poisson } => {
            limits(&mix, delta1, delta2, (sigma_w2, tau_alpha2, tau_gamma2), poisson)
        }
        Command::Weights { scheme, mix, cac, steps, out } => weights(scheme, &mix, cac, steps, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Estimation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Prefixes input errors with the offending file.
fn in_file(path: &Path, e: Error) -> Failure {
    match Failure::from(e) {
        Failure::Validation(msg) => Failure::Validation(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), sig6)
}

fn simulate(config: PathBuf, seed: Option<u64>, out_dir: PathBuf) -> CmdResult {
    let mut scenario: SimScenarioF64 = read_scenario(&config).map_err(|e| in_file(&config, e))?;
    if let Some(seed) = seed {
        scenario.master_seed = seed;
    }
    let report = run_study(&scenario)?;
    fs::create_dir_all(&out_dir)?;
    write_report_csv(&report, BufWriter::new(File::create(out_dir.join("report.csv"))?))?;
    write_report_json(&report, BufWriter::new(File::create(out_dir.join("report.json"))?))?;

    let mut out = io::stdout().lock();
    writeln!(out, "pATE {}  cATE {}  reps {}", sig6(report.pate), sig6(report.cate), scenario.reps)?;
    writeln!(
        out,
        "{:<6} {:<6} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}",
        "kind", "target", "rel_bias_%", "rmse", "model_var", "mc_var", "cov_model", "cov_jk"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{:<6} {:<6} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}",
            r.estimator.name(),
            r.target,
            sig6(r.rel_bias_pct),
            sig6(r.rmse),
            sig6(r.mean_model_var),
            sig6(r.mc_var),
            sig6(r.coverage_model),
            opt6(r.coverage_jk)
        )?;
    }
    let failed: usize = report.rows.iter().filter(|r| r.target == "pATE").map(|r| r.n_failed).sum();
    if failed > 0 {
        eprintln!("warning: {failed} fits failed and were left out of the summaries");
    }
    writeln!(out, "wrote {} and {}", out_dir.join("report.csv").display(), out_dir.join("report.json").display())?;
    Ok(())
}

fn parse_kinds(estimator: &str) -> Result<Vec<EstimatorKind>, Failure> {
    if estimator.eq_ignore_ascii_case("all") {
        return Ok(EstimatorKind::ALL.to_vec());
    }
    estimator
        .split(',')
        .map(|s| s.parse::<EstimatorKind>().map_err(Failure::from))
        .collect()
}

fn fit_cmd(csv: PathBuf, estimator: &str, variance: VarianceArg, level: f64, json_out: Option<PathBuf>) -> CmdResult {
    if !(level > 0.0 && level < 1.0) {
        return Err(Failure::Validation(format!("level must lie in (0, 1), got {level}")));
    }
    let kinds = parse_kinds(estimator)?;
    let trial: ObservedTrialF64 = parse_trial_csv(&csv).map_err(|e| in_file(&csv, e))?;
    let opts = FitOptions { jackknife: variance != VarianceArg::Model, ..FitOptions::default() };
    let sources: &[VarianceSource] = match variance {
        VarianceArg::Model => &[VarianceSource::ModelBased],
        VarianceArg::Jackknife => &[VarianceSource::Jackknife],
        VarianceArg::Both => &[VarianceSource::ModelBased, VarianceSource::Jackknife],
    };

    let mut out = io::stdout().lock();
    let to_stdout_json = json_out.as_deref().is_some_and(|p| p.as_os_str() == "-");
    if !to_stdout_json {
        writeln!(
            out,
            "{:<6} {:>12} {:<9} {:>12} {:>12} {:>12} {:>12}",
            "kind", "delta_hat", "variance", "se", "lower", "upper", "p_value"
        )?;
    }
    let mut results = Vec::new();
    let mut last_err = None;
    for kind in kinds {
        let f = match fit(&trial, kind, &opts) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{kind}: {e}");
                results.push(json!({ "estimator": kind.name(), "error": e.to_string() }));
                last_err = Some(e);
                continue;
            }
        };
        let mut inference = Vec::new();
        for &source in sources {
            let var = match source {
                VarianceSource::ModelBased => f.model_based_var,
                VarianceSource::Jackknife => f.jackknife_var.ok_or_else(|| {
                    Failure::Estimation(format!("{kind}: jackknife variance unavailable"))
                })?,
            };
            let ci = confidence_interval(f.delta_hat, var, f.n_clusters, level, source)?;
            let p = wald_test(f.delta_hat, var, f.n_clusters)?;
            let label = match source {
                VarianceSource::ModelBased => "model",
                VarianceSource::Jackknife => "jackknife",
            };
            if !to_stdout_json {
                writeln!(
                    out,
                    "{:<6} {:>12} {:<9} {:>12} {:>12} {:>12} {:>12}",
                    kind.name(),
                    sig6(f.delta_hat),
                    label,
                    sig6(var.sqrt()),
                    sig6(ci.lower),
                    sig6(ci.upper),
                    sig6(p)
                )?;
            }
            inference.push(json!({
                "variance": label,
                "var": var,
                "se": var.sqrt(),
                "lower": ci.lower,
                "upper": ci.upper,
                "level": level,
                "df": ci.df,
                "p_value": p,
            }));
        }
        results.push(json!({
            "estimator": kind.name(),
            "delta_hat": f.delta_hat,
            "theta_hat": f.theta_hat,
            "vc_hat": f.vc_hat,
            "n_clusters": f.n_clusters,
            "converged": f.converged,
            "inference": inference,
        }));
    }

    let doc = json!({ "input": csv.display().to_string(), "results": results });
    match json_out {
        Some(p) if p.as_os_str() == "-" => writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(Error::from)?)?,
        Some(p) => serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &doc).map_err(Error::from)?,
        None => {}
    }
    let any_ok = results.iter().any(|r| r.get("error").is_none());
    match last_err {
        Some(e) if !any_ok => Err(e.into()),
        _ => Ok(()),
    }
}

fn limits(mix: &MixtureArgs, delta1: f64, delta2: f64, vc: (f64, f64, f64), poisson: bool) -> CmdResult {
    let vc = VarianceComponentsF64::new(vc.0, vc.1, vc.2)?;
    let population = if poisson {
        PopulationMixtureF64::zero_truncated_poisson(&[(mix.p1, mix.k1, delta1), (1.0 - mix.p1, mix.k2, delta2)])?
    } else {
        PopulationMixtureF64::two_point(mix.p1, mix.k1, mix.k2, delta1, delta2)?
    };
    let mut out = io::stdout().lock();
    writeln!(out, "pATE  {}", sig6(true_pate(&population)))?;
    writeln!(out, "cATE  {}", sig6(true_cate(&population)))?;
    for kind in EstimatorKind::ALL {
        let value = plim(kind, &population, Some(&vc))?;
        writeln!(out, "{:<5} {}", kind.name(), sig6(value))?;
    }
    Ok(())
}

fn weights(scheme: SchemeArg, mix: &MixtureArgs, cac: f64, steps: usize, out_path: Option<PathBuf>) -> CmdResult {
    if steps == 0 {
        return Err(Failure::Validation("steps must be at least 1".into()));
    }
    let scheme = match scheme {
        SchemeArg::Emew => WeightScheme::Emew,
        SchemeArg::Nemew => WeightScheme::Nemew,
    };
    let rhos: Vec<f64> = (0..steps).map(|i| i as f64 / steps as f64).collect();
    let curve = weight_curve(scheme, mix.k1, mix.k2, mix.p1, cac, &rhos)?;

    let sink: Box<dyn Write> = match &out_path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["rho", "lambda1", "lambda2"]).map_err(csv_err)?;
    for pt in &curve {
        w.write_record([pt.rho.to_string(), pt.lambda1.to_string(), pt.lambda2.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    drop(w);

    // The closed-form maximisers belong to the exchangeable scheme.
    let rho = optimal_icc(mix.k1, mix.k2);
    let p = optimal_sampling_prob(mix.k1, mix.k2, rho);
    let summary = format!("optimal rho {}\noptimal P(u=1) {}", sig6(rho), sig6(p));
    if out_path.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Validation(e.to_string())
}
