use std::time::Duration;

use ict_bench::{run_experiment_with_progress, BenchConfig, BenchError, Experiment};
use ict_services::testkit::LocalDeployment;

use super::{parse_algorithm, print_json};
use crate::error::{CliError, CliResult, Format};
use crate::BenchArgs;

fn bench_error(e: BenchError) -> CliError {
    let code = match e {
        BenchError::EndpointUnreachable(_) => "endpoint-unreachable",
        BenchError::AuthSetupFailed(_) => "auth-setup-failed",
        BenchError::RequestFailed { .. } => "request-failed",
        BenchError::InvalidConfig(_) => return CliError::usage(e.to_string()),
    };
    CliError::failure(code, e)
}

pub fn bench(args: &BenchArgs, format: Format) -> CliResult {
    let experiment: Experiment = args.experiment.parse().map_err(CliError::usage)?;
    let duration = Duration::try_from_secs_f64(args.duration)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::usage("--duration must be a positive number of seconds"))?;
    if args.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let algorithm = parse_algorithm(&args.client_alg)?;

    let local;
    let (stub, issuer) = match (&args.op_stub, &args.issuer) {
        (Some(stub), Some(issuer)) => (stub.clone(), issuer.clone()),
        _ => {
            local = LocalDeployment::start().map_err(|e| CliError::failure("startup-failed", e))?;
            eprintln!("started local stub {} and issuer {}", local.op_url, local.issuer_url);
            (local.op_url.clone(), local.issuer_url.clone())
        }
    };

    let mut config = BenchConfig::new(experiment, stub, issuer).with_runs(args.runs, duration);
    config.username = args.user.clone();
    config.password = args.password.clone();
    config.client_algorithm = algorithm;

    let report = run_experiment_with_progress(&config, |run, count| {
        eprintln!("run {}/{}: {count} requests", run + 1, config.run_count);
    })
    .map_err(bench_error)?;

    if let Some(path) = &args.out {
        std::fs::write(path, report.to_json() + "\n").map_err(|e| CliError::io(path.display(), e))?;
    }
    match format {
        Format::Json => print_json(&serde_json::to_value(&report).expect("report serializes")),
        Format::Text => {
            println!(
                "{}: {:.2} requests/min, 95% CI [{:.2}, {:.2}] over {} x {} s",
                report.experiment,
                report.mean_per_minute,
                report.ci95.0,
                report.ci95.1,
                report.run_count,
                report.run_duration_seconds
            );
            for warning in &report.warnings {
                println!("note: {warning}");
            }
        }
    }
    Ok(())
}
