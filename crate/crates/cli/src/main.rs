mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use liquidsim_core::bounds::{self, BoundReport, EpsilonSet, SystemParams};
use liquidsim_core::sim::{self, report, ExperimentReport};
use serde::Serialize;

use crate::config::ScenarioFile;

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

/// Overheads printed by `bounds --sweep`.
const SWEEP_BETAS: [f64; 8] = [0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];

#[derive(Parser)]
#[command(name = "liquidsim", version, about = "Liquid repair simulator and bound calculator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the trials of a scenario file and write CSV and JSON-lines reports.
    Run(RunArgs),
    /// Evaluate the capacity and read-rate bounds.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.trials`.
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// Print the resolved scenario file and exit.
    #[arg(long)]
    dump_config: bool,
    /// Corrupt the cluster after the first failure of every trial.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long = "N")]
    nodes: u64,
    #[arg(long, value_parser = parse_bits)]
    clen: u128,
    #[arg(long, conflicts_with = "xlen", required_unless_present_any = ["xlen", "sweep"])]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_bits)]
    xlen: Option<u128>,
    #[arg(long, value_parser = parse_bits, default_value = "0")]
    vlen: u128,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = EpsilonSet::default().eps_c)]
    eps_c: f64,
    #[arg(long, default_value_t = EpsilonSet::default().eps_d)]
    eps_d: f64,
    #[arg(long, default_value_t = EpsilonSet::default().eps)]
    eps: f64,
    /// Tabulate the asymptotic ratio against 1/(2 beta) for shrinking beta.
    #[arg(long, conflicts_with_all = ["beta", "xlen"])]
    sweep: bool,
}

/// Non-negative integer, optionally in scientific notation (`1e16`, `2.5e3`).
fn parse_bits(s: &str) -> Result<u128, String> {
    let s = s.replace('_', "");
    let bad = || format!("`{s}` is not a non-negative integer");
    let (mant, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.trim_start_matches('+').parse::<u32>().map_err(|_| bad())?),
        None => (s.as_str(), 0),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    let frac = frac.trim_end_matches('0');
    if int.is_empty() && frac.is_empty() || frac.len() as u32 > exp {
        return Err(bad());
    }
    let digits: u128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    10u128
        .checked_pow(exp - frac.len() as u32)
        .and_then(|p| digits.checked_mul(p))
        .ok_or_else(|| format!("`{s}` does not fit in 128 bits"))
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Bounds(args) => cmd_bounds(args),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let path = args.scenario.display().to_string();
    let mut file = match ScenarioFile::load(&path) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    if let Some(seed) = args.seed {
        file.run.seed = seed;
    }
    if let Some(trials) = args.trials {
        file.run.trials = trials;
    }
    if args.dump_config {
        print!("{}", file.to_toml());
        return ExitCode::SUCCESS;
    }
    let mut sc = file.scenario();
    sc.inject_fault = args.inject_fault;
    if let Err(e) = sc.validate() {
        return fail(EXIT_INVALID, format!("{path}: {e}"));
    }
    let rep = match sim::run_experiment(&sc, args.jobs.map(usize::from)) {
        Ok(r) => r,
        Err(e) if e.is_violation() => return fail(EXIT_VIOLATION, e),
        Err(e) => return fail(EXIT_INVALID, e),
    };
    if let Err(e) = write_outputs(&args.out, &file, &rep) {
        return fail(EXIT_IO, e);
    }
    let a = &rep.aggregate;
    println!(
        "{} trials, {} unrecoverable, {:.6e} bits read per failure, peak/ceiling {:.4}",
        a.trials, a.unrecoverable, a.mean_read_per_failure, rep.comparison.peak_over_ceiling
    );
    ExitCode::SUCCESS
}

fn with_path(p: &Path) -> impl Fn(std::io::Error) -> std::io::Error + '_ {
    move |e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))
}

fn write_outputs(out: &Path, file: &ScenarioFile, rep: &ExperimentReport) -> std::io::Result<()> {
    fs::create_dir_all(out).map_err(with_path(out))?;
    let csv_path = out.join(&file.output.csv);
    fs::write(&csv_path, report::trials_csv(&rep.trials)).map_err(with_path(&csv_path))?;
    let summary_path = out.join(&file.output.summary);
    let f = fs::File::create(&summary_path).map_err(with_path(&summary_path))?;
    report::write_summary_jsonl(std::io::BufWriter::new(f), rep).map_err(with_path(&summary_path))?;
    for t in &rep.trials {
        if let Some(trace) = &t.trace {
            let p = out.join(format!("trace-{}.csv", t.trial));
            fs::write(&p, trace).map_err(with_path(&p))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    beta: f64,
    beta_prime: f64,
    f: u128,
    asymptotic_ratio: f64,
    inverse_two_beta: f64,
    /// `asymptotic_ratio * 2 beta'`, which tends to one.
    normalized: f64,
}

fn cmd_bounds(args: BoundsArgs) -> ExitCode {
    let eps = match EpsilonSet::new(args.eps_c, args.eps_d, args.eps) {
        Ok(e) => e,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    let report = |beta: Option<f64>| -> Result<BoundReport, bounds::BoundsError> {
        let sys = match (beta, args.xlen) {
            (Some(b), _) => SystemParams::from_beta(args.nodes, args.clen, b, args.vlen, args.lambda)?,
            (None, Some(x)) => SystemParams::new(args.nodes, args.clen, x, args.vlen, args.lambda)?,
            (None, None) => unreachable!("clap requires beta or xlen"),
        };
        bounds::bound_report(&sys, &eps)
    };
    if args.sweep {
        let mut rows = Vec::new();
        for beta in SWEEP_BETAS {
            match report(Some(beta)) {
                Ok(r) => rows.push(SweepRow {
                    beta,
                    beta_prime: r.phase.beta_prime,
                    f: r.phase.f,
                    asymptotic_ratio: r.asymptotic_ratio,
                    inverse_two_beta: 1.0 / (2.0 * beta),
                    normalized: r.asymptotic_ratio * 2.0 * r.phase.beta_prime,
                }),
                Err(e) => return fail(EXIT_INVALID, format!("beta = {beta}: {e}")),
            }
        }
        println!("{:>8} {:>10} {:>10} {:>14} {:>12} {:>10}", "beta", "beta'", "F", "ratio", "1/(2beta)", "ratio*2b'");
        for r in &rows {
            println!(
                "{:>8} {:>10.6} {:>10} {:>14.6} {:>12.3} {:>10.6}",
                r.beta, r.beta_prime, r.f, r.asymptotic_ratio, r.inverse_two_beta, r.normalized
            );
        }
        println!("{}", serde_json::json!({ "sweep": rows }));
        return ExitCode::SUCCESS;
    }
    let r = match report(args.beta) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    print_table(&r);
    println!("{}", serde_json::to_string(&r).expect("bound reports serialize"));
    ExitCode::SUCCESS
}

fn print_table(r: &BoundReport) {
    let bound = |b: bounds::Bound| format!("{:.6e}{}", b.value, if b.vacuous { " (vacuous)" } else { "" });
    let rows = [
        ("N", r.system.nodes.to_string()),
        ("clen", r.system.clen.to_string()),
        ("xlen", r.system.xlen.to_string()),
        ("vlen", r.system.vlen.to_string()),
        ("lambda", r.system.lambda.to_string()),
        ("beta", format!("{:.6}", r.beta)),
        ("olen", r.phase.olen.to_string()),
        ("F", r.phase.f.to_string()),
        ("beta'", format!("{:.6}", r.phase.beta_prime)),
        ("M = 2F", r.phase.m.to_string()),
        ("F'", format!("{:.6}", r.phase.f_prime)),
        ("eps_c / eps_d / eps", format!("{} / {} / {}", r.eps.eps_c, r.eps.eps_d, r.eps.eps)),
        ("delta_c", bound(r.delta_core)),
        ("delta_d", bound(r.delta_distinct)),
        ("delta (uniform)", bound(r.delta_uniform)),
        ("delta (poisson)", bound(r.delta_poisson)),
        ("2^-clen", format!("{:.6e}", r.two_pow_neg_clen)),
        ("core read/failure", format!("{:.6e}", r.core_rate_per_failure)),
        ("uniform read/failure", format!("{:.6e}", r.uniform_rate_per_failure)),
        ("poisson read rate", format!("{:.6e}", r.poisson_rate)),
        ("rate window", format!("{:.6e}", r.delta_window)),
        ("asymptotic ratio", format!("{:.6}", r.asymptotic_ratio)),
        ("erasure rate", format!("{:.6e}", r.erasure_rate)),
        ("capacity", format!("{:.6e}", r.capacity)),
    ];
    for (name, value) in rows {
        println!("{name:<22} {value}");
    }
}

#[cfg(test)]
mod tests {
    use super::parse_bits;

    #[test]
    fn bits_notation() {
        assert_eq!(parse_bits("1e16"), Ok(10u128.pow(16)));
        assert_eq!(parse_bits("2.5e3"), Ok(2500));
        assert_eq!(parse_bits("1_000"), Ok(1000));
        assert_eq!(parse_bits("900000000000000000000"), Ok(9 * 10u128.pow(20)));
        assert_eq!(parse_bits("1.50E+2"), Ok(150));
        for bad in ["1.5", "-3", "e5", "1e", "abc", "1e40"] {
            assert!(parse_bits(bad).is_err(), "{bad}");
        }
    }
}
