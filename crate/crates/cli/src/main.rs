//! Command-line entry point: network inspection, power flow solves,
//! feasibility certification, cross-section scans, and the sampling-oracle
//! selftest.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal invariant breach.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pfcert_core::basis::{build_model_at_base, ModelOptions};
use pfcert_core::matpower::BusKind;
use pfcert_core::powerflow::check_operational;
use pfcert_core::restriction::{certify, CertifyOptions};
use pfcert_core::scan::{cross_section, emit_csv, emit_svg, fmt_sig9, ScanSpec, SvgStyle, Truth};
use pfcert_core::selftest::run_selftest;
use pfcert_core::{
    build_admittance, flat_start, nr_solve, parse_case_path, ControlVector, Error, IndexMaps,
    NetworkCase,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pfcert",
    about = "Certify AC power flow feasibility through convex inner approximations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a summary of a case file
    Info(CaseArg),
    /// Solve the power flow and report the operational constraint margins
    Pf(PfArgs),
    /// Build the restriction model at the solved base point and certify an
    /// injection vector, printing the certificate as JSON
    Certify(CertifyArgs),
    /// Grid two injections around the base point and classify every cell
    Scan(ScanArgs),
    /// Run the sampling-oracle suites against a case
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct CaseArg {
    /// MATPOWER case file
    case: PathBuf,
}

#[derive(Args)]
struct PfArgs {
    case: PathBuf,
    /// Scale every non-slack active injection by this factor
    #[arg(long, default_value_t = 1.0)]
    scale_p: f64,
}

#[derive(Args)]
struct CertifyArgs {
    case: PathBuf,
    /// Injection perturbation BUS=DELTA in pu, repeatable
    #[arg(long = "dp", value_name = "BUS=DELTA")]
    dp: Vec<String>,
}

#[derive(Args)]
struct ScanArgs {
    case: PathBuf,
    #[arg(long)]
    bus1: usize,
    #[arg(long)]
    bus2: usize,
    /// Injection offsets LO:HI in pu applied to both axes
    #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
    range: String,
    /// Override for the second axis
    #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
    range2: Option<String>,
    #[arg(long)]
    res: usize,
    /// Rebuild PQ voltage limits as this fractional band around the solved
    /// base magnitudes
    #[arg(long)]
    vlimit: Option<f64>,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also classify each cell with the Newton-Raphson ground truth
    #[arg(long)]
    truth: bool,
}

#[derive(Args)]
struct SelftestArgs {
    case: PathBuf,
    /// Seed for the sampling oracles (printed for reproducibility)
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Application-level failures mapped to exit codes.
enum Failure {
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Soundness { .. } => Failure::Internal(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Info(args) => info(&args),
        Command::Pf(args) => pf(&args),
        Command::Certify(args) => run_certify(&args),
        Command::Scan(args) => scan(&args),
        Command::Selftest(args) => selftest(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal invariant breach: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load(path: &Path) -> Result<NetworkCase, Failure> {
    parse_case_path(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn info(args: &CaseArg) -> Result<(), Failure> {
    let case = load(&args.case)?;
    let idx = IndexMaps::new(&case);
    let total_p: f64 = case.buses.iter().map(|b| b.p_demand).sum();
    let total_q: f64 = case.buses.iter().map(|b| b.q_demand).sum();
    let gen_p: f64 = case.gens.iter().map(|g| g.p_gen).sum();
    println!("case:      {}", case.name);
    println!("base MVA:  {}", fmt_sig9(case.base_mva));
    println!(
        "buses:     {} (slack {}, {} pv, {} pq)",
        case.n_bus(),
        case.buses[idx.slack].id,
        idx.pv.len(),
        idx.pq.len()
    );
    println!("branches:  {}", case.branches.len());
    println!("gens:      {}", case.gens.len());
    println!(
        "load:      {} + j{} pu",
        fmt_sig9(total_p),
        fmt_sig9(total_q)
    );
    println!("dispatch:  {} pu", fmt_sig9(gen_p));
    Ok(())
}

fn pf(args: &PfArgs) -> Result<(), Failure> {
    let case = load(&args.case)?;
    let adm = build_admittance(&case)?;
    let idx = IndexMaps::new(&case);
    let mut u = ControlVector::base_point(&case, &idx);
    u.p_ns *= args.scale_p;
    let x0 = flat_start(&idx, &u);
    let state = nr_solve(&adm, &idx, &u, &x0, 1e-10, 50).map_err(|d| {
        Failure::Data(format!(
            "power flow diverged ({:?} after {} iterations, mismatch {})",
            d.reason,
            d.iterations,
            fmt_sig9(d.mismatch_norm)
        ))
    })?;
    println!("bus\ttype\tvm [pu]\tva [rad]");
    for (i, bus) in case.buses.iter().enumerate() {
        let kind = match bus.kind {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        };
        println!(
            "{}\t{}\t{}\t{}",
            bus.id,
            kind,
            fmt_sig9(state.vm[i]),
            fmt_sig9(state.va[i])
        );
    }
    let report = check_operational(&case, &idx, &state, &adm);
    let worst = |margins: &[(usize, f64)]| {
        margins
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    println!(
        "margins: pv reactive {}, pq voltage {}, angle {}",
        if report.q_margin.is_empty() {
            "n/a".to_string()
        } else {
            fmt_sig9(worst(&report.q_margin))
        },
        if report.v_margin.is_empty() {
            "n/a".to_string()
        } else {
            fmt_sig9(worst(&report.v_margin))
        },
        fmt_sig9(worst(&report.ang_margin)),
    );
    if let Some(m) = report.slack_q_margin {
        println!("slack reactive margin (reported only): {}", fmt_sig9(m));
    }
    println!(
        "operational: {}",
        if report.feasible {
            "feasible"
        } else {
            "violated"
        }
    );
    Ok(())
}

fn parse_dp(case: &NetworkCase, idx: &IndexMaps, spec: &str) -> Result<(usize, f64), Failure> {
    let (bus, delta) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Data(format!("--dp expects BUS=DELTA, got '{spec}'")))?;
    let bus: usize = bus
        .trim()
        .parse()
        .map_err(|_| Failure::Data(format!("--dp bus '{bus}' is not an integer")))?;
    let delta: f64 = delta
        .trim()
        .parse()
        .map_err(|_| Failure::Data(format!("--dp delta '{delta}' is not a number")))?;
    let i = case
        .bus_index(bus)
        .ok_or_else(|| Failure::Data(format!("bus {bus} not present in the case")))?;
    let pos = idx
        .ns_pos(i)
        .ok_or_else(|| Failure::Data(format!("bus {bus} is the slack bus")))?;
    Ok((pos, delta))
}

fn run_certify(args: &CertifyArgs) -> Result<(), Failure> {
    let case = load(&args.case)?;
    let (model, _) = build_model_at_base(&case, &ModelOptions::default())?;
    let idx = IndexMaps::new(&case);
    let mut u = model.base_u.clone();
    for spec in &args.dp {
        let (pos, delta) = parse_dp(&case, &idx, spec)?;
        u.p_ns[pos] += delta;
    }
    let cert = certify(&u, &model, &CertifyOptions::default());
    println!("{}", cert.to_json_string());
    Ok(())
}

fn parse_range(spec: &str) -> Result<(f64, f64), Failure> {
    let (lo, hi) = spec
        .split_once(':')
        .ok_or_else(|| Failure::Data(format!("range expects LO:HI, got '{spec}'")))?;
    let lo: f64 = lo
        .parse()
        .map_err(|_| Failure::Data(format!("range low '{lo}' is not a number")))?;
    let hi: f64 = hi
        .parse()
        .map_err(|_| Failure::Data(format!("range high '{hi}' is not a number")))?;
    if lo > hi {
        return Err(Failure::Data(format!("empty range {lo}:{hi}")));
    }
    Ok((lo, hi))
}

fn scan(args: &ScanArgs) -> Result<(), Failure> {
    let case = load(&args.case)?;
    let range1 = parse_range(&args.range)?;
    let range2 = match &args.range2 {
        Some(spec) => parse_range(spec)?,
        None => range1,
    };

    let case = match args.vlimit {
        Some(fraction) => {
            // the band is taken around the solved magnitudes of the case as
            // shipped, then the model is rebuilt against the new limits
            let (base_model, _) = build_model_at_base(&case, &ModelOptions::default())?;
            let vm: Vec<f64> = base_model.base_state.vm.iter().cloned().collect();
            case.scale_voltage_limits(fraction, Some(&vm))?
        }
        None => case,
    };
    let (model, _) = build_model_at_base(&case, &ModelOptions::default())?;
    let idx = IndexMaps::new(&case);
    let spec = ScanSpec::from_bus_ids(
        &case, &idx, args.bus1, args.bus2, range1, range2, args.res, args.truth,
    )?;
    let result = cross_section(&model, &case, &spec)?;

    let mut csv = std::fs::File::create(&args.csv)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.csv.display())))?;
    emit_csv(&result, &mut csv).map_err(|e| Failure::Data(e.to_string()))?;
    if let Some(path) = &args.svg {
        let mut svg = std::fs::File::create(path)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        emit_svg(&result, &mut svg, &SvgStyle::default())
            .map_err(|e| Failure::Data(e.to_string()))?;
    }

    let certified = result.certified_count();
    println!("cells:     {}", result.cells.len());
    println!("certified: {certified}");
    if args.truth {
        let feasible = result.feasible_count();
        let diverged = result
            .cells
            .iter()
            .filter(|c| c.truth == Truth::Diverged)
            .count();
        println!("feasible:  {feasible}");
        println!("diverged:  {diverged}");
        if feasible > 0 {
            println!(
                "coverage:  {}",
                fmt_sig9(certified as f64 / feasible as f64)
            );
        }
    }
    Ok(())
}

fn selftest(args: &SelftestArgs) -> Result<(), Failure> {
    let case = load(&args.case)?;
    let report = run_selftest(&case, args.seed);
    println!("seed: {}", report.seed);
    for suite in &report.suites {
        println!(
            "{} {}: {}",
            if suite.passed { "PASS" } else { "FAIL" },
            suite.name,
            suite.detail
        );
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Internal("selftest suites failed".into()))
    }
}
