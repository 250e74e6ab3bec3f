use badapprox::alpha::{AlphaField, AlphaRecord, QuadraticReal};
use badapprox::bounds::{self, MuTable};
use badapprox::certified::rational_to_string;
use badapprox::certify::{construct, verify_certificate, Certificate, Construction, RunConfig};
use badapprox::engine::{write_trace_csv, Mode, Strategy};
use clap::{Args, Parser, Subcommand};
use num_traits::ToPrimitive;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

const THREADS_ENV: &str = "BADAPPROX_THREADS";

#[derive(Parser)]
#[command(name = "badapprox", version, about = "Interval-removal construction of a pair (alpha, beta) with q log2(q)^2 ||alpha q|| ||beta q|| >= eps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the construction and write a certificate.
    Construct(ConstructArgs),
    /// Re-check an existing certificate.
    Verify {
        certificate: PathBuf,
    },
    /// Lattice count table, partition and sum checks.
    Bounds(BoundsArgs),
    /// Certified badness constant of alpha.
    Delta {
        #[arg(long, default_value = "golden")]
        alpha: QuadraticReal,
        #[arg(long, default_value_t = 1000)]
        scan_limit: u64,
    },
}

#[derive(Args)]
struct ConstructArgs {
    /// golden, sqrt2, sqrt3, or d:a:b for a + b sqrt(d)
    #[arg(long)]
    alpha: Option<QuadraticReal>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon_log2: Option<i32>,
    #[arg(long)]
    q0: Option<u64>,
    #[arg(long = "Q")]
    q_max: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    scan_limit: Option<u64>,
    /// Derive eps and q0 from delta instead of the flags.
    #[arg(long)]
    paper_constants: bool,
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Certificate path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measure trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value = "golden")]
    alpha: QuadraticReal,
    #[arg(long, default_value_t = 12)]
    nu_max: u32,
    #[arg(long, default_value_t = 1000)]
    scan_limit: u64,
    /// Extra sum checks as q:Q.
    #[arg(long = "sigma", value_parser = parse_pair)]
    sigma: Vec<(u64, u64)>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn parse_pair(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected q:Q, got {s:?}"))?;
    Ok((
        a.parse().map_err(|e| format!("{a}: {e}"))?,
        b.parse().map_err(|e| format!("{b}: {e}"))?,
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var(THREADS_ENV) {
        match n.parse::<usize>() {
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => {
                eprintln!("error: {THREADS_ENV} must be a thread count, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    let result = match cli.command {
        Command::Construct(args) => run_construct(args),
        Command::Verify { certificate } => run_verify(&certificate),
        Command::Bounds(args) => run_bounds(args),
        Command::Delta { alpha, scan_limit } => run_delta(alpha, scan_limit),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn load_config(args: &ConstructArgs) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(a) = &args.alpha {
        cfg.alpha = AlphaRecord::from(a);
    }
    if let Some(v) = args.epsilon_log2 {
        cfg.epsilon_log2 = v;
    }
    if let Some(v) = args.q0 {
        cfg.q0 = v;
    }
    if let Some(v) = args.q_max {
        cfg.q_max = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = args.bits {
        cfg.bits = v;
    }
    if let Some(v) = args.scan_limit {
        cfg.scan_limit = v;
    }
    cfg.paper_constants |= args.paper_constants;
    cfg.validate()?;
    Ok(cfg)
}

fn run_construct(args: ConstructArgs) -> CliResult {
    let cfg = load_config(&args)?;
    let outcome = construct(&cfg)?;
    let write_trace = |rows: &[_]| -> Result<(), Box<dyn std::error::Error>> {
        if let Some(p) = &args.trace {
            write_trace_csv(rows, BufWriter::new(File::create(p)?))?;
        }
        Ok(())
    };
    match outcome {
        Construction::Infeasible(pc) => {
            println!("{}", serde_json::to_string_pretty(&pc)?);
            eprintln!(
                "derived constants infeasible: eps = 2^{}, q0 = {} exceeds Q = {}",
                pc.epsilon_log2, pc.q0, pc.q_max
            );
            Ok(ExitCode::from(2))
        }
        Construction::Extinct { x, trace } => {
            write_trace(&trace)?;
            eprintln!("extinct: the survivor set is empty after x = {x}");
            Ok(ExitCode::from(1))
        }
        Construction::Done { certificate, trace } => {
            write_trace(&trace)?;
            let json = certificate.to_json()?;
            match &args.out {
                Some(p) => fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
            for e in &certificate.epochs {
                eprintln!(
                    "ladder {} -> {}: ratio {:.6}{}",
                    e.q1,
                    e.q2,
                    e.ratio_21.to_f64().unwrap_or(f64::NAN),
                    if e.certified { "" } else { " (below 1/2)" }
                );
            }
            eprintln!(
                "verified_min = {} (~{:.6e}) at q = {}",
                rational_to_string(&certificate.verified_min),
                certificate.verified_min.to_f64().unwrap_or(f64::NAN),
                certificate.min_q
            );
            if certificate.certified {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("not certified: verified_min is below eps (1 - 2^-16)");
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn run_verify(path: &PathBuf) -> CliResult {
    let cert = Certificate::from_json(&fs::read_to_string(path)?)?;
    let check = verify_certificate(&cert)?;
    println!("{}", serde_json::to_string_pretty(&check)?);
    if let Some(q) = check.violation {
        eprintln!("violation at q = {q}");
    }
    if !check.hash_ok {
        eprintln!("content hash mismatch");
    }
    if !check.min_matches {
        eprintln!("recomputed verified_min differs from the certificate");
    }
    Ok(if check.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_bounds(args: BoundsArgs) -> CliResult {
    let field = AlphaField::new(args.alpha)?;
    let delta = field.badness_delta(args.scan_limit)?.delta;
    let table = MuTable::new(&field, args.nu_max)?;
    let rows = bounds::count_table(&table, &delta, args.nu_max);
    let partitions: Vec<_> = (0..=args.nu_max)
        .map(|nu| bounds::partition_check(&field, &delta, nu))
        .collect();
    let sums = args
        .sigma
        .iter()
        .map(|&(q, qm)| bounds::sum_report(&field, &delta, q, qm))
        .collect::<Result<Vec<_>, _>>()?;
    let ok = rows.iter().all(|r| r.ok) && partitions.iter().all(|p| p.ok()) && sums.iter().all(|s| s.holds);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.json {
        let doc = serde_json::json!({
            "delta": rational_to_string(&delta),
            "counts": rows,
            "partitions": partitions,
            "sums": sums,
            "ok": ok,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    } else {
        writeln!(out, "delta = {}", rational_to_string(&delta))?;
        writeln!(out, "{:>4} {:>4} {:>8} {:>8} {:>12} {:>3}", "nu", "mu", "card_A", "I", "bound", "ok")?;
        for r in &rows {
            writeln!(
                out,
                "{:>4} {:>4} {:>8} {:>8} {:>12.1} {:>3}",
                r.nu,
                r.mu,
                r.card_a,
                r.count_i,
                r.bound.to_f64().unwrap_or(f64::NAN),
                if r.ok { "yes" } else { "NO" }
            )?;
        }
        for p in &partitions {
            writeln!(out, "partition nu={}: {}", p.nu, if p.ok() { "exact" } else { "BROKEN" })?;
        }
        for s in &sums {
            writeln!(
                out,
                "sigma({}, {}) <= {:.6} vs bound {:.3}: ratio {:.3e} {}",
                s.q,
                s.q_max,
                s.sigma_hi.to_f64().unwrap_or(f64::NAN),
                s.bound.to_f64().unwrap_or(f64::NAN),
                s.ratio,
                if s.holds { "ok" } else { "FAILS" }
            )?;
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_delta(alpha: QuadraticReal, scan_limit: u64) -> CliResult {
    let field = AlphaField::new(alpha)?;
    let cert = field.badness_delta(scan_limit)?;
    println!("{}", serde_json::to_string_pretty(&cert)?);
    Ok(ExitCode::SUCCESS)
}
