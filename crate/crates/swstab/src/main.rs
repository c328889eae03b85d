//! Command-line interface: certify, synthesize, check, simulate, oracle.
//!
//! Exit codes are a stable contract: 0 success, 2 input or validation
//! error, 3 infeasible, 4 undecided.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swstab::error::Error;
use swstab::graph::{enumerate_circuits, SwitchingSignal};
use swstab::io::{
    read_signal_file, write_signal_file, write_trajectory_csv, LpReport, Report,
    SystemDescription,
};
use swstab::lyap::sample_certificate_violation;
use swstab::sim::{attach_envelope, simulate, verify_envelope};
use swstab::stability::{asymptotic_check, prefix_stats, stability_ratio, walk_ratio};
use swstab::synth::{synthesize, SynthesisConfig};
use swstab::ModeId;

#[derive(Parser)]
#[command(
    name = "swstab",
    about = "Lyapunov certificates and stabilizing switching-signal synthesis for discrete-time switched linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify each mode and compute its certificate pair and the
    /// transition gains.
    Certify(CertifyArgs),
    /// Find a periodic stabilizing switching signal via the
    /// circuit-feasibility LP.
    Synthesize(SynthesizeArgs),
    /// Evaluate switching statistics and the stability conditions on a
    /// signal.
    Check(CheckArgs),
    /// Simulate a trajectory and export it as CSV.
    Simulate(SimulateArgs),
    /// Exhaustively enumerate circuits of a small graph, with ratios.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct CertifyArgs {
    /// System description (JSON).
    input: PathBuf,
    /// Write the machine-readable report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-mode Q override, as MODE=[[...],[...]]; repeatable.
    #[arg(long = "q-matrix", value_name = "MODE=JSON")]
    q_matrix: Vec<String>,
    /// Seed for the sampling-based certificate verification.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random unit vectors sampled per mode when verifying.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct SynthesizeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Signal file to write (one period, with a period header).
    #[arg(long, default_value = "signal.txt")]
    signal_out: PathBuf,
    /// Slack for the strict ratio inequality; overrides the input file.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Edge budget for the exhaustive fallback search.
    #[arg(long, default_value_t = 20)]
    max_oracle_edges: usize,
    /// Solve the LP even when an asymptotically stable self-loop exists.
    #[arg(long)]
    no_prefer_trivial: bool,
}

#[derive(Args)]
struct CheckArgs {
    input: PathBuf,
    signal: PathBuf,
    /// Horizon for prefix statistics.
    #[arg(long, default_value_t = 600)]
    horizon: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    input: PathBuf,
    signal: PathBuf,
    /// Initial state, comma-separated reals.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long, default_value_t = 120)]
    horizon: usize,
    /// CSV output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    input: PathBuf,
    /// Maximum circuit length; defaults to the edge count.
    #[arg(long)]
    max_len: Option<usize>,
    /// Refuse graphs with more edges than this.
    #[arg(long, default_value_t = 20)]
    max_oracle_edges: usize,
    /// Cap on the number of circuits reported.
    #[arg(long, default_value_t = 200_000)]
    max_circuits: usize,
}

fn main() -> ExitCode {
    // die quietly when stdout is a closed pipe (e.g. `swstab ... | head`)
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(args) => cmd_certify(args),
        Command::Synthesize(args) => cmd_synthesize(args),
        Command::Check(args) => cmd_check(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Infeasible { .. }) => 3,
                Some(Error::Undecided { .. }) => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_q_overrides(specs: &[String]) -> anyhow::Result<BTreeMap<ModeId, DMatrix<f64>>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (mode, json) = spec
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--q-matrix expects MODE=JSON, got `{spec}`"))?;
        let mode: ModeId = mode.trim().parse()?;
        let rows: Vec<Vec<f64>> = serde_json::from_str(json)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if nrows == 0 || rows.iter().any(|r| r.len() != ncols) {
            anyhow::bail!("--q-matrix {mode}: matrix must be rectangular and nonempty");
        }
        out.insert(mode, DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]));
    }
    Ok(out)
}

fn emit_report(report: &Report, output: Option<&PathBuf>) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            report.save(path)?;
            println!("report written to {}", path.display());
        }
        None => {
            println!("--- report (json) ---");
            println!("{}", serde_json::to_string_pretty(report)?);
        }
    }
    Ok(())
}

fn cmd_certify(args: CertifyArgs) -> anyhow::Result<()> {
    let mut sys = SystemDescription::load(&args.input)?;
    sys.q_override.extend(parse_q_overrides(&args.q_matrix)?);
    let (certs, gains, classes) = sys.certify()?;

    println!("certificates");
    println!("{:>6}  {:<22} {:>12}  P", "mode", "class", "lambda");
    for (&id, class) in &classes {
        let lambda = gains.lambda(id)?;
        let p_text = match &certs {
            Some(certs) => {
                let p = &certs[&id].p;
                let rows: Vec<String> = (0..p.nrows())
                    .map(|r| {
                        let cols: Vec<String> =
                            (0..p.ncols()).map(|c| format!("{:.6}", p[(r, c)])).collect();
                        format!("[{}]", cols.join(", "))
                    })
                    .collect();
                rows.join(" ")
            }
            None => "(gains override)".to_string(),
        };
        println!("{id:>6}  {:<22} {lambda:>12.6}  {p_text}", class.to_string());
    }

    println!();
    println!("transition gains");
    println!("{:>6} {:>6} {:>14} {:>14}", "from", "to", "mu", "ln mu");
    for (&(from, to), &mu) in gains.mu_entries() {
        println!("{from:>6} {to:>6} {mu:>14.6} {:>14.6}", mu.ln());
    }

    if let Some(certs) = &certs {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let mut worst: f64 = f64::NEG_INFINITY;
        for (&id, cert) in certs {
            let violation =
                sample_certificate_violation(cert, &sys.family[&id], args.samples, &mut rng);
            worst = worst.max(violation);
        }
        println!();
        println!(
            "sampled descent check: worst relative violation {worst:.3e} over {} vectors/mode (seed {})",
            args.samples, args.seed
        );
        if worst > 1e-9 {
            anyhow::bail!("certificate verification failed: sampled violation {worst:.3e}");
        }
    }

    let mut report = Report::with_gains(&gains, &classes)?;
    if let Some(certs) = &certs {
        report.set_certificates(certs);
    }
    println!();
    emit_report(&report, args.output.as_ref())?;
    Ok(())
}

fn cmd_synthesize(args: SynthesizeArgs) -> anyhow::Result<()> {
    let sys = SystemDescription::load(&args.input)?;
    let (certs, gains, classes) = sys.certify()?;
    let cfg = SynthesisConfig {
        epsilon: args.epsilon.or(sys.epsilon).unwrap_or(0.01),
        prefer_trivial: !args.no_prefer_trivial,
        max_oracle_edges: args.max_oracle_edges,
        ..SynthesisConfig::default()
    };
    let result = synthesize(&sys.graph, &gains, &classes, &cfg)?;

    match result.trivial_case {
        Some(mode) => println!(
            "trivial case: mode {mode} is asymptotically stable and carries a self-loop; constant signal"
        ),
        None => {
            println!(
                "circuit found{}: {:?} (period {})",
                if result.from_oracle_fallback {
                    " by enumeration fallback"
                } else {
                    ""
                },
                result.circuit.vertices(),
                result.circuit.len()
            );
        }
    }
    println!(
        "ratio: {:.6} (numerator {:.6}, denominator {:.6})",
        result.ratio.ratio, result.ratio.numerator, result.ratio.denominator
    );

    let verdict = asymptotic_check(&result.signal, &gains, &classes)?;
    println!(
        "switching persists: {}   asymptotic ratio < 1: {}{}",
        verdict.switching_persists,
        verdict.ratio_below_one,
        if verdict.trivial_as_dwell {
            "   (trivial stable dwell)"
        } else {
            ""
        }
    );

    write_signal_file(&args.signal_out, &result.signal)?;
    println!("signal written to {}", args.signal_out.display());

    let mut report = Report::with_gains(&gains, &classes)?;
    if let Some(certs) = &certs {
        report.set_certificates(certs);
    }
    report.lp = Some(match &result.flow {
        Some(flow) => LpReport {
            status: "feasible".into(),
            flow: Some(flow.values().to_vec()),
            edges: Some(sys.graph.edges().to_vec()),
        },
        None => LpReport {
            status: if result.trivial_case.is_some() {
                "bypassed (trivial case)".into()
            } else {
                "feasible (circuit via enumeration fallback)".into()
            },
            flow: None,
            edges: None,
        },
    });
    report.circuit = Some(result.circuit.vertices().to_vec());
    report.ratio = Some(result.ratio.clone());
    report.switching_persists = Some(verdict.switching_persists);
    report.ratio_below_one = Some(verdict.ratio_below_one);
    report.trivial_case = result.trivial_case;
    report.signal_prefix = Some(result.signal.prefix(result.circuit.len().max(1))?);
    emit_report(&report, args.output.as_ref())?;
    Ok(())
}

fn cmd_check(args: CheckArgs) -> anyhow::Result<()> {
    let sys = SystemDescription::load(&args.input)?;
    let (_, gains, classes) = sys.certify()?;
    let sigma = read_signal_file(&args.signal)?;
    sigma.validate(&sys.graph)?;

    let horizon = match &sigma {
        SwitchingSignal::Finite(v) => args.horizon.min(v.len().saturating_sub(1)),
        _ => args.horizon,
    };
    if horizon == 0 {
        anyhow::bail!("signal too short for any statistics");
    }

    let stats = prefix_stats(&sigma, horizon)?;
    let report_at_horizon = stability_ratio(&stats.counts, &gains, &classes, 0.0)?;
    println!("prefix statistics at t = {horizon}");
    println!("  switches: {}   nu: {:.6}", stats.n_switches, stats.nu);
    println!(
        "  ratio: {:.6} (numerator {:.6}, denominator {:.6})",
        report_at_horizon.ratio, report_at_horizon.numerator, report_at_horizon.denominator
    );

    let mut report = Report::with_gains(&gains, &classes)?;
    report.ratio = Some(report_at_horizon);
    report.signal_prefix = Some(sigma.prefix(horizon.min(64) + 1)?);

    if let Some(period) = sigma.period() {
        println!();
        println!("periodic signal, period {period}; ratio at period boundaries:");
        let boundaries: Vec<usize> = (1..=horizon / period).map(|k| k * period).collect();
        let show = 8.min(boundaries.len());
        for &t in boundaries.iter().take(show) {
            let s = prefix_stats(&sigma, t)?;
            let r = stability_ratio(&s.counts, &gains, &classes, 0.0)?;
            println!("  t = {t:>6}: ratio {:.6}", r.ratio);
        }
        if boundaries.len() > show {
            println!("  ... ({} more boundaries, identical by linearity)", boundaries.len() - show);
        }
        let verdict = asymptotic_check(&sigma, &gains, &classes)?;
        println!(
            "exact verdicts: switching persists {}   asymptotic ratio < 1: {}{}",
            verdict.switching_persists,
            verdict.ratio_below_one,
            if verdict.trivial_as_dwell {
                "   (trivial stable dwell)"
            } else {
                ""
            }
        );
        report.switching_persists = Some(verdict.switching_persists);
        report.ratio_below_one = Some(verdict.ratio_below_one);
        report.circuit = {
            let mut cycle = sigma.prefix(period)?;
            cycle.push(cycle[0]);
            Some(cycle)
        };
    } else {
        println!();
        println!("finite prefix: values reported as-is; asymptotic verdicts need a periodic signal");
    }

    if let Some(path) = &args.output {
        report.save(path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let sys = SystemDescription::load(&args.input)?;
    if sys.family.is_empty() {
        anyhow::bail!("simulation needs subsystem matrices; this input only carries a gains override");
    }
    let sigma = read_signal_file(&args.signal)?;
    sigma.validate(&sys.graph)?;

    let x0: Vec<f64> = args
        .x0
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow::anyhow!("bad --x0: {e}"))?;
    let d = sys.family.values().next().expect("nonempty family").dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            context: format!("--x0 has {} entries but the state dimension is {d}", x0.len()),
        }
        .into());
    }
    let x0 = DVector::from_vec(x0);

    let (certs, gains, _) = sys.certify()?;
    let certs = certs.expect("family is nonempty");
    let mut traj = simulate(&sys.matrices(), Some(&certs), &sigma, &x0, args.horizon)?;
    attach_envelope(&mut traj, &certs, &gains, &sigma)?;
    let check = verify_envelope(&traj, &certs, &gains, &sigma)?;
    eprintln!(
        "envelope check: {} (worst relative violation {:.3e})",
        if check.ok { "ok" } else { "VIOLATED" },
        check.max_violation
    );

    match &args.output {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            write_trajectory_csv(std::io::BufWriter::new(file), &traj)?;
            eprintln!("trajectory written to {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_trajectory_csv(&mut lock, &traj)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> anyhow::Result<()> {
    let sys = SystemDescription::load(&args.input)?;
    if sys.graph.edge_count() > args.max_oracle_edges {
        return Err(Error::TooManyEdges {
            count: sys.graph.edge_count(),
            max: args.max_oracle_edges,
        }
        .into());
    }
    let max_len = args.max_len.unwrap_or_else(|| sys.graph.edge_count());
    let en = enumerate_circuits(&sys.graph, max_len, args.max_circuits)?;
    let gains = sys.certify().ok();
    println!(
        "{} circuits of length <= {max_len}{}",
        en.circuits.len(),
        if en.truncated { " (TRUNCATED)" } else { "" }
    );
    for w in &en.circuits {
        match &gains {
            Some((_, gains, classes)) => {
                let r = walk_ratio(w, gains, classes, 0.0)?;
                println!("{:?} ratio {:.6}", w.vertices(), r.ratio);
            }
            None => println!("{:?}", w.vertices()),
        }
    }
    Ok(())
}
