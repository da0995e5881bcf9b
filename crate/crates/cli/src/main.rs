//! `rmpcc` command-line runner.
//!
//! Exit codes: 0 success, 1 gradient check failure, 2 invalid input, 3 aborted run.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use rmpcc::gradcheck::{run_gradcheck, GradcheckOptions, DEFAULT_TOLERANCE};
use rmpcc::kinematics::{load_robot, panda};
use rmpcc::ocp::ControllerKind;
use rmpcc::pathspline::{load_via_points, PathSpline};
use rmpcc::sim::{comparison_table, compute_metrics, run_closed_loop, MetricsReport, Scenario, ScenarioOverrides, TraceLog};
use rmpcc::Error;

use plot::{Panel, Series};

/// Mean cycle time above which `run` prints a warning.
const TIMING_BUDGET: f64 = 10e-3;

#[derive(Parser)]
#[command(name = "rmpcc", version, about = "Reactive contouring control for serial manipulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trace, metrics and plots.
    Run(RunArgs),
    /// Print a side-by-side metrics table of two traces.
    Compare(CompareArgs),
    /// Compare every analytic derivative against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the reference path sampled uniformly in s.
    SplineDump(SplineDumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Robot description replacing the one named by the scenario.
    #[arg(long)]
    robot: Option<PathBuf>,
    /// Controller configuration replacing the one named by the scenario.
    #[arg(long)]
    ocp: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Controller replacing the scenario's choice: rmpcc or tt_mpc.
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Skip the SVG plots.
    #[arg(long)]
    no_plots: bool,
    /// Worker threads for the linearization; capped by RMPCC_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Write zero timing columns so that traces are comparable byte for byte.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Two trace CSV files.
    #[arg(num_args = 2, required_unless_present = "rerun", conflicts_with = "rerun")]
    traces: Vec<PathBuf>,
    /// Run the scenario with both controllers in parallel and compare the results.
    #[arg(long, value_name = "SCENARIO")]
    rerun: Option<PathBuf>,
    /// Output directory for traces written by --rerun.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Robot description; the built-in Panda when omitted.
    #[arg(long)]
    robot: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random states per quantity.
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Negate one analytic quantity to demonstrate detection.
    #[arg(long, hide = true)]
    inject_sign_flip: Option<String>,
}

#[derive(Args)]
struct SplineDumpArgs {
    /// Scenario whose path is dumped.
    #[arg(long, conflicts_with = "via", required_unless_present = "via")]
    scenario: Option<PathBuf>,
    /// Via-point file with one "px py pz qw qx qy qz" pose per line.
    #[arg(long)]
    via: Option<PathBuf>,
    #[arg(long, default_value_t = 201)]
    samples: usize,
}

/// Failure of a command, mapped to an exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Aborted { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::SplineDump(args) => cmd_spline_dump(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Thread count after applying the `RMPCC_THREADS` cap.
fn thread_cap(requested: Option<usize>) -> Result<Option<usize>, Failure> {
    let cap = match std::env::var("RMPCC_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Failure::input(format!("RMPCC_THREADS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    if requested == Some(0) {
        return Err(Failure::input("--threads must be at least 1"));
    }
    Ok(match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c)),
        (r, None) => r,
        (None, Some(c)) => Some(c),
    })
}

fn load_scenario(path: &Path, overrides: &ScenarioOverrides) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load_with(path, overrides)?;
    if overrides.threads.is_none() {
        scenario.ocp.threads = thread_cap(Some(scenario.ocp.threads))?.unwrap_or(1);
    }
    scenario.validate()?;
    Ok(scenario)
}

/// `{out}/{scenario}_{controller}_{suffix}`.
fn output_path(out: &Path, scenario: &Scenario, suffix: &str) -> PathBuf {
    out.join(format!("{}_{}_{suffix}", scenario.name, scenario.controller.as_str()))
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(out: &Path) -> CmdResult {
    std::fs::create_dir_all(out).map_err(|e| Failure::input(format!("cannot create {}: {e}", out.display())))
}

/// Runs one scenario and writes its trace and metrics; returns the trace path.
fn simulate(scenario: &Scenario, out: &Path, plots: bool) -> Result<(PathBuf, MetricsReport), Failure> {
    let trace = run_closed_loop(scenario).map_err(|e| match e {
        Error::Aborted { .. } => Failure::from(e),
        other => Failure { code: 3, message: other.to_string() },
    })?;
    let metrics = compute_metrics(&trace).map_err(|e| Failure { code: 3, message: e.to_string() })?;
    let trace_path = output_path(out, scenario, "trace.csv");
    write_file(&trace_path, &trace.to_csv())?;
    write_file(&output_path(out, scenario, "metrics.txt"), &metrics.to_text())?;
    if plots {
        let title = format!("{} ({})", scenario.name, scenario.controller.as_str());
        let b = &scenario.ocp.barriers;
        write_file(
            &output_path(out, scenario, "safety.svg"),
            &safety_plot(&title, &trace, b.eps_sing, b.eps_self, b.eps_env),
        )?;
        write_file(&output_path(out, scenario, "path.svg"), &path_plot(&title, &trace))?;
    }
    Ok((trace_path, metrics))
}

fn column(trace: &TraceLog, f: impl Fn(&rmpcc::sim::TraceRecord) -> f64) -> Vec<f64> {
    trace.records.iter().map(f).collect()
}

fn safety_plot(title: &str, trace: &TraceLog, eps_sing: f64, eps_self: f64, eps_env: f64) -> String {
    let time = column(trace, |r| r.t);
    plot::render(
        &format!("{title}: safety"),
        &time,
        &[
            Panel { title: "manipulability", series: vec![Series { label: "mu", values: column(trace, |r| r.mu) }], threshold: Some(eps_sing) },
            Panel {
                title: "self distance [m]",
                series: vec![Series { label: "d_self", values: column(trace, |r| r.d_self) }],
                threshold: Some(eps_self),
            },
            Panel {
                title: "obstacle distance [m]",
                series: vec![Series { label: "d_env", values: column(trace, |r| r.d_env) }],
                threshold: Some(eps_env),
            },
        ],
    )
}

fn path_plot(title: &str, trace: &TraceLog) -> String {
    let time = column(trace, |r| r.t);
    let panel = |title, label, values| Panel { title, series: vec![Series { label, values }], threshold: None };
    plot::render(
        &format!("{title}: path progress"),
        &time,
        &[
            panel("path parameter", "s", column(trace, |r| r.s)),
            panel("path velocity [1/s]", "v_s", column(trace, |r| r.v_s)),
            panel("path acceleration [1/s^2]", "vd_s", column(trace, |r| r.vd_s)),
            panel("contouring error [cm]", "e_c", column(trace, |r| r.e_c * 100.0)),
            panel("orientation error [rad]", "e_o", column(trace, |r| r.e_o)),
        ],
    )
}

fn cmd_run(args: &RunArgs) -> CmdResult {
    let overrides = ScenarioOverrides {
        robot: args.robot.clone(),
        ocp: args.ocp.clone(),
        controller: args.controller,
        threads: thread_cap(args.threads)?.filter(|_| args.threads.is_some()),
        record_timings: args.no_timings.then_some(false),
    };
    let scenario = load_scenario(&args.scenario, &overrides)?;
    create_dir(&args.out)?;
    let (trace_path, metrics) = simulate(&scenario, &args.out, !args.no_plots)?;
    println!("wrote {}", trace_path.display());
    println!(
        "e_c mean {:.4} cm, max {:.4} cm; e_o mean {:.3e} rad; min mu {:.4}, d_self {:.4} m, d_env {:.4} m",
        metrics.e_c_cm.mean, metrics.e_c_cm.max, metrics.e_o.mean, metrics.mu_min, metrics.d_self_min, metrics.d_env_min
    );
    if !scenario.record_timings {
        println!("timings not recorded");
    } else {
        print!("{}", metrics.timing_table());
    }
    if scenario.record_timings && metrics.t_total.mean > TIMING_BUDGET {
        warn!("mean cycle time {:.2} ms exceeds {:.0} ms", metrics.t_total.mean * 1e3, TIMING_BUDGET * 1e3);
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<(TraceLog, MetricsReport), Failure> {
    let trace = TraceLog::load_csv(path)?;
    let metrics = compute_metrics(&trace).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok((trace, metrics))
}

fn cmd_compare(args: &CompareArgs) -> CmdResult {
    let (label_a, label_b, a, b) = if let Some(scenario_path) = &args.rerun {
        let base = load_scenario(scenario_path, &ScenarioOverrides::default())?;
        create_dir(&args.out)?;
        let mut rmpcc = base.clone();
        rmpcc.controller = ControllerKind::Rmpcc;
        let mut tt = base;
        tt.controller = ControllerKind::TtMpc;
        let (ra, rb) = std::thread::scope(|s| {
            let ha = s.spawn(|| simulate(&tt, &args.out, false));
            let hb = s.spawn(|| simulate(&rmpcc, &args.out, false));
            (ha.join(), hb.join())
        });
        let join = |r: std::thread::Result<_>| r.unwrap_or_else(|_| Err(Failure { code: 3, message: "simulation thread panicked".into() }));
        let (_, ma) = join(ra)?;
        let (_, mb) = join(rb)?;
        ("tt_mpc".to_string(), "rmpcc".to_string(), ma, mb)
    } else {
        let (ta, ma) = read_trace(&args.traces[0])?;
        let (tb, mb) = read_trace(&args.traces[1])?;
        if ta.dof != tb.dof {
            return Err(Failure::input(format!("schema mismatch: traces have {} and {} joints", ta.dof, tb.dof)));
        }
        let (la, lb) = column_labels(&args.traces[0], &args.traces[1]);
        (la, lb, ma, mb)
    };
    print!("{}", comparison_table(&label_a, &a, &label_b, &b));
    Ok(())
}

/// Column labels from two trace file names: the shared prefix and the `_trace` suffix are
/// dropped, and what remains is cut to 13 characters.
fn column_labels(a: &Path, b: &Path) -> (String, String) {
    let stem = |p: &Path| {
        let s = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        s.strip_suffix("_trace").map(str::to_string).unwrap_or(s)
    };
    let (sa, sb) = (stem(a), stem(b));
    let common = sa
        .char_indices()
        .zip(sb.chars())
        .take_while(|((_, ca), cb)| ca == cb)
        .filter(|((_, c), _)| *c == '_')
        .map(|((i, _), _)| i + 1)
        .last()
        .unwrap_or(0);
    let cut = |s: &str| {
        let rest = if s.len() > common { &s[common..] } else { s };
        rest.chars().take(13).collect::<String>()
    };
    if sa == sb {
        let c = cut(&sa);
        return (c.clone(), c);
    }
    (cut(&sa), cut(&sb))
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CmdResult {
    let model = match &args.robot {
        Some(p) => load_robot(p)?,
        None => panda(),
    };
    let options = GradcheckOptions { seed: args.seed, count: args.count, flip_sign: args.inject_sign_flip.clone() };
    let report = run_gradcheck(&model, &options)?;
    print!("{}", report.to_text());
    let failures = report.failures(DEFAULT_TOLERANCE);
    if failures.is_empty() {
        println!("all quantities within {DEFAULT_TOLERANCE:e}");
        return Ok(());
    }
    let mut message = format!("{} quantities exceed {DEFAULT_TOLERANCE:e}", failures.len());
    for f in failures {
        let state = f
            .worst_state
            .as_ref()
            .map(|q| q.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
            .unwrap_or_else(|| "no samples".into());
        message.push_str(&format!("\n  {}: error {:.3e} at q = [{state}]", f.name, f.worst_error));
    }
    Err(Failure { code: 1, message })
}

fn cmd_spline_dump(args: &SplineDumpArgs) -> CmdResult {
    if args.samples < 2 {
        return Err(Failure::input("--samples must be at least 2"));
    }
    let spline = match (&args.scenario, &args.via) {
        (Some(path), _) => load_scenario(path, &ScenarioOverrides::default())?.spline()?,
        (None, Some(path)) => PathSpline::build(&load_via_points(path)?)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    println!("s px py pz qw qx qy qz");
    for i in 0..args.samples {
        let s = i as f64 / (args.samples - 1) as f64;
        let p = spline.sample_position(s).position;
        let q = spline.sample_orientation(s).rotation.to_quaternion();
        println!("{s} {} {} {} {} {} {} {}", p.x, p.y, p.z, q[0], q[1], q[2], q[3]);
    }
    Ok(())
}
