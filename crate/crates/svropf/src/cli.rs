//! Command-line front end: ingest → build → solve → recover → certify →
//! report, plus batch comparisons, a fixed-tap load flow, a residual checker,
//! and a brute-force tap-grid oracle for end-to-end validation.
//!
//! Exit codes: 0 success, 2 solver failure (including unusable relaxation
//! solutions), 3 load-flow non-convergence, 1 anything else. Errors print a
//! machine-readable JSON object on stderr.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::builder::{
    build_mbopf, rbopf_residuals, BuildOptions, ObjectiveKind, ResidualReport, SvrMode, VarMap,
};
use crate::conic::{self, ConicSolution};
use crate::loadflow::{self, LoadFlowError, SweepOptions};
use crate::netmodel::{parse_feeder, Network};
use crate::recovery::{self, RecoveredOperatingPoint};
use crate::svrgain::{tap_to_ratio, SvrSpec, SvrType, TAP_MAX, TAP_MIN};

#[derive(Debug, Parser)]
#[command(
    name = "svropf",
    about = "Optimal SVR tap selection in unbalanced feeders via a conic branch-flow relaxation"
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Mbopf,
    CiopfStyle,
    CgopfStyle,
}

impl From<ModeArg> for SvrMode {
    fn from(m: ModeArg) -> SvrMode {
        match m {
            ModeArg::Mbopf => SvrMode::Mbopf,
            ModeArg::CiopfStyle => SvrMode::CiopfStyle,
            ModeArg::CgopfStyle => SvrMode::CgopfStyle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TypeArg {
    Wye,
    ClosedDelta,
    OpenDelta,
}

impl From<TypeArg> for SvrType {
    fn from(t: TypeArg) -> SvrType {
        match t {
            TypeArg::Wye => SvrType::Wye,
            TypeArg::ClosedDelta => SvrType::ClosedDelta,
            TypeArg::OpenDelta => SvrType::OpenDelta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Import,
    ImportDg,
}

/// Flags shared by every subcommand that assembles the relaxation.
#[derive(Debug, Clone, Args)]
struct BuildArgs {
    /// Feeder description file (JSON).
    #[arg(long)]
    feeder: PathBuf,
    /// SVR constraint mode.
    #[arg(long, value_enum, default_value = "mbopf")]
    mode: ModeArg,
    /// Cost to minimize.
    #[arg(long, value_enum, default_value = "import")]
    objective: ObjectiveArg,
    /// Phase-separation half-width in degrees: one value broadcasts, a
    /// comma list assigns per SVR.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    /// Replace every SVR's connection type before building.
    #[arg(long, value_enum)]
    svr_type: Option<TypeArg>,
    /// Force gang operation on all SVRs.
    #[arg(long)]
    gang: bool,
    /// Drop the 2×2-minor reinforcement at SVR secondaries.
    #[arg(long)]
    no_rank_reinforcement: bool,
    /// Drop the PSD block on the ratio products.
    #[arg(long)]
    no_psd_r: bool,
    /// Solver relative tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full pipeline: build the relaxation, solve, recover taps, certify.
    Solve {
        #[command(flatten)]
        build: BuildArgs,
        /// Write the run report JSON here (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-bus voltages of the certified point as CSV.
        #[arg(long)]
        voltages: Option<PathBuf>,
        /// Dump the raw relaxation solution for `check`.
        #[arg(long)]
        dump_solution: Option<PathBuf>,
    },
    /// Load flow at fixed taps or ratios.
    Loadflow {
        /// Feeder description file (JSON).
        #[arg(long)]
        feeder: PathBuf,
        /// Per-SVR integer taps, e.g. "15,13,15;0,0,0".
        #[arg(long)]
        taps: Option<String>,
        /// Per-SVR continuous ratios, same shape as --taps.
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        voltages: Option<PathBuf>,
    },
    /// Run several modes and/or SVR types and emit a comparison CSV.
    Compare {
        #[command(flatten)]
        build: BuildArgs,
        /// Modes to run.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "mbopf,ciopf-style,cgopf-style")]
        modes: Vec<ModeArg>,
        /// SVR type variants to run (empty: keep the feeder's types).
        #[arg(long, value_enum, value_delimiter = ',')]
        types: Vec<TypeArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate lifted-equation residuals of a dumped solution.
    Check {
        /// Feeder description file (JSON).
        #[arg(long)]
        feeder: PathBuf,
        /// Solution file written by `solve --dump-solution`.
        #[arg(long)]
        solution: PathBuf,
        /// Monte-Carlo draws for the voltage-box soundness check (0: skip).
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
        /// RNG seed for the sampling diagnostics.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Brute-force tap grid search via load flow (reference upper bound).
    Oracle {
        /// Feeder description file (JSON).
        #[arg(long)]
        feeder: PathBuf,
        /// Tap increment of the enumeration grid.
        #[arg(long, default_value_t = 1)]
        tap_step: usize,
        /// Gang-operate each SVR (one tap per device).
        #[arg(long)]
        gang: bool,
        /// Replace every SVR's connection type before searching.
        #[arg(long, value_enum)]
        svr_type: Option<TypeArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolved run configuration of a pipeline invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub feeder: PathBuf,
    pub mode: String,
    pub objective: String,
    pub delta: Vec<f64>,
    pub svr_type_override: Option<String>,
    pub gang: bool,
    pub rank_reinforcement: bool,
    pub psd_on_r: bool,
    pub solver_backend: String,
    pub tol: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Net(#[from] crate::netmodel::NetError),
    #[error("{0}")]
    Build(#[from] crate::builder::BuildError),
    #[error("{0}")]
    Conic(#[from] conic::ConicError),
    #[error("{0}")]
    Recovery(#[from] recovery::RecoveryError),
    #[error("{0}")]
    LoadFlow(#[from] LoadFlowError),
    #[error("{0}")]
    Bad(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Conic(_) => 2,
            CliError::Recovery(recovery::RecoveryError::NotOptimal(..)) => 2,
            CliError::Recovery(recovery::RecoveryError::LoadFlow(e)) | CliError::LoadFlow(e) => {
                match e {
                    LoadFlowError::NonConvergence(..) | LoadFlowError::ZeroVoltage(_) => 3,
                    _ => 1,
                }
            }
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Net(_) => "feeder",
            CliError::Build(_) => "build",
            CliError::Conic(_) => "solver",
            CliError::Recovery(_) => "recovery",
            CliError::LoadFlow(_) => "loadflow",
            CliError::Bad(_) => "usage",
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match CliArgs::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version itself; print and mirror its code.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({"kind": e.kind(), "message": e.to_string()});
            let _ = writeln!(std::io::stderr(), "{payload}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Solve {
            build,
            out,
            voltages,
            dump_solution,
        } => cmd_solve(build, out, voltages, dump_solution),
        Command::Loadflow {
            feeder,
            taps,
            ratios,
            out,
            voltages,
        } => cmd_loadflow(feeder, taps, ratios, out, voltages),
        Command::Compare {
            build,
            modes,
            types,
            out,
        } => cmd_compare(build, modes, types, out),
        Command::Check {
            feeder,
            solution,
            mc_samples,
            seed,
        } => cmd_check(feeder, solution, mc_samples, seed),
        Command::Oracle {
            feeder,
            tap_step,
            gang,
            svr_type,
            out,
        } => cmd_oracle(feeder, tap_step, gang, svr_type, out),
    }
}

fn load_network(path: &Path, svr_type: Option<TypeArg>) -> Result<Network, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut net = parse_feeder(&text)?;
    if let Some(t) = svr_type {
        override_svr_types(&mut net, t.into())?;
    }
    Ok(net)
}

/// Replaces every SVR's connection type, keeping variant and gang flags and
/// resetting the ratio bounds to the defaults of the new type.
fn override_svr_types(net: &mut Network, t: SvrType) -> Result<(), CliError> {
    for svr in net.svrs.iter_mut() {
        if t != SvrType::Wye && svr.phases != crate::netmodel::PhaseMask::ABC {
            return Err(CliError::Bad(format!(
                "cannot model a {}-phase SVR as {t:?}",
                svr.phases.len()
            )));
        }
        svr.spec = SvrSpec::new(t, svr.spec.variant, svr.spec.gang, svr.phases, None, None)
            .map_err(|e| CliError::Bad(e.to_string()))?;
    }
    Ok(())
}

fn build_options(args: &BuildArgs) -> BuildOptions {
    BuildOptions {
        svr_mode: args.mode.into(),
        rank_reinforcement: !args.no_rank_reinforcement,
        psd_on_r: !args.no_psd_r,
        objective: match args.objective {
            ObjectiveArg::Import => ObjectiveKind::Import,
            ObjectiveArg::ImportDg => ObjectiveKind::ImportPlusDg,
        },
        delta: args.delta.clone(),
        gang_override: args.gang.then_some(true),
    }
}

/// One full relaxation-and-recovery run.
pub struct PipelineOutcome {
    pub relaxation: ConicSolution,
    pub recovered: RecoveredOperatingPoint,
    pub residuals: ResidualReport,
    pub injections: Vec<DVector<Complex64>>,
    pub solve_seconds: f64,
}

/// Injections used for certification: the relaxation's constant-power
/// dispatch at DG buses, the specified loads elsewhere.
fn certification_injections(net: &Network, vm: &VarMap, x: &[f64]) -> Vec<DVector<Complex64>> {
    net.buses
        .iter()
        .enumerate()
        .map(|(m, b)| match &vm.dg[m] {
            Some(lay) => lay.value(x) - &b.load_s,
            None => -&b.load_s,
        })
        .collect()
}

/// Builds, solves, recovers, and certifies in one call; the programmatic
/// counterpart of the `solve` subcommand.
pub fn run_pipeline(
    net: &Network,
    opts: &BuildOptions,
    tol: f64,
) -> Result<PipelineOutcome, CliError> {
    let (problem, vm) = build_mbopf(net, opts)?;
    let t0 = Instant::now();
    let relaxation = conic::solve(&problem, tol)?;
    let solve_seconds = t0.elapsed().as_secs_f64();
    let ratios = recovery::recover_ratios(net, &vm, &relaxation)?;
    let injections = certification_injections(net, &vm, &relaxation.x);
    let extra_cost: f64 = if opts.objective == ObjectiveKind::ImportPlusDg {
        vm.dg
            .iter()
            .flatten()
            .map(|lay| {
                let g = lay.value(&relaxation.x);
                g.iter().map(|c| c.re).sum::<f64>()
            })
            .sum()
    } else {
        0.0
    };
    let recovered = recovery::evaluate(
        net,
        &ratios,
        &injections,
        Some(relaxation.objective),
        extra_cost,
        &SweepOptions::default(),
    )?;
    let residuals = rbopf_residuals(net, &vm, &relaxation.x);
    Ok(PipelineOutcome {
        relaxation,
        recovered,
        residuals,
        injections,
        solve_seconds,
    })
}

/// Run report mirroring the evaluation-table columns.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: String,
    pub ratios_raw: Vec<Vec<f64>>,
    pub ratios: Vec<Vec<f64>>,
    pub taps: Vec<Vec<i32>>,
    pub objective_relax: f64,
    pub objective_feasible: f64,
    pub gap_pct: f64,
    pub vmin: f64,
    pub vmax: f64,
    pub unbalance: f64,
    pub delta_sep: f64,
    pub eig_ratio_avg: f64,
    pub voltage_violation: f64,
    pub runtime_s: f64,
}

fn make_report(out: &PipelineOutcome) -> SolveReport {
    SolveReport {
        status: format!("{:?}", out.relaxation.status),
        ratios_raw: out.recovered.ratios_raw.clone(),
        ratios: out.recovered.ratios.clone(),
        taps: out.recovered.taps.clone(),
        objective_relax: out.relaxation.objective,
        objective_feasible: out.recovered.objective_feasible,
        gap_pct: out.recovered.gap_percent.unwrap_or(0.0),
        vmin: out.recovered.metrics.v_min,
        vmax: out.recovered.metrics.v_max,
        unbalance: out.recovered.metrics.unbalance,
        delta_sep: out.recovered.metrics.phase_separation,
        eig_ratio_avg: out.residuals.eig_ratio_avg_lines,
        voltage_violation: out.recovered.voltage_violation,
        runtime_s: out.solve_seconds,
    }
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None if content.ends_with('\n') => print!("{content}"),
        None => println!("{content}"),
    }
    Ok(())
}

fn voltages_csv(net: &Network, sol: &loadflow::LoadFlowSolution) -> String {
    let mut s = String::from("bus,phase,magnitude,angle_deg\n");
    for (m, bus) in net.buses.iter().enumerate() {
        for (k, p) in bus.phases.iter().enumerate() {
            let v = sol.voltages[m][k];
            s.push_str(&format!(
                "{},{},{:.9},{:.6}\n",
                bus.ext_id,
                p,
                v.norm(),
                v.arg().to_degrees()
            ));
        }
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionDump {
    mode: String,
    objective: String,
    delta: Vec<f64>,
    gang: bool,
    rank_reinforcement: bool,
    psd_on_r: bool,
    svr_type_override: Option<String>,
    primal: Vec<f64>,
}

fn mode_name(m: SvrMode) -> &'static str {
    match m {
        SvrMode::Mbopf => "mbopf",
        SvrMode::CiopfStyle => "ciopf_style",
        SvrMode::CgopfStyle => "cgopf_style",
    }
}

fn cmd_solve(
    args: BuildArgs,
    out: Option<PathBuf>,
    voltages: Option<PathBuf>,
    dump: Option<PathBuf>,
) -> Result<(), CliError> {
    let net = load_network(&args.feeder, args.svr_type)?;
    let opts = build_options(&args);
    let outcome = run_pipeline(&net, &opts, args.tol)?;
    let report = make_report(&outcome);
    write_or_print(&out, &serde_json::to_string_pretty(&report).unwrap())?;
    if let Some(vpath) = voltages {
        std::fs::write(vpath, voltages_csv(&net, &outcome.recovered.solution))?;
    }
    if let Some(dpath) = dump {
        let dump = SolutionDump {
            mode: mode_name(opts.svr_mode).into(),
            objective: if opts.objective == ObjectiveKind::Import {
                "import".into()
            } else {
                "import_dg".into()
            },
            delta: opts.delta.clone(),
            gang: opts.gang_override.unwrap_or(false),
            rank_reinforcement: opts.rank_reinforcement,
            psd_on_r: opts.psd_on_r,
            svr_type_override: args.svr_type.map(|t| format!("{t:?}")),
            primal: outcome.relaxation.x.clone(),
        };
        std::fs::write(dpath, serde_json::to_string(&dump).unwrap())?;
    }
    Ok(())
}

fn parse_grouped(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';')
        .map(|grp| {
            grp.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Bad(format!("bad number '{t}': {e}")))
                })
                .collect()
        })
        .collect()
}

fn cmd_loadflow(
    feeder: PathBuf,
    taps: Option<String>,
    ratios: Option<String>,
    out: Option<PathBuf>,
    voltages: Option<PathBuf>,
) -> Result<(), CliError> {
    let net = load_network(&feeder, None)?;
    let ratio_vecs: Vec<Vec<f64>> = match (taps, ratios) {
        (Some(t), None) => {
            let groups = parse_grouped(&t)?;
            if groups.len() != net.svrs.len() {
                return Err(CliError::Bad(format!(
                    "{} tap groups for {} SVRs",
                    groups.len(),
                    net.svrs.len()
                )));
            }
            groups
                .iter()
                .zip(&net.svrs)
                .map(|(g, svr)| {
                    let fixed = svr.spec.fixed_labels();
                    if g.len() != fixed.len() {
                        return Err(CliError::Bad(format!(
                            "expected {} taps for this SVR, got {}",
                            fixed.len(),
                            g.len()
                        )));
                    }
                    g.iter()
                        .zip(fixed)
                        .map(|(&tap, fx)| {
                            if fx {
                                Ok(1.0)
                            } else {
                                tap_to_ratio(tap as i32, svr.spec.variant)
                                    .map_err(|e| CliError::Bad(e.to_string()))
                            }
                        })
                        .collect()
                })
                .collect::<Result<_, _>>()?
        }
        (None, Some(r)) => parse_grouped(&r)?,
        (None, None) => net
            .svrs
            .iter()
            .map(|svr| vec![1.0; svr.spec.r_min.len()])
            .collect(),
        (Some(_), Some(_)) => {
            return Err(CliError::Bad("pass either --taps or --ratios, not both".into()))
        }
    };

    let injections = net.load_injections();
    let sol = loadflow::sweep(&net, &ratio_vecs, &injections, &SweepOptions::default())?;
    let metrics = loadflow::metrics(&net, &sol, None);
    let payload = serde_json::json!({
        "iterations": sol.iterations,
        "residual": sol.residual,
        "metrics": metrics,
        "power_balance_residual": loadflow::complex_power_balance(&net, &injections, &sol).norm(),
    });
    write_or_print(&out, &serde_json::to_string_pretty(&payload).unwrap())?;
    if let Some(vpath) = voltages {
        std::fs::write(vpath, voltages_csv(&net, &sol))?;
    }
    Ok(())
}

fn cmd_compare(
    args: BuildArgs,
    modes: Vec<ModeArg>,
    types: Vec<TypeArg>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut csv = String::from("method,svr_type,c,c_breve,gap_pct,min_v,max_v,v_unb,delta_deg,eig_ratio,time_s\n");
    let type_list: Vec<Option<TypeArg>> = if types.is_empty() {
        vec![args.svr_type]
    } else {
        types.into_iter().map(Some).collect()
    };
    for ty in &type_list {
        let net = load_network(&args.feeder, *ty)?;
        for mode in &modes {
            let mut opts = build_options(&args);
            opts.svr_mode = (*mode).into();
            let label_type = ty
                .map(|t| format!("{t:?}"))
                .unwrap_or_else(|| "as-filed".into());
            match run_pipeline(&net, &opts, args.tol) {
                Ok(outcome) => {
                    let rep = make_report(&outcome);
                    csv.push_str(&format!(
                        "{},{},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{:.2},{:.4},{:.2}\n",
                        mode_name(opts.svr_mode),
                        label_type,
                        rep.objective_relax,
                        rep.objective_feasible,
                        rep.gap_pct,
                        rep.vmin,
                        rep.vmax,
                        rep.unbalance,
                        rep.delta_sep,
                        rep.eig_ratio_avg,
                        rep.runtime_s
                    ));
                }
                Err(CliError::Build(crate::builder::BuildError::UnsupportedMode(_))) => {
                    // Baseline modes on delta SVRs: skip the row.
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
    }
    write_or_print(&out, &csv)
}

fn cmd_check(
    feeder: PathBuf,
    solution: PathBuf,
    mc_samples: usize,
    seed: u64,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&solution)?;
    let dump: SolutionDump =
        serde_json::from_str(&text).map_err(|e| CliError::Bad(format!("bad solution file: {e}")))?;
    let svr_type = match dump.svr_type_override.as_deref() {
        None => None,
        Some("Wye") => Some(TypeArg::Wye),
        Some("ClosedDelta") => Some(TypeArg::ClosedDelta),
        Some("OpenDelta") => Some(TypeArg::OpenDelta),
        Some(other) => return Err(CliError::Bad(format!("unknown type override {other}"))),
    };
    let net = load_network(&feeder, svr_type)?;
    let opts = BuildOptions {
        svr_mode: match dump.mode.as_str() {
            "mbopf" => SvrMode::Mbopf,
            "ciopf_style" => SvrMode::CiopfStyle,
            "cgopf_style" => SvrMode::CgopfStyle,
            other => return Err(CliError::Bad(format!("unknown mode {other}"))),
        },
        rank_reinforcement: dump.rank_reinforcement,
        psd_on_r: dump.psd_on_r,
        objective: if dump.objective == "import_dg" {
            ObjectiveKind::ImportPlusDg
        } else {
            ObjectiveKind::Import
        },
        delta: dump.delta.clone(),
        gang_override: dump.gang.then_some(true),
    };
    let (problem, vm) = build_mbopf(&net, &opts)?;
    if dump.primal.len() != problem.num_vars {
        return Err(CliError::Bad(format!(
            "solution has {} entries, problem has {} variables",
            dump.primal.len(),
            problem.num_vars
        )));
    }
    let rep = rbopf_residuals(&net, &vm, &dump.primal);
    let (eq, ineq, soc, psd) = problem.residuals(&dump.primal);

    // Optional Monte-Carlo soundness check of the per-SVR voltage boxes.
    let mut box_violations: Option<BTreeMap<String, usize>> = None;
    if mc_samples > 0 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut per_svr = BTreeMap::new();
        for (si, svr) in net.svrs.iter().enumerate() {
            let Some(tap) = &vm.svr_tap[si] else { continue };
            let bx = &tap.voltage_box;
            let mut bad = 0usize;
            for _ in 0..mc_samples {
                let v = bounds::sample_separated_voltage(
                    &mut rng,
                    svr.phases,
                    net.v_min,
                    net.v_max,
                    opts.delta_for(si),
                );
                let (u, w) = bounds::lift_voltage(&v);
                for i in 0..u.nrows() {
                    for j in 0..u.ncols() {
                        if u[(i, j)] < bx.u_min[(i, j)] - 1e-9
                            || u[(i, j)] > bx.u_max[(i, j)] + 1e-9
                            || w[(i, j)] < bx.w_min[(i, j)] - 1e-9
                            || w[(i, j)] > bx.w_max[(i, j)] + 1e-9
                        {
                            bad += 1;
                        }
                    }
                }
            }
            per_svr.insert(format!("svr{si}"), bad);
        }
        box_violations = Some(per_svr);
    }

    let payload = serde_json::json!({
        "residuals": rep,
        "program_rows": {"eq": eq, "ineq": ineq, "soc": soc, "psd": psd},
        "box_violations": box_violations,
    });
    println!("{}", serde_json::to_string_pretty(&payload).unwrap());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub best_cost: f64,
    pub best_taps: Vec<Vec<i32>>,
    pub evaluated: usize,
    pub feasible: usize,
}

/// Exhaustive tap enumeration with load-flow certification; the reference
/// upper bound for the relaxation objective.
pub fn oracle_search(net: &Network, tap_step: usize, gang: bool) -> Result<OracleReport, String> {
    let step = tap_step.max(1) as i32;
    // Per-SVR list of candidate tap vectors.
    let mut per_svr: Vec<Vec<Vec<i32>>> = Vec::new();
    for svr in &net.svrs {
        let fixed = svr.spec.fixed_labels();
        let free: Vec<usize> = (0..fixed.len()).filter(|&k| !fixed[k]).collect();
        let taps: Vec<i32> = (TAP_MIN..=TAP_MAX).step_by(step as usize).collect();
        let mut combos = Vec::new();
        if gang {
            for &t in &taps {
                let mut v = vec![0i32; fixed.len()];
                for &k in &free {
                    v[k] = t;
                }
                combos.push(v);
            }
        } else {
            // Cartesian product over the free labels.
            let mut stack: Vec<Vec<i32>> = vec![Vec::new()];
            for _ in &free {
                let mut next = Vec::new();
                for prefix in &stack {
                    for &t in &taps {
                        let mut p = prefix.clone();
                        p.push(t);
                        next.push(p);
                    }
                }
                stack = next;
            }
            for assign in stack {
                let mut v = vec![0i32; fixed.len()];
                for (slot, &k) in free.iter().enumerate() {
                    v[k] = assign[slot];
                }
                combos.push(v);
            }
        }
        per_svr.push(combos);
    }
    let total: usize = per_svr.iter().map(|c| c.len()).product();
    if total > 2_000_000 {
        return Err(format!(
            "grid of {total} combinations is too large; raise --tap-step or use --gang"
        ));
    }

    let injections = net.load_injections();
    let opts = SweepOptions::default();
    let mut best: Option<(f64, Vec<Vec<i32>>)> = None;
    let mut evaluated = 0usize;
    let mut feasible = 0usize;
    let mut index = vec![0usize; per_svr.len()];
    loop {
        let taps: Vec<Vec<i32>> = index
            .iter()
            .enumerate()
            .map(|(si, &k)| per_svr[si][k].clone())
            .collect();
        let ratios: Vec<Vec<f64>> = taps
            .iter()
            .zip(&net.svrs)
            .map(|(g, svr)| {
                let fixed = svr.spec.fixed_labels();
                g.iter()
                    .zip(fixed)
                    .map(|(&t, fx)| {
                        if fx {
                            1.0
                        } else {
                            tap_to_ratio(t, svr.spec.variant).expect("grid stays in range")
                        }
                    })
                    .collect()
            })
            .collect();
        evaluated += 1;
        if let Ok(sol) = loadflow::sweep(net, &ratios, &injections, &opts) {
            let ok = sol.voltages.iter().all(|v| {
                v.iter()
                    .all(|e| e.norm() >= net.v_min - 1e-6 && e.norm() <= net.v_max + 1e-6)
            });
            if ok {
                feasible += 1;
                let cost = loadflow::metrics(net, &sol, None).power_import;
                if best.as_ref().map(|(c, _)| cost < *c).unwrap_or(true) {
                    best = Some((cost, taps.clone()));
                }
            }
        }

        // Advance the mixed-radix counter.
        let mut pos = 0;
        loop {
            if pos == index.len() {
                let (best_cost, best_taps) = best.ok_or_else(|| {
                    "no feasible tap setting found over the grid".to_string()
                })?;
                return Ok(OracleReport {
                    best_cost,
                    best_taps,
                    evaluated,
                    feasible,
                });
            }
            index[pos] += 1;
            if index[pos] < per_svr[pos].len() {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}

fn cmd_oracle(
    feeder: PathBuf,
    tap_step: usize,
    gang: bool,
    svr_type: Option<TypeArg>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let net = load_network(&feeder, svr_type)?;
    let report = oracle_search(&net, tap_step, gang).map_err(CliError::Bad)?;
    write_or_print(&out, &serde_json::to_string_pretty(&report).unwrap())
}
