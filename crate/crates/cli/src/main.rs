//! `tracklmi` command-line front end.
//!
//! Exit codes: 0 certified / completed, 1 infeasible / diverged,
//! 2 inaccurate or solver failure, 3 input error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use config::{FileConfig, NumList};
use tracklmi_core::linalg::from_rows;
use tracklmi_core::network::LayerTrace;
use tracklmi_core::plot::{polyline_csv, render_svg, Series, SeriesKind};
use tracklmi_core::{
    assets, bounds_report, build_pendulum, simulate, simulate_with_governor, verify, Ellipsoid, FeedForwardNN,
    GovernorConfig, GovernorMode, JointEllipsoid, LoopSpec, PendulumParams, Plant, RefSchedule, SectorMode,
    SimOptions, Slice, SolverOptions, Theorem, Trajectory, VerifyConfig,
};

const EXIT_INPUT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "tracklmi", version, about = "LMI certificates for NN tracking controllers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve and certify a stability LMI; writes report.json.
    Verify(VerifyArgs),
    /// Simulate the closed loop, optionally with the reference governor; writes trajectory.csv.
    Simulate(SimulateArgs),
    /// Interval bounds and local sectors of the hidden neurons; writes bounds.json.
    Bounds(BoundsArgs),
    /// Plot region-of-attraction slices from a verification report.
    RoaPlot(RoaPlotArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML file supplying defaults for any long flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Plant JSON `{"A":..,"B":..,"C":..}`.
    #[arg(long, conflicts_with = "pendulum")]
    plant: Option<PathBuf>,
    /// Inverted pendulum, e.g. "m=0.15,L=0.5,mu=0.5,g=9.81,Ts=0.02,disc=zoh,output=angle".
    #[arg(long)]
    pendulum: Option<String>,
    /// Network weights JSON; defaults to the shipped pendulum network.
    #[arg(long)]
    nn: Option<PathBuf>,
    /// Integrator gain, row-major CSV or a scalar multiple of the identity.
    #[arg(long)]
    kxi: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// SDP backend (only `dense-ipm` is available)
    #[arg(long)]
    solver: Option<String>,
    /// Solver tolerance
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverArgs,
    /// global, local-fixed or local-range.
    #[arg(long)]
    theorem: Option<String>,
    /// Reference (CSV); the nominal reference for local-range.
    #[arg(long, visible_alias = "rnom", allow_hyphen_values = true)]
    r: Option<String>,
    /// First-layer half-widths, CSV or one scalar for all neurons.
    #[arg(long)]
    d: Option<String>,
    /// Weight of trace(Q) in the local-range objective.
    #[arg(long)]
    gamma: Option<f64>,
    /// Sector anchoring for local-range: auto, anchored or slope.
    #[arg(long)]
    sectors: Option<String>,
    /// Report path (default OUT/report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write roa.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Initial augmented state [x; ξ] (CSV) or plant state x with ξ = 0; default is the steady state.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Constant desired reference (CSV).
    #[arg(long, visible_alias = "rdes", allow_hyphen_values = true, conflicts_with = "schedule")]
    r: Option<String>,
    /// Reference schedule JSON `[[k_start, r], ...]`.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Number of simulation steps (default 500)
    #[arg(long)]
    steps: Option<usize>,
    /// Apply the reference governor using the joint ellipsoid of --report.
    #[arg(long)]
    governor: bool,
    /// Governor constraint: full or output-error.
    #[arg(long)]
    governor_mode: Option<String>,
    /// Verification report (local-range) for the governor and plots.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write trajectory.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    /// Reference at which the network is anchored (default 0).
    #[arg(long, allow_hyphen_values = true)]
    r: Option<String>,
    /// First-layer half-widths, CSV or one scalar for all neurons
    #[arg(long)]
    d: Option<String>,
    /// Range of slopes over the box instead of chords through the anchor.
    #[arg(long)]
    slope: bool,
}

#[derive(Args, Debug)]
struct RoaPlotArgs {
    #[command(flatten)]
    common: Common,
    /// Verification report.
    #[arg(long)]
    report: PathBuf,
    /// Reference of one slice (CSV); repeatable. Defaults to samples across the admissible set.
    #[arg(long = "slice", allow_hyphen_values = true)]
    slices: Vec<String>,
    /// Two state indices to plot.
    #[arg(long, default_value = "0,1")]
    dims: String,
    /// Boundary points per slice
    #[arg(long, default_value_t = 256)]
    points: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Bounds(a) => cmd_bounds(a),
        Cmd::RoaPlot(a) => cmd_roa_plot(a),
    }
}

fn parse_csv(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("invalid number `{}`", t.trim())))
        .collect()
}

fn csv_vec(s: &str) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(parse_csv(s)?))
}

fn parse_pendulum(s: &str) -> Result<PendulumParams> {
    let mut p = PendulumParams::default();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| anyhow!("pendulum entry `{item}` is not key=value"))?;
        let num = || v.trim().parse::<f64>().with_context(|| format!("pendulum {k}: invalid number `{v}`"));
        match k.trim().to_ascii_lowercase().as_str() {
            "m" => p.m = num()?,
            "l" => p.l = num()?,
            "mu" => p.mu = num()?,
            "g" => p.g = num()?,
            "ts" => p.ts = num()?,
            "disc" => {
                p.method = match v.trim() {
                    "euler" => tracklmi_core::Discretization::Euler,
                    "zoh" | "exact" | "exact-zoh" => tracklmi_core::Discretization::ExactZoh,
                    o => bail!("unknown discretization `{o}` (euler or zoh)"),
                }
            }
            "output" => {
                p.output = match v.trim() {
                    "angle" => tracklmi_core::PendulumOutput::Angle,
                    "velocity" => tracklmi_core::PendulumOutput::Velocity,
                    o => bail!("unknown pendulum output `{o}` (angle or velocity)"),
                }
            }
            o => bail!("unknown pendulum parameter `{o}`"),
        }
    }
    Ok(p)
}

/// Command-line values with TOML defaults filled in.
struct Resolved {
    file: FileConfig,
    plant: Option<Plant>,
    nn: FeedForwardNN,
    out: PathBuf,
    kxi: Option<String>,
}

fn resolve(c: &Common) -> Result<Resolved> {
    let file = match &c.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    // a plant source on the command line replaces the one in the config file
    let (plant_path, pendulum) = if c.plant.is_some() || c.pendulum.is_some() {
        (c.plant.clone(), c.pendulum.clone())
    } else {
        (file.plant.clone(), file.pendulum.clone())
    };
    let plant = match (plant_path, pendulum) {
        (Some(p), None) => Some(load_plant(&p)?),
        (None, Some(s)) => Some(build_pendulum(&parse_pendulum(&s)?)?),
        (None, None) => None,
        (Some(_), Some(_)) => bail!("give exactly one of plant and pendulum"),
    };
    let nn = match c.nn.clone().or_else(|| file.nn.clone()) {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("cannot read network file {}", p.display()))?;
            FeedForwardNN::from_json(&text).with_context(|| format!("invalid network file {}", p.display()))?
        }
        None => assets::pendulum_network()?,
    };
    let out = c.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let kxi = c.kxi.clone().or_else(|| file.kxi.as_ref().map(NumList::to_csv));
    Ok(Resolved { file, plant, nn, out, kxi })
}

fn load_plant(p: &Path) -> Result<Plant> {
    let text = fs::read_to_string(p).with_context(|| format!("cannot read plant file {}", p.display()))?;
    Plant::from_json(&text).with_context(|| format!("invalid plant file {}", p.display()))
}

fn kxi_matrix(s: Option<&str>, n_u: usize) -> Result<DMatrix<f64>> {
    let Some(s) = s else { return Ok(DMatrix::identity(n_u, n_u)) };
    let v = parse_csv(s)?;
    if v.len() == 1 {
        Ok(DMatrix::identity(n_u, n_u) * v[0])
    } else if v.len() == n_u * n_u {
        Ok(DMatrix::from_row_slice(n_u, n_u, &v))
    } else {
        bail!("--kxi needs 1 or {} entries, got {}", n_u * n_u, v.len())
    }
}

fn loop_spec(res: &Resolved) -> Result<LoopSpec> {
    let plant = res.plant.clone().ok_or_else(|| anyhow!("a plant is required: give --plant or --pendulum"))?;
    let k = kxi_matrix(res.kxi.as_deref(), plant.n_u())?;
    Ok(LoopSpec::new(plant, res.nn.clone(), k)?)
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("cannot create output directory {}", p.display()))
}

fn write_file(p: &Path, contents: &str) -> Result<()> {
    fs::write(p, contents).with_context(|| format!("cannot write {}", p.display()))
}

fn cmd_verify(a: VerifyArgs) -> Result<u8> {
    let res = resolve(&a.common)?;
    let f = &res.file;
    let spec = loop_spec(&res)?;
    let theorem: Theorem = a
        .theorem
        .clone()
        .or_else(|| f.theorem.clone())
        .ok_or_else(|| anyhow!("--theorem is required (global, local-fixed or local-range)"))?
        .parse()?;
    let n_r = spec.plant.n_r();
    let r = match a.r.clone().or_else(|| f.r.as_ref().map(NumList::to_csv)) {
        Some(s) => csv_vec(&s)?,
        None => DVector::zeros(n_r),
    };
    let d = a.d.clone().or_else(|| f.d.as_ref().map(NumList::to_csv)).map(|s| csv_vec(&s)).transpose()?;
    if theorem != Theorem::Global && d.is_none() {
        bail!("--d is required for local certificates");
    }
    let mut cfg = VerifyConfig::new(theorem, r, d);
    if let Some(g) = a.gamma.or(f.gamma) {
        cfg.gamma = g;
    }
    if let Some(s) = a.sectors.clone().or_else(|| f.sectors.clone()) {
        cfg.sector_mode = match s.as_str() {
            "auto" => SectorMode::Auto,
            "anchored" => SectorMode::Anchored,
            "slope" => SectorMode::Slope,
            o => bail!("unknown sector mode `{o}` (auto, anchored or slope)"),
        };
    }
    cfg.solver = solver_options(&a.solver, f);

    let start = Instant::now();
    let v = verify(&spec, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();

    ensure_dir(&res.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| res.out.join("report.json"));
    let text = serde_json::to_string_pretty(&v.report(elapsed))? + "\n";
    write_file(&report_path, &text)?;
    if a.svg {
        let slices = default_slices(&spec, &SavedReport::from_value(&v.report(elapsed))?)?;
        let svg = slices_svg(&slices, &[], (0, 1), 256)?;
        write_file(&res.out.join("roa.svg"), &svg)?;
    }
    println!(
        "{}: {:?} ({}) in {:.3} s, report {}",
        theorem_name(theorem),
        v.status(),
        v.solution.message,
        elapsed,
        report_path.display()
    );
    Ok(v.exit_code() as u8)
}

fn solver_options(s: &SolverArgs, f: &FileConfig) -> SolverOptions {
    let mut o = SolverOptions::default();
    if let Some(b) = s.solver.clone().or_else(|| f.solver.clone()) {
        o.backend = b;
    }
    if let Some(t) = s.tol.or(f.tol) {
        o.tol = t;
    }
    o
}

fn theorem_name(t: Theorem) -> &'static str {
    match t {
        Theorem::Global => "global",
        Theorem::LocalFixed => "local-fixed",
        Theorem::LocalRange => "local-range",
    }
}

/// Fields of a verification report needed downstream.
#[derive(Debug, Deserialize)]
struct SavedReport {
    theorem: String,
    status: String,
    reference: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Option<Vec<Vec<f64>>>,
}

impl SavedReport {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read report {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid report {}", path.display()))
    }

    fn from_value(v: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v.clone())?)
    }

    fn p(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.p).map_err(|e| anyhow!("invalid P in report: {e}"))
    }

    fn joint(&self, spec: &LoopSpec) -> Result<Option<JointEllipsoid>> {
        let Some(q) = &self.q else { return Ok(None) };
        Ok(Some(JointEllipsoid::new(
            self.p()?,
            from_rows(q).map_err(|e| anyhow!("invalid Q in report: {e}"))?,
            DVector::from_vec(self.reference.clone()),
            spec.setpoints()?,
        )?))
    }

    fn feasible(&self) -> bool {
        self.status == "feasible"
    }
}

/// Slices at a few references across the admissible set, or the single ellipsoid of a fixed certificate.
fn default_slices(spec: &LoopSpec, rep: &SavedReport) -> Result<Vec<(String, Ellipsoid)>> {
    if !rep.feasible() {
        return Ok(Vec::new());
    }
    let r_nom = DVector::from_vec(rep.reference.clone());
    match rep.joint(spec)? {
        Some(j) => {
            let refs: Vec<DVector<f64>> = match j.admissible_references() {
                tracklmi_core::AdmissibleSet::Interval { lo, hi } => {
                    [-0.9, -0.5, 0.0, 0.5, 0.9].iter().map(|t| DVector::from_element(1, 0.5 * (lo + hi) + t * 0.5 * (hi - lo))).collect()
                }
                _ => vec![r_nom],
            };
            slices_at(&j, &refs)
        }
        None => {
            let center = spec.setpoints()?.xtil_star(&r_nom);
            let label = format!("r={}", fmt_vec(&r_nom));
            Ok(vec![(label, Ellipsoid::new(center, rep.p()?, 1.0)?)])
        }
    }
}

fn slices_at(j: &JointEllipsoid, refs: &[DVector<f64>]) -> Result<Vec<(String, Ellipsoid)>> {
    Ok(refs
        .iter()
        .filter_map(|r| match j.slice(r) {
            Slice::Ellipsoid(e) => Some((format!("r={}", fmt_vec(r)), e)),
            Slice::Empty => None,
        })
        .collect())
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",")
}

fn slices_svg(slices: &[(String, Ellipsoid)], traj: &[[f64; 2]], dims: (usize, usize), n: usize) -> Result<String> {
    let mut series = Vec::new();
    for (label, e) in slices {
        series.push(Series { label: label.clone(), kind: SeriesKind::Slice, points: e.boundary_polyline(dims, n)? });
    }
    if !traj.is_empty() {
        series.push(Series { label: "trajectory".into(), kind: SeriesKind::Trajectory, points: traj.to_vec() });
    }
    Ok(render_svg(&series, "Certified region of attraction", &format!("x[{}]", dims.0), &format!("x[{}]", dims.1)))
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    let res = resolve(&a.common)?;
    let f = &res.file;
    let spec = loop_spec(&res)?;
    let aug = spec.augmented()?;
    let n_r = spec.plant.n_r();
    let sched = match (a.schedule.clone().or_else(|| f.schedule.clone()), a.r.clone().or_else(|| f.r.as_ref().map(NumList::to_csv))) {
        (Some(p), _) => {
            let text = fs::read_to_string(&p).with_context(|| format!("cannot read schedule {}", p.display()))?;
            RefSchedule::from_json(&text)?
        }
        (None, Some(s)) => RefSchedule::constant(&csv_vec(&s)?),
        (None, None) => RefSchedule::constant(&DVector::zeros(n_r)),
    };
    sched.validate(Some(n_r))?;
    let steps = a.steps.or(f.steps).unwrap_or(500);
    let n_xt = aug.n_xtil();
    let x0 = match a.x0.clone().or_else(|| f.x0.as_ref().map(NumList::to_csv)) {
        Some(s) => {
            let v = parse_csv(&s)?;
            if v.len() == n_xt {
                DVector::from_vec(v)
            } else if v.len() == aug.n_x() {
                DVector::from_vec(v).push(0.0).resize_vertically(n_xt, 0.0)
            } else {
                bail!("--x0 needs {} (augmented) or {} (plant) entries, got {}", n_xt, aug.n_x(), v.len())
            }
        }
        None => spec.setpoints()?.xtil_star(&sched.at(0)),
    };
    let report_path = a.report.clone().or_else(|| f.report.clone());
    let report = report_path.as_deref().map(SavedReport::load).transpose()?;
    let governed = a.governor || f.governor.unwrap_or(false);
    let joint = match &report {
        Some(r) if r.feasible() => r.joint(&spec)?,
        _ => None,
    };

    let opts = SimOptions::default();
    let traj: Trajectory = if governed {
        let rep = report.as_ref().ok_or_else(|| anyhow!("--governor needs --report from a local-range verification"))?;
        if !rep.feasible() {
            bail!("report {} is not a certified result (status {})", report_path.unwrap().display(), rep.status);
        }
        let j = joint.as_ref().ok_or_else(|| anyhow!("--governor needs a local-range report (theorem {})", rep.theorem))?;
        let mut gcfg = GovernorConfig::default();
        if let Some(m) = a.governor_mode.clone().or_else(|| f.governor_mode.clone()) {
            gcfg.mode = match m.as_str() {
                "full" => GovernorMode::Full,
                "output-error" => GovernorMode::OutputError,
                o => bail!("unknown governor mode `{o}` (full or output-error)"),
            };
        }
        match simulate_with_governor(&aug, &spec.nn, j, &x0, &sched, steps, &gcfg, &opts) {
            Ok(t) => t,
            Err(tracklmi_core::Error::GovernorInfeasible) => {
                eprintln!("governor infeasible: the initial state lies outside every certified slice");
                return Ok(1);
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        simulate(&aug, &spec.nn, &x0, &sched, steps, &opts)?
    };

    ensure_dir(&res.out)?;
    let csv_path = res.out.join("trajectory.csv");
    write_file(&csv_path, &traj.to_csv())?;
    if a.svg {
        let dims = (0, 1.min(n_xt - 1));
        let pts: Vec<[f64; 2]> = traj.states.iter().map(|x| [x[dims.0], x[dims.1]]).collect();
        let slices = match (&joint, &report) {
            (Some(j), _) => {
                let mut refs: Vec<DVector<f64>> = Vec::new();
                let n = traj.applied_refs.len();
                for k in [0, n / 4, n / 2, 3 * n / 4, n - 1] {
                    let r = &traj.applied_refs[k];
                    if refs.iter().all(|q| (q - r).norm() > 1e-9) {
                        refs.push(r.clone());
                    }
                }
                slices_at(j, &refs)?
            }
            (None, Some(rep)) => default_slices(&spec, rep)?,
            (None, None) => Vec::new(),
        };
        write_file(&res.out.join("trajectory.svg"), &slices_svg(&slices, &pts, dims, 256)?)?;
    }
    let last = traj.len() - 1;
    println!(
        "{} steps, converged: {}{}, final error {:.3e}, final rhat [{}], governor fallbacks {}, csv {}",
        last,
        traj.converged,
        traj.converged_at.map(|k| format!(" at k={k}")).unwrap_or_default(),
        traj.errors[last],
        fmt_vec(traj.final_applied_ref()),
        traj.governor_fallbacks,
        csv_path.display()
    );
    Ok(if traj.diverged() { 1 } else { 0 })
}

fn cmd_bounds(a: BoundsArgs) -> Result<u8> {
    let res = resolve(&a.common)?;
    let f = &res.file;
    let d = a
        .d
        .clone()
        .or_else(|| f.d.as_ref().map(NumList::to_csv))
        .ok_or_else(|| anyhow!("--d is required"))?;
    let d = csv_vec(&d)?;
    let nn = &res.nn;
    let r = match a.r.clone().or_else(|| f.r.as_ref().map(NumList::to_csv)) {
        Some(s) => csv_vec(&s)?,
        None => DVector::zeros(nn.n_r()),
    };
    let anchor: LayerTrace = if res.plant.is_some() {
        let spec = loop_spec(&res)?;
        let ss = spec.setpoints()?.at(&r);
        nn.forward(&ss.x_star, &r)?
    } else {
        nn.forward(&DVector::zeros(nn.n_x()), &r)?
    };
    let rep = bounds_report(nn, &anchor, &d, a.slope)?;
    let text = serde_json::to_string_pretty(&rep)? + "\n";
    ensure_dir(&res.out)?;
    write_file(&res.out.join("bounds.json"), &text)?;
    print!("{text}");
    Ok(0)
}

fn cmd_roa_plot(a: RoaPlotArgs) -> Result<u8> {
    let res = resolve(&a.common)?;
    let spec = loop_spec(&res)?;
    let rep = SavedReport::load(&a.report)?;
    if !rep.feasible() {
        bail!("report {} holds no certified result (status {})", a.report.display(), rep.status);
    }
    let dims = parse_csv(&a.dims)?;
    if dims.len() != 2 || dims.iter().any(|d| *d < 0.0 || d.fract() != 0.0) {
        bail!("--dims needs two state indices, e.g. 0,1");
    }
    let dims = (dims[0] as usize, dims[1] as usize);
    let slices = if a.slices.is_empty() {
        default_slices(&spec, &rep)?
    } else {
        let j = rep.joint(&spec)?.ok_or_else(|| anyhow!("--slice needs a local-range report"))?;
        let refs = a.slices.iter().map(|s| csv_vec(s)).collect::<Result<Vec<_>>>()?;
        slices_at(&j, &refs)?
    };
    ensure_dir(&res.out)?;
    for (k, (label, e)) in slices.iter().enumerate() {
        let path = res.out.join(format!("roa_slice_{k}.csv"));
        write_file(&path, &polyline_csv(&e.boundary_polyline(dims, a.points)?))?;
        println!("{label}: {}", path.display());
    }
    let svg_path = res.out.join("roa.svg");
    write_file(&svg_path, &slices_svg(&slices, &[], dims, a.points)?)?;
    println!("{} slices, svg {}", slices.len(), svg_path.display());
    Ok(0)
}
