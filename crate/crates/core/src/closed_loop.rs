//! Closed-loop simulation and the reference governor.
//!
//! The governor replaces the desired reference `r` by the closest `r̂` with
//! `(x̃ₖ, r̂)` inside the certified joint set, so the state never leaves the
//! union of certified slices while the applied reference moves towards `r`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::network::FeedForwardNN;
use crate::plant::AugmentedPlant;
use crate::roa::{AdmissibleSet, JointEllipsoid};

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;
/// Trailing window over which the tracking error must stay below tolerance.
pub const CONVERGENCE_WINDOW: usize = 50;

/// `x̃⁺ = Ã x̃ + B̃ κ(x, r) + B_r r`
pub fn step(aug: &AugmentedPlant, nn: &FeedForwardNN, xt: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    let x = xt.rows(0, aug.n_x()).into_owned();
    &aug.a_til * xt + &aug.b_til * nn.output(&x, r) + &aug.b_r * r
}

/// Full plant input `u = k_ξ ξ + κ(x, r)`.
pub fn control_input(aug: &AugmentedPlant, nn: &FeedForwardNN, xt: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    let nx = aug.n_x();
    let x = xt.rows(0, nx).into_owned();
    let xi = xt.rows(nx, aug.n_r()).into_owned();
    &aug.k_xi * xi + nn.output(&x, r)
}

/// Piecewise-constant reference: `(k_start, r)` pairs sorted by `k_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefSchedule {
    pub segments: Vec<(usize, Vec<f64>)>,
}

impl RefSchedule {
    pub fn constant(r: &DVector<f64>) -> Self {
        Self { segments: vec![(0, r.iter().cloned().collect())] }
    }

    /// Parses `[[k_start, r], ...]` where `r` is a number or a list.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum RefValue {
            Scalar(f64),
            Vector(Vec<f64>),
        }
        let raw: Vec<(usize, RefValue)> = serde_json::from_str(text)?;
        let segments: Vec<(usize, Vec<f64>)> = raw
            .into_iter()
            .map(|(k, v)| match v {
                RefValue::Scalar(x) => (k, vec![x]),
                RefValue::Vector(x) => (k, x),
            })
            .collect();
        let sched = Self { segments };
        sched.validate(None)?;
        Ok(sched)
    }

    pub fn validate(&self, n_r: Option<usize>) -> Result<()> {
        let Some(first) = self.segments.first() else {
            return Err(Error::Parse("reference schedule is empty".into()));
        };
        if first.0 != 0 {
            return Err(Error::Parse("reference schedule must start at k = 0".into()));
        }
        let dim = n_r.unwrap_or(first.1.len());
        for w in self.segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Parse("reference schedule start steps must increase".into()));
            }
        }
        if self.segments.iter().any(|(_, r)| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::DimensionMismatch(format!("every scheduled reference must have {dim} finite entries")));
        }
        Ok(())
    }

    pub fn at(&self, k: usize) -> DVector<f64> {
        let seg = self.segments.iter().rev().find(|(s, _)| *s <= k).unwrap_or(&self.segments[0]);
        DVector::from_vec(seg.1.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOptions {
    /// Tracking-error threshold for the convergence flag.
    pub tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { tol: 1e-6 }
    }
}

/// Recorded closed-loop run; index `k` runs over `0..=steps` (fewer after divergence).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub applied_refs: Vec<DVector<f64>>,
    pub desired_refs: Vec<DVector<f64>>,
    /// `‖yₖ − r̂ₖ‖`
    pub errors: Vec<f64>,
    /// Joint-set margins along governed runs.
    pub joint_margins: Vec<f64>,
    pub converged: bool,
    /// First step from which the error stays below tolerance.
    pub converged_at: Option<usize>,
    pub diverged_at: Option<usize>,
    /// Steps at which the governor fell back to the previous reference.
    pub governor_fallbacks: usize,
}

impl Trajectory {
    fn new() -> Self {
        Self {
            states: vec![],
            inputs: vec![],
            outputs: vec![],
            applied_refs: vec![],
            desired_refs: vec![],
            errors: vec![],
            joint_margins: vec![],
            converged: false,
            converged_at: None,
            diverged_at: None,
            governor_fallbacks: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is nonempty")
    }

    pub fn final_applied_ref(&self) -> &DVector<f64> {
        self.applied_refs.last().expect("trajectory is nonempty")
    }

    fn finish(&mut self, tol: f64) {
        if self.diverged() {
            return;
        }
        let n = self.errors.len();
        let window = CONVERGENCE_WINDOW.min(n);
        self.converged = n > 0 && self.errors[n - window..].iter().all(|e| *e < tol);
        if self.converged {
            let mut k = n;
            while k > 0 && self.errors[k - 1] < tol {
                k -= 1;
            }
            self.converged_at = Some(k);
        }
    }

    /// CSV with header `k, xtil_*, u_*, y_*, rhat_*`.
    pub fn to_csv(&self) -> String {
        let (nx, nu, ny) = (
            self.states.first().map_or(0, |s| s.len()),
            self.inputs.first().map_or(0, |s| s.len()),
            self.outputs.first().map_or(0, |s| s.len()),
        );
        let mut header = vec!["k".to_string()];
        header.extend((1..=nx).map(|i| format!("xtil_{i}")));
        header.extend((1..=nu).map(|i| format!("u_{i}")));
        header.extend((1..=ny).map(|i| format!("y_{i}")));
        header.extend((1..=ny).map(|i| format!("rhat_{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.states.len() {
            let mut row = vec![k.to_string()];
            for v in [&self.states[k], &self.inputs[k], &self.outputs[k], &self.applied_refs[k]] {
                row.extend(v.iter().map(|x| format!("{x:e}")));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn record(
    traj: &mut Trajectory,
    aug: &AugmentedPlant,
    nn: &FeedForwardNN,
    xt: &DVector<f64>,
    r_hat: &DVector<f64>,
    r_des: &DVector<f64>,
) {
    let y = &aug.c_til * xt;
    traj.errors.push((&y - r_hat).norm());
    traj.inputs.push(control_input(aug, nn, xt, r_hat));
    traj.outputs.push(y);
    traj.states.push(xt.clone());
    traj.applied_refs.push(r_hat.clone());
    traj.desired_refs.push(r_des.clone());
}

fn check_sim_dims(aug: &AugmentedPlant, nn: &FeedForwardNN, x0: &DVector<f64>, sched: &RefSchedule) -> Result<()> {
    nn.check_dims(aug.n_x(), aug.n_r(), aug.b_til.ncols())?;
    if x0.len() != aug.n_xtil() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            aug.n_xtil()
        )));
    }
    sched.validate(Some(aug.n_r()))
}

pub fn simulate(
    aug: &AugmentedPlant,
    nn: &FeedForwardNN,
    x0: &DVector<f64>,
    sched: &RefSchedule,
    steps: usize,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter("simulation needs at least one step".into()));
    }
    check_sim_dims(aug, nn, x0, sched)?;
    let mut traj = Trajectory::new();
    let mut xt = x0.clone();
    for k in 0..=steps {
        let r = sched.at(k);
        record(&mut traj, aug, nn, &xt, &r, &r);
        if k == steps {
            break;
        }
        xt = step(aug, nn, &xt, &r);
        if !(xt.norm() <= DIVERGENCE_NORM) {
            traj.diverged_at = Some(k + 1);
            break;
        }
    }
    traj.finish(opts.tol);
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GovernorMode {
    /// Joint constraint with the reference term.
    Full,
    /// `P`-only constraint for output-error networks, whose certificate holds for every reference.
    OutputError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GovernorOptimizer {
    /// Chooses by reference dimension.
    Auto,
    GridGolden,
    ProjectedDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GovernorConfig {
    pub mode: GovernorMode,
    pub optimizer: GovernorOptimizer,
    /// Width to which feasibility boundaries are bisected.
    pub tol: f64,
    /// Grid points across the admissible interval in 1-D.
    pub grid: usize,
}

impl Default for GovernorConfig {
    fn default() -> Self {
        Self { mode: GovernorMode::Full, optimizer: GovernorOptimizer::Auto, tol: 1e-13, grid: 256 }
    }
}

impl GovernorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.grid < 2 {
            return Err(Error::InvalidParameter("governor tolerance must be positive and the grid at least 2 points".into()));
        }
        Ok(())
    }
}

/// Constraint `g(r) ≤ 0` of the governor problem at a fixed state.
fn constraint<'a>(j: &'a JointEllipsoid, xt: &'a DVector<f64>, mode: GovernorMode) -> impl Fn(&DVector<f64>) -> f64 + 'a {
    move |r| match mode {
        GovernorMode::Full => j.value(xt, r) - 1.0,
        GovernorMode::OutputError => quad_form(&j.p, &(xt - j.setpoints.xtil_star(r))) - 1.0,
    }
}

/// Surrogate reference `r̂ = argmin ‖r − r̂‖²` subject to the certified set.
pub fn govern(j: &JointEllipsoid, xt: &DVector<f64>, r_des: &DVector<f64>, cfg: &GovernorConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    if r_des.len() != j.n_r() || xt.len() != j.p.nrows() {
        return Err(Error::DimensionMismatch("governor query does not match the joint set".into()));
    }
    if cfg.mode == GovernorMode::OutputError {
        let c = DMatrix::from_fn(j.n_r(), j.setpoints.map.m.nrows(), |i, k| -j.setpoints.nn.hx0[(i, k)]);
        if !j.setpoints.nn.io_maps(&c).output_error_feedback {
            return Err(Error::InvalidParameter("output-error governor needs an output-error network".into()));
        }
        return govern_output_error(j, xt, r_des);
    }
    let g = constraint(j, xt, cfg.mode);
    if g(r_des) <= 0.0 {
        return Ok(r_des.clone());
    }
    let use_grid = match cfg.optimizer {
        GovernorOptimizer::Auto => j.n_r() == 1,
        GovernorOptimizer::GridGolden => true,
        GovernorOptimizer::ProjectedDescent => false,
    };
    if use_grid {
        if j.n_r() != 1 {
            return Err(Error::InvalidParameter("grid governor needs a scalar reference".into()));
        }
        let AdmissibleSet::Interval { lo, hi } = j.admissible_references() else { unreachable!() };
        let g1 = |r: f64| g(&DVector::from_element(1, r));
        let segs = feasible_segments(&g1, lo, hi, cfg.grid, cfg.tol);
        let p = project_onto_segments(&segs, r_des[0]).ok_or(Error::GovernorInfeasible)?;
        if g1(p) <= 0.0 {
            return Ok(DVector::from_element(1, p));
        }
        // r_des sits in an infeasible pocket the grid stepped over
        let (a, b) = *segs.iter().find(|(a, b)| *a <= p && p <= *b).unwrap();
        let left = bisect_boundary(&g1, a, p, cfg.tol);
        let right = bisect_boundary(&g1, b, p, cfg.tol);
        let r = if (p - left).abs() <= (right - p).abs() { left } else { right };
        Ok(DVector::from_element(1, r))
    } else {
        projected_descent(j, &g, r_des, cfg.tol)
    }
}

/// Feasible sub-intervals of `{ r ∈ [lo, hi] : g(r) ≤ 0 }`, endpoints feasible.
pub(crate) fn feasible_segments(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize, tol: f64) -> Vec<(f64, f64)> {
    let grid: Vec<f64> = (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&r| g(r)).collect();
    let mut seeds: Vec<f64> = grid.iter().zip(&vals).filter(|(_, v)| **v <= 0.0).map(|(r, _)| *r).collect();

    // feasible pockets between grid points around infeasible local minima
    for k in 0..n {
        let left = if k > 0 { vals[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < n { vals[k + 1] } else { f64::INFINITY };
        if vals[k] > 0.0 && vals[k] <= left && vals[k] <= right {
            let (a, b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(n - 1)]);
            if let Some(r) = golden_argmin(g, a, b) {
                if g(r) <= 0.0 {
                    seeds.push(r);
                }
            }
        }
    }
    seeds.sort_by(f64::total_cmp);

    let mut segs: Vec<(f64, f64)> = Vec::new();
    for s in seeds {
        if segs.last().is_some_and(|&(_, b)| s <= b) {
            continue;
        }
        let a = extend(g, s, lo, tol);
        let b = extend(g, s, hi, tol);
        match segs.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => segs.push((a, b)),
        }
    }
    segs
}

/// Walks from feasible `s` towards `limit` and bisects the first crossing.
fn extend(g: &dyn Fn(f64) -> f64, s: f64, limit: f64, tol: f64) -> f64 {
    if s == limit {
        return s;
    }
    let n = 64;
    let mut feas = s;
    for k in 1..=n {
        let t = if k == n { limit } else { s + (limit - s) * k as f64 / n as f64 };
        if g(t) <= 0.0 {
            feas = t;
        } else {
            return bisect_boundary(g, feas, t, tol);
        }
    }
    feas
}

/// Bisects between a feasible `feas` and an infeasible `infeas`; returns the feasible end.
fn bisect_boundary(g: &dyn Fn(f64) -> f64, mut feas: f64, mut infeas: f64, tol: f64) -> f64 {
    while (infeas - feas).abs() > tol * (1.0 + feas.abs()) {
        let mid = 0.5 * (feas + infeas);
        if mid == feas || mid == infeas {
            break;
        }
        if g(mid) <= 0.0 {
            feas = mid;
        } else {
            infeas = mid;
        }
    }
    feas
}

fn golden_argmin(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> Option<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    let mut best = if fc < fd { (c, fc) } else { (d, fd) };
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d);
        }
        for (x, f) in [(c, fc), (d, fd)] {
            if f < best.1 {
                best = (x, f);
            }
        }
        if best.1 <= 0.0 {
            break;
        }
    }
    best.0.is_finite().then_some(best.0)
}

/// Nearest point of a union of intervals; ties go to the smaller value.
pub(crate) fn project_onto_segments(segs: &[(f64, f64)], r: f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(a, b) in segs {
        let p = r.clamp(a, b);
        let dist = (p - r).abs();
        if best.map_or(true, |(bd, bp)| dist < bd || (dist == bd && p < bp)) {
            best = Some((dist, p));
        }
    }
    best.map(|(_, p)| p)
}

/// Multi-start descent for vector references: move along the segment from a
/// feasible anchor towards `r_des`, then slide along the boundary.
fn projected_descent(j: &JointEllipsoid, g: &dyn Fn(&DVector<f64>) -> f64, r_des: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let nr = j.n_r();
    let mut anchors = vec![j.r_nom.clone()];
    if let AdmissibleSet::Ellipsoid { semi_axes, directions, .. } = j.admissible_references() {
        for frac in [0.25, 0.5, 0.75, 0.95] {
            for (a, dir) in semi_axes.iter().zip(&directions) {
                let d = DVector::from_vec(dir.clone());
                anchors.push(&j.r_nom + &d * (a * frac));
                anchors.push(&j.r_nom - &d * (a * frac));
            }
        }
    }
    let feasible: Vec<DVector<f64>> = anchors.into_iter().filter(|r| g(r) <= 0.0).collect();
    if feasible.is_empty() {
        return Err(Error::GovernorInfeasible);
    }
    let along = |from: &DVector<f64>, to: &DVector<f64>| -> DVector<f64> {
        let gt = |t: f64| g(&(from + (to - from) * t));
        let t = extend(&gt, 0.0, 1.0, tol);
        from + (to - from) * t
    };
    let mut best: Option<DVector<f64>> = None;
    for a in &feasible {
        let mut r = along(a, r_des);
        for _ in 0..200 {
            let h = 1e-7 * (1.0 + r.norm());
            let grad = DVector::from_fn(nr, |i, _| {
                let mut e = DVector::zeros(nr);
                e[i] = h;
                (g(&(&r + &e)) - g(&(&r - &e))) / (2.0 * h)
            });
            let want = r_des - &r;
            let gn = grad.norm_squared();
            let tangent = if gn > 0.0 { &want - &grad * (want.dot(&grad) / gn) } else { want.clone() };
            if tangent.norm() <= 1e-12 * (1.0 + r.norm()) {
                break;
            }
            let mut stepped = false;
            let mut s = 1.0;
            while s > 1e-12 {
                let trial = along(&r, &(&r + &tangent * s));
                let cand = along(&trial, r_des);
                if (r_des - &cand).norm() < (r_des - &r).norm() - 1e-15 {
                    r = cand;
                    stepped = true;
                    break;
                }
                s *= 0.5;
            }
            if !stepped {
                break;
            }
        }
        let better = best.as_ref().map_or(true, |b| {
            let (db, dr) = ((r_des - b).norm(), (r_des - &r).norm());
            dr < db || (dr == db && lex_less(&r, b))
        });
        if better {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// For output-error networks `x̃_*(r) = x̃_*(0) + T r` exactly, so the feasible
/// references form an ellipsoid and the governor is a Euclidean projection onto it.
fn govern_output_error(j: &JointEllipsoid, xt: &DVector<f64>, r_des: &DVector<f64>) -> Result<DVector<f64>> {
    let nr = j.n_r();
    let c0 = j.setpoints.xtil_star(&DVector::zeros(nr));
    let t = DMatrix::from_fn(c0.len(), nr, |i, k| {
        let mut e = DVector::zeros(nr);
        e[k] = 1.0;
        j.setpoints.xtil_star(&e)[i] - c0[i]
    });
    // (e − T r)ᵀ P (e − T r) ≤ 1 with e = x̃ − x̃_*(0)
    let e = xt - c0;
    let h = t.transpose() * &j.p * &t;
    let b = t.transpose() * &j.p * &e;
    let hinv = h.clone().try_inverse().ok_or(Error::GovernorInfeasible)?;
    let center = &hinv * &b;
    let rho = 1.0 - (quad_form(&j.p, &e) - b.dot(&center));
    if rho < 0.0 {
        return Err(Error::GovernorInfeasible);
    }
    let gval = |r: &DVector<f64>| quad_form(&h, &(r - &center)) - rho;
    if gval(r_des) <= 0.0 {
        return Ok(r_des.clone());
    }
    // projection: r(μ) = (I + μH)⁻¹ (r_des + μ H c), bisect on μ ≥ 0
    let id = DMatrix::identity(nr, nr);
    let at = |mu: f64| -> DVector<f64> {
        let lhs = &id + &h * mu;
        lhs.lu().solve(&(r_des + &h * &center * mu)).expect("positive definite system")
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while gval(&at(hi)) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(center);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gval(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(hi))
}

/// Runs the loop with the governor choosing the applied reference at every step.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with_governor(
    aug: &AugmentedPlant,
    nn: &FeedForwardNN,
    j: &JointEllipsoid,
    x0: &DVector<f64>,
    sched: &RefSchedule,
    steps: usize,
    cfg: &GovernorConfig,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter("simulation needs at least one step".into()));
    }
    check_sim_dims(aug, nn, x0, sched)?;
    let mut traj = Trajectory::new();
    let mut xt = x0.clone();
    let mut prev: Option<DVector<f64>> = None;
    for k in 0..=steps {
        let r_des = sched.at(k);
        let r_hat = match govern(j, &xt, &r_des, cfg) {
            Ok(r) => r,
            Err(Error::GovernorInfeasible) if prev.is_some() => {
                traj.governor_fallbacks += 1;
                prev.clone().unwrap()
            }
            Err(e) => return Err(e),
        };
        traj.joint_margins.push(match cfg.mode {
            GovernorMode::Full => j.margin(&xt, &r_hat),
            GovernorMode::OutputError => 1.0 - quad_form(&j.p, &(&xt - j.setpoints.xtil_star(&r_hat))),
        });
        record(&mut traj, aug, nn, &xt, &r_hat, &r_des);
        if k == steps {
            break;
        }
        xt = step(aug, nn, &xt, &r_hat);
        prev = Some(r_hat);
        if !(xt.norm() <= DIVERGENCE_NORM) {
            traj.diverged_at = Some(k + 1);
            break;
        }
    }
    traj.finish(opts.tol);
    Ok(traj)
}
