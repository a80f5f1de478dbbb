//! Solving LMI systems and certifying the result.
//!
//! A solve runs in two phases. Phase 1 looks for a strictly feasible point,
//! relaxing every margined block by `s·wₖ·I` and minimizing `s`. Phase 2 (only
//! when the system has an objective) optimizes from scratch with doubled margins
//! and falls back towards the phase-1 point whenever the optimizer's answer
//! does not pass certification. Every verdict of `Feasible` has been
//! re-checked by [`certify`] with an independent eigenvalue routine.

pub mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, min_eigenvalue};
use crate::lmi::{BlockKind, LmiSystem};
use ipm::{ConicBlock, ConicProblem, IpmOptions, IpmResult, IpmStatus};

/// Tolerance on nonnegative blocks during certification.
pub const NONNEG_TOL: f64 = 1e-12;

pub const DEFAULT_BACKEND: &str = "dense-ipm";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    pub backend: String,
    pub tol: f64,
    pub max_iter: usize,
    /// Bound on every scalar decision variable, `|yᵢ| ≤ box_bound`.
    pub box_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { backend: DEFAULT_BACKEND.into(), tol: 1e-8, max_iter: 150, box_bound: 1e6 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("solver tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.box_bound > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("box bound and iteration limit must be positive".into()));
        }
        backend(&self.backend).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    Inaccurate,
    SolverError,
}

/// Certification result for one block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockMargin {
    pub name: String,
    pub kind: BlockKind,
    /// Margin `δ` the block must clear.
    pub delta: f64,
    /// Smallest eigenvalue of the sign-corrected block minus `δ`.
    pub margin: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub passed: bool,
    pub margins: Vec<BlockMargin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub p: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub q: Option<DMatrix<f64>>,
    pub objective_value: f64,
    pub margins: Vec<BlockMargin>,
    /// Phase-1 optimum (or best bound on it), in absolute units.
    pub phase1_value: f64,
    pub iterations: usize,
    pub message: String,
}

/// Contract for conic backends: solve one [`ConicProblem`].
pub trait Backend {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &ConicProblem, opts: &IpmOptions, stop: Option<&dyn Fn(&DVector<f64>) -> bool>) -> IpmResult;
}

pub struct DenseIpm;

impl Backend for DenseIpm {
    fn name(&self) -> &'static str {
        DEFAULT_BACKEND
    }

    fn solve(&self, problem: &ConicProblem, opts: &IpmOptions, stop: Option<&dyn Fn(&DVector<f64>) -> bool>) -> IpmResult {
        ipm::solve(problem, opts, stop)
    }
}

pub fn backend(name: &str) -> Result<Box<dyn Backend>> {
    match name {
        DEFAULT_BACKEND => Ok(Box::new(DenseIpm)),
        other => Err(Error::UnknownBackend(other.into())),
    }
}

/// Re-substitutes the solution's `(P, Λ, Q)` into every block.
pub fn certify(system: &LmiSystem, solution: &SdpSolution) -> Certificate {
    let y = system.layout.pack(&solution.p, &solution.lambda, solution.q.as_ref());
    certify_point(system, &y)
}

pub fn certify_point(system: &LmiSystem, y: &DVector<f64>) -> Certificate {
    let margins: Vec<BlockMargin> = system
        .blocks
        .iter()
        .map(|b| {
            let delta = b.margin();
            let margin = b.margin_at(y, delta);
            let ok = match b.kind {
                BlockKind::NonNegative => margin >= -NONNEG_TOL,
                _ => margin >= 0.0,
            } && margin.is_finite();
            BlockMargin { name: b.name.clone(), kind: b.kind, delta, margin, ok }
        })
        .collect();
    let passed = margins.iter().all(|m| m.ok) && y.iter().all(|v| v.is_finite());
    Certificate { passed, margins }
}

/// Runs [`certify`] and downgrades a `Feasible` status that fails it.
pub fn certify_solution(system: &LmiSystem, mut solution: SdpSolution) -> SdpSolution {
    let cert = certify(system, &solution);
    solution.margins = cert.margins;
    if solution.status == SolveStatus::Feasible && !cert.passed {
        solution.status = SolveStatus::Inaccurate;
        solution.message = "solution failed independent certification".into();
    }
    solution
}

/// Phase-1 weights `wₖ`: strict blocks relax relative to their own margin,
/// nonnegative blocks relative to the smallest strict margin.
fn phase1_weights(system: &LmiSystem) -> (Vec<f64>, f64) {
    let delta_min = system
        .blocks
        .iter()
        .filter(|b| b.kind != BlockKind::NonNegative)
        .map(|b| b.margin())
        .fold(f64::INFINITY, f64::min);
    let delta_min = if delta_min.is_finite() { delta_min } else { crate::lmi::MARGIN_REL };
    let w = system
        .blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::NonNegative => 1.0,
            _ => b.margin() / delta_min,
        })
        .collect();
    (w, delta_min)
}

fn box_block(n_vars: usize, bound: f64) -> ConicBlock {
    let mut coeffs = Vec::with_capacity(n_vars);
    for i in 0..n_vars {
        let mut m = DMatrix::zeros(2 * n_vars, 2 * n_vars);
        m[(2 * i, 2 * i)] = 1.0;
        m[(2 * i + 1, 2 * i + 1)] = -1.0;
        coeffs.push((i, m));
    }
    ConicBlock { g0: DMatrix::identity(2 * n_vars, 2 * n_vars) * bound, coeffs }
}

/// Phase-1 certified relaxation `s(y) = maxₖ −λ_min(Gₖ(y)) / wₖ`.
fn phase1_value(system: &LmiSystem, weights: &[f64], y: &DVector<f64>) -> f64 {
    system
        .blocks
        .iter()
        .zip(weights)
        .map(|(b, w)| -b.margin_at(y, b.margin()) / w)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn phase2_problem(system: &LmiSystem, c: &DVector<f64>, bound: f64) -> ConicProblem {
    let m = system.n_vars();
    let mut blocks: Vec<ConicBlock> = system
        .blocks
        .iter()
        .map(|b| {
            let delta = match b.kind {
                BlockKind::NonNegative => crate::lmi::MARGIN_REL * (1.0 + linalg::inf_norm(&b.constant)),
                _ => 2.0 * b.margin(),
            };
            let (g0, coeffs) = b.psd_form(delta);
            ConicBlock { g0, coeffs }
        })
        .collect();
    blocks.push(box_block(m, bound));
    ConicProblem { n_vars: m, c: c.clone(), blocks }
}

/// Solves `system` and returns a certified solution.
pub fn solve(system: &LmiSystem, opts: &SolverOptions) -> Result<SdpSolution> {
    opts.validate()?;
    let be = backend(&opts.backend)?;
    let m = system.n_vars();
    let ipm_opts = IpmOptions { tol: opts.tol, max_iter: opts.max_iter };
    let (weights, delta_min) = phase1_weights(system);
    // Without constant terms, feasibility at margin δ is feasibility at any positive margin,
    // so phase 1 runs at unit scale where the relaxation value is resolvable.
    let homogeneous = system.blocks.iter().all(|b| b.constant.iter().all(|v| *v == 0.0));
    let scale = if homogeneous { 1.0 / delta_min } else { 1.0 };

    // phase 1: variables (y, s)
    let mut blocks: Vec<ConicBlock> = system
        .blocks
        .iter()
        .zip(&weights)
        .map(|(b, w)| {
            let (g0, mut coeffs) = b.psd_form(b.margin() * scale);
            coeffs.push((m, DMatrix::identity(b.dim(), b.dim()) * *w));
            ConicBlock { g0, coeffs }
        })
        .collect();
    blocks.push(box_block(m, opts.box_bound));
    blocks.push(ConicBlock {
        g0: DMatrix::from_element(1, 1, 1.0),
        coeffs: vec![(m, DMatrix::from_element(1, 1, 1.0))],
    });
    let mut c1 = DVector::zeros(m + 1);
    c1[m] = 1.0;
    let p1 = ConicProblem { n_vars: m + 1, c: c1, blocks };
    let stop = |ys: &DVector<f64>| phase1_value(system, &weights, &ys.rows(0, m).into_owned()) <= -delta_min;
    let r1 = be.solve(&p1, &ipm_opts, Some(&stop));
    let y1 = r1.y.rows(0, m).into_owned();
    let s1 = phase1_value(system, &weights, &y1);
    let mut iterations = r1.iterations;

    let blank = |status, message: String, y: &DVector<f64>, phase1: f64, its| {
        let sol = SdpSolution {
            status,
            p: system.layout.p(y),
            lambda: system.layout.lambda(y),
            q: system.layout.q(y),
            objective_value: system.objective.as_ref().map_or(0.0, |c| c.dot(y)),
            margins: vec![],
            phase1_value: phase1,
            iterations: its,
            message,
        };
        certify_solution(system, sol)
    };

    let feasible1 = s1 <= 0.0 && certify_point(system, &y1).passed;
    if !feasible1 {
        let threshold = 10.0 * opts.tol * delta_min * scale;
        // a dual-feasible iterate bounds the relaxation from below whether or not the primal converged
        let dual_bound = r1.dual_infeas <= opts.tol && r1.lower_bound > threshold;
        let (status, msg) = match r1.status {
            _ if dual_bound => (
                SolveStatus::Infeasible,
                format!("dual bound {:.3e} on the margin relaxation is positive", r1.lower_bound / scale),
            ),
            IpmStatus::Breakdown => (SolveStatus::SolverError, "numerical breakdown in phase 1".to_string()),
            IpmStatus::Converged => (
                SolveStatus::Inaccurate,
                "phase-1 optimum lies within tolerance of the strictness margin".to_string(),
            ),
            _ => (SolveStatus::Inaccurate, "phase 1 did not converge".to_string()),
        };
        let phase1 = if dual_bound { r1.lower_bound / scale } else { s1 };
        return Ok(blank(status, msg, &y1, phase1, iterations));
    }

    let Some(c) = system.objective.as_ref() else {
        return Ok(blank(SolveStatus::Feasible, "strictly feasible point found".into(), &y1, s1, iterations));
    };

    let r2 = be.solve(&phase2_problem(system, c, opts.box_bound), &ipm_opts, None);
    let near = r2.primal_infeas.max(r2.dual_infeas).max(r2.rel_gap) < 1e3 * opts.tol;
    let how = if r2.status == IpmStatus::Converged || near { "optimized" } else { "partially optimized" };
    iterations += r2.iterations;
    let mut best = y1.clone();
    let mut msg = "phase-1 point kept; optimizer output failed certification".to_string();
    if r2.y.iter().all(|v| v.is_finite()) {
        for theta in [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.5] {
            let y = &r2.y + (&y1 - &r2.y) * theta;
            if certify_point(system, &y).passed {
                if c.dot(&y) <= c.dot(&best) {
                    best = y;
                    msg = if theta == 0.0 {
                        how.to_string()
                    } else {
                        format!("{how}, pulled back by {theta:e} towards the phase-1 point")
                    };
                }
                break;
            }
        }
    }
    Ok(blank(SolveStatus::Feasible, msg, &best, s1, iterations))
}

/// Smallest eigenvalue of every block at a raw variable vector, without margins.
pub fn raw_min_eigenvalues(system: &LmiSystem, y: &DVector<f64>) -> Vec<(String, f64)> {
    system
        .blocks
        .iter()
        .map(|b| {
            let v = b.eval(y);
            let v = if b.kind == BlockKind::StrictNegative { -v } else { v };
            (b.name.clone(), min_eigenvalue(&v))
        })
        .collect()
}
