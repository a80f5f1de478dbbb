//! Dense infeasible-start primal-dual interior-point method (HKM direction,
//! Mehrotra predictor-corrector) for
//!
//! ```text
//! min cᵀy   s.t.   G_k(y) = G0_k + Σᵢ yᵢ G_ik ⪰ 0,   k = 1..K
//! ```
//!
//! The associated primal is `max −Σ tr(G0_k X_k)` s.t. `Σ_k tr(G_ik X_k) = cᵢ`,
//! `X_k ⪰ 0`, so any primal-feasible `X` gives the lower bound `−Σ tr(G0_k X_k)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::symmetrize;

#[derive(Debug, Clone)]
pub struct ConicBlock {
    pub g0: DMatrix<f64>,
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl ConicBlock {
    pub fn dim(&self) -> usize {
        self.g0.nrows()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.g0.clone();
        for (i, gi) in &self.coeffs {
            m += gi * y[*i];
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub n_vars: usize,
    pub c: DVector<f64>,
    pub blocks: Vec<ConicBlock>,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    /// The caller's stopping predicate accepted the current `y`.
    Stopped,
    MaxIter,
    /// Loss of positive definiteness or a singular Schur complement.
    Breakdown,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    pub y: DVector<f64>,
    pub x: Vec<DMatrix<f64>>,
    /// `cᵀy`
    pub objective: f64,
    /// `−Σ tr(G0_k X_k)`; a valid bound on the optimum when `X` is primal feasible.
    pub lower_bound: f64,
    pub iterations: usize,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub rel_gap: f64,
}

/// `tr(A B)` for symmetric `B`.
#[inline]
fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn chol(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

/// Largest step `α` with `M + α dM ⪰ 0`, given the Cholesky factor of `M`.
fn max_step(ch: &Cholesky<f64, Dyn>, dm: &DMatrix<f64>) -> f64 {
    let l = ch.l();
    let Some(t) = l.solve_lower_triangular(dm) else { return 0.0 };
    let Some(s) = l.solve_lower_triangular(&t.transpose()) else { return 0.0 };
    let lmin = crate::linalg::min_eigenvalue(&s);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct Workspace<'a> {
    p: &'a ConicProblem,
}

impl<'a> Workspace<'a> {
    fn primal_residual(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut rp = self.p.c.clone();
        for (blk, xk) in self.p.blocks.iter().zip(x) {
            for (i, gi) in &blk.coeffs {
                rp[*i] -= trace_prod(gi, xk);
            }
        }
        rp
    }

    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.p.n_vars;
        let mut schur = DMatrix::zeros(m, m);
        for ((blk, xk), zi) in self.p.blocks.iter().zip(x).zip(zinv) {
            for (j, gj) in &blk.coeffs {
                let t = (xk * gj * zi).transpose();
                for (i, gi) in &blk.coeffs {
                    if i <= j {
                        schur[(*i, *j)] += trace_prod(gi, &t);
                    }
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        schur
    }

    /// Newton direction for the given centering targets `k_mats`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        schur_solve: &dyn Fn(&DVector<f64>) -> Option<DVector<f64>>,
        x: &[DMatrix<f64>],
        zinv: &[DMatrix<f64>],
        rd: &[DMatrix<f64>],
        rp: &DVector<f64>,
        k_mats: &[DMatrix<f64>],
    ) -> Option<(Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>)> {
        let mut h = -rp.clone();
        let mut rhs_mats = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let r = &k_mats[k] - &x[k] * &rd[k] * &zinv[k];
            rhs_mats.push(r);
        }
        for (blk, r) in self.p.blocks.iter().zip(&rhs_mats) {
            for (i, gi) in &blk.coeffs {
                h[*i] += trace_prod(gi, &r.transpose());
            }
        }
        let dy = schur_solve(&h)?;
        let mut dz = Vec::with_capacity(x.len());
        let mut dx = Vec::with_capacity(x.len());
        for (k, blk) in self.p.blocks.iter().enumerate() {
            let mut d = rd[k].clone();
            for (i, gi) in &blk.coeffs {
                d += gi * dy[*i];
            }
            let d = symmetrize(&d);
            dx.push(symmetrize(&(&k_mats[k] - &x[k] * &d * &zinv[k])));
            dz.push(d);
        }
        Some((dx, dy, dz))
    }
}

fn step_lengths(
    x_ch: &[Cholesky<f64, Dyn>],
    z_ch: &[Cholesky<f64, Dyn>],
    dx: &[DMatrix<f64>],
    dz: &[DMatrix<f64>],
) -> (f64, f64) {
    let ap = x_ch.iter().zip(dx).map(|(c, d)| max_step(c, d)).fold(f64::INFINITY, f64::min);
    let ad = z_ch.iter().zip(dz).map(|(c, d)| max_step(c, d)).fold(f64::INFINITY, f64::min);
    (ap, ad)
}

pub fn solve(
    problem: &ConicProblem,
    opts: &IpmOptions,
    stop: Option<&dyn Fn(&DVector<f64>) -> bool>,
) -> IpmResult {
    let ws = Workspace { p: problem };
    let m = problem.n_vars;
    let n_total: usize = problem.blocks.iter().map(|b| b.dim()).sum();
    let c_norm = problem.c.norm();
    let g0_norm = problem.blocks.iter().map(|b| b.g0.norm_squared()).sum::<f64>().sqrt();

    let mut x = Vec::with_capacity(problem.blocks.len());
    let mut z = Vec::with_capacity(problem.blocks.len());
    for blk in &problem.blocks {
        let n = blk.dim();
        let sn = (n as f64).sqrt();
        let mut xi = 10.0_f64.max(sn);
        let mut eta = 10.0_f64.max(sn).max(blk.g0.norm());
        for (i, gi) in &blk.coeffs {
            let gn = gi.norm();
            xi = xi.max(sn * (1.0 + problem.c[*i].abs()) / (1.0 + gn));
            eta = eta.max(gn);
        }
        x.push(DMatrix::identity(n, n) * xi);
        z.push(DMatrix::identity(n, n) * eta);
    }
    let mut y = DVector::zeros(m);

    let result = |status, y: &DVector<f64>, x: &[DMatrix<f64>], it, pinf, dinf, gap| IpmResult {
        status,
        y: y.clone(),
        x: x.to_vec(),
        objective: problem.c.dot(y),
        lower_bound: -problem.blocks.iter().zip(x).map(|(b, xk)| trace_prod(&b.g0, xk)).sum::<f64>(),
        iterations: it,
        primal_infeas: pinf,
        dual_infeas: dinf,
        rel_gap: gap,
    };

    let (mut pinf, mut dinf, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for it in 0..opts.max_iter {
        let rp = ws.primal_residual(&x);
        let rd: Vec<DMatrix<f64>> = problem
            .blocks
            .iter()
            .zip(&z)
            .map(|(b, zk)| symmetrize(&(b.eval(&y) - zk)))
            .collect();
        let mu = x.iter().zip(&z).map(|(a, b)| trace_prod(a, b)).sum::<f64>() / n_total as f64;
        let obj = problem.c.dot(&y);
        let lb = -problem.blocks.iter().zip(&x).map(|(b, xk)| trace_prod(&b.g0, xk)).sum::<f64>();
        pinf = rp.norm() / (1.0 + c_norm);
        dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + g0_norm);
        gap = (mu * n_total as f64) / (1.0 + obj.abs() + lb.abs());

        if pinf < opts.tol && dinf < opts.tol && gap < opts.tol {
            return result(IpmStatus::Converged, &y, &x, it, pinf, dinf, gap);
        }
        if let Some(f) = stop {
            if f(&y) {
                return result(IpmStatus::Stopped, &y, &x, it, pinf, dinf, gap);
            }
        }

        let (Some(x_ch), Some(z_ch)) = (
            x.iter().map(chol).collect::<Option<Vec<_>>>(),
            z.iter().map(chol).collect::<Option<Vec<_>>>(),
        ) else {
            return result(IpmStatus::Breakdown, &y, &x, it, pinf, dinf, gap);
        };
        let zinv: Vec<DMatrix<f64>> = z_ch.iter().map(|c| symmetrize(&c.inverse())).collect();

        let schur = ws.schur(&x, &zinv);
        let schur_ch = Cholesky::new(schur.clone());
        let schur_lu = if schur_ch.is_none() { Some(schur.clone().lu()) } else { None };
        let schur_solve = |h: &DVector<f64>| -> Option<DVector<f64>> {
            let s = match (&schur_ch, &schur_lu) {
                (Some(ch), _) => ch.solve(h),
                (None, Some(lu)) => lu.solve(h)?,
                _ => return None,
            };
            s.iter().all(|v| v.is_finite()).then_some(s)
        };

        // predictor
        let k_aff: Vec<DMatrix<f64>> = x.iter().map(|xk| -xk).collect();
        let Some((dxa, _, dza)) = ws.direction(&schur_solve, &x, &zinv, &rd, &rp, &k_aff) else {
            return result(IpmStatus::Breakdown, &y, &x, it, pinf, dinf, gap);
        };
        let (ap, ad) = step_lengths(&x_ch, &z_ch, &dxa, &dza);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = x
            .iter()
            .zip(&z)
            .zip(dxa.iter().zip(&dza))
            .map(|((xk, zk), (dxk, dzk))| trace_prod(&(xk + dxk * ap), &(zk + dzk * ad)))
            .sum::<f64>()
            / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let k_cor: Vec<DMatrix<f64>> = (0..x.len())
            .map(|k| &zinv[k] * (sigma * mu) - &x[k] - &dxa[k] * &dza[k] * &zinv[k])
            .collect();
        let Some((dx, dy, dz)) = ws.direction(&schur_solve, &x, &zinv, &rd, &rp, &k_cor) else {
            return result(IpmStatus::Breakdown, &y, &x, it, pinf, dinf, gap);
        };
        let (ap, ad) = step_lengths(&x_ch, &z_ch, &dx, &dz);
        let tau = if it < 5 { 0.9 } else { 0.98 };
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        if !(ap > 0.0 && ad > 0.0) {
            return result(IpmStatus::Breakdown, &y, &x, it, pinf, dinf, gap);
        }
        for k in 0..x.len() {
            x[k] = symmetrize(&(&x[k] + &dx[k] * ap));
            z[k] = symmetrize(&(&z[k] + &dz[k] * ad));
        }
        y += dy * ad;
    }
    result(IpmStatus::MaxIter, &y, &x, opts.max_iter, pinf, dinf, gap)
}
