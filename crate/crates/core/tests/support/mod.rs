//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tracklmi_core::{
    assets, build_pendulum, Activation, FeedForwardNN, Layer, LoopSpec, PendulumParams, Plant,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn randn_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let v = randn_vec(rng, n, 1.0);
        let nv = v.norm();
        if nv > 1e-8 {
            return v / nv;
        }
    }
}

/// Uniform sample from the open unit ball.
pub fn unit_ball(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    let u: f64 = rng.gen();
    unit_vector(rng, n) * u.powf(1.0 / n as f64)
}

pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = randn(rng, n, n, 1.0);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

/// `L` with `L Lᵀ = P⁻¹`, so `(L a)ᵀ P (L a) = ‖a‖²`.
pub fn inv_sqrt_factor(p: &DMatrix<f64>) -> DMatrix<f64> {
    let pinv = p.clone().try_inverse().unwrap();
    let pinv = (&pinv + pinv.transpose()) * 0.5;
    Cholesky::new(pinv).unwrap().l()
}

pub fn lyap(p: &DMatrix<f64>, x: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let e = x - c;
    (e.transpose() * p * &e)[(0, 0)]
}

/// Smallest eigenvalue through nalgebra's symmetric eigensolver.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn random_network(
    rng: &mut impl Rng,
    n_x: usize,
    n_r: usize,
    n_u: usize,
    hidden: &[usize],
    act: Activation,
    scale: f64,
) -> FeedForwardNN {
    let mut nn = FeedForwardNN::zeros(n_x, n_r, n_u, hidden, act);
    nn.hx0 = randn(rng, n_x, n_x, 1.0);
    nn.hr0 = randn(rng, n_x, n_r, 0.5);
    let mut prev = n_x;
    nn.layers = hidden
        .iter()
        .map(|&n| {
            let l = Layer { w: randn(rng, n, prev, scale), b: randn_vec(rng, n, 0.1) };
            prev = n;
            l
        })
        .collect();
    nn.wl = randn(rng, n_u, prev, scale);
    nn.bl = randn_vec(rng, n_u, 0.1);
    nn
}

/// Affine network `u = K x + Kr r + c` with its gains, computed by plain matrix products.
pub fn random_affine_network(
    rng: &mut impl Rng,
    n_x: usize,
    n_r: usize,
    n_u: usize,
    hidden: &[usize],
) -> (FeedForwardNN, DMatrix<f64>) {
    let nn = random_network(rng, n_x, n_r, n_u, hidden, Activation::linear(), 0.5);
    let mut k = nn.hx0.clone();
    for l in &nn.layers {
        k = &l.w * k;
    }
    k = &nn.wl * k;
    (nn, k)
}

/// Closed-loop matrix of the augmented loop with an affine controller `u = K x + …`,
/// assembled directly from the plant data.
pub fn affine_closed_loop(plant: &Plant, k: &DMatrix<f64>, k_xi: &DMatrix<f64>) -> DMatrix<f64> {
    let nx = plant.a.nrows();
    let nr = plant.c.nrows();
    let mut m = DMatrix::zeros(nx + nr, nx + nr);
    m.view_mut((0, 0), (nx, nx)).copy_from(&(&plant.a + &plant.b * k));
    m.view_mut((0, nx), (nx, nr)).copy_from(&(&plant.b * k_xi));
    m.view_mut((nx, 0), (nr, nx)).copy_from(&(-&plant.c));
    m.view_mut((nx, nx), (nr, nr)).copy_from(&DMatrix::identity(nr, nr));
    m
}

pub fn pendulum_spec() -> LoopSpec {
    LoopSpec::new(
        build_pendulum(&PendulumParams::default()).unwrap(),
        assets::pendulum_network().unwrap(),
        DMatrix::identity(1, 1),
    )
    .unwrap()
}

/// Closest point to `r_des` of `{ r ∈ [lo, hi] : g(r) ≤ 0 }` from an `n`-point grid, with each
/// candidate boundary refined by bisection against its infeasible grid neighbour.
pub fn grid_argmin_1d(g: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize, r_des: f64) -> Option<f64> {
    if (lo..=hi).contains(&r_des) && g(r_des) <= 0.0 {
        return Some(r_des);
    }
    let h = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let feas: Vec<bool> = grid.iter().map(|&r| g(r) <= 0.0).collect();
    let refine = |mut a: f64, mut b: f64| {
        // a feasible, b infeasible
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if g(m) <= 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    // r_des itself is infeasible here, so it can serve as the infeasible bracket end
    let mut cands = Vec::new();
    if let Some(i) = (0..n).rev().find(|&i| feas[i] && grid[i] <= r_des) {
        let b = if i + 1 < n { grid[i + 1].min(r_des) } else { r_des };
        cands.push(refine(grid[i], b));
    }
    if let Some(i) = (0..n).find(|&i| feas[i] && grid[i] >= r_des) {
        let b = if i > 0 { grid[i - 1].max(r_des) } else { r_des };
        cands.push(refine(grid[i], b));
    }
    cands.into_iter().min_by(|a, b| (a - r_des).abs().total_cmp(&(b - r_des).abs()).then(a.total_cmp(b)))
}
