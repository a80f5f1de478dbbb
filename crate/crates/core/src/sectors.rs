//! Interval bounds on pre-activations and local incremental sector bounds.
//!
//! Given a box `v¹ ∈ [v¹_* − d, v¹_* + d]` for the first hidden layer, later
//! layers are bounded by sign-split interval arithmetic. For every neuron the
//! chord slope `(φ(v) − φ(v_*)) / (v − v_*)` over its interval is then enclosed
//! in `[α_φ, β_φ] ⊆ [α, β]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Activation, ActivationKind, FeedForwardNN, LayerTrace};

/// Grid resolution used to locate chord extrema before refinement.
pub const CHORD_GRID: usize = 1024;
/// Outward widening applied to every computed sector.
pub const SECTOR_WIDENING: f64 = 1e-12;

/// Per-layer intervals for pre- and post-activations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundBox {
    pub v_lo: Vec<DVector<f64>>,
    pub v_hi: Vec<DVector<f64>>,
    pub w_lo: Vec<DVector<f64>>,
    pub w_hi: Vec<DVector<f64>>,
}

impl BoundBox {
    pub fn contains_v(&self, layer: usize, v: &DVector<f64>, tol: f64) -> bool {
        v.iter()
            .enumerate()
            .all(|(j, &x)| x >= self.v_lo[layer][j] - tol && x <= self.v_hi[layer][j] + tol)
    }
}

/// Stacked per-neuron sector bounds (`α_φ`, `β_φ` as vectors of length `n`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorBounds {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl SectorBounds {
    /// The global bounds `[α, β]` repeated for `n` neurons.
    pub fn global(activation: &Activation, n: usize) -> Self {
        Self {
            alpha: DVector::from_element(n, activation.alpha),
            beta: DVector::from_element(n, activation.beta),
        }
    }

    pub fn alpha_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.alpha)
    }

    pub fn beta_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.beta)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Broadcasts a scalar half-width to all first-layer neurons.
pub fn uniform_d(d: f64, n1: usize) -> DVector<f64> {
    DVector::from_element(n1, d)
}

pub fn propagate_box(nn: &FeedForwardNN, v1_center: &DVector<f64>, d: &DVector<f64>) -> Result<BoundBox> {
    nn.validate()?;
    let n1 = nn.neuron_counts()[0];
    if v1_center.len() != n1 || d.len() != n1 {
        return Err(Error::DimensionMismatch(format!(
            "first layer has {n1} neurons; center has length {} and d has length {}",
            v1_center.len(),
            d.len()
        )));
    }
    if let Some((index, &value)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveD { index, value });
    }
    let act = nn.activation;
    let mut bb = BoundBox { v_lo: vec![], v_hi: vec![], w_lo: vec![], w_hi: vec![] };
    let mut lo = v1_center - d;
    let mut hi = v1_center + d;
    for (i, layer) in nn.layers.iter().enumerate() {
        if i > 0 {
            let wl = &bb.w_lo[i - 1];
            let wh = &bb.w_hi[i - 1];
            let pos = layer.w.map(|x| x.max(0.0));
            let neg = layer.w.map(|x| x.min(0.0));
            lo = &pos * wl + &neg * wh + &layer.b;
            hi = &pos * wh + &neg * wl + &layer.b;
        }
        bb.w_lo.push(lo.map(|s| act.eval(s)));
        bb.w_hi.push(hi.map(|s| act.eval(s)));
        bb.v_lo.push(lo.clone());
        bb.v_hi.push(hi.clone());
    }
    Ok(bb)
}

/// Chord slope of `act` between `v` and the anchor `star`; the derivative when they coincide.
pub fn chord(act: &Activation, v: f64, star: f64) -> f64 {
    match act.kind {
        ActivationKind::Tanh => {
            // tanh a − tanh b = tanh(a − b)(1 − tanh a tanh b)
            let h = v - star;
            let ratio = if h.abs() < 1e-4 {
                let h2 = h * h;
                1.0 - h2 / 3.0 + 2.0 * h2 * h2 / 15.0
            } else {
                h.tanh() / h
            };
            (1.0 - v.tanh() * star.tanh()) * ratio
        }
        _ => {
            if v == star {
                act.derivative(star)
            } else {
                (act.eval(v) - act.eval(star)) / (v - star)
            }
        }
    }
}

/// Local sectors anchored at the steady-state pre-activations in `v_star`.
pub fn local_sectors(nn: &FeedForwardNN, bb: &BoundBox, v_star: &LayerTrace) -> Result<SectorBounds> {
    let act = nn.activation;
    let mut alpha = Vec::with_capacity(nn.n_neurons());
    let mut beta = Vec::with_capacity(nn.n_neurons());
    for (i, vs) in v_star.v.iter().enumerate() {
        for (j, &star) in vs.iter().enumerate() {
            let (lo, hi) = (bb.v_lo[i][j], bb.v_hi[i][j]);
            let tol = 1e-12 * (1.0 + star.abs());
            if star < lo - tol || star > hi + tol {
                return Err(Error::StarOutsideBox { layer: i + 1, neuron: j + 1 });
            }
            let (a, b) = neuron_sector(&act, lo, hi, star.clamp(lo, hi));
            alpha.push(a);
            beta.push(b);
        }
    }
    Ok(SectorBounds { alpha: DVector::from_vec(alpha), beta: DVector::from_vec(beta) })
}

/// Sectors valid for chords between any two points of each interval, i.e. the
/// range of `φ'` over the box. Needed when the anchor moves with the reference.
pub fn slope_sectors(nn: &FeedForwardNN, bb: &BoundBox) -> SectorBounds {
    let act = nn.activation;
    let mut alpha = Vec::with_capacity(nn.n_neurons());
    let mut beta = Vec::with_capacity(nn.n_neurons());
    for (lo_l, hi_l) in bb.v_lo.iter().zip(&bb.v_hi) {
        for (&lo, &hi) in lo_l.iter().zip(hi_l.iter()) {
            let (a, b) = match act.kind {
                ActivationKind::Linear => (1.0, 1.0),
                ActivationKind::Relu => {
                    if hi < 0.0 {
                        (0.0, 0.0)
                    } else if lo > 0.0 {
                        (1.0, 1.0)
                    } else {
                        (0.0, 1.0)
                    }
                }
                ActivationKind::Tanh => {
                    // sech² is even and decreasing in |v|
                    let far = lo.abs().max(hi.abs());
                    let near = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
                    (act.derivative(far), act.derivative(near))
                }
            };
            let (a, b) = widen(&act, a, b);
            alpha.push(a);
            beta.push(b);
        }
    }
    SectorBounds { alpha: DVector::from_vec(alpha), beta: DVector::from_vec(beta) }
}

fn widen(act: &Activation, a: f64, b: f64) -> (f64, f64) {
    (
        (a - SECTOR_WIDENING).max(act.alpha).min(act.beta),
        (b + SECTOR_WIDENING).min(act.beta).max(act.alpha),
    )
}

fn neuron_sector(act: &Activation, lo: f64, hi: f64, star: f64) -> (f64, f64) {
    let (a, b) = match act.kind {
        ActivationKind::Linear => (1.0, 1.0),
        ActivationKind::Relu => relu_sector(lo, hi, star),
        ActivationKind::Tanh => grid_sector(act, lo, hi, star),
    };
    widen(act, a, b)
}

fn relu_sector(lo: f64, hi: f64, star: f64) -> (f64, f64) {
    if star > 0.0 {
        // chords to the left of the kink fall from 1 towards star / (star − lo)
        let a = if lo < 0.0 { star / (star - lo) } else { 1.0 };
        (a, 1.0)
    } else if star < 0.0 {
        let b = if hi > 0.0 { hi / (hi - star) } else { 0.0 };
        (0.0, b)
    } else {
        let a: f64 = if lo < 0.0 { 0.0 } else { 1.0 };
        let b = if hi > 0.0 { 1.0 } else { 0.0 };
        (a.min(b), a.max(b))
    }
}

fn grid_sector(act: &Activation, lo: f64, hi: f64, star: f64) -> (f64, f64) {
    let f = |v: f64| chord(act, v, star);
    let mut min = f(star);
    let mut max = min;
    if hi <= lo {
        return (min, max);
    }
    let step = (hi - lo) / (CHORD_GRID - 1) as f64;
    let grid: Vec<f64> = (0..CHORD_GRID)
        .map(|k| if k == CHORD_GRID - 1 { hi } else { lo + step * k as f64 })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&v| f(v)).collect();
    let (imin, imax) = argmin_argmax(&vals);
    min = min.min(vals[imin]);
    max = max.max(vals[imax]);

    let bracket = |i: usize| (grid[i.saturating_sub(1)], grid[(i + 1).min(CHORD_GRID - 1)]);
    let (a, b) = bracket(imin);
    min = min.min(golden_min(&f, a, b));
    let (a, b) = bracket(imax);
    max = max.max(-golden_min(&|v| -f(v), a, b));
    (min, max)
}

fn argmin_argmax(vals: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (k, &v) in vals.iter().enumerate() {
        if v < vals[imin] {
            imin = k;
        }
        if v > vals[imax] {
            imax = k;
        }
    }
    (imin, imax)
}

/// Golden-section search; returns the smallest value seen on `[a, b]`.
pub(crate) fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = f(a).min(f(b));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        best = best.min(fc).min(fd);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use approx::assert_relative_eq;

    fn one_neuron(act: Activation) -> FeedForwardNN {
        FeedForwardNN {
            hx0: DMatrix::from_element(1, 1, 1.0),
            hr0: DMatrix::zeros(1, 1),
            layers: vec![Layer { w: DMatrix::from_element(1, 1, 1.0), b: DVector::zeros(1) }],
            wl: DMatrix::from_element(1, 1, 1.0),
            bl: DVector::zeros(1),
            activation: act,
        }
    }

    fn trace_at(nn: &FeedForwardNN, v1: f64) -> LayerTrace {
        nn.forward(&DVector::from_element(1, v1), &DVector::zeros(1)).unwrap()
    }

    /// Brute-force chord extrema on a fine grid.
    fn dense_chord_oracle(act: &Activation, lo: f64, hi: f64, star: f64) -> (f64, f64) {
        let n = 200_001;
        let mut min = act.derivative(star);
        let mut max = min;
        for k in 0..n {
            let v = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            if (v - star).abs() > 1e-9 {
                let c = (act.eval(v) - act.eval(star)) / (v - star);
                min = min.min(c);
                max = max.max(c);
            }
        }
        (min, max)
    }

    #[test]
    fn tanh_box_at_origin() {
        let nn = one_neuron(Activation::tanh());
        let bb = propagate_box(&nn, &DVector::zeros(1), &uniform_d(0.345, 1)).unwrap();
        assert_relative_eq!(bb.w_hi[0][0], 0.345_f64.tanh(), epsilon = 1e-15);
        assert_relative_eq!(bb.w_lo[0][0], -0.331_933_853_503_640_5, epsilon = 1e-12);
    }

    #[test]
    fn tanh_sector_matches_grid_oracle() {
        let nn = one_neuron(Activation::tanh());
        let bb = propagate_box(&nn, &DVector::zeros(1), &uniform_d(0.345, 1)).unwrap();
        let s = local_sectors(&nn, &bb, &trace_at(&nn, 0.0)).unwrap();
        let (omin, omax) = dense_chord_oracle(&nn.activation, -0.345, 0.345, 0.0);
        // frozen from the oracle: tanh(0.345) / 0.345
        assert_relative_eq!(omin, 0.962_127_111_604_755, epsilon = 1e-9);
        assert_relative_eq!(s.alpha[0], omin, epsilon = 1e-10);
        assert!(s.alpha[0] <= omin);
        assert_relative_eq!(s.beta[0], omax, epsilon = 1e-10);
        assert_relative_eq!(s.beta[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tanh_interior_extremum_off_center() {
        // anchor left of the inflection point: the chord maximum is interior
        let act = Activation::tanh();
        let (a, b) = neuron_sector(&act, -1.5, 1.0, -1.0);
        let (omin, omax) = dense_chord_oracle(&act, -1.5, 1.0, -1.0);
        assert!(a <= omin && (omin - a) < 1e-9);
        assert!(b >= omax && (b - omax) < 1e-9);
    }

    #[test]
    fn relu_closed_form() {
        assert_eq!(relu_sector(-1.0, 2.0, 1.0), (0.5, 1.0));
        assert_eq!(relu_sector(-2.0, 1.0, -1.0), (0.0, 0.5));
        assert_eq!(relu_sector(0.5, 2.0, 1.0), (1.0, 1.0));
        assert_eq!(relu_sector(-1.0, 1.0, 0.0), (0.0, 1.0));
        let (a, b) = neuron_sector(&Activation::relu(), -1.0, 2.0, 1.0);
        assert_relative_eq!(a, 0.5, epsilon = 1e-11);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn linear_is_unit_sector() {
        let (a, b) = neuron_sector(&Activation::linear(), -3.0, 7.0, 0.4);
        assert_eq!((a, b), (1.0, 1.0));
    }

    #[test]
    fn degenerate_box_collapses() {
        let nn = FeedForwardNN::from_json(crate::assets::PENDULUM_NN_JSON).unwrap();
        let tr = nn.forward(&DVector::from_vec(vec![0.1, -0.2]), &DVector::zeros(1)).unwrap();
        let bb = propagate_box(&nn, &tr.v[0], &uniform_d(1e-9, 5)).unwrap();
        for i in 0..2 {
            assert!((&bb.v_hi[i] - &bb.v_lo[i]).amax() <= 1e-6);
            assert!(bb.contains_v(i, &tr.v[i], 1e-12));
        }
    }

    #[test]
    fn sign_split_matches_sampling() {
        use rand::{Rng, SeedableRng};
        let nn = FeedForwardNN {
            hx0: DMatrix::from_element(1, 1, 1.0),
            hr0: DMatrix::zeros(1, 1),
            layers: vec![
                Layer { w: DMatrix::from_element(1, 1, 1.0), b: DVector::from_element(1, 0.2) },
                Layer { w: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), b: DVector::from_vec(vec![0.1, -0.3]) },
            ],
            wl: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            bl: DVector::zeros(1),
            activation: Activation::tanh(),
        };
        let center = DVector::from_element(1, 0.2);
        let bb = propagate_box(&nn, &center, &uniform_d(0.8, 1)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (mut lo, mut hi) = (DVector::from_element(2, f64::INFINITY), DVector::from_element(2, f64::NEG_INFINITY));
        for _ in 0..10_000 {
            let v1: f64 = rng.gen_range(-0.6..=1.0);
            let v2 = &nn.layers[1].w * DVector::from_element(1, v1.tanh()) + &nn.layers[1].b;
            assert!(bb.contains_v(1, &v2, 1e-12));
            lo = lo.inf(&v2);
            hi = hi.sup(&v2);
        }
        // one input, so the interval enclosure is exact
        assert!((&lo - &bb.v_lo[1]).amax() < 1e-3);
        assert!((&hi - &bb.v_hi[1]).amax() < 1e-3);
    }

    #[test]
    fn nonpositive_d_rejected() {
        let nn = one_neuron(Activation::tanh());
        assert!(matches!(
            propagate_box(&nn, &DVector::zeros(1), &DVector::zeros(1)),
            Err(Error::NonPositiveD { index: 0, .. })
        ));
    }

    #[test]
    fn anchor_outside_box_rejected() {
        let nn = one_neuron(Activation::tanh());
        let bb = propagate_box(&nn, &DVector::zeros(1), &uniform_d(0.1, 1)).unwrap();
        assert!(matches!(
            local_sectors(&nn, &bb, &trace_at(&nn, 0.5)),
            Err(Error::StarOutsideBox { layer: 1, neuron: 1 })
        ));
    }

    #[test]
    fn slope_sectors_contain_anchored() {
        let nn = FeedForwardNN::from_json(crate::assets::PENDULUM_NN_JSON).unwrap();
        let tr = nn.forward(&DVector::zeros(2), &DVector::zeros(1)).unwrap();
        let bb = propagate_box(&nn, &tr.v[0], &uniform_d(0.345, 5)).unwrap();
        let anchored = local_sectors(&nn, &bb, &tr).unwrap();
        let slope = slope_sectors(&nn, &bb);
        for k in 0..10 {
            assert!(slope.alpha[k] <= anchored.alpha[k] + 1e-15);
            assert!(slope.beta[k] >= anchored.beta[k] - 1e-15);
        }
    }
}
