//! Selector matrices and the affine matrix inequalities of the three
//! certificates (global, local at a fixed reference, local over a reference range).
//!
//! Decision variables are packed into one vector `y`: the upper triangle of
//! `P` (row by row), then the diagonal of `Λ`, then the upper triangle of `Q`.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, inf_norm, symmetrize};
use crate::network::FeedForwardNN;
use crate::plant::AugmentedPlant;
use crate::sectors::SectorBounds;

/// Relative size of the strictness margin `δ = MARGIN_REL · (1 + ‖F₀‖∞)`.
pub const MARGIN_REL: f64 = 1e-7;

/// Constant matrices describing the network's linear interconnection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selectors {
    /// `n × n_x̃`, nonzero block `W⁰H⁰ₓ` in the first block row.
    pub n0: DMatrix<f64>,
    /// First block row of `N0`, `n_1 × n_x̃`.
    pub n0_1: DMatrix<f64>,
    /// `n × n`, `Wⁱ` on the block subdiagonal.
    pub n1lm1: DMatrix<f64>,
    /// `n_u × n`, `[0, Wˡ]`.
    pub nl: DMatrix<f64>,
    /// `(n_x̃ + n_u) × (n_x̃ + n)`
    pub rv: DMatrix<f64>,
    /// `2n × (n_x̃ + n)`
    pub rphi: DMatrix<f64>,
}

impl Selectors {
    pub fn n_xtil(&self) -> usize {
        self.n0.ncols()
    }

    pub fn n_neurons(&self) -> usize {
        self.n0.nrows()
    }
}

pub fn build_selectors(nn: &FeedForwardNN, n_xtil: usize) -> Result<Selectors> {
    nn.validate()?;
    let nx = nn.n_x();
    if n_xtil < nx {
        return Err(Error::DimensionMismatch(format!(
            "augmented state has {n_xtil} entries but the network reads {nx} states"
        )));
    }
    let counts = nn.neuron_counts();
    let n = nn.n_neurons();
    let n1 = counts[0];
    let nu = nn.n_u();

    let mut n0_1 = DMatrix::zeros(n1, n_xtil);
    n0_1.view_mut((0, 0), (n1, nx)).copy_from(&(&nn.layers[0].w * &nn.hx0));
    let mut n0 = DMatrix::zeros(n, n_xtil);
    n0.view_mut((0, 0), (n1, n_xtil)).copy_from(&n0_1);

    let mut n1lm1 = DMatrix::zeros(n, n);
    let (mut row, mut col) = (n1, 0);
    for (i, layer) in nn.layers.iter().enumerate().skip(1) {
        n1lm1.view_mut((row, col), layer.w.shape()).copy_from(&layer.w);
        row += layer.w.nrows();
        col += counts[i - 1];
    }

    let nlast = *counts.last().unwrap();
    let mut nl = DMatrix::zeros(nu, n);
    nl.view_mut((0, n - nlast), (nu, nlast)).copy_from(&nn.wl);

    let mut rv = DMatrix::zeros(n_xtil + nu, n_xtil + n);
    rv.view_mut((0, 0), (n_xtil, n_xtil)).fill_with_identity();
    rv.view_mut((n_xtil, n_xtil), (nu, n)).copy_from(&nl);

    let mut rphi = DMatrix::zeros(2 * n, n_xtil + n);
    rphi.view_mut((0, 0), (n, n_xtil)).copy_from(&n0);
    rphi.view_mut((0, n_xtil), (n, n)).copy_from(&n1lm1);
    rphi.view_mut((n, n_xtil), (n, n)).fill_with_identity();

    Ok(Selectors { n0, n0_1, n1lm1, nl, rv, rphi })
}

/// `S = W⁰(H⁰ₓ M + H⁰ᵣ)`: first-layer sensitivity of the steady state to the reference.
pub fn ref_sensitivity(nn: &FeedForwardNN, m: &DMatrix<f64>) -> DMatrix<f64> {
    &nn.layers[0].w * (&nn.hx0 * m + &nn.hr0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// `F(y) ≺ 0`, enforced as `F(y) ⪯ −δI`.
    StrictNegative,
    /// `F(y) ≻ 0`, enforced as `F(y) ⪰ δI`.
    StrictPositive,
    NonNegative,
}

/// One affine symmetric matrix function `F(y) = F₀ + Σ yᵢ Fᵢ` with its sign requirement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmiBlock {
    pub name: String,
    pub kind: BlockKind,
    #[serde(serialize_with = "ser_rows")]
    pub constant: DMatrix<f64>,
    #[serde(serialize_with = "ser_coeffs")]
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

fn ser_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    linalg::to_rows(m).serialize(s)
}

fn ser_coeffs<S: Serializer>(c: &[(usize, DMatrix<f64>)], s: S) -> std::result::Result<S::Ok, S::Error> {
    let v: Vec<(usize, Vec<Vec<f64>>)> = c.iter().map(|(i, m)| (*i, linalg::to_rows(m))).collect();
    v.serialize(s)
}

impl LmiBlock {
    /// Samples a linear-plus-constant matrix function at zero and at each unit vector.
    fn from_affine(
        name: impl Into<String>,
        kind: BlockKind,
        n_vars: usize,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    ) -> Self {
        let zero = DVector::zeros(n_vars);
        let constant = symmetrize(&f(&zero));
        let mut coeffs = Vec::new();
        let mut e = zero;
        for i in 0..n_vars {
            e[i] = 1.0;
            let fi = symmetrize(&(f(&e) - &constant));
            e[i] = 0.0;
            if fi.iter().any(|v| *v != 0.0) {
                coeffs.push((i, fi));
            }
        }
        Self { name: name.into(), kind, constant, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, fi) in &self.coeffs {
            m += fi * y[*i];
        }
        m
    }

    /// Default strictness margin for this block.
    pub fn margin(&self) -> f64 {
        match self.kind {
            BlockKind::NonNegative => 0.0,
            _ => MARGIN_REL * (1.0 + inf_norm(&self.constant)),
        }
    }

    /// The block rewritten as `G(y) ⪰ 0` with the margin `delta` folded in.
    pub fn psd_form(&self, delta: f64) -> (DMatrix<f64>, Vec<(usize, DMatrix<f64>)>) {
        let n = self.dim();
        let shift = DMatrix::identity(n, n) * delta;
        match self.kind {
            BlockKind::StrictNegative => (
                -&self.constant - shift,
                self.coeffs.iter().map(|(i, m)| (*i, -m)).collect(),
            ),
            _ => (&self.constant - shift, self.coeffs.clone()),
        }
    }

    /// Smallest eigenvalue of the margined PSD form at `y`.
    pub fn margin_at(&self, y: &DVector<f64>, delta: f64) -> f64 {
        let v = self.eval(y);
        let g = match self.kind {
            BlockKind::StrictNegative => -v,
            _ => v,
        };
        linalg::min_eigenvalue(&g) - delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VarLayout {
    pub n_xtil: usize,
    pub n_lambda: usize,
    pub n_q: usize,
}

impl VarLayout {
    fn tri(n: usize) -> usize {
        n * (n + 1) / 2
    }

    pub fn n_vars(&self) -> usize {
        Self::tri(self.n_xtil) + self.n_lambda + Self::tri(self.n_q)
    }

    pub fn lambda_offset(&self) -> usize {
        Self::tri(self.n_xtil)
    }

    pub fn q_offset(&self) -> usize {
        self.lambda_offset() + self.n_lambda
    }

    pub fn p(&self, y: &DVector<f64>) -> DMatrix<f64> {
        unpack_sym(y, 0, self.n_xtil)
    }

    pub fn lambda(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.lambda_offset(), self.n_lambda).into_owned()
    }

    pub fn q(&self, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        (self.n_q > 0).then(|| unpack_sym(y, self.q_offset(), self.n_q))
    }

    pub fn pack(&self, p: &DMatrix<f64>, lambda: &DVector<f64>, q: Option<&DMatrix<f64>>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_vars());
        pack_sym(&mut y, 0, p);
        y.rows_mut(self.lambda_offset(), self.n_lambda).copy_from(lambda);
        if let Some(q) = q {
            pack_sym(&mut y, self.q_offset(), q);
        }
        y
    }

    /// Coefficients of `tr P + γ tr Q`.
    pub fn trace_objective(&self, gamma: f64) -> DVector<f64> {
        let mut c = DVector::zeros(self.n_vars());
        let mut mark = |offset: usize, n: usize, w: f64| {
            let mut k = offset;
            for i in 0..n {
                c[k] = w;
                k += n - i;
            }
        };
        mark(0, self.n_xtil, 1.0);
        mark(self.q_offset(), self.n_q, gamma);
        c
    }
}

fn unpack_sym(y: &DVector<f64>, offset: usize, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = offset;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = y[k];
            m[(j, i)] = y[k];
            k += 1;
        }
    }
    m
}

fn pack_sym(y: &mut DVector<f64>, offset: usize, m: &DMatrix<f64>) {
    let n = m.nrows();
    let mut k = offset;
    for i in 0..n {
        for j in i..n {
            y[k] = 0.5 * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    Global,
    LocalFixed,
    LocalRange,
}

impl std::str::FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Theorem::Global),
            "local-fixed" => Ok(Theorem::LocalFixed),
            "local-range" => Ok(Theorem::LocalRange),
            other => Err(Error::InvalidParameter(format!(
                "unknown theorem `{other}` (expected global, local-fixed or local-range)"
            ))),
        }
    }
}

/// A solver-agnostic collection of LMI blocks over one variable vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmiSystem {
    pub theorem: Theorem,
    pub layout: VarLayout,
    pub blocks: Vec<LmiBlock>,
    #[serde(serialize_with = "ser_opt_vec")]
    pub objective: Option<DVector<f64>>,
}

fn ser_opt_vec<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_ref().map(|v| v.as_slice().to_vec()).serialize(s)
}

impl LmiSystem {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    /// Sum of block orders.
    pub fn total_order(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }

    /// JSON dump of all blocks for cross-checking with an external solver.
    pub fn to_debug_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }

    pub fn block(&self, name: &str) -> Option<&LmiBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Left-hand side of the decrease condition for given `P`, `Λ`.
pub fn decrease_matrix(
    aug: &AugmentedPlant,
    sel: &Selectors,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    p: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> DMatrix<f64> {
    let nx = aug.n_xtil();
    let nu = aug.b_til.ncols();
    let at = &aug.a_til;
    let bt = &aug.b_til;
    let pa = p * at;
    let pb = p * bt;
    let mut v = DMatrix::zeros(nx + nu, nx + nu);
    v.view_mut((0, 0), (nx, nx)).copy_from(&(at.transpose() * &pa - p));
    v.view_mut((0, nx), (nx, nu)).copy_from(&(at.transpose() * &pb));
    v.view_mut((nx, 0), (nu, nx)).copy_from(&(bt.transpose() * &pa));
    v.view_mut((nx, nx), (nu, nu)).copy_from(&(bt.transpose() * &pb));

    let n = lambda.len();
    let mut qc = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        let l = lambda[j];
        qc[(j, j)] = -2.0 * alpha[j] * beta[j] * l;
        qc[(j, n + j)] = (alpha[j] + beta[j]) * l;
        qc[(n + j, j)] = (alpha[j] + beta[j]) * l;
        qc[(n + j, n + j)] = -2.0 * l;
    }
    sel.rv.transpose() * v * &sel.rv + sel.rphi.transpose() * qc * &sel.rphi
}

fn check_shapes(aug: &AugmentedPlant, sel: &Selectors, sectors: &SectorBounds) -> Result<()> {
    if sel.n_xtil() != aug.n_xtil() || sel.nl.nrows() != aug.b_til.ncols() {
        return Err(Error::DimensionMismatch("selectors do not match the augmented plant".into()));
    }
    if sectors.len() != sel.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "{} sector bounds for {} neurons",
            sectors.len(),
            sel.n_neurons()
        )));
    }
    Ok(())
}

fn common_blocks(
    aug: &AugmentedPlant,
    sel: &Selectors,
    sectors: &SectorBounds,
    layout: VarLayout,
) -> Vec<LmiBlock> {
    let nv = layout.n_vars();
    let decrease = LmiBlock::from_affine("decrease", BlockKind::StrictNegative, nv, |y| {
        decrease_matrix(aug, sel, &sectors.alpha, &sectors.beta, &layout.p(y), &layout.lambda(y))
    });
    let p_pos = LmiBlock::from_affine("P", BlockKind::StrictPositive, nv, |y| layout.p(y));
    let lam = LmiBlock::from_affine("Lambda", BlockKind::NonNegative, nv, |y| {
        DMatrix::from_diagonal(&layout.lambda(y))
    });
    vec![decrease, p_pos, lam]
}

/// Global certificate with the activation's global slope bounds.
pub fn build_global(aug: &AugmentedPlant, sel: &Selectors, alpha: f64, beta: f64) -> Result<LmiSystem> {
    let n = sel.n_neurons();
    let sectors = SectorBounds {
        alpha: DVector::from_element(n, alpha),
        beta: DVector::from_element(n, beta),
    };
    check_shapes(aug, sel, &sectors)?;
    let layout = VarLayout { n_xtil: aug.n_xtil(), n_lambda: n, n_q: 0 };
    Ok(LmiSystem {
        theorem: Theorem::Global,
        layout,
        blocks: common_blocks(aug, sel, &sectors, layout),
        objective: None,
    })
}

fn check_d(d: &DVector<f64>, n1: usize) -> Result<()> {
    if d.len() != n1 {
        return Err(Error::DimensionMismatch(format!("d has length {}, expected {n1}", d.len())));
    }
    if let Some((index, &value)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveD { index, value });
    }
    Ok(())
}

/// Local certificate at a fixed reference, with `tr P` as objective when `minimize_trace`.
pub fn build_local_fixed(
    aug: &AugmentedPlant,
    sel: &Selectors,
    sectors: &SectorBounds,
    d: &DVector<f64>,
    minimize_trace: bool,
) -> Result<LmiSystem> {
    check_shapes(aug, sel, sectors)?;
    let n1 = sel.n0_1.nrows();
    check_d(d, n1)?;
    let nxt = aug.n_xtil();
    let layout = VarLayout { n_xtil: nxt, n_lambda: sel.n_neurons(), n_q: 0 };
    let nv = layout.n_vars();
    let mut blocks = common_blocks(aug, sel, sectors, layout);
    for j in 0..n1 {
        let row = sel.n0_1.row(j).into_owned();
        blocks.push(LmiBlock::from_affine(format!("box_{}", j + 1), BlockKind::NonNegative, nv, |y| {
            let mut m = DMatrix::zeros(1 + nxt, 1 + nxt);
            m[(0, 0)] = d[j] * d[j];
            m.view_mut((0, 1), (1, nxt)).copy_from(&row);
            m.view_mut((1, 0), (nxt, 1)).copy_from(&row.transpose());
            m.view_mut((1, 1), (nxt, nxt)).copy_from(&layout.p(y));
            m
        }));
    }
    Ok(LmiSystem {
        theorem: Theorem::LocalFixed,
        layout,
        blocks,
        objective: minimize_trace.then(|| layout.trace_objective(0.0)),
    })
}

/// Local certificate over a reference neighbourhood, objective `tr P + γ tr Q`.
pub fn build_local_range(
    aug: &AugmentedPlant,
    sel: &Selectors,
    sectors: &SectorBounds,
    d: &DVector<f64>,
    s: &DMatrix<f64>,
    gamma: f64,
) -> Result<LmiSystem> {
    check_shapes(aug, sel, sectors)?;
    let n1 = sel.n0_1.nrows();
    check_d(d, n1)?;
    let nxt = aug.n_xtil();
    let nr = aug.n_r();
    if s.shape() != (n1, nr) {
        return Err(Error::DimensionMismatch(format!("S must be {n1}x{nr}, got {:?}", s.shape())));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma must be nonnegative, got {gamma}")));
    }
    let layout = VarLayout { n_xtil: nxt, n_lambda: sel.n_neurons(), n_q: nr };
    let nv = layout.n_vars();
    let mut blocks = common_blocks(aug, sel, sectors, layout);
    blocks.push(LmiBlock::from_affine("Q", BlockKind::StrictPositive, nv, |y| layout.q(y).unwrap()));
    let k = 1 + nxt + nr;
    for j in 0..n1 {
        let mut row = DMatrix::zeros(1, nxt + nr);
        row.view_mut((0, 0), (1, nxt)).copy_from(&sel.n0_1.row(j));
        row.view_mut((0, nxt), (1, nr)).copy_from(&s.row(j));
        blocks.push(LmiBlock::from_affine(format!("box_{}", j + 1), BlockKind::NonNegative, nv, |y| {
            let mut m = DMatrix::zeros(k, k);
            m[(0, 0)] = d[j] * d[j];
            m.view_mut((0, 1), (1, nxt + nr)).copy_from(&row);
            m.view_mut((1, 0), (nxt + nr, 1)).copy_from(&row.transpose());
            m.view_mut((1, 1), (nxt, nxt)).copy_from(&layout.p(y));
            m.view_mut((1 + nxt, 1 + nxt), (nr, nr)).copy_from(&layout.q(y).unwrap());
            m
        }));
    }
    Ok(LmiSystem {
        theorem: Theorem::LocalRange,
        layout,
        blocks,
        objective: Some(layout.trace_objective(gamma)),
    })
}
