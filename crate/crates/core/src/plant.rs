//! Linear plant, integrator augmentation and steady-state maps.
//!
//! The plant `x⁺ = A x + B u`, `y = C x` is closed with an integrator
//! `ξ⁺ = ξ + r − y` and the input `u = k_ξ ξ + κ(x, r)`. In the augmented
//! state `x̃ = (x, ξ)` this reads `x̃⁺ = Ã x̃ + B̃ κ(x, r) + B_r r`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, condition_number, SINGULAR_COND};
use crate::network::FeedForwardNN;

/// Discrete-time LTI plant with as many inputs as outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    #[serde(rename = "A", with = "linalg::serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "linalg::serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(rename = "C", with = "linalg::serde_rows")]
    pub c: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let plant = Self { a, b, c };
        plant.validate()?;
        Ok(plant)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plant: Plant = serde_json::from_str(text)?;
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.a.nrows();
        if nx == 0 || self.a.ncols() != nx {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and nonempty, got {:?}",
                self.a.shape()
            )));
        }
        if self.b.nrows() != nx {
            return Err(Error::DimensionMismatch(format!("B has {} rows, expected {nx}", self.b.nrows())));
        }
        if self.c.ncols() != nx {
            return Err(Error::DimensionMismatch(format!("C has {} columns, expected {nx}", self.c.ncols())));
        }
        if self.b.ncols() != self.c.nrows() || self.b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "plant needs n_u = n_r > 0, got n_u = {} and n_r = {}",
                self.b.ncols(),
                self.c.nrows()
            )));
        }
        if ![&self.a, &self.b, &self.c].iter().all(|m| linalg::all_finite(m)) {
            return Err(Error::InvalidParameter("plant matrices contain non-finite entries".into()));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.c.nrows()
    }
}

/// Integrator-augmented plant in the state `x̃ = (x, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub a_til: DMatrix<f64>,
    pub b_til: DMatrix<f64>,
    pub c_til: DMatrix<f64>,
    pub b_r: DMatrix<f64>,
    pub k_xi: DMatrix<f64>,
    n_x: usize,
}

impl AugmentedPlant {
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_r(&self) -> usize {
        self.k_xi.nrows()
    }

    pub fn n_xtil(&self) -> usize {
        self.a_til.nrows()
    }

    /// Recovers `(A, B, C)` from the augmented blocks.
    pub fn plant(&self) -> Plant {
        let (nx, nr) = (self.n_x, self.n_r());
        Plant {
            a: self.a_til.view((0, 0), (nx, nx)).into_owned(),
            b: self.b_til.view((0, 0), (nx, nr)).into_owned(),
            c: self.c_til.view((0, 0), (nr, nx)).into_owned(),
        }
    }
}

/// Builds `Ã = [[A, B k_ξ], [−C, I]]`, `B̃ = [B; 0]`, `C̃ = [C, 0]`, `B_r = [0; I]`.
pub fn augment(plant: &Plant, k_xi: &DMatrix<f64>) -> Result<AugmentedPlant> {
    plant.validate()?;
    let (nx, nr) = (plant.n_x(), plant.n_r());
    if k_xi.shape() != (nr, nr) {
        return Err(Error::DimensionMismatch(format!(
            "k_xi must be {nr}x{nr}, got {:?}",
            k_xi.shape()
        )));
    }
    let cond = condition_number(k_xi);
    if !(cond < SINGULAR_COND) {
        return Err(Error::SingularGain { cond });
    }
    let n = nx + nr;
    let mut a_til = DMatrix::zeros(n, n);
    a_til.view_mut((0, 0), (nx, nx)).copy_from(&plant.a);
    a_til.view_mut((0, nx), (nx, nr)).copy_from(&(&plant.b * k_xi));
    a_til.view_mut((nx, 0), (nr, nx)).copy_from(&(-&plant.c));
    a_til.view_mut((nx, nx), (nr, nr)).fill_with_identity();

    let mut b_til = DMatrix::zeros(n, nr);
    b_til.view_mut((0, 0), (nx, nr)).copy_from(&plant.b);
    let mut c_til = DMatrix::zeros(nr, n);
    c_til.view_mut((0, 0), (nr, nx)).copy_from(&plant.c);
    let mut b_r = DMatrix::zeros(n, nr);
    b_r.view_mut((nx, 0), (nr, nr)).fill_with_identity();

    Ok(AugmentedPlant { a_til, b_til, c_til, b_r, k_xi: k_xi.clone(), n_x: nx })
}

/// Linear map from a constant reference to the plant state and input at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateMap {
    /// `A_a = [[A − I, B], [C, 0]]`
    pub a_a: DMatrix<f64>,
    /// `x_* = M r`
    pub m: DMatrix<f64>,
    /// `u_* = M_u r`
    pub m_u: DMatrix<f64>,
}

pub fn steady_state_map(plant: &Plant) -> Result<SteadyStateMap> {
    plant.validate()?;
    let (nx, nu, nr) = (plant.n_x(), plant.n_u(), plant.n_r());
    let n = nx + nu;
    let mut a_a = DMatrix::zeros(n, n);
    a_a.view_mut((0, 0), (nx, nx))
        .copy_from(&(&plant.a - DMatrix::identity(nx, nx)));
    a_a.view_mut((0, nx), (nx, nu)).copy_from(&plant.b);
    a_a.view_mut((nx, 0), (nr, nx)).copy_from(&plant.c);

    let cond = condition_number(&a_a);
    if !(cond < SINGULAR_COND) {
        return Err(Error::SingularAa { cond });
    }
    let mut rhs = DMatrix::zeros(n, nr);
    rhs.view_mut((nx, 0), (nr, nr)).fill_with_identity();
    let sol = a_a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularAa { cond })?;
    Ok(SteadyStateMap {
        m: sol.view((0, 0), (nx, nr)).into_owned(),
        m_u: sol.view((nx, 0), (nu, nr)).into_owned(),
        a_a,
    })
}

/// Equilibrium of the closed loop for a constant reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub x_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub xi_star: DVector<f64>,
    pub xtil_star: DVector<f64>,
}

/// Reference-to-equilibrium map of a particular closed loop.
///
/// `ξ_*` depends on the network output at `x_*`, so the map is nonlinear in `r`
/// unless the network's first layer is blind to the reference offset.
#[derive(Debug, Clone)]
pub struct SetpointMap {
    pub map: SteadyStateMap,
    pub nn: FeedForwardNN,
    k_xi_inv: DMatrix<f64>,
}

impl SetpointMap {
    pub fn new(plant: &Plant, nn: &FeedForwardNN, k_xi: &DMatrix<f64>) -> Result<Self> {
        let aug = augment(plant, k_xi)?;
        let map = steady_state_map(plant)?;
        nn.check_dims(plant.n_x(), plant.n_r(), plant.n_u())?;
        let k_xi_inv = aug
            .k_xi
            .clone()
            .try_inverse()
            .ok_or(Error::SingularGain { cond: f64::INFINITY })?;
        Ok(Self { map, nn: nn.clone(), k_xi_inv })
    }

    pub fn n_r(&self) -> usize {
        self.map.m.ncols()
    }

    pub fn at(&self, r: &DVector<f64>) -> SteadyState {
        let x_star = &self.map.m * r;
        let u_star = &self.map.m_u * r;
        let kappa = self.nn.output(&x_star, r);
        let xi_star = &self.k_xi_inv * (&u_star - kappa);
        let xtil_star = DVector::from_iterator(
            x_star.len() + xi_star.len(),
            x_star.iter().chain(xi_star.iter()).cloned(),
        );
        SteadyState { x_star, u_star, xi_star, xtil_star }
    }

    pub fn xtil_star(&self, r: &DVector<f64>) -> DVector<f64> {
        self.at(r).xtil_star
    }
}

pub fn steady_state(
    plant: &Plant,
    nn: &FeedForwardNN,
    k_xi: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<SteadyState> {
    if r.len() != plant.n_r() {
        return Err(Error::DimensionMismatch(format!(
            "reference has length {}, expected {}",
            r.len(),
            plant.n_r()
        )));
    }
    Ok(SetpointMap::new(plant, nn, k_xi)?.at(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    Euler,
    ExactZoh,
}

/// Which pendulum state the output matrix selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PendulumOutput {
    /// `C = [1, 0]`
    Angle,
    /// `C = [0, 1]`
    Velocity,
}

/// Linearized inverted pendulum with friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub mu: f64,
    pub g: f64,
    pub ts: f64,
    pub method: Discretization,
    pub output: PendulumOutput,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 0.15,
            l: 0.5,
            mu: 0.5,
            g: 9.81,
            ts: 0.02,
            method: Discretization::ExactZoh,
            output: PendulumOutput::Angle,
        }
    }
}

impl PendulumParams {
    /// Continuous-time `(A_c, B_c)`.
    pub fn continuous(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, self.g / self.l, -self.mu / (self.m * self.l * self.l)],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, self.g / self.l]);
        (a, b)
    }
}

pub fn build_pendulum(p: &PendulumParams) -> Result<Plant> {
    for (name, v) in [("m", p.m), ("L", p.l), ("mu", p.mu), ("g", p.g), ("Ts", p.ts)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("pendulum parameter {name} must be positive, got {v}")));
        }
    }
    let (ac, bc) = p.continuous();
    let (a, b) = match p.method {
        Discretization::Euler => (DMatrix::identity(2, 2) + &ac * p.ts, &bc * p.ts),
        Discretization::ExactZoh => {
            let mut aug = DMatrix::zeros(3, 3);
            aug.view_mut((0, 0), (2, 2)).copy_from(&ac);
            aug.view_mut((0, 2), (2, 1)).copy_from(&bc);
            let e = (aug * p.ts).exp();
            (e.view((0, 0), (2, 2)).into_owned(), e.view((0, 2), (2, 1)).into_owned())
        }
    };
    let c = match p.output {
        PendulumOutput::Angle => DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        PendulumOutput::Velocity => DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
    };
    Plant::new(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, FeedForwardNN};
    use approx::assert_relative_eq;

    fn scalar_plant(a: f64) -> Plant {
        Plant::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn augment_scalar_blocks() {
        let aug = augment(&scalar_plant(0.5), &DMatrix::from_element(1, 1, 0.1)).unwrap();
        assert_eq!(aug.a_til, DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -1.0, 1.0]));
        assert_eq!(aug.b_til, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(aug.c_til, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(aug.b_r, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn zero_gain_is_singular() {
        let err = augment(&scalar_plant(0.5), &DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::SingularGain { .. }));
    }

    #[test]
    fn euler_pendulum_augmented_top_right() {
        let p = PendulumParams { method: Discretization::Euler, ..Default::default() };
        let plant = build_pendulum(&p).unwrap();
        let aug = augment(&plant, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        // T_s g / L = 0.02 * 9.81 / 0.5
        assert_relative_eq!(aug.a_til[(0, 2)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(aug.a_til[(1, 2)], 0.3924, epsilon = 1e-12);
    }

    #[test]
    fn augment_read_back_is_identity() {
        let plant = build_pendulum(&PendulumParams::default()).unwrap();
        let k = DMatrix::from_element(1, 1, 0.7);
        let aug = augment(&plant, &k).unwrap();
        assert_eq!(aug.plant(), plant);
        assert_eq!(aug.k_xi, k);
    }

    #[test]
    fn scalar_steady_state_map() {
        let map = steady_state_map(&scalar_plant(0.0)).unwrap();
        assert_relative_eq!(map.m[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(map.m_u[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn integrating_plant_steady_map_residual() {
        // A = I, C B nonsingular
        let plant = Plant::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 3.0]),
        )
        .unwrap();
        let map = steady_state_map(&plant).unwrap();
        let r = DVector::from_vec(vec![0.3, -1.2]);
        let mut xu = DVector::zeros(4);
        xu.rows_mut(0, 2).copy_from(&(&map.m * &r));
        xu.rows_mut(2, 2).copy_from(&(&map.m_u * &r));
        let lhs = &map.a_a * xu;
        assert!(lhs.rows(0, 2).norm() < 1e-12);
        assert!((lhs.rows(2, 2) - &r).norm() < 1e-12);
    }

    #[test]
    fn zero_output_matrix_is_singular() {
        let plant = Plant::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(steady_state_map(&plant), Err(Error::SingularAa { .. })));
    }

    #[test]
    fn velocity_output_pendulum_cannot_track() {
        let p = PendulumParams { output: PendulumOutput::Velocity, ..Default::default() };
        let plant = build_pendulum(&p).unwrap();
        assert!(matches!(steady_state_map(&plant), Err(Error::SingularAa { .. })));
    }

    #[test]
    fn zero_network_rests_at_origin() {
        let plant = build_pendulum(&PendulumParams::default()).unwrap();
        let nn = FeedForwardNN::zeros(2, 1, 1, &[3], Activation::tanh());
        let ss = steady_state(&plant, &nn, &DMatrix::from_element(1, 1, 1.0), &DVector::zeros(1)).unwrap();
        assert_eq!(ss.xtil_star.norm(), 0.0);
    }

    #[test]
    fn constant_network_shifts_integrator() {
        let c = 0.25;
        let mut nn = FeedForwardNN::zeros(1, 1, 1, &[2], Activation::tanh());
        nn.bl = DVector::from_element(1, c);
        let ss = steady_state(
            &scalar_plant(0.0),
            &nn,
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(ss.xi_star[0], 1.0 - c, epsilon = 1e-14);
        assert_eq!(ss.xtil_star.len(), 2);
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = PendulumParams { ts: 0.0, ..Default::default() };
        assert!(matches!(build_pendulum(&p), Err(Error::InvalidParameter(_))));
    }
}
