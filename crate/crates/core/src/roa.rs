//! Ellipsoidal region-of-attraction estimates.
//!
//! `E_P(c) = { x̃ : (x̃ − c)ᵀ P (x̃ − c) ≤ level }` for a fixed reference, and the
//! joint set `E_{P,Q}(r_nom) = { (x̃, r) : (x̃ − x̃_*(r))ᵀ P (x̃ − x̃_*(r)) + (r − r_nom)ᵀ Q (r − r_nom) ≤ 1 }`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, quad_form, symmetrize};
use crate::plant::SetpointMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, level: f64) -> Result<Self> {
        if shape.shape() != (center.len(), center.len()) {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} does not match center of length {}",
                shape.shape(),
                center.len()
            )));
        }
        if !(min_eigenvalue(&shape) > 0.0) {
            return Err(Error::InvalidParameter("ellipsoid shape must be positive definite".into()));
        }
        Ok(Self { center, shape: symmetrize(&shape), level })
    }

    /// `(x − c)ᵀ P (x − c)`
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.shape, &(x - &self.center))
    }

    /// Membership and the margin `level − (x − c)ᵀ P (x − c)`.
    pub fn contains(&self, x: &DVector<f64>) -> (bool, f64) {
        let margin = self.level - self.value(x);
        (margin >= 0.0, margin)
    }

    /// `center + √level · P^{-1/2} u` for a unit vector `u` (via the Cholesky factor of `P⁻¹`).
    pub fn boundary_point(&self, u: &DVector<f64>) -> DVector<f64> {
        let pinv = self.shape.clone().try_inverse().expect("positive definite shape");
        let l = Cholesky::new(symmetrize(&pinv)).expect("positive definite shape").l();
        &self.center + l * u * self.level.max(0.0).sqrt()
    }

    /// Closed polyline tracing the boundary of the projection onto coordinates `(i, j)`.
    pub fn boundary_polyline(&self, dims: (usize, usize), n_points: usize) -> Result<Vec<[f64; 2]>> {
        let n = self.center.len();
        let (i, j) = dims;
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidParameter(format!("invalid projection coordinates ({i}, {j}) for dimension {n}")));
        }
        if n_points < 8 {
            return Err(Error::InvalidParameter("a boundary polyline needs at least 8 points".into()));
        }
        let pinv = self.shape.clone().try_inverse().ok_or_else(|| {
            Error::InvalidParameter("ellipsoid shape is singular".into())
        })?;
        // the projected set is {u : uᵀ (P⁻¹)_{ij}⁻¹ u ≤ level}
        let w = DMatrix::from_row_slice(2, 2, &[pinv[(i, i)], pinv[(i, j)], pinv[(j, i)], pinv[(j, j)]]);
        let l = Cholesky::new(symmetrize(&w))
            .ok_or_else(|| Error::InvalidParameter("projected shape is not positive definite".into()))?
            .l();
        let s = self.level.max(0.0).sqrt();
        let (ci, cj) = (self.center[i], self.center[j]);
        let mut pts: Vec<[f64; 2]> = (0..n_points)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n_points as f64;
                let (c, sn) = (t.cos(), t.sin());
                [ci + s * (l[(0, 0)] * c), cj + s * (l[(1, 0)] * c + l[(1, 1)] * sn)]
            })
            .collect();
        pts.push(pts[0]);
        Ok(pts)
    }
}

/// Fixed-reference section of the joint set.
#[derive(Debug, Clone, PartialEq)]
pub enum Slice {
    Ellipsoid(Ellipsoid),
    Empty,
}

impl Slice {
    pub fn ellipsoid(&self) -> Option<&Ellipsoid> {
        match self {
            Slice::Ellipsoid(e) => Some(e),
            Slice::Empty => None,
        }
    }
}

/// References covered by the joint set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdmissibleSet {
    Interval { lo: f64, hi: f64 },
    Ellipsoid {
        center: Vec<f64>,
        /// Semi-axis lengths, matched with `directions`.
        semi_axes: Vec<f64>,
        directions: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct JointEllipsoid {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r_nom: DVector<f64>,
    pub setpoints: SetpointMap,
}

impl JointEllipsoid {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>, r_nom: DVector<f64>, setpoints: SetpointMap) -> Result<Self> {
        let nr = setpoints.n_r();
        if q.shape() != (nr, nr) || r_nom.len() != nr || p.nrows() != setpoints.map.m.nrows() + nr {
            return Err(Error::DimensionMismatch("joint ellipsoid blocks do not match the setpoint map".into()));
        }
        if !(min_eigenvalue(&p) > 0.0 && min_eigenvalue(&q) > 0.0) {
            return Err(Error::InvalidParameter("P and Q must be positive definite".into()));
        }
        Ok(Self { p: symmetrize(&p), q: symmetrize(&q), r_nom, setpoints })
    }

    pub fn n_r(&self) -> usize {
        self.r_nom.len()
    }

    /// `(r − r_nom)ᵀ Q (r − r_nom)`
    pub fn ref_term(&self, r: &DVector<f64>) -> f64 {
        quad_form(&self.q, &(r - &self.r_nom))
    }

    pub fn value(&self, xt: &DVector<f64>, r: &DVector<f64>) -> f64 {
        let c = self.setpoints.xtil_star(r);
        quad_form(&self.p, &(xt - c)) + self.ref_term(r)
    }

    /// `1 − value`; nonnegative inside the set.
    pub fn margin(&self, xt: &DVector<f64>, r: &DVector<f64>) -> f64 {
        1.0 - self.value(xt, r)
    }

    pub fn contains(&self, xt: &DVector<f64>, r: &DVector<f64>) -> bool {
        self.margin(xt, r) >= 0.0
    }

    pub fn slice(&self, r: &DVector<f64>) -> Slice {
        let level = 1.0 - self.ref_term(r);
        if level < 0.0 {
            return Slice::Empty;
        }
        Slice::Ellipsoid(Ellipsoid {
            center: self.setpoints.xtil_star(r),
            shape: self.p.clone(),
            level,
        })
    }

    pub fn admissible_references(&self) -> AdmissibleSet {
        admissible_set(&self.q, &self.r_nom)
    }
}

/// `{ r : (r − r_nom)ᵀ Q (r − r_nom) ≤ 1 }`
pub fn admissible_set(q: &DMatrix<f64>, r_nom: &DVector<f64>) -> AdmissibleSet {
    if q.nrows() == 1 {
        let h = 1.0 / q[(0, 0)].sqrt();
        return AdmissibleSet::Interval { lo: r_nom[0] - h, hi: r_nom[0] + h };
    }
    let eig = SymmetricEigen::new(symmetrize(q));
    let mut idx: Vec<usize> = (0..q.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    AdmissibleSet::Ellipsoid {
        center: r_nom.iter().cloned().collect(),
        semi_axes: idx.iter().map(|&k| 1.0 / eig.eigenvalues[k].sqrt()).collect(),
        directions: idx.iter().map(|&k| eig.eigenvectors.column(k).iter().cloned().collect()).collect(),
    }
}

/// Row-wise check `rowⱼ H⁻¹ rowⱼᵀ ≤ dⱼ²` with `H = blkdiag(P, Q)` (or `P` alone).
///
/// Equivalent to `[[dⱼ², rowⱼ], [rowⱼᵀ, H]] ⪰ 0` for `H ≻ 0`.
pub fn schur_row_check(p: &DMatrix<f64>, q: Option<&DMatrix<f64>>, rows: &DMatrix<f64>, d: &DVector<f64>, tol: f64) -> Result<Vec<bool>> {
    let h = match q {
        Some(q) => crate::linalg::block_diag(&[p, q]),
        None => p.clone(),
    };
    if rows.ncols() != h.nrows() || rows.nrows() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "rows are {:?}, expected {} columns and {} rows",
            rows.shape(),
            h.nrows(),
            d.len()
        )));
    }
    let ch = Cholesky::new(symmetrize(&h))
        .ok_or_else(|| Error::InvalidParameter("P (and Q) must be positive definite".into()))?;
    Ok((0..rows.nrows())
        .map(|j| {
            let r = rows.row(j).transpose();
            let v = r.dot(&ch.solve(&r));
            let d2 = d[j] * d[j];
            v <= d2 + tol * (1.0 + d2)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn circle() -> Ellipsoid {
        Ellipsoid::new(DVector::zeros(2), DMatrix::identity(2, 2), 1.0).unwrap()
    }

    #[test]
    fn center_and_outside() {
        let e = Ellipsoid::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2), 1.0).unwrap();
        assert_eq!(e.contains(&e.center.clone()), (true, 1.0));
        let x = &e.center + DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(e.contains(&x), (false, -3.0));
    }

    #[test]
    fn boundary_point_on_level() {
        let p = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let e = Ellipsoid::new(DVector::from_vec(vec![0.1, 0.2, 0.3]), p, 1.0).unwrap();
        let u = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        assert_relative_eq!(e.value(&e.boundary_point(&u)), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn unit_circle_polyline() {
        let pts = circle().boundary_polyline((0, 1), 64).unwrap();
        assert_eq!(pts.len(), 65);
        assert_eq!(pts[0], pts[64]);
        for p in &pts {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() <= 1e-10);
        }
        assert!(circle().boundary_polyline((0, 1), 4).is_err());
    }

    #[test]
    fn diagonal_semi_axes() {
        let e = Ellipsoid::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 1.0).unwrap();
        let pts = e.boundary_polyline((0, 1), 400).unwrap();
        let mx = pts.iter().map(|p| p[0].abs()).fold(0.0, f64::max);
        let my = pts.iter().map(|p| p[1].abs()).fold(0.0, f64::max);
        assert_relative_eq!(mx, 0.5, epsilon = 1e-12);
        assert_relative_eq!(my, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn scalar_admissible_interval() {
        let set = admissible_set(&DMatrix::from_element(1, 1, 25.0), &DVector::zeros(1));
        match set {
            AdmissibleSet::Interval { lo, hi } => {
                assert_relative_eq!(lo, -0.2, epsilon = 1e-15);
                assert_relative_eq!(hi, 0.2, epsilon = 1e-15);
            }
            _ => panic!("expected interval"),
        }
        match admissible_set(&DMatrix::identity(2, 2), &DVector::zeros(2)) {
            AdmissibleSet::Ellipsoid { semi_axes, .. } => assert_eq!(semi_axes, vec![1.0, 1.0]),
            _ => panic!("expected ellipsoid"),
        }
    }

    #[test]
    fn schur_rows() {
        let p = DMatrix::identity(2, 2);
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let ok = schur_row_check(&p, None, &rows, &DVector::from_element(2, 1.0), 1e-12).unwrap();
        assert_eq!(ok, vec![true, false]);
    }
}
