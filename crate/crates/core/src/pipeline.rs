//! End-to-end verification: steady state, sector bounds, LMI assembly, solve,
//! certification and RoA extraction, plus the JSON reports built from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::to_rows;
use crate::lmi::{self, LmiSystem, Theorem};
use crate::network::{FeedForwardNN, LayerTrace};
use crate::plant::{augment, AugmentedPlant, Plant, SetpointMap, SteadyState};
use crate::roa::{AdmissibleSet, Ellipsoid, JointEllipsoid};
use crate::sdp::{self, SdpSolution, SolveStatus, SolverOptions};
use crate::sectors::{self, BoundBox, SectorBounds};

/// Plant, network and integrator gain of one closed loop.
#[derive(Debug, Clone)]
pub struct LoopSpec {
    pub plant: Plant,
    pub nn: FeedForwardNN,
    pub k_xi: DMatrix<f64>,
}

impl LoopSpec {
    pub fn new(plant: Plant, nn: FeedForwardNN, k_xi: DMatrix<f64>) -> Result<Self> {
        plant.validate()?;
        nn.check_dims(plant.n_x(), plant.n_r(), plant.n_u())?;
        augment(&plant, &k_xi)?;
        Ok(Self { plant, nn, k_xi })
    }

    pub fn augmented(&self) -> Result<AugmentedPlant> {
        augment(&self.plant, &self.k_xi)
    }

    pub fn setpoints(&self) -> Result<SetpointMap> {
        SetpointMap::new(&self.plant, &self.nn, &self.k_xi)
    }
}

/// How local sectors are anchored for the reference-range certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectorMode {
    /// Anchored when the steady pre-activations do not move with `r`, slope otherwise.
    Auto,
    /// Chords anchored at the nominal steady state.
    Anchored,
    /// All chords inside the box (range of `φ'`).
    Slope,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub theorem: Theorem,
    /// Reference for the fixed certificate, nominal reference for the range certificate.
    #[serde(serialize_with = "ser_vec")]
    pub r: DVector<f64>,
    #[serde(serialize_with = "ser_opt_vec")]
    pub d: Option<DVector<f64>>,
    pub gamma: f64,
    pub sector_mode: SectorMode,
    pub minimize_trace: bool,
    pub solver: SolverOptions,
}

fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

fn ser_opt_vec<S: serde::Serializer>(v: &Option<DVector<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_ref().map(|v| v.as_slice().to_vec()).serialize(s)
}

impl VerifyConfig {
    pub fn new(theorem: Theorem, r: DVector<f64>, d: Option<DVector<f64>>) -> Self {
        Self {
            theorem,
            r,
            d,
            gamma: 1.0,
            sector_mode: SectorMode::Auto,
            minimize_trace: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectorKind {
    Global,
    Anchored,
    Slope,
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub config: VerifyConfig,
    pub aug: AugmentedPlant,
    pub setpoints: SetpointMap,
    pub steady: SteadyState,
    pub trace: LayerTrace,
    pub bounds: Option<BoundBox>,
    pub sectors: SectorBounds,
    pub sector_kind: SectorKind,
    pub s_matrix: Option<DMatrix<f64>>,
    pub system: LmiSystem,
    pub solution: SdpSolution,
}

pub fn verify(spec: &LoopSpec, cfg: &VerifyConfig) -> Result<Verification> {
    cfg.solver.validate()?;
    let nn = &spec.nn;
    let aug = spec.augmented()?;
    let setpoints = spec.setpoints()?;
    if cfg.r.len() != spec.plant.n_r() {
        return Err(Error::DimensionMismatch(format!(
            "reference has length {}, expected {}",
            cfg.r.len(),
            spec.plant.n_r()
        )));
    }
    let steady = setpoints.at(&cfg.r);
    let trace = nn.forward(&steady.x_star, &cfg.r)?;
    let sel = lmi::build_selectors(nn, aug.n_xtil())?;
    let n1 = nn.neuron_counts()[0];

    let local_d = || -> Result<DVector<f64>> {
        let d = cfg
            .d
            .clone()
            .ok_or_else(|| Error::InvalidParameter("local certificates need first-layer half-widths d".into()))?;
        if d.len() == 1 && n1 > 1 {
            Ok(sectors::uniform_d(d[0], n1))
        } else {
            Ok(d)
        }
    };

    let (bounds, sec, kind, s_matrix, system) = match cfg.theorem {
        Theorem::Global => {
            let sec = SectorBounds::global(&nn.activation, nn.n_neurons());
            let sys = lmi::build_global(&aug, &sel, nn.activation.alpha, nn.activation.beta)?;
            (None, sec, SectorKind::Global, None, sys)
        }
        Theorem::LocalFixed => {
            let d = local_d()?;
            let bb = sectors::propagate_box(nn, &trace.v[0], &d)?;
            let sec = sectors::local_sectors(nn, &bb, &trace)?;
            let sys = lmi::build_local_fixed(&aug, &sel, &sec, &d, cfg.minimize_trace)?;
            (Some(bb), sec, SectorKind::Anchored, None, sys)
        }
        Theorem::LocalRange => {
            let d = local_d()?;
            let s = lmi::ref_sensitivity(nn, &setpoints.map.m);
            let bb = sectors::propagate_box(nn, &trace.v[0], &d)?;
            let anchored = match cfg.sector_mode {
                SectorMode::Auto => s.amax() <= 1e-10,
                SectorMode::Anchored => true,
                SectorMode::Slope => false,
            };
            let (sec, kind) = if anchored {
                (sectors::local_sectors(nn, &bb, &trace)?, SectorKind::Anchored)
            } else {
                (sectors::slope_sectors(nn, &bb), SectorKind::Slope)
            };
            let sys = lmi::build_local_range(&aug, &sel, &sec, &d, &s, cfg.gamma)?;
            (Some(bb), sec, kind, Some(s), sys)
        }
    };

    let solution = sdp::solve(&system, &cfg.solver)?;
    Ok(Verification {
        config: cfg.clone(),
        aug,
        setpoints,
        steady,
        trace,
        bounds,
        sectors: sec,
        sector_kind: kind,
        s_matrix,
        system,
        solution,
    })
}

impl Verification {
    pub fn status(&self) -> SolveStatus {
        self.solution.status
    }

    pub fn certified(&self) -> bool {
        self.solution.status == SolveStatus::Feasible
    }

    /// `E_P(x̃_*(r))` of a certified local or global run.
    pub fn ellipsoid(&self) -> Option<Ellipsoid> {
        self.certified().then(|| Ellipsoid {
            center: self.steady.xtil_star.clone(),
            shape: self.solution.p.clone(),
            level: 1.0,
        })
    }

    pub fn joint(&self) -> Option<JointEllipsoid> {
        if !self.certified() {
            return None;
        }
        let q = self.solution.q.clone()?;
        JointEllipsoid::new(self.solution.p.clone(), q, self.config.r.clone(), self.setpoints.clone()).ok()
    }

    pub fn admissible(&self) -> Option<AdmissibleSet> {
        self.joint().map(|j| j.admissible_references())
    }

    /// Process exit code: 0 certified, 1 infeasible, 2 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.solution.status {
            SolveStatus::Feasible => 0,
            SolveStatus::Infeasible => 1,
            SolveStatus::Inaccurate | SolveStatus::SolverError => 2,
        }
    }

    /// JSON report; `wall_clock_seconds` is the only run-dependent field.
    pub fn report(&self, wall_clock_seconds: f64) -> Value {
        let sol = &self.solution;
        let certified = self.certified();
        json!({
            "theorem": self.config.theorem,
            "status": sol.status,
            "certified": certified,
            "message": sol.message,
            "reference": self.config.r.as_slice(),
            "d": self.config.d.as_ref().map(|d| d.as_slice().to_vec()),
            "gamma": (self.config.theorem == Theorem::LocalRange).then_some(self.config.gamma),
            "steady_state": {
                "x_star": self.steady.x_star.as_slice(),
                "u_star": self.steady.u_star.as_slice(),
                "xi_star": self.steady.xi_star.as_slice(),
                "xtil_star": self.steady.xtil_star.as_slice(),
            },
            "sectors": {
                "kind": self.sector_kind,
                "alpha_phi": self.sectors.alpha.as_slice(),
                "beta_phi": self.sectors.beta.as_slice(),
            },
            "S": self.s_matrix.as_ref().map(to_rows),
            "objective": sol.objective_value,
            "P": to_rows(&sol.p),
            "Lambda": sol.lambda.as_slice(),
            "Q": sol.q.as_ref().map(to_rows),
            "margins": sol.margins,
            "admissible_references": self.admissible(),
            "solver": {
                "backend": self.config.solver.backend,
                "tol": self.config.solver.tol,
                "iterations": sol.iterations,
                "phase1_value": sol.phase1_value,
                "n_vars": self.system.n_vars(),
                "total_block_order": self.system.total_order(),
            },
            "wall_clock_seconds": wall_clock_seconds,
        })
    }
}

/// Per-neuron interval and sector data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronBounds {
    pub layer: usize,
    pub neuron: usize,
    pub v_star: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub w_lo: f64,
    pub w_hi: f64,
    pub alpha_phi: f64,
    pub beta_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub activation: crate::network::ActivationKind,
    pub sector_kind: SectorKind,
    pub d: Vec<f64>,
    pub neurons: Vec<NeuronBounds>,
}

/// Interval and sector report around the trace `anchor`.
pub fn bounds_report(nn: &FeedForwardNN, anchor: &LayerTrace, d: &DVector<f64>, slope: bool) -> Result<BoundsReport> {
    let n1 = nn.neuron_counts()[0];
    let d = if d.len() == 1 && n1 > 1 { sectors::uniform_d(d[0], n1) } else { d.clone() };
    let bb = sectors::propagate_box(nn, &anchor.v[0], &d)?;
    let (sec, kind) = if slope {
        (sectors::slope_sectors(nn, &bb), SectorKind::Slope)
    } else {
        (sectors::local_sectors(nn, &bb, anchor)?, SectorKind::Anchored)
    };
    let mut neurons = Vec::with_capacity(nn.n_neurons());
    let mut k = 0;
    for (i, v) in anchor.v.iter().enumerate() {
        for j in 0..v.len() {
            neurons.push(NeuronBounds {
                layer: i + 1,
                neuron: j + 1,
                v_star: v[j],
                v_lo: bb.v_lo[i][j],
                v_hi: bb.v_hi[i][j],
                w_lo: bb.w_lo[i][j],
                w_hi: bb.w_hi[i][j],
                alpha_phi: sec.alpha[k],
                beta_phi: sec.beta[k],
            });
            k += 1;
        }
    }
    Ok(BoundsReport { activation: nn.activation.kind, sector_kind: kind, d: d.iter().cloned().collect(), neurons })
}
