//! Stability and offset-free tracking certificates for discrete-time LTI plants
//! in feedback with an integrator and a feedforward neural network controller.
//!
//! The pipeline: augment the plant with the integrator, compute the
//! reference-to-equilibrium map, bound the hidden pre-activations on a box,
//! derive sector constraints, assemble the Lyapunov LMIs, solve them with the
//! built-in interior-point SDP solver, certify the result by eigenvalue checks
//! and turn `P` (and `Q`) into ellipsoidal region-of-attraction estimates.
//! A reference governor uses the joint ellipsoid to keep tracking safe.

pub mod assets;
pub mod closed_loop;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod network;
pub mod pipeline;
pub mod plant;
pub mod plot;
pub mod roa;
pub mod sdp;
pub mod sectors;

pub use closed_loop::{
    govern, simulate, simulate_with_governor, GovernorConfig, GovernorMode, GovernorOptimizer, RefSchedule,
    SimOptions, Trajectory,
};
pub use error::{Error, Result};
pub use lmi::{LmiSystem, Theorem};
pub use network::{Activation, ActivationKind, FeedForwardNN, Layer, LayerTrace};
pub use pipeline::{bounds_report, verify, BoundsReport, LoopSpec, SectorMode, Verification, VerifyConfig};
pub use plant::{
    augment, build_pendulum, steady_state, AugmentedPlant, Discretization, PendulumOutput, PendulumParams, Plant,
    SetpointMap, SteadyState,
};
pub use roa::{AdmissibleSet, Ellipsoid, JointEllipsoid, Slice};
pub use sdp::{SdpSolution, SolveStatus, SolverOptions};
pub use sectors::{BoundBox, SectorBounds};
