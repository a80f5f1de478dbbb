//! Feed-forward network controller `κ(x, r)`.
//!
//! ```text
//! w⁰ = H⁰ₓ x + H⁰ᵣ r
//! vⁱ⁺¹ = Wⁱ wⁱ + bⁱ,   wⁱ⁺¹ = φ(vⁱ⁺¹)      i = 0..l−1
//! κ(x, r) = Wˡ wˡ + bˡ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Relu,
    /// Identity map. Only useful for exercising the LMIs against linear closed loops.
    Linear,
}

/// Activation shared by every hidden neuron, with global slope bounds `[alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub alpha: f64,
    pub beta: f64,
}

impl Activation {
    pub fn tanh() -> Self {
        Self { kind: ActivationKind::Tanh, alpha: 0.0, beta: 1.0 }
    }

    pub fn relu() -> Self {
        Self { kind: ActivationKind::Relu, alpha: 0.0, beta: 1.0 }
    }

    pub fn linear() -> Self {
        Self { kind: ActivationKind::Linear, alpha: 1.0, beta: 1.0 }
    }

    pub fn from_kind(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Tanh => Self::tanh(),
            ActivationKind::Relu => Self::relu(),
            ActivationKind::Linear => Self::linear(),
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => v.tanh(),
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::Linear => v,
        }
    }

    /// Derivative; for ReLU the right derivative at 0.
    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            ActivationKind::Relu => {
                if v >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(rename = "W", with = "linalg::serde_rows")]
    pub w: DMatrix<f64>,
    #[serde(with = "linalg::serde_vec")]
    pub b: DVector<f64>,
}

impl Layer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self { w: DMatrix::zeros(outputs, inputs), b: DVector::zeros(outputs) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNN {
    pub hx0: DMatrix<f64>,
    pub hr0: DMatrix<f64>,
    /// Hidden layers `(W⁰, b⁰) … (Wˡ⁻¹, bˡ⁻¹)`.
    pub layers: Vec<Layer>,
    pub wl: DMatrix<f64>,
    pub bl: DVector<f64>,
    pub activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct NnFile {
    activation: ActivationKind,
    #[serde(rename = "Hx0", with = "linalg::serde_rows")]
    hx0: DMatrix<f64>,
    #[serde(rename = "Hr0", with = "linalg::serde_rows")]
    hr0: DMatrix<f64>,
    layers: Vec<Layer>,
    #[serde(rename = "Wl", with = "linalg::serde_rows")]
    wl: DMatrix<f64>,
    #[serde(with = "linalg::serde_vec")]
    bl: DVector<f64>,
}

/// Every pre- and post-activation of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Network input `w⁰`.
    pub input: DVector<f64>,
    /// `v¹ … vˡ`
    pub v: Vec<DVector<f64>>,
    /// `w¹ … wˡ`
    pub w: Vec<DVector<f64>>,
    pub u: DVector<f64>,
}

impl LayerTrace {
    /// All pre-activations stacked into one vector of length `n`.
    pub fn v_stacked(&self) -> DVector<f64> {
        stack(&self.v)
    }

    pub fn w_stacked(&self) -> DVector<f64> {
        stack(&self.w)
    }
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let n = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(n, parts.iter().flat_map(|p| p.iter().cloned()))
}

/// Which of the two named input structures the network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeedbackStructure {
    /// `H⁰ₓ = I`, `H⁰ᵣ = 0`
    pub state_feedback: bool,
    /// `H⁰ₓ = −C`, `H⁰ᵣ = I`
    pub output_error_feedback: bool,
}

impl FeedForwardNN {
    /// State-feedback network with all weights and biases zero.
    pub fn zeros(n_x: usize, n_r: usize, n_u: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut inputs = n_x;
        for &h in hidden {
            layers.push(Layer::zeros(h, inputs));
            inputs = h;
        }
        Self {
            hx0: DMatrix::identity(n_x, n_x),
            hr0: DMatrix::zeros(n_x, n_r),
            layers,
            wl: DMatrix::zeros(n_u, inputs),
            bl: DVector::zeros(n_u),
            activation,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: NnFile = serde_json::from_str(text)?;
        let nn = Self {
            hx0: raw.hx0,
            hr0: raw.hr0,
            layers: raw.layers,
            wl: raw.wl,
            bl: raw.bl,
            activation: Activation::from_kind(raw.activation),
        };
        nn.validate()?;
        Ok(nn)
    }

    pub fn to_json(&self) -> String {
        let raw = NnFile {
            activation: self.activation.kind,
            hx0: self.hx0.clone(),
            hr0: self.hr0.clone(),
            layers: self.layers.clone(),
            wl: self.wl.clone(),
            bl: self.bl.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("network serializes")
    }

    /// Internal consistency of the chained layer shapes.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch("network needs at least one hidden layer".into()));
        }
        let n0 = self.hx0.nrows();
        if self.hr0.nrows() != n0 {
            return Err(Error::DimensionMismatch(format!(
                "Hx0 has {} rows but Hr0 has {}",
                n0,
                self.hr0.nrows()
            )));
        }
        let mut inputs = n0;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.w.ncols() != inputs || layer.b.len() != layer.w.nrows() || layer.w.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: W is {:?} and b has length {}, expected {inputs} inputs",
                    layer.w.shape(),
                    layer.b.len()
                )));
            }
            inputs = layer.w.nrows();
        }
        if self.wl.ncols() != inputs || self.bl.len() != self.wl.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "output layer Wl is {:?} with bias length {}, expected {inputs} inputs",
                self.wl.shape(),
                self.bl.len()
            )));
        }
        let finite = linalg::all_finite(&self.hx0)
            && linalg::all_finite(&self.hr0)
            && linalg::all_finite(&self.wl)
            && self.bl.iter().all(|v| v.is_finite())
            && self
                .layers
                .iter()
                .all(|l| linalg::all_finite(&l.w) && l.b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidParameter("network weights contain non-finite entries".into()));
        }
        Ok(())
    }

    /// Checks compatibility with a plant of the given dimensions.
    pub fn check_dims(&self, n_x: usize, n_r: usize, n_u: usize) -> Result<()> {
        self.validate()?;
        if self.hx0.ncols() != n_x || self.hr0.ncols() != n_r || self.wl.nrows() != n_u {
            return Err(Error::DimensionMismatch(format!(
                "network maps ({} states, {} references) to {} inputs; plant has ({n_x}, {n_r}) -> {n_u}",
                self.hx0.ncols(),
                self.hr0.ncols(),
                self.wl.nrows()
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Neuron counts `n_1 … n_l`.
    pub fn neuron_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.w.nrows()).collect()
    }

    /// Total neuron count `n`.
    pub fn n_neurons(&self) -> usize {
        self.neuron_counts().iter().sum()
    }

    pub fn n_x(&self) -> usize {
        self.hx0.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.hr0.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.wl.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>, r: &DVector<f64>) -> Result<LayerTrace> {
        if x.len() != self.n_x() || r.len() != self.n_r() {
            return Err(Error::DimensionMismatch(format!(
                "network expects x of length {} and r of length {}, got {} and {}",
                self.n_x(),
                self.n_r(),
                x.len(),
                r.len()
            )));
        }
        Ok(self.trace_unchecked(x, r))
    }

    /// Forward pass at a steady state; identical to [`forward`](Self::forward).
    pub fn steady_forward(&self, x_star: &DVector<f64>, r: &DVector<f64>) -> Result<LayerTrace> {
        self.forward(x_star, r)
    }

    fn trace_unchecked(&self, x: &DVector<f64>, r: &DVector<f64>) -> LayerTrace {
        let input = &self.hx0 * x + &self.hr0 * r;
        let mut v = Vec::with_capacity(self.layers.len());
        let mut w = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for layer in &self.layers {
            let pre = &layer.w * &cur + &layer.b;
            let post = pre.map(|s| self.activation.eval(s));
            v.push(pre);
            cur = post.clone();
            w.push(post);
        }
        let u = &self.wl * &cur + &self.bl;
        LayerTrace { input, v, w, u }
    }

    /// Controller output `κ(x, r)`. Panics on dimension mismatch.
    pub fn output(&self, x: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n_x(), "state dimension");
        assert_eq!(r.len(), self.n_r(), "reference dimension");
        let mut cur = &self.hx0 * x + &self.hr0 * r;
        for layer in &self.layers {
            cur = (&layer.w * &cur + &layer.b).map(|s| self.activation.eval(s));
        }
        &self.wl * cur + &self.bl
    }

    /// Classifies the input maps against the two named structures (exact match).
    pub fn io_maps(&self, c: &DMatrix<f64>) -> FeedbackStructure {
        let (n0, nx, nr) = (self.hx0.nrows(), self.n_x(), self.n_r());
        let state_feedback = n0 == nx
            && self.hx0 == DMatrix::identity(nx, nx)
            && self.hr0.iter().all(|&v| v == 0.0);
        let output_error_feedback = n0 == nr
            && c.shape() == self.hx0.shape()
            && self.hx0 == -c
            && self.hr0 == DMatrix::identity(nr, nr);
        FeedbackStructure { state_feedback, output_error_feedback }
    }
}
