//! Layered RX + CNOT-chain circuits and their parameter-shift gradients.
//!
//! Each layer rotates every qubit with its own `RX(θ)` and then entangles
//! neighbours with `CNOT(j, j+1)` for `j = 0..n-1`. Angles are stored
//! layer-major, qubit-minor.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::qsim::StateVector;

/// A single gate of the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Rotation on `qubit` driven by angle `param`.
    Rx { qubit: usize, param: usize },
    Cnot { control: usize, target: usize },
}

/// Shape of the parameterized circuit `U(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitSpec {
    n_qubits: usize,
    depth: usize,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, depth: usize) -> Result<Self> {
        if n_qubits == 0 || depth == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "circuit needs at least one qubit and one layer (got n={n_qubits}, depth={depth})"
            )));
        }
        Ok(Self { n_qubits, depth })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn param_count(&self) -> usize {
        self.depth * self.n_qubits
    }

    /// The gate sequence in execution order.
    pub fn gates(&self) -> Vec<Gate> {
        let n = self.n_qubits;
        let mut gates = Vec::with_capacity(self.depth * (2 * n - 1));
        for layer in 0..self.depth {
            gates.extend((0..n).map(|q| Gate::Rx {
                qubit: q,
                param: layer * n + q,
            }));
            gates.extend((0..n - 1).map(|q| Gate::Cnot {
                control: q,
                target: q + 1,
            }));
        }
        gates
    }

    fn check(&self, params: &ParamVector, input: &StateVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "circuit expects {} angles, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if input.n_qubits() != self.n_qubits {
            return Err(Error::ShapeMismatch(alloc::format!(
                "circuit acts on {} qubits, state has {}",
                self.n_qubits,
                input.n_qubits()
            )));
        }
        Ok(())
    }
}

/// Trainable rotation angles θ in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dense row-major `n_qubits × n_params` matrix of `∂z_i/∂θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Jᵀ g`, accumulated into `out` (length `cols`).
    pub fn accumulate_vjp(&self, g: &[f64], out: &mut [f64]) {
        for (i, gi) in g.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, j) in out.iter_mut().zip(row) {
                *o += gi * j;
            }
        }
    }
}

fn apply_gates(state: &mut StateVector, gates: &[Gate], theta: &[f64]) -> Result<()> {
    for gate in gates {
        match *gate {
            Gate::Rx { qubit, param } => state.rx(qubit, theta[param])?,
            Gate::Cnot { control, target } => state.cnot(control, target)?,
        }
    }
    Ok(())
}

/// `U(θ)|input⟩`.
pub fn run_circuit(
    spec: &CircuitSpec,
    params: &ParamVector,
    input: &StateVector,
) -> Result<StateVector> {
    spec.check(params, input)?;
    let mut state = input.clone();
    apply_gates(&mut state, &spec.gates(), params.as_slice())?;
    Ok(state)
}

/// `z_i = ⟨ψ(θ)|Z_i|ψ(θ)⟩` for every qubit.
pub fn expectation_bundle(
    spec: &CircuitSpec,
    params: &ParamVector,
    input: &StateVector,
) -> Result<Vec<f64>> {
    Ok(run_circuit(spec, params, input)?.expect_z_all())
}

/// Jacobian of all Z expectations by the two-term shift rule, running the
/// full circuit twice per angle.
pub fn parameter_shift_jacobian(
    spec: &CircuitSpec,
    params: &ParamVector,
    input: &StateVector,
) -> Result<Jacobian> {
    spec.check(params, input)?;
    let gates = spec.gates();
    let n = spec.n_qubits;
    let p = params.len();
    let mut jac = Jacobian::zeros(n, p);
    let mut shifted = params.0.clone();
    for j in 0..p {
        shifted[j] = params.0[j] + FRAC_PI_2;
        let mut plus = input.clone();
        apply_gates(&mut plus, &gates, &shifted)?;
        shifted[j] = params.0[j] - FRAC_PI_2;
        let mut minus = input.clone();
        apply_gates(&mut minus, &gates, &shifted)?;
        shifted[j] = params.0[j];
        for (i, (zp, zm)) in plus.expect_z_all().into_iter().zip(minus.expect_z_all()).enumerate() {
            jac.data[i * p + j] = 0.5 * (zp - zm);
        }
    }
    Ok(jac)
}

/// Result of one forward pass plus its parameter-shift Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEvaluation {
    pub z: Vec<f64>,
    pub jacobian: Jacobian,
    /// Circuit executions performed: one unshifted plus two per angle.
    pub executions: u64,
    /// The unshifted output state `U(θ)|input⟩`.
    pub output: StateVector,
}

/// Computes `z` and the shift-rule Jacobian together.
///
/// Because every angle sits in its own `RX`, `RX(θ ± π/2) = RX(±π/2)·RX(θ)`,
/// so each shifted execution resumes from the unshifted state snapshot taken
/// right after gate `j` instead of replaying the prefix. The counts of
/// shifted executions and observables are unchanged.
pub fn evaluate_with_gradient(
    spec: &CircuitSpec,
    params: &ParamVector,
    input: &StateVector,
) -> Result<ShiftEvaluation> {
    spec.check(params, input)?;
    let gates = spec.gates();
    let theta = params.as_slice();
    let n = spec.n_qubits;
    let p = params.len();

    let mut snapshots: Vec<(usize, StateVector)> = Vec::with_capacity(p);
    let mut state = input.clone();
    for (pos, gate) in gates.iter().enumerate() {
        apply_gates(&mut state, core::slice::from_ref(gate), theta)?;
        if let Gate::Rx { .. } = gate {
            snapshots.push((pos, state.clone()));
        }
    }
    let z = state.expect_z_all();
    let output = state;
    let mut executions = 1;

    let mut jac = Jacobian::zeros(n, p);
    for (pos, snap) in snapshots {
        let Gate::Rx { qubit, param } = gates[pos] else {
            unreachable!("snapshots are only taken after rotations")
        };
        let rest = &gates[pos + 1..];
        let mut plus = snap.clone();
        plus.rx(qubit, FRAC_PI_2)?;
        apply_gates(&mut plus, rest, theta)?;
        let mut minus = snap;
        minus.rx(qubit, -FRAC_PI_2)?;
        apply_gates(&mut minus, rest, theta)?;
        executions += 2;
        for (i, (zp, zm)) in plus.expect_z_all().into_iter().zip(minus.expect_z_all()).enumerate() {
            jac.data[i * p + param] = 0.5 * (zp - zm);
        }
    }
    Ok(ShiftEvaluation {
        z,
        jacobian: jac,
        executions,
        output,
    })
}

/// Gradient of `Σ_i u_i·z_i` with respect to real input amplitudes, given
/// the output state `U(θ)|x⟩`: `2·Re(U(θ)†·(Σ_i u_i Z_i)·U(θ)|x⟩)`.
///
/// One adjoint pass through the inverted gate list; no shifted executions.
pub fn input_vjp(spec: &CircuitSpec, params: &ParamVector, output: &StateVector, u: &[f64]) -> Result<Vec<f64>> {
    spec.check(params, output)?;
    let n = spec.n_qubits;
    if u.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: u.len(),
        });
    }
    let mut amps = output.amplitudes().to_vec();
    for (k, a) in amps.iter_mut().enumerate() {
        let mut w = 0.0;
        for (i, ui) in u.iter().enumerate() {
            if (k >> (n - 1 - i)) & 1 == 0 {
                w += ui;
            } else {
                w -= ui;
            }
        }
        *a *= w;
    }
    let mut state = StateVector::from_amplitudes(amps)?;
    let theta = params.as_slice();
    for gate in spec.gates().iter().rev() {
        match *gate {
            Gate::Rx { qubit, param } => state.rx(qubit, -theta[param])?,
            Gate::Cnot { control, target } => state.cnot(control, target)?,
        }
    }
    Ok(state.amplitudes().iter().map(|a| 2.0 * a.re).collect())
}
