//! Exact statevector simulation for small registers.
//!
//! A register of `n` qubits is stored as `2^n` complex amplitudes. Qubit 0 is
//! the most significant bit of the basis-state index, so the basis state
//! `|k⟩` of an embedded vector lines up with entry `k` of that vector and
//! `|10⟩` is index 2.
//!
//! Gates are applied in place by walking strided amplitude pairs, which keeps
//! every single- and two-qubit gate at `O(2^n)`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Vectors whose ℓ₂ norm is at or below this value are rejected by
/// [`normalize`] and [`amplitude_embed`].
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// The state `|ψ⟩` of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// The all-zeros basis state `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Self { n_qubits, amps }
    }

    /// The computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let len = 1usize << n_qubits;
        if index >= len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: index + 1,
            });
        }
        let mut amps = vec![ZERO; len];
        amps[index] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the norm is
    /// not checked, callers building test fixtures are trusted.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "amplitude count {len} is not a power of two"
            )));
        }
        Ok(Self {
            n_qubits: len.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    /// `Σ |α_i|²`, which is 1 for any physical state.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    #[inline]
    fn mask(&self, qubit: usize) -> Result<usize> {
        if qubit >= self.n_qubits {
            return Err(Error::QubitOutOfRange {
                qubit,
                n_qubits: self.n_qubits,
            });
        }
        Ok(1 << (self.n_qubits - 1 - qubit))
    }

    /// Applies `RX(θ) = exp(-iθX/2)` to `qubit` in place.
    pub fn rx(&mut self, qubit: usize, theta: f64) -> Result<()> {
        let stride = self.mask(qubit)?;
        let c = libm::cos(0.5 * theta);
        let s = libm::sin(0.5 * theta);
        for block in self.amps.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (a0, b0) = (*a, *b);
                // -i·s·z = (s·z.im, -s·z.re)
                *a = Complex64::new(c * a0.re + s * b0.im, c * a0.im - s * b0.re);
                *b = Complex64::new(s * a0.im + c * b0.re, -s * a0.re + c * b0.im);
            }
        }
        Ok(())
    }

    /// Applies CNOT in place: amplitudes whose control bit is set have their
    /// target bit flipped.
    pub fn cnot(&mut self, control: usize, target: usize) -> Result<()> {
        let cmask = self.mask(control)?;
        let tmask = self.mask(target)?;
        if control == target {
            return Err(Error::SelfTarget { qubit: control });
        }
        for i in 0..self.amps.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amps.swap(i, i | tmask);
            }
        }
        Ok(())
    }

    /// `⟨ψ|Z_qubit|ψ⟩`.
    pub fn expect_z(&self, qubit: usize) -> Result<f64> {
        let mask = self.mask(qubit)?;
        let mut acc = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if i & mask == 0 {
                acc += p;
            } else {
                acc -= p;
            }
        }
        Ok(acc.clamp(-1.0, 1.0))
    }

    /// All single-qubit Z expectations in one pass over the amplitudes.
    pub fn expect_z_all(&self) -> Vec<f64> {
        let n = self.n_qubits;
        let mut z = vec![0.0; n];
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (j, zj) in z.iter_mut().enumerate() {
                if (i >> (n - 1 - j)) & 1 == 0 {
                    *zj += p;
                } else {
                    *zj -= p;
                }
            }
        }
        for zj in &mut z {
            *zj = zj.clamp(-1.0, 1.0);
        }
        z
    }
}

/// Layout of an amplitude embedding: `input_dim` real entries zero-padded to
/// `2^n_qubits` amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedSpec {
    input_dim: usize,
    n_qubits: usize,
}

impl EmbedSpec {
    /// Chooses the smallest register with `2^n ≥ input_dim`. A
    /// one-dimensional input still gets one qubit.
    pub fn new(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        let n_qubits = qubits_for(input_dim);
        Ok(Self {
            input_dim,
            n_qubits,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }
}

/// Smallest `n ≥ 1` with `2^n ≥ dim`.
pub fn qubits_for(dim: usize) -> usize {
    (dim.next_power_of_two().trailing_zeros() as usize).max(1)
}

/// `x / ‖x‖₂`.
pub fn normalize(x: &[f64]) -> Result<Vec<f64>> {
    let norm = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
    if norm.is_nan() || norm <= ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroNormInput);
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// Encodes `x` as the amplitudes of `spec.n_qubits()` qubits: entry `k` of
/// the normalized vector becomes the amplitude of `|k⟩`, remaining amplitudes
/// are zero.
pub fn amplitude_embed(x: &[f64], spec: &EmbedSpec) -> Result<StateVector> {
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            found: x.len(),
        });
    }
    let unit = normalize(x)?;
    let mut amps = vec![ZERO; 1 << spec.n_qubits];
    for (slot, v) in amps.iter_mut().zip(unit) {
        *slot = Complex64::new(v, 0.0);
    }
    Ok(StateVector {
        n_qubits: spec.n_qubits,
        amps,
    })
}

/// Returns `RX(θ)` applied to `qubit` of `state`.
pub fn apply_rx(state: &StateVector, qubit: usize, theta: f64) -> Result<StateVector> {
    let mut out = state.clone();
    out.rx(qubit, theta)?;
    Ok(out)
}

/// Returns `CNOT(control → target)` applied to `state`.
pub fn apply_cnot(state: &StateVector, control: usize, target: usize) -> Result<StateVector> {
    let mut out = state.clone();
    out.cnot(control, target)?;
    Ok(out)
}

pub fn expect_z(state: &StateVector, qubit: usize) -> Result<f64> {
    state.expect_z(qubit)
}

pub fn expect_z_all(state: &StateVector) -> Vec<f64> {
    state.expect_z_all()
}
