use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::circuits::CircuitSpec;
use crate::error::Result;
use crate::qsim::EmbedSpec;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use super::THETA_INIT;

/// Quantum amplitude adapter: `h ↦ h + Wᵀ·z(h)` where `z` are the Pauli-Z
/// expectations of `U(θ)` applied to the amplitude embedding of `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QaaAdapter {
    pub embed: EmbedSpec,
    pub circuit: CircuitSpec,
    /// `1 × D·n` angles.
    pub theta: ParamId,
    /// `n × d` up-projection.
    pub up: ParamId,
}

impl QaaAdapter {
    /// `θ ~ U[-0.1, 0.1]`, `W = 0`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = EmbedSpec::new(d_model)?;
        let circuit = CircuitSpec::new(embed.n_qubits(), depth)?;
        let angles: Vec<f64> = (0..circuit.param_count())
            .map(|_| rng.random_range(-THETA_INIT..=THETA_INIT))
            .collect();
        let theta = store.add(
            format!("{name}.qaa_theta"),
            Tensor::new(alloc::vec![1, angles.len()], angles)?.with_requires_grad(true),
        );
        let up = store.add(
            format!("{name}.qaa_up"),
            Tensor::zeros(&[embed.n_qubits(), d_model]).with_requires_grad(true),
        );
        Ok(Self {
            embed,
            circuit,
            theta,
            up,
        })
    }

    pub fn trainable_count(&self) -> usize {
        let n = self.circuit.n_qubits();
        self.circuit.param_count() + n * self.embed.input_dim()
    }

    /// `z(h)·W`, the residual `Δh` for rows `h: T × d`.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let theta = tape.param(store, self.theta);
        let up = tape.param(store, self.up);
        let z = tape.quantum_expectations(h, theta, &self.embed, &self.circuit)?;
        tape.matmul(z, up)
    }
}

/// `h + Δh`. Rows with (near-)zero norm pass through unchanged.
pub fn qaa_forward(tape: &mut Tape, store: &ParamStore, adapter: &QaaAdapter, h: Var) -> Result<Var> {
    let delta = adapter.delta(tape, store, h)?;
    tape.add(h, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::gaussian;
    use crate::circuits::{expectation_bundle, ParamVector};
    use crate::qsim::StateVector;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adapter(d: usize, depth: usize, seed: u64) -> (ParamStore, QaaAdapter) {
        let mut store = ParamStore::new();
        let ad = QaaAdapter::new(&mut store, "q", d, depth, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, ad)
    }

    #[test]
    fn shapes_and_counts() {
        let (store, ad) = adapter(32, 2, 0);
        assert_eq!(ad.circuit.n_qubits(), 5);
        assert_eq!(store.get(ad.up).shape(), &[5, 32]);
        assert_eq!(ad.trainable_count(), 2 * 5 + 5 * 32);
        assert_eq!(ad.trainable_count(), store.trainable_count());
        assert!(store.get(ad.theta).data().iter().all(|t| t.abs() <= THETA_INIT));
    }

    #[test]
    fn zero_up_projection_is_identity() {
        let (store, ad) = adapter(8, 2, 1);
        let h = gaussian(&mut ChaCha8Rng::seed_from_u64(9), &[3, 8], 1.0);
        let mut t = Tape::new();
        let hv = t.leaf(&h);
        let y = qaa_forward(&mut t, &store, &ad, hv).unwrap();
        assert_eq!(t.value(y), h.data());
    }

    #[test]
    fn basis_input_with_zero_angles() {
        // θ = 0, h = e_0: the CNOT chain leaves |0…0⟩ alone, so z = 1⃗ and
        // the output is h + Wᵀ·1⃗ (column sums of W).
        let d = 4;
        let (mut store, ad) = adapter(d, 2, 2);
        store.get_mut(ad.theta).data_mut().fill(0.0);
        let w: Vec<f64> = (0..2 * d).map(|i| 0.1 * i as f64 - 0.3).collect();
        store.get_mut(ad.up).data_mut().copy_from_slice(&w);
        let mut t = Tape::new();
        let hv = t.constant(1, d, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = qaa_forward(&mut t, &store, &ad, hv).unwrap();
        let z = expectation_bundle(&ad.circuit, &ParamVector::zeros(4), &StateVector::zero(2)).unwrap();
        assert_eq!(z, vec![1.0, 1.0]);
        for j in 0..d {
            let expected = if j == 0 { 1.0 } else { 0.0 } + w[j] + w[d + j];
            assert!((t.value(y)[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_row_passes_through() {
        let (mut store, ad) = adapter(4, 1, 3);
        store.get_mut(ad.up).data_mut().fill(0.5);
        let mut t = Tape::new();
        let hv = t.constant(2, 4, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = qaa_forward(&mut t, &store, &ad, hv).unwrap();
        assert_eq!(&t.value(y)[..4], &[0.0; 4]);
        assert_eq!(t.stats().skipped_rows, 1);
    }

    #[test]
    fn angle_gradient_matches_finite_differences() {
        let d = 8;
        let (mut store, ad) = adapter(d, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = gaussian(&mut rng, &[3, d], 0.5);
        store.get_mut(ad.up).data_mut().copy_from_slice(w.data());
        let h = gaussian(&mut rng, &[2, d], 1.0);
        let loss = |store: &ParamStore| {
            let mut t = Tape::new();
            let hv = t.leaf(&h);
            let y = qaa_forward(&mut t, store, &ad, hv).unwrap();
            let s = t.sum(y);
            (t, s)
        };
        let (t, s) = loss(&store);
        let g = t.backward(s).unwrap();
        let gt = g.param(ad.theta).unwrap().to_vec();
        let gw = g.param(ad.up).unwrap().to_vec();
        let theta0 = store.get(ad.theta).data().to_vec();
        for k in 0..theta0.len() {
            let mut p = store.clone();
            p.get_mut(ad.theta).data_mut()[k] = theta0[k] + 1e-5;
            let (tp, sp) = loss(&p);
            p.get_mut(ad.theta).data_mut()[k] = theta0[k] - 1e-5;
            let (tm, sm) = loss(&p);
            let fd = (tp.value(sp)[0] - tm.value(sm)[0]) / 2e-5;
            assert!((gt[k] - fd).abs() < 1e-6, "θ_{k}: {} vs {fd}", gt[k]);
        }
        // ∂ sum(z·W)/∂W[i][j] = Σ_rows z_i.
        let mut t = Tape::new();
        let hv = t.leaf(&h);
        let th = t.param(&store, ad.theta);
        let z = t.quantum_expectations(hv, th, &ad.embed, &ad.circuit).unwrap();
        let zv = t.value(z);
        for i in 0..3 {
            for j in 0..d {
                assert!((gw[i * d + j] - (zv[i] + zv[3 + i])).abs() < 1e-12);
            }
        }
    }
}
