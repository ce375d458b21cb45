use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{gaussian, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Gated low-rank update `ΔW = A·diag(g)·Bᵀ`.
///
/// The gate `g` is trained by proximal gradient steps; its nonzero count is
/// the effective rank.
#[derive(Debug, Clone, PartialEq)]
pub struct SoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub gate: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub rank: usize,
}

impl SoraAdapter {
    /// `A ~ N(0, 0.02²)`, `B = 0`, `g = 1`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rank: usize,
        rng: &mut R,
    ) -> Self {
        let a = store.add(
            format!("{name}.sora_a"),
            gaussian(rng, &[out_dim, rank], INIT_STD).with_requires_grad(true),
        );
        let b = store.add(
            format!("{name}.sora_b"),
            Tensor::zeros(&[in_dim, rank]).with_requires_grad(true),
        );
        let mut g = Tensor::zeros(&[1, rank]).with_requires_grad(true);
        g.data_mut().fill(1.0);
        let gate = store.add(format!("{name}.sora_gate"), g);
        Self {
            a,
            b,
            gate,
            in_dim,
            out_dim,
            rank,
        }
    }

    pub fn trainable_count(&self) -> usize {
        (self.in_dim + self.out_dim) * self.rank + self.rank
    }

    /// Number of nonzero gate entries.
    pub fn effective_rank(&self, store: &ParamStore) -> usize {
        store.get(self.gate).data().iter().filter(|g| **g != 0.0).count()
    }

    /// `((h·B) ⊙ g)·Aᵀ`.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let a = tape.param(store, self.a);
        let b = tape.param(store, self.b);
        let g = tape.param(store, self.gate);
        let hb = tape.matmul(h, b)?;
        let gated = tape.mul_row(hb, g)?;
        tape.matmul_t(gated, a)
    }
}

/// `h·(W + A·diag(g)·Bᵀ)ᵀ` for frozen `w: out × in`.
pub fn sora_forward(
    tape: &mut Tape,
    store: &ParamStore,
    adapter: &SoraAdapter,
    h: Var,
    w_frozen: Var,
) -> Result<Var> {
    if tape.dims(w_frozen) != (adapter.out_dim, adapter.in_dim) {
        return Err(Error::ShapeMismatch(format!(
            "frozen weight {:?} does not match adapter {}x{}",
            tape.dims(w_frozen),
            adapter.out_dim,
            adapter.in_dim
        )));
    }
    let base = tape.matmul_t(h, w_frozen)?;
    let delta = adapter.delta(tape, store, h)?;
    tape.add(base, delta)
}

/// `sign(v)·max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// One proximal gradient step for the ℓ₁-penalized gate:
/// `soft_threshold(g - η·∇g, η·λ)`.
pub fn sora_proximal_step(g: &[f64], grad_g: &[f64], eta: f64, lambda: f64) -> Vec<f64> {
    let t = eta * lambda;
    g.iter()
        .zip(grad_g)
        .map(|(gi, di)| soft_threshold(gi - eta * di, t))
        .collect()
}
