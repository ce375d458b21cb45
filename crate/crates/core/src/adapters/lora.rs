use alloc::format;

use rand::Rng;

use super::{gaussian, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Low-rank update `ΔW = A·Bᵀ` of a frozen `out × in` weight.
///
/// `A` is `out × r`, `B` is `in × r`. The update is applied as
/// `(h·B)·Aᵀ` so `ΔW` is never materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub rank: usize,
}

impl LoraAdapter {
    /// `A ~ N(0, 0.02²)`, `B = 0`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rank: usize,
        rng: &mut R,
    ) -> Self {
        let a = store.add(
            format!("{name}.lora_a"),
            gaussian(rng, &[out_dim, rank], INIT_STD).with_requires_grad(true),
        );
        let b = store.add(
            format!("{name}.lora_b"),
            Tensor::zeros(&[in_dim, rank]).with_requires_grad(true),
        );
        Self {
            a,
            b,
            in_dim,
            out_dim,
            rank,
        }
    }

    pub fn trainable_count(&self) -> usize {
        (self.in_dim + self.out_dim) * self.rank
    }

    /// `(h·B)·Aᵀ` for `h: T × in`.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let a = tape.param(store, self.a);
        let b = tape.param(store, self.b);
        let hb = tape.matmul(h, b)?;
        tape.matmul_t(hb, a)
    }
}

/// `h·(W + A·Bᵀ)ᵀ` for rows `h: T × in` and frozen `w: out × in`.
pub fn lora_forward(
    tape: &mut Tape,
    store: &ParamStore,
    adapter: &LoraAdapter,
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
