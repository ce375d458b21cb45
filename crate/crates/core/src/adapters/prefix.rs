use alloc::format;

use rand::Rng;

use super::{gaussian, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Trainable `l × d` block prepended to one layer's input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixAdapter {
    /// `None` when `len == 0`.
    pub prefix: Option<ParamId>,
    pub len: usize,
    pub d_model: usize,
}

impl PrefixAdapter {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        len: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        let prefix = (len > 0).then(|| {
            store.add(
                format!("{name}.prefix"),
                gaussian(rng, &[len, d_model], INIT_STD).with_requires_grad(true),
            )
        });
        Self {
            prefix,
            len,
            d_model,
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.len * self.d_model
    }
}

/// `[P; x]` along the sequence axis: `T × d` → `(l + T) × d`.
pub fn prefix_forward(
    tape: &mut Tape,
    store: &ParamStore,
    adapter: &PrefixAdapter,
    token_states: Var,
) -> Result<Var> {
    let (_, d) = tape.dims(token_states);
    if d != adapter.d_model {
        return Err(Error::ShapeMismatch(format!(
            "prefix width {} vs token width {d}",
            adapter.d_model
        )));
    }
    match adapter.prefix {
        None => Ok(token_states),
        Some(id) => {
            let p = tape.param(store, id);
            tape.concat_rows(&[p, token_states])
        }
    }
}
