//! Training text sources.

use std::path::PathBuf;

use peftlab_core::trainkit::{byte_tokens, copy_task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AppError, AppResult};

/// Bundled public-domain prose: speeches, scripture excerpts and fables.
pub const BUILTIN: &str = include_str!("../data/corpus.txt");

const COPY_LINES: usize = 2000;
const COPY_SPAN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    Builtin,
    /// Synthetic `word=word` lines; fixed generator seed, independent of the run seed.
    Copy,
    File(PathBuf),
}

impl CorpusSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "builtin" => CorpusSource::Builtin,
            "copy" => CorpusSource::Copy,
            path => CorpusSource::File(PathBuf::from(path)),
        }
    }

    /// Byte tokens of the source.
    pub fn load(&self) -> AppResult<Vec<usize>> {
        Ok(match self {
            CorpusSource::Builtin => byte_tokens(BUILTIN.as_bytes()),
            CorpusSource::Copy => byte_tokens(&copy_task(&mut ChaCha8Rng::seed_from_u64(0), COPY_LINES, COPY_SPAN)),
            CorpusSource::File(p) => byte_tokens(&std::fs::read(p).map_err(|e| AppError::io(p, e))?),
        })
    }
}
