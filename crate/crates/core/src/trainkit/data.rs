use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Next-token training pairs; `targets[i]` is `inputs[i]` shifted left by one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The same sequence `copies` times.
    pub fn repeated(window: &[usize], copies: usize) -> Self {
        let (x, y) = (window[..window.len() - 1].to_vec(), window[1..].to_vec());
        Self {
            inputs: (0..copies).map(|_| x.clone()).collect(),
            targets: (0..copies).map(|_| y.clone()).collect(),
        }
    }

    /// Reorders sequences by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            inputs: order.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: order.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

/// Draws uniformly placed windows from a token stream.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    tokens: Vec<usize>,
    seq_len: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(tokens: Vec<usize>, seq_len: usize, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if seq_len == 0 || batch_size == 0 {
            return Err(Error::InvalidConfig("seq_len and batch_size must be at least 1".into()));
        }
        if tokens.len() < seq_len + 1 {
            return Err(Error::InvalidConfig(format!(
                "corpus has {} tokens, need at least seq_len + 1 = {}",
                tokens.len(),
                seq_len + 1
            )));
        }
        Ok(Self {
            tokens,
            seq_len,
            batch_size,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        let max_start = self.tokens.len() - self.seq_len - 1;
        let mut inputs = Vec::with_capacity(self.batch_size);
        let mut targets = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let s = self.rng.random_range(0..=max_start);
            inputs.push(self.tokens[s..s + self.seq_len].to_vec());
            targets.push(self.tokens[s + 1..s + self.seq_len + 1].to_vec());
        }
        Batch { inputs, targets }
    }
}

/// Byte tokenization.
pub fn byte_tokens(text: &[u8]) -> Vec<usize> {
    text.iter().map(|&b| b as usize).collect()
}

/// Synthetic copy task: lines `w=w\n` where `w` is a random lowercase word
/// of `span` letters. The second half of each line is predictable from the
/// first.
pub fn copy_task<R: Rng + ?Sized>(rng: &mut R, lines: usize, span: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(lines * (2 * span + 2));
    for _ in 0..lines {
        let word: Vec<u8> = (0..span).map(|_| rng.random_range(b'a'..=b'z')).collect();
        out.extend_from_slice(&word);
        out.push(b'=');
        out.extend_from_slice(&word);
        out.push(b'\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;

    #[test]
    fn windows_are_shifted_pairs() {
        let tokens: Vec<usize> = (0..50).collect();
        let mut s = BatchSampler::new(tokens, 8, 4, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = s.next_batch();
        assert_eq!(b.len(), 4);
        for (x, y) in b.inputs.iter().zip(&b.targets) {
            assert_eq!(x.len(), 8);
            for i in 0..8 {
                assert_eq!(y[i], x[i] + 1);
            }
        }
    }

    #[test]
    fn sampler_is_seeded() {
        let tokens: Vec<usize> = (0..100).collect();
        let mk = |seed| BatchSampler::new(tokens.clone(), 5, 3, ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (mut a, mut b, mut c) = (mk(1), mk(1), mk(2));
        let (x, y, z) = (a.next_batch(), b.next_batch(), c.next_batch());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn corpus_too_short() {
        assert!(BatchSampler::new(vec![1, 2, 3], 3, 1, ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(BatchSampler::new(vec![1, 2, 3, 4], 3, 1, ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn copy_lines() {
        let text = copy_task(&mut ChaCha8Rng::seed_from_u64(3), 10, 4);
        assert_eq!(text.len(), 10 * 10);
        for line in text.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let (a, b) = line.split_at(4);
            assert_eq!(&b[1..], a);
            assert_eq!(b[0], b'=');
        }
    }

    #[test]
    fn repeated_and_permuted() {
        let b = Batch::repeated(&[1, 2, 3, 4], 2);
        assert_eq!(b.inputs, vec![vec![1, 2, 3], vec![1, 2, 3]]);
        assert_eq!(b.targets[1], vec![2, 3, 4]);
        let c = Batch {
            inputs: vec![vec![1], vec![2]],
            targets: vec![vec![3], vec![4]],
        };
        assert_eq!(c.permuted(&[1, 0]).inputs, vec![vec![2], vec![1]]);
    }
}
