//! Wengert-list autodiff over 2-D `f64` values.
//!
//! Every operation appends a node holding its forward value and enough of
//! its inputs to replay the adjoint. Nodes are only ever appended, so the
//! list is in topological order and `backward` is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParamStore, Tensor};
use crate::circuits::{evaluate_with_gradient, expectation_bundle, input_vjp, CircuitSpec, Jacobian, ParamVector};
use crate::error::{Error, Result};
use crate::qsim::{amplitude_embed, EmbedSpec, StateVector, ZERO_NORM_THRESHOLD};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    /// Pauli-Z expectations of amplitude-embedded rows. Gradient flows to
    /// the angles only; the embedded input is treated as a constant.
    Quantum {
        h: Var,
        theta: Var,
        circuit: CircuitSpec,
        angles: ParamVector,
        rows: Vec<Option<QuantumRow>>,
    },
}

/// Per-row cache of a quantum node.
#[derive(Debug, Clone)]
struct QuantumRow {
    jacobian: Jacobian,
    output: StateVector,
    norm: f64,
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Counters for the quantum nodes recorded on a tape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TapeStats {
    /// Circuit executions, forward and shifted.
    pub quantum_executions: u64,
    /// Rows pushed through a circuit.
    pub quantum_rows: u64,
    /// Rows skipped because their norm was at or below the embedding threshold.
    pub skipped_rows: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<(ParamId, Var)>,
    stats: TapeStats,
    inference: bool,
}

fn shape_err(msg: alloc::string::String) -> Error {
    Error::ShapeMismatch(msg)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape for forward-only use: quantum nodes run one circuit per row
    /// and cache no Jacobian, so their angles receive zero gradient.
    pub fn inference() -> Self {
        Self {
            inference: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> TapeStats {
        self.stats
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records `tensor` as a leaf, viewed as a matrix.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let (rows, cols) = tensor.matrix_dims();
        self.push(rows, cols, tensor.data().to_vec(), Op::Leaf, tensor.requires_grad())
    }

    /// A constant `rows × cols` matrix.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(shape_err(alloc::format!(
                "{rows}x{cols} constant given {} values",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    /// The leaf for a stored parameter, recorded once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf(store.get(id));
        self.param_vars.push((id, v));
        v
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err(alloc::format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err(alloc::format!("matmul_t {m}x{k} by ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_t_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::MatMulT(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(shape_err(alloc::format!("{what} {da:?} and {db:?}")));
        }
        Ok(da)
    }

    fn row_shape(&self, a: Var, row: Var, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let dr = self.dims(row);
        if dr != (1, da.1) {
            return Err(shape_err(alloc::format!("{what} {da:?} with row {dr:?}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, Op::Add(a, b), rg))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_shape(a, row, "add_row")?;
        let bias = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|x| x.iter().zip(bias).map(|(p, q)| p + q))
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(r, c, out, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), rg))
    }

    /// Scales every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_shape(a, row, "mul_row")?;
        let g = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|x| x.iter().zip(g).map(|(p, q)| p * q))
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(r, c, out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Scale(a, s), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(r, c, out, Op::Softmax(a), rg)
    }

    /// Row-wise softmax of a square score matrix where row `i` only sees
    /// columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != c {
            return Err(shape_err(alloc::format!("causal_softmax on {r}x{c}")));
        }
        let mut out = self.value(a).to_vec();
        for (i, row) in out.chunks_exact_mut(c).enumerate() {
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(0.0);
        }
        let rg = self.rg(a);
        Ok(self.push(r, c, out, Op::Softmax(a), rg))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.row_shape(x, gamma, "layer_norm")?;
        self.row_shape(x, beta, "layer_norm")?;
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / libm::sqrt(var + eps);
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Gelu(a), rg)
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: v,
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            ids.len(),
            d,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over positions where `mask` is true.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r || mask.len() != r {
            return Err(shape_err(alloc::format!(
                "cross_entropy over {r} rows with {} targets and {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        if let Some(&bad) = targets.iter().zip(mask).filter(|(_, m)| **m).map(|(t, _)| t).find(|&&t| t >= c) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: c,
            });
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0;
        for (i, row) in probs.chunks_exact_mut(c).enumerate() {
            softmax_in_place(row);
            if mask[i] {
                // log p recomputed from the logits for accuracy in the tail
                let lv = &self.nodes[logits.0].value[i * c..(i + 1) * c];
                let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(lv.iter().map(|x| libm::exp(x - max)).sum::<f64>());
                total += lse - lv[targets[i]];
            }
        }
        let loss = total / count as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(shape_err(alloc::format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(len, c, out, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|v| self.dims(*v).1).unwrap_or(0);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(shape_err(alloc::format!("concat_rows width {pc} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(shape_err(alloc::format!("cols {start}..{} of {c}", start + len)));
        }
        let out = self
            .value(x)
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(r, len, out, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|v| self.dims(*v).0).unwrap_or(0);
        let mut c = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(shape_err(alloc::format!("concat_cols height {pr} vs {r}")));
            }
            c += pc;
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.nodes[p.0].cols;
                out.extend_from_slice(&self.nodes[p.0].value[i * pc..(i + 1) * pc]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(1, 1, vec![total], Op::Sum(x), rg)
    }

    /// Per-row Pauli-Z expectations after amplitude embedding and the
    /// circuit `U(theta)`: `h: T×d` → `T×n`.
    ///
    /// The z values and the parameter-shift Jacobian of each row are computed
    /// once here and cached on the node together with the output state. The
    /// backward pass uses the Jacobian for `theta` and one adjoint circuit
    /// pass per row for `h`. Rows with norm at or below the embedding
    /// threshold yield a zero row and no gradient (the adapter then adds
    /// nothing for that position).
    pub fn quantum_expectations(
        &mut self,
        h: Var,
        theta: Var,
        embed: &EmbedSpec,
        circuit: &CircuitSpec,
    ) -> Result<Var> {
        let (r, d) = self.dims(h);
        if d != embed.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: embed.input_dim(),
                found: d,
            });
        }
        if embed.n_qubits() != circuit.n_qubits() {
            return Err(shape_err(alloc::format!(
                "embedding uses {} qubits, circuit {}",
                embed.n_qubits(),
                circuit.n_qubits()
            )));
        }
        let n = circuit.n_qubits();
        let angles = ParamVector::new(self.value(theta).to_vec())?;
        if angles.len() != circuit.param_count() {
            return Err(shape_err(alloc::format!(
                "circuit expects {} angles, got {}",
                circuit.param_count(),
                angles.len()
            )));
        }
        let mut out = vec![0.0; r * n];
        let mut cache = Vec::with_capacity(r);
        for i in 0..r {
            let row = &self.nodes[h.0].value[i * d..(i + 1) * d];
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm.is_nan() || norm <= ZERO_NORM_THRESHOLD {
                self.stats.skipped_rows += 1;
                cache.push(None);
                continue;
            }
            let state = amplitude_embed(row, embed)?;
            self.stats.quantum_rows += 1;
            if self.inference {
                let z = expectation_bundle(circuit, &angles, &state)?;
                out[i * n..(i + 1) * n].copy_from_slice(&z);
                self.stats.quantum_executions += 1;
                cache.push(None);
                continue;
            }
            let eval = evaluate_with_gradient(circuit, &angles, &state)?;
            out[i * n..(i + 1) * n].copy_from_slice(&eval.z);
            self.stats.quantum_executions += eval.executions;
            cache.push(Some(QuantumRow {
                jacobian: eval.jacobian,
                output: eval.output,
                norm,
            }));
        }
        let rg = !self.inference && (self.rg(theta) || self.rg(h));
        let op = Op::Quantum {
            h,
            theta,
            circuit: *circuit,
            angles,
            rows: cache,
        };
        Ok(self.push(r, n, out, op, rg))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::NotScalar {
                len: node.value.len(),
            });
        }
        if !node.requires_grad {
            return Err(Error::DisconnectedGraph);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let bv = self.value(*b);
                    self.accumulate(grads, *a, |da| matmul_t_into(g, bv, da, m, n, k));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let av = self.value(*a);
                    self.accumulate(grads, *b, |db| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let dst = &mut db[p * n..(p + 1) * n];
                                for (d, gv) in dst.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                    *d += aip * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.rg(*a) {
                    // dA = dC · B
                    let bv = self.value(*b);
                    self.accumulate(grads, *a, |da| matmul_into(g, bv, da, m, n, k));
                }
                if self.rg(*b) {
                    // dB = dCᵀ · A
                    let av = self.value(*a);
                    self.accumulate(grads, *b, |db| {
                        for i in 0..m {
                            let arow = &av[i * k..(i + 1) * k];
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for (d, av) in db[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                    *d += gij * av;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |d| add_into(d, g));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *row, |d| {
                    for gr in g.chunks_exact(cols) {
                        add_into(d, gr);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |d| {
                    for ((d, gv), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((d, gv), x) in d.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                self.accumulate(grads, *a, |d| {
                    for (drow, grow) in d.chunks_exact_mut(cols).zip(g.chunks_exact(cols)) {
                        for ((d, gv), s) in drow.iter_mut().zip(grow).zip(rv) {
                            *d += gv * s;
                        }
                    }
                });
                self.accumulate(grads, *row, |d| {
                    for (arow, grow) in av.chunks_exact(cols).zip(g.chunks_exact(cols)) {
                        for ((d, gv), x) in d.iter_mut().zip(grow).zip(arow) {
                            *d += gv * x;
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, |d| {
                    for (d, gv) in d.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |d| {
                    for ((drow, yrow), grow) in d
                        .chunks_exact_mut(cols)
                        .zip(y.chunks_exact(cols))
                        .zip(g.chunks_exact(cols))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for ((d, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma);
                self.accumulate(grads, *gamma, |d| {
                    for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for ((d, gi), h) in d.iter_mut().zip(grow).zip(hrow) {
                            *d += gi * h;
                        }
                    }
                });
                self.accumulate(grads, *beta, |d| {
                    for grow in g.chunks_exact(cols) {
                        add_into(d, grow);
                    }
                });
                self.accumulate(grads, *x, |d| {
                    let c = cols as f64;
                    for i in 0..rows {
                        let grow = &g[i * cols..(i + 1) * cols];
                        let hrow = &xhat[i * cols..(i + 1) * cols];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..cols {
                            let dh = grow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= c;
                        mean_dh_h /= c;
                        for j in 0..cols {
                            let dh = grow[j] * gv[j];
                            d[i * cols + j] += rstd[i] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xv = self.value(*a);
                self.accumulate(grads, *a, |d| {
                    for ((d, gv), x) in d.iter_mut().zip(g).zip(xv) {
                        *d += gv * gelu_grad(*x);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                self.accumulate(grads, *table, |d| {
                    for (t, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * cols..(id + 1) * cols], &g[t * cols..(t + 1) * cols]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let c = self.nodes[logits.0].cols;
                let scale = g[0] / *count as f64;
                self.accumulate(grads, *logits, |d| {
                    for (i, m) in mask.iter().enumerate() {
                        if !m {
                            continue;
                        }
                        let drow = &mut d[i * c..(i + 1) * c];
                        for (dv, p) in drow.iter_mut().zip(&probs[i * c..(i + 1) * c]) {
                            *dv += scale * p;
                        }
                        drow[targets[i]] -= scale;
                    }
                });
            }
            Op::SliceRows { x, start } => {
                self.accumulate(grads, *x, |d| {
                    add_into(&mut d[start * cols..(start + rows) * cols], g);
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    self.accumulate(grads, p, |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let xc = self.nodes[x.0].cols;
                self.accumulate(grads, *x, |d| {
                    for i in 0..rows {
                        add_into(
                            &mut d[i * xc + start..i * xc + start + cols],
                            &g[i * cols..(i + 1) * cols],
                        );
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p.0].cols;
                    self.accumulate(grads, p, |d| {
                        for i in 0..rows {
                            add_into(
                                &mut d[i * pc..(i + 1) * pc],
                                &g[i * cols + offset..i * cols + offset + pc],
                            );
                        }
                    });
                    offset += pc;
                }
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |d| {
                    for v in d.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::Quantum {
                h,
                theta,
                circuit,
                angles,
                rows,
            } => {
                self.accumulate(grads, *theta, |d| {
                    for (i, row) in rows.iter().enumerate() {
                        if let Some(row) = row {
                            row.jacobian.accumulate_vjp(&g[i * cols..(i + 1) * cols], d);
                        }
                    }
                });
                let (_, dim) = self.dims(*h);
                let hv = self.value(*h);
                self.accumulate(grads, *h, |d| {
                    for (i, row) in rows.iter().enumerate() {
                        let Some(row) = row else { continue };
                        let gx = input_vjp(circuit, angles, &row.output, &g[i * cols..(i + 1) * cols])
                            .expect("cached state matches its circuit");
                        // Back through x̃ = x / ‖x‖.
                        let x = &hv[i * dim..(i + 1) * dim];
                        let dot: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>() / row.norm;
                        for k in 0..dim {
                            d[i * dim + k] += (gx[k] - x[k] / row.norm * dot) / row.norm;
                        }
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf, if the loss reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a stored parameter, if it was recorded and trainable.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Parameters that received a gradient, in tape order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.param_vars
            .iter()
            .filter_map(|(p, v)| self.get(*v).map(|g| (*p, g)))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out += a · b` with `a: m×k`, `b: k×n`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`.
fn matmul_t_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
