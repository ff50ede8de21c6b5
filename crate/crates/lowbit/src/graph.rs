//! Define-by-run reverse-mode autodiff on [`Tensor`] values.
//!
//! A [`Graph`] is a tape that is rebuilt for every forward pass. Each
//! operation records its output value, its parent nodes, and a closure that
//! turns the output gradient into parent gradients. [`Graph::backward`] walks
//! the tape once in reverse creation order (a valid topological order, since
//! parents are always created before children) and accumulates gradients
//! across all paths.
//!
//! [`Graph::custom`] exposes the same node mechanism used by the built-in
//! operations, which is how straight-through estimators and other
//! non-differentiable forwards register hand-written backward rules.

use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Tensor, &[Tensor]) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    /// Tensors the backward closure needs (inputs, or sometimes the output).
    saved: Vec<Tensor>,
    /// Maps (output gradient, saved tensors) to one gradient per parent.
    /// `None` marks a leaf.
    backward: Option<BackwardFn>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// A single-use forward tape supporting reverse-mode differentiation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the tape is empty.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The value stored at `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        saved: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            saved,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a leaf holding `value`. Leaves receive gradients but have no
    /// parents.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], vec![], None)
    }

    /// Registers a node with a caller-supplied backward rule.
    ///
    /// The parents' forward values are saved and handed to `backward`
    /// alongside the output gradient; `backward` must return exactly one
    /// gradient tensor per parent, each shaped like that parent's value.
    pub fn custom(
        &mut self,
        parents: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor, &[Tensor]) -> Vec<Tensor> + 'static,
    ) -> Var {
        let saved: Vec<Tensor> = parents.iter().map(|&p| self.value(p).clone()).collect();
        self.push(value, parents.to_vec(), saved, Some(Box::new(backward)))
    }

    /// Reverse-mode sweep from a scalar loss. Returns one gradient per node
    /// on a path to the loss, accumulated across all paths.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut bufs: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        bufs[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let Some(buf) = bufs[id].take() else { continue };
            let node = &self.nodes[id];
            let grad = Tensor::new(node.value.shape(), buf);
            if let Some(bw) = &node.backward {
                let parent_grads = bw(&grad, &node.saved);
                assert_eq!(
                    parent_grads.len(),
                    node.parents.len(),
                    "backward rule returned {} gradients for {} parents",
                    parent_grads.len(),
                    node.parents.len()
                );
                for (&p, pg) in node.parents.iter().zip(&parent_grads) {
                    assert_eq!(
                        pg.shape(),
                        self.nodes[p.0].value.shape(),
                        "gradient shape {:?} does not match parent shape {:?}",
                        pg.shape(),
                        self.nodes[p.0].value.shape()
                    );
                    match &mut bufs[p.0] {
                        Some(acc) => add_into(acc, pg.data()),
                        slot @ None => *slot = Some(pg.to_vec()),
                    }
                }
            }
            out[id] = Some(grad);
        }
        Gradients { grads: out }
    }

    // ---- elementwise and scalar operations ----

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = add_tensors(self.value(a), self.value(b));
        self.custom(&[a, b], value, |up, _| vec![up.clone(), up.clone()])
    }

    /// Elementwise difference `a - b` of two tensors of identical shape.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape(), data);
        self.custom(&[a, b], value, |up, _| {
            vec![up.clone(), up.map(|g| -g)]
        })
    }

    /// Elementwise (Hadamard) product of two tensors of identical shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape(), data);
        self.custom(&[a, b], value, |up, saved| {
            let ga = up.data().iter().zip(saved[1].data()).map(|(u, y)| u * y).collect();
            let gb = up.data().iter().zip(saved[0].data()).map(|(u, x)| u * x).collect();
            vec![
                Tensor::new(up.shape(), ga),
                Tensor::new(up.shape(), gb),
            ]
        })
    }

    /// Multiplies every element by the constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.custom(&[a], value, move |up, _| vec![up.map(|g| g * c)])
    }

    /// Adds a length-`cols` row vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let cols = self.value(a).cols();
        let value = add_row_value(self.value(a), self.value(row));
        self.custom(&[a, row], value, move |up, _| {
            let mut grow = vec![0.0; cols];
            for chunk in up.data().chunks(cols) {
                add_into(&mut grow, chunk);
            }
            vec![up.clone(), Tensor::new(&[cols], grow)]
        })
    }

    /// Rectified linear unit, `max(x, 0)`.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.custom(&[a], value, |up, saved| {
            let g = up
                .data()
                .iter()
                .zip(saved[0].data())
                .map(|(u, &x)| if x > 0.0 { *u } else { 0.0 })
                .collect();
            vec![Tensor::new(up.shape(), g)]
        })
    }

    // ---- shape operations ----

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let count: usize = shape.iter().product();
        assert_eq!(count, va.len(), "reshape: {:?} -> {:?} changes element count", va.shape(), shape);
        let old_shape = va.shape().to_vec();
        let value = Tensor::new(shape, va.to_vec());
        self.custom(&[a], value, move |up, _| {
            vec![Tensor::new(&old_shape, up.to_vec())]
        })
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = transpose_tensor(va);
        self.custom(&[a], value, |up, _| vec![transpose_tensor(up)])
    }

    /// Rows `r0..r1` of a matrix.
    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert!(r0 < r1 && r1 <= rows, "slice_rows: {r0}..{r1} out of bounds for {rows} rows");
        let value = Tensor::new(&[r1 - r0, cols], va.data()[r0 * cols..r1 * cols].to_vec());
        self.custom(&[a], value, move |up, _| {
            let mut g = vec![0.0; rows * cols];
            g[r0 * cols..r1 * cols].copy_from_slice(up.data());
            vec![Tensor::new(&[rows, cols], g)]
        })
    }

    /// Columns `c0..c1` of a matrix.
    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert!(c0 < c1 && c1 <= cols, "slice_cols: {c0}..{c1} out of bounds for {cols} columns");
        let w = c1 - c0;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * cols + c0..r * cols + c1]);
        }
        let value = Tensor::new(&[rows, w], data);
        self.custom(&[a], value, move |up, _| {
            let mut g = vec![0.0; rows * cols];
            for r in 0..rows {
                g[r * cols + c0..r * cols + c1].copy_from_slice(&up.data()[r * w..(r + 1) * w]);
            }
            vec![Tensor::new(&[rows, cols], g)]
        })
    }

    /// Stacks matrices with identical column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows: column mismatch");
            row_counts.push(v.rows());
            data.extend_from_slice(v.data());
        }
        let total: usize = row_counts.iter().sum();
        let value = Tensor::new(&[total, cols], data);
        self.custom(parts, value, move |up, _| {
            let mut grads = Vec::with_capacity(row_counts.len());
            let mut offset = 0;
            for &r in &row_counts {
                grads.push(Tensor::new(
                    &[r, cols],
                    up.data()[offset * cols..(offset + r) * cols].to_vec(),
                ));
                offset += r;
            }
            grads
        })
    }

    /// Concatenates matrices with identical row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols: row mismatch");
                v.cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(&[rows, total], data);
        self.custom(parts, value, move |up, _| {
            let mut grads = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for &w in &widths {
                let mut g = vec![0.0; rows * w];
                for r in 0..rows {
                    g[r * w..(r + 1) * w]
                        .copy_from_slice(&up.data()[r * total + offset..r * total + offset + w]);
                }
                grads.push(Tensor::new(&[rows, w], g));
                offset += w;
            }
            grads
        })
    }

    // ---- linear algebra ----

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul: inner dimensions differ, {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let value = matmul_tensors(va, vb);
        self.custom(&[a, b], value, |up, saved| {
            let bt = transpose_tensor(&saved[1]);
            let at = transpose_tensor(&saved[0]);
            vec![matmul_tensors(up, &bt), matmul_tensors(&at, up)]
        })
    }

    // ---- nonlinear row operations ----

    /// Softmax over each row of a matrix. Entries of `-inf` produce exact
    /// zeros, which is how attention masking enters.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = va.to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor::new(va.shape(), data);
        // The backward rule needs the output, not the input.
        let out = value.clone();
        self.push(
            value,
            vec![a],
            vec![out],
            Some(Box::new(move |up, saved| {
                let s = &saved[0];
                let mut g = vec![0.0; up.len()];
                for r in 0..up.len() / cols {
                    let urow = &up.data()[r * cols..(r + 1) * cols];
                    let srow = &s.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = urow.iter().zip(srow).map(|(u, s)| u * s).sum();
                    for j in 0..cols {
                        g[r * cols + j] = srow[j] * (urow[j] - dot);
                    }
                }
                vec![Tensor::new(up.shape(), g)]
            })),
        )
    }

    /// Log-softmax over each row of a matrix.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = va.to_vec();
        for row in data.chunks_mut(cols) {
            log_softmax_in_place(row);
        }
        let value = Tensor::new(va.shape(), data);
        let out = value.clone();
        self.push(
            value,
            vec![a],
            vec![out],
            Some(Box::new(move |up, saved| {
                let ls = &saved[0];
                let mut g = vec![0.0; up.len()];
                for r in 0..up.len() / cols {
                    let urow = &up.data()[r * cols..(r + 1) * cols];
                    let lrow = &ls.data()[r * cols..(r + 1) * cols];
                    let usum: f64 = urow.iter().sum();
                    for j in 0..cols {
                        g[r * cols + j] = urow[j] - lrow[j].exp() * usum;
                    }
                }
                vec![Tensor::new(up.shape(), g)]
            })),
        )
    }

    /// Layer normalization over each row, with learnable per-column `gamma`
    /// and `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let cols = vx.cols();
        assert_eq!(vg.shape(), &[cols], "layernorm: gamma shape {:?}", vg.shape());
        assert_eq!(vb.shape(), &[cols], "layernorm: beta shape {:?}", vb.shape());
        let rows = vx.rows();
        // Normalized rows are recomputed in backward from the saved input;
        // only the forward output is materialized here.
        let value = layernorm_value(vx, vg, vb, eps);
        self.custom(&[x, gamma, beta], value, move |up, saved| {
            let (vx, vg) = (&saved[0], &saved[1]);
            let mut gx = vec![0.0; rows * cols];
            let mut gg = vec![0.0; cols];
            let mut gb = vec![0.0; cols];
            for r in 0..rows {
                let xrow = &vx.data()[r * cols..(r + 1) * cols];
                let urow = &up.data()[r * cols..(r + 1) * cols];
                let (mean, inv_sigma) = row_norm_stats(xrow, eps);
                // h = dL/dxhat, plus the two row means the chain rule needs.
                let mut h = vec![0.0; cols];
                let mut h_mean = 0.0;
                let mut hx_mean = 0.0;
                for j in 0..cols {
                    let xhat = (xrow[j] - mean) * inv_sigma;
                    h[j] = urow[j] * vg.data()[j];
                    h_mean += h[j];
                    hx_mean += h[j] * xhat;
                    gg[j] += urow[j] * xhat;
                    gb[j] += urow[j];
                }
                h_mean /= cols as f64;
                hx_mean /= cols as f64;
                for j in 0..cols {
                    let xhat = (xrow[j] - mean) * inv_sigma;
                    gx[r * cols + j] = (h[j] - h_mean - xhat * hx_mean) * inv_sigma;
                }
            }
            vec![
                Tensor::new(&[rows, cols], gx),
                Tensor::new(&[cols], gg),
                Tensor::new(&[cols], gb),
            ]
        })
    }

    // ---- gather / loss operations ----

    /// Gathers rows of `table` at the given indices: output row `t` is
    /// `table[ids[t]]`. The gradient scatter-adds back into the table.
    pub fn embedding(&mut self, ids: &[usize], table: Var) -> Var {
        let vt = self.value(table);
        let (vocab, dim) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            assert!(id < vocab, "embedding: index {id} out of range for {vocab} rows");
            data.extend_from_slice(&vt.data()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(&[ids.len(), dim], data);
        let ids = ids.to_vec();
        self.custom(&[table], value, move |up, _| {
            let mut g = vec![0.0; vocab * dim];
            for (t, &id) in ids.iter().enumerate() {
                add_into(
                    &mut g[id * dim..(id + 1) * dim],
                    &up.data()[t * dim..(t + 1) * dim],
                );
            }
            vec![Tensor::new(&[vocab, dim], g)]
        })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Returns a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let vl = self.value(logits);
        let (rows, cols) = (vl.rows(), vl.cols());
        assert_eq!(rows, targets.len(), "cross_entropy: {} rows vs {} targets", rows, targets.len());
        let mut probs = vl.to_vec();
        let mut total = 0.0;
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            log_softmax_in_place(row);
            assert!(targets[r] < cols, "cross_entropy: target {} out of range", targets[r]);
            total -= row[targets[r]];
            // Convert the stored row to probabilities for the backward pass.
            for v in row.iter_mut() {
                *v = v.exp();
            }
        }
        let value = Tensor::scalar(total / rows as f64);
        let probs = Tensor::new(&[rows, cols], probs);
        let targets = targets.to_vec();
        self.push(
            value,
            vec![logits],
            vec![probs],
            Some(Box::new(move |up, saved| {
                let scale = up.item() / rows as f64;
                let mut g = saved[0].to_vec();
                for (r, row) in g.chunks_mut(cols).enumerate() {
                    row[targets[r]] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![Tensor::new(&[rows, cols], g)]
            })),
        )
    }

    // ---- reductions ----

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let value = Tensor::scalar(va.data().iter().sum());
        self.custom(&[a], value, move |up, _| {
            vec![Tensor::full(&shape, up.item())]
        })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len() as f64;
        let shape = va.shape().to_vec();
        let value = Tensor::scalar(va.data().iter().sum::<f64>() / n);
        self.custom(&[a], value, move |up, _| {
            vec![Tensor::full(&shape, up.item() / n)]
        })
    }

    /// Mean squared error between two same-shaped tensors, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Numerically stable in-place log-softmax of one row.
fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Per-row mean and reciprocal standard deviation used by layernorm.
pub(crate) fn row_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Forward value of row-wise layer normalization; the single definition
/// shared by the graph op and the packed inference path so both produce
/// bit-identical outputs.
pub(crate) fn layernorm_value(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        let xrow = &x.data()[r * cols..(r + 1) * cols];
        let (mean, inv_sigma) = row_norm_stats(xrow, eps);
        for j in 0..cols {
            data[r * cols + j] = (xrow[j] - mean) * inv_sigma * gamma.data()[j] + beta.data()[j];
        }
    }
    Tensor::new(&[rows, cols], data)
}

/// Elementwise sum, `a + b` in that operand order.
pub(crate) fn add_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// Adds `row` to every row of `a`.
pub(crate) fn add_row_value(a: &Tensor, row: &Tensor) -> Tensor {
    let cols = a.cols();
    assert_eq!(row.shape(), &[cols], "add_row: row length mismatch");
    let mut data = a.to_vec();
    for chunk in data.chunks_mut(cols) {
        add_into(chunk, row.data());
    }
    Tensor::new(a.shape(), data)
}

pub(crate) fn transpose_tensor(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[c * rows + r] = t.data()[r * cols + c];
        }
    }
    Tensor::new(&[cols, rows], data)
}

/// Plain `[m, k] x [k, n]` product with a cache-friendly loop order.
pub(crate) fn matmul_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    assert_eq!(k, b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data()[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}
