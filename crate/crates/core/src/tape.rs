//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive operation of one computation in
//! topological order; [`Tape::backward`] replays it in exact reverse order and
//! accumulates gradients for every recorded value. One tape belongs to one
//! computation (single writer); parallelism happens across tapes, never
//! within one.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, LnStats, TensorBase};

/// Identifier of a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

enum Op<T: Scalar> {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, T),
    /// Elementwise sum of several same-shape values.
    SumMany(Vec<ValueId>),
    Matmul(ValueId, ValueId),
    /// `a @ b^T`.
    MatmulBt(ValueId, ValueId),
    /// Reduce to scalar.
    Sum(ValueId),
    /// Single entry of a rank-2 value, as a scalar.
    Pick {
        input: ValueId,
        row: usize,
        col: usize,
    },
    Softmax {
        input: ValueId,
        causal: bool,
    },
    LayerNorm {
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        stats: LnStats<T>,
    },
    Gelu(ValueId),
    /// Row gather from an embedding table.
    Embed {
        table: ValueId,
        ids: Vec<u32>,
    },
    /// Mean next-token NLL: row `i` of `logits` is scored against
    /// `targets[i]`; rows past `targets.len()` are ignored.
    CrossEntropy {
        logits: ValueId,
        targets: Vec<u32>,
        probs: TensorBase<T>,
    },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::SumMany(..) => "sum_many",
            Op::Matmul(..) => "matmul",
            Op::MatmulBt(..) => "matmul_bt",
            Op::Sum(..) => "sum",
            Op::Pick { .. } => "pick",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gelu(..) => "gelu",
            Op::Embed { .. } => "embed",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Slot<T: Scalar> {
    tensor: Arc<TensorBase<T>>,
    op: Op<T>,
    grad: Option<TensorBase<T>>,
}

/// Recorded computation with per-value gradients after `backward`.
pub struct Tape<T: Scalar> {
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { slots: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn push(&mut self, tensor: TensorBase<T>, op: Op<T>) -> ValueId {
        self.slots.push(Slot {
            tensor: Arc::new(tensor),
            op,
            grad: None,
        });
        ValueId(self.slots.len() - 1)
    }

    pub fn value(&self, id: ValueId) -> &TensorBase<T> {
        &self.slots[id.0].tensor
    }

    /// Gradient of the last `backward` loss with respect to `id`.
    /// Zero tensor for values that do not contribute to the loss.
    pub fn grad(&self, id: ValueId) -> &TensorBase<T> {
        self.slots[id.0]
            .grad
            .as_ref()
            .expect("backward() has not run")
    }

    // ── recording ops ────────────────────────────────────────────────

    pub fn leaf(&mut self, tensor: TensorBase<T>) -> ValueId {
        self.push(tensor, Op::Leaf)
    }

    /// Leaf sharing an existing tensor without copying its data.
    pub fn leaf_shared(&mut self, tensor: Arc<TensorBase<T>>) -> ValueId {
        self.slots.push(Slot {
            tensor,
            op: Op::Leaf,
            grad: None,
        });
        ValueId(self.slots.len() - 1)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let t = self.value(a).add(self.value(b));
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let t = self.value(a).sub(self.value(b));
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let t = self.value(a).mul(self.value(b));
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: ValueId, c: T) -> ValueId {
        let t = self.value(a).scale(c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn sum_many(&mut self, inputs: &[ValueId]) -> ValueId {
        assert!(!inputs.is_empty(), "sum_many needs at least one input");
        let mut acc = self.value(inputs[0]).clone();
        for id in &inputs[1..] {
            acc.add_assign(self.value(*id));
        }
        self.push(acc, Op::SumMany(inputs.to_vec()))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let t = self.value(a).matmul(self.value(b));
        self.push(t, Op::Matmul(a, b))
    }

    pub fn matmul_bt(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let t = self.value(a).matmul_bt(self.value(b));
        self.push(t, Op::MatmulBt(a, b))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let t = TensorBase::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a))
    }

    pub fn pick(&mut self, input: ValueId, row: usize, col: usize) -> ValueId {
        let v = self.value(input).row(row)[col];
        self.push(
            TensorBase::scalar(v),
            Op::Pick { input, row, col },
        )
    }

    pub fn softmax(&mut self, input: ValueId, causal: bool) -> ValueId {
        let t = tensor::softmax_rows(self.value(input), causal);
        self.push(t, Op::Softmax { input, causal })
    }

    pub fn layernorm(&mut self, input: ValueId, gamma: ValueId, beta: ValueId) -> ValueId {
        let (t, stats) = tensor::layernorm(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        self.push(
            t,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                stats,
            },
        )
    }

    pub fn gelu(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let data = x.data().iter().map(|v| tensor::gelu(*v)).collect();
        let t = TensorBase::new(x.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu(input))
    }

    pub fn embed(&mut self, table: ValueId, ids: &[u32]) -> ValueId {
        let tab = self.value(table);
        let d = tab.cols();
        let mut out = TensorBase::zeros(&[ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tab.row(id as usize));
        }
        self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean next-token cross-entropy of `logits[i]` vs `targets[i]`.
    pub fn cross_entropy(&mut self, logits: ValueId, targets: &[u32]) -> ValueId {
        let lg = self.value(logits);
        let n = targets.len();
        assert!(n >= 1 && n <= lg.rows(), "cross_entropy target count");
        let v = lg.cols();
        let mut probs = TensorBase::zeros(&[n, v]);
        let mut nll = T::zero();
        for i in 0..n {
            let row = lg.row(i);
            tensor::softmax_into(row, probs.row_mut(i));
            let p = probs.row(i)[targets[i] as usize];
            nll += -(p.ln());
        }
        let loss = nll / T::from_f64_lossy(n as f64);
        self.push(
            TensorBase::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar `loss`. Afterwards every recorded
    /// value carries `∂loss/∂value` (zero where the value does not reach the
    /// loss).
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.slots.len();
        let mut grads: Vec<Option<TensorBase<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(TensorBase::scalar(T::one()));

        for idx in (0..n).rev() {
            let Some(gout) = grads[idx].take() else {
                // keep a zero gradient for untouched values
                grads[idx] = None;
                continue;
            };
            if !gout.all_finite() {
                return Err(Error::numeric(
                    format!("backward:{}", self.slots[idx].op.name()),
                    "non-finite gradient".to_string(),
                ));
            }
            self.apply_backward(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }

        for (slot, g) in self.slots.iter_mut().zip(grads) {
            slot.grad = Some(match g {
                Some(t) => t,
                None => TensorBase::zeros(slot.tensor.shape()),
            });
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<TensorBase<T>>], id: ValueId, delta: TensorBase<T>) {
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn apply_backward(
        &self,
        idx: usize,
        gout: &TensorBase<T>,
        grads: &mut [Option<TensorBase<T>>],
    ) {
        match &self.slots[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, gout.clone());
                Self::accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, gout.clone());
                Self::accumulate(grads, *b, gout.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                Self::accumulate(grads, *a, gout.mul(self.value(*b)));
                Self::accumulate(grads, *b, gout.mul(self.value(*a)));
            }
            Op::Scale(a, c) => {
                Self::accumulate(grads, *a, gout.scale(*c));
            }
            Op::SumMany(inputs) => {
                for id in inputs {
                    Self::accumulate(grads, *id, gout.clone());
                }
            }
            Op::Matmul(a, b) => {
                // C = A B: dA = dC B^T, dB = A^T dC
                Self::accumulate(grads, *a, gout.matmul_bt(self.value(*b)));
                Self::accumulate(grads, *b, self.value(*a).matmul_at(gout));
            }
            Op::MatmulBt(a, b) => {
                // C = A B^T: dA = dC B, dB = dC^T A
                Self::accumulate(grads, *a, gout.matmul(self.value(*b)));
                Self::accumulate(grads, *b, gout.matmul_at(self.value(*a)));
            }
            Op::Sum(a) => {
                let g = gout.scalar_value();
                let src = self.value(*a);
                let delta = TensorBase::new(src.shape().to_vec(), vec![g; src.numel()])
                    .expect("same shape");
                Self::accumulate(grads, *a, delta);
            }
            Op::Pick { input, row, col } => {
                let src = self.value(*input);
                let mut delta = TensorBase::zeros(src.shape());
                delta.row_mut(*row)[*col] = gout.scalar_value();
                Self::accumulate(grads, *input, delta);
            }
            Op::Softmax { input, causal } => {
                let probs = &self.slots[idx].tensor;
                let (n, m) = (probs.rows(), probs.cols());
                let mut delta = TensorBase::zeros(&[n, m]);
                for i in 0..n {
                    let w = if *causal { (i + 1).min(m) } else { m };
                    let p = &probs.row(i)[..w];
                    let dy = &gout.row(i)[..w];
                    let mut dot = T::zero();
                    for (pi, di) in p.iter().zip(dy) {
                        dot += *pi * *di;
                    }
                    let drow = delta.row_mut(i);
                    for j in 0..w {
                        drow[j] = p[j] * (dy[j] - dot);
                    }
                }
                Self::accumulate(grads, *input, delta);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                stats,
            } => {
                let x = self.value(*input);
                let g = self.value(*gamma).data();
                let (n, d) = (x.rows(), x.cols());
                let dn = T::from_f64_lossy(d as f64);
                let mut dx = TensorBase::zeros(&[n, d]);
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for i in 0..n {
                    let row = x.row(i);
                    let dy = gout.row(i);
                    let mu = stats.mean[i];
                    let istd = stats.inv_std[i];
                    // xhat = (x - mu) * istd
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    for j in 0..d {
                        let xhat = (row[j] - mu) * istd;
                        let dxhat = dy[j] * g[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgamma[j] += dy[j] * xhat;
                        dbeta[j] += dy[j];
                    }
                    let m1 = sum_dxhat / dn;
                    let m2 = sum_dxhat_xhat / dn;
                    let dxrow = dx.row_mut(i);
                    for j in 0..d {
                        let xhat = (row[j] - mu) * istd;
                        let dxhat = dy[j] * g[j];
                        dxrow[j] = istd * (dxhat - m1 - xhat * m2);
                    }
                }
                Self::accumulate(grads, *input, dx);
                Self::accumulate(
                    grads,
                    *gamma,
                    TensorBase::new(vec![d], dgamma).expect("len d"),
                );
                Self::accumulate(grads, *beta, TensorBase::new(vec![d], dbeta).expect("len d"));
            }
            Op::Gelu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(xv, gv)| tensor::gelu_grad(*xv) * *gv)
                    .collect();
                let delta = TensorBase::new(x.shape().to_vec(), data).expect("same shape");
                Self::accumulate(grads, *input, delta);
            }
            Op::Embed { table, ids } => {
                let tab = self.value(*table);
                let mut delta = TensorBase::zeros(tab.shape());
                for (i, &id) in ids.iter().enumerate() {
                    let src = gout.row(i);
                    let dst = delta.row_mut(id as usize);
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += *s;
                    }
                }
                Self::accumulate(grads, *table, delta);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let lg = self.value(*logits);
                let n = targets.len();
                let scale = gout.scalar_value() / T::from_f64_lossy(n as f64);
                let mut delta = TensorBase::zeros(lg.shape());
                for i in 0..n {
                    let p = probs.row(i);
                    let drow = delta.row_mut(i);
                    for (o, pv) in drow.iter_mut().zip(p) {
                        *o = *pv * scale;
                    }
                    drow[targets[i] as usize] -= scale;
                }
                Self::accumulate(grads, *logits, delta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Tape64 = Tape<f64>;
    type T64 = TensorBase<f64>;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape64::new();
        let x = tape.leaf(T64::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_dot_is_bilinear() {
        let mut tape = Tape64::new();
        let x = tape.leaf(T64::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let y = tape.leaf(T64::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let prod = tape.mul(x, y);
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).data(), &[3.0, 4.0]);
        assert_eq!(tape.grad(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_violation() {
        let mut tape = Tape64::new();
        let x = tape.leaf(T64::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn untouched_values_get_zero_gradient() {
        let mut tape = Tape64::new();
        let x = tape.leaf(T64::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let unused = tape.leaf(T64::new(vec![1, 2], vec![5.0, 6.0]).unwrap());
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn nan_gradient_is_numeric_failure() {
        let mut tape = Tape64::new();
        let x = tape.leaf(T64::new(vec![1, 1], vec![f64::NAN]).unwrap());
        let y = tape.mul(x, x);
        let loss = tape.sum(y);
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "got {err:?}");
    }

    #[test]
    fn backward_is_additive_over_disjoint_losses() {
        // loss = sum(x*a) + sum(x*b) against separate backwards, summed in
        // the same fixed order; paths are disjoint so this is bit-exact.
        let xv = T64::new(vec![1, 3], vec![0.3, -1.2, 2.5]).unwrap();
        let av = T64::new(vec![1, 3], vec![1.7, 0.4, -0.9]).unwrap();
        let bv = T64::new(vec![1, 3], vec![-2.1, 3.3, 0.6]).unwrap();

        let mut t1 = Tape64::new();
        let x1 = t1.leaf(xv.clone());
        let a1 = t1.leaf(av.clone());
        let b1 = t1.leaf(bv.clone());
        let la = t1.mul(x1, a1);
        let lb = t1.mul(x1, b1);
        let sa = t1.sum(la);
        let sb = t1.sum(lb);
        let total = t1.add(sa, sb);
        t1.backward(total).unwrap();

        let combined = tape_grad(&t1, x1);

        let single = |w: &T64| {
            let mut t = Tape64::new();
            let x = t.leaf(xv.clone());
            let a = t.leaf(w.clone());
            let l = t.mul(x, a);
            let s = t.sum(l);
            t.backward(s).unwrap();
            tape_grad(&t, x)
        };
        let ga = single(&av);
        let gb = single(&bv);
        let summed: Vec<f64> = ga.iter().zip(&gb).map(|(a, b)| a + b).collect();
        assert_eq!(combined, summed); // bit-exact
    }

    fn tape_grad(t: &Tape64, id: ValueId) -> Vec<f64> {
        t.grad(id).data().to_vec()
    }

    // Central finite differences over every primitive live in
    // tests/grad_check.rs; these unit tests pin the trivial identities.
}
