//! Recorded computations whose values may contain input derivatives of a
//! network and which can be differentiated with respect to its parameters.
//!
//! A [`DiffContext`] owns network evaluations (each a forward pass carrying
//! forward-mode tangents) and a tape of batched elementwise nodes built on
//! top of their outputs and Jacobian entries. Reverse sweeps first propagate
//! adjoints through the node tape, then through each recorded evaluation,
//! including its tangent chain, down to the weights.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, ArrayView2};

use super::mlp::{MlpParams, ParamGrads, Trace};
use crate::error::{Error, Result};

static NEXT_CONTEXT: AtomicU64 = AtomicU64::new(1);

/// Handle to a batched value on a context's tape. A node holds either one
/// value per batch sample or a single scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    ctx: u64,
    idx: usize,
}

/// Handle to a recorded network evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalHandle {
    ctx: u64,
    idx: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Output {
        eval: usize,
        comp: usize,
    },
    Jac {
        eval: usize,
        comp: usize,
        dir: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Square(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Record {
    op: Op,
    value: Vec<f64>,
}

pub struct DiffContext<'p> {
    id: u64,
    params: &'p MlpParams,
    evals: Vec<Trace>,
    nodes: Vec<Record>,
}

impl<'p> DiffContext<'p> {
    pub fn new(params: &'p MlpParams) -> Self {
        Self {
            id: NEXT_CONTEXT.fetch_add(1, Ordering::Relaxed),
            params,
            evals: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &MlpParams {
        self.params
    }

    /// Records a forward pass over `x` (one sample per row) carrying tangents
    /// for the first `n_dir` input coordinates.
    pub fn eval(&mut self, x: ArrayView2<f64>, n_dir: usize) -> Result<EvalHandle> {
        let dirs: Vec<usize> = (0..n_dir).collect();
        self.eval_dirs(x, &dirs)
    }

    /// Like [`eval`](Self::eval) with tangents along the listed input
    /// coordinates; Jacobian entries are then addressed by position in `dirs`.
    pub fn eval_dirs(&mut self, x: ArrayView2<f64>, dirs: &[usize]) -> Result<EvalHandle> {
        let trace = Trace::run(self.params, x, dirs)?;
        self.evals.push(trace);
        Ok(EvalHandle {
            ctx: self.id,
            idx: self.evals.len() - 1,
        })
    }

    fn trace(&self, h: EvalHandle) -> Result<&Trace> {
        if h.ctx != self.id {
            return Err(Error::Usage(
                "evaluation handle belongs to another context".into(),
            ));
        }
        Ok(&self.evals[h.idx])
    }

    pub fn batch_size(&self, h: EvalHandle) -> Result<usize> {
        Ok(self.trace(h)?.batch)
    }

    /// Network outputs of a recorded evaluation (no tape node).
    pub fn output_values(&self, h: EvalHandle) -> Result<&Array2<f64>> {
        Ok(self.trace(h)?.output())
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Node {
        self.nodes.push(Record { op, value });
        Node {
            ctx: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn check(&self, n: Node) -> Result<usize> {
        if n.ctx != self.id || n.idx >= self.nodes.len() {
            return Err(Error::Usage("node is detached from this context".into()));
        }
        Ok(n.idx)
    }

    pub fn value(&self, n: Node) -> Result<&[f64]> {
        let i = self.check(n)?;
        Ok(&self.nodes[i].value)
    }

    /// The single value of a scalar node.
    pub fn scalar(&self, n: Node) -> Result<f64> {
        let v = self.value(n)?;
        if v.len() != 1 {
            return Err(Error::Usage(format!(
                "node holds {} values, not a scalar",
                v.len()
            )));
        }
        Ok(v[0])
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Node {
        self.push(Op::Const, values)
    }

    /// Output component `comp` of an evaluation, one value per sample.
    pub fn output(&mut self, h: EvalHandle, comp: usize) -> Result<Node> {
        let t = self.trace(h)?;
        if comp >= t.output().ncols() {
            return Err(Error::Shape(format!("no output component {comp}")));
        }
        let v = t.output().column(comp).to_vec();
        Ok(self.push(Op::Output { eval: h.idx, comp }, v))
    }

    /// `d out_comp / d x_dir`, one value per sample.
    pub fn jacobian_entry(&mut self, h: EvalHandle, comp: usize, dir: usize) -> Result<Node> {
        let t = self.trace(h)?;
        if comp >= t.output().ncols() || dir >= t.n_dir {
            return Err(Error::Shape(format!(
                "jacobian entry ({comp}, {dir}) outside {}x{}",
                t.output().ncols(),
                t.n_dir
            )));
        }
        let v = t.jac_column(comp, dir).to_vec();
        Ok(self.push(
            Op::Jac {
                eval: h.idx,
                comp,
                dir,
            },
            v,
        ))
    }

    /// Sum of `d out_i / d x_{dirs[i]}` over the listed output components.
    pub fn partial_divergence(&mut self, h: EvalHandle, pairs: &[(usize, usize)]) -> Result<Node> {
        let batch = self.trace(h)?.batch;
        let mut acc = self.constant(vec![0.0; batch]);
        for &(comp, dir) in pairs {
            let j = self.jacobian_entry(h, comp, dir)?;
            acc = self.add(acc, j)?;
        }
        Ok(acc)
    }

    /// Trace of the Jacobian; requires tangents in every output direction.
    pub fn divergence(&mut self, h: EvalHandle) -> Result<Node> {
        let t = self.trace(h)?;
        let d_out = t.output().ncols();
        if t.n_dir != d_out {
            return Err(Error::Shape(format!(
                "divergence needs {d_out} tangent directions, evaluation has {}",
                t.n_dir
            )));
        }
        let pairs: Vec<_> = (0..d_out).map(|i| (i, i)).collect();
        self.partial_divergence(h, &pairs)
    }

    fn binary(&mut self, a: Node, b: Node, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out = match (va.len(), vb.len()) {
            (n, m) if n == m => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            (1, _) => vb.iter().map(|&y| f(va[0], y)).collect(),
            (_, 1) => va.iter().map(|&x| f(x, vb[0])).collect(),
            (n, m) => {
                return Err(Error::Shape(format!(
                    "cannot combine nodes of length {n} and {m}"
                )))
            }
        };
        Ok(out)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        let v = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a.idx, b.idx), v))
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Result<Node> {
        let v = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a.idx, b.idx), v))
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Result<Node> {
        let v = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a.idx, b.idx), v))
    }

    pub fn scale(&mut self, a: Node, c: f64) -> Result<Node> {
        let i = self.check(a)?;
        let v = self.nodes[i].value.iter().map(|x| c * x).collect();
        Ok(self.push(Op::Scale(i, c), v))
    }

    pub fn square(&mut self, a: Node) -> Result<Node> {
        let i = self.check(a)?;
        let v = self.nodes[i].value.iter().map(|x| x * x).collect();
        Ok(self.push(Op::Square(i), v))
    }

    pub fn sum(&mut self, a: Node) -> Result<Node> {
        let i = self.check(a)?;
        let v = self.nodes[i].value.iter().sum();
        Ok(self.push(Op::Sum(i), vec![v]))
    }

    pub fn mean(&mut self, a: Node) -> Result<Node> {
        let i = self.check(a)?;
        let n = self.nodes[i].value.len();
        if n == 0 {
            return Err(Error::Shape("mean of an empty node".into()));
        }
        let v = self.nodes[i].value.iter().sum::<f64>() / n as f64;
        Ok(self.push(Op::Mean(i), vec![v]))
    }

    /// Reverse sweep from a scalar node. Returns its value and the exact
    /// gradient with respect to every network parameter.
    pub fn grad_params(&self, loss: Node) -> Result<(f64, ParamGrads)> {
        let root = self.check(loss)?;
        let value = self.scalar(loss)?;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        adj[root] = Some(vec![1.0]);

        let mut out_adj: Vec<Option<Array2<f64>>> = vec![None; self.evals.len()];
        let mut tan_adj: Vec<Option<Array2<f64>>> = vec![None; self.evals.len()];

        fn accum(slot: &mut Option<Vec<f64>>, len: usize, g: &[f64]) {
            let buf = slot.get_or_insert_with(|| vec![0.0; len]);
            if len == g.len() {
                buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
            } else {
                // Broadcast operand: sum the adjoint.
                debug_assert_eq!(len, 1);
                buf[0] += g.iter().sum::<f64>();
            }
        }

        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            let len_of = |j: usize| self.nodes[j].value.len();
            match self.nodes[i].op {
                Op::Const => {}
                Op::Output { eval, comp } => {
                    let t = &self.evals[eval];
                    let m =
                        out_adj[eval].get_or_insert_with(|| Array2::zeros(t.output().raw_dim()));
                    m.column_mut(comp)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, v)| *a += v);
                }
                Op::Jac { eval, comp, dir } => {
                    let t = &self.evals[eval];
                    let b = t.batch;
                    let m = tan_adj[eval]
                        .get_or_insert_with(|| Array2::zeros((t.n_dir * b, t.output().ncols())));
                    m.slice_mut(s![dir * b..(dir + 1) * b, comp])
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, v)| *a += v);
                }
                Op::Add(a, b) => {
                    let ga = expand(&g, len_of(i));
                    accum(&mut adj[a], len_of(a), &ga);
                    accum(&mut adj[b], len_of(b), &ga);
                }
                Op::Sub(a, b) => {
                    let ga = expand(&g, len_of(i));
                    accum(&mut adj[a], len_of(a), &ga);
                    let neg: Vec<f64> = ga.iter().map(|v| -v).collect();
                    accum(&mut adj[b], len_of(b), &neg);
                }
                Op::Mul(a, b) => {
                    let ga = expand(&g, len_of(i));
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let pick = |v: &Vec<f64>, k: usize| if v.len() == 1 { v[0] } else { v[k] };
                    let da: Vec<f64> = ga
                        .iter()
                        .enumerate()
                        .map(|(k, g)| g * pick(vb, k))
                        .collect();
                    let db: Vec<f64> = ga
                        .iter()
                        .enumerate()
                        .map(|(k, g)| g * pick(va, k))
                        .collect();
                    accum(&mut adj[a], len_of(a), &da);
                    accum(&mut adj[b], len_of(b), &db);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = g.iter().map(|v| c * v).collect();
                    accum(&mut adj[a], len_of(a), &da);
                }
                Op::Square(a) => {
                    let va = &self.nodes[a].value;
                    let da: Vec<f64> = g.iter().zip(va).map(|(g, x)| 2.0 * g * x).collect();
                    accum(&mut adj[a], len_of(a), &da);
                }
                Op::Sum(a) => {
                    let da = vec![g[0]; len_of(a)];
                    accum(&mut adj[a], len_of(a), &da);
                }
                Op::Mean(a) => {
                    let n = len_of(a);
                    let da = vec![g[0] / n as f64; n];
                    accum(&mut adj[a], n, &da);
                }
            }
        }

        let mut grads = ParamGrads::zeros_like(self.params);
        for (e, t) in self.evals.iter().enumerate() {
            if out_adj[e].is_none() && tan_adj[e].is_none() {
                continue;
            }
            let oa = out_adj[e]
                .take()
                .unwrap_or_else(|| Array2::zeros(t.output().raw_dim()));
            let ta = tan_adj[e]
                .take()
                .unwrap_or_else(|| Array2::zeros((t.n_dir * t.batch, t.output().ncols())));
            t.backward(self.params, oa, ta, &mut grads);
        }
        Ok((value, grads))
    }
}

fn expand(g: &[f64], len: usize) -> Vec<f64> {
    if g.len() == len {
        g.to_vec()
    } else {
        vec![g[0]; len]
    }
}
