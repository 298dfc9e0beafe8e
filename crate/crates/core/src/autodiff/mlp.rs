//! Fixed-architecture multilayer perceptrons with exact input derivatives.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Swish => "swish",
        }
    }
}

// exp overflow gives 1 / inf = 0, so no branch is needed.
#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn d1_from(z: f64, s: f64) -> f64 {
    s + z * s * (1.0 - s)
}

#[inline]
fn d2_from(z: f64, s: f64) -> f64 {
    s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))
}

/// `z * sigmoid(z)`.
#[inline]
pub fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
pub fn swish_d1(z: f64) -> f64 {
    d1_from(z, sigmoid(z))
}

#[inline]
pub fn swish_d2(z: f64) -> f64 {
    d2_from(z, sigmoid(z))
}

/// Weights and biases of an MLP. Layer `l` maps `widths[l]` to `widths[l + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub widths: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Config(format!(
            "layer widths must be >= 1, got {widths:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// Zero weights and biases.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let weights = widths
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = widths[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            activation: Activation::Swish,
        })
    }

    /// Weights i.i.d. `N(0, (scale / sqrt(fan_in))^2)`, zero biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], scale: f64, rng: &mut R) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "init scale must be finite and >= 0, got {scale}"
            )));
        }
        let mut p = Self::zeros(widths)?;
        for w in p.weights.iter_mut() {
            let std = scale / (w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| std * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(p)
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Checks the shape and finiteness invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_widths(&self.widths)?;
        let n = self.widths.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} layers, found {} weight and {} bias arrays",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..n {
            let (rows, cols) = self.weights[l].dim();
            if rows != self.widths[l + 1] || cols != self.widths[l] {
                return Err(Error::Shape(format!(
                    "layer {l} weight is {rows}x{cols}, expected {}x{}",
                    self.widths[l + 1],
                    self.widths[l]
                )));
            }
            if self.biases[l].len() != self.widths[l + 1] {
                return Err(Error::Shape(format!("layer {l} bias has wrong length")));
            }
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(())
    }

    /// Visits every scalar parameter in a fixed order (layer by layer, weights
    /// row-major then bias).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(&mut f);
            b.iter_mut().for_each(&mut f);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Forward pass for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input_len(x.len())?;
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward_batch(xb)?.row(0).to_vec())
    }

    /// Forward pass on a batch, one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input_len(x.ncols())?;
        let n = self.n_layers();
        let mut a = x.to_owned();
        for l in 0..n {
            let mut z = a.dot(&self.weights[l].t());
            z += &self.biases[l];
            if l + 1 < n {
                z.mapv_inplace(swish);
            }
            a = z;
        }
        Ok(a)
    }

    /// Jacobian `d out / d x` at a single input, `d_out x d_in`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_input_len(x.len())?;
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        let dirs: Vec<usize> = (0..self.d_in()).collect();
        let trace = Trace::run(self, xb, &dirs)?;
        Ok(trace.jacobian(0))
    }

    /// Trace of the Jacobian; requires a square network.
    pub fn divergence(&self, x: &[f64]) -> Result<f64> {
        if self.d_in() != self.d_out() {
            return Err(Error::Shape(format!(
                "divergence needs d_in == d_out, network is {} -> {}",
                self.d_in(),
                self.d_out()
            )));
        }
        let j = self.jacobian(x)?;
        Ok(j.diag().sum())
    }

    pub(crate) fn check_input_len(&self, n: usize) -> Result<()> {
        if n != self.d_in() {
            return Err(Error::Shape(format!(
                "network expects input of width {}, got {n}",
                self.d_in()
            )));
        }
        Ok(())
    }
}

/// Gradient with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            weights: p
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: p
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Recorded forward pass over a batch, carrying one forward-mode tangent per
/// entry of `dirs`, seeded with the unit vector of that input coordinate.
///
/// Tangents for all directions are stacked along rows: row `k * batch + b`
/// holds direction `k` of sample `b`.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub batch: usize,
    pub n_dir: usize,
    /// Post-activation values; `acts[0]` is the input and the last entry the output.
    pub acts: Vec<Array2<f64>>,
    /// Pre-activation values of each layer.
    pub pre: Vec<Array2<f64>>,
    /// `sigmoid(pre[l])` for each hidden layer.
    pub sig: Vec<Array2<f64>>,
    /// First derivative of the activation at `pre[l]` for each hidden layer.
    pub d1: Vec<Array2<f64>>,
    /// Tangent post-activations; `tan_acts[0]` holds the seeds.
    pub tan_acts: Vec<Array2<f64>>,
    /// Tangent pre-activations.
    pub tan_pre: Vec<Array2<f64>>,
}

impl Trace {
    pub fn run(params: &MlpParams, x: ArrayView2<f64>, dirs: &[usize]) -> Result<Self> {
        params.check_input_len(x.ncols())?;
        if let Some(&bad) = dirs.iter().find(|&&k| k >= params.d_in()) {
            return Err(Error::Shape(format!(
                "tangent direction {bad} outside a {}-input network",
                params.d_in()
            )));
        }
        let n_dir = dirs.len();
        let batch = x.nrows();
        let n = params.n_layers();
        let mut seeds = Array2::zeros((n_dir * batch, params.d_in()));
        for (k, &input) in dirs.iter().enumerate() {
            seeds
                .slice_mut(s![k * batch..(k + 1) * batch, input])
                .fill(1.0);
        }
        let mut acts = vec![x.to_owned()];
        let mut tan_acts = vec![seeds];
        let mut pre = Vec::with_capacity(n);
        let mut sig = Vec::with_capacity(n);
        let mut d1s = Vec::with_capacity(n);
        let mut tan_pre = Vec::with_capacity(n);
        for l in 0..n {
            let w = &params.weights[l];
            let mut z = acts[l].dot(&w.t());
            z += &params.biases[l];
            let dz = tan_acts[l].dot(&w.t());
            if l + 1 < n {
                let sg = z.mapv(sigmoid);
                let a = &z * &sg;
                let d1 = Zip::from(&z).and(&sg).map_collect(|&z, &s| d1_from(z, s));
                let mut da = dz.clone();
                for k in 0..n_dir {
                    let mut blk = da.slice_mut(s![k * batch..(k + 1) * batch, ..]);
                    blk *= &d1;
                }
                acts.push(a);
                tan_acts.push(da);
                sig.push(sg);
                d1s.push(d1);
            } else {
                acts.push(z.clone());
                tan_acts.push(dz.clone());
            }
            pre.push(z);
            tan_pre.push(dz);
        }
        Ok(Self {
            batch,
            n_dir,
            acts,
            pre,
            sig,
            d1: d1s,
            tan_acts,
            tan_pre,
        })
    }

    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }

    /// `d out_i / d x_k` for all samples, as a column of length `batch`.
    pub fn jac_column(&self, out: usize, dir: usize) -> ArrayView1<'_, f64> {
        let t = self.tan_acts.last().unwrap();
        t.slice(s![dir * self.batch..(dir + 1) * self.batch, out])
    }

    pub fn jacobian(&self, sample: usize) -> Array2<f64> {
        let t = self.tan_acts.last().unwrap();
        let d_out = t.ncols();
        Array2::from_shape_fn((d_out, self.n_dir), |(i, k)| {
            t[[k * self.batch + sample, i]]
        })
    }

    /// Parameter gradient given adjoints of the output (`batch x d_out`) and of
    /// the stacked tangent outputs (`n_dir * batch x d_out`).
    pub fn backward(
        &self,
        params: &MlpParams,
        out_adj: Array2<f64>,
        tan_adj: Array2<f64>,
        grads: &mut ParamGrads,
    ) {
        let n = params.n_layers();
        let b = self.batch;
        let mut gz = out_adj;
        let mut gdz = tan_adj;
        for l in (0..n).rev() {
            grads.weights[l] += &gz.t().dot(&self.acts[l]);
            if self.n_dir > 0 {
                grads.weights[l] += &gdz.t().dot(&self.tan_acts[l]);
            }
            grads.biases[l] += &gz.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let w = &params.weights[l];
            let ga = gz.dot(w);
            let gt = if self.n_dir > 0 {
                gdz.dot(w)
            } else {
                Array2::zeros((0, w.ncols()))
            };
            // Hidden layer l - 1 applied swish to pre[l - 1].
            let d1 = &self.d1[l - 1];
            let mut new_gz = &ga * d1;
            let mut new_gdz = gt;
            if self.n_dir > 0 {
                let z = &self.pre[l - 1];
                let sg = &self.sig[l - 1];
                let d2 = Zip::from(z).and(sg).map_collect(|&z, &s| d2_from(z, s));
                for k in 0..self.n_dir {
                    let dz = self.tan_pre[l - 1].slice(s![k * b..(k + 1) * b, ..]);
                    let mut gtk = new_gdz.slice_mut(s![k * b..(k + 1) * b, ..]);
                    Zip::from(&mut new_gz)
                        .and(&d2)
                        .and(&dz)
                        .and(&gtk)
                        .for_each(|g, &c2, &t, &a| *g += c2 * t * a);
                    gtk *= d1;
                }
            }
            gz = new_gz;
            gdz = new_gdz;
        }
    }
}
