//! Velocity reconstruction under the score-based stationary Fokker-Planck
//! constraint
//!
//! ```text
//! N(s, v) = s . v + div v - D (|s|^2 + div s) = 0,
//! ```
//!
//! solved for the minimum-energy field with a stochastic augmented
//! Lagrangian method: one multiplier per training point, a penalty that grows
//! when the residual stalls, and Adam inner loops that sweep the shuffled data
//! once per outer iteration.

use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, DiffContext, MlpParams, Node, ParamGrads};
use crate::data::PointCloud;
use crate::dynamics::{DriftField, SystemSpec};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams, ChaCha8Rng};
use crate::score::ScoreModel;

/// A score field together with its divergence.
pub trait ScoreField {
    fn dim(&self) -> usize;
    fn score_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)>;
}

/// A velocity field together with its divergence.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)>;
}

impl ScoreField for ScoreModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn score_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        ScoreModel::score_and_divergence(self, x)
    }
}

/// Score of a centred Gaussian with covariance `variance * I`:
/// `s(x) = -x / variance`, `div s = -d / variance`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianScore {
    pub d: usize,
    pub variance: f64,
}

impl ScoreField for GaussianScore {
    fn dim(&self) -> usize {
        self.d
    }

    fn score_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let s = x.mapv(|v| -v / self.variance);
        let div = Array1::from_elem(x.nrows(), -(self.d as f64) / self.variance);
        Ok((s, div))
    }
}

/// `v = D s` for a given score field.
pub struct ScaledScore<'a, S: ScoreField + ?Sized> {
    pub score: &'a S,
    pub factor: f64,
}

impl<S: ScoreField + ?Sized> VelocityField for ScaledScore<'_, S> {
    fn dim(&self) -> usize {
        self.score.dim()
    }

    fn velocity_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (s, div) = self.score.score_and_divergence(x)?;
        Ok((s * self.factor, div * self.factor))
    }
}

/// Constraint residual for arbitrary fields at each row of `x`.
pub fn residual_values<S, V>(
    score: &S,
    vel: &V,
    diffusion: f64,
    x: ArrayView2<f64>,
) -> Result<Array1<f64>>
where
    S: ScoreField + ?Sized,
    V: VelocityField + ?Sized,
{
    if score.dim() != x.ncols() || vel.dim() != x.ncols() {
        return Err(Error::Shape(format!(
            "score ({}), velocity ({}) and points ({}) disagree on dimension",
            score.dim(),
            vel.dim(),
            x.ncols()
        )));
    }
    let (s, ds) = score.score_and_divergence(x)?;
    let (v, dv) = vel.velocity_and_divergence(x)?;
    Ok(Array1::from_shape_fn(x.nrows(), |i| {
        let sv = s.row(i).dot(&v.row(i));
        let ss = s.row(i).dot(&s.row(i));
        sv + dv[i] - diffusion * (ss + ds[i])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CollocationPolicy {
    /// Fresh uniform points in the padded data bounding box; the energy is the
    /// mean of `|v|^2` over the box, scaled per `EnergyWeight`.
    #[default]
    UniformBox,
    /// The current batch points; the energy is the mean of `|v|^2` under the
    /// empirical measure.
    DataPoints,
}

/// Network for the unknown drift components, plus the analytic known ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub net: MlpParams,
    /// `true` where the component is supplied by `known_drift`.
    pub known_mask: Vec<bool>,
    pub known_drift: Option<SystemSpec>,
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub collocation: CollocationPolicy,
    /// Network input is `(x - input_shift) / input_scale`.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Learned component `k` is `output_scale * net_k`.
    pub output_scale: f64,
}

impl VelocityModel {
    pub fn d(&self) -> usize {
        self.known_mask.len()
    }

    /// Indices of learned components, in network output order.
    pub fn unknown(&self) -> Vec<usize> {
        (0..self.d()).filter(|&k| !self.known_mask[k]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        let n_unknown = self.unknown().len();
        if self.net.d_in() != d || self.net.d_out() != n_unknown {
            return Err(Error::Shape(format!(
                "velocity network maps {} -> {}, expected {d} -> {n_unknown}",
                self.net.d_in(),
                self.net.d_out()
            )));
        }
        if n_unknown < d {
            match &self.known_drift {
                Some(sys) if sys.dim() == d => {}
                Some(_) => return Err(Error::Shape("known drift has the wrong dimension".into())),
                None => return Err(Error::Config("known components need a known drift".into())),
            }
        }
        if self.input_shift.len() != d || self.input_scale.len() != d {
            return Err(Error::Shape(
                "input normalization has the wrong dimension".into(),
            ));
        }
        Ok(())
    }

    fn net_input(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (k, mut c) in z.axis_iter_mut(Axis(1)).enumerate() {
            c.mapv_inplace(|v| (v - self.input_shift[k]) / self.input_scale[k]);
        }
        z
    }

    /// Analytic part for each row: known-component velocities (zero in learned
    /// slots) and the sum of their diagonal Jacobian entries.
    fn known_parts(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (n, d) = x.dim();
        let mut v = Array2::zeros((n, d));
        let mut div = Array1::zeros(n);
        if let Some(sys) = &self.known_drift {
            if self.known_mask.iter().any(|&m| m) {
                let full = sys.drift_batch(x)?;
                for i in 0..n {
                    let xi = x.row(i).to_vec();
                    let diag = sys.jacobian_diag(&xi)?;
                    for k in 0..d {
                        if self.known_mask[k] {
                            v[[i, k]] = full[[i, k]];
                            div[i] += diag[k];
                        }
                    }
                }
            }
        }
        Ok((v, div))
    }

    /// Full drift (learned and known components) for each row.
    pub fn eval_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d() {
            return Err(Error::Shape(format!(
                "velocity is {}-dimensional, got {}",
                self.d(),
                x.ncols()
            )));
        }
        let (mut v, _) = self.known_parts(x)?;
        let out = self.net.forward_batch(self.net_input(x).view())?;
        for (j, &k) in self.unknown().iter().enumerate() {
            v.column_mut(k)
                .assign(&(&out.column(j) * self.output_scale));
        }
        Ok(v)
    }

    /// Records the network on `x` and returns tape nodes for the learned
    /// components (in `unknown()` order) and for their divergence
    /// contribution.
    fn record(
        &self,
        ctx: &mut DiffContext,
        x: ArrayView2<f64>,
        with_div: bool,
    ) -> Result<(Vec<Node>, Option<Node>)> {
        let unknown = self.unknown();
        let inp = self.net_input(x);
        let dirs: Vec<usize> = if with_div {
            unknown.clone()
        } else {
            Vec::new()
        };
        let h = ctx.eval_dirs(inp.view(), &dirs)?;
        let mut comps = Vec::with_capacity(unknown.len());
        for j in 0..unknown.len() {
            let y = ctx.output(h, j)?;
            comps.push(ctx.scale(y, self.output_scale)?);
        }
        let div = if with_div {
            let mut acc = ctx.constant(vec![0.0; x.nrows()]);
            for (j, &k) in unknown.iter().enumerate() {
                let jac = ctx.jacobian_entry(h, j, j)?;
                let t = ctx.scale(jac, self.output_scale / self.input_scale[k])?;
                acc = ctx.add(acc, t)?;
            }
            Some(acc)
        } else {
            None
        };
        Ok((comps, div))
    }
}

impl VelocityField for VelocityModel {
    fn dim(&self) -> usize {
        self.d()
    }

    fn velocity_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (mut v, mut div) = self.known_parts(x)?;
        let mut ctx = DiffContext::new(&self.net);
        let (comps, dn) = self.record(&mut ctx, x, true)?;
        for (j, &k) in self.unknown().iter().enumerate() {
            v.column_mut(k)
                .assign(&ArrayView1::from(ctx.value(comps[j])?));
        }
        if let Some(dn) = dn {
            div += &ArrayView1::from(ctx.value(dn)?);
        }
        Ok((v, div))
    }
}

impl DriftField for VelocityModel {
    fn dim(&self) -> usize {
        self.d()
    }

    fn drift_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.eval_batch(x)
    }

    fn walls(&self) -> Option<(f64, f64)> {
        self.known_drift.as_ref().and_then(|s| s.walls())
    }
}

/// Full drift at one state.
pub fn velocity_eval(vel: &VelocityModel, x: &[f64]) -> Result<Vec<f64>> {
    let v = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(vel.eval_batch(v)?.row(0).to_vec())
}

/// Constraint residual at one state.
pub fn residual(score: &ScoreModel, vel: &VelocityModel, x: &[f64]) -> Result<f64> {
    let v = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(residual_values(score, vel, vel.diffusion, v)?[0])
}

/// Everything in the residual that does not depend on the velocity network,
/// precomputed for a fixed set of points: the score, and
/// `sum_known (s_k v_k + d_k v_k) - D (|s|^2 + div s)`.
#[derive(Debug, Clone)]
pub struct ResidualCache {
    pub points: Array2<f64>,
    pub score: Array2<f64>,
    pub offset: Array1<f64>,
}

impl ResidualCache {
    pub fn build<S: ScoreField + ?Sized>(
        score: &S,
        vel: &VelocityModel,
        points: ArrayView2<f64>,
    ) -> Result<Self> {
        const CHUNK: usize = 4096;
        let n = points.nrows();
        let mut s_all = Array2::zeros((n, points.ncols()));
        let mut offset = Array1::zeros(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let x = points.slice(s![start..end, ..]);
            let (s, ds) = score.score_and_divergence(x)?;
            let (kv, kdiv) = vel.known_parts(x)?;
            for i in 0..end - start {
                let ss = s.row(i).dot(&s.row(i));
                let known = s.row(i).dot(&kv.row(i)) + kdiv[i];
                offset[start + i] = known - vel.diffusion * (ss + ds[i]);
            }
            s_all.slice_mut(s![start..end, ..]).assign(&s);
            start = end;
        }
        if s_all.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "score is not finite on the training points".into(),
            ));
        }
        Ok(Self {
            points: points.to_owned(),
            score: s_all,
            offset,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Residual of `vel` at the cached points `idx`, as a tape node.
    fn residual_node(
        &self,
        ctx: &mut DiffContext,
        vel: &VelocityModel,
        idx: &[usize],
    ) -> Result<Node> {
        let x = self.points.select(Axis(0), idx);
        let (comps, div) = vel.record(ctx, x.view(), true)?;
        let off: Vec<f64> = idx.iter().map(|&i| self.offset[i]).collect();
        let mut acc = ctx.constant(off);
        for (j, &k) in vel.unknown().iter().enumerate() {
            let sk: Vec<f64> = idx.iter().map(|&i| self.score[[i, k]]).collect();
            let sk = ctx.constant(sk);
            let t = ctx.mul(sk, comps[j])?;
            acc = ctx.add(acc, t)?;
        }
        ctx.add(acc, div.expect("recorded with divergence"))
    }

    /// Residual at every cached point (values only).
    pub fn residuals(&self, vel: &VelocityModel) -> Result<Array1<f64>> {
        const CHUNK: usize = 4096;
        let n = self.len();
        let mut out = Array1::zeros(n);
        let unknown = vel.unknown();
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let x = self.points.slice(s![start..end, ..]);
            let mut ctx = DiffContext::new(&vel.net);
            let (comps, div) = vel.record(&mut ctx, x, true)?;
            let dv = ctx.value(div.unwrap())?.to_vec();
            for i in 0..end - start {
                let mut r = self.offset[start + i] + dv[i];
                for (j, &k) in unknown.iter().enumerate() {
                    r += self.score[[start + i, k]] * ctx.value(comps[j])?[i];
                }
                out[start + i] = r;
            }
            start = end;
        }
        Ok(out)
    }
}

/// Residual norms over a full point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorm {
    /// `|N|_2 / sqrt(n)`.
    pub rms: f64,
    /// `|N|_2`.
    pub l2: f64,
}

impl ResidualNorm {
    pub fn of(r: ArrayView1<f64>) -> Self {
        let l2 = r.dot(&r).sqrt();
        Self {
            rms: l2 / (r.len().max(1) as f64).sqrt(),
            l2,
        }
    }
}

/// Residual norm of `vel` over all `points`.
pub fn full_residual_norm<S: ScoreField + ?Sized>(
    score: &S,
    vel: &VelocityModel,
    points: ArrayView2<f64>,
) -> Result<ResidualNorm> {
    let cache = ResidualCache::build(score, vel, points)?;
    Ok(ResidualNorm::of(cache.residuals(vel)?.view()))
}

/// Mean squared residual over `idx`, with gradient.
pub fn pinn_loss(
    cache: &ResidualCache,
    vel: &VelocityModel,
    idx: &[usize],
) -> Result<(f64, ParamGrads)> {
    if idx.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut ctx = DiffContext::new(&vel.net);
    let r = cache.residual_node(&mut ctx, vel, idx)?;
    let sq = ctx.square(r)?;
    let loss = ctx.mean(sq)?;
    ctx.grad_params(loss)
}

/// Where the energy term is sampled.
#[derive(Debug, Clone)]
pub struct Collocation {
    pub points: Array2<f64>,
    /// Multiplies the mean of `|v|^2`.
    pub weight: f64,
}

impl Collocation {
    /// `n` uniform points in `bounds`, weighted by the box volume.
    pub fn uniform<R: Rng + ?Sized>(bounds: &[(f64, f64)], n: usize, rng: &mut R) -> Self {
        let points = Array2::from_shape_fn((n, bounds.len()), |(_, k)| {
            let (lo, hi) = bounds[k];
            rng.random_range(lo..hi)
        });
        let weight = bounds.iter().map(|(lo, hi)| hi - lo).product();
        Self { points, weight }
    }

    pub fn data(points: Array2<f64>) -> Self {
        Self {
            points,
            weight: 1.0,
        }
    }
}

fn energy_node(ctx: &mut DiffContext, vel: &VelocityModel, colloc: &Collocation) -> Result<Node> {
    let x = colloc.points.view();
    let (comps, _) = vel.record(ctx, x, false)?;
    let (kv, _) = vel.known_parts(x)?;
    let known: Vec<f64> = kv.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut acc = ctx.constant(known);
    for c in comps {
        let sq = ctx.square(c)?;
        acc = ctx.add(acc, sq)?;
    }
    let m = ctx.mean(acc)?;
    ctx.scale(m, colloc.weight)
}

/// `weight * mean |v|^2` over the collocation points.
pub fn energy_term(vel: &VelocityModel, colloc: &Collocation) -> Result<f64> {
    let v = vel.eval_batch(colloc.points.view())?;
    let n = v.nrows().max(1) as f64;
    Ok(colloc.weight * v.iter().map(|x| x * x).sum::<f64>() / n)
}

/// Parts of the merit, for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeritParts {
    pub merit: f64,
    pub energy: f64,
    pub mean_sq_residual: f64,
}

/// Augmented Lagrangian merit on a batch:
/// `energy + w mean_b(lambda_b N_b) + (mu / 2) mean_b(N_b^2)`, with gradient.
pub fn auglag_merit(
    cache: &ResidualCache,
    vel: &VelocityModel,
    idx: &[usize],
    lambda: &[f64],
    lambda_weight: f64,
    mu: f64,
    colloc: &Collocation,
) -> Result<(MeritParts, ParamGrads)> {
    if lambda.len() != idx.len() {
        return Err(Error::Usage(format!(
            "{} multipliers for a batch of {} points",
            lambda.len(),
            idx.len()
        )));
    }
    if idx.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut ctx = DiffContext::new(&vel.net);
    let energy = energy_node(&mut ctx, vel, colloc)?;
    let r = cache.residual_node(&mut ctx, vel, idx)?;
    let lam = ctx.constant(lambda.to_vec());
    let lr = ctx.mul(lam, r)?;
    let lin = ctx.mean(lr)?;
    let lin = ctx.scale(lin, lambda_weight)?;
    let sq = ctx.square(r)?;
    let msq = ctx.mean(sq)?;
    let pen = ctx.scale(msq, 0.5 * mu)?;
    let a = ctx.add(energy, lin)?;
    let merit = ctx.add(a, pen)?;
    let parts = MeritParts {
        merit: ctx.scalar(merit)?,
        energy: ctx.scalar(energy)?,
        mean_sq_residual: ctx.scalar(msq)?,
    };
    let (_, g) = ctx.grad_params(merit)?;
    Ok((parts, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityTrainConfig {
    pub batch_size: usize,
    pub n_shuffle: usize,
    pub n_aug: usize,
    pub lr: f64,
    pub eta: f64,
    pub a: f64,
    pub mu_init: f64,
    pub mu_max: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub collocation: CollocationPolicy,
    pub seed: u64,
    #[serde(default = "default_velocity_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "crate::score::default_init_scale")]
    pub init_scale: f64,
    /// Multiplies the network output; `None` uses the mean per-axis data std.
    #[serde(default)]
    pub output_scale: Option<f64>,
    #[serde(default)]
    pub energy_weight: EnergyWeight,
}

/// Constant in front of the collocation mean of `|v|^2` in the merit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyWeight {
    /// Mean over the collocation points.
    #[default]
    Unit,
    /// Box volume times the mean, a Monte-Carlo integral for uniform collocation.
    Volume,
}

fn default_velocity_hidden() -> Vec<usize> {
    vec![128; 5]
}

impl Default for VelocityTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            n_shuffle: 20,
            n_aug: 5,
            lr: 1e-4,
            eta: 0.75,
            a: 2.0,
            mu_init: 1.0,
            mu_max: 1e4,
            epsilon: 1e-6,
            collocation: CollocationPolicy::UniformBox,
            seed: 0,
            hidden: default_velocity_hidden(),
            init_scale: 1.0,
            output_scale: None,
            energy_weight: EnergyWeight::Unit,
        }
    }
}

impl VelocityTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.n_shuffle == 0 || self.n_aug == 0 {
            return bad("batch_size, n_shuffle and n_aug must be >= 1");
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must lie in (0, 1)");
        }
        if !(self.a > 1.0) {
            return bad("a must be > 1");
        }
        if !(self.mu_init > 0.0 && self.mu_max >= self.mu_init) {
            return bad("need 0 < mu_init <= mu_max");
        }
        if !(self.lr > 0.0 && self.epsilon >= 0.0) {
            return bad("lr must be > 0 and epsilon >= 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1");
        }
        Ok(())
    }

    /// Inner Adam steps per outer iteration, `ceil(N / N_b)`.
    pub fn iterations_per_sweep(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Multiplier and penalty bookkeeping of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AugLagState {
    /// One multiplier per training point, in dataset order.
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub residual_best_norm: f64,
    pub eta: f64,
    pub a: f64,
    pub mu_init: f64,
    pub mu_max: f64,
    pub epsilon: f64,
    pub shuffle: usize,
    pub outer: usize,
}

/// What an outer update did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterDecision {
    /// Residual met `epsilon`; stop.
    Converged,
    /// Sufficient decrease: multipliers updated, best residual replaced.
    Accepted,
    /// No sufficient decrease: penalty increased (capped at `mu_max`).
    PenaltyIncreased,
}

impl AugLagState {
    pub fn new(n: usize, cfg: &VelocityTrainConfig, initial_norm: f64) -> Self {
        Self {
            lambda: vec![0.0; n],
            mu: cfg.mu_init.min(cfg.mu_max),
            residual_best_norm: initial_norm,
            eta: cfg.eta,
            a: cfg.a,
            mu_init: cfg.mu_init,
            mu_max: cfg.mu_max,
            epsilon: cfg.epsilon,
            shuffle: 0,
            outer: 0,
        }
    }

    /// Penalty at the start of shuffle `j` (1-based): `mu_init (j + 1)`.
    pub fn start_shuffle(&mut self, j: usize) {
        self.shuffle = j;
        self.outer = 0;
        self.mu = (self.mu_init * (j as f64 + 1.0)).min(self.mu_max);
    }

    /// Outer update given the residual at every training point.
    pub fn update(&mut self, residuals: ArrayView1<f64>) -> OuterDecision {
        self.outer += 1;
        let norm = ResidualNorm::of(residuals).rms;
        if norm <= self.eta * self.residual_best_norm {
            if norm <= self.epsilon {
                return OuterDecision::Converged;
            }
            for (l, r) in self.lambda.iter_mut().zip(residuals.iter()) {
                *l += self.mu * r;
            }
            self.residual_best_norm = norm;
            OuterDecision::Accepted
        } else {
            self.mu = (self.a * self.mu).min(self.mu_max);
            OuterDecision::PenaltyIncreased
        }
    }

    pub fn lambda_stats(&self) -> LambdaStats {
        let n = self.lambda.len().max(1) as f64;
        LambdaStats {
            min: self.lambda.iter().cloned().fold(f64::INFINITY, f64::min),
            max: self
                .lambda
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
            mean: self.lambda.iter().sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub shuffle: usize,
    pub outer_k: usize,
    pub residual_rms: f64,
    pub residual_l2: f64,
    pub mu: f64,
    pub merit: f64,
    pub energy: f64,
    pub accepted: bool,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str =
    "shuffle,outer_k,residual_rms,residual_l2,mu,merit,energy,accepted,wall_ms";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.shuffle,
            self.outer_k,
            self.residual_rms,
            self.residual_l2,
            self.mu,
            self.merit,
            self.energy,
            self.accepted,
            self.wall_ms
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Residual RMS reached `epsilon`.
    Epsilon,
    /// All shuffles and outer iterations were used.
    Budget,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Epsilon => "epsilon",
            Termination::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub termination: Termination,
    pub lambda: LambdaStats,
    /// Residual RMS over the training set at the returned parameters.
    pub final_residual: ResidualNorm,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }
}

/// Problem setup shared by the augmented Lagrangian and plain PINN trainers.
pub struct VelocityProblem {
    pub cache: ResidualCache,
    pub bounds: Vec<(f64, f64)>,
    pub template: VelocityModel,
}

impl VelocityProblem {
    /// Initializes the network (stream `INIT` of the config seed) and caches
    /// the score on the training points.
    pub fn new<S: ScoreField + ?Sized>(
        points: &PointCloud,
        score: &S,
        diffusion: f64,
        known_mask: Vec<bool>,
        known_drift: Option<SystemSpec>,
        cfg: &VelocityTrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = points.dim();
        if score.dim() != d {
            return Err(Error::Compatibility(format!(
                "score model is {}-dimensional but the data is {d}-dimensional",
                score.dim()
            )));
        }
        if known_mask.len() != d {
            return Err(Error::Config(format!(
                "known_mask has {} entries, data has {d}",
                known_mask.len()
            )));
        }
        let n_unknown = known_mask.iter().filter(|&&m| !m).count();
        if n_unknown == 0 {
            return Err(Error::Config(
                "at least one component must be learned".into(),
            ));
        }
        let mut widths = vec![d];
        widths.extend(&cfg.hidden);
        widths.push(n_unknown);
        let net = MlpParams::init(
            &widths,
            cfg.init_scale,
            &mut stream_rng(cfg.seed, streams::INIT),
        )?;
        let std: Vec<f64> = points
            .std()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        let output_scale = cfg
            .output_scale
            .unwrap_or(std.iter().sum::<f64>() / d as f64);
        let template = VelocityModel {
            net,
            known_mask,
            known_drift,
            diffusion,
            collocation: cfg.collocation,
            input_shift: points.mean(),
            input_scale: std,
            output_scale,
        };
        template.validate()?;
        let cache = ResidualCache::build(score, &template, points.points.view())?;
        Ok(Self {
            cache,
            bounds: points.padded_bounds(0.05),
            template,
        })
    }

    fn collocation(
        &self,
        vel: &VelocityModel,
        idx: &[usize],
        n: usize,
        weight: EnergyWeight,
        rng: &mut ChaCha8Rng,
    ) -> Collocation {
        let mut c = match vel.collocation {
            CollocationPolicy::UniformBox => Collocation::uniform(&self.bounds, n, rng),
            CollocationPolicy::DataPoints => {
                Collocation::data(self.cache.points.select(Axis(0), idx))
            }
        };
        if weight == EnergyWeight::Unit {
            c.weight = 1.0;
        }
        c
    }
}

/// Stochastic augmented Lagrangian training of the velocity network.
pub fn train_velocity(
    problem: &VelocityProblem,
    cfg: &VelocityTrainConfig,
) -> Result<(VelocityModel, TrainLog)> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut vel = problem.template.clone();
    let n = problem.cache.len();
    let mut train_rng = stream_rng(cfg.seed, streams::TRAIN);
    let mut col_rng = stream_rng(cfg.seed, streams::COLLOCATION);

    let r0 = problem.cache.residuals(&vel)?;
    let norm0 = ResidualNorm::of(r0.view());
    let mut state = AugLagState::new(n, cfg, norm0.rms);
    let mut rows = Vec::new();
    if norm0.rms <= cfg.epsilon {
        let lambda = state.lambda_stats();
        return Ok((
            vel,
            TrainLog {
                rows,
                termination: Termination::Epsilon,
                lambda,
                final_residual: norm0,
            },
        ));
    }

    // Multiplier term enters as a batch mean, like the penalty.
    let lambda_weight = 1.0;
    let mut adam = AdamState::new(&vel.net, cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = norm0;
    for j in 1..=cfg.n_shuffle {
        order.shuffle(&mut train_rng);
        state.start_shuffle(j);
        adam.reset();
        for k in 1..=cfg.n_aug {
            let mu = state.mu;
            let mut merit_acc = 0.0;
            let mut energy_acc = 0.0;
            let mut steps = 0;
            for idx in order.chunks(cfg.batch_size) {
                let lam: Vec<f64> = idx.iter().map(|&i| state.lambda[i]).collect();
                let colloc =
                    problem.collocation(&vel, idx, idx.len(), cfg.energy_weight, &mut col_rng);
                let (parts, grads) =
                    auglag_merit(&problem.cache, &vel, idx, &lam, lambda_weight, mu, &colloc)?;
                if !parts.merit.is_finite() || !grads.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite merit at shuffle {j}, outer iteration {k}"
                    )));
                }
                adam.step(&mut vel.net, &grads)?;
                merit_acc += parts.merit;
                energy_acc += parts.energy;
                steps += 1;
            }
            let r = problem.cache.residuals(&vel)?;
            let norm = ResidualNorm::of(r.view());
            last = norm;
            let decision = state.update(r.view());
            rows.push(LogRow {
                shuffle: j,
                outer_k: k,
                residual_rms: norm.rms,
                residual_l2: norm.l2,
                mu,
                merit: merit_acc / steps as f64,
                energy: energy_acc / steps as f64,
                accepted: decision != OuterDecision::PenaltyIncreased,
                wall_ms: clock.elapsed().as_millis() as u64,
            });
            log::info!(
                "shuffle {j} outer {k}: residual rms {:.4e}, mu {mu}, {:?}",
                norm.rms,
                decision
            );
            if decision == OuterDecision::Converged {
                let lambda = state.lambda_stats();
                return Ok((
                    vel,
                    TrainLog {
                        rows,
                        termination: Termination::Epsilon,
                        lambda,
                        final_residual: norm,
                    },
                ));
            }
        }
    }
    let lambda = state.lambda_stats();
    Ok((
        vel,
        TrainLog {
            rows,
            termination: Termination::Budget,
            lambda,
            final_residual: last,
        },
    ))
}

/// Plain PINN baseline: minimizes the mean squared residual directly with the
/// same data order, batch size and number of Adam steps as
/// [`train_velocity`], logging the residual after each sweep.
pub fn train_velocity_pinn(
    problem: &VelocityProblem,
    cfg: &VelocityTrainConfig,
) -> Result<(VelocityModel, TrainLog)> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut vel = problem.template.clone();
    let n = problem.cache.len();
    let mut train_rng = stream_rng(cfg.seed, streams::TRAIN);
    let mut adam = AdamState::new(&vel.net, cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rows = Vec::new();
    let mut last = ResidualNorm::of(problem.cache.residuals(&vel)?.view());
    for j in 1..=cfg.n_shuffle {
        order.shuffle(&mut train_rng);
        adam.reset();
        for k in 1..=cfg.n_aug {
            let mut acc = 0.0;
            let mut steps = 0;
            for idx in order.chunks(cfg.batch_size) {
                let (loss, grads) = pinn_loss(&problem.cache, &vel, idx)?;
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite PINN loss at shuffle {j}, sweep {k}"
                    )));
                }
                adam.step(&mut vel.net, &grads)?;
                acc += loss;
                steps += 1;
            }
            let r = problem.cache.residuals(&vel)?;
            last = ResidualNorm::of(r.view());
            rows.push(LogRow {
                shuffle: j,
                outer_k: k,
                residual_rms: last.rms,
                residual_l2: last.l2,
                mu: 0.0,
                merit: acc / steps as f64,
                energy: 0.0,
                accepted: false,
                wall_ms: clock.elapsed().as_millis() as u64,
            });
        }
    }
    let lambda = LambdaStats {
        min: 0.0,
        max: 0.0,
        mean: 0.0,
    };
    Ok((
        vel,
        TrainLog {
            rows,
            termination: Termination::Budget,
            lambda,
            final_residual: last,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0);
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    fn model(
        d: usize,
        known_mask: Vec<bool>,
        known_drift: Option<SystemSpec>,
        seed: u64,
    ) -> VelocityModel {
        let n_unknown = known_mask.iter().filter(|&&m| !m).count();
        VelocityModel {
            net: MlpParams::init(&[d, 8, 8, n_unknown], 1.0, &mut stream_rng(seed, 0)).unwrap(),
            known_mask,
            known_drift,
            diffusion: 0.7,
            collocation: CollocationPolicy::UniformBox,
            input_shift: (0..d).map(|k| 0.1 * k as f64).collect(),
            input_scale: (0..d).map(|k| 1.0 + 0.5 * k as f64).collect(),
            output_scale: 1.3,
        }
    }

    #[test]
    fn scaled_score_is_feasible() {
        for d in 1..=3 {
            let s = GaussianScore { d, variance: 1.0 };
            let v = ScaledScore {
                score: &s,
                factor: 0.4,
            };
            let r = residual_values(&s, &v, 0.4, random_points(200, d, d as u64).view()).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-10));
        }
    }

    #[test]
    fn residual_matches_finite_difference_divergence() {
        let sys = SystemSpec::lorenz63();
        for mask in [vec![false, false, false], vec![false, true, true]] {
            let m = model(3, mask, Some(sys.clone()), 2);
            let score = GaussianScore {
                d: 3,
                variance: 2.0,
            };
            let x = [0.4, -0.3, 1.1];
            let h = 1e-5;
            let mut div = 0.0;
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                div += (velocity_eval(&m, &xp).unwrap()[k] - velocity_eval(&m, &xm).unwrap()[k])
                    / (2.0 * h);
            }
            let v = velocity_eval(&m, &x).unwrap();
            let s: Vec<f64> = x.iter().map(|xi| -xi / 2.0).collect();
            let sv: f64 = s.iter().zip(&v).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            let expected = sv + div - m.diffusion * (ss - 1.5);
            let xb = ArrayView2::from_shape((1, 3), &x).unwrap();
            let got = residual_values(&score, &m, m.diffusion, xb).unwrap()[0];
            assert!(
                (got - expected).abs() <= 1e-6 * expected.abs().max(1.0),
                "{got} vs {expected}"
            );
        }
    }

    #[test]
    fn known_components_come_from_the_system() {
        let sys = SystemSpec::lorenz63();
        let m = model(3, vec![false, true, true], Some(sys.clone()), 3);
        let x = [1.0, 2.0, 3.0];
        let v = velocity_eval(&m, &x).unwrap();
        let truth = sys.drift(&x).unwrap();
        assert_eq!(v[1], truth[1]);
        assert_eq!(v[2], truth[2]);
        assert_eq!(m.unknown(), vec![0]);
    }

    #[test]
    fn validation_catches_inconsistent_models() {
        let mut m = model(2, vec![false, false], None, 1);
        assert!(m.validate().is_ok());
        m.known_mask = vec![false, true];
        assert!(m.validate().is_err());
        let mut m = model(2, vec![false, true], None, 1);
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        m.known_drift = Some(SystemSpec::lorenz63());
        assert!(matches!(m.validate(), Err(Error::Shape(_))));
        m.known_drift = Some(SystemSpec::vanderpol());
        assert!(m.validate().is_ok());
    }

    fn cache_for(m: &VelocityModel, n: usize, seed: u64) -> ResidualCache {
        let pts = random_points(n, m.d(), seed);
        ResidualCache::build(
            &GaussianScore {
                d: m.d(),
                variance: 1.5,
            },
            m,
            pts.view(),
        )
        .unwrap()
    }

    fn perturbed(m: &VelocityModel, idx: usize, h: f64) -> VelocityModel {
        let mut out = m.clone();
        let mut k = 0;
        out.net.for_each_mut(|v| {
            if k == idx {
                *v += h;
            }
            k += 1;
        });
        out
    }

    fn check_gradient(m: &VelocityModel, f: impl Fn(&VelocityModel) -> (f64, ParamGrads)) {
        let analytic = f(m).1.flatten();
        let h = 1e-6;
        for idx in 0..analytic.len() {
            let fd = (f(&perturbed(m, idx, h)).0 - f(&perturbed(m, idx, -h)).0) / (2.0 * h);
            let err = (fd - analytic[idx]).abs() / analytic[idx].abs().max(1e-2);
            assert!(err <= 1e-5, "param {idx}: fd {fd} vs {}", analytic[idx]);
        }
    }

    #[test]
    fn cached_residual_agrees_with_direct_evaluation() {
        let m = model(3, vec![false, true, false], Some(SystemSpec::lorenz63()), 5);
        let cache = cache_for(&m, 50, 1);
        let direct = residual_values(
            &GaussianScore {
                d: 3,
                variance: 1.5,
            },
            &m,
            m.diffusion,
            cache.points.view(),
        )
        .unwrap();
        let cached = cache.residuals(&m).unwrap();
        for (a, b) in direct.iter().zip(cached.iter()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn pinn_gradient_matches_finite_differences() {
        let m = model(2, vec![false, false], None, 7);
        let cache = cache_for(&m, 20, 2);
        let idx: Vec<usize> = (0..20).step_by(2).collect();
        check_gradient(&m, |p| pinn_loss(&cache, p, &idx).unwrap());
    }

    #[test]
    fn merit_gradient_matches_finite_differences() {
        let m = model(3, vec![false, true, false], Some(SystemSpec::lorenz63()), 8);
        let cache = cache_for(&m, 16, 3);
        let idx: Vec<usize> = vec![3, 0, 9, 12, 7];
        let lambda = vec![0.5, -1.0, 0.2, 2.0, -0.3];
        let mut colloc = Collocation::uniform(
            &[(-2.0, 2.0), (-1.0, 3.0), (0.0, 1.0)],
            6,
            &mut stream_rng(1, 1),
        );
        // keeps the constant known-drift energy small enough for central differences
        colloc.weight = 0.5;
        check_gradient(&m, |p| {
            let (parts, g) = auglag_merit(&cache, p, &idx, &lambda, 1.7, 3.0, &colloc).unwrap();
            (parts.merit, g)
        });
    }

    #[test]
    fn merit_parts_are_consistent() {
        let m = model(1, vec![false], None, 9);
        let cache = cache_for(&m, 10, 4);
        let idx: Vec<usize> = (0..10).collect();
        let colloc = Collocation::data(cache.points.clone());
        let r = cache.residuals(&m).unwrap();
        let lambda: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let (parts, _) = auglag_merit(&cache, &m, &idx, &lambda, 1.0, 2.0, &colloc).unwrap();
        let lin: f64 = lambda.iter().zip(r.iter()).map(|(l, r)| l * r).sum::<f64>() / 10.0;
        let msq = r.iter().map(|r| r * r).sum::<f64>() / 10.0;
        let energy = energy_term(&m, &colloc).unwrap();
        assert!((parts.energy - energy).abs() < 1e-12 * energy.max(1.0));
        assert!((parts.mean_sq_residual - msq).abs() < 1e-12 * msq.max(1.0));
        assert!((parts.merit - (energy + lin + msq)).abs() < 1e-10 * parts.merit.abs().max(1.0));
        assert!(matches!(
            auglag_merit(&cache, &m, &idx, &lambda[..3], 1.0, 2.0, &colloc),
            Err(Error::Usage(_))
        ));
    }

    fn linear_1d(slope: f64, bias: f64) -> VelocityModel {
        let mut net = MlpParams::zeros(&[1, 1]).unwrap();
        net.weights[0][[0, 0]] = slope;
        net.biases[0][0] = bias;
        VelocityModel {
            net,
            known_mask: vec![false],
            known_drift: None,
            diffusion: 0.5,
            collocation: CollocationPolicy::UniformBox,
            input_shift: vec![0.0],
            input_scale: vec![1.0],
            output_scale: 1.0,
        }
    }

    #[test]
    fn energy_of_constant_field_is_volume_times_square() {
        let c = Collocation::uniform(&[(0.0, 2.0)], 50, &mut stream_rng(3, 0));
        let e = energy_term(&linear_1d(0.0, 1.5), &c).unwrap();
        assert!((e - 2.0 * 2.25).abs() < 1e-12);
        assert_eq!(energy_term(&linear_1d(0.0, 0.0), &c).unwrap(), 0.0);
    }

    #[test]
    fn energy_of_identity_on_unit_interval() {
        let n = 10_000;
        let c = Collocation::uniform(&[(0.0, 1.0)], n, &mut stream_rng(4, 0));
        let e = energy_term(&linear_1d(1.0, 0.0), &c).unwrap();
        // sd of x^2 for x ~ U(0,1) is sqrt(4/45)
        let se = (4.0f64 / 45.0).sqrt() / (n as f64).sqrt();
        assert!((e - 1.0 / 3.0).abs() < 3.0 * se, "{e}");
    }

    #[test]
    fn uniform_collocation_stays_in_box() {
        let c = Collocation::uniform(&[(0.0, 2.0), (-1.0, 0.5)], 100, &mut stream_rng(0, 0));
        assert!((c.weight - 3.0).abs() < 1e-15);
        assert!(c.points.column(0).iter().all(|&v| (0.0..2.0).contains(&v)));
    }

    fn cfg() -> VelocityTrainConfig {
        VelocityTrainConfig {
            mu_init: 1.0,
            mu_max: 5.0,
            eta: 0.5,
            a: 2.0,
            epsilon: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn outer_update_rules() {
        let mut st = AugLagState::new(2, &cfg(), 1.0);
        assert_eq!(
            st.update(array![0.6, 0.6].view()),
            OuterDecision::PenaltyIncreased
        );
        assert_eq!(st.mu, 2.0);
        assert_eq!(st.lambda, vec![0.0, 0.0]);
        assert_eq!(st.update(array![0.4, -0.4].view()), OuterDecision::Accepted);
        assert_eq!(st.lambda, vec![0.8, -0.8]);
        assert_eq!(st.residual_best_norm, 0.4);
        assert_eq!(st.mu, 2.0);
        st.update(array![1.0, 1.0].view());
        st.update(array![1.0, 1.0].view());
        assert_eq!(st.mu, 5.0);
        assert_eq!(
            st.update(array![0.001, 0.0].view()),
            OuterDecision::Converged
        );
        st.start_shuffle(1);
        assert_eq!(st.mu, 2.0);
        st.start_shuffle(9);
        assert_eq!(st.mu, 5.0);
        assert_eq!(st.lambda, vec![0.8, -0.8]);
    }

    #[test]
    fn config_validation() {
        assert!(VelocityTrainConfig::default().validate().is_ok());
        let bad = [
            VelocityTrainConfig {
                eta: 1.0,
                ..Default::default()
            },
            VelocityTrainConfig {
                a: 1.0,
                ..Default::default()
            },
            VelocityTrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            VelocityTrainConfig {
                mu_max: 0.5,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        assert_eq!(
            VelocityTrainConfig {
                batch_size: 256,
                ..Default::default()
            }
            .iterations_per_sweep(1000),
            4
        );
    }

    fn ou_problem(cfg: &VelocityTrainConfig) -> VelocityProblem {
        let pts = random_points(300, 1, 11).mapv(|v| v * 0.5f64.sqrt());
        let pc = PointCloud::new(pts).unwrap();
        VelocityProblem::new(
            &pc,
            &GaussianScore {
                d: 1,
                variance: 0.5,
            },
            0.5,
            vec![false],
            None,
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn training_is_deterministic_and_logs_every_outer_step() {
        let cfg = VelocityTrainConfig {
            n_shuffle: 2,
            n_aug: 2,
            batch_size: 64,
            hidden: vec![8, 8],
            lr: 1e-3,
            seed: 5,
            ..Default::default()
        };
        let prob = ou_problem(&cfg);
        let (a, la) = train_velocity(&prob, &cfg).unwrap();
        let (b, lb) = train_velocity(&prob, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.rows.len(), 4);
        let strip = |l: &TrainLog| {
            l.rows
                .iter()
                .map(|r| LogRow {
                    wall_ms: 0,
                    ..r.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&la), strip(&lb));
        assert_eq!(la.termination, Termination::Budget);
        assert_eq!(la.rows[0].mu, 2.0);
        assert_eq!(la.rows[2].mu, 3.0);
        let (_, pl) = train_velocity_pinn(&prob, &cfg).unwrap();
        assert_eq!(pl.rows.len(), 4);
    }

    #[test]
    fn loose_tolerance_terminates_immediately() {
        let cfg = VelocityTrainConfig {
            epsilon: 1e9,
            hidden: vec![4],
            ..Default::default()
        };
        let prob = ou_problem(&cfg);
        let (m, log) = train_velocity(&prob, &cfg).unwrap();
        assert_eq!(log.termination, Termination::Epsilon);
        assert!(log.rows.is_empty());
        assert_eq!(m, prob.template);
        assert_eq!(log.termination.as_str(), "epsilon");
    }

    #[test]
    fn problem_rejects_dimension_mismatch() {
        let pc = PointCloud::new(random_points(10, 2, 1)).unwrap();
        let cfg = VelocityTrainConfig::default();
        let r = VelocityProblem::new(
            &pc,
            &GaussianScore {
                d: 1,
                variance: 1.0,
            },
            0.5,
            vec![false, false],
            None,
            &cfg,
        );
        assert!(matches!(r, Err(Error::Compatibility(_))));
        let r = VelocityProblem::new(
            &pc,
            &GaussianScore {
                d: 2,
                variance: 1.0,
            },
            0.5,
            vec![true, true],
            Some(SystemSpec::vanderpol()),
            &cfg,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let row = LogRow {
            shuffle: 1,
            outer_k: 2,
            residual_rms: 0.5,
            residual_l2: 5.0,
            mu: 2.0,
            merit: 1.0,
            energy: 0.25,
            accepted: true,
            wall_ms: 7,
        };
        let log = TrainLog {
            rows: vec![row],
            termination: Termination::Budget,
            lambda: LambdaStats {
                min: 0.0,
                max: 0.0,
                mean: 0.0,
            },
            final_residual: ResidualNorm { rms: 0.5, l2: 5.0 },
        };
        assert_eq!(
            log.to_csv(),
            format!("{LOG_HEADER}\n1,2,0.5,5,2,1,0.25,true,7\n")
        );
    }
}
