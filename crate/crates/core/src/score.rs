//! Multi-scale denoising score matching.
//!
//! The noise ladder is geometric: `sigma_1` is the largest pairwise distance
//! in the data, the ratio `gamma` comes from the consecutive-level overlap
//! equation, and levels stop at `sigma_min`. The network sees the (optionally
//! standardized) state together with `ln sigma` and its output is divided by
//! `sigma`, so `s(x, sigma) = net(x, ln sigma) / sigma`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, DiffContext, MlpParams, ParamGrads};
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Exact O(N^2) search is used up to this many points.
pub const EXACT_PAIRS_LIMIT: usize = 20_000;

/// Largest pairwise Euclidean distance among the points.
///
/// Above [`EXACT_PAIRS_LIMIT`] points the search is still exact: a
/// farthest-point sweep gives a lower bound, and only points whose
/// triangle-inequality upper bound `|x - c| + max_j |x_j - c|` can beat it are
/// scanned against the full set.
pub fn sigma1_from_data(points: &PointCloud) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 points for a diameter, got {n}"
        )));
    }
    let p = &points.points;
    let dist2 = |i: usize, j: usize| -> f64 {
        p.row(i)
            .iter()
            .zip(p.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    if n <= EXACT_PAIRS_LIMIT {
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(dist2(i, j));
            }
        }
        return Ok(best.sqrt());
    }

    let farthest_from = |i: usize| -> (usize, f64) {
        (0..n)
            .map(|j| (j, dist2(i, j)))
            .fold((i, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    };
    let mut best = 0.0f64;
    let mut cur = 0;
    for _ in 0..4 {
        let (j, d2) = farthest_from(cur);
        if d2 <= best {
            break;
        }
        best = d2;
        cur = j;
    }
    let mut best = best.sqrt();
    let centre = points.mean();
    let to_centre: Vec<f64> = (0..n)
        .map(|i| {
            p.row(i)
                .iter()
                .zip(&centre)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let radius = to_centre.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| to_centre[b].total_cmp(&to_centre[a]));
    for &i in &order {
        if to_centre[i] + radius <= best {
            break;
        }
        best = best.max(farthest_from(i).1.sqrt());
    }
    Ok(best)
}

/// Standard normal CDF via the error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `Phi(sqrt(2d)(g - 1) + 3g) - Phi(sqrt(2d)(g - 1) - 3g)`.
pub fn overlap(d: usize, gamma: f64) -> f64 {
    let a = (2.0 * d as f64).sqrt() * (gamma - 1.0);
    normal_cdf(a + 3.0 * gamma) - normal_cdf(a - 3.0 * gamma)
}

/// Upper end of the bracket searched for the level ratio.
pub const GAMMA_BRACKET_MAX: f64 = 100.0;

/// Ratio `gamma > 1` with `overlap(d, gamma) = 0.5`, by bisection on
/// `(1, GAMMA_BRACKET_MAX]`.
///
/// The overlap stays above 0.997 for every `gamma` when `d <= 4`, so no
/// ratio exists there and a numeric error is returned.
pub fn solve_gamma(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::Config("dimension must be >= 1".into()));
    }
    let f = |g: f64| overlap(d, g) - 0.5;
    let mut lo = 1.0;
    let mut hi = GAMMA_BRACKET_MAX;
    if f(hi) > 0.0 {
        return Err(Error::Numeric(format!(
            "no level ratio in (1, {GAMMA_BRACKET_MAX}] for d = {d}: overlap at the bracket end is {:.6}",
            overlap(d, hi)
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    let g = 0.5 * (lo + hi);
    let r = f(g).abs();
    if r > 1e-6 {
        return Err(Error::Numeric(format!(
            "level-ratio residual {r:e} after bisection"
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaSource {
    /// Root of the overlap equation.
    Overlap,
    /// No root exists for this dimension; a fixed level count was used.
    FixedLevels,
}

/// Default level count when the overlap equation has no root.
pub const FALLBACK_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// Strictly decreasing, `sigmas[i] / sigmas[i + 1] == gamma`.
    pub sigmas: Vec<f64>,
    pub gamma: f64,
    pub sigma_min: f64,
    pub gamma_source: GammaSource,
}

impl NoiseSchedule {
    /// `sigma_i = sigma1 * gamma^-(i-1)` for `i = 1..=levels`.
    pub fn geometric(sigma1: f64, gamma: f64, levels: usize, sigma_min: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && gamma > 1.0 && levels >= 1) {
            return Err(Error::Config(format!(
                "invalid schedule sigma1={sigma1} gamma={gamma} L={levels}"
            )));
        }
        let sigmas = (0..levels)
            .map(|i| sigma1 * gamma.powi(-(i as i32)))
            .collect();
        Ok(Self {
            sigmas,
            gamma,
            sigma_min,
            gamma_source: GammaSource::Overlap,
        })
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigma_first(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_last(&self) -> f64 {
        *self.sigmas.last().unwrap()
    }
}

/// Largest `L` with `sigma1 * gamma^-(L-1) >= sigma_min`.
pub fn level_count(sigma1: f64, gamma: f64, sigma_min: f64) -> usize {
    let mut l = ((sigma1 / sigma_min).ln() / gamma.ln()).floor().max(0.0) as usize + 1;
    while l > 1 && sigma1 * gamma.powi(-(l as i32 - 1)) < sigma_min {
        l -= 1;
    }
    while sigma1 * gamma.powi(-(l as i32)) >= sigma_min {
        l += 1;
    }
    l
}

/// Schedule from the data: `sigma_1` from the diameter, `gamma` from
/// [`solve_gamma`]. When no ratio exists for the data dimension, `gamma` is
/// chosen so that exactly `fallback_levels` levels span `[sigma_min, sigma_1]`.
pub fn build_schedule(
    points: &PointCloud,
    sigma_min: f64,
    fallback_levels: usize,
) -> Result<NoiseSchedule> {
    let sigma1 = sigma1_from_data(points)?;
    schedule_from_sigma1(sigma1, points.dim(), sigma_min, fallback_levels)
}

pub fn schedule_from_sigma1(
    sigma1: f64,
    d: usize,
    sigma_min: f64,
    fallback_levels: usize,
) -> Result<NoiseSchedule> {
    if !(sigma_min > 0.0) {
        return Err(Error::Config(format!(
            "sigma_min must be > 0, got {sigma_min}"
        )));
    }
    if sigma1 <= sigma_min {
        return Err(Error::Config(format!(
            "largest noise level {sigma1} does not exceed sigma_min {sigma_min}"
        )));
    }
    match solve_gamma(d) {
        Ok(gamma) => {
            let l = level_count(sigma1, gamma, sigma_min);
            NoiseSchedule::geometric(sigma1, gamma, l, sigma_min)
        }
        Err(Error::Numeric(_)) => {
            if fallback_levels < 2 {
                return Err(Error::Config("fallback level count must be >= 2".into()));
            }
            let gamma = (sigma1 / sigma_min).powf(1.0 / (fallback_levels - 1) as f64);
            let mut s = NoiseSchedule::geometric(sigma1, gamma, fallback_levels, sigma_min)?;
            // Rounding can leave the last level a hair under sigma_min.
            *s.sigmas.last_mut().unwrap() = s.sigmas.last().unwrap().max(sigma_min);
            s.gamma_source = GammaSource::FixedLevels;
            Ok(s)
        }
        Err(e) => Err(e),
    }
}

/// Affine map applied to states before they reach the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn fit(points: &PointCloud) -> Self {
        let std = points
            .std()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self {
            mean: points.mean(),
            std,
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (k, mut c) in z.axis_iter_mut(Axis(1)).enumerate() {
            c.mapv_inplace(|v| (v - self.mean[k]) / self.std[k]);
        }
        z
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }
}

/// Trained score network with its noise ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub net: MlpParams,
    pub schedule: NoiseSchedule,
    pub d: usize,
    pub standardization: Standardization,
    /// Bounding box of the training data in original coordinates.
    pub data_bounds: Vec<(f64, f64)>,
    /// Per-axis standard deviation of the training data; sets the default
    /// Langevin step.
    #[serde(default)]
    pub data_std: Vec<f64>,
}

impl ScoreModel {
    pub fn new(
        net: MlpParams,
        schedule: NoiseSchedule,
        standardization: Standardization,
        data_bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let d = net.d_out();
        if net.d_in() != d + 1 {
            return Err(Error::Shape(format!(
                "score network must map {} inputs to {d} outputs, maps {} -> {d}",
                d + 1,
                net.d_in()
            )));
        }
        if standardization.mean.len() != d || data_bounds.len() != d {
            return Err(Error::Shape(
                "standardization/bounds do not match dimension".into(),
            ));
        }
        Ok(Self {
            net,
            schedule,
            d,
            standardization,
            data_bounds,
            data_std: Vec::new(),
        })
    }

    fn net_input(&self, x: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
        if x.ncols() != self.d {
            return Err(Error::Shape(format!(
                "score model is {}-dimensional, got {}",
                self.d,
                x.ncols()
            )));
        }
        let z = self.standardization.apply(x);
        let mut inp = Array2::from_elem((x.nrows(), self.d + 1), sigma.ln());
        inp.slice_mut(s![.., ..self.d]).assign(&z);
        Ok(inp)
    }

    /// `s(x, sigma)` for each row of `x`, in original coordinates.
    pub fn score_at(&self, x: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
        let inp = self.net_input(x, sigma)?;
        let mut out = self.net.forward_batch(inp.view())?;
        for (k, mut c) in out.axis_iter_mut(Axis(1)).enumerate() {
            let sc = 1.0 / (sigma * self.standardization.std[k]);
            c.mapv_inplace(|v| v * sc);
        }
        Ok(out)
    }

    /// Score at the finest level and its divergence, for each row of `x`.
    pub fn score_and_divergence(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let sigma = self.schedule.sigma_last();
        let inp = self.net_input(x, sigma)?;
        let mut ctx = DiffContext::new(&self.net);
        let h = ctx.eval(inp.view(), self.d)?;
        let n = x.nrows();
        let mut score = ctx.output_values(h)?.clone();
        let mut div = Array1::zeros(n);
        for k in 0..self.d {
            let sd = self.standardization.std[k];
            score.column_mut(k).mapv_inplace(|v| v / (sigma * sd));
            let j = ctx.jacobian_entry(h, k, k)?;
            let jv = ctx.value(j)?;
            for (dv, &v) in div.iter_mut().zip(jv) {
                *dv += v / (sigma * sd * sd);
            }
        }
        Ok((score, div))
    }
}

/// Score at the finest level for a single state.
pub fn score_eval(model: &ScoreModel, x: &[f64]) -> Result<Vec<f64>> {
    let v = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(model
        .score_at(v, model.schedule.sigma_last())?
        .row(0)
        .to_vec())
}

/// Divergence of the finest-level score at a single state.
pub fn divergence_of_score(model: &ScoreModel, x: &[f64]) -> Result<f64> {
    let v = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(model.score_and_divergence(v)?.1[0])
}

/// Stochastic multi-scale loss on a batch of (already standardized) points:
/// each row gets one uniformly drawn level `sigma_i` and one perturbation
/// `xi`, and contributes `0.5 |net(x + sigma_i xi, ln sigma_i) + xi|^2`.
/// With `antithetic`, the mirrored pair `x - sigma_i xi` (target `-xi`) is
/// added for every row, which cancels the leading gradient noise at small
/// `sigma`. Returns the mean over all perturbed rows and its gradient.
pub fn dsm_loss<R: Rng + ?Sized>(
    net: &MlpParams,
    schedule: &NoiseSchedule,
    batch: ArrayView2<f64>,
    antithetic: bool,
    rng: &mut R,
) -> Result<(f64, ParamGrads)> {
    let (n, d) = batch.dim();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let levels = schedule.levels();
    let copies = if antithetic { 2 } else { 1 };
    let mut inp = Array2::zeros((copies * n, d + 1));
    let mut noise = Array2::zeros((copies * n, d));
    for b in 0..n {
        let sigma = schedule.sigmas[rng.random_range(0..levels)];
        for k in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            noise[[b, k]] = xi;
            inp[[b, k]] = batch[[b, k]] + sigma * xi;
            if antithetic {
                noise[[n + b, k]] = -xi;
                inp[[n + b, k]] = batch[[b, k]] - sigma * xi;
            }
        }
        inp[[b, d]] = sigma.ln();
        if antithetic {
            inp[[n + b, d]] = sigma.ln();
        }
    }
    denoising_objective(net, inp.view(), noise.view())
}

/// Mean over rows of `0.5 |net(input) + noise|^2`, with gradient.
pub fn denoising_objective(
    net: &MlpParams,
    input: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<(f64, ParamGrads)> {
    let mut ctx = DiffContext::new(net);
    let h = ctx.eval(input, 0)?;
    let mut total = ctx.constant(vec![0.0; input.nrows()]);
    for k in 0..noise.ncols() {
        let y = ctx.output(h, k)?;
        let c = ctx.constant(noise.column(k).to_vec());
        let r = ctx.add(y, c)?;
        let sq = ctx.square(r)?;
        total = ctx.add(total, sq)?;
    }
    let half = ctx.scale(total, 0.5)?;
    let loss = ctx.mean(half)?;
    ctx.grad_params(loss)
}

/// Validation path: every point is perturbed once at every level and the
/// terms are averaged, i.e. `(1/2L) sum_i E |net + xi|^2` estimated with one
/// draw per (point, level).
pub fn dsm_loss_all_levels<R: Rng + ?Sized>(
    net: &MlpParams,
    schedule: &NoiseSchedule,
    batch: ArrayView2<f64>,
    rng: &mut R,
) -> Result<(f64, ParamGrads)> {
    let (n, d) = batch.dim();
    let levels = schedule.levels();
    let mut inp = Array2::zeros((n * levels, d + 1));
    let mut noise = Array2::zeros((n * levels, d));
    for (i, &sigma) in schedule.sigmas.iter().enumerate() {
        for b in 0..n {
            let r = i * n + b;
            for k in 0..d {
                let xi: f64 = rng.sample(StandardNormal);
                noise[[r, k]] = xi;
                inp[[r, k]] = batch[[b, k]] + sigma * xi;
            }
            inp[[r, d]] = sigma.ln();
        }
    }
    denoising_objective(net, inp.view(), noise.view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sigma_min: f64,
    pub seed: u64,
    #[serde(default = "default_score_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "default_fallback_levels")]
    pub fallback_levels: usize,
    /// Mirrored perturbation pairs in every batch.
    #[serde(default = "default_antithetic")]
    pub antithetic: bool,
    /// Decay of the exponential moving average of the weights; the returned
    /// model carries the averaged weights. `None` returns the raw iterate.
    #[serde(default = "default_ema")]
    pub ema: Option<f64>,
}

fn default_ema() -> Option<f64> {
    Some(0.999)
}

fn default_antithetic() -> bool {
    true
}

fn default_score_hidden() -> Vec<usize> {
    vec![64; 5]
}

pub(crate) fn default_init_scale() -> f64 {
    1.0
}

fn default_fallback_levels() -> usize {
    FALLBACK_LEVELS
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 1e-4,
            sigma_min: 0.01,
            seed: 0,
            hidden: default_score_hidden(),
            init_scale: 1.0,
            standardize: false,
            fallback_levels: FALLBACK_LEVELS,
            antithetic: true,
            ema: default_ema(),
        }
    }
}

impl ScoreTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.sigma_min > 0.0) {
            return Err(Error::Config("lr and sigma_min must be > 0".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if let Some(b) = self.ema {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config("ema decay must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// `avg <- beta avg + (1 - beta) p`, elementwise.
pub fn ema_update(avg: &mut MlpParams, p: &MlpParams, beta: f64) {
    for (a, w) in avg.weights.iter_mut().zip(&p.weights) {
        a.zip_mut_with(w, |a, &w| *a = beta * *a + (1.0 - beta) * w);
    }
    for (a, b) in avg.biases.iter_mut().zip(&p.biases) {
        a.zip_mut_with(b, |a, &b| *a = beta * *a + (1.0 - beta) * b);
    }
}

/// Mini-batch Adam on [`dsm_loss`]. Returns the model and the mean loss of
/// each epoch.
pub fn train_score(points: &PointCloud, cfg: &ScoreTrainConfig) -> Result<(ScoreModel, Vec<f64>)> {
    cfg.validate()?;
    let d = points.dim();
    let standardization = if cfg.standardize {
        Standardization::fit(points)
    } else {
        Standardization::identity(d)
    };
    let z = standardization.apply(points.points.view());
    let zc = PointCloud::new(z.clone())?;
    let schedule = build_schedule(&zc, cfg.sigma_min, cfg.fallback_levels)?;
    let mut widths = vec![d + 1];
    widths.extend(&cfg.hidden);
    widths.push(d);
    let mut net = MlpParams::init(
        &widths,
        cfg.init_scale,
        &mut stream_rng(cfg.seed, streams::INIT),
    )?;
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut avg = net.clone();
    let mut rng = stream_rng(cfg.seed, streams::TRAIN);
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = z.select(Axis(0), chunk);
            let (loss, grads) = dsm_loss(&net, &schedule, batch.view(), cfg.antithetic, &mut rng)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite score loss in epoch {epoch}"
                )));
            }
            adam.step(&mut net, &grads)?;
            if let Some(beta) = cfg.ema {
                ema_update(&mut avg, &net, beta);
            }
            acc += loss;
            batches += 1;
        }
        let mean = acc / batches as f64;
        log::debug!("score epoch {epoch}: loss {mean:.6}");
        log.push(mean);
    }
    let net = if cfg.ema.is_some() { avg } else { net };
    let mut model = ScoreModel::new(net, schedule, standardization, points.bounds())?;
    model.data_std = points.std();
    Ok((model, log))
}

/// Annealed Langevin dynamics driven by an arbitrary score `score(x, sigma)`.
///
/// Level `i` runs `steps_per_level` updates
/// `x += (a_i / 2) s(x, sigma_i) + sqrt(a_i) z` with `a_i = eps0 sigma_i^2 / sigma_L^2`.
/// Samples start uniformly in `bounds`.
pub fn annealed_langevin_with<R, F>(
    score: F,
    sigmas: &[f64],
    bounds: &[(f64, f64)],
    n_samples: usize,
    steps_per_level: usize,
    eps0: f64,
    rng: &mut R,
) -> Result<PointCloud>
where
    R: Rng + ?Sized,
    F: Fn(ArrayView2<f64>, f64) -> Result<Array2<f64>>,
{
    let d = bounds.len();
    let mut x = Array2::from_shape_fn((n_samples, d), |(_, k)| {
        let (lo, hi) = bounds[k];
        rng.random_range(lo..=hi)
    });
    let sigma_last = *sigmas
        .last()
        .ok_or_else(|| Error::Config("empty noise ladder".into()))?;
    for &sigma in sigmas {
        let alpha = eps0 * sigma * sigma / (sigma_last * sigma_last);
        let amp = alpha.sqrt();
        for _ in 0..steps_per_level {
            let s = score(x.view(), sigma)?;
            for (xv, sv) in x.iter_mut().zip(s.iter()) {
                let z: f64 = rng.sample(StandardNormal);
                *xv += 0.5 * alpha * sv + amp * z;
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(Error::Numeric(format!(
                    "Langevin samples diverged at sigma = {sigma}"
                )));
            }
        }
    }
    PointCloud::new(x)
}

/// Default base step: `2e-5` times the squared mean coordinate std of the
/// data (a quarter of the mean bounding-box width when the std is unknown).
pub fn default_langevin_eps(model: &ScoreModel) -> f64 {
    let scale = if model.data_std.len() == model.d {
        model.data_std.iter().sum::<f64>() / model.d as f64
    } else {
        model
            .data_bounds
            .iter()
            .map(|(lo, hi)| (hi - lo) / 4.0)
            .sum::<f64>()
            / model.d as f64
    };
    2e-5 * scale * scale
}

/// Default steps per noise level.
pub const DEFAULT_LANGEVIN_STEPS: usize = 100;

/// Annealed Langevin sampling from a trained model.
pub fn annealed_langevin_sample<R: Rng + ?Sized>(
    model: &ScoreModel,
    n_samples: usize,
    steps_per_level: usize,
    eps0: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    annealed_langevin_with(
        |x, sigma| model.score_at(x, sigma),
        &model.schedule.sigmas,
        &model.data_bounds,
        n_samples,
        steps_per_level,
        eps0,
        rng,
    )
}
