//! Benchmark drift fields, Euler-Maruyama integration and dataset generation.
//!
//! The SDE is `dX = v(X) dt + sqrt(2 D) dW` with constant isotropic `D`.
//! `Ou1d` and `UniformBox` are test fixtures with known invariant measures;
//! the other four systems are the benchmarks.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{PointCloud, Provenance};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams, ChaCha8Rng};

/// States with any coordinate beyond this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemKind {
    /// `x' = y`, `y' = c (1 - x^2) y - x`.
    Vanderpol {
        c: f64,
    },
    /// Active swimmer in a quartic trap: `x' = -x^3 + nu`, `nu' = -gamma nu`.
    Swimmer {
        gamma: f64,
    },
    Lorenz63 {
        c1: f64,
        c2: f64,
        c3: f64,
    },
    /// `x_i' = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`, cyclic indices.
    Lorenz96 {
        n: usize,
        forcing: f64,
    },
    /// `x' = -theta x`; stationary variance `D / theta`.
    Ou1d {
        theta: f64,
    },
    /// Zero drift inside `[lo, hi]^dim` with reflecting walls.
    UniformBox {
        dim: usize,
        lo: f64,
        hi: f64,
    },
}

/// A drift field together with its diffusion coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(flatten)]
    pub kind: SystemKind,
    #[serde(rename = "D")]
    pub diffusion: f64,
}

impl SystemSpec {
    pub fn new(kind: SystemKind, diffusion: f64) -> Result<Self> {
        let s = Self { kind, diffusion };
        s.validate()?;
        Ok(s)
    }

    pub fn vanderpol() -> Self {
        Self {
            kind: SystemKind::Vanderpol { c: 0.5 },
            diffusion: 0.05,
        }
    }

    pub fn swimmer() -> Self {
        Self {
            kind: SystemKind::Swimmer { gamma: 0.1 },
            diffusion: 1.0,
        }
    }

    pub fn lorenz63() -> Self {
        Self {
            kind: SystemKind::Lorenz63 {
                c1: 10.0,
                c2: 28.0,
                c3: 8.0 / 3.0,
            },
            diffusion: 10.0,
        }
    }

    pub fn lorenz96() -> Self {
        Self {
            kind: SystemKind::Lorenz96 { n: 5, forcing: 8.0 },
            diffusion: 0.05,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SystemKind::Vanderpol { .. } => "vanderpol",
            SystemKind::Swimmer { .. } => "swimmer",
            SystemKind::Lorenz63 { .. } => "lorenz63",
            SystemKind::Lorenz96 { .. } => "lorenz96",
            SystemKind::Ou1d { .. } => "ou1d",
            SystemKind::UniformBox { .. } => "uniform-box",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion >= 0.0 && self.diffusion.is_finite()) {
            return Err(Error::Config(format!(
                "D must be finite and >= 0, got {}",
                self.diffusion
            )));
        }
        match self.kind {
            SystemKind::Lorenz96 { n, .. } if n < 4 => {
                Err(Error::Config(format!("lorenz96 needs n >= 4, got {n}")))
            }
            SystemKind::UniformBox { dim, lo, hi } if dim == 0 || !(lo < hi) => Err(Error::Config(
                "uniform-box needs dim >= 1 and lo < hi".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            SystemKind::Vanderpol { .. } | SystemKind::Swimmer { .. } => 2,
            SystemKind::Lorenz63 { .. } => 3,
            SystemKind::Lorenz96 { n, .. } => n,
            SystemKind::Ou1d { .. } => 1,
            SystemKind::UniformBox { dim, .. } => dim,
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::Shape(format!(
                "{} state has dimension {}, got {n}",
                self.name(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Drift `v(x)`.
    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut out = vec![0.0; x.len()];
        self.drift_into(x, &mut out);
        Ok(out)
    }

    fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::Vanderpol { c } => {
                out[0] = x[1];
                out[1] = c * (1.0 - x[0] * x[0]) * x[1] - x[0];
            }
            SystemKind::Swimmer { gamma } => {
                out[0] = -x[0].powi(3) + x[1];
                out[1] = -gamma * x[1];
            }
            SystemKind::Lorenz63 { c1, c2, c3 } => {
                out[0] = c1 * (x[1] - x[0]);
                out[1] = x[0] * (c2 - x[2]) - x[1];
                out[2] = x[0] * x[1] - c3 * x[2];
            }
            SystemKind::Lorenz96 { n, forcing } => {
                for i in 0..n {
                    let xp1 = x[(i + 1) % n];
                    let xm1 = x[(i + n - 1) % n];
                    let xm2 = x[(i + n - 2) % n];
                    out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
                }
            }
            SystemKind::Ou1d { theta } => out[0] = -theta * x[0],
            SystemKind::UniformBox { .. } => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// Diagonal of the drift Jacobian, `d v_k / d x_k`.
    pub fn jacobian_diag(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(match self.kind {
            SystemKind::Vanderpol { c } => vec![0.0, c * (1.0 - x[0] * x[0])],
            SystemKind::Swimmer { gamma } => vec![-3.0 * x[0] * x[0], -gamma],
            SystemKind::Lorenz63 { c1, c3, .. } => vec![-c1, -1.0, -c3],
            SystemKind::Lorenz96 { n, .. } => vec![-1.0; n],
            SystemKind::Ou1d { theta } => vec![-theta],
            SystemKind::UniformBox { dim, .. } => vec![0.0; dim],
        })
    }

    /// Reflecting walls, if the system has any.
    pub fn walls(&self) -> Option<(f64, f64)> {
        match self.kind {
            SystemKind::UniformBox { lo, hi, .. } => Some((lo, hi)),
            _ => None,
        }
    }
}

/// Anything that can supply a drift for a batch of states (one per row).
pub trait DriftField: Sync {
    fn dim(&self) -> usize;
    fn drift_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
    fn walls(&self) -> Option<(f64, f64)> {
        None
    }
}

impl DriftField for SystemSpec {
    fn dim(&self) -> usize {
        SystemSpec::dim(self)
    }

    fn drift_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = Array2::zeros(x.raw_dim());
        for (xr, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            let xs = xr.to_vec();
            self.drift_into(&xs, o.as_slice_mut().expect("standard layout"));
        }
        Ok(out)
    }

    fn walls(&self) -> Option<(f64, f64)> {
        SystemSpec::walls(self)
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    // Fold onto [lo, lo + 2w) then mirror the upper half.
    let r = (v - lo).rem_euclid(2.0 * w);
    if r <= w {
        lo + r
    } else {
        lo + 2.0 * w - r
    }
}

/// One Euler-Maruyama step `x + v(x) dt + sqrt(2 D dt) xi`.
pub fn euler_maruyama_step<R: Rng + ?Sized>(
    x: &[f64],
    system: &SystemSpec,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let v = system.drift(x)?;
    let amp = (2.0 * system.diffusion * dt).sqrt();
    let mut out: Vec<f64> = x
        .iter()
        .zip(&v)
        .map(|(&xi, &vi)| xi + vi * dt + amp * rng.sample::<f64, _>(StandardNormal))
        .collect();
    if let Some((lo, hi)) = system.walls() {
        out.iter_mut().for_each(|v| *v = reflect(*v, lo, hi));
    }
    Ok(out)
}

/// How trajectories are started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Every trajectory starts at the same point.
    Point { x: Vec<f64> },
    /// Uniform in `[lo, hi]^d`, drawn from the trajectory's own stream.
    RandomBox { lo: f64, hi: f64 },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::RandomBox { lo: -2.0, hi: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Recorded steps after burn-in, per trajectory.
    pub n_steps: usize,
    pub burn_in_steps: usize,
    pub stride: usize,
    pub n_trajectories: usize,
    #[serde(default)]
    pub init: InitPolicy,
    pub seed: u64,
    /// Random subsample of the collected points to this size.
    #[serde(default)]
    pub subsample: Option<usize>,
}

impl SimConfig {
    /// Defaults per system: `dt = 1e-4` for Lorenz-63, `1e-3` otherwise, and a
    /// 10% burn-in.
    pub fn for_system(system: &SystemSpec, n_steps: usize, seed: u64) -> Self {
        let dt = match system.kind {
            SystemKind::Lorenz63 { .. } => 1e-4,
            _ => 1e-3,
        };
        Self {
            dt,
            n_steps,
            burn_in_steps: n_steps / 10,
            stride: 1,
            n_trajectories: 1,
            init: InitPolicy::default(),
            seed,
            subsample: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.n_trajectories == 0 {
            return Err(Error::Config("n_trajectories must be >= 1".into()));
        }
        if let Some(0) = self.subsample {
            return Err(Error::Config("subsample must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of integrating several independent trajectories.
#[derive(Debug, Clone)]
pub struct Ensemble {
    /// Recorded (strided, post-burn-in) states per trajectory.
    pub paths: Vec<Array2<f64>>,
    /// Step index at which a trajectory diverged, if it did. Diverged
    /// trajectories keep only the states recorded before that step.
    pub diverged: Vec<Option<usize>>,
}

impl Ensemble {
    pub fn divergence_fraction(&self) -> f64 {
        let n = self.diverged.iter().filter(|d| d.is_some()).count();
        n as f64 / self.diverged.len().max(1) as f64
    }

    /// Recorded states concatenated in trajectory order.
    pub fn concat(&self, d: usize) -> Array2<f64> {
        let views: Vec<_> = self.paths.iter().map(|p| p.view()).collect();
        if views.is_empty() {
            return Array2::zeros((0, d));
        }
        ndarray::concatenate(Axis(0), &views).expect("matching widths")
    }
}

fn initial_state(policy: &InitPolicy, d: usize, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    match policy {
        InitPolicy::Point { x } => {
            if x.len() != d {
                return Err(Error::Config(format!(
                    "initial point has {} entries, need {d}",
                    x.len()
                )));
            }
            Ok(Array1::from(x.clone()))
        }
        InitPolicy::RandomBox { lo, hi } => {
            Ok((0..d).map(|_| rng.random_range(*lo..*hi)).collect())
        }
    }
}

/// Number of worker threads from `IMSM_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var("IMSM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Integrates `cfg.n_trajectories` trajectories in lockstep. Trajectory `k`
/// draws its initial state and noise from stream `k` of `cfg.seed`, so the
/// result does not depend on how trajectories are grouped into batches or
/// threads.
pub fn simulate_ensemble<F: DriftField + ?Sized>(
    field: &F,
    diffusion: f64,
    cfg: &SimConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    let d = field.dim();
    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.n_trajectories as u64)
        .map(|k| stream_rng(cfg.seed, k))
        .collect();
    let mut x0 = Array2::zeros((cfg.n_trajectories, d));
    for (k, rng) in rngs.iter_mut().enumerate() {
        x0.row_mut(k).assign(&initial_state(&cfg.init, d, rng)?);
    }
    let threads = thread_count().min(cfg.n_trajectories);
    if threads <= 1 {
        return integrate_block(field, diffusion, cfg, x0, &mut rngs);
    }
    let chunk = cfg.n_trajectories.div_ceil(threads);
    let mut blocks: Vec<(Array2<f64>, Vec<ChaCha8Rng>)> = Vec::new();
    let mut rest = rngs;
    let mut start = 0;
    while !rest.is_empty() {
        let take = chunk.min(rest.len());
        let tail = rest.split_off(take);
        blocks.push((
            x0.slice(ndarray::s![start..start + take, ..]).to_owned(),
            rest,
        ));
        rest = tail;
        start += take;
    }
    let results: Vec<Result<Ensemble>> = std::thread::scope(|s| {
        let handles: Vec<_> = blocks
            .into_iter()
            .map(|(x, mut r)| s.spawn(move || integrate_block(field, diffusion, cfg, x, &mut r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Ensemble {
        paths: Vec::new(),
        diverged: Vec::new(),
    };
    for r in results {
        let e = r?;
        out.paths.extend(e.paths);
        out.diverged.extend(e.diverged);
    }
    Ok(out)
}

fn integrate_block<F: DriftField + ?Sized>(
    field: &F,
    diffusion: f64,
    cfg: &SimConfig,
    mut x: Array2<f64>,
    rngs: &mut [ChaCha8Rng],
) -> Result<Ensemble> {
    let (m, d) = x.dim();
    let amp = (2.0 * diffusion * cfg.dt).sqrt();
    let n_rec = cfg.n_steps / cfg.stride;
    let mut paths: Vec<Vec<f64>> = vec![Vec::with_capacity(n_rec * d); m];
    let mut diverged: Vec<Option<usize>> = vec![None; m];
    let total = cfg.burn_in_steps + cfg.n_steps;
    let walls = field.walls();
    let mut alive: Vec<usize> = (0..m).collect();
    for step in 0..total {
        if alive.is_empty() {
            break;
        }
        let v = if alive.len() == m {
            field.drift_batch(x.view())?
        } else {
            let sub = x.select(Axis(0), &alive);
            let vs = field.drift_batch(sub.view())?;
            let mut full = Array2::zeros((m, d));
            for (r, &k) in alive.iter().enumerate() {
                full.row_mut(k).assign(&vs.row(r));
            }
            full
        };
        let recorded =
            step >= cfg.burn_in_steps && (step - cfg.burn_in_steps + 1) % cfg.stride == 0;
        let mut still = Vec::with_capacity(alive.len());
        for &k in &alive {
            let mut row = x.row_mut(k);
            let rng = &mut rngs[k];
            let mut ok = true;
            for j in 0..d {
                let xi: f64 = rng.sample(StandardNormal);
                let mut nv = row[j] + v[[k, j]] * cfg.dt + amp * xi;
                if let Some((lo, hi)) = walls {
                    nv = reflect(nv, lo, hi);
                }
                if !nv.is_finite() || nv.abs() > DIVERGENCE_BOUND {
                    ok = false;
                }
                row[j] = nv;
            }
            if !ok {
                diverged[k] = Some(step);
                continue;
            }
            if recorded {
                paths[k].extend(row.iter());
            }
            still.push(k);
        }
        alive = still;
    }
    let paths = paths
        .into_iter()
        .map(|p| {
            let n = p.len() / d;
            Array2::from_shape_vec((n, d), p).expect("row-major states")
        })
        .collect();
    Ok(Ensemble { paths, diverged })
}

/// Integrates one trajectory from `x0` and returns every post-burn-in state
/// (`cfg.stride` and `cfg.n_trajectories` are ignored). Uses stream 0.
pub fn simulate(system: &SystemSpec, x0: ArrayView1<f64>, cfg: &SimConfig) -> Result<Array2<f64>> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial state must be finite".into()));
    }
    let single = SimConfig {
        stride: 1,
        n_trajectories: 1,
        init: InitPolicy::Point { x: x0.to_vec() },
        subsample: None,
        ..cfg.clone()
    };
    let ens = simulate_ensemble(system, system.diffusion, &single)?;
    if let Some(step) = ens.diverged[0] {
        return Err(Error::Divergence {
            step,
            reason: "state left the bounded region".into(),
        });
    }
    Ok(ens.paths.into_iter().next().unwrap())
}

/// Strided post-burn-in states of all trajectories, concatenated by
/// trajectory index, optionally subsampled at random to `cfg.subsample`.
pub fn generate_dataset(system: &SystemSpec, cfg: &SimConfig) -> Result<PointCloud> {
    system.validate()?;
    let ens = simulate_ensemble(system, system.diffusion, cfg)?;
    if let Some((k, step)) = ens
        .diverged
        .iter()
        .enumerate()
        .find_map(|(k, d)| d.map(|s| (k, s)))
    {
        return Err(Error::Divergence {
            step,
            reason: format!("trajectory {k} left the bounded region"),
        });
    }
    let mut pts = ens.concat(system.dim());
    if pts.nrows() == 0 {
        return Err(Error::Data("simulation recorded no states".into()));
    }
    if let Some(target) = cfg.subsample {
        if target < pts.nrows() {
            let mut rng = stream_rng(cfg.seed, streams::SUBSAMPLE);
            let mut idx = rand::seq::index::sample(&mut rng, pts.nrows(), target).into_vec();
            idx.sort_unstable();
            pts = pts.select(Axis(0), &idx);
        }
    }
    Ok(PointCloud::new(pts)?.with_provenance(Provenance {
        system: system.name().into(),
        seed: cfg.seed,
        dt: cfg.dt,
        burn_in_steps: cfg.burn_in_steps,
        stride: cfg.stride,
        n_trajectories: cfg.n_trajectories,
        subsample: cfg.subsample,
    }))
}
