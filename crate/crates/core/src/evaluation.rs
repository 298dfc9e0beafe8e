//! Density and drift comparison.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::PointCloud;
use crate::dynamics::{simulate_ensemble, DriftField, SimConfig, SystemSpec};
use crate::error::{Error, Result};
use crate::score::ScoreModel;
use crate::velocity::{full_residual_norm, VelocityModel};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Bin layout of a [`Histogram2D`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Binning {
    /// `nx * ny` equal cells, row-major in `y`.
    Rect { nx: usize, ny: usize },
    /// Pointy-top hexagons of circumradius `radius`.
    Hex { radius: f64 },
}

impl Binning {
    fn validate(&self) -> Result<()> {
        match *self {
            Binning::Rect { nx, ny } if nx == 0 || ny == 0 => Err(Error::Config(
                "histogram needs at least one bin per axis".into(),
            )),
            Binning::Hex { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::Config("hex radius must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Normalized occupation histogram of a 2-D coordinate projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub binning: Binning,
    pub dims: [usize; 2],
    pub bounds: [(f64, f64); 2],
    pub centers: Vec<[f64; 2]>,
    /// Sums to 1 over the in-bounds samples.
    pub masses: Vec<f64>,
    pub in_bounds: usize,
    pub out_of_bounds: usize,
}

/// Hex lattice covering a box with one ring of padding. Row `i` sits at
/// `y = lo_y + 1.5 r (i - 1)`; odd lattice rows are shifted by half a cell.
struct HexGrid {
    lo: [f64; 2],
    r: f64,
    rows: usize,
    cols: usize,
}

impl HexGrid {
    fn new(bounds: &[(f64, f64); 2], r: f64) -> Self {
        let w = SQRT3 * r;
        let cols = ((bounds[0].1 - bounds[0].0) / w).ceil() as usize + 3;
        let rows = ((bounds[1].1 - bounds[1].0) / (1.5 * r)).ceil() as usize + 3;
        Self {
            lo: [bounds[0].0, bounds[1].0],
            r,
            rows,
            cols,
        }
    }

    fn center(&self, i: usize, j: usize) -> [f64; 2] {
        let w = SQRT3 * self.r;
        let row = i as f64 - 1.0;
        let shift = if (i + 1) % 2 == 0 { 0.0 } else { 0.5 * w };
        [
            self.lo[0] + w * (j as f64 - 1.0) + shift,
            self.lo[1] + 1.5 * self.r * row,
        ]
    }

    fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// Nearest center; ties go to the lowest bin index.
    fn locate(&self, p: [f64; 2]) -> usize {
        let w = SQRT3 * self.r;
        let i0 = ((p[1] - self.lo[1]) / (1.5 * self.r)).round() as i64 + 1;
        let mut best = (f64::INFINITY, usize::MAX);
        for i in (i0 - 1)..=(i0 + 1) {
            if i < 0 || i >= self.rows as i64 {
                continue;
            }
            let shift = if (i + 1) % 2 == 0 { 0.0 } else { 0.5 * w };
            let j0 = ((p[0] - self.lo[0] - shift) / w).round() as i64 + 1;
            for j in (j0 - 1)..=(j0 + 1) {
                if j < 0 || j >= self.cols as i64 {
                    continue;
                }
                let idx = i as usize * self.cols + j as usize;
                let c = self.center(i as usize, j as usize);
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                if d2 < best.0 || (d2 == best.0 && idx < best.1) {
                    best = (d2, idx);
                }
            }
        }
        best.1
    }
}

/// Bounds of columns `dims` padded by 5% of their range.
pub fn default_bounds(points: ArrayView2<f64>, dims: [usize; 2]) -> Result<[(f64, f64); 2]> {
    let mut out = [(0.0, 0.0); 2];
    for (o, &k) in out.iter_mut().zip(&dims) {
        if k >= points.ncols() {
            return Err(Error::Usage(format!(
                "projection axis {k} out of range for d = {}",
                points.ncols()
            )));
        }
        let c = points.column(k);
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Data(
                "cannot bound an empty or non-finite projection".into(),
            ));
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        *o = (lo - pad, hi + pad);
    }
    Ok(out)
}

/// Bins the projection `dims` of `points`.
pub fn histogram2d(
    points: ArrayView2<f64>,
    dims: [usize; 2],
    binning: Binning,
    bounds: Option<[(f64, f64); 2]>,
) -> Result<Histogram2D> {
    binning.validate()?;
    let bounds = match bounds {
        Some(b) => b,
        None => default_bounds(points, dims)?,
    };
    for &k in &dims {
        if k >= points.ncols() {
            return Err(Error::Usage(format!(
                "projection axis {k} out of range for d = {}",
                points.ncols()
            )));
        }
    }
    if bounds
        .iter()
        .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo))
    {
        return Err(Error::Config(
            "histogram bounds must be finite with lo < hi".into(),
        ));
    }
    let (centers, locate): (Vec<[f64; 2]>, Box<dyn Fn([f64; 2]) -> usize>) = match binning {
        Binning::Rect { nx, ny } => {
            let (bx, by) = (bounds[0], bounds[1]);
            let hx = (bx.1 - bx.0) / nx as f64;
            let hy = (by.1 - by.0) / ny as f64;
            let centers = (0..ny)
                .flat_map(|iy| {
                    (0..nx).map(move |ix| {
                        [bx.0 + (ix as f64 + 0.5) * hx, by.0 + (iy as f64 + 0.5) * hy]
                    })
                })
                .collect();
            let f = move |p: [f64; 2]| {
                let ix = (((p[0] - bx.0) / hx) as usize).min(nx - 1);
                let iy = (((p[1] - by.0) / hy) as usize).min(ny - 1);
                iy * nx + ix
            };
            (centers, Box::new(f))
        }
        Binning::Hex { radius } => {
            let grid = HexGrid::new(&bounds, radius);
            let centers = (0..grid.rows)
                .flat_map(|i| (0..grid.cols).map(move |j| (i, j)))
                .map(|(i, j)| grid.center(i, j))
                .collect();
            debug_assert_eq!(grid.len(), grid.rows * grid.cols);
            (centers, Box::new(move |p| grid.locate(p)))
        }
    };
    let mut counts = vec![0usize; centers.len()];
    let mut inside = 0;
    let mut outside = 0;
    for row in points.rows() {
        let p = [row[dims[0]], row[dims[1]]];
        let ok = p
            .iter()
            .zip(&bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi);
        if ok {
            counts[locate(p)] += 1;
            inside += 1;
        } else {
            outside += 1;
        }
    }
    if inside == 0 {
        return Err(Error::Data(
            "no samples fall inside the histogram bounds".into(),
        ));
    }
    let masses = counts.iter().map(|&c| c as f64 / inside as f64).collect();
    Ok(Histogram2D {
        binning,
        dims,
        bounds,
        centers,
        masses,
        in_bounds: inside,
        out_of_bounds: outside,
    })
}

impl Histogram2D {
    pub fn out_of_bounds_fraction(&self) -> f64 {
        self.out_of_bounds as f64 / (self.in_bounds + self.out_of_bounds) as f64
    }

    /// `bin_cx,bin_cy,mass`, one row per bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_cx,bin_cy,mass\n");
        for (c, m) in self.centers.iter().zip(&self.masses) {
            s.push_str(&format!("{},{},{}\n", c[0], c[1], m));
        }
        s
    }

    fn matches(&self, other: &Self) -> bool {
        self.binning == other.binning && self.dims == other.dims && self.bounds == other.bounds
    }
}

/// Total variation distance `0.5 sum |p - q|` of matched histograms.
pub fn tv_distance(h1: &Histogram2D, h2: &Histogram2D) -> Result<f64> {
    if !h1.matches(h2) {
        return Err(Error::Usage(
            "histograms differ in binning, projection or bounds".into(),
        ));
    }
    let s: f64 = h1
        .masses
        .iter()
        .zip(&h2.masses)
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok((0.5 * s).min(1.0))
}

/// `sqrt(sum |v_hat - v|^2 / sum |v|^2)` over `points`.
pub fn velocity_error<F: DriftField + ?Sized>(
    learned: &F,
    truth: &SystemSpec,
    points: ArrayView2<f64>,
) -> Result<f64> {
    let v_hat = learned.drift_batch(points)?;
    let v = truth.drift_batch(points)?;
    let den: f64 = v.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(Error::Numeric(
            "true drift vanishes on every evaluation point".into(),
        ));
    }
    let num: f64 = v_hat
        .iter()
        .zip(v.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((num / den).sqrt())
}

/// Discrete constraint system of the 1-D oracle on `M` grid points:
/// central-difference residual rows at interior points and `v = D s` at
/// both ends.
pub fn oracle_system(
    s: &[f64],
    s_prime: &[f64],
    diffusion: f64,
    h: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = s.len();
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    a[(0, 0)] = 1.0;
    b[0] = diffusion * s[0];
    a[(m - 1, m - 1)] = 1.0;
    b[m - 1] = diffusion * s[m - 1];
    for j in 1..m - 1 {
        a[(j, j)] = s[j];
        a[(j, j + 1)] = 0.5 / h;
        a[(j, j - 1)] = -0.5 / h;
        b[j] = diffusion * (s[j] * s[j] + s_prime[j]);
    }
    (a, b)
}

/// Minimum-norm velocity on a uniform grid over `[lo, hi]` satisfying the
/// discrete constraints. Null directions of the constraint matrix are set to
/// zero; an inconsistent system is an error.
pub fn min_norm_oracle_1d(
    s: &[f64],
    s_prime: &[f64],
    diffusion: f64,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>> {
    let m = s.len();
    if m < 50 || s_prime.len() != m {
        return Err(Error::Usage(format!(
            "oracle needs matching s and s' on at least 50 points (got {m} and {})",
            s_prime.len()
        )));
    }
    if !(hi > lo) || s.iter().chain(s_prime).any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "oracle inputs must be finite with lo < hi".into(),
        ));
    }
    let h = (hi - lo) / (m - 1) as f64;
    let (a, b) = oracle_system(s, s_prime, diffusion, h);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * m as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&x| x > tol).count();
    let v = svd
        .solve(&b, tol)
        .map_err(|e| Error::Numeric(format!("oracle factorization failed: {e}")))?;
    let res = (&a * &v - &b).amax();
    let scale = b.amax().max(1.0);
    if res > 1e-8 * scale {
        return Err(Error::Numeric(format!(
            "oracle constraints are inconsistent: rank {rank} of {m}, residual {res:.3e}"
        )));
    }
    Ok(v.iter().cloned().collect())
}

/// Uniform grid of `m` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64)
        .collect()
}

/// Settings shared by the reference and learned simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub sim: SimConfig,
    /// Seed of the learned-dynamics run; the reference seed when absent.
    #[serde(default)]
    pub learned_seed: Option<u64>,
    pub projections: Vec<[usize; 2]>,
    pub binning: Binning,
    /// Held-out reference states used for the velocity error.
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub dims: [usize; 2],
    pub tv_distance: f64,
    pub out_of_bounds_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub projections: Vec<ProjectionReport>,
    pub velocity_error: f64,
    pub residual_rms: Option<f64>,
    /// Fraction of learned trajectories that left the bounded region.
    pub divergence_fraction: f64,
    pub metadata: serde_json::Value,
}

/// Histograms of the reference and learned runs, for export.
#[derive(Debug, Clone)]
pub struct EvalHistograms {
    pub reference: Vec<Histogram2D>,
    pub learned: Vec<Histogram2D>,
}

/// Compares the invariant measure of `learned` against `truth`. Both runs
/// use `cfg.sim`, differing only in drift (and seed when `learned_seed` is
/// set). Histogram bounds come from the reference run.
pub fn evaluate_drift<F: DriftField + ?Sized>(
    learned: &F,
    truth: &SystemSpec,
    cfg: &EvalConfig,
) -> Result<(EvalReport, EvalHistograms)> {
    evaluate_inner(learned, truth, cfg).map(|(r, h, _)| (r, h))
}

fn evaluate_inner<F: DriftField + ?Sized>(
    learned: &F,
    truth: &SystemSpec,
    cfg: &EvalConfig,
) -> Result<(EvalReport, EvalHistograms, Array2<f64>)> {
    truth.validate()?;
    if learned.dim() != truth.dim() {
        return Err(Error::Compatibility(format!(
            "learned drift is {}-dimensional, system is {}-dimensional",
            learned.dim(),
            truth.dim()
        )));
    }
    let reference = simulate_ensemble(truth, truth.diffusion, &cfg.sim)?;
    if reference.divergence_fraction() > 0.0 {
        return Err(Error::Divergence {
            step: 0,
            reason: "reference simulation diverged".into(),
        });
    }
    let mut lcfg = cfg.sim.clone();
    if let Some(seed) = cfg.learned_seed {
        lcfg.seed = seed;
    }
    let learned_run = simulate_ensemble(learned, truth.diffusion, &lcfg)?;
    let ref_pts = reference.concat(truth.dim());
    let learned_pts = learned_run.concat(truth.dim());

    let mut projections = Vec::new();
    let mut hists = EvalHistograms {
        reference: Vec::new(),
        learned: Vec::new(),
    };
    for &dims in &cfg.projections {
        let href = histogram2d(ref_pts.view(), dims, cfg.binning, None)?;
        let hl = match histogram2d(learned_pts.view(), dims, cfg.binning, Some(href.bounds)) {
            Ok(h) => Some(h),
            Err(Error::Data(_)) => None,
            Err(e) => return Err(e),
        };
        let (tv, oob) = match &hl {
            Some(h) => (tv_distance(&href, h)?, h.out_of_bounds_fraction()),
            None => (1.0, 1.0),
        };
        projections.push(ProjectionReport {
            dims,
            tv_distance: tv,
            out_of_bounds_fraction: oob,
        });
        hists.reference.push(href.clone());
        hists.learned.push(hl.unwrap_or(Histogram2D {
            masses: vec![0.0; href.masses.len()],
            in_bounds: 0,
            out_of_bounds: learned_pts.nrows(),
            ..href
        }));
    }
    let eval_pts = held_out(ref_pts.view(), cfg.n_eval);
    let velocity_error = velocity_error(learned, truth, eval_pts.view())?;
    let report = EvalReport {
        projections,
        velocity_error,
        residual_rms: None,
        divergence_fraction: learned_run.divergence_fraction(),
        metadata: serde_json::json!({
            "system": truth,
            "eval": cfg,
        }),
    };
    Ok((report, hists, eval_pts))
}

/// [`evaluate_drift`] for a trained velocity model, adding the residual RMS
/// on the held-out reference states.
pub fn evaluate_pipeline(
    vel: &VelocityModel,
    score: &ScoreModel,
    truth: &SystemSpec,
    cfg: &EvalConfig,
) -> Result<(EvalReport, EvalHistograms)> {
    let (mut report, hists, pts) = evaluate_inner(vel, truth, cfg)?;
    report.residual_rms = Some(full_residual_norm(score, vel, pts.view())?.rms);
    Ok((report, hists))
}

/// Evenly strided subset of at most `n` rows.
fn held_out(points: ArrayView2<f64>, n: usize) -> Array2<f64> {
    let total = points.nrows();
    if n == 0 || n >= total {
        return points.to_owned();
    }
    let idx: Vec<usize> = (0..n).map(|i| i * total / n).collect();
    points.select(Axis(0), &idx)
}

/// Histograms of a point cloud on each projection with shared default bounds.
pub fn histograms_of(
    points: &PointCloud,
    projections: &[[usize; 2]],
    binning: Binning,
) -> Result<Vec<Histogram2D>> {
    projections
        .iter()
        .map(|&dims| histogram2d(points.points.view(), dims, binning, None))
        .collect()
}
