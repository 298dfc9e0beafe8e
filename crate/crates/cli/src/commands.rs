//! Subcommand bodies. Each stage reads its inputs, computes, then writes its
//! outputs atomically; the checkpoint is written last so its presence marks a
//! completed stage.

use std::path::{Path, PathBuf};

use imsm::checkpoint::{Checkpoint, Metadata, VelocityOutcome};
use imsm::data::{sidecar_path, write_atomic, PointCloud};
use imsm::dynamics::generate_dataset;
use imsm::evaluation::{evaluate_drift, evaluate_pipeline, EvalHistograms, EvalReport};
use imsm::rng::{stream_rng, streams};
use imsm::score::{
    annealed_langevin_sample, build_schedule, default_langevin_eps, train_score, ScoreModel,
};
use imsm::velocity::{
    train_velocity, train_velocity_pinn, TrainLog, VelocityModel, VelocityProblem,
};
use imsm::{Error, Result};
use log::info;
use serde_json::json;

use crate::config::{Layout, LoadedConfig, RunConfig};

/// Version string stamped into every artifact.
pub fn version() -> String {
    match option_env!("IMSM_GIT_DESCRIBE") {
        Some(g) => format!("imsm {g}"),
        None => format!("imsm v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub struct Ctx {
    pub cfg: LoadedConfig,
    pub layout: Layout,
    pub digest: String,
    pub baseline_pinn: bool,
}

impl Ctx {
    pub fn new(cfg: LoadedConfig, out: &Path, baseline_pinn: bool) -> Self {
        let layout = Layout::new(&cfg.run.paths, out);
        let digest = cfg.run.digest();
        Self {
            cfg,
            layout,
            digest,
            baseline_pinn,
        }
    }

    fn run(&self) -> &RunConfig {
        &self.cfg.run
    }

    fn metadata(&self, seed: u64) -> Metadata {
        Metadata {
            seed,
            config_digest: self.digest.clone(),
            software_version: version(),
            diffusion: Some(self.run().system.diffusion),
        }
    }

    fn stamp(&self, extra: serde_json::Value) -> serde_json::Value {
        let mut v = json!({ "config_digest": self.digest, "software_version": version() });
        if let (Some(m), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
            m.extend(e);
        }
        v
    }

    /// Writes `text` and a `.meta.json` sidecar next to it.
    fn write_with_sidecar(&self, path: &Path, text: &str, extra: serde_json::Value) -> Result<()> {
        write_atomic(path, text.as_bytes())?;
        let meta = serde_json::to_string_pretty(&self.stamp(extra)).expect("json");
        write_atomic(&sidecar_path(path), meta.as_bytes())
    }
}

pub fn simulate(ctx: &Ctx) -> Result<()> {
    let run = ctx.run();
    info!(
        "simulating {} (d = {}, {} trajectories)",
        run.system.name(),
        run.system.dim(),
        run.sim.n_trajectories
    );
    let pc = generate_dataset(&run.system, &run.sim)?;
    pc.save(&ctx.layout.dataset, ctx.stamp(json!({})))?;
    println!(
        "dataset: {} points in d = {} -> {}",
        pc.len(),
        pc.dim(),
        ctx.layout.dataset.display()
    );
    Ok(())
}

fn load_dataset(ctx: &Ctx) -> Result<PointCloud> {
    let pc = PointCloud::load(&ctx.layout.dataset)?;
    if pc.dim() != ctx.run().system.dim() {
        return Err(Error::Compatibility(format!(
            "dataset {} is {}-dimensional but the system is {}-dimensional",
            ctx.layout.dataset.display(),
            pc.dim(),
            ctx.run().system.dim()
        )));
    }
    Ok(pc)
}

pub fn schedule(ctx: &Ctx) -> Result<()> {
    let pc = load_dataset(ctx)?;
    let s = ctx.run().score()?;
    let sched = build_schedule(&pc, s.sigma_min, s.fallback_levels)?;
    let doc = json!({
        "sigma1": sched.sigma_first(),
        "gamma": sched.gamma,
        "L": sched.levels(),
        "gamma_source": sched.gamma_source,
        "sigmas": sched.sigmas,
    });
    let path = ctx.layout.reports.join("schedule.json");
    let text = serde_json::to_string_pretty(&doc).expect("json") + "\n";
    ctx.write_with_sidecar(&path, &text, json!({}))?;
    println!("{}", schedule_line(&sched));
    Ok(())
}

fn schedule_line(s: &imsm::score::NoiseSchedule) -> String {
    format!(
        "schedule: sigma1 = {:.6}, gamma = {:.6}, L = {}, sigma_L = {:.6} ({:?})",
        s.sigma_first(),
        s.gamma,
        s.levels(),
        s.sigma_last(),
        s.gamma_source
    )
}

pub fn train_score_cmd(ctx: &Ctx) -> Result<()> {
    let pc = load_dataset(ctx)?;
    let cfg = ctx.run().score()?;
    let sched = build_schedule(&pc, cfg.sigma_min, cfg.fallback_levels)?;
    let line = schedule_line(&sched);
    info!("{line}");
    println!("{line}");
    let (model, losses) = train_score(&pc, cfg)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{},{}\n", i + 1, l));
    }
    let summary = json!({
        "sigma1": model.schedule.sigma_first(),
        "gamma": model.schedule.gamma,
        "L": model.schedule.levels(),
        "gamma_source": model.schedule.gamma_source,
    });
    ctx.write_with_sidecar(&ctx.layout.score_log, &log, json!({ "schedule": summary }))?;
    Checkpoint::from_score(&model, ctx.metadata(cfg.seed)).save(&ctx.layout.score)?;
    println!(
        "score: {} epochs, final loss {:.6} -> {}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        ctx.layout.score.display()
    );
    Ok(())
}

fn load_score(ctx: &Ctx) -> Result<ScoreModel> {
    Checkpoint::load(&ctx.layout.score)?.score_model()
}

pub fn sample_score(ctx: &Ctx) -> Result<()> {
    let model = load_score(ctx)?;
    let s = ctx.run().sampling()?;
    let eps = s.eps0.unwrap_or_else(|| default_langevin_eps(&model));
    let mut rng = stream_rng(s.seed, streams::LANGEVIN);
    let pc = annealed_langevin_sample(&model, s.n_samples, s.steps_per_level, eps, &mut rng)?;
    let path = ctx.layout.reports.join("samples.csv");
    ctx.write_with_sidecar(
        &path,
        &pc.to_csv(),
        json!({ "eps0": eps, "steps_per_level": s.steps_per_level }),
    )?;
    println!("samples: {} -> {}", pc.len(), path.display());
    Ok(())
}

fn velocity_problem(ctx: &Ctx) -> Result<VelocityProblem> {
    let pc = load_dataset(ctx)?;
    let score = load_score(ctx)?;
    let run = ctx.run();
    let block = run.velocity()?;
    let mask = run.known_mask();
    let known = mask.iter().any(|&m| m).then(|| run.system.clone());
    VelocityProblem::new(&pc, &score, run.system.diffusion, mask, known, &block.train)
}

fn save_velocity(
    ctx: &Ctx,
    vel: &VelocityModel,
    log: &TrainLog,
    pinn: bool,
    ck: &Path,
    log_path: &Path,
) -> Result<()> {
    let extra = json!({
        "termination": log.termination.as_str(),
        "final_residual_rms": log.final_residual.rms,
        "final_residual_l2": log.final_residual.l2,
        "lambda": log.lambda,
        "baseline_pinn": pinn,
    });
    ctx.write_with_sidecar(log_path, &log.to_csv(), extra)?;
    let outcome = VelocityOutcome {
        lambda: log.lambda,
        termination: log.termination,
        baseline_pinn: pinn,
    };
    Checkpoint::from_velocity(vel, outcome, ctx.metadata(ctx.run().velocity()?.train.seed)).save(ck)
}

pub fn train_velocity_cmd(ctx: &Ctx) -> Result<()> {
    let problem = velocity_problem(ctx)?;
    let cfg = &ctx.run().velocity()?.train;
    let (vel, log) = train_velocity(&problem, cfg)?;
    save_velocity(
        ctx,
        &vel,
        &log,
        false,
        &ctx.layout.velocity,
        &ctx.layout.velocity_log,
    )?;
    println!(
        "velocity: termination {}, residual rms {:.6} -> {}",
        log.termination.as_str(),
        log.final_residual.rms,
        ctx.layout.velocity.display()
    );
    if ctx.baseline_pinn {
        train_pinn(ctx, &problem)?;
    }
    Ok(())
}

fn train_pinn(ctx: &Ctx, problem: &VelocityProblem) -> Result<()> {
    let cfg = &ctx.run().velocity()?.train;
    let (vel, log) = train_velocity_pinn(problem, cfg)?;
    save_velocity(
        ctx,
        &vel,
        &log,
        true,
        &ctx.layout.velocity_pinn,
        &ctx.layout.velocity_pinn_log,
    )?;
    println!(
        "baseline pinn: residual rms {:.6} -> {}",
        log.final_residual.rms,
        ctx.layout.velocity_pinn.display()
    );
    Ok(())
}

fn hist_path(dir: &Path, which: &str, dims: [usize; 2]) -> PathBuf {
    dir.join(format!("hist_{which}_{}_{}.csv", dims[0], dims[1]))
}

fn write_report(ctx: &Ctx, report: &EvalReport, hists: &EvalHistograms) -> Result<PathBuf> {
    let dir = &ctx.layout.reports;
    for (i, p) in report.projections.iter().enumerate() {
        write_atomic(
            &hist_path(dir, "reference", p.dims),
            hists.reference[i].to_csv().as_bytes(),
        )?;
        write_atomic(
            &hist_path(dir, "learned", p.dims),
            hists.learned[i].to_csv().as_bytes(),
        )?;
    }
    let doc = json!({
        "report": report,
        "config": ctx.run().to_json(),
        "metadata": {
            "config_digest": ctx.digest,
            "software_version": version(),
            "source": ctx.cfg.source.display().to_string(),
            "preset": ctx.cfg.preset,
        },
    });
    let path = dir.join("report.json");
    write_atomic(
        &path,
        (serde_json::to_string_pretty(&doc).expect("json") + "\n").as_bytes(),
    )?;
    Ok(path)
}

pub fn evaluate(ctx: &Ctx) -> Result<()> {
    let (vel, _) = Checkpoint::load(&ctx.layout.velocity)?.velocity_model()?;
    let run = ctx.run();
    let cfg = run.eval()?;
    let (report, hists) = if ctx.layout.score.exists() {
        evaluate_pipeline(&vel, &load_score(ctx)?, &run.system, cfg)?
    } else {
        evaluate_drift(&vel, &run.system, cfg)?
    };
    let path = write_report(ctx, &report, &hists)?;
    for p in &report.projections {
        println!(
            "tv[{},{}] = {:.6} (out of bounds {:.4})",
            p.dims[0], p.dims[1], p.tv_distance, p.out_of_bounds_fraction
        );
    }
    println!(
        "velocity error {:.6}, divergence fraction {:.4} -> {}",
        report.velocity_error,
        report.divergence_fraction,
        path.display()
    );
    Ok(())
}

/// Stages in order, each with the artifact that marks it complete.
pub fn plan(ctx: &Ctx) -> Vec<(&'static str, PathBuf, bool)> {
    let l = &ctx.layout;
    let mut stages = vec![
        ("simulate", l.dataset.clone()),
        ("train-score", l.score.clone()),
        ("train-velocity", l.velocity.clone()),
    ];
    if ctx.baseline_pinn {
        stages.push(("baseline-pinn", l.velocity_pinn.clone()));
    }
    stages.push(("evaluate", l.reports.join("report.json")));
    stages
        .into_iter()
        .map(|(n, p)| {
            let done = p.exists();
            (n, p, done)
        })
        .collect()
}

pub fn pipeline(ctx: &Ctx, dry_run: bool) -> Result<()> {
    let run = ctx.run();
    run.score()?;
    run.velocity()?;
    run.eval()?;
    let stages = plan(ctx);
    if dry_run {
        println!("config digest {}", ctx.digest);
        for (name, path, done) in &stages {
            let state = if *done { "done, skipped" } else { "pending" };
            println!("{name}: {} [{state}]", path.display());
        }
        return Ok(());
    }
    for (name, path, done) in stages {
        if done && name != "evaluate" {
            info!("{name}: reusing {}", path.display());
            continue;
        }
        info!("{name}: running");
        match name {
            "simulate" => simulate(ctx)?,
            "train-score" => train_score_cmd(ctx)?,
            "train-velocity" => {
                let problem = velocity_problem(ctx)?;
                let (vel, log) = train_velocity(&problem, &run.velocity()?.train)?;
                save_velocity(
                    ctx,
                    &vel,
                    &log,
                    false,
                    &ctx.layout.velocity,
                    &ctx.layout.velocity_log,
                )?;
                println!(
                    "velocity: termination {}, residual rms {:.6}",
                    log.termination.as_str(),
                    log.final_residual.rms
                );
            }
            "baseline-pinn" => train_pinn(ctx, &velocity_problem(ctx)?)?,
            _ => evaluate(ctx)?,
        }
    }
    Ok(())
}
