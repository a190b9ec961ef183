use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{missing, MetricRequest, RunConfig, ScoreSource};
use crate::adjoint::{closed_form_expectation, weighted_terminal_mean, AdjointSystem};
use crate::bridge::{
    endpoint_stats, mean_radius_residual, sample_bridge, score_error_report, EndpointHandling, ScoreFunction,
};
use crate::error::{Error, Result};
use crate::integrator::noise::SeedSequence;
use crate::integrator::{EulerMaruyama, TimeGrid};
use crate::scorenet::ScoreNetwork;
use crate::training::{train_with_progress, EndpointDistribution, EndpointSpec};

/// Artifacts written by a command and, for checks, the reason it failed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub failure: Option<String>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let tc = cfg.train_config()?;
    let every = (tc.iterations / 10).max(1);
    let outcome = train_with_progress(&tc, |e| {
        if (e.iteration + 1) % every == 0 || e.iteration + 1 == tc.iterations {
            eprintln!("iteration {:>6}  loss {:.6}", e.iteration + 1, e.loss);
        }
    })?;
    let checkpoint = out_dir.join("checkpoint.json");
    outcome.network.save(&checkpoint)?;
    let log_path = out_dir.join("training_log.csv");
    let mut log = create(&log_path)?;
    outcome.write_log_csv(&mut log)?;
    log.flush()?;
    if let Some(last) = outcome.log.last() {
        println!("trained {} iterations, final loss {:.6}", tc.iterations, last.loss);
    }
    Ok(Outcome {
        artifacts: vec![checkpoint, log_path],
        failure: None,
    })
}

fn load_network(cfg: &RunConfig, path: &Path) -> Result<ScoreNetwork> {
    let net = ScoreNetwork::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    if net.state_dim() != cfg.model.dim() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has state dimension {} but the model has {}",
            net.state_dim(),
            cfg.model.dim()
        )));
    }
    if net.config().horizon != cfg.grid.horizon {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained for horizon {} but the config uses {}",
            net.config().horizon,
            cfg.grid.horizon
        )));
    }
    Ok(net)
}

fn resolve_score(cfg: &RunConfig, checkpoint: &Path) -> Result<ScoreFunction> {
    let source = cfg.sampling.as_ref().map(|s| s.score).unwrap_or_default();
    let target = cfg.target_endpoint();
    match source {
        ScoreSource::Exact => {
            let y = target.ok_or_else(|| Error::invalid("sampling.y", "exact scores need a fixed endpoint"))?;
            ScoreFunction::exact(&cfg.model, cfg.grid.horizon, y)
        }
        ScoreSource::Network => ScoreFunction::network(load_network(cfg, checkpoint)?, target),
    }
}

fn handling(cfg: &RunConfig) -> EndpointHandling {
    cfg.sampling.as_ref().map(|s| s.endpoint_handling).unwrap_or_default()
}

pub fn sample(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> Result<Outcome> {
    let sampling = cfg.sampling.as_ref().ok_or_else(|| missing("sampling"))?;
    let score = resolve_score(cfg, checkpoint)?;
    let model = cfg.model.build()?;
    let grid = cfg.time_grid()?;
    let starts = cfg.start_points()?;
    let path = out_dir.join("trajectories.csv");
    let mut out = create(&path)?;
    let mut seeds = SeedSequence::new(cfg.seed);
    for (k, x0) in starts.iter().enumerate() {
        let batch = sample_bridge(
            model.as_ref(),
            &score,
            x0,
            &grid,
            sampling.n_paths,
            seeds.next_seed(),
            sampling.endpoint_handling,
        )?;
        batch.write_csv_offset(&mut out, k * sampling.n_paths, k == 0)?;
    }
    out.flush()?;
    println!(
        "sampled {} paths from {} start point(s)",
        starts.len() * sampling.n_paths,
        starts.len()
    );
    Ok(Outcome {
        artifacts: vec![path],
        failure: None,
    })
}

pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> Result<Outcome> {
    let eval = cfg.evaluation.clone().unwrap_or_default();
    let score = resolve_score(cfg, checkpoint)?;
    let model = cfg.model.build()?;
    let grid = cfg.time_grid()?;
    let starts = cfg.start_points()?;
    let target = cfg.target_endpoint();
    let mut seeds = SeedSequence::new(cfg.seed);
    let mut artifacts = Vec::new();
    let mut metrics = serde_json::Map::new();

    let exact = match (eval.metrics, &target) {
        (MetricRequest::Endpoint, _) => None,
        (MetricRequest::ScoreError, None) => {
            return Err(Error::invalid("sampling.y", "score error needs a fixed endpoint"));
        }
        (MetricRequest::ScoreError, Some(y)) => Some(ScoreFunction::exact(&cfg.model, grid.horizon(), y.clone())?),
        (MetricRequest::Auto, Some(y)) => ScoreFunction::exact(&cfg.model, grid.horizon(), y.clone()).ok(),
        (MetricRequest::Auto, None) => None,
    };
    let exact_seed = seeds.next_seed();
    if let Some(exact) = exact {
        let states = sample_bridge(
            model.as_ref(),
            &exact,
            &starts[0],
            &grid,
            eval.n_paths,
            exact_seed,
            EndpointHandling::Free,
        )?;
        let report = score_error_report(&score, &exact, &states, eval.t_cutoff_fraction * grid.horizon())?;
        let path = out_dir.join("score_mse.csv");
        let mut out = create(&path)?;
        report.write_csv(&mut out)?;
        out.flush()?;
        artifacts.push(path);
        println!("time-averaged score MSE {:.6}", report.time_averaged_mse);
        metrics.insert("score_error".into(), report.summary_json());
    }

    if eval.metrics != MetricRequest::ScoreError {
        let n_paths = cfg.sampling.as_ref().map(|s| s.n_paths).unwrap_or(eval.n_paths);
        let step = grid.steps() - 1;
        let circle = match cfg.training.as_ref().map(|t| &t.endpoint) {
            Some(EndpointSpec::Distribution {
                distribution: EndpointDistribution::Circle { radius },
            }) => Some(*radius),
            _ => None,
        };
        let mut rows = Vec::new();
        for x0 in &starts {
            let batch = sample_bridge(
                model.as_ref(),
                &score,
                x0,
                &grid,
                n_paths,
                seeds.next_seed(),
                handling(cfg),
            )?;
            if let Some(radius) = circle {
                let residual = mean_radius_residual(&batch, step, radius);
                println!("x0 {x0:?}: mean radius residual {residual:.4}");
                rows.push(json!({"x0": x0, "step": step, "radius": radius, "mean_radius_residual": residual}));
            } else if let Some(y) = &target {
                let stats = endpoint_stats(&batch, step, y, eval.hit_radius);
                println!(
                    "x0 {x0:?}: mean distance {:.4}, hit fraction {:.3}",
                    stats.mean_distance, stats.hit_fraction
                );
                let mut row = serde_json::to_value(stats)?;
                row["x0"] = json!(x0);
                rows.push(row);
            }
        }
        metrics.insert("endpoints".into(), rows.into());
    }

    let path = out_dir.join("metrics.json");
    write_json(&path, &metrics)?;
    artifacts.push(path);
    Ok(Outcome {
        artifacts,
        failure: None,
    })
}

#[derive(Debug, Clone, Serialize)]
struct CheckRow {
    functional: crate::adjoint::Functional,
    estimate: f64,
    std_error: f64,
    closed_form: f64,
    z_score: f64,
    passed: bool,
}

/// Absolute tolerance when the estimator has zero sample variance.
const DETERMINISTIC_TOLERANCE: f64 = 1e-6;

pub fn adjoint_check(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let block = cfg.adjoint_check.as_ref().ok_or_else(|| missing("adjoint_check"))?;
    let tau = cfg.grid.horizon - block.t0;
    // Fail fast on models without closed forms.
    for &f in &block.functionals {
        closed_form_expectation(&cfg.model, f, &block.y, tau)?;
    }
    let adj = AdjointSystem::new(cfg.model.build()?, block.t0, cfg.grid.horizon)?;
    let grid = TimeGrid::new(block.t0, cfg.grid.horizon, cfg.grid.steps)?;
    let batch = adj.simulate(&EulerMaruyama::default(), &block.y, &grid, block.n_paths, cfg.seed)?;

    let mut rows = Vec::new();
    for &f in &block.functionals {
        let est = weighted_terminal_mean(&batch, |x| f.eval(x));
        let closed_form = closed_form_expectation(&cfg.model, f, &block.y, tau)?;
        let diff = est.estimate - closed_form;
        let (z_score, passed) = if est.std_error > 0.0 {
            let z = diff / est.std_error;
            (z, z.abs() <= block.z_threshold)
        } else {
            (0.0, diff.abs() <= DETERMINISTIC_TOLERANCE)
        };
        println!(
            "{:<26} estimate {:>14.8} ± {:<12.3e} closed form {:>14.8}  z {:>7.3}  {}",
            format!("{f:?}"),
            est.estimate,
            est.std_error,
            closed_form,
            z_score,
            if passed { "ok" } else { "FAILED" }
        );
        rows.push(CheckRow {
            functional: f,
            estimate: est.estimate,
            std_error: est.std_error,
            closed_form,
            z_score,
            passed,
        });
    }

    let path = out_dir.join("adjoint_check.csv");
    let mut out = create(&path)?;
    writeln!(out, "functional,estimate,std_error,closed_form,z_score,passed")?;
    for r in &rows {
        let name = serde_json::to_value(r.functional)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            name.as_str().unwrap_or_default(),
            r.estimate,
            r.std_error,
            r.closed_form,
            r.z_score,
            r.passed
        )?;
    }
    out.flush()?;

    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{:?}", r.functional))
        .collect();
    Ok(Outcome {
        artifacts: vec![path],
        failure: (!failed.is_empty()).then(|| format!("adjoint identity check failed for {}", failed.join(", "))),
    })
}
