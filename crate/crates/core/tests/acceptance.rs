//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! ```text
//! cargo test --release --test acceptance            # everything
//! cargo test --release --test acceptance -- c2 c8   # a subset
//! ```

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bridgeforge::adjoint::{adjoint_expectation, AdjointSystem};
use bridgeforge::bridge::{
    endpoint_stats, mean_radius_residual, sample_bridge, score_error_report, EndpointHandling, ScoreFunction,
};
use bridgeforge::cli::RunConfig;
use bridgeforge::integrator::TimeGrid;
use bridgeforge::models::{ModelRegistry, ModelSpec, SdeModel};
use bridgeforge::training::{train, EndpointSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn preset(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name);
    RunConfig::load(&path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .config
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------
// 1. adjoint coefficients

const FD_STEP: f64 = 1e-4;

fn fd_partial<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let (mut up, mut dn) = (x.to_vec(), x.to_vec());
    up[i] += FD_STEP;
    dn[i] -= FD_STEP;
    (f(&up) - f(&dn)) / (2.0 * FD_STEP)
}

fn fd_second<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, j: usize) -> f64 {
    let h = 1e-3;
    let at = |di: f64, dj: f64| {
        let mut p = x.to_vec();
        p[i] += di;
        p[j] += dj;
        f(&p)
    };
    (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h)
}

/// `α = div Σ − f` and `c = ½ Σ_ij ∂_i∂_j Σ_ij − div f` from finite differences
/// of `f` and `Σ` at the reflected time.
fn fd_adjoint(model: &dyn SdeModel, r: f64, x: &[f64]) -> (Vec<f64>, f64) {
    let d = model.dim();
    let f = model.drift(r, x);
    let mut alpha = vec![0.0; d];
    for (i, a) in alpha.iter_mut().enumerate() {
        let div: f64 = (0..d).map(|j| fd_partial(|p| model.sigma_sq(r, p)[(i, j)], x, j)).sum();
        *a = div - f[i];
    }
    let mut hess = 0.0;
    for i in 0..d {
        for j in 0..d {
            hess += fd_second(|p| model.sigma_sq(r, p)[(i, j)], x, i, j);
        }
    }
    let div_f: f64 = (0..d).map(|i| fd_partial(|p| model.drift(r, p)[i], x, i)).sum();
    (alpha, 0.5 * hess - div_f)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn coefficient_table() -> (Vec<String>, f64, bool) {
    let registry = ModelRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let (t0, horizon) = (0.0, 1.5);
    for name in registry.names() {
        let model = registry.build(name).unwrap();
        let adj = AdjointSystem::new(model.clone(), t0, horizon).unwrap();
        for _ in 0..100 {
            let s = rng.gen_range(t0..horizon);
            let x: Vec<f64> = (0..model.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r = if model.time_homogeneous() { t0 } else { horizon + t0 - s };
            let (alpha_fd, c_fd) = fd_adjoint(model.as_ref(), r, &x);
            let alpha = adj.alpha(s, &x);
            let c = adj.c(s, &x);
            for (a, b) in alpha.iter().zip(&alpha_fd) {
                worst = worst.max(rel_err(*a, *b));
            }
            worst = worst.max(rel_err(c, c_fd));
            rows.push(format!("{name},{s},{x:?},{alpha:?},{c}"));
        }
    }
    let ou = registry.build("ou").unwrap();
    let adj = AdjointSystem::new(ou, 0.0, 1.0).unwrap();
    let mut exact = true;
    for _ in 0..100 {
        let s = rng.gen_range(0.0..1.0);
        let x = [rng.gen_range(-5.0..5.0)];
        exact &= adj.alpha(s, &x) == x.to_vec() && adj.c(s, &x) == 1.0;
    }
    (rows, worst, exact)
}

fn c1() -> Verdict {
    let (_, worst, exact) = coefficient_table();
    verdict(
        exact && worst <= 1e-4,
        format!("OU α = x and c = 1 exactly: {exact}; worst finite-difference rel. error {worst:.2e} (≤ 1e-4)"),
    )
}

// ---------------------------------------------------------------------------
// 2. weighted adjoint expectation

fn c2() -> Verdict {
    let model = ModelRegistry::builtin().build("ou").unwrap();
    let adj = AdjointSystem::new(model, 0.0, 1.0).unwrap();
    let grid = TimeGrid::from_zero(1.0, 200).unwrap();
    let e = std::f64::consts::E;
    let one = adjoint_expectation(&adj, &[1.0], &grid, |_| 1.0, 100_000, 1).unwrap();
    let first = adjoint_expectation(&adj, &[1.0], &grid, |x| x[0], 100_000, 2).unwrap();
    let z = (first.estimate - e * e) / first.std_error;
    let ok_one = (one.estimate - e).abs() <= 1e-6;
    let ok_first = z.abs() <= 4.0;
    verdict(
        ok_one && ok_first,
        format!(
            "g≡1: {:.9} vs e, |Δ| = {:.1e} (≤ 1e-6); g=x: {:.5} ± {:.5} vs e², z = {z:.2} (|z| ≤ 4)",
            one.estimate,
            (one.estimate - e).abs(),
            first.estimate,
            first.std_error
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. bridges driven by the exact score

fn c3() -> Verdict {
    let grid = TimeGrid::from_zero(1.0, 100).unwrap();
    let bm_spec = ModelSpec::Brownian { sigma: 1.0, dim: 1 };
    let bm = bm_spec.build().unwrap();
    let score = ScoreFunction::exact(&bm_spec, 1.0, vec![0.0]).unwrap();
    let batch = sample_bridge(bm.as_ref(), &score, &[0.0], &grid, 10_000, 3, EndpointHandling::Free).unwrap();
    let mid: Vec<f64> = (0..batch.n_paths()).map(|p| batch.state(p, 50)[0]).collect();
    let m = mean(&mid);
    let var = mid.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (mid.len() - 1) as f64;
    let ok_var = (var - 0.25).abs() <= 0.1 * 0.25;

    let ou_spec = ModelSpec::Ou {
        theta: 1.0,
        sigma: 1.0,
        dim: 1,
    };
    let ou = ou_spec.build().unwrap();
    let score = ScoreFunction::exact(&ou_spec, 1.0, vec![1.0]).unwrap();
    let batch = sample_bridge(ou.as_ref(), &score, &[0.0], &grid, 1_000, 4, EndpointHandling::Free).unwrap();
    let err = endpoint_stats(&batch, 99, &[1.0], 0.3).mean_distance;
    verdict(
        ok_var && err <= 0.15,
        format!("Brownian bridge Var X(0.5) = {var:.4} (0.25 ± 10%); OU mean |X(t_99) − y| = {err:.4} (≤ 0.15)"),
    )
}

// ---------------------------------------------------------------------------
// 4 and 5. learned OU scores

struct SeedResult {
    mse: f64,
    loss_decreased: bool,
}

fn ou_learning_run(cfg: &RunConfig, seed: u64) -> SeedResult {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let tc = cfg.train_config().unwrap();
    let outcome = train(&tc).unwrap();
    let losses = outcome.losses();
    let q = losses.len() / 4;
    let first = mean(&losses[..q]);
    let last = mean(&losses[losses.len() - q..]);

    let y = tc.endpoint.fixed_endpoint().unwrap().to_vec();
    let x0 = cfg.start_points().unwrap()[0].clone();
    let grid = cfg.time_grid().unwrap();
    let model = cfg.model.build().unwrap();
    let exact = ScoreFunction::exact(&cfg.model, grid.horizon(), y).unwrap();
    let eval = cfg.evaluation.clone().unwrap_or_default();
    let states = sample_bridge(
        model.as_ref(),
        &exact,
        &x0,
        &grid,
        eval.n_paths,
        10_000 + seed,
        EndpointHandling::Free,
    )
    .unwrap();
    let net = ScoreFunction::network(outcome.network, None).unwrap();
    let report = score_error_report(&net, &exact, &states, eval.t_cutoff_fraction * grid.horizon()).unwrap();
    SeedResult {
        mse: report.time_averaged_mse,
        loss_decreased: last < first,
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn c4() -> Verdict {
    let cfg = preset("ou_fixed.json");
    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| ou_learning_run(&cfg, s)).collect();
    let mut mses: Vec<f64> = results.iter().map(|r| r.mse).collect();
    let listed = format!("{:.4?}", mses);
    let med = median(&mut mses);
    let decreased = results.iter().filter(|r| r.loss_decreased).count();
    verdict(
        med <= 0.1 && decreased == results.len(),
        format!(
            "median MSE {med:.4} (≤ 0.1) over seeds {listed}; final < first loss quartile on {decreased}/{}",
            results.len()
        ),
    )
}

fn ou_in_dim(base: &RunConfig, d: usize) -> RunConfig {
    let mut cfg = base.clone();
    cfg.model = ModelSpec::Ou {
        theta: 1.0,
        sigma: 1.0,
        dim: d,
    };
    let training = cfg.training.as_mut().unwrap();
    training.batch_size = 400;
    training.endpoint = EndpointSpec::Fixed { y: vec![1.0; d] };
    cfg.sampling.as_mut().unwrap().x0 = vec![vec![1.0; d]];
    cfg
}

fn c5() -> Verdict {
    let base = preset("ou_fixed.json");
    let mut parts = Vec::new();
    let mut ok = true;
    for d in [1, 2, 4] {
        let cfg = ou_in_dim(&base, d);
        let results: Vec<SeedResult> = SEEDS.iter().map(|&s| ou_learning_run(&cfg, s)).collect();
        let mut mses: Vec<f64> = results.iter().map(|r| r.mse).collect();
        let med = median(&mut mses);
        let decreased = results.iter().all(|r| r.loss_decreased);
        ok &= med <= 0.2 && decreased;
        parts.push(format!("d={d}: median {med:.4} (max {:.4})", mses[mses.len() - 1]));
    }
    verdict(ok, format!("{} (each ≤ 0.2, N = 400)", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 6. circle endpoint distribution

fn c6() -> Verdict {
    let cfg = preset("bm_circle.json");
    let tc = cfg.train_config().unwrap();
    let outcome = train(&tc).unwrap();
    let model = cfg.model.build().unwrap();
    let grid = cfg.time_grid().unwrap();
    let score = ScoreFunction::network(outcome.network, None).unwrap();
    let step = grid.steps() - 1;

    let origin = sample_bridge(
        model.as_ref(),
        &score,
        &[0.0, 0.0],
        &grid,
        200,
        61,
        EndpointHandling::Free,
    )
    .unwrap();
    let from_origin = mean_radius_residual(&origin, step, 3.0);

    let mut ring = Vec::new();
    for k in 0..20 {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / 20.0;
        let x0 = [5.0 * angle.cos(), 5.0 * angle.sin()];
        let batch = sample_bridge(model.as_ref(), &score, &x0, &grid, 10, 62 + k, EndpointHandling::Free).unwrap();
        ring.push(mean_radius_residual(&batch, step, 3.0));
    }
    let from_ring = mean(&ring);
    verdict(
        from_origin <= 0.3 && from_ring <= 0.3,
        format!(
            "mean | ‖X(t_99)‖ − 3 |: {from_origin:.4} from the origin, {from_ring:.4} from the radius-5 circle (≤ 0.3)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. cell model

fn c7() -> Verdict {
    let cfg = preset("cell.json");
    let tc = cfg.train_config().unwrap();
    let outcome = train(&tc).unwrap();
    let model = cfg.model.build().unwrap();
    let grid = cfg.time_grid().unwrap();
    let y = tc.endpoint.fixed_endpoint().unwrap().to_vec();
    let score = ScoreFunction::network(outcome.network, Some(y.clone())).unwrap();
    let x0 = cfg.start_points().unwrap()[0].clone();
    let batch = sample_bridge(model.as_ref(), &score, &x0, &grid, 200, 71, EndpointHandling::Free).unwrap();
    let stats = endpoint_stats(&batch, grid.steps() - 1, &y, 0.3);
    verdict(
        stats.hit_fraction >= 0.8,
        format!(
            "{:.1}% of 200 endpoints within 0.3 of (1.5, 0.2) (≥ 80%), mean distance {:.4}",
            100.0 * stats.hit_fraction,
            stats.mean_distance
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. determinism across worker counts

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_bridgeforge"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

const OU_EXACT_BRIDGE: &str = r#"{
  "model": {"kind": "ou", "theta": 1.0, "sigma": 1.0, "dim": 1},
  "grid": {"horizon": 1.0, "steps": 100},
  "sampling": {"x0": [[0.0]], "n_paths": 1000, "y": [1.0], "score": "exact"}
}"#;

fn c8() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let ou_bridge = dir.path().join("ou_exact_bridge.json");
    std::fs::write(&ou_bridge, OU_EXACT_BRIDGE).unwrap();
    let runs: [(&str, PathBuf, &str); 3] = [
        (
            "adjoint-check",
            presets.join("ou_adjoint_check.json"),
            "adjoint_check.csv",
        ),
        ("sample", presets.join("bm_exact_bridge.json"), "trajectories.csv"),
        ("sample", ou_bridge, "trajectories.csv"),
    ];
    let mut identical = 0;
    let mut all_ran = true;
    for (k, (cmd, cfg, artifact)) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for workers in ["1", "4", "4"] {
            let out = dir.path().join(format!("{k}-{workers}-{}", outputs.len()));
            all_ran &= cli(&[
                cmd,
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--workers",
                workers,
            ]);
            outputs.push(std::fs::read(out.join(artifact)).unwrap_or_default());
        }
        if !outputs[0].is_empty() && outputs.iter().all(|o| *o == outputs[0]) {
            identical += 1;
        }
    }

    let tables: Vec<Vec<String>> = [1, 4]
        .iter()
        .map(|&n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| coefficient_table().0)
        })
        .collect();
    let coefficients_identical = tables[0] == tables[1];
    verdict(
        all_ran && identical == runs.len() && coefficients_identical,
        format!(
            "{identical}/{} CLI artifacts bitwise identical for --workers 1, 4, 4; coefficient table identical: {coefficients_identical}",
            runs.len()
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, &'static str, fn() -> Verdict, Option<Duration>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("c1", "adjoint coefficients", c1, Some(Duration::from_secs(5))),
        ("c2", "adjoint expectation identity", c2, Some(Duration::from_secs(30))),
        ("c3", "exact-score bridges", c3, Some(Duration::from_secs(30))),
        ("c4", "OU score learning", c4, Some(Duration::from_secs(600))),
        ("c5", "dimension sweep", c5, None),
        ("c6", "circle conditioning", c6, Some(Duration::from_secs(900))),
        ("c7", "cell model", c7, Some(Duration::from_secs(900))),
        ("c8", "determinism", c8, None),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, run, budget) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = budget.map_or(true, |b| elapsed < b);
        let timing = match budget {
            Some(b) => format!("{:.1} s < {} s", elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.1} s", elapsed.as_secs_f64()),
        };
        let passed = v.passed && in_time;
        if !passed {
            failures += 1;
        }
        println!(
            "{} {id} {name}: {} [{timing}]",
            if passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
