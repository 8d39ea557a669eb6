//! End-to-end acceptance checks. Runs without the test harness so every
//! criterion prints one line, then exits non-zero if any failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use jumpbsde::control::{martingale_test, MartingaleClaim};
use jumpbsde::driver;
use jumpbsde::oracle::{tree_certainty_equivalent, tree_drifts};
use jumpbsde::paths::retain_accepted;
use jumpbsde::solver::{norm_equivalence_check, LadderMode};
use jumpbsde::{
    a_priori_bounds, dp_value, evolve_price, evolve_wealth, optimal_strategy, r_process,
    simulate_paths, solve_bsde, solve_sequence, tree_bsde, value_function, ActionGrid,
    BsdeSolution, Claim, MarketSpec, RunConfig, StrategyPath, TimeGrid, TreeModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> RunConfig {
    let text = fs::read_to_string(configs_dir().join(name)).expect("read config");
    let cfg = RunConfig::from_json(&text).expect("parse config");
    cfg.validate().expect("valid config");
    cfg
}

/// Simulates, drops rejected paths and solves on the configured constraint.
fn solve_config(
    cfg: &RunConfig,
    sandwich: &mut Vec<(String, f64)>,
    tag: &str,
) -> Result<BsdeSolution, String> {
    let grid = cfg.time_grid().map_err(|e| e.to_string())?;
    let (bundle, prices) = bundle_for(&cfg.market, &grid, cfg.grid.paths, cfg.grid.seed)?;
    let sol = solve_bsde(
        &bundle,
        &prices,
        &cfg.market,
        &cfg.market.constraint,
        &cfg.solver.regression(),
    )
    .map_err(|e| e.to_string())?;
    sandwich.push((tag.to_string(), sol.diagnostics.max_bound_excess));
    Ok(sol)
}

fn bundle_for(
    spec: &MarketSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<(jumpbsde::PathBundle, jumpbsde::PricePaths), String> {
    let bundle = simulate_paths(spec, grid, paths, seed).map_err(|e| e.to_string())?;
    let prices = evolve_price(&bundle, spec).map_err(|e| e.to_string())?;
    Ok(retain_accepted(&bundle, &prices))
}

fn merton(sandwich: &mut Vec<(String, f64)>) -> Outcome {
    let cfg = load("merton.json");
    let m = &cfg.market;
    let theta = m.b.at(0) / m.sigma.at(0);
    let (alpha, horizon) = (m.alpha, m.horizon);
    let y_ref = -theta * theta * horizon / (2.0 * alpha);
    let v_ref = -(-theta * theta * horizon / alpha).exp();
    let pi_ref = theta / (alpha * m.sigma.at(0));

    let start = Instant::now();
    let sol = solve_config(&cfg, sandwich, "merton")?;
    let pi = optimal_strategy(&sol, m, &m.constraint).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();

    let y0 = sol.y0();
    let v0 = value_function(y0, 0.0, alpha).map_err(|e| e.to_string())?;
    let pi_err = pi
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |a, p| a.max((p - pi_ref).abs()));
    let ok =
        (y0 - y_ref).abs() <= 5e-3 && (v0 - v_ref).abs() <= 1e-2 && pi_err <= 1e-2 && secs <= 60.0;
    Ok((
        ok,
        format!(
            "Y0 {y0:.6} vs {y_ref:.6} (tol 5e-3), V0 {v0:.6} vs {v_ref:.6} (tol 1e-2), \
             max |pi - {pi_ref}| {pi_err:.2e} (tol 1e-2), {secs:.1}s (limit 60s)"
        ),
    ))
}

fn oracle_equivalence(
    sandwich: &mut Vec<(String, f64)>,
    norm_sols: &mut Vec<(String, BsdeSolution, f64)>,
) -> Outcome {
    let cfg = load("jump_put.json");
    let m = &cfg.market;
    let x0 = cfg.oracle.x0;
    let tree = TreeModel::new(m, 3).map_err(|e| e.to_string())?;
    let actions = ActionGrid::uniform(&m.constraint, 81).map_err(|e| e.to_string())?;
    let dp = dp_value(&tree, &actions, m.alpha, &m.claim, x0).map_err(|e| e.to_string())?;
    let tb = tree_bsde(&tree, &m.constraint, &m.claim).map_err(|e| e.to_string())?;
    let v_tree = value_function(tb.y0(), x0, m.alpha).map_err(|e| e.to_string())?;
    let identity = (dp.value - v_tree).abs();

    if cfg.grid.steps != 3 {
        return Err("MC run must match the 3-step tree".into());
    }
    let sol = solve_config(&cfg, sandwich, "jump_put")?;
    let mc_gap = (sol.y0() - tb.y0()).abs();
    let (y_tree, y_mc) = (tb.y0(), sol.y0());
    norm_sols.push(("jump_put".into(), sol, m.alpha));
    Ok((
        identity <= 1e-2 && mc_gap <= 1e-2,
        format!(
            "|dp - V(Y_tree)| = {identity:.2e} (tol 1e-2), |Y0_mc - Y0_tree| = {mc_gap:.2e} (tol 1e-2), \
             Y0_tree {y_tree:.6}, Y0_mc {y_mc:.6}"
        ),
    ))
}

fn ladders(sandwich: &mut Vec<(String, f64)>) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (file, mode) in [
        ("ladder_compact.json", LadderMode::CompactTruncation),
        ("ladder_half_line.json", LadderMode::ConstraintTruncation),
    ] {
        let cfg = load(file);
        if cfg.solver.mode != mode || cfg.solver.ladder.len() < 3 {
            return Err(format!("{file} must hold a three-level {mode:?} ladder"));
        }
        let grid = cfg.time_grid().map_err(|e| e.to_string())?;
        let (bundle, prices) = bundle_for(&cfg.market, &grid, cfg.grid.paths, cfg.grid.seed)?;
        let (sols, rep) = solve_sequence(
            mode,
            &cfg.solver.ladder,
            &bundle,
            &prices,
            &cfg.market,
            &cfg.solver.regression(),
        )
        .map_err(|e| e.to_string())?;
        for (s, l) in sols.iter().zip(&rep.levels) {
            sandwich.push((format!("{file} m={}", l.m), s.diagnostics.max_bound_excess));
        }
        let v_ok = match mode {
            LadderMode::CompactTruncation => true,
            LadderMode::ConstraintTruncation => rep.levels.windows(2).all(|w| w[1].v0 >= w[0].v0),
        };
        let here = rep.max_violation <= 1e-6
            && v_ok
            && rep.z_strictly_decreasing
            && rep.u_strictly_decreasing;
        ok &= here;
        let ys: Vec<String> = rep.levels.iter().map(|l| format!("{:.4}", l.y0)).collect();
        let zs: Vec<String> = rep
            .levels
            .iter()
            .map(|l| format!("{:.2e}", l.z_l2))
            .collect();
        let us: Vec<String> = rep
            .levels
            .iter()
            .map(|l| format!("{:.2e}", l.u_l2))
            .collect();
        detail.push(format!(
            "{mode:?}: violation {:.1e} (tol 1e-6), Y0 [{}], |dZ| [{}], |dU| [{}]{}",
            rep.max_violation,
            ys.join(", "),
            zs.join(", "),
            us.join(", "),
            if v_ok { "" } else { ", V not monotone" }
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn comparison(
    sandwich: &mut Vec<(String, f64)>,
    norm_sols: &mut Vec<(String, BsdeSolution, f64)>,
) -> Outcome {
    let mut cfg = load("jump_put.json");
    cfg.grid.steps = 20;
    let grid = cfg.time_grid().map_err(|e| e.to_string())?;
    let m = &cfg.market;
    let (bundle, prices) = bundle_for(m, &grid, cfg.grid.paths, cfg.grid.seed)?;
    let reg = cfg.solver.regression();
    let solve = |b: f64| {
        solve_bsde(
            &bundle,
            &prices,
            &m.with_claim(Claim::Constant { value: b }),
            &m.constraint,
            &reg,
        )
        .map_err(|e| e.to_string())
    };
    let y1 = solve(0.0)?;
    let y2 = solve(0.5)?;
    sandwich.push(("comparison B=0".into(), y1.diagnostics.max_bound_excess));
    sandwich.push(("comparison B=0.5".into(), y2.diagnostics.max_bound_excess));
    let mut worst = f64::NEG_INFINITY;
    for i in 0..=y1.steps() {
        for p in 0..y1.n_paths() {
            worst = worst.max(y1.y[i][p] - y2.y[i][p]);
        }
    }
    let shift = y2.y0() - y1.y0();
    let ok = worst <= 1e-3 && (shift - 0.5).abs() <= 1e-2;
    norm_sols.push(("comparison B=0.5".into(), y2, m.alpha));
    Ok((
        ok,
        format!(
            "max (Y1 - Y2) = {worst:.2e} (tol 1e-3), Y2_0 - Y1_0 = {shift:.6} (target 0.5 +- 1e-2)"
        ),
    ))
}

fn sweeps() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (k, file) in ["merton.json", "jump_put.json", "ladder_compact.json"]
        .iter()
        .enumerate()
    {
        let cfg = load(file);
        let m = &cfg.market;
        let c = &m.constraint;
        let marks = m.n_marks();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let pts: Vec<(f64, Vec<f64>)> = (0..10_000)
            .map(|_| {
                let z = rng.random_range(-6.0..6.0);
                let u = (0..marks).map(|_| rng.random_range(-3.0..3.0)).collect();
                (z, u)
            })
            .collect();
        let mut h1_bad = 0;
        let mut gamma_bad = 0;
        let mut lambda_bad = 0;
        for (n, (z, u)) in pts.iter().enumerate() {
            let t = n % cfg.grid.steps;
            let h1 = driver::check_h1(m, c, t, std::slice::from_ref(&(*z, u.clone())))
                .map_err(|e| e.to_string())?;
            h1_bad += h1.violations.len();
            let (z2, u2) = &pts[(n + 1) % pts.len()];
            let h = driver::h2_coefficients(t, *z, *z2, u, u2, m, c).map_err(|e| e.to_string())?;
            if h.gamma
                .iter()
                .any(|&g| !(g > -1.0 + h.delta_lower - 1e-12 && g < h.c_upper + 1e-12))
            {
                gamma_bad += 1;
            }
            let bound = driver::lambda_bound(m, t, c, *z, *z2).map_err(|e| e.to_string())?;
            if h.lambda.abs() > bound * (1.0 + 1e-12) + 1e-12 {
                lambda_bad += 1;
            }
        }
        ok &= h1_bad == 0 && gamma_bad == 0 && lambda_bad == 0;
        detail.push(format!(
            "{file}: H1 {h1_bad}, gamma {gamma_bad}, lambda {lambda_bad}"
        ));
    }
    Ok((
        ok,
        format!("violations in 10^4 points each: {}", detail.join("; ")),
    ))
}

fn norm_equivalence(sols: &[(String, BsdeSolution, f64)]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (tag, s, alpha) in sols {
        let r = norm_equivalence_check(s, *alpha);
        ok &= r.violations == 0 && r.checked > 0;
        detail.push(format!("{tag}: {} of {}", r.violations, r.checked));
    }
    Ok((ok, format!("violations: {}", detail.join("; "))))
}

fn dichotomy() -> Outcome {
    // exact drifts on the acceptance tree
    let cfg = load("jump_put.json");
    let m = &cfg.market;
    let tree = TreeModel::new(m, 3).map_err(|e| e.to_string())?;
    let ce =
        tree_certainty_equivalent(&tree, &m.constraint, &m.claim).map_err(|e| e.to_string())?;
    let opt = tree_drifts(&tree, &ce.y, |i, q| ce.pi[i][q]);
    let opt_err = opt.iter().flatten().fold(0.0f64, |a, d| a.max(d.abs()));
    let (lo, hi) = m.constraint.bounds().map_err(|e| e.to_string())?;
    let mut sub_max = f64::NEG_INFINITY;
    for k in 0..=10 {
        let a = lo + (hi - lo) * k as f64 / 10.0;
        let d = tree_drifts(&tree, &ce.y, |_, _| a);
        sub_max = sub_max.max(
            d.iter()
                .flatten()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
        );
    }
    let tree_ok = opt_err <= 1e-9 && sub_max <= 1e-9;

    // Monte Carlo on the Merton market, where theta != 0
    let cfg = load("merton.json");
    let m = &cfg.market;
    let grid = cfg.time_grid().map_err(|e| e.to_string())?;
    let (bundle, prices) = bundle_for(m, &grid, cfg.grid.paths, cfg.grid.seed)?;
    let reg = cfg.solver.regression();
    let sol = solve_bsde(&bundle, &prices, m, &m.constraint, &reg).map_err(|e| e.to_string())?;
    let pi = optimal_strategy(&sol, m, &m.constraint).map_err(|e| e.to_string())?;
    let w =
        evolve_wealth(&bundle, m, &sol.constraint, &pi.values, 0.0).map_err(|e| e.to_string())?;
    let r = r_process(&pi, &sol, m, &w).map_err(|e| e.to_string())?;
    let mart =
        martingale_test(&r, &sol, &reg, MartingaleClaim::Martingale).map_err(|e| e.to_string())?;

    let zero = StrategyPath::constant(0.0, sol.steps(), sol.n_paths(), &sol.constraint)
        .map_err(|e| e.to_string())?;
    let w0 =
        evolve_wealth(&bundle, m, &sol.constraint, &zero.values, 0.0).map_err(|e| e.to_string())?;
    let r0 = r_process(&zero, &sol, m, &w0).map_err(|e| e.to_string())?;
    let sup = martingale_test(&r0, &sol, &reg, MartingaleClaim::Supermartingale)
        .map_err(|e| e.to_string())?;
    let neg = sup.significantly_negative();
    let mc_ok = mart.passed() && sol.n_paths() >= 100_000 && neg == sup.steps.len();

    Ok((
        tree_ok && mc_ok,
        format!(
            "tree: max |drift at pi*| {opt_err:.1e}, max drift of 11 constants {sub_max:.1e} (tol 1e-9); \
             MC ({} paths): pi* inside band at {} of {} steps, pi = 0 significantly negative at {neg} of {} steps",
            sol.n_paths(),
            mart.steps.iter().filter(|s| s.pass).count(),
            mart.steps.len(),
            sup.steps.len()
        ),
    ))
}

fn run_cli(dir: &Path, args: &[&str], threads: Option<&str>) -> Result<i32, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jumpbsde"));
    cmd.args(args).arg("--out").arg(dir);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    out.status
        .code()
        .ok_or_else(|| "killed by signal".to_string())
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            let bytes = fs::read(e.path()).map_err(|e| e.to_string())?;
            Ok((e.file_name().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfgs = configs_dir();
    let runs = [
        ("simulate", "jump_put.json"),
        ("solve", "merton.json"),
        ("verify", "jump_put.json"),
        ("oracle", "jump_put.json"),
        ("value", "merton.json"),
        ("ladder", "ladder_half_line.json"),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (cmd, file) in runs {
        let config = cfgs.join(file);
        let config = config.to_str().unwrap();
        let args = [cmd, "--config", config, "--paths", "4000", "--steps", "3"];
        let mut outputs = Vec::new();
        let mut codes = Vec::new();
        for (k, threads) in [None, None, Some("1")].into_iter().enumerate() {
            let dir = tmp.path().join(format!("{cmd}-{k}"));
            codes.push(run_cli(&dir, &args, threads)?);
            outputs.push(read_dir_sorted(&dir)?);
        }
        let same =
            outputs.windows(2).all(|w| w[0] == w[1]) && codes.windows(2).all(|w| w[0] == w[1]);
        let written = outputs[0].iter().any(|(n, _)| n == "summary.json") && codes[0] != 2;
        ok &= same && written;
        detail.push(format!(
            "{cmd} {}",
            if same && written {
                "identical"
            } else {
                "differs"
            }
        ));
    }
    Ok((
        ok,
        format!(
            "three runs each (one single-threaded): {}",
            detail.join(", ")
        ),
    ))
}

fn main() {
    let mut sandwich: Vec<(String, f64)> = Vec::new();
    let mut norm_sols: Vec<(String, BsdeSolution, f64)> = Vec::new();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    results.push((1, "closed-form Merton", merton(&mut sandwich)));
    let c3 = oracle_equivalence(&mut sandwich, &mut norm_sols);
    let c4 = ladders(&mut sandwich);
    let c5 = comparison(&mut sandwich, &mut norm_sols);
    let c2: Outcome = {
        let bounds_ok = [
            "merton.json",
            "jump_put.json",
            "ladder_compact.json",
            "ladder_half_line.json",
        ]
        .iter()
        .all(|f| a_priori_bounds(&load(f).market).is_ok());
        let worst =
            sandwich.iter().cloned().fold(
                (String::new(), 0.0f64),
                |a, b| if b.1 > a.1 { b } else { a },
            );
        Ok((
            bounds_ok && !sandwich.is_empty() && worst.1 <= 0.02,
            format!(
                "max pre-clamp excess over {} runs {:.2e} (limit 0.02){}",
                sandwich.len(),
                worst.1,
                if worst.0.is_empty() {
                    String::new()
                } else {
                    format!(" at {}", worst.0)
                }
            ),
        ))
    };
    results.push((2, "a priori sandwich", c2));
    results.push((3, "oracle equivalence", c3));
    results.push((4, "monotone ladders", c4));
    results.push((5, "comparison", c5));
    results.push((6, "growth and increment sweeps", sweeps()));
    results.push((7, "norm equivalence", norm_equivalence(&norm_sols)));
    results.push((8, "supermartingale dichotomy", dichotomy()));
    results.push((9, "determinism", determinism()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, outcome) in &results {
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {n} ({name}): {} - {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
