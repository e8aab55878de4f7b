//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use care_cli::{cmd_run, compare_config, Comparison, RunArgs};
use care_core::engine::{run, GameRecord};
use care_core::game::{
    brute_force_optimum, check_potential_game_exhaustive, max_logit, potential, utility, GameInstance, JointAction,
    LogitParams,
};
use care_core::models::{fit_battery_params, reliability, remaining_worth, BatteryParams};
use care_core::scenario::{FailureSpec, ObstacleSpec, RobotConfig, TargetsConfig, WorldConfig};
use care_core::world::{Rect, TaskId};
use care_core::{ScenarioConfig, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn bundled(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(scenario_path(name)).expect("bundled scenario loads")
}

// Independent oracles, written out from the definitions.

fn oracle_potential(worth: &[f64], prob: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
    (0..worth.len())
        .map(|r| {
            let mut miss = 1.0;
            for (i, ai) in a.iter().enumerate() {
                if *ai == Some(r) {
                    miss *= 1.0 - prob[i][r];
                }
            }
            worth[r] * (1.0 - miss)
        })
        .sum()
}

fn oracle_optimum(worth: &[f64], prob: &[Vec<f64>]) -> f64 {
    let (n, m) = (prob.len(), worth.len());
    let mut best = f64::NEG_INFINITY;
    let mut a = vec![0usize; n];
    loop {
        let joint: Vec<Option<usize>> = a.iter().map(|&x| Some(x)).collect();
        best = best.max(oracle_potential(worth, prob, &joint));
        let mut k = 0;
        while k < n {
            a[k] += 1;
            if a[k] < m {
                break;
            }
            a[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
    }
}

fn poisson_pmf(lambda: f64, x: u32) -> f64 {
    let mut ln = -lambda + x as f64 * lambda.ln();
    for k in 2..=x {
        ln -= (k as f64).ln();
    }
    ln.exp()
}

fn truncated_worth(lambda: f64, xi: u32, cap: u32) -> f64 {
    ((xi + 1)..=cap).map(|x| (x - xi) as f64 * poisson_pmf(lambda, x)).sum()
}

fn random_instance(rng: &mut ChaCha8Rng, players: usize, actions: usize) -> GameInstance {
    let worth = (0..actions).map(|_| rng.random_range(0.5..32.0)).collect();
    let prob = (0..players).map(|_| (0..actions).map(|_| rng.random_range(0.05..0.99)).collect()).collect();
    let initial: JointAction = (0..players).map(|_| Some(rng.random_range(0..actions))).collect();
    GameInstance::new(
        (1..=players).collect(),
        (0..actions as u32).map(TaskId).collect(),
        worth,
        prob,
        LogitParams { cycles: 50, tau: 0.05 },
        initial,
    )
    .expect("valid instance")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut oracle_gap = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=4);
        let g = random_instance(&mut rng, n, m);
        worst = worst.max(check_potential_game_exhaustive(&g).max_residual);
        let a: JointAction = (0..n).map(|_| rng.random_range(0..=m)).map(|k| (k < m).then_some(k)).collect();
        oracle_gap = oracle_gap.max((potential(&g, &a) - oracle_potential(&g.worth, &g.prob, &a)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && oracle_gap <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("max residual {worst:.3e}, potential vs oracle {oracle_gap:.3e}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let g = random_instance(&mut rng, n, m);
        let a: JointAction = (0..n).map(|_| rng.random_range(0..=m)).map(|k| (k < m).then_some(k)).collect();
        let i = rng.random_range(0..n);
        let mut without = a.clone();
        without[i] = None;
        let marginal = oracle_potential(&g.worth, &g.prob, &a) - oracle_potential(&g.worth, &g.prob, &without);
        worst = worst.max((utility(&g, i, &a) - marginal).abs());
    }
    outcome(worst <= 1e-9, format!("max residual {worst:.3e} over 10000 samples"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut hits, mut monotone, mut brute_ok) = (0, 0, 0);
    for k in 0..200 {
        let g = random_instance(&mut rng, 3, 4);
        let out = max_logit(&g, 1000 + k).expect("max-logit runs");
        let (_, phi_opt) = brute_force_optimum(&g).expect("small game");
        let oracle = oracle_optimum(&g.worth, &g.prob);
        brute_ok += usize::from((phi_opt - oracle).abs() <= 1e-9);
        hits += usize::from((out.best_potential - phi_opt).abs() <= 1e-9);
        monotone += usize::from(out.best_potential >= out.trace[0].1);
    }
    let elapsed = start.elapsed();
    let rate = hits as f64 / 200.0;
    outcome(
        rate >= 0.95 && monotone == 200 && brute_ok == 200 && elapsed < Duration::from_secs(30),
        format!("optimal on {hits}/200 ({:.1}%), best >= initial on {monotone}/200, brute force agrees on {brute_ok}/200, {elapsed:.2?}", rate * 100.0),
    )
}

fn criterion_4() -> Outcome {
    let mut worst = (0.0f64, 0.0, 0);
    for lambda in 1..=32 {
        for xi in 0..=64u32 {
            let gap = (remaining_worth(lambda as f64, xi) - truncated_worth(lambda as f64, xi, 60)).abs();
            if gap > worst.0 {
                worst = (gap, lambda as f64, xi);
            }
        }
    }
    outcome(worst.0 <= 1e-9, format!("max deviation {:.3e} at lambda {}, xi {}", worst.0, worst.1, worst.2))
}

fn criterion_5() -> Outcome {
    let at_inflection = [(3.0e-3, 1400.0), (1.0e-2, 50.0), (7.3e-4, 2210.5)]
        .iter()
        .all(|&(rho0, rho1)| reliability(&BatteryParams::new(rho0, rho1).unwrap(), rho1) == 0.5);
    let fit = fit_battery_params(780.0, 0.9, 1560.0, 0.4).expect("fit");
    let e1 = (reliability(&fit, 780.0) - 0.9).abs();
    let e2 = (reliability(&fit, 1560.0) - 0.4).abs();
    let d0 = (fit.rho0 - 3.0e-3).abs() / 3.0e-3;
    let d1 = (fit.rho1 - 1400.0).abs() / 1400.0;
    outcome(
        at_inflection && e1 <= 1e-12 && e2 <= 1e-12 && d0 <= 0.15 && d1 <= 0.15,
        format!(
            "R(rho1) = 0.5: {at_inflection}, anchors off by {e1:.1e}/{e2:.1e}, rho0 {:.4e} ({:.1}%), rho1 {:.1} ({:.1}%)",
            fit.rho0,
            d0 * 100.0,
            fit.rho1,
            d1 * 100.0
        ),
    )
}

fn connected(width: usize, height: usize, blocked: &[bool]) -> bool {
    let Some(first) = blocked.iter().position(|b| !b) else {
        return false;
    };
    let mut seen = vec![false; blocked.len()];
    let mut queue = VecDeque::from([first]);
    seen[first] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        let mut next = Vec::with_capacity(4);
        if x > 0 {
            next.push(i - 1);
        }
        if x + 1 < width {
            next.push(i + 1);
        }
        if y > 0 {
            next.push(i - width);
        }
        if y + 1 < height {
            next.push(i + width);
        }
        for j in next {
            if !blocked[j] && !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == blocked.iter().filter(|b| !**b).count()
}

/// 50x50 world with ten 10x25 tasks, random obstacles and `N` robots placed
/// in distinct tasks.
fn random_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (50, 50);
    let tasks: Vec<Rect> =
        (0..2).flat_map(|row| (0..5).map(move |col| Rect::new(col * 10, row * 25, 10, 25))).collect();
    let n = rng.random_range(4..=10);
    let mut task_order: Vec<usize> = (0..tasks.len()).collect();
    for i in (1..task_order.len()).rev() {
        task_order.swap(i, rng.random_range(0..=i));
    }
    let starts: Vec<(usize, usize)> = task_order[..n].iter().map(|&t| (tasks[t].x, tasks[t].y)).collect();
    loop {
        let mut blocked = vec![false; w * h];
        let mut obstacles = Vec::new();
        for _ in 0..rng.random_range(5..=20) {
            let r = Rect::new(
                rng.random_range(0..w - 2),
                rng.random_range(0..h - 2),
                rng.random_range(1..=5),
                rng.random_range(1..=5),
            );
            let r = Rect::new(r.x, r.y, r.w.min(w - r.x), r.h.min(h - r.y));
            for c in r.cells() {
                blocked[c.y * w + c.x] = true;
            }
            obstacles.push(ObstacleSpec::Rect(r));
        }
        // obstacles forbid their 8-neighbourhood too
        let mut unusable = blocked.clone();
        for (i, _) in blocked.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if (0..w as i64).contains(&nx) && (0..h as i64).contains(&ny) {
                    unusable[ny as usize * w + nx as usize] = true;
                }
            }
        }
        if starts.iter().any(|&(x, y)| unusable[y * w + x]) || !connected(w, h, &unusable) {
            continue;
        }
        let lambda = (0..tasks.len()).map(|_| rng.random_range(1..=32) as f64).collect();
        let mut ids: Vec<usize> = (1..=n).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let failures = ids[..rng.random_range(0..=3usize.min(n - 1))]
            .iter()
            .map(|&robot| FailureSpec { robot, time_s: rng.random_range(0.0..800.0f64).round() })
            .collect();
        return ScenarioConfig {
            world: WorldConfig {
                width: w,
                height: h,
                epsilon_m: 1.0,
                obstacles,
                tasks: tasks.clone(),
                targets: TargetsConfig::Sampled { lambda },
            },
            robots: starts
                .iter()
                .enumerate()
                .map(|(k, &(x, y))| RobotConfig { id: k + 1, start: [x, y], battery: Default::default() })
                .collect(),
            params: Default::default(),
            failures,
            strategy: Strategy::Care,
            seed,
        };
    }
}

fn criterion_6(games: &mut Vec<GameRecord>) -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut failures = 0;
    for seed in 0..24 {
        let cfg = random_scenario(seed);
        failures += cfg.failures.len();
        let out = run(&cfg).expect("random scenario runs");
        if out.metrics.cr != 1.0 {
            bad.push(format!("seed {seed}: CR {}", out.metrics.cr));
        }
        games.extend(out.games);
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(120),
        format!("24 scenarios, {failures} failures, {} incomplete {bad:?}, {elapsed:.2?}", bad.len()),
    )
}

fn criterion_7(mut games: Vec<GameRecord>) -> Outcome {
    for name in ["scenario1.json", "scenario2.json", "scenario3.json"] {
        let mut cfg = bundled(name);
        for seed in 1..=5 {
            cfg.seed = seed;
            games.extend(run(&cfg).expect("bundled scenario runs").games);
        }
    }
    let min_p = games.iter().map(|g| g.g_p).fold(f64::INFINITY, f64::min);
    let min_t = games.iter().map(|g| g.g_t).fold(f64::INFINITY, f64::min);
    outcome(
        !games.is_empty() && min_p >= -1e-12 && min_t >= -1e-12,
        format!("{} games, min G_P {min_p:.3e}, min G_T {min_t:.3e}", games.len()),
    )
}

fn mean_ct(c: &Comparison, s: Strategy) -> f64 {
    c.stat(s, "ct").expect("runs").mean
}

fn criterion_8() -> Outcome {
    let seeds = [1, 2, 3, 4, 5];
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["scenario1.json", "scenario2.json"] {
        let cfg = bundled(name);
        let cmp = compare_config(&cfg, &Strategy::ALL, &seeds).expect("comparison runs");
        let (care, nonco, fr) =
            (mean_ct(&cmp, Strategy::Care), mean_ct(&cmp, Strategy::Nonco), mean_ct(&cmp, Strategy::Fr));
        ok &= care < nonco && care <= fr;
        notes.push(format!("{name} CT care {care:.1} nonco {nonco:.1} fr {fr:.1}"));
        if !cfg.failures.is_empty() {
            let full = |s| cmp.runs_of(s).all(|r| r.metrics.cr == 1.0);
            let nonco_short = cmp.runs_of(Strategy::Nonco).all(|r| r.metrics.cr < 1.0);
            ok &= full(Strategy::Care) && full(Strategy::Fr) && nonco_short;
            notes.push(format!("CR care=1 {} fr=1 {} nonco<1 {nonco_short}", full(Strategy::Care), full(Strategy::Fr)));
        }
        if name == "scenario2.json" {
            let t = |s| {
                cmp.stat(s, "totd_50")
                    .map_or(f64::INFINITY, |st| if st.n == seeds.len() { st.mean } else { f64::INFINITY })
            };
            let (tc, tf, tn) = (t(Strategy::Care), t(Strategy::Fr), t(Strategy::Nonco));
            ok &= tc <= tf && tf <= tn;
            notes.push(format!("ToTD50 care {tc:.1} fr {tf:.1} nonco {tn:.1}"));
        }
    }
    outcome(ok, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let base = bundled("scenario3.json");
    let means: Vec<f64> = [4, 6, 8, 10]
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.truncate_team(n);
            let cmp = compare_config(&cfg, &[Strategy::Care], &[1, 2, 3]).expect("runs");
            mean_ct(&cmp, Strategy::Care)
        })
        .collect();
    let ok = means.windows(2).all(|w| w[1] < w[0]);
    outcome(
        ok,
        format!(
            "mean CT for N = 4, 6, 8, 10: {}",
            means.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let path = scenario_path("scenario2.json");
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let args = RunArgs { seed: Some(7), out_dir: Some(d.clone()), ..Default::default() };
        cmd_run(&path, &args).expect("run succeeds");
    }
    let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| dirs[0].join(n).is_file())
        .filter(|n| fs::read(dirs[0].join(n)).ok() != fs::read(dirs[1].join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    let has_outputs =
        ["metrics.csv", "events.csv", "games.csv", "trajectories.csv", "map_final.txt", "trajectories.svg"]
            .iter()
            .all(|f| dirs[0].join(f).is_file());
    outcome(has_outputs && differing.is_empty(), format!("{} files compared, differing {differing:?}", names.len()))
}

fn criterion_11() -> Outcome {
    let sigmas = [0.0, 0.05, 0.10, 0.15];
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["scenario1.json", "scenario2.json", "scenario3.json"] {
        let base = bundled(name);
        let crs: Vec<f64> = sigmas
            .iter()
            .map(|&s| {
                let mut cfg = base.clone();
                cfg.params.noise_sigma_m = s;
                compare_config(&cfg, &[Strategy::Care], &[1, 2, 3, 4, 5])
                    .expect("runs")
                    .stat(Strategy::Care, "cr")
                    .unwrap()
                    .mean
            })
            .collect();
        ok &= crs.windows(2).all(|w| w[1] <= w[0]) && crs[1] >= 0.95;
        notes.push(format!("{name} CR {}", crs.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join("/")));
    }
    outcome(ok, notes.join("; "))
}

fn main() -> ExitCode {
    let mut suite_games = Vec::new();
    let c6 = criterion_6(&mut suite_games);
    let results = vec![
        (1, "potential-game alignment", criterion_1()),
        (2, "marginal-contribution identity", criterion_2()),
        (3, "max-logit optimality rate", criterion_3()),
        (4, "worth oracle", criterion_4()),
        (5, "battery model", criterion_5()),
        (6, "complete coverage under failures", c6),
        (7, "nonnegative gains", criterion_7(suite_games)),
        (8, "strategy ordering", criterion_8()),
        (9, "team-size monotonicity", criterion_9()),
        (10, "determinism", criterion_10()),
        (11, "noise robustness", criterion_11()),
    ];
    let mut failed = 0;
    for (k, name, o) in &results {
        println!("criterion {k:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
