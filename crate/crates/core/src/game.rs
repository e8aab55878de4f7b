//! Worth-allocation potential games, Max-Logit learning and gain metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::TaskId;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("a game needs at least one player and one action")]
    Empty,
    #[error("probability table is {rows}x{cols}, expected {players}x{actions}")]
    Shape { rows: usize, cols: usize, players: usize, actions: usize },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("negative or non-finite worth {0}")]
    BadWorth(f64),
    #[error("learning needs tau > 0 and at least one cycle (tau = {tau}, cycles = {cycles})")]
    BadParams { tau: f64, cycles: usize },
    #[error("joint action has {got} entries for {players} players")]
    BadJointAction { got: usize, players: usize },
    #[error("{0} joint actions exceed the exhaustive search limit")]
    TooLarge(u128),
}

/// Max-Logit learning parameters: `L` cycles at temperature `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitParams {
    pub cycles: usize,
    pub tau: f64,
}

impl Default for LogitParams {
    fn default() -> Self {
        Self { cycles: 50, tau: 0.05 }
    }
}

/// One entry per player: an index into the action list, or `None` for ∅.
pub type JointAction = Vec<Option<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    /// Robot ids, in player order.
    pub players: Vec<usize>,
    pub actions: Vec<TaskId>,
    /// `w_r` per action.
    pub worth: Vec<f64>,
    /// `p_r(i)` indexed `[player][action]`.
    pub prob: Vec<Vec<f64>>,
    pub params: LogitParams,
    pub initial: JointAction,
}

impl GameInstance {
    pub fn new(
        players: Vec<usize>,
        actions: Vec<TaskId>,
        worth: Vec<f64>,
        prob: Vec<Vec<f64>>,
        params: LogitParams,
        initial: JointAction,
    ) -> Result<Self, GameError> {
        let g = Self { players, actions, worth, prob, params, initial };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let (n, m) = (self.players.len(), self.actions.len());
        if n == 0 || m == 0 {
            return Err(GameError::Empty);
        }
        if self.worth.len() != m || self.prob.len() != n || self.prob.iter().any(|row| row.len() != m) {
            return Err(GameError::Shape {
                rows: self.prob.len(),
                cols: self.prob.first().map_or(0, Vec::len),
                players: n,
                actions: m,
            });
        }
        if let Some(p) = self.prob.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(GameError::BadProbability(*p));
        }
        if let Some(w) = self.worth.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(GameError::BadWorth(*w));
        }
        self.check_joint(&self.initial)
    }

    fn check_joint(&self, a: &JointAction) -> Result<(), GameError> {
        if a.len() != self.players.len() || a.iter().flatten().any(|&k| k >= self.actions.len()) {
            return Err(GameError::BadJointAction { got: a.len(), players: self.players.len() });
        }
        Ok(())
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Sum of available worth over the action set.
    pub fn worth_sum(&self) -> f64 {
        self.worth.iter().sum()
    }
}

/// `φ(a) = Σ_r w_r (1 − Π_{i: a_i = r} (1 − p_r(i)))`.
pub fn potential(g: &GameInstance, a: &[Option<usize>]) -> f64 {
    let mut miss = vec![1.0; g.num_actions()];
    for (i, ai) in a.iter().enumerate() {
        if let Some(r) = *ai {
            miss[r] *= 1.0 - g.prob[i][r];
        }
    }
    g.worth.iter().zip(&miss).map(|(w, q)| w * (1.0 - q)).sum()
}

/// `U_i = w_{a_i} p_{a_i}(i) Π_{j ≠ i, a_j = a_i} (1 − p_{a_i}(j))`.
pub fn utility(g: &GameInstance, i: usize, a: &[Option<usize>]) -> f64 {
    let Some(r) = a[i] else {
        return 0.0;
    };
    let others: f64 =
        a.iter().enumerate().filter(|&(j, aj)| j != i && *aj == Some(r)).map(|(j, _)| 1.0 - g.prob[j][r]).product();
    g.worth[r] * g.prob[i][r] * others
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialReport {
    pub checks: usize,
    pub max_residual: f64,
}

impl PotentialReport {
    pub fn passed(&self) -> bool {
        self.max_residual <= 1e-9
    }
}

fn deviation_residual(g: &GameInstance, i: usize, a1: Option<usize>, a2: Option<usize>, base: &mut JointAction) -> f64 {
    base[i] = a1;
    let (u1, p1) = (utility(g, i, base), potential(g, base));
    base[i] = a2;
    let (u2, p2) = (utility(g, i, base), potential(g, base));
    ((u1 - u2) - (p1 - p2)).abs()
}

/// Sampled check of `ΔU_i = Δφ` over unilateral deviations (∅ included).
pub fn check_potential_game(g: &GameInstance, samples: usize, seed: u64) -> PotentialReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (g.num_players(), g.num_actions());
    let draw = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(0..=m);
        (k < m).then_some(k)
    };
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut a: JointAction = (0..n).map(|_| draw(&mut rng)).collect();
        let i = rng.random_range(0..n);
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        worst = worst.max(deviation_residual(g, i, x, y, &mut a));
    }
    PotentialReport { checks: samples, max_residual: worst }
}

/// Every joint action in lexicographic order, optionally with ∅ as a choice.
pub fn all_joint_actions(players: usize, actions: usize, with_null: bool) -> impl Iterator<Item = JointAction> {
    let base = actions + usize::from(with_null);
    let total = (base as u128).pow(players as u32);
    (0..total).map(move |mut code| {
        let mut a = vec![None; players];
        for slot in a.iter_mut().rev() {
            let k = (code % base as u128) as usize;
            code /= base as u128;
            *slot = if with_null { k.checked_sub(1) } else { Some(k) };
        }
        a
    })
}

/// Exhaustive check over every joint action and every pair of deviations.
pub fn check_potential_game_exhaustive(g: &GameInstance) -> PotentialReport {
    let (n, m) = (g.num_players(), g.num_actions());
    let choices: Vec<Option<usize>> = std::iter::once(None).chain((0..m).map(Some)).collect();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for mut a in all_joint_actions(n, m, true) {
        for i in 0..n {
            let keep = a[i];
            for &x in &choices {
                for &y in &choices {
                    worst = worst.max(deviation_residual(g, i, x, y, &mut a));
                    checks += 1;
                }
            }
            a[i] = keep;
        }
    }
    PotentialReport { checks, max_residual: worst }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitOutcome {
    /// Best-visited joint action.
    pub best: JointAction,
    pub best_potential: f64,
    pub initial_potential: f64,
    /// Joint action after each cycle with its potential, starting at `a(1)`.
    pub trace: Vec<(JointAction, f64)>,
}

/// Max-Logit learning from `g.initial`; returns the best joint action visited.
pub fn max_logit(g: &GameInstance, seed: u64) -> Result<LogitOutcome, GameError> {
    let LogitParams { cycles, tau } = g.params;
    if tau.is_nan() || tau <= 0.0 || cycles < 1 {
        return Err(GameError::BadParams { tau, cycles });
    }
    g.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (g.num_players(), g.num_actions());
    let mut a = g.initial.clone();
    let phi0 = potential(g, &a);
    let mut trace = Vec::with_capacity(cycles + 1);
    trace.push((a.clone(), phi0));
    let (mut best, mut best_phi) = (a.clone(), phi0);
    for _ in 0..cycles {
        let i = rng.random_range(0..n);
        let alt = rng.random_range(0..m);
        let u_cur = utility(g, i, &a);
        let cur = a[i];
        a[i] = Some(alt);
        let u_alt = utility(g, i, &a);
        // μ = ψ(â) / max(ψ(a_i), ψ(â)) in log space
        let mu = ((u_alt - u_cur) / tau).min(0.0).exp();
        let u: f64 = rng.random();
        if u >= mu {
            a[i] = cur;
        }
        let phi = potential(g, &a);
        if phi > best_phi {
            best_phi = phi;
            best = a.clone();
        }
        trace.push((a.clone(), phi));
    }
    Ok(LogitOutcome { best, best_potential: best_phi, initial_potential: phi0, trace })
}

/// Largest joint-action space searched exhaustively.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exhaustive argmax of `φ` over `Ã^|𝒫|`; ties go to the lexicographically
/// smallest joint action.
pub fn brute_force_optimum(g: &GameInstance) -> Result<(JointAction, f64), GameError> {
    g.validate()?;
    let (n, m) = (g.num_players(), g.num_actions());
    let size = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > BRUTE_FORCE_LIMIT {
        return Err(GameError::TooLarge(size));
    }
    let mut best: Option<(JointAction, f64)> = None;
    for a in all_joint_actions(n, m, false) {
        let phi = potential(g, &a);
        if best.as_ref().is_none_or(|(_, b)| phi > *b) {
            best = Some((a, phi));
        }
    }
    Ok(best.expect("non-empty action space"))
}

/// `G_P = (φ* − φ_init) / Σ_{r∈Ã} w_r`, zero when the denominator is zero.
pub fn gain_of_players(phi_star: f64, phi_init: f64, worth_sum: f64) -> f64 {
    if worth_sum > 0.0 {
        (phi_star - phi_init) / worth_sum
    } else {
        0.0
    }
}

/// `Φ = Σ_r w̃_r (1 − Π_{v→r} (1 − p_r(v)))`.
///
/// `assignment[v]` is robot `v`'s task index (or `None`), `prob[v][r]` its
/// success probability on task index `r`.
pub fn team_potential(assignment: &[Option<usize>], remaining: &[f64], prob: &[Vec<f64>]) -> f64 {
    let mut miss = vec![1.0; remaining.len()];
    for (v, r) in assignment.iter().enumerate() {
        if let Some(r) = *r {
            miss[r] *= 1.0 - prob[v][r];
        }
    }
    remaining.iter().zip(&miss).map(|(w, q)| w * (1.0 - q)).sum()
}

/// `G_T = (Φ* − Φ_init) / Σ_r w̃_r`, zero when the denominator is zero.
pub fn gain_of_team(team_star: f64, team_init: f64, remaining_sum: f64) -> f64 {
    if remaining_sum > 0.0 {
        (team_star - team_init) / remaining_sum
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn game(worth: Vec<f64>, prob: Vec<Vec<f64>>) -> GameInstance {
        let n = prob.len();
        let actions = (1..=worth.len() as u32).map(TaskId).collect();
        GameInstance::new((1..=n).collect(), actions, worth, prob, LogitParams::default(), vec![Some(0); n]).unwrap()
    }

    fn random_game(rng: &mut ChaCha8Rng, n: usize, m: usize) -> GameInstance {
        let worth = (0..m).map(|_| rng.random_range(0.0..10.0)).collect();
        let prob = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
        let mut g = game(worth, prob);
        g.initial = (0..n).map(|_| Some(rng.random_range(0..m))).collect();
        g
    }

    #[test]
    fn potential_examples() {
        let g = game(vec![10.0], vec![vec![0.5], vec![0.5]]);
        assert_eq!(potential(&g, &[None, None]), 0.0);
        assert_abs_diff_eq!(potential(&g, &[Some(0), Some(0)]), 7.5, epsilon = 1e-12);

        let g = game(vec![10.0, 5.0], vec![vec![0.8, 0.0], vec![0.0, 0.4]]);
        assert_abs_diff_eq!(potential(&g, &[Some(0), Some(1)]), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn utility_examples() {
        let g = game(vec![10.0, 4.0], vec![vec![0.5, 0.3], vec![0.5, 0.9]]);
        assert_abs_diff_eq!(utility(&g, 0, &[Some(1), Some(0)]), 4.0 * 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(utility(&g, 0, &[Some(0), Some(0)]), 2.5, epsilon = 1e-12);
        assert_eq!(utility(&g, 1, &[Some(0), None]), 0.0);
    }

    #[test]
    fn seeded_sample_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_game(&mut rng, 4, 5);
        let report = check_potential_game(&g, 1000, 7);
        assert_eq!(report.checks, 1000);
        assert!(report.passed(), "{report:?}");

        let solo = random_game(&mut rng, 1, 3);
        assert!(check_potential_game_exhaustive(&solo).passed());
    }

    #[test]
    fn single_action_pins_everyone() {
        let mut g = game(vec![6.0], vec![vec![0.5], vec![0.2], vec![0.9]]);
        g.initial = vec![Some(0); 3];
        let out = max_logit(&g, 3).unwrap();
        assert_eq!(out.best, vec![Some(0); 3]);
        assert!(out.trace.iter().all(|(a, _)| *a == vec![Some(0); 3]));
    }

    #[test]
    fn single_player_finds_dominant_task() {
        // U = (9, 1)
        let mut g = game(vec![9.0, 1.0], vec![vec![1.0, 1.0]]);
        for seed in 0..20 {
            g.initial = vec![Some(1)];
            let out = max_logit(&g, seed).unwrap();
            assert_eq!(out.best, vec![Some(0)], "seed {seed}");
            g.initial = vec![Some(0)];
            let out = max_logit(&g, seed).unwrap();
            assert!(out.trace.iter().all(|(a, _)| *a == vec![Some(0)]));
        }
    }

    #[test]
    fn logit_rejects_bad_params() {
        let mut g = game(vec![1.0], vec![vec![0.5]]);
        g.params.tau = 0.0;
        assert!(matches!(max_logit(&g, 0), Err(GameError::BadParams { .. })));
        g.params = LogitParams { cycles: 0, tau: 0.05 };
        assert!(matches!(max_logit(&g, 0), Err(GameError::BadParams { .. })));
    }

    #[test]
    fn logit_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_game(&mut rng, 3, 4);
        assert_eq!(max_logit(&g, 5).unwrap(), max_logit(&g, 5).unwrap());
    }

    #[test]
    fn brute_force_examples() {
        let g = game(vec![3.0, 8.0, 5.0], vec![vec![0.9, 0.3, 0.5]]);
        let (a, phi) = brute_force_optimum(&g).unwrap();
        assert_eq!(a, vec![Some(0)]);
        assert_abs_diff_eq!(phi, 2.7, epsilon = 1e-12);

        let g = game(vec![10.0], vec![vec![0.6], vec![0.7]]);
        let (a, phi) = brute_force_optimum(&g).unwrap();
        assert_eq!(a, vec![Some(0), Some(0)]);
        assert_abs_diff_eq!(phi, 10.0 * (1.0 - 0.4 * 0.3), epsilon = 1e-12);

        let g = game(vec![1.0; 10], vec![vec![0.5; 10]; 8]);
        assert_eq!(brute_force_optimum(&g), Err(GameError::TooLarge(100_000_000)));
    }

    #[test]
    fn brute_force_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let g = random_game(&mut rng, 3, 4);
            let (a, phi) = brute_force_optimum(&g).unwrap();
            let mut all: Vec<JointAction> = all_joint_actions(3, 4, false).collect();
            all.reverse();
            let mut rev: Option<(JointAction, f64)> = None;
            for b in all {
                let p = potential(&g, &b);
                if rev.as_ref().is_none_or(|(_, q)| p >= *q) {
                    rev = Some((b, p));
                }
            }
            assert_eq!(rev.unwrap(), (a, phi));
        }
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gain_of_players(4.0, 4.0, 9.0), 0.0);
        assert_abs_diff_eq!(gain_of_players(12.0, 7.5, 15.0), 0.30, epsilon = 1e-12);
        assert_eq!(gain_of_players(1.0, 0.0, 0.0), 0.0);
        assert_eq!(gain_of_team(3.0, 3.0, 20.0), 0.0);
        assert_abs_diff_eq!(gain_of_team(23.0, 20.0, 60.0), 0.05, epsilon = 1e-12);
        assert_eq!(gain_of_team(2.0, 1.0, 0.0), 0.0);
        assert_eq!(team_potential(&[None, None], &[5.0, 2.0], &[vec![0.5, 0.5], vec![0.5, 0.5]]), 0.0);
    }

    #[test]
    fn team_potential_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            // tasks 0..m_all, the first m are the game's action set
            let (m_all, m, n_all, n) = (6, 3, 7, 3);
            let remaining: Vec<f64> = (0..m_all).map(|_| rng.random_range(0.0..20.0)).collect();
            let prob: Vec<Vec<f64>> =
                (0..n_all).map(|_| (0..m_all).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
            let fixed: Vec<Option<usize>> = (n..n_all)
                .map(|_| {
                    let k = rng.random_range(0..=m_all);
                    (k < m_all).then_some(k)
                })
                .collect();
            let q: Vec<f64> = (0..m_all)
                .map(|r| {
                    let miss: f64 = fixed
                        .iter()
                        .enumerate()
                        .filter(|(_, a)| **a == Some(r))
                        .map(|(k, _)| 1.0 - prob[n + k][r])
                        .product();
                    1.0 - miss
                })
                .collect();
            let worth: Vec<f64> = (0..m).map(|r| remaining[r] * (1.0 - q[r])).collect();
            let players: Vec<Vec<f64>> = prob[..n].iter().map(|row| row[..m].to_vec()).collect();
            let g = game(worth, players);
            let a: JointAction = (0..n).map(|_| Some(rng.random_range(0..m))).collect();
            let assignment: Vec<Option<usize>> = a.iter().copied().chain(fixed.iter().copied()).collect();
            let team = team_potential(&assignment, &remaining, &prob);
            let constant: f64 = (0..m_all).map(|r| remaining[r] * q[r]).sum();
            assert_abs_diff_eq!(team, potential(&g, &a) + constant, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn alignment_exhaustive_small(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_game(&mut rng, n, m);
            let report = check_potential_game_exhaustive(&g);
            prop_assert!(report.passed(), "{:?}", report);
        }

        #[test]
        fn marginal_contribution(seed in any::<u64>(), n in 1usize..=5, m in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_game(&mut rng, n, m);
            let a: JointAction = (0..n).map(|_| { let k = rng.random_range(0..=m); (k < m).then_some(k) }).collect();
            for i in 0..n {
                let mut without = a.clone();
                without[i] = None;
                let diff = potential(&g, &a) - potential(&g, &without);
                prop_assert!((utility(&g, i, &a) - diff).abs() <= 1e-9);
            }
        }

        #[test]
        fn best_visited_never_below_start(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_game(&mut rng, n, m);
            let out = max_logit(&g, seed).unwrap();
            prop_assert!(out.best_potential >= out.initial_potential);
            prop_assert_eq!(out.trace.len(), g.params.cycles + 1);
            let top = out.trace.iter().map(|(_, p)| *p).fold(f64::MIN, f64::max);
            prop_assert_eq!(top, out.best_potential);
            prop_assert!(gain_of_players(out.best_potential, out.initial_potential, g.worth_sum()) >= 0.0);
        }
    }
}
