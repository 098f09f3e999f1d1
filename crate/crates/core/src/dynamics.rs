//! The update rules and the trajectory runner.
//!
//! Six algorithms are provided: simultaneous gradient descent, 2-agent
//! alternating gradient descent, round-robin gradient descent, multiagent
//! alternating gradient descent over duplicated agents, and optimistic
//! gradient descent in its plain and product-caching forms. Alternating
//! dynamics record half states (after the x-side update, before the y-side
//! update) because the regret identities read them.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::game::{GameError, NetworkGame};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state carries no duplicate strategies but the algorithm needs them")]
    MissingDuplicates,
    #[error("algorithm {algorithm:?} is incompatible with this game/state: {reason}")]
    IncompatibleAlgorithm { algorithm: Algorithm, reason: String },
    #[error("budget must be positive")]
    InvalidBudget,
    #[error("strategies diverged at iteration {iteration} (component exceeded {guard:e} or became non-finite)")]
    DivergenceDetected { iteration: u64, guard: f64, last_state: Box<JointState> },
    #[error("gradient cache shape mismatch")]
    CacheShapeMismatch,
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Per-agent learning-rate vectors; `gamma` drives duplicate agents (the
/// y side of alternating dynamics).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningRates {
    eta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

impl LearningRates {
    pub fn new(eta: Vec<Vec<f64>>, gamma: Option<Vec<Vec<f64>>>) -> Result<Self, GameError> {
        let gamma = gamma.unwrap_or_else(|| eta.clone());
        if gamma.len() != eta.len() {
            return Err(GameError::DimensionMismatch(
                "eta and gamma must cover the same agents".into(),
            ));
        }
        for (i, (e, g)) in eta.iter().zip(&gamma).enumerate() {
            if e.len() != g.len() {
                return Err(GameError::DimensionMismatch(format!(
                    "agent {i}: eta has {} entries, gamma has {}",
                    e.len(),
                    g.len()
                )));
            }
            for v in e.iter().chain(g) {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(GameError::DimensionMismatch(format!(
                        "agent {i}: learning rates must be strictly positive and finite"
                    )));
                }
            }
        }
        Ok(Self { eta, gamma })
    }

    /// One scalar rate for every strategy of every agent.
    pub fn uniform(game: &NetworkGame, rate: f64) -> Result<Self, GameError> {
        Self::uniform_pair(game, rate, rate)
    }

    /// Scalar x-side and y-side rates.
    pub fn uniform_pair(game: &NetworkGame, eta: f64, gamma: f64) -> Result<Self, GameError> {
        let e = game.dims().iter().map(|&d| vec![eta; d]).collect();
        let g = game.dims().iter().map(|&d| vec![gamma; d]).collect();
        Self::new(e, Some(g))
    }

    pub fn n_agents(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self, agent: usize) -> &[f64] {
        &self.eta[agent]
    }

    pub fn gamma(&self, agent: usize) -> &[f64] {
        &self.gamma[agent]
    }

    pub fn stacked_eta(&self) -> Vec<f64> {
        self.eta.concat()
    }

    pub fn stacked_gamma(&self) -> Vec<f64> {
        self.gamma.concat()
    }

    pub fn matches(&self, game: &NetworkGame) -> Result<(), GameError> {
        if self.eta.len() != game.n_agents() {
            return Err(GameError::DimensionMismatch(format!(
                "rates cover {} agents, game has {}",
                self.eta.len(),
                game.n_agents()
            )));
        }
        for (i, e) in self.eta.iter().enumerate() {
            if e.len() != game.dim(i) {
                return Err(GameError::DimensionMismatch(format!(
                    "agent {i}: rate vector length {} vs strategy count {}",
                    e.len(),
                    game.dim(i)
                )));
            }
        }
        Ok(())
    }
}

/// Joint strategies: per-agent x vectors, plus duplicate y vectors for
/// alternating dynamics. A native 2-agent alternating state stores agent 1
/// in `x` and agent 2 in `y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointState {
    pub x: Vec<Vec<f64>>,
    pub y: Option<Vec<Vec<f64>>>,
}

impl JointState {
    pub fn simultaneous(x: Vec<Vec<f64>>) -> Self {
        Self { x, y: None }
    }

    /// Native 2-agent alternating state.
    pub fn pair(x1: Vec<f64>, x2: Vec<f64>) -> Self {
        Self { x: vec![x1], y: Some(vec![x2]) }
    }

    /// Duplicated multiagent state with `y = x`.
    pub fn duplicated(x: Vec<Vec<f64>>) -> Self {
        let y = x.clone();
        Self { x, y: Some(y) }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for v in self.x.iter().flatten() {
            m = m.max(v.abs());
        }
        if let Some(y) = &self.y {
            for v in y.iter().flatten() {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().flatten().all(|v| v.is_finite())
            && self.y.iter().flatten().flatten().all(|v| v.is_finite())
    }

    /// Euclidean distance over all stored components.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.x.iter().flatten().zip(other.x.iter().flatten()) {
            s += (a - b) * (a - b);
        }
        if let (Some(ya), Some(yb)) = (&self.y, &other.y) {
            for (a, b) in ya.iter().flatten().zip(yb.iter().flatten()) {
                s += (a - b) * (a - b);
            }
        }
        s.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    /// Simultaneous gradient descent.
    SimGd,
    /// 2-agent alternating gradient descent (agent 2 is the y side).
    Alt2,
    /// Round-robin gradient descent: agents update in index order within an
    /// iteration, each seeing the fresh strategies of earlier agents.
    RoundGd,
    /// Multiagent alternating gradient descent over duplicated agents.
    AltGd,
    /// Optimistic gradient descent (previous two gradients).
    OptGd,
    /// Optimistic gradient descent caching one scaled gradient per agent.
    OptGdCached,
}

impl Algorithm {
    pub fn is_alternating(self) -> bool {
        matches!(self, Algorithm::Alt2 | Algorithm::AltGd)
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "simgd" => Some(Algorithm::SimGd),
            "2altgd" => Some(Algorithm::Alt2),
            "roundgd" => Some(Algorithm::RoundGd),
            "altgd" => Some(Algorithm::AltGd),
            "optgd" => Some(Algorithm::OptGd),
            "optgd-cached" => Some(Algorithm::OptGdCached),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SimGd => "simgd",
            Algorithm::Alt2 => "2altgd",
            Algorithm::RoundGd => "roundgd",
            Algorithm::AltGd => "altgd",
            Algorithm::OptGd => "optgd",
            Algorithm::OptGdCached => "optgd-cached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Iterations(u64),
    WallClock(Duration),
}

impl Budget {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            Budget::Iterations(0) => Err(DynamicsError::InvalidBudget),
            Budget::WallClock(d) if d.is_zero() => Err(DynamicsError::InvalidBudget),
            _ => Ok(()),
        }
    }
}

/// Component magnitude beyond which a run aborts; divergence demonstrations
/// must fail loudly instead of overflowing silently.
pub const DIVERGENCE_GUARD: f64 = 1e150;

/// Wall-clock budgets poll the timer once per this many iterations.
const CLOCK_CHECK_STRIDE: u64 = 64;

fn check_no_duplicates(state: &JointState, algorithm: Algorithm) -> Result<(), DynamicsError> {
    if state.y.is_some() {
        return Err(DynamicsError::IncompatibleAlgorithm {
            algorithm,
            reason: "state must not carry duplicate strategies".into(),
        });
    }
    Ok(())
}

fn check_profile_shape(game: &NetworkGame, profile: &[Vec<f64>]) -> Result<(), DynamicsError> {
    game.check_profile(profile).map_err(DynamicsError::from)
}

/// One step of simultaneous gradient descent: every agent moves along the
/// gradient evaluated at the common previous state.
pub fn step_sim_gd(
    game: &NetworkGame,
    state: &JointState,
    rates: &LearningRates,
) -> Result<JointState, DynamicsError> {
    check_no_duplicates(state, Algorithm::SimGd)?;
    check_profile_shape(game, &state.x)?;
    rates.matches(game)?;
    let mut new_x = state.x.clone();
    for i in 0..game.n_agents() {
        let g = game.gradient(i, &state.x);
        for (r, gv) in g.iter().enumerate() {
            new_x[i][r] = state.x[i][r] + rates.eta(i)[r] * gv;
        }
    }
    Ok(JointState::simultaneous(new_x))
}

/// One step of 2-agent alternating gradient descent. Returns the half state
/// (x updated, y not yet) and the full state.
pub fn step_2alt_gd(
    game: &NetworkGame,
    state: &JointState,
    eta: &[f64],
    gamma: &[f64],
) -> Result<(JointState, JointState), DynamicsError> {
    if game.n_agents() != 2 {
        return Err(DynamicsError::IncompatibleAlgorithm {
            algorithm: Algorithm::Alt2,
            reason: format!("game has {} agents", game.n_agents()),
        });
    }
    let y = state.y.as_ref().ok_or(DynamicsError::MissingDuplicates)?;
    if state.x.len() != 1 || y.len() != 1 {
        return Err(DynamicsError::DimensionMismatch(
            "2-agent alternating state stores one vector per side".into(),
        ));
    }
    let (x1, x2) = (&state.x[0], &y[0]);
    if x1.len() != game.dim(0) || x2.len() != game.dim(1) {
        return Err(DynamicsError::DimensionMismatch("state does not match game dims".into()));
    }
    if eta.len() != game.dim(0) || gamma.len() != game.dim(1) {
        return Err(DynamicsError::DimensionMismatch("rates do not match game dims".into()));
    }
    let gx = game.block(0, 1).matvec(x2);
    let mut x1_new = x1.clone();
    for r in 0..x1_new.len() {
        x1_new[r] = x1[r] + eta[r] * gx[r];
    }
    let gy = game.block(1, 0).matvec(&x1_new);
    let mut x2_new = x2.clone();
    for r in 0..x2_new.len() {
        x2_new[r] = x2[r] + gamma[r] * gy[r];
    }
    let half = JointState::pair(x1_new.clone(), x2.clone());
    let full = JointState::pair(x1_new, x2_new);
    Ok((half, full))
}

/// One round-robin iteration: agent i sees the fresh strategies of agents
/// j < i and the previous strategies of agents j > i.
pub fn step_round_gd(
    game: &NetworkGame,
    state: &JointState,
    rates: &LearningRates,
) -> Result<JointState, DynamicsError> {
    check_no_duplicates(state, Algorithm::RoundGd)?;
    check_profile_shape(game, &state.x)?;
    rates.matches(game)?;
    let mut work = state.x.clone();
    for i in 0..game.n_agents() {
        let g = game.gradient(i, &work);
        for (r, gv) in g.iter().enumerate() {
            work[i][r] += rates.eta(i)[r] * gv;
        }
    }
    Ok(JointState::simultaneous(work))
}

fn duplicate_parts<'a>(
    state: &'a JointState,
    game: &NetworkGame,
) -> Result<(&'a [Vec<f64>], &'a [Vec<f64>]), DynamicsError> {
    let y = state.y.as_ref().ok_or(DynamicsError::MissingDuplicates)?;
    if state.x.len() != game.n_agents() || y.len() != game.n_agents() {
        return Err(DynamicsError::DimensionMismatch(
            "duplicated state must carry one x and one y vector per agent".into(),
        ));
    }
    Ok((&state.x, y))
}

/// One step of multiagent alternating gradient descent: all originals update
/// from the duplicates' previous strategies, then all duplicates update from
/// the originals' fresh strategies.
pub fn step_alt_gd_multi(
    game: &NetworkGame,
    state: &JointState,
    rates: &LearningRates,
) -> Result<(JointState, JointState), DynamicsError> {
    let (xs, ys) = duplicate_parts(state, game)?;
    check_profile_shape(game, xs)?;
    check_profile_shape(game, ys)?;
    rates.matches(game)?;
    let mut new_x = xs.to_vec();
    for i in 0..game.n_agents() {
        let g = game.gradient(i, ys);
        for (r, gv) in g.iter().enumerate() {
            new_x[i][r] = xs[i][r] + rates.eta(i)[r] * gv;
        }
    }
    let mut new_y = ys.to_vec();
    for i in 0..game.n_agents() {
        let g = game.gradient(i, &new_x);
        for (r, gv) in g.iter().enumerate() {
            new_y[i][r] = ys[i][r] + rates.gamma(i)[r] * gv;
        }
    }
    let half = JointState { x: new_x.clone(), y: Some(ys.to_vec()) };
    let full = JointState { x: new_x, y: Some(new_y) };
    Ok((half, full))
}

/// Reduction-mode variant: duplicates also read the originals' *previous*
/// strategies. With `x0 = y0` and `eta = gamma` the x side coincides with
/// simultaneous gradient descent.
pub fn step_alt_gd_multi_simultaneous(
    game: &NetworkGame,
    state: &JointState,
    rates: &LearningRates,
) -> Result<(JointState, JointState), DynamicsError> {
    let (xs, ys) = duplicate_parts(state, game)?;
    check_profile_shape(game, xs)?;
    check_profile_shape(game, ys)?;
    rates.matches(game)?;
    let mut new_x = xs.to_vec();
    for i in 0..game.n_agents() {
        let g = game.gradient(i, ys);
        for (r, gv) in g.iter().enumerate() {
            new_x[i][r] = xs[i][r] + rates.eta(i)[r] * gv;
        }
    }
    let mut new_y = ys.to_vec();
    for i in 0..game.n_agents() {
        let g = game.gradient(i, xs);
        for (r, gv) in g.iter().enumerate() {
            new_y[i][r] = ys[i][r] + rates.gamma(i)[r] * gv;
        }
    }
    let half = JointState { x: new_x.clone(), y: Some(ys.to_vec()) };
    let full = JointState { x: new_x, y: Some(new_y) };
    Ok((half, full))
}

fn check_grads_shape(game: &NetworkGame, grads: &[Vec<f64>]) -> Result<(), DynamicsError> {
    if grads.len() != game.n_agents()
        || grads.iter().enumerate().any(|(i, g)| g.len() != game.dim(i))
    {
        return Err(DynamicsError::CacheShapeMismatch);
    }
    Ok(())
}

/// One step of optimistic gradient descent. `prev_grads` holds the gradients
/// at the state two steps back (bootstrap: the gradients at the initial
/// state). Returns the new state together with the gradients at the input
/// state, which become `prev_grads` for the next step.
#[allow(clippy::type_complexity)]
pub fn step_opt_gd(
    game: &NetworkGame,
    state: &JointState,
    prev_grads: &[Vec<f64>],
    rates: &LearningRates,
) -> Result<(JointState, Vec<Vec<f64>>), DynamicsError> {
    check_no_duplicates(state, Algorithm::OptGd)?;
    check_profile_shape(game, &state.x)?;
    rates.matches(game)?;
    check_grads_shape(game, prev_grads)?;
    let mut new_x = state.x.clone();
    let mut grads = Vec::with_capacity(game.n_agents());
    for i in 0..game.n_agents() {
        let g1 = game.gradient(i, &state.x);
        let eta = rates.eta(i);
        for r in 0..g1.len() {
            let z1 = eta[r] * g1[r];
            let z2 = eta[r] * prev_grads[i][r];
            new_x[i][r] = state.x[i][r] + 2.0 * z1 - z2;
        }
        grads.push(g1);
    }
    Ok((JointState::simultaneous(new_x), grads))
}

/// Product-caching optimistic gradient descent: `z_cache` holds the scaled
/// gradients of the state two steps back, so each iteration evaluates one
/// gradient per agent. Iterates are bit-identical to [`step_opt_gd`].
#[allow(clippy::type_complexity)]
pub fn step_opt_gd_cached(
    game: &NetworkGame,
    state: &JointState,
    z_cache: &[Vec<f64>],
    rates: &LearningRates,
) -> Result<(JointState, Vec<Vec<f64>>), DynamicsError> {
    check_no_duplicates(state, Algorithm::OptGdCached)?;
    check_profile_shape(game, &state.x)?;
    rates.matches(game)?;
    check_grads_shape(game, z_cache)?;
    let mut new_x = state.x.clone();
    let mut new_cache = Vec::with_capacity(game.n_agents());
    for i in 0..game.n_agents() {
        let g1 = game.gradient(i, &state.x);
        let eta = rates.eta(i);
        let mut z1 = g1;
        for r in 0..z1.len() {
            z1[r] *= eta[r];
            new_x[i][r] = state.x[i][r] + 2.0 * z1[r] - z_cache[i][r];
        }
        new_cache.push(z1);
    }
    Ok((JointState::simultaneous(new_x), new_cache))
}

/// Scales gradients by the learning rates (the cached quantity).
fn scaled_grads(game: &NetworkGame, profile: &[Vec<f64>], rates: &LearningRates) -> Vec<Vec<f64>> {
    (0..game.n_agents())
        .map(|i| {
            let mut g = game.gradient(i, profile);
            for (gv, e) in g.iter_mut().zip(rates.eta(i)) {
                *gv *= e;
            }
            g
        })
        .collect()
}

/// Time-indexed record of a run. `states[m]` is the full state after
/// iteration `iterations[m]`; for alternating dynamics `half_states[m - 1]`
/// is the state after the x-side update of iteration `iterations[m]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub game: Arc<NetworkGame>,
    pub rates: LearningRates,
    pub record_every: u64,
    pub iterations: Vec<u64>,
    pub states: Vec<JointState>,
    pub half_states: Option<Vec<JointState>>,
    /// Total iterations executed (equals the last recorded index).
    pub total_iterations: u64,
    /// Number of per-agent gradient evaluations performed.
    pub grad_evals: u64,
}

impl Trajectory {
    pub fn initial(&self) -> &JointState {
        &self.states[0]
    }

    pub fn final_state(&self) -> &JointState {
        self.states.last().expect("trajectory always has the initial state")
    }

    pub fn is_alternating(&self) -> bool {
        self.algorithm.is_alternating()
    }

    pub fn has_consecutive_states(&self) -> bool {
        self.record_every == 1
    }

    /// CSV export with columns `t,phase,agent,component,value`. Agents are
    /// 1-based; duplicate strategies appear as agents `N+1..2N`. Values carry
    /// 17 significant digits for lossless round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,phase,agent,component,value\n");
        let n = self.game.n_agents();
        let y_offset = if matches!(self.algorithm, Algorithm::Alt2) { 1 } else { n };
        let push_state = |out: &mut String, t: u64, phase: &str, s: &JointState| {
            for (i, xi) in s.x.iter().enumerate() {
                for (c, v) in xi.iter().enumerate() {
                    out.push_str(&format!("{t},{phase},{},{c},{:.16e}\n", i + 1, v));
                }
            }
            if let Some(ys) = &s.y {
                for (i, yi) in ys.iter().enumerate() {
                    for (c, v) in yi.iter().enumerate() {
                        out.push_str(&format!("{t},{phase},{},{c},{:.16e}\n", i + 1 + y_offset, v));
                    }
                }
            }
        };
        for (m, t) in self.iterations.iter().enumerate() {
            if m > 0 {
                if let Some(halves) = &self.half_states {
                    push_state(&mut out, *t, "half", &halves[m - 1]);
                }
            }
            push_state(&mut out, *t, "full", &self.states[m]);
        }
        out
    }
}

/// Validates that `init` has the right shape for `algorithm` on `game`.
pub fn check_compatible(
    game: &NetworkGame,
    algorithm: Algorithm,
    init: &JointState,
) -> Result<(), DynamicsError> {
    match algorithm {
        Algorithm::SimGd | Algorithm::RoundGd | Algorithm::OptGd | Algorithm::OptGdCached => {
            check_no_duplicates(init, algorithm)?;
            check_profile_shape(game, &init.x)
        }
        Algorithm::Alt2 => {
            if game.n_agents() != 2 {
                return Err(DynamicsError::IncompatibleAlgorithm {
                    algorithm,
                    reason: format!("game has {} agents", game.n_agents()),
                });
            }
            let y = init.y.as_ref().ok_or(DynamicsError::MissingDuplicates)?;
            if init.x.len() != 1
                || y.len() != 1
                || init.x[0].len() != game.dim(0)
                || y[0].len() != game.dim(1)
            {
                return Err(DynamicsError::DimensionMismatch(
                    "native 2-agent state must hold agent 1 in x and agent 2 in y".into(),
                ));
            }
            Ok(())
        }
        Algorithm::AltGd => {
            let (xs, ys) = duplicate_parts(init, game)?;
            check_profile_shape(game, xs)?;
            check_profile_shape(game, ys)
        }
    }
}

/// Runs `algorithm` and streams every iteration into `observer` without
/// retaining states. The observer receives the iteration index, the half
/// state for alternating dynamics, and the full state.
pub fn run_streamed(
    game: &NetworkGame,
    algorithm: Algorithm,
    init: &JointState,
    rates: &LearningRates,
    budget: Budget,
    mut observer: impl FnMut(u64, Option<&JointState>, &JointState),
) -> Result<(u64, JointState, u64), DynamicsError> {
    budget.validate()?;
    check_compatible(game, algorithm, init)?;
    rates.matches(game)?;
    if !init.is_finite() || init.max_abs() > DIVERGENCE_GUARD {
        return Err(DynamicsError::DivergenceDetected {
            iteration: 0,
            guard: DIVERGENCE_GUARD,
            last_state: Box::new(init.clone()),
        });
    }

    let n = game.n_agents() as u64;
    let mut state = init.clone();
    let mut grad_evals: u64 = 0;
    // Per-algorithm memory.
    let mut opt_prev_profile: Option<Vec<Vec<f64>>> = None;
    let mut opt_cache: Option<Vec<Vec<f64>>> = None;
    if algorithm == Algorithm::OptGdCached {
        opt_cache = Some(scaled_grads(game, &state.x, rates));
        grad_evals += n;
    }
    if algorithm == Algorithm::OptGd {
        opt_prev_profile = Some(state.x.clone());
    }

    let start = Instant::now();
    let mut t: u64 = 0;
    loop {
        match budget {
            Budget::Iterations(limit) => {
                if t >= limit {
                    break;
                }
            }
            Budget::WallClock(limit) => {
                if t % CLOCK_CHECK_STRIDE == 0 && start.elapsed() >= limit {
                    break;
                }
            }
        }
        t += 1;
        let (half, full) = match algorithm {
            Algorithm::SimGd => {
                grad_evals += n;
                (None, step_sim_gd(game, &state, rates)?)
            }
            Algorithm::RoundGd => {
                grad_evals += n;
                (None, step_round_gd(game, &state, rates)?)
            }
            Algorithm::Alt2 => {
                grad_evals += 2;
                let (h, f) = step_2alt_gd(game, &state, rates.eta(0), rates.gamma(1))?;
                (Some(h), f)
            }
            Algorithm::AltGd => {
                grad_evals += 2 * n;
                let (h, f) = step_alt_gd_multi(game, &state, rates)?;
                (Some(h), f)
            }
            Algorithm::OptGd => {
                // Recomputes both gradients each iteration; the cached
                // variant below is the memory-for-products trade.
                let prev = opt_prev_profile.as_ref().expect("initialized above");
                let prev_grads: Vec<Vec<f64>> =
                    (0..game.n_agents()).map(|i| game.gradient(i, prev)).collect();
                grad_evals += 2 * n;
                let (f, _g1) = step_opt_gd(game, &state, &prev_grads, rates)?;
                opt_prev_profile = Some(state.x.clone());
                (None, f)
            }
            Algorithm::OptGdCached => {
                grad_evals += n;
                let cache = opt_cache.as_ref().expect("initialized above");
                let (f, new_cache) = step_opt_gd_cached(game, &state, cache, rates)?;
                opt_cache = Some(new_cache);
                (None, f)
            }
        };
        if !full.is_finite() || full.max_abs() > DIVERGENCE_GUARD {
            return Err(DynamicsError::DivergenceDetected {
                iteration: t,
                guard: DIVERGENCE_GUARD,
                last_state: Box::new(state),
            });
        }
        observer(t, half.as_ref(), &full);
        state = full;
    }
    Ok((t, state, grad_evals))
}

/// Runs `algorithm` on `game`, recording every `record_every`-th state (plus
/// the final state) into a [`Trajectory`].
pub fn run(
    game: &NetworkGame,
    algorithm: Algorithm,
    init: &JointState,
    rates: &LearningRates,
    budget: Budget,
    record_every: u64,
) -> Result<Trajectory, DynamicsError> {
    if record_every == 0 {
        return Err(DynamicsError::InvalidBudget);
    }
    let mut iterations = vec![0u64];
    let mut states = vec![init.clone()];
    let mut half_states: Option<Vec<JointState>> =
        algorithm.is_alternating().then(Vec::new);
    let (total, last, grad_evals) = run_streamed(
        game,
        algorithm,
        init,
        rates,
        budget,
        |t, half, full| {
            if t % record_every == 0 {
                iterations.push(t);
                states.push(full.clone());
                if let (Some(hs), Some(h)) = (half_states.as_mut(), half) {
                    hs.push(h.clone());
                }
            }
        },
    )?;
    if *iterations.last().unwrap() != total {
        iterations.push(total);
        states.push(last);
    }
    // Drop halves if they fell out of alignment (final state appended without
    // its half); alternating callers that need halves should align
    // record_every with the budget.
    if half_states.as_ref().is_some_and(|hs| hs.len() != states.len() - 1) {
        half_states = None;
    }
    Ok(Trajectory {
        algorithm,
        game: Arc::new(game.clone()),
        rates: rates.clone(),
        record_every,
        iterations,
        states,
        half_states,
        total_iterations: total,
        grad_evals,
    })
}

/// Builds the alternating trajectory of an x-side learner against an
/// arbitrary opponent sequence `y^0..y^M` on a 2-agent game: iteration t
/// sets `x^t = x^{t-1} + D_eta block(0,1) y^{t-1}` and then the opponent
/// plays the supplied `y^t`.
pub fn alternating_trajectory_from_opponent(
    game: &NetworkGame,
    x0: Vec<f64>,
    eta: Vec<f64>,
    opponent: &[Vec<f64>],
) -> Result<Trajectory, DynamicsError> {
    if game.n_agents() != 2 {
        return Err(DynamicsError::IncompatibleAlgorithm {
            algorithm: Algorithm::Alt2,
            reason: "opponent-driven trajectories are 2-agent".into(),
        });
    }
    if opponent.is_empty() {
        return Err(DynamicsError::InvalidBudget);
    }
    if x0.len() != game.dim(0)
        || eta.len() != game.dim(0)
        || opponent.iter().any(|y| y.len() != game.dim(1))
    {
        return Err(DynamicsError::DimensionMismatch(
            "opponent sequence does not match game dims".into(),
        ));
    }
    let rates = LearningRates::new(
        vec![eta.clone(), vec![1.0; game.dim(1)]],
        None,
    )?;
    let mut states = vec![JointState::pair(x0.clone(), opponent[0].clone())];
    let mut halves = Vec::new();
    let mut x = x0;
    for t in 1..opponent.len() {
        let g = game.block(0, 1).matvec(&opponent[t - 1]);
        for r in 0..x.len() {
            x[r] += eta[r] * g[r];
        }
        halves.push(JointState::pair(x.clone(), opponent[t - 1].clone()));
        states.push(JointState::pair(x.clone(), opponent[t].clone()));
    }
    let total = (opponent.len() - 1) as u64;
    Ok(Trajectory {
        algorithm: Algorithm::Alt2,
        game: Arc::new(game.clone()),
        rates,
        record_every: 1,
        iterations: (0..=total).collect(),
        states,
        half_states: Some(halves),
        total_iterations: total,
        grad_evals: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_network_game, NetworkGame};
    use crate::linalg::DenseMatrix;
    use std::collections::BTreeMap;

    fn scalar_game(a12: f64, a21: f64) -> NetworkGame {
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), DenseMatrix::scalar(a12));
        blocks.insert((1, 0), DenseMatrix::scalar(a21));
        make_network_game(vec![1, 1], blocks, None, None).unwrap()
    }

    #[test]
    fn sim_gd_matching_pennies_hand_example() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 1.0).unwrap();
        let s = JointState::simultaneous(vec![vec![1.0], vec![1.0]]);
        let next = step_sim_gd(&g, &s, &rates).unwrap();
        assert_eq!(next.x, vec![vec![2.0], vec![0.0]]);
        // Fixed points: the origin and any Nash equilibrium.
        let zero = JointState::simultaneous(vec![vec![0.0], vec![0.0]]);
        assert_eq!(step_sim_gd(&g, &zero, &rates).unwrap(), zero);
    }

    #[test]
    fn alt2_divergence_instance_first_step() {
        // A = [1], B = [-1], eta = gamma = 2, start (0, -2).
        let g = scalar_game(1.0, -1.0);
        let s = JointState::pair(vec![0.0], vec![-2.0]);
        let (half, full) = step_2alt_gd(&g, &s, &[2.0], &[2.0]).unwrap();
        assert_eq!(half.x[0][0], -4.0);
        assert_eq!(full.y.as_ref().unwrap()[0][0], 6.0);
    }

    #[test]
    fn alt2_energy_figure_step() {
        let g = scalar_game(1.0, -1.0);
        let s = JointState::pair(vec![1.0], vec![0.0]);
        let (_, full) = step_2alt_gd(&g, &s, &[0.5], &[0.5]).unwrap();
        assert_eq!(full.x[0][0], 1.0);
        assert_eq!(full.y.as_ref().unwrap()[0][0], -0.5);
        let zero = JointState::pair(vec![0.0], vec![0.0]);
        let (_, fz) = step_2alt_gd(&g, &zero, &[0.5], &[0.5]).unwrap();
        assert_eq!(fz, zero);
    }

    #[test]
    fn round_gd_cycle_of_six() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 1.0).unwrap();
        let start = JointState::simultaneous(vec![vec![1.0], vec![1.0]]);
        let first = step_round_gd(&g, &start, &rates).unwrap();
        assert_eq!(first.x, vec![vec![2.0], vec![-1.0]]);
        let mut s = start.clone();
        for _ in 0..6 {
            s = step_round_gd(&g, &s, &rates).unwrap();
        }
        assert_eq!(s, start, "round-robin matching pennies cycles every 6 iterations");
    }

    #[test]
    fn opt_gd_first_step_is_plain_gradient_step() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.25).unwrap();
        let s = JointState::simultaneous(vec![vec![1.0], vec![1.0]]);
        let boot: Vec<Vec<f64>> = (0..2).map(|i| g.gradient(i, &s.x)).collect();
        let (next, _) = step_opt_gd(&g, &s, &boot, &rates).unwrap();
        assert_eq!(next.x, vec![vec![1.25], vec![0.75]]);
    }

    #[test]
    fn opt_gd_cached_matches_plain_bitwise() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.25).unwrap();
        let init = JointState::simultaneous(vec![vec![0.3], vec![-0.7]]);
        let a = run(&g, Algorithm::OptGd, &init, &rates, Budget::Iterations(50), 1).unwrap();
        let b = run(&g, Algorithm::OptGdCached, &init, &rates, Budget::Iterations(50), 1).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.x, sb.x);
        }
        // One gradient evaluation per agent per iteration (plus cache
        // initialization) versus two for the recomputing variant.
        assert_eq!(b.grad_evals, 2 + 50 * 2);
        assert_eq!(a.grad_evals, 50 * 4);
    }

    #[test]
    fn run_rejects_zero_budget() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![1.0], vec![0.0]);
        let err = run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(0), 1).unwrap_err();
        assert!(matches!(err, DynamicsError::InvalidBudget));
    }

    #[test]
    fn divergence_guard_trips_on_exponential_growth() {
        // Rates far above the threshold make the map expansive.
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 8.0).unwrap();
        let init = JointState::pair(vec![0.0], vec![-2.0]);
        let err =
            run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(1000), 1).unwrap_err();
        match err {
            DynamicsError::DivergenceDetected { iteration, last_state, .. } => {
                assert!(iteration > 0 && iteration < 1000);
                assert!(last_state.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![1.0], vec![0.0]);
        let traj = run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(6), 1).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,phase,agent,component,value"));
        assert_eq!(csv.lines().count(), 1 + 2 + 6 * 4);
        assert!(csv.contains("0,full,1,0,1.0000000000000000e0"));
    }

    #[test]
    fn deterministic_under_iteration_budget() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![1.0], vec![0.0]);
        let a = run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(100), 1).unwrap();
        let b = run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(100), 1).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
