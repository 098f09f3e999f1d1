//! The paired comparison protocol: alternating gradient descent against both
//! optimistic variants on seeded random zero-sum games, measuring the dual
//! residual of the time-averaged strategies, with t-based interval summaries
//! and a learning-rate sweep.
//!
//! Per instance, one game is generated and all three algorithms run on it
//! back to back from the same initial condition, so the per-game ratios pair
//! naturally and cancel instance-level variance.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::compensated::NeumaierSum;
use crate::dynamics::{run_streamed, Algorithm, Budget, DynamicsError, JointState, LearningRates};
use crate::game::{reduce_to_meta, NetworkGame};
use crate::gamegen::{random_profile, random_zero_sum_network, GamegenError, GeneratorConfig};
use crate::stats::{confidence_interval, ConfidenceInterval, StatsError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("algorithm diverged on N={n}, k={k}, seed={seed}: {source}")]
    Diverged { n: usize, k: usize, seed: u64, source: DynamicsError },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gamegen(#[from] GamegenError),
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Budget models for a comparison run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BudgetSpec {
    /// Fixed iteration count per algorithm (deterministic, the default).
    Iterations(u64),
    /// Fixed wall-clock seconds per algorithm, the three runs of one game
    /// executing back to back.
    Seconds(f64),
    /// Fixed number of per-agent gradient evaluations per algorithm, charging
    /// each algorithm its own per-iteration product cost.
    GradientEvaluations(u64),
}

impl BudgetSpec {
    pub fn mode_name(&self) -> &'static str {
        match self {
            BudgetSpec::Iterations(_) => "iterations",
            BudgetSpec::Seconds(_) => "seconds",
            BudgetSpec::GradientEvaluations(_) => "grad_evals",
        }
    }

    pub fn amount(&self) -> f64 {
        match self {
            BudgetSpec::Iterations(n) => *n as f64,
            BudgetSpec::Seconds(s) => *s,
            BudgetSpec::GradientEvaluations(n) => *n as f64,
        }
    }

    /// Concrete run budget for one algorithm on an N-agent game.
    fn to_budget(self, algorithm: Algorithm, n_agents: usize) -> Result<Budget, ExperimentError> {
        match self {
            BudgetSpec::Iterations(n) => Ok(Budget::Iterations(n)),
            BudgetSpec::Seconds(s) => {
                if !(s > 0.0) {
                    return Err(ExperimentError::InvalidConfig("seconds must be > 0".into()));
                }
                Ok(Budget::WallClock(Duration::from_secs_f64(s)))
            }
            BudgetSpec::GradientEvaluations(total) => {
                let per_iter = match algorithm {
                    Algorithm::AltGd | Algorithm::OptGd => 2 * n_agents as u64,
                    _ => n_agents as u64,
                };
                Ok(Budget::Iterations((total / per_iter).max(1)))
            }
        }
    }
}

/// Full protocol configuration; every output embeds the resolved copy.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub agent_counts: Vec<usize>,
    pub strategy_counts: Vec<usize>,
    pub games_per_cell: usize,
    pub budget: BudgetSpec,
    /// Alternating gradient descent runs at `rate_multiplier` times the
    /// optimistic baseline `1 / (2 k (N - 1))`.
    pub rate_multiplier: f64,
    pub seed_base: u64,
    pub sweep_multipliers: Vec<f64>,
    pub confidence_level: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent_counts: vec![5, 10, 20],
            strategy_counts: vec![5, 10, 20],
            games_per_cell: 30,
            budget: BudgetSpec::Iterations(100_000),
            rate_multiplier: 4.0,
            seed_base: 1,
            sweep_multipliers: vec![1.0, 2.0, 4.0],
            confidence_level: 0.95,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.agent_counts.is_empty() || self.strategy_counts.is_empty() {
            return Err(ExperimentError::InvalidConfig("empty grid".into()));
        }
        if self.agent_counts.iter().any(|&n| n < 2) {
            return Err(ExperimentError::InvalidConfig("agent counts must be >= 2".into()));
        }
        if self.strategy_counts.iter().any(|&k| k < 1) {
            return Err(ExperimentError::InvalidConfig("strategy counts must be >= 1".into()));
        }
        if self.games_per_cell < 2 {
            return Err(ExperimentError::InvalidConfig(
                "intervals need at least 2 games per cell".into(),
            ));
        }
        if !(self.rate_multiplier > 0.0) {
            return Err(ExperimentError::InvalidConfig("rate multiplier must be > 0".into()));
        }
        if self.sweep_multipliers.iter().any(|m| !(*m > 0.0 && *m <= 4.0)) {
            return Err(ExperimentError::InvalidConfig(
                "sweep multipliers must lie in (0, 4]".into(),
            ));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(ExperimentError::InvalidConfig("confidence level in (0,1)".into()));
        }
        Ok(())
    }

    /// The optimistic baseline rate `1 / (2 k (N - 1))`.
    pub fn baseline_rate(n: usize, k: usize) -> f64 {
        1.0 / (2.0 * k as f64 * (n as f64 - 1.0))
    }

    /// Deterministic per-instance seed stream.
    pub fn instance_seed(&self, n: usize, k: usize, index: usize) -> u64 {
        self.seed_base
            .wrapping_add((n as u64).wrapping_mul(1_000_003))
            .wrapping_add((k as u64).wrapping_mul(10_007))
            .wrapping_add(index as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct InstanceFlags {
    /// Alternating residual was exactly zero; ratios undefined.
    pub zero_residual: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub d_alt: f64,
    pub d_opt: f64,
    pub d_opt_cached: f64,
    /// `d_opt / d_alt` when defined.
    pub ratio_opt: Option<f64>,
    pub ratio_cached: Option<f64>,
    /// x-side time-average residual for the alternating run (the y side is
    /// the headline number).
    pub d_alt_x_side: f64,
    pub flags: InstanceFlags,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedResults {
    pub config: ExperimentConfig,
    pub records: Vec<InstanceRecord>,
}

impl PairedResults {
    pub fn ratio_samples(&self, cached: bool) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| if cached { r.ratio_cached } else { r.ratio_opt })
            .collect()
    }

    pub fn interval(&self, cached: bool) -> Result<ConfidenceInterval, ExperimentError> {
        Ok(confidence_interval(&self.ratio_samples(cached), self.config.confidence_level)?)
    }

    /// CSV with one row per instance; every output embeds the budget mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "N,k,seed,budget_mode,budget,d_alt,d_opt,d_opt_cached,ratio_opt,ratio_cached,flags\n",
        );
        for r in &self.records {
            let fmt_ratio =
                |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
            let flags = if r.flags.zero_residual { "zero_residual" } else { "" };
            out.push_str(&format!(
                "{},{},{},{},{},{:.17e},{:.17e},{:.17e},{},{},{}\n",
                r.n,
                r.k,
                r.seed,
                self.config.budget.mode_name(),
                self.config.budget.amount(),
                r.d_alt,
                r.d_opt,
                r.d_opt_cached,
                fmt_ratio(r.ratio_opt),
                fmt_ratio(r.ratio_cached),
                flags,
            ));
        }
        out
    }
}

/// Time-average accumulator over the states seen *before* each update, i.e.
/// the sum over `t = 0..T-1`.
struct AverageAccumulator {
    sums: Vec<NeumaierSum>,
    count: u64,
}

impl AverageAccumulator {
    fn new(dim: usize) -> Self {
        Self { sums: vec![NeumaierSum::new(); dim], count: 0 }
    }

    fn add(&mut self, v: impl Iterator<Item = f64>) {
        for (acc, x) in self.sums.iter_mut().zip(v) {
            acc.add(x);
        }
        self.count += 1;
    }

    fn average(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s.value() / self.count.max(1) as f64).collect()
    }
}

/// Runs one algorithm and returns the dual residual `|A_bar y_avg|` of its
/// time-averaged measured side (duplicates for alternating, the strategies
/// otherwise), plus the x-side residual for alternating runs.
fn run_instance(
    game: &NetworkGame,
    algorithm: Algorithm,
    init: &JointState,
    rates: &LearningRates,
    budget: Budget,
) -> Result<(f64, f64), DynamicsError> {
    let meta = reduce_to_meta(game);
    let dim = meta.total_dim();
    let mut measured = AverageAccumulator::new(dim);
    let mut x_side = AverageAccumulator::new(dim);
    // Fold in the pre-update state at each iteration: y^0..y^{T-1}.
    let mut pending = init.clone();
    let (_total, _final_state, _evals) = run_streamed(
        game,
        algorithm,
        init,
        rates,
        budget,
        |_t, _half, full| {
            match &pending.y {
                Some(ys) => {
                    measured.add(ys.iter().flatten().copied());
                    x_side.add(pending.x.iter().flatten().copied());
                }
                None => {
                    measured.add(pending.x.iter().flatten().copied());
                    x_side.add(pending.x.iter().flatten().copied());
                }
            }
            pending = full.clone();
        },
    )?;
    let avg = measured.average();
    let resid = meta.a_bar.matvec(&avg).iter().map(|v| v * v).sum::<f64>().sqrt();
    let avg_x = x_side.average();
    let resid_x = meta.a_bar.matvec(&avg_x).iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((resid, resid_x))
}

/// Generates each instance, runs the three algorithms on it back to back
/// with the same initial condition, and records paired residuals.
pub fn run_comparison(config: &ExperimentConfig) -> Result<PairedResults, ExperimentError> {
    config.validate()?;
    let mut records = Vec::new();
    for &n in &config.agent_counts {
        for &k in &config.strategy_counts {
            let base_rate = ExperimentConfig::baseline_rate(n, k);
            let alt_rate = config.rate_multiplier * base_rate;
            for idx in 0..config.games_per_cell {
                let seed = config.instance_seed(n, k, idx);
                let gen = GeneratorConfig::new(n, k, seed)?;
                let game = random_zero_sum_network(&gen);
                let x0 = random_profile(&game, seed ^ 0x5EED_F00D);
                let alt_rates = LearningRates::uniform(&game, alt_rate)?;
                let opt_rates = LearningRates::uniform(&game, base_rate)?;
                let wrap = |e: DynamicsError| ExperimentError::Diverged { n, k, seed, source: e };

                let (d_alt, d_alt_x) = run_instance(
                    &game,
                    Algorithm::AltGd,
                    &JointState::duplicated(x0.clone()),
                    &alt_rates,
                    config.budget.to_budget(Algorithm::AltGd, n)?,
                )
                .map_err(wrap)?;
                let (d_opt, _) = run_instance(
                    &game,
                    Algorithm::OptGd,
                    &JointState::simultaneous(x0.clone()),
                    &opt_rates,
                    config.budget.to_budget(Algorithm::OptGd, n)?,
                )
                .map_err(wrap)?;
                let (d_opt_cached, _) = run_instance(
                    &game,
                    Algorithm::OptGdCached,
                    &JointState::simultaneous(x0.clone()),
                    &opt_rates,
                    config.budget.to_budget(Algorithm::OptGdCached, n)?,
                )
                .map_err(wrap)?;

                let zero = d_alt == 0.0;
                records.push(InstanceRecord {
                    n,
                    k,
                    seed,
                    d_alt,
                    d_opt,
                    d_opt_cached,
                    ratio_opt: (!zero).then(|| d_opt / d_alt),
                    ratio_cached: (!zero).then(|| d_opt_cached / d_alt),
                    d_alt_x_side: d_alt_x,
                    flags: InstanceFlags { zero_residual: zero },
                });
            }
        }
    }
    Ok(PairedResults { config: config.clone(), records })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub multiplier: f64,
    pub comparison: &'static str,
    pub interval: ConfidenceInterval,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
}

/// Repeats the comparison with the alternating rate at each multiplier of
/// the optimistic baseline, one interval row per (multiplier, comparison).
pub fn rate_sweep(config: &ExperimentConfig) -> Result<SweepTable, ExperimentError> {
    config.validate()?;
    let mut rows = Vec::new();
    for &m in &config.sweep_multipliers {
        let mut cfg = config.clone();
        cfg.rate_multiplier = m;
        let results = run_comparison(&cfg)?;
        rows.push(SweepRow {
            multiplier: m,
            comparison: "opt_over_alt",
            interval: results.interval(false)?,
        });
        rows.push(SweepRow {
            multiplier: m,
            comparison: "opt_cached_over_alt",
            interval: results.interval(true)?,
        });
    }
    Ok(SweepTable { config: config.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            agent_counts: vec![3],
            strategy_counts: vec![2],
            games_per_cell: 3,
            budget: BudgetSpec::Iterations(2_000),
            rate_multiplier: 4.0,
            seed_base: 11,
            sweep_multipliers: vec![1.0],
            confidence_level: 0.95,
        }
    }

    #[test]
    fn comparison_is_deterministic_and_paired() {
        let cfg = small_config();
        let a = run_comparison(&cfg).unwrap();
        let b = run_comparison(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.records.len(), 3);
        for r in &a.records {
            assert!(r.d_alt.is_finite() && r.d_opt.is_finite() && r.d_opt_cached.is_finite());
            assert!(r.ratio_opt.is_some());
        }
    }

    #[test]
    fn cached_and_plain_optimistic_agree() {
        let cfg = small_config();
        let res = run_comparison(&cfg).unwrap();
        for r in &res.records {
            let rel = (r.d_opt - r.d_opt_cached).abs() / (1.0 + r.d_opt.abs());
            assert!(rel <= 1e-10, "cached variant computes the same iterates: {rel}");
        }
    }

    #[test]
    fn sweep_produces_one_row_per_multiplier_and_comparison() {
        let mut cfg = small_config();
        cfg.games_per_cell = 2;
        cfg.budget = BudgetSpec::Iterations(500);
        let table = rate_sweep(&cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows[0].interval.lo <= table.rows[0].interval.hi);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small_config();
        cfg.games_per_cell = 1;
        assert!(matches!(run_comparison(&cfg), Err(ExperimentError::InvalidConfig(_))));
        let mut cfg = small_config();
        cfg.sweep_multipliers = vec![8.0];
        assert!(matches!(rate_sweep(&cfg), Err(ExperimentError::InvalidConfig(_))));
    }
}
