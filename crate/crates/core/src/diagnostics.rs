//! Closed-form identities and convergence measurements for alternating
//! dynamics: conserved energy, exact regret, cumulative utility, bounded
//! orbits, time-average convergence, recurrence, and volume preservation.
//!
//! Every diagnostic works on a two-sided view of the dynamics. A native
//! 2-agent trajectory exposes agent 1 as the x side and agent 2 as the y
//! side; a duplicated multiagent trajectory exposes the stacked originals
//! and duplicates via the meta reduction, so the 2-agent theory applies
//! verbatim.

use serde::Serialize;
use thiserror::Error;

use crate::compensated::{dot_compensated, ExactDot, NeumaierSum};
use crate::dynamics::{Algorithm, JointState, LearningRates, Trajectory};
use crate::game::{reduce_to_meta, underlying_meta_matrix, GameError, NetworkGame};
use crate::linalg::{spectral_norm, DenseMatrix, Lu, SPECTRAL_TOL};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("trajectory's game is not in the class this diagnostic requires: {0}")]
    WrongGameClass(String),
    #[error("diagnostic requires an alternating trajectory with half states")]
    MissingHalfStates,
    #[error("diagnostic requires consecutively recorded states (record_every = 1)")]
    NonConsecutiveStates,
    #[error("horizon list is empty")]
    EmptyHorizons,
    #[error("horizon {0} exceeds the recorded trajectory")]
    HorizonOutOfRange(u64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Which quadratic form the dynamics conserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnergyForm {
    /// `|x|^2 + |y|^2 + <x, C y>` (adversarial coupling).
    PosNeg,
    /// `|x|^2 - |y|^2 + <x, C y>` (aligned coupling).
    PosPos,
}

/// Positive-definite weight applied on one side of the state.
#[derive(Debug, Clone)]
enum Weight {
    Identity,
    Diagonal(Vec<f64>),
    /// Per-agent dense blocks with their offsets.
    Blocks(Vec<(usize, DenseMatrix)>),
}

impl Weight {
    fn from_blocks(dims: &[usize], blocks: Vec<DenseMatrix>) -> Self {
        if blocks.iter().all(|b| b.max_abs_diff(&DenseMatrix::identity(b.rows())) == 0.0) {
            return Weight::Identity;
        }
        let diagonal = blocks.iter().all(|b| {
            (0..b.rows()).all(|r| (0..b.cols()).all(|c| r == c || b.get(r, c) == 0.0))
        });
        if diagonal {
            let mut d = Vec::new();
            for b in &blocks {
                for r in 0..b.rows() {
                    d.push(b.get(r, r));
                }
            }
            return Weight::Diagonal(d);
        }
        let mut out = Vec::new();
        let mut off = 0;
        for (b, &dim) in blocks.into_iter().zip(dims) {
            out.push((off, b));
            off += dim;
        }
        Weight::Blocks(out)
    }

    /// Solves `W z = v` for the block weight (identity-fast paths included).
    fn solve(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Weight::Identity => v.to_vec(),
            Weight::Diagonal(d) => v.iter().zip(d).map(|(a, b)| a / b).collect(),
            Weight::Blocks(blocks) => {
                let mut out = v.to_vec();
                for (off, b) in blocks {
                    let lu = Lu::factor(b).expect("validated positive-definite transform");
                    let part = lu.solve(&v[*off..*off + b.rows()]);
                    out[*off..*off + b.rows()].copy_from_slice(&part);
                }
                out
            }
        }
    }

    /// Max-norm commutation defect against a diagonal rate matrix.
    fn commutation_defect(&self, rates: &[f64]) -> f64 {
        match self {
            Weight::Identity | Weight::Diagonal(_) => 0.0,
            Weight::Blocks(blocks) => {
                let mut worst = 0.0f64;
                for (off, b) in blocks {
                    for r in 0..b.rows() {
                        for c in 0..b.cols() {
                            worst = worst
                                .max((b.get(r, c) * (rates[off + c] - rates[off + r])).abs());
                        }
                    }
                }
                worst
            }
        }
    }

    fn as_dense(&self, n: usize) -> DenseMatrix {
        match self {
            Weight::Identity => DenseMatrix::identity(n),
            Weight::Diagonal(d) => DenseMatrix::from_diag(d),
            Weight::Blocks(blocks) => {
                let mut m = DenseMatrix::zeros(n, n);
                for (off, b) in blocks {
                    for r in 0..b.rows() {
                        for c in 0..b.cols() {
                            m.set(off + r, off + c, b.get(r, c));
                        }
                    }
                }
                m
            }
        }
    }
}

/// Two-sided view of an alternating system: the x side updates by
/// `x += D_eta (x_eff y)`, the y side by `y += D_gamma (y_eff x)`, and the
/// conserved forms live in the geometry of the underlying coupling and the
/// positive-definite side weights.
pub struct AltView {
    x_eff: DenseMatrix,
    y_eff: DenseMatrix,
    /// Underlying coupling `C` with the x-side transform factored out.
    coupling: DenseMatrix,
    x_weight: Weight,
    y_weight: Weight,
    d_eta: Vec<f64>,
    d_gamma: Vec<f64>,
    /// Agent slicing of the x side.
    x_offsets: Vec<usize>,
    x_dims: Vec<usize>,
    posneg_ok: bool,
    pospos_ok: bool,
    pub commuting_defect: f64,
}

const FORM_TOL: f64 = 1e-9;

impl AltView {
    /// Builds the view for a game plus the state shape used with it
    /// (native 2-agent when `native2`, duplicated meta otherwise).
    pub fn for_game(
        game: &NetworkGame,
        native2: bool,
        rates: &LearningRates,
    ) -> Result<Self, DiagnosticsError> {
        if native2 {
            if game.n_agents() != 2 {
                return Err(DiagnosticsError::DimensionMismatch(
                    "native two-sided view needs a 2-agent game".into(),
                ));
            }
            let x_eff = game.block(0, 1).clone();
            let y_eff = game.block(1, 0).clone();
            let coupling = game.underlying_block(0, 1)?;
            let c_back = game.underlying_block(1, 0)?;
            let ct = coupling.transpose();
            let posneg_ok = c_back.max_abs_diff(&ct.negated()) <= FORM_TOL;
            let pospos_ok = c_back.max_abs_diff(&ct) <= FORM_TOL;
            let x_weight =
                Weight::from_blocks(&[game.dim(0)], vec![game.transform_or_identity(0)]);
            let y_weight =
                Weight::from_blocks(&[game.dim(1)], vec![game.transform_or_identity(1)]);
            let d_eta = rates.eta(0).to_vec();
            let d_gamma = rates.gamma(1).to_vec();
            let defect = x_weight
                .commutation_defect(&d_eta)
                .max(y_weight.commutation_defect(&d_gamma));
            Ok(Self {
                x_eff,
                y_eff,
                coupling,
                x_weight,
                y_weight,
                d_eta,
                d_gamma,
                x_offsets: vec![0],
                x_dims: vec![game.dim(0)],
                posneg_ok,
                pospos_ok,
                commuting_defect: defect,
            })
        } else {
            let meta = reduce_to_meta(game);
            let coupling = underlying_meta_matrix(game, &meta)?;
            let ct = coupling.transpose();
            let posneg_ok = coupling.max_abs_diff(&ct.negated()) <= FORM_TOL;
            let pospos_ok = coupling.max_abs_diff(&ct) <= FORM_TOL;
            let blocks: Vec<DenseMatrix> =
                (0..game.n_agents()).map(|i| game.transform_or_identity(i)).collect();
            let x_weight = Weight::from_blocks(game.dims(), blocks.clone());
            let y_weight = Weight::from_blocks(game.dims(), blocks);
            let d_eta = rates.stacked_eta();
            let d_gamma = rates.stacked_gamma();
            let defect = x_weight
                .commutation_defect(&d_eta)
                .max(y_weight.commutation_defect(&d_gamma));
            Ok(Self {
                x_eff: meta.a_bar.clone(),
                y_eff: meta.a_bar.clone(),
                coupling,
                x_weight,
                y_weight,
                d_eta,
                d_gamma,
                x_offsets: meta.agent_offsets,
                x_dims: meta.dims,
                posneg_ok,
                pospos_ok,
                commuting_defect: defect,
            })
        }
    }

    pub fn for_trajectory(traj: &Trajectory) -> Result<Self, DiagnosticsError> {
        match traj.algorithm {
            Algorithm::Alt2 => Self::for_game(&traj.game, true, &traj.rates),
            Algorithm::AltGd => Self::for_game(&traj.game, false, &traj.rates),
            _ => Err(DiagnosticsError::MissingHalfStates),
        }
    }

    fn stack_x(&self, s: &JointState) -> Vec<f64> {
        s.x.concat()
    }

    fn stack_y(&self, s: &JointState) -> Vec<f64> {
        s.y.as_ref().expect("alternating state").concat()
    }

    fn agent_range(&self, agent: usize) -> Result<std::ops::Range<usize>, DiagnosticsError> {
        if agent >= self.x_dims.len() {
            return Err(DiagnosticsError::DimensionMismatch(format!(
                "agent index {agent} out of range ({} x-side agents)",
                self.x_dims.len()
            )));
        }
        let off = self.x_offsets[agent];
        Ok(off..off + self.x_dims[agent])
    }

    /// The energy form evaluated at a full state.
    fn energy(&self, state: &JointState, form: EnergyForm) -> f64 {
        let x = self.stack_x(state);
        let y = self.stack_y(state);
        let zx = self.x_weight.solve(&x.iter().zip(&self.d_eta).map(|(v, d)| v / d).collect::<Vec<_>>());
        let zy = self.y_weight.solve(&y.iter().zip(&self.d_gamma).map(|(v, d)| v / d).collect::<Vec<_>>());
        let sign = match form {
            EnergyForm::PosNeg => 1.0,
            EnergyForm::PosPos => -1.0,
        };
        let n_products = x.len() + y.len() + x.len() * y.len();
        if n_products <= 32 {
            // Exact path: the scalar coordination instance drives the terms
            // beyond 2^53 while the conserved value stays O(1).
            let mut dot = ExactDot::new();
            for (a, b) in x.iter().zip(&zx) {
                dot.add_product(*a, *b);
            }
            for (a, b) in y.iter().zip(&zy) {
                dot.add_product(sign * *a, *b);
            }
            for (r, xv) in x.iter().enumerate() {
                for (c, yv) in y.iter().enumerate() {
                    let m = self.coupling.get(r, c);
                    if m != 0.0 {
                        dot.add_triple(*xv, m, *yv);
                    }
                }
            }
            dot.value()
        } else {
            let mut acc = NeumaierSum::new();
            for (a, b) in x.iter().zip(&zx) {
                acc.add(a * b);
            }
            for (a, b) in y.iter().zip(&zy) {
                acc.add(sign * a * b);
            }
            let cy = self.coupling.matvec(&y);
            for (a, b) in x.iter().zip(&cy) {
                acc.add(a * b);
            }
            acc.value()
        }
    }

    /// x-side gradient `x_eff y` at a full state, restricted to one agent.
    fn x_gradient_slice(&self, state: &JointState, range: &std::ops::Range<usize>) -> Vec<f64> {
        let y = self.stack_y(state);
        let g = self.x_eff.matvec(&y);
        g[range.clone()].to_vec()
    }
}

/// Per-iteration energy values and the worst relative drift against the
/// initial energy (absolute drift when the initial energy is below 1e-9).
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub series: Vec<f64>,
    pub max_relative_drift: f64,
    pub commuting_defect: f64,
}

fn energy_report(traj: &Trajectory, form: EnergyForm) -> Result<EnergyReport, DiagnosticsError> {
    let view = AltView::for_trajectory(traj)?;
    let class_ok = match form {
        EnergyForm::PosNeg => view.posneg_ok,
        EnergyForm::PosPos => view.pospos_ok,
    };
    if !class_ok {
        return Err(DiagnosticsError::WrongGameClass(match form {
            EnergyForm::PosNeg => "underlying coupling is not adversarial".into(),
            EnergyForm::PosPos => "underlying coupling is not aligned".into(),
        }));
    }
    let series: Vec<f64> = traj.states.iter().map(|s| view.energy(s, form)).collect();
    let e0 = series[0];
    let denom = if e0.abs() >= 1e-9 { e0.abs() } else { 1.0 };
    let max_drift =
        series.iter().fold(0.0f64, |m, e| m.max((e - e0).abs())) / denom;
    Ok(EnergyReport {
        series,
        max_relative_drift: max_drift,
        commuting_defect: view.commuting_defect,
    })
}

/// Energy series for adversarially coupled (zero-sum included) games:
/// `|x|^2_{P^-1 D_eta^-1} + |y|^2_{Q^-1 D_gamma^-1} + <x, C y>`.
pub fn energy_posneg(traj: &Trajectory) -> Result<EnergyReport, DiagnosticsError> {
    energy_report(traj, EnergyForm::PosNeg)
}

/// Energy series for aligned (coordination included) games:
/// `|x|^2_{P^-1 D_eta^-1} - |y|^2_{Q^-1 D_gamma^-1} + <x, C y>`.
pub fn energy_pospos(traj: &Trajectory) -> Result<EnergyReport, DiagnosticsError> {
    energy_report(traj, EnergyForm::PosPos)
}

/// Exact total regret of an x-side agent after its (T+1)-th update, from the
/// first and last strategies alone:
/// `<x0 - 2x, D^-1 x0> + <2x - xT1, D^-1 xT1>`.
pub fn regret_closed_form(
    x0: &[f64],
    x_t1: &[f64],
    x_fixed: &[f64],
    eta: &[f64],
) -> Result<f64, DiagnosticsError> {
    let n = x0.len();
    if x_t1.len() != n || x_fixed.len() != n || eta.len() != n {
        return Err(DiagnosticsError::DimensionMismatch(
            "regret closed form needs equal-length vectors".into(),
        ));
    }
    let mut acc = NeumaierSum::new();
    for r in 0..n {
        acc.add((x0[r] - 2.0 * x_fixed[r]) * x0[r] / eta[r]);
        acc.add((2.0 * x_fixed[r] - x_t1[r]) * x_t1[r] / eta[r]);
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegretConvention {
    /// Measured right after the agent's own update (the exact identity).
    AfterX,
    /// Additionally counts the opponent's final reply.
    AfterY,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegretReport {
    pub fixed_strategy: Vec<f64>,
    pub simulated_total: f64,
    pub closed_form_total: f64,
    pub half_convention: RegretConvention,
}

impl RegretReport {
    /// `|sim - cf| <= tol (1 + |cf|)`; the identity the AfterX convention
    /// guarantees.
    pub fn matches_closed_form(&self, tol: f64) -> bool {
        (self.simulated_total - self.closed_form_total).abs()
            <= tol * (1.0 + self.closed_form_total.abs())
    }
}

fn require_alternating_consecutive(traj: &Trajectory) -> Result<(), DiagnosticsError> {
    if !traj.is_alternating() || traj.half_states.is_none() {
        return Err(DiagnosticsError::MissingHalfStates);
    }
    if !traj.has_consecutive_states() {
        return Err(DiagnosticsError::NonConsecutiveStates);
    }
    Ok(())
}

/// Simulated total regret of x-side agent `agent` with respect to
/// `x_fixed`, summing `<2x - x^{t+1} - x^t, (x_eff y^t)_agent>` over the
/// trajectory (plus the opponent's final reply under [`RegretConvention::AfterY`]).
pub fn regret_simulated(
    traj: &Trajectory,
    agent: usize,
    x_fixed: &[f64],
    convention: RegretConvention,
) -> Result<RegretReport, DiagnosticsError> {
    require_alternating_consecutive(traj)?;
    let view = AltView::for_trajectory(traj)?;
    let range = view.agent_range(agent)?;
    if x_fixed.len() != range.len() {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "fixed strategy has length {}, agent {agent} has {}",
            x_fixed.len(),
            range.len()
        )));
    }
    let m = traj.states.len() - 1;
    let xs: Vec<Vec<f64>> =
        traj.states.iter().map(|s| view.stack_x(s)[range.clone()].to_vec()).collect();
    let mut acc = NeumaierSum::new();
    for t in 0..m {
        let g = view.x_gradient_slice(&traj.states[t], &range);
        let mut diff = vec![0.0; range.len()];
        for r in 0..range.len() {
            diff[r] = 2.0 * x_fixed[r] - xs[t + 1][r] - xs[t][r];
        }
        acc.add(dot_compensated(&diff, &g));
    }
    if convention == RegretConvention::AfterY {
        let g = view.x_gradient_slice(&traj.states[m], &range);
        let mut diff = vec![0.0; range.len()];
        for r in 0..range.len() {
            diff[r] = x_fixed[r] - xs[m][r];
        }
        acc.add(dot_compensated(&diff, &g));
    }
    let eta = &view.d_eta[range.clone()];
    let closed = regret_closed_form(&xs[0], &xs[m], x_fixed, eta)?;
    Ok(RegretReport {
        fixed_strategy: x_fixed.to_vec(),
        simulated_total: acc.value(),
        closed_form_total: closed,
        half_convention: convention,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityReport {
    pub simulated: f64,
    pub closed_form: f64,
}

/// Cumulative utility of an x-side agent after its last update: simulated
/// `sum <x^{t+1} + x^t, (x_eff y^t)_agent>` and the closed form
/// `<xT1, D^-1 xT1> - <x0, D^-1 x0>`.
pub fn cumulative_utility(
    traj: &Trajectory,
    agent: usize,
) -> Result<UtilityReport, DiagnosticsError> {
    require_alternating_consecutive(traj)?;
    let view = AltView::for_trajectory(traj)?;
    let range = view.agent_range(agent)?;
    let m = traj.states.len() - 1;
    let xs: Vec<Vec<f64>> =
        traj.states.iter().map(|s| view.stack_x(s)[range.clone()].to_vec()).collect();
    let mut acc = NeumaierSum::new();
    for t in 0..m {
        let g = view.x_gradient_slice(&traj.states[t], &range);
        let sum: Vec<f64> = (0..range.len()).map(|r| xs[t + 1][r] + xs[t][r]).collect();
        acc.add(dot_compensated(&sum, &g));
    }
    let eta = &view.d_eta[range.clone()];
    let mut cf = NeumaierSum::new();
    for r in 0..range.len() {
        cf.add(xs[m][r] * xs[m][r] / eta[r]);
        cf.add(-(xs[0][r] * xs[0][r] / eta[r]));
    }
    Ok(UtilityReport { simulated: acc.value(), closed_form: cf.value() })
}

/// Orbit bound certificate for alternating dynamics.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitBound {
    /// Bound on `|x|^2_{P^-1 D_eta^-1} + |y|^2_{Q^-1 D_gamma^-1}`
    /// (infinite when the rate condition fails).
    pub weighted_bound: f64,
    /// Euclidean bound on `|x|` implied by the norm comparison lemma.
    pub euclidean_bound: f64,
    pub initial_energy: f64,
    pub rate_product: f64,
    pub rate_threshold: f64,
    pub rate_condition_ok: bool,
    pub commuting_defect: f64,
}

/// The closed-form bound `E0 / (1 - |C| prod / 2)` with
/// `prod = |P^1/2 D_eta^1/2| |Q^1/2 D_gamma^1/2|`, valid when
/// `prod < 2 / |C|` strictly.
pub fn bounded_orbit_bound(
    game: &NetworkGame,
    init: &JointState,
    rates: &LearningRates,
) -> Result<OrbitBound, DiagnosticsError> {
    let native2 = game.n_agents() == 2 && init.x.len() == 1;
    let view = AltView::for_game(game, native2, rates)?;
    if !view.posneg_ok {
        return Err(DiagnosticsError::WrongGameClass(
            "orbit bound needs an adversarial underlying coupling".into(),
        ));
    }
    let e0 = view.energy(init, EnergyForm::PosNeg);
    let n = view.d_eta.len();
    let pd = view.x_weight.as_dense(n);
    let mut pd_eta = pd.clone();
    for r in 0..n {
        for c in 0..n {
            pd_eta.set(r, c, pd.get(r, c) * view.d_eta[c]);
        }
    }
    let ny = view.d_gamma.len();
    let qd = view.y_weight.as_dense(ny);
    let mut qd_gamma = qd.clone();
    for r in 0..ny {
        for c in 0..ny {
            qd_gamma.set(r, c, qd.get(r, c) * view.d_gamma[c]);
        }
    }
    // For commuting symmetric factors, |P^1/2 D^1/2| = sqrt(|P D|).
    let x_factor = spectral_norm(&pd_eta, SPECTRAL_TOL).value.sqrt();
    let y_factor = spectral_norm(&qd_gamma, SPECTRAL_TOL).value.sqrt();
    let product = x_factor * y_factor;
    let coupling_norm = spectral_norm(&view.coupling, SPECTRAL_TOL).value;
    let threshold = if coupling_norm == 0.0 { f64::INFINITY } else { 2.0 / coupling_norm };
    let ok = product < threshold;
    let weighted = if ok { e0 / (1.0 - coupling_norm * product / 2.0) } else { f64::INFINITY };
    let euclidean = x_factor * weighted.max(0.0).sqrt();
    Ok(OrbitBound {
        weighted_bound: weighted,
        euclidean_bound: euclidean,
        initial_energy: e0,
        rate_product: product,
        rate_threshold: threshold,
        rate_condition_ok: ok,
        commuting_defect: view.commuting_defect,
    })
}

/// Residuals of the dual time-average at a list of horizons.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub horizons: Vec<u64>,
    /// `| sum_{t<T} x_eff y^t | / T` per horizon.
    pub residuals: Vec<f64>,
    /// `| D_eta^-1 (x^T - x^0) | / T` per horizon; equals the residual by the
    /// telescoping identity.
    pub transported: Vec<f64>,
    /// Least-squares slope of log residual against log horizon.
    pub slope: Option<f64>,
    /// Constant such that every residual is bounded by `c / T` when the rate
    /// condition holds.
    pub c_bound: f64,
    pub rate_condition_ok: bool,
    pub bound_satisfied: bool,
}

/// Measures `| sum_{t<T} x_eff y^t / T |` at each horizon, the slope of its
/// log-log decay, and the certificate constant from the orbit bound.
pub fn time_average_convergence(
    traj: &Trajectory,
    horizons: &[u64],
) -> Result<ConvergenceReport, DiagnosticsError> {
    if horizons.is_empty() {
        return Err(DiagnosticsError::EmptyHorizons);
    }
    require_alternating_consecutive(traj)?;
    let view = AltView::for_trajectory(traj)?;
    let m = traj.states.len() as u64 - 1;
    let mut sorted: Vec<u64> = horizons.to_vec();
    sorted.sort_unstable();
    if *sorted.last().unwrap() > m {
        return Err(DiagnosticsError::HorizonOutOfRange(*sorted.last().unwrap()));
    }

    let dim_y = view.d_gamma.len();
    let mut y_sum: Vec<NeumaierSum> = vec![NeumaierSum::new(); dim_y];
    let mut residuals = Vec::with_capacity(sorted.len());
    let mut transported = Vec::with_capacity(sorted.len());
    let x0 = view.stack_x(&traj.states[0]);
    let mut next = 0usize;
    for t in 0..=m {
        while next < sorted.len() && sorted[next] == t {
            let sums: Vec<f64> = y_sum.iter().map(NeumaierSum::value).collect();
            let g = view.x_eff.matvec(&sums);
            let res = g.iter().map(|v| v * v).sum::<f64>().sqrt() / t as f64;
            residuals.push(res);
            let xt = view.stack_x(&traj.states[t as usize]);
            let tr = xt
                .iter()
                .zip(&x0)
                .zip(&view.d_eta)
                .map(|((a, b), d)| ((a - b) / d) * ((a - b) / d))
                .sum::<f64>()
                .sqrt()
                / t as f64;
            transported.push(tr);
            next += 1;
        }
        if t < m {
            let y = view.stack_y(&traj.states[t as usize]);
            for (acc, v) in y_sum.iter_mut().zip(&y) {
                acc.add(*v);
            }
        }
    }

    let bound = bounded_orbit_bound(
        &traj.game,
        traj.initial(),
        &traj.rates,
    )?;
    let inv_eta_norm = 1.0 / view.d_eta.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_factor = {
        let n = view.d_eta.len();
        let pd = view.x_weight.as_dense(n);
        let mut pd_eta = pd.clone();
        for r in 0..n {
            for c in 0..n {
                pd_eta.set(r, c, pd.get(r, c) * view.d_eta[c]);
            }
        }
        spectral_norm(&pd_eta, SPECTRAL_TOL).value.sqrt()
    };
    let c_bound = if bound.rate_condition_ok {
        2.0 * inv_eta_norm * x_factor * bound.weighted_bound.max(0.0).sqrt()
    } else {
        f64::INFINITY
    };
    let bound_satisfied = sorted
        .iter()
        .zip(&residuals)
        .all(|(t, r)| *r <= c_bound / *t as f64);

    let pts: Vec<(f64, f64)> = sorted
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r > 0.0)
        .map(|(t, r)| ((*t as f64).ln(), r.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    } else {
        None
    };

    Ok(ConvergenceReport {
        horizons: sorted,
        residuals,
        transported,
        slope,
        c_bound,
        rate_condition_ok: bound.rate_condition_ok,
        bound_satisfied,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceFinding {
    pub eps: f64,
    pub first_return: Option<u64>,
}

/// For each tolerance, scans the recorded full states for the first
/// iteration at distance below `eps` from the initial state. Absence within
/// the horizon is reported, not an error.
pub fn recurrence_search(traj: &Trajectory, eps_schedule: &[f64]) -> Vec<RecurrenceFinding> {
    eps_schedule
        .iter()
        .map(|&eps| {
            let hit = traj
                .states
                .iter()
                .zip(&traj.iterations)
                .skip(1)
                .find(|(s, _)| s.distance(traj.initial()) < eps)
                .map(|(_, t)| *t);
            RecurrenceFinding { eps, first_return: hit }
        })
        .collect()
}

/// Determinants of the two half-update Jacobians
/// `[[I, D_eta A], [0, I]]` and `[[I, 0], [D_gamma B, I]]`, built explicitly
/// and factored by LU. Volume preservation makes both exactly one.
pub fn volume_jacobian_check(
    game: &NetworkGame,
    rates: &LearningRates,
) -> Result<(f64, f64), DiagnosticsError> {
    let native2 = game.n_agents() == 2;
    let view = AltView::for_game(game, native2, rates)?;
    let nx = view.d_eta.len();
    let ny = view.d_gamma.len();
    let total = nx + ny;
    let mut j1 = DenseMatrix::identity(total);
    for r in 0..nx {
        for c in 0..ny {
            j1.set(r, nx + c, view.d_eta[r] * view.x_eff.get(r, c));
        }
    }
    let mut j2 = DenseMatrix::identity(total);
    for r in 0..ny {
        for c in 0..nx {
            j2.set(nx + r, c, view.d_gamma[r] * view.y_eff.get(r, c));
        }
    }
    let d1 = Lu::factor(&j1).map(|lu| lu.det()).unwrap_or(0.0);
    let d2 = Lu::factor(&j2).map(|lu| lu.det()).unwrap_or(0.0);
    Ok((d1, d2))
}

/// Round-robin bookkeeping: agent 1's payoff is credited after every single
/// agent's update in the robin, since each update changes the joint state
/// the agent is exposed to.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRobinReport {
    pub cumulative_utility: f64,
    pub regret_vs_zero: f64,
}

pub fn round_robin_utility(
    game: &NetworkGame,
    init: &[Vec<f64>],
    rates: &LearningRates,
    iterations: u64,
) -> Result<RoundRobinReport, DiagnosticsError> {
    game.check_profile(init)?;
    rates.matches(game)?;
    let mut work = init.to_vec();
    let mut acc = NeumaierSum::new();
    for _ in 0..iterations {
        for i in 0..game.n_agents() {
            let g = game.gradient(i, &work);
            for (r, gv) in g.iter().enumerate() {
                work[i][r] += rates.eta(i)[r] * gv;
            }
            let payoff = dot_compensated(&work[0], &game.gradient(0, &work));
            acc.add(payoff);
        }
    }
    let utility = acc.value();
    Ok(RoundRobinReport { cumulative_utility: utility, regret_vs_zero: -utility })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run, Budget};
    use crate::game::make_network_game;
    use std::collections::BTreeMap;

    fn scalar_game(a12: f64, a21: f64) -> NetworkGame {
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), DenseMatrix::scalar(a12));
        blocks.insert((1, 0), DenseMatrix::scalar(a21));
        make_network_game(vec![1, 1], blocks, None, None).unwrap()
    }

    fn pennies_trajectory(iters: u64) -> Trajectory {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![1.0], vec![0.0]);
        run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(iters), 1).unwrap()
    }

    #[test]
    fn posneg_energy_hand_example() {
        let traj = pennies_trajectory(1);
        let rep = energy_posneg(&traj).unwrap();
        assert_eq!(rep.series[0], 2.0);
        assert_eq!(rep.series[1], 2.0);
        assert_eq!(rep.max_relative_drift, 0.0);
    }

    #[test]
    fn posneg_energy_rejects_coordination() {
        let g = scalar_game(1.0, 1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![1.0], vec![0.0]);
        let traj = run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(3), 1).unwrap();
        assert!(matches!(energy_posneg(&traj), Err(DiagnosticsError::WrongGameClass(_))));
        let rep = energy_pospos(&traj).unwrap();
        // E0 = 2*1 - 0 + 0 = 2; after one step x=1, y=0.5: 2 - 0.5 + 0.5 = 2.
        assert_eq!(rep.series[0], 2.0);
        assert_eq!(rep.series[1], 2.0);
    }

    #[test]
    fn chaos_instance_energy_is_exact_despite_growth() {
        let g = scalar_game(1.0, 1.0);
        let rates = LearningRates::uniform(&g, 1.0).unwrap();
        let init = JointState::pair(vec![1.0], vec![1.0]);
        let traj = run(&g, Algorithm::Alt2, &init, &rates, Budget::Iterations(30), 1).unwrap();
        // One step maps (1,1) to (2,3).
        assert_eq!(traj.states[1].x[0][0], 2.0);
        assert_eq!(traj.states[1].y.as_ref().unwrap()[0][0], 3.0);
        let rep = energy_pospos(&traj).unwrap();
        for e in &rep.series {
            assert_eq!(*e, 1.0, "conserved value is exactly 1");
        }
    }

    #[test]
    fn regret_closed_form_scalar_example() {
        let v = regret_closed_form(&[1.0], &[3.0], &[0.0], &[1.0]).unwrap();
        assert_eq!(v, -8.0);
        assert_eq!(regret_closed_form(&[0.0], &[0.0], &[0.0], &[1.0]).unwrap(), 0.0);
        assert!(regret_closed_form(&[1.0, 2.0], &[3.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn regret_identity_on_alternating_run() {
        let traj = pennies_trajectory(200);
        let rep = regret_simulated(&traj, 0, &[0.25], RegretConvention::AfterX).unwrap();
        assert!(rep.matches_closed_form(1e-10), "sim {} vs cf {}", rep.simulated_total, rep.closed_form_total);
    }

    #[test]
    fn utility_identity_on_alternating_run() {
        let traj = pennies_trajectory(150);
        let rep = cumulative_utility(&traj, 0).unwrap();
        assert!(
            (rep.simulated - rep.closed_form).abs() <= 1e-10 * (1.0 + rep.closed_form.abs()),
            "sim {} vs cf {}",
            rep.simulated,
            rep.closed_form
        );
    }

    #[test]
    fn orbit_bound_scalar_example() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![1.0], vec![0.0]);
        let b = bounded_orbit_bound(&g, &init, &rates).unwrap();
        assert!((b.weighted_bound - 8.0 / 3.0).abs() < 1e-8, "got {}", b.weighted_bound);
        assert!(b.rate_condition_ok);

        let rates = LearningRates::uniform(&g, 2.0).unwrap();
        let init = JointState::pair(vec![0.0], vec![-2.0]);
        let b = bounded_orbit_bound(&g, &init, &rates).unwrap();
        assert!(!b.rate_condition_ok, "product equals the threshold, not strictly below");
        assert!(b.weighted_bound.is_infinite());
    }

    #[test]
    fn zero_initial_state_has_zero_bound() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let init = JointState::pair(vec![0.0], vec![0.0]);
        let b = bounded_orbit_bound(&g, &init, &rates).unwrap();
        assert_eq!(b.weighted_bound, 0.0);
    }

    #[test]
    fn recurrence_on_cycle_and_stationary_trajectories() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let zero = JointState::pair(vec![0.0], vec![0.0]);
        let traj = run(&g, Algorithm::Alt2, &zero, &rates, Budget::Iterations(5), 1).unwrap();
        let found = recurrence_search(&traj, &[1e-12, 1.0]);
        assert_eq!(found[0].first_return, Some(1));
        assert_eq!(found[1].first_return, Some(1));

        let traj = pennies_trajectory(100_000);
        let found = recurrence_search(&traj, &[0.1]);
        assert!(found[0].first_return.is_some(), "orbit returns within 0.1 of the start");
    }

    #[test]
    fn volume_jacobians_are_unimodular() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform_pair(&g, 0.7, 1.3).unwrap();
        let (d1, d2) = volume_jacobian_check(&g, &rates).unwrap();
        assert!((d1 - 1.0).abs() < 1e-12 && (d2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_average_on_stationary_trajectory_is_zero() {
        let g = scalar_game(1.0, -1.0);
        let rates = LearningRates::uniform(&g, 0.5).unwrap();
        let zero = JointState::pair(vec![0.0], vec![0.0]);
        let traj = run(&g, Algorithm::Alt2, &zero, &rates, Budget::Iterations(64), 1).unwrap();
        let rep = time_average_convergence(&traj, &[16, 32, 64]).unwrap();
        assert!(rep.residuals.iter().all(|r| *r == 0.0));
        assert!(rep.slope.is_none());
        assert!(rep.bound_satisfied);
    }

    #[test]
    fn empty_horizons_rejected() {
        let traj = pennies_trajectory(4);
        assert!(matches!(
            time_average_convergence(&traj, &[]),
            Err(DiagnosticsError::EmptyHorizons)
        ));
    }
}
