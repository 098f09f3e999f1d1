//! Network matrix games: representation, validation, classification, the
//! two-meta-agent reduction, the linear-payout shift, and the norm machinery
//! used by the conservation diagnostics.
//!
//! A game stores, for every ordered pair of distinct agents, the *effective*
//! payoff block that multiplies the opponent's strategy in the utility
//! gradient. For transformed games the positive-definite factor is stored
//! alongside, so block `(i, j)` factors as `P_i · C^(ij)` with `C` the
//! underlying family; classification and the energy geometry recover `C` by
//! solving against `P_i`. Diagonal blocks are implicitly zero and never
//! stored.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::compensated::dot_compensated;
use crate::linalg::{
    check_positive_definite, spectral_norm, DenseMatrix, LinalgError, Lu, SpectralEstimate,
    SPECTRAL_TOL,
};

#[derive(Debug, Error)]
pub enum GameError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("transform {agent} is not symmetric positive-definite")]
    NotPositiveDefinite { agent: usize },
    #[error("non-finite entry in {what}")]
    NonFiniteEntry { what: String },
    #[error("transform {agent} is singular")]
    SingularTransform { agent: usize },
    #[error("supplied profile is not an equilibrium: residual {residual:e} exceeds {tol:e}")]
    NotAnEquilibrium { residual: f64, tol: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight matrix is not positive-definite")]
    WeightNotPositiveDefinite,
}

impl From<LinalgError> for GameError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NonFiniteEntry { row, col } => {
                GameError::NonFiniteEntry { what: format!("matrix entry ({row}, {col})") }
            }
            LinalgError::NotPositiveDefinite => GameError::WeightNotPositiveDefinite,
            other => GameError::ShapeMismatch(other.to_string()),
        }
    }
}

/// Free-form provenance attached to generated or canonical games.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct GameMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl GameMetadata {
    pub fn is_empty(&self) -> bool {
        self.seed.is_none() && self.provenance.is_none()
    }
}

/// An N-agent network matrix game over unconstrained real strategy spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGame {
    dims: Vec<usize>,
    /// Effective payoff blocks, keyed by 0-based `(i, j)`, all `i != j` present.
    blocks: BTreeMap<(usize, usize), DenseMatrix>,
    transforms: Option<Vec<DenseMatrix>>,
    linear_terms: Option<Vec<Vec<f64>>>,
    pub metadata: GameMetadata,
}

/// Validates shapes, finiteness and transform positive-definiteness, and
/// materializes absent off-diagonal blocks as zeros.
pub fn make_network_game(
    dims: Vec<usize>,
    blocks: BTreeMap<(usize, usize), DenseMatrix>,
    transforms: Option<Vec<DenseMatrix>>,
    linear_terms: Option<Vec<Vec<f64>>>,
) -> Result<NetworkGame, GameError> {
    let n = dims.len();
    if n < 2 {
        return Err(GameError::ShapeMismatch(format!("need at least 2 agents, got {n}")));
    }
    if dims.iter().any(|&s| s == 0) {
        return Err(GameError::ShapeMismatch("every agent needs at least one strategy".into()));
    }
    let mut full = BTreeMap::new();
    for (&(i, j), block) in &blocks {
        if i == j {
            return Err(GameError::ShapeMismatch(format!("diagonal block ({i}, {j}) not allowed")));
        }
        if i >= n || j >= n {
            return Err(GameError::ShapeMismatch(format!("block ({i}, {j}) out of range")));
        }
        if block.rows() != dims[i] || block.cols() != dims[j] {
            return Err(GameError::ShapeMismatch(format!(
                "block ({i}, {j}) is {}x{}, expected {}x{}",
                block.rows(),
                block.cols(),
                dims[i],
                dims[j]
            )));
        }
        block
            .check_finite()
            .map_err(|_| GameError::NonFiniteEntry { what: format!("block ({i}, {j})") })?;
        full.insert((i, j), block.clone());
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                full.entry((i, j)).or_insert_with(|| DenseMatrix::zeros(dims[i], dims[j]));
            }
        }
    }
    if let Some(ts) = &transforms {
        if ts.len() != n {
            return Err(GameError::ShapeMismatch(format!(
                "expected {n} transforms, got {}",
                ts.len()
            )));
        }
        for (i, p) in ts.iter().enumerate() {
            if p.rows() != dims[i] || p.cols() != dims[i] {
                return Err(GameError::ShapeMismatch(format!(
                    "transform {i} is {}x{}, expected {}x{}",
                    p.rows(),
                    p.cols(),
                    dims[i],
                    dims[i]
                )));
            }
            check_positive_definite(p).map_err(|_| GameError::NotPositiveDefinite { agent: i })?;
        }
    }
    if let Some(bs) = &linear_terms {
        if bs.len() != n {
            return Err(GameError::ShapeMismatch(format!(
                "expected {n} linear terms, got {}",
                bs.len()
            )));
        }
        for (i, b) in bs.iter().enumerate() {
            if b.len() != dims[i] {
                return Err(GameError::ShapeMismatch(format!(
                    "linear term {i} has length {}, expected {}",
                    b.len(),
                    dims[i]
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(GameError::NonFiniteEntry { what: format!("linear term {i}") });
            }
        }
    }
    Ok(NetworkGame {
        dims,
        blocks: full,
        transforms,
        linear_terms,
        metadata: GameMetadata::default(),
    })
}

impl NetworkGame {
    pub fn n_agents(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn block(&self, i: usize, j: usize) -> &DenseMatrix {
        &self.blocks[&(i, j)]
    }

    pub fn blocks(&self) -> &BTreeMap<(usize, usize), DenseMatrix> {
        &self.blocks
    }

    pub fn transforms(&self) -> Option<&[DenseMatrix]> {
        self.transforms.as_deref()
    }

    pub fn transform_or_identity(&self, agent: usize) -> DenseMatrix {
        match &self.transforms {
            Some(ts) => ts[agent].clone(),
            None => DenseMatrix::identity(self.dims[agent]),
        }
    }

    pub fn linear_terms(&self) -> Option<&[Vec<f64>]> {
        self.linear_terms.as_deref()
    }

    pub fn with_metadata(mut self, metadata: GameMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    /// True when all agents share the same strategy count.
    pub fn uniform_dim(&self) -> Option<usize> {
        let k = self.dims[0];
        self.dims.iter().all(|&d| d == k).then_some(k)
    }

    pub fn check_profile(&self, profile: &[Vec<f64>]) -> Result<(), GameError> {
        if profile.len() != self.n_agents() {
            return Err(GameError::DimensionMismatch(format!(
                "profile has {} agents, game has {}",
                profile.len(),
                self.n_agents()
            )));
        }
        for (i, x) in profile.iter().enumerate() {
            if x.len() != self.dims[i] {
                return Err(GameError::DimensionMismatch(format!(
                    "agent {i} strategy has length {}, expected {}",
                    x.len(),
                    self.dims[i]
                )));
            }
        }
        Ok(())
    }

    /// Utility gradient of agent `i` at `profile`:
    /// `sum_{j != i} block(i, j) x_j - b_i`.
    pub fn gradient(&self, i: usize, profile: &[Vec<f64>]) -> Vec<f64> {
        let mut g = vec![0.0; self.dims[i]];
        for j in 0..self.n_agents() {
            if j != i {
                self.blocks[&(i, j)].matvec_into(&profile[j], &mut g);
            }
        }
        if let Some(bs) = &self.linear_terms {
            for (gv, bv) in g.iter_mut().zip(&bs[i]) {
                *gv -= bv;
            }
        }
        g
    }

    /// Per-agent gradient components of the Nash condition at `profile`.
    pub fn nash_residual_components(
        &self,
        profile: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, GameError> {
        self.check_profile(profile)?;
        Ok((0..self.n_agents()).map(|i| self.gradient(i, profile)).collect())
    }

    /// Euclidean norm of the stacked gradient vector; zero exactly at the
    /// Nash equilibria of the unconstrained game.
    pub fn nash_residual(&self, profile: &[Vec<f64>]) -> Result<f64, GameError> {
        let comps = self.nash_residual_components(profile)?;
        let mut s = 0.0;
        for c in comps {
            for v in c {
                s += v * v;
            }
        }
        Ok(s.sqrt())
    }

    /// Underlying block `C^(ij) = P_i^{-1} block(i, j)`; identity transform
    /// when transforms are absent.
    pub fn underlying_block(&self, i: usize, j: usize) -> Result<DenseMatrix, GameError> {
        match &self.transforms {
            None => Ok(self.blocks[&(i, j)].clone()),
            Some(ts) => {
                let lu = Lu::factor(&ts[i]).map_err(|_| GameError::SingularTransform { agent: i })?;
                Ok(lu.solve_matrix(&self.blocks[&(i, j)]))
            }
        }
    }
}

/// Classification flags for a game at a given witness tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameClassification {
    pub is_zero_sum: bool,
    pub is_coordination: bool,
    pub is_pos_neg_definite: bool,
    pub is_pos_pos_definite: bool,
    pub witness_tolerance: f64,
}

impl GameClassification {
    /// Games whose alternating dynamics conserve the adversarial energy form.
    pub fn admits_pos_neg_energy(&self) -> bool {
        self.is_zero_sum || self.is_pos_neg_definite
    }

    /// Games whose alternating dynamics conserve the coordination energy form.
    pub fn admits_pos_pos_energy(&self) -> bool {
        self.is_coordination || self.is_pos_pos_definite
    }
}

pub const CLASSIFY_TOL: f64 = 1e-9;

/// Entrywise classification per the zero-sum / coordination definitions; the
/// transformed flags factor `P_i` out of each block first. Ties resolve
/// toward "not classified".
pub fn classify_game(game: &NetworkGame, tol: f64) -> Result<GameClassification, GameError> {
    let n = game.n_agents();
    let mut zero_sum = true;
    let mut coordination = true;
    for i in 0..n {
        for j in (i + 1)..n {
            let a_ij = game.block(i, j);
            let a_ji_t = game.block(j, i).transpose();
            if a_ij.max_abs_diff(&a_ji_t.negated()) > tol {
                zero_sum = false;
            }
            if a_ij.max_abs_diff(&a_ji_t) > tol {
                coordination = false;
            }
        }
    }
    let (mut pos_neg, mut pos_pos) = (false, false);
    if game.transforms().is_some() {
        pos_neg = true;
        pos_pos = true;
        for i in 0..n {
            for j in (i + 1)..n {
                let c_ij = game.underlying_block(i, j)?;
                let c_ji = game.underlying_block(j, i)?;
                let c_ij_t = c_ij.transpose();
                if c_ji.max_abs_diff(&c_ij_t.negated()) > tol {
                    pos_neg = false;
                }
                if c_ji.max_abs_diff(&c_ij_t) > tol {
                    pos_pos = false;
                }
            }
        }
    }
    Ok(GameClassification {
        is_zero_sum: zero_sum,
        is_coordination: coordination,
        is_pos_neg_definite: pos_neg,
        is_pos_pos_definite: pos_pos,
        witness_tolerance: tol,
    })
}

/// The two-meta-agent reduction: all agents stacked into one strategy vector,
/// with the block payoff matrix and block-diagonal transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGame {
    pub a_bar: DenseMatrix,
    pub p_bar: DenseMatrix,
    pub q_bar: DenseMatrix,
    /// `agent_offsets[i]..agent_offsets[i] + dims[i]` is agent i's slice.
    pub agent_offsets: Vec<usize>,
    pub dims: Vec<usize>,
}

pub fn reduce_to_meta(game: &NetworkGame) -> MetaGame {
    let n = game.n_agents();
    let total = game.total_dim();
    let mut offsets = Vec::with_capacity(n);
    let mut acc = 0;
    for i in 0..n {
        offsets.push(acc);
        acc += game.dim(i);
    }
    let mut a_bar = DenseMatrix::zeros(total, total);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = game.block(i, j);
            for r in 0..b.rows() {
                for c in 0..b.cols() {
                    a_bar.set(offsets[i] + r, offsets[j] + c, b.get(r, c));
                }
            }
        }
    }
    let mut p_bar = DenseMatrix::zeros(total, total);
    for i in 0..n {
        let p = game.transform_or_identity(i);
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                p_bar.set(offsets[i] + r, offsets[i] + c, p.get(r, c));
            }
        }
    }
    let q_bar = p_bar.clone();
    MetaGame { a_bar, p_bar, q_bar, agent_offsets: offsets, dims: game.dims().to_vec() }
}

impl MetaGame {
    pub fn total_dim(&self) -> usize {
        self.a_bar.rows()
    }

    pub fn stack(&self, profile: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for x in profile {
            out.extend_from_slice(x);
        }
        out
    }

    pub fn unstack(&self, stacked: &[f64]) -> Vec<Vec<f64>> {
        self.dims
            .iter()
            .zip(&self.agent_offsets)
            .map(|(&d, &off)| stacked[off..off + d].to_vec())
            .collect()
    }

    pub fn agent_slice<'a>(&self, stacked: &'a [f64], agent: usize) -> &'a [f64] {
        let off = self.agent_offsets[agent];
        &stacked[off..off + self.dims[agent]]
    }

    pub fn extract_block(&self, i: usize, j: usize) -> DenseMatrix {
        let (ri, rj) = (self.agent_offsets[i], self.agent_offsets[j]);
        let mut out = DenseMatrix::zeros(self.dims[i], self.dims[j]);
        for r in 0..self.dims[i] {
            for c in 0..self.dims[j] {
                out.set(r, c, self.a_bar.get(ri + r, rj + c));
            }
        }
        out
    }

    /// The duplicated-agent game as an ordinary 2-agent game: both meta
    /// agents use the stacked payoff matrix, with block-diagonal transforms.
    pub fn to_two_agent_game(&self) -> NetworkGame {
        let n = self.total_dim();
        let mut blocks = BTreeMap::new();
        blocks.insert((0usize, 1usize), self.a_bar.clone());
        blocks.insert((1usize, 0usize), self.a_bar.clone());
        make_network_game(
            vec![n, n],
            blocks,
            Some(vec![self.p_bar.clone(), self.q_bar.clone()]),
            None,
        )
        .expect("meta reduction always yields a valid 2-agent game")
    }
}

/// Shifts away linear payout terms given an equilibrium `x_star` with
/// `sum_j block(i, j) x*_j = b_i`; the returned game has no linear terms and
/// its gradients at `z` equal the original gradients at `z + x_star`.
pub fn shift_linear_payouts(
    game: &NetworkGame,
    x_star: &[Vec<f64>],
    tol: f64,
) -> Result<NetworkGame, GameError> {
    game.check_profile(x_star)?;
    let mut worst = 0.0f64;
    for i in 0..game.n_agents() {
        let g = game.gradient(i, x_star);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(norm);
    }
    if worst > tol {
        return Err(GameError::NotAnEquilibrium { residual: worst, tol });
    }
    let mut shifted = game.clone();
    shifted.linear_terms = None;
    Ok(shifted)
}

/// `sqrt(x' W x)` for positive-definite `W`.
pub fn weighted_norm(x: &[f64], w: &DenseMatrix) -> Result<f64, GameError> {
    check_positive_definite(w).map_err(|_| GameError::WeightNotPositiveDefinite)?;
    if x.len() != w.rows() {
        return Err(GameError::DimensionMismatch(format!(
            "vector length {} vs weight {}x{}",
            x.len(),
            w.rows(),
            w.cols()
        )));
    }
    let wx = w.matvec(x);
    Ok(dot_compensated(x, &wx).max(0.0).sqrt())
}

/// Learning-rate threshold report for alternating dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateThreshold {
    /// `2 / ||C||` with `C` the underlying stacked payoff matrix
    /// (infinite for the zero game).
    pub exact: f64,
    /// `2 / (k (N - 1))` for square uniform-dimension games.
    pub cheap_bound: Option<f64>,
    pub spectral: SpectralEstimate,
}

pub fn learning_rate_threshold(game: &NetworkGame) -> Result<RateThreshold, GameError> {
    let meta = reduce_to_meta(game);
    let c_bar = underlying_meta_matrix(game, &meta)?;
    let est = spectral_norm(&c_bar, SPECTRAL_TOL);
    let exact = if est.value == 0.0 { f64::INFINITY } else { 2.0 / est.value };
    let cheap = game
        .uniform_dim()
        .map(|k| 2.0 / (k as f64 * (game.n_agents() as f64 - 1.0)));
    Ok(RateThreshold { exact, cheap_bound: cheap, spectral: est })
}

/// Stacks the underlying blocks `C^(ij) = P_i^{-1} block(i, j)`.
pub fn underlying_meta_matrix(
    game: &NetworkGame,
    meta: &MetaGame,
) -> Result<DenseMatrix, GameError> {
    if game.transforms().is_none() {
        return Ok(meta.a_bar.clone());
    }
    let n = game.n_agents();
    let total = game.total_dim();
    let mut c_bar = DenseMatrix::zeros(total, total);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = game.underlying_block(i, j)?;
            for r in 0..c.rows() {
                for cc in 0..c.cols() {
                    c_bar.set(meta.agent_offsets[i] + r, meta.agent_offsets[j] + cc, c.get(r, cc));
                }
            }
        }
    }
    Ok(c_bar)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scalar_blocks(a12: f64, a21: f64) -> BTreeMap<(usize, usize), DenseMatrix> {
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), DenseMatrix::scalar(a12));
        blocks.insert((1, 0), DenseMatrix::scalar(a21));
        blocks
    }

    pub(crate) fn matching_pennies() -> NetworkGame {
        make_network_game(vec![1, 1], scalar_blocks(1.0, -1.0), None, None).unwrap()
    }

    #[test]
    fn scalar_zero_sum_game_is_valid_and_classified() {
        let g = matching_pennies();
        let c = classify_game(&g, CLASSIFY_TOL).unwrap();
        assert!(c.is_zero_sum);
        assert!(!c.is_coordination);
        assert!(!c.is_pos_neg_definite); // no transforms present
        assert!(c.admits_pos_neg_energy());
    }

    #[test]
    fn coordination_unit_classified() {
        let g = make_network_game(vec![1, 1], scalar_blocks(1.0, 1.0), None, None).unwrap();
        let c = classify_game(&g, CLASSIFY_TOL).unwrap();
        assert!(c.is_coordination && !c.is_zero_sum);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), DenseMatrix::zeros(2, 3));
        blocks.insert((1, 0), DenseMatrix::zeros(2, 2));
        let err = make_network_game(vec![2, 2], blocks, None, None).unwrap_err();
        assert!(matches!(err, GameError::ShapeMismatch(_)));
    }

    #[test]
    fn indefinite_transform_rejected() {
        // [[1,2],[2,1]] has eigenvalues 3 and -1.
        let p = DenseMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), DenseMatrix::zeros(2, 2));
        blocks.insert((1, 0), DenseMatrix::zeros(2, 2));
        let err = make_network_game(
            vec![2, 2],
            blocks,
            Some(vec![p, DenseMatrix::identity(2)]),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, GameError::NotPositiveDefinite { agent: 0 }));
    }

    /// The two transformed games that share agent 1's payoff matrix.
    pub(crate) fn no_nash_first() -> NetworkGame {
        let a = DenseMatrix::from_rows(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), a.clone()); // P = I, effective = A
        blocks.insert((1, 0), a.transpose().negated()); // Q = I, effective = -A'
        make_network_game(
            vec![2, 2],
            blocks,
            Some(vec![DenseMatrix::identity(2), DenseMatrix::identity(2)]),
            None,
        )
        .unwrap()
    }

    pub(crate) fn no_nash_second() -> NetworkGame {
        let p = DenseMatrix::from_diag(&[2.0, 1.0]);
        let a = DenseMatrix::from_rows(vec![vec![0.5, -0.5], vec![-1.0, 1.0]]).unwrap();
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), p.matmul(&a));
        blocks.insert((1, 0), a.transpose().negated());
        make_network_game(vec![2, 2], blocks, Some(vec![p, DenseMatrix::identity(2)]), None)
            .unwrap()
    }

    #[test]
    fn no_nash_pair_classification_and_payoffs() {
        let g1 = no_nash_first();
        let g2 = no_nash_second();
        // Agent 1 sees the same effective payoff matrix in both games.
        assert_eq!(g1.block(0, 1).max_abs_diff(g2.block(0, 1)), 0.0);
        let c2 = classify_game(&g2, CLASSIFY_TOL).unwrap();
        assert!(c2.is_pos_neg_definite, "second transformed game classifies adversarial");
        assert!(!c2.is_zero_sum);
    }

    #[test]
    fn no_nash_pair_residuals_distinguish_equilibria() {
        let g1 = no_nash_first();
        let g2 = no_nash_second();
        let both_ones = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(g1.nash_residual(&both_ones).unwrap(), 0.0);

        // Isolate the agent-2 gradient (which certifies agent 1's strategy).
        let x11 = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        let c1 = g1.nash_residual_components(&x11).unwrap();
        let c2 = g2.nash_residual_components(&x11).unwrap();
        assert!(c1[1].iter().all(|v| *v == 0.0));
        assert!(c2[1].iter().any(|v| v.abs() > 0.1));
        let x21 = vec![vec![2.0, 1.0], vec![0.0, 0.0]];
        let c2 = g2.nash_residual_components(&x21).unwrap();
        assert!(c2[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nash_residual_examples() {
        let g = matching_pennies();
        assert_eq!(g.nash_residual(&vec![vec![0.0], vec![0.0]]).unwrap(), 0.0);
        let r = g.nash_residual(&vec![vec![1.0], vec![1.0]]).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(g.nash_residual(&vec![vec![1.0]]).is_err());
    }

    #[test]
    fn meta_reduction_scalar_games() {
        let g = matching_pennies();
        let meta = reduce_to_meta(&g);
        assert_eq!(meta.a_bar.to_nested(), vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);

        let mut blocks = BTreeMap::new();
        for i in 0..3usize {
            for j in 0..3usize {
                if i != j {
                    blocks.insert((i, j), DenseMatrix::scalar(1.0));
                }
            }
        }
        let g3 = make_network_game(vec![1, 1, 1], blocks, None, None).unwrap();
        let meta3 = reduce_to_meta(&g3);
        assert_eq!(
            meta3.a_bar.to_nested(),
            vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn meta_reduction_recovers_blocks_bit_exactly() {
        let g = no_nash_second();
        let meta = reduce_to_meta(&g);
        for i in 0..2 {
            for j in 0..2 {
                if i != j {
                    assert_eq!(&meta.extract_block(i, j), g.block(i, j));
                }
            }
        }
        assert_eq!(meta.extract_block(0, 0), DenseMatrix::zeros(2, 2));
        // p_bar carries the transforms on the diagonal.
        assert_eq!(meta.p_bar.get(0, 0), 2.0);
        assert_eq!(meta.p_bar.get(1, 1), 1.0);
        assert_eq!(meta.p_bar.get(2, 2), 1.0);
    }

    #[test]
    fn shift_linear_payouts_scalar_example() {
        // A12 = [1], A21 = [-1], b = (2, -3) has equilibrium x* = (3, 2).
        let g = make_network_game(
            vec![1, 1],
            scalar_blocks(1.0, -1.0),
            None,
            Some(vec![vec![2.0], vec![-3.0]]),
        )
        .unwrap();
        let x_star = vec![vec![3.0], vec![2.0]];
        let shifted = shift_linear_payouts(&g, &x_star, 1e-12).unwrap();
        assert!(shifted.linear_terms().is_none());
        let zero = vec![vec![0.0], vec![0.0]];
        assert_eq!(shifted.nash_residual(&zero).unwrap(), 0.0);

        let bad = shift_linear_payouts(&g, &zero, 1e-12).unwrap_err();
        assert!(matches!(bad, GameError::NotAnEquilibrium { .. }));
    }

    #[test]
    fn weighted_norm_examples() {
        let w = DenseMatrix::identity(2);
        assert_eq!(weighted_norm(&[1.0, 0.0], &w).unwrap(), 1.0);
        let w = DenseMatrix::scalar(2.0);
        assert!((weighted_norm(&[1.0], &w).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let bad = DenseMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(weighted_norm(&[1.0, 1.0], &bad).is_err());
    }

    #[test]
    fn threshold_examples() {
        let g = matching_pennies();
        let t = learning_rate_threshold(&g).unwrap();
        assert!((t.exact - 2.0).abs() < 1e-8);
        assert_eq!(t.cheap_bound, Some(2.0));

        let zero = make_network_game(vec![1, 1], scalar_blocks(0.0, 0.0), None, None).unwrap();
        let t = learning_rate_threshold(&zero).unwrap();
        assert!(t.exact.is_infinite());
    }
}
