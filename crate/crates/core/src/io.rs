//! Game file format.
//!
//! Games serialize to JSON as
//! `{ "n_agents": N, "dims": [S_1, ...], "blocks": { "i,j": [[...]] },
//!    "transforms": [...], "linear_terms": [...], "metadata": {...} }`
//! with 1-based agent indices in the block keys. Missing blocks are zero.
//! Values survive load -> save -> load bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{make_network_game, GameError, GameMetadata, NetworkGame};
use crate::linalg::DenseMatrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed game file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Serialize, Deserialize)]
struct GameFile {
    n_agents: usize,
    dims: Vec<usize>,
    blocks: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transforms: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    linear_terms: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metadata: Option<GameMetadata>,
}

fn parse_key(key: &str) -> Result<(usize, usize), IoError> {
    let (i, j) = key
        .split_once(',')
        .ok_or_else(|| IoError::Malformed(format!("block key {key:?} is not \"i,j\"")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| IoError::Malformed(format!("block key {key:?} has a non-numeric index")))
    };
    let (i, j) = (parse(i)?, parse(j)?);
    if i == 0 || j == 0 {
        return Err(IoError::Malformed(format!("block key {key:?} must be 1-based")));
    }
    Ok((i - 1, j - 1))
}

pub fn game_to_json(game: &NetworkGame) -> String {
    let mut blocks = BTreeMap::new();
    for (&(i, j), b) in game.blocks() {
        blocks.insert(format!("{},{}", i + 1, j + 1), b.to_nested());
    }
    let file = GameFile {
        n_agents: game.n_agents(),
        dims: game.dims().to_vec(),
        blocks,
        transforms: game
            .transforms()
            .map(|ts| ts.iter().map(DenseMatrix::to_nested).collect()),
        linear_terms: game.linear_terms().map(<[Vec<f64>]>::to_vec),
        metadata: (!game.metadata.is_empty()).then(|| game.metadata.clone()),
    };
    serde_json::to_string_pretty(&file).expect("game files always serialize")
}

pub fn game_from_json(text: &str) -> Result<NetworkGame, IoError> {
    let file: GameFile =
        serde_json::from_str(text).map_err(|e| IoError::Malformed(e.to_string()))?;
    if file.dims.len() != file.n_agents {
        return Err(IoError::Malformed(format!(
            "n_agents = {} but {} dims given",
            file.n_agents,
            file.dims.len()
        )));
    }
    let mut blocks = BTreeMap::new();
    for (key, rows) in file.blocks {
        let (i, j) = parse_key(&key)?;
        let m = DenseMatrix::from_rows(rows)
            .map_err(|e| IoError::Malformed(format!("block {key}: {e}")))?;
        blocks.insert((i, j), m);
    }
    let transforms = file
        .transforms
        .map(|ts| ts.into_iter().map(DenseMatrix::from_rows).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(|e| IoError::Malformed(e.to_string()))?;
    let mut game = make_network_game(file.dims, blocks, transforms, file.linear_terms)?;
    if let Some(meta) = file.metadata {
        game = game.with_metadata(meta);
    }
    Ok(game)
}

pub fn save_game(game: &NetworkGame, path: &Path) -> Result<(), IoError> {
    fs::write(path, game_to_json(game))?;
    Ok(())
}

pub fn load_game(path: &Path) -> Result<NetworkGame, IoError> {
    game_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamegen::{canonical, random_zero_sum_network, CanonicalName, GeneratorConfig};

    #[test]
    fn round_trip_is_bit_identical() {
        let cfg = GeneratorConfig::new(4, 3, 99).unwrap();
        let game = random_zero_sum_network(&cfg);
        let once = game_from_json(&game_to_json(&game)).unwrap();
        assert_eq!(once, game);
        let twice = game_from_json(&game_to_json(&once)).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn transforms_and_linear_terms_survive() {
        let g = canonical(CanonicalName::NoNashPairSecond).game;
        let back = game_from_json(&game_to_json(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.metadata.provenance.as_deref(), Some("no_nash_pair_second"));
    }

    #[test]
    fn missing_blocks_load_as_zero() {
        let text = r#"{
            "n_agents": 3,
            "dims": [1, 1, 1],
            "blocks": { "1,2": [[2.0]], "2,1": [[-2.0]] }
        }"#;
        let g = game_from_json(text).unwrap();
        assert_eq!(g.block(0, 2).max_abs(), 0.0);
        assert_eq!(g.block(0, 1).get(0, 0), 2.0);
    }

    #[test]
    fn malformed_keys_rejected() {
        let text = r#"{ "n_agents": 2, "dims": [1,1], "blocks": { "0,1": [[1.0]] } }"#;
        assert!(matches!(game_from_json(text), Err(IoError::Malformed(_))));
        let text = r#"{ "n_agents": 2, "dims": [1,1], "blocks": { "12": [[1.0]] } }"#;
        assert!(matches!(game_from_json(text), Err(IoError::Malformed(_))));
    }
}
