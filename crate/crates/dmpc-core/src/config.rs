//! JSON network configuration. Matrices are row-major arrays of arrays;
//! map keys (neighbor ids, region indices) are strings holding 0-based
//! indices; polytopes accept either the halfspace form or box bounds.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CoupledInequality, ModelError, PwaMode, PwaNetwork, Subsystem};
use crate::polytope::HPolytope;
use crate::terminal::TerminalIngredients;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Mat = Vec<Vec<f64>>;

fn to_dmatrix(m: &Mat, what: &str) -> Result<DMatrix<f64>, ConfigError> {
    let nrows = m.len();
    let ncols = m.first().map_or(0, |r| r.len());
    if m.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError::Shape(format!("{what}: ragged matrix")));
    }
    let flat: Vec<f64> = m.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn key_to_usize(k: &str, what: &str) -> Result<usize, ConfigError> {
    k.parse()
        .map_err(|_| ConfigError::Shape(format!("{what}: key `{k}` is not an index")))
}

fn map_to_matrices(
    m: &BTreeMap<String, Mat>,
    what: &str,
) -> Result<BTreeMap<usize, DMatrix<f64>>, ConfigError> {
    m.iter()
        .map(|(k, v)| Ok((key_to_usize(k, what)?, to_dmatrix(v, what)?)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeConfig {
    #[serde(rename = "A")]
    pub a: Mat,
    #[serde(rename = "B")]
    pub b: Mat,
    pub c: Vec<f64>,
    #[serde(rename = "A_ij", default)]
    pub a_ij: BTreeMap<String, Mat>,
    pub region: HPolytope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledIneqConfig {
    #[serde(rename = "G")]
    pub g_own: Mat,
    #[serde(rename = "G_ij", default)]
    pub g_ij: BTreeMap<String, Mat>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalConfig {
    #[serde(rename = "X_T")]
    pub x_t: HPolytope,
    pub gains: BTreeMap<String, Mat>,
    #[serde(rename = "Phi")]
    pub phi: Mat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsystemConfig {
    pub n: usize,
    pub m: usize,
    pub modes: Vec<ModeConfig>,
    #[serde(rename = "X")]
    pub x: HPolytope,
    #[serde(rename = "U")]
    pub u: HPolytope,
    #[serde(rename = "Q")]
    pub q: Mat,
    #[serde(rename = "R")]
    pub r: Mat,
    #[serde(rename = "Q_ij", default)]
    pub q_ij: BTreeMap<String, Mat>,
    #[serde(default)]
    pub h: Option<CoupledIneqConfig>,
    #[serde(default)]
    pub terminal: Option<TerminalConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    pub subsystems: Vec<SubsystemConfig>,
    pub neighbors: BTreeMap<String, Vec<usize>>,
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_network(self) -> Result<PwaNetwork, ConfigError> {
        let m = self.subsystems.len();
        let mut neighbors = vec![Vec::new(); m];
        for (k, list) in &self.neighbors {
            let i = key_to_usize(k, "neighbors")?;
            if i >= m {
                return Err(ConfigError::Shape(format!(
                    "neighbors: unknown subsystem {i}"
                )));
            }
            neighbors[i] = list.clone();
        }
        let mut subsystems = Vec::with_capacity(m);
        for (i, sc) in self.subsystems.into_iter().enumerate() {
            let modes = sc
                .modes
                .iter()
                .map(|mc| {
                    Ok(PwaMode {
                        a: to_dmatrix(&mc.a, "A")?,
                        b: to_dmatrix(&mc.b, "B")?,
                        c: DVector::from_vec(mc.c.clone()),
                        coupling: map_to_matrices(&mc.a_ij, "A_ij")?,
                        region: mc.region.clone(),
                    })
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            let coupled_ineq = match &sc.h {
                Some(h) => Some(CoupledInequality {
                    own: to_dmatrix(&h.g_own, "G")?,
                    neighbors: map_to_matrices(&h.g_ij, "G_ij")?,
                    rhs: DVector::from_vec(h.g.clone()),
                }),
                None => None,
            };
            let terminal = match &sc.terminal {
                Some(t) => Some(TerminalIngredients {
                    set: t.x_t.clone(),
                    gains: t
                        .gains
                        .iter()
                        .map(|(k, v)| Ok((key_to_usize(k, "gains")?, to_dmatrix(v, "gains")?)))
                        .collect::<Result<BTreeMap<_, _>, ConfigError>>()?,
                    phi: to_dmatrix(&t.phi, "Phi")?,
                }),
                None => None,
            };
            subsystems.push(Subsystem {
                id: i,
                state_dim: sc.n,
                input_dim: sc.m,
                modes,
                state_set: sc.x.clone(),
                input_set: sc.u.clone(),
                state_cost: to_dmatrix(&sc.q, "Q")?,
                input_cost: to_dmatrix(&sc.r, "R")?,
                neighbor_costs: map_to_matrices(&sc.q_ij, "Q_ij")?,
                coupled_ineq,
                terminal,
            });
        }
        Ok(PwaNetwork::new(subsystems, neighbors, self.horizon)?)
    }
}

/// Parse a network from JSON text.
pub fn network_from_json(text: &str) -> Result<PwaNetwork, ConfigError> {
    NetworkConfig::from_json(text)?.into_network()
}

/// Per-subsystem terminal-cost weights, for the verification command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiFile {
    pub phis: Vec<Mat>,
}

impl PhiFile {
    pub fn into_matrices(self) -> Result<Vec<DMatrix<f64>>, ConfigError> {
        self.phis.iter().map(|m| to_dmatrix(m, "phis")).collect()
    }
}

/// Per-subsystem seed sets for the terminal-set command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetsFile {
    pub sets: Vec<HPolytope>,
}
