//! TOML experiment description.
//!
//! ```toml
//! [graph]
//! subsystems = 3
//! edges = [[0, 1], [0, 2], [1, 2]]     # undirected, 0-based
//!
//! [[subsystem]]                         # one table per subsystem, in index order
//! b = [[0.0], [1.0]]                    # matrices are arrays of rows
//! d = [[0.0], [0.001]]
//! q = [[10.0, 0.0], [0.0, 10.0]]
//! r = [[5.0]]
//!
//! [[subsystem.coupling]]                # one entry per j in the neighbourhood (j = i included)
//! neighbor = 0
//! a = [[1.0, 1.0], [0.0, 1.0]]
//! c = [[0.01, 0.02], [0.02, 0.03]]      # optional, zero if omitted
//!
//! [[subsystem.state_constraint]]        # Pr(H x <= h) >= p
//! h_row = [-1.0, -1.0]
//! bound = 0.2
//! probability = 0.7
//! # quantile = 1.2                      # optional override of the Cantelli factor
//!
//! # [[subsystem.input_constraint]] has the same fields
//!
//! [mpc]
//! horizon = 15
//! epsilon = 0.5
//! rho = 10.0
//! eps_c = [1e-2]
//! max_iter = 500
//!
//! [simulation]
//! runs = 1000
//! steps = 15
//! seed = 2024
//! x0 = [[1.0, 0.0], [1.5, 0.0], [3.0, 0.0]]
//! ```
//!
//! Missing neighbour couplings are zero blocks. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoError, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub subsystems: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub neighbor: usize,
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    pub h_row: Vec<f64>,
    pub bound: f64,
    pub probability: f64,
    #[serde(default)]
    pub quantile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub coupling: Vec<CouplingConfig>,
    #[serde(default)]
    pub state_constraint: Vec<RowConfig>,
    #[serde(default)]
    pub input_constraint: Vec<RowConfig>,
}

fn default_eps_c() -> Vec<f64> {
    vec![1e-2]
}

fn default_max_iter() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub epsilon: f64,
    pub rho: f64,
    #[serde(default = "default_eps_c")]
    pub eps_c: Vec<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
    pub x0: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub graph: GraphConfig,
    pub subsystem: Vec<SubsystemConfig>,
    pub mpc: MpcConfig,
    pub simulation: SimulationConfig,
}

impl ModelConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, IoError> {
        let cfg: ModelConfig = toml::from_str(s).map_err(|e| IoError::Parse(e.to_string()))?;
        cfg.validate_params()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let s = std::fs::read_to_string(path)
            .map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&s)
    }

    fn validate_params(&self) -> Result<(), ModelError> {
        let m = &self.mpc;
        if m.horizon == 0 {
            return Err(ModelError::Config("mpc.horizon must be at least 1".into()));
        }
        if !(m.epsilon > 0.0 && m.epsilon <= 1.0) {
            return Err(ModelError::Config(format!("mpc.epsilon = {} is outside (0, 1]", m.epsilon)));
        }
        if !(m.rho > 0.0) {
            return Err(ModelError::Config(format!("mpc.rho = {} must be positive", m.rho)));
        }
        if let Some(e) = m.eps_c.iter().find(|e| !(**e > 0.0)) {
            return Err(ModelError::Config(format!("mpc.eps_c entry {e} must be positive")));
        }
        if self.simulation.x0.len() != self.graph.subsystems {
            return Err(ModelError::Config(format!(
                "simulation.x0 has {} entries for {} subsystems",
                self.simulation.x0.len(),
                self.graph.subsystems
            )));
        }
        Ok(())
    }

    /// SHA-256 over everything the terminal ingredients depend on
    /// (graph, subsystems, linearisation parameter).
    pub fn model_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            graph: &'a GraphConfig,
            subsystem: &'a [SubsystemConfig],
            epsilon: f64,
        }
        let bytes = serde_json::to_vec(&Hashed { graph: &self.graph, subsystem: &self.subsystem, epsilon: self.mpc.epsilon })
            .expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}
