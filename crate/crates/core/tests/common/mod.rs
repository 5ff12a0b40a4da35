#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use dsmpc::config::ModelConfig;
use dsmpc::local_mpc::MpcContext;
use dsmpc::model::{build_network, NetworkModel};
use dsmpc::synthesis::{self, SynthesisOptions, TerminalIngredients};
use nalgebra::DVector;

pub fn benchmark_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.toml")
}

pub fn benchmark_config() -> ModelConfig {
    ModelConfig::load(&benchmark_path()).expect("benchmark config parses")
}

pub fn benchmark_net() -> NetworkModel {
    build_network(&benchmark_config()).expect("benchmark network is valid")
}

pub fn design_for(cfg: &ModelConfig) -> TerminalIngredients {
    let net = build_network(cfg).expect("valid network");
    let opts = SynthesisOptions { epsilon: cfg.mpc.epsilon, ..SynthesisOptions::default() };
    synthesis::design(&net, &cfg.model_hash(), &opts).expect("synthesis succeeds").0
}

/// Monolithic ingredients of the benchmark, synthesised once per test binary.
pub fn benchmark_ingredients() -> &'static TerminalIngredients {
    static ING: OnceLock<TerminalIngredients> = OnceLock::new();
    ING.get_or_init(|| design_for(&benchmark_config()))
}

pub fn benchmark_ctx() -> MpcContext {
    let cfg = benchmark_config();
    MpcContext::new(benchmark_net(), benchmark_ingredients().clone(), cfg.mpc.horizon, cfg.mpc.epsilon)
        .expect("context")
}

pub fn benchmark_x0() -> Vec<DVector<f64>> {
    benchmark_config().simulation.x0.iter().map(|v| DVector::from_vec(v.clone())).collect()
}

pub fn config_from_toml(s: &str) -> ModelConfig {
    ModelConfig::from_toml_str(s).expect("test config parses")
}

/// Two decoupled double integrators with one state row each.
pub const DECOUPLED: &str = r#"
[graph]
subsystems = 2

[[subsystem]]
b = [[0.0], [1.0]]
d = [[0.0], [0.01]]
q = [[1.0, 0.0], [0.0, 1.0]]
r = [[1.0]]
[[subsystem.coupling]]
neighbor = 0
a = [[1.0, 1.0], [0.0, 1.0]]
[[subsystem.state_constraint]]
h_row = [-1.0, 0.0]
bound = 2.0
probability = 0.7

[[subsystem]]
b = [[0.0], [1.0]]
d = [[0.0], [0.01]]
q = [[2.0, 0.0], [0.0, 1.0]]
r = [[1.0]]
[[subsystem.coupling]]
neighbor = 1
a = [[1.0, 0.5], [0.0, 1.0]]
[[subsystem.state_constraint]]
h_row = [0.0, 1.0]
bound = 1.5
probability = 0.8

[mpc]
horizon = 5
epsilon = 0.5
rho = 10.0

[simulation]
runs = 10
steps = 5
seed = 1
x0 = [[0.5, 0.0], [-0.5, 0.2]]
"#;

/// Single scalar system `x⁺ = a x + b u + c x w` with optional constraint.
pub fn scalar_toml(a: f64, b: f64, c: f64, constraint: Option<(f64, f64, f64)>, horizon: usize) -> String {
    let row = constraint.map_or(String::new(), |(h, bound, p)| {
        format!("[[subsystem.state_constraint]]\nh_row = [{h}]\nbound = {bound}\nprobability = {p}\n")
    });
    format!(
        r#"
[graph]
subsystems = 1

[[subsystem]]
b = [[{b}]]
d = [[0.0]]
q = [[1.0]]
r = [[1.0]]
[[subsystem.coupling]]
neighbor = 0
a = [[{a}]]
c = [[{c}]]
{row}
[mpc]
horizon = {horizon}
epsilon = 0.5
rho = 10.0

[simulation]
runs = 1
steps = 5
seed = 0
x0 = [[0.0]]
"#
    )
}
