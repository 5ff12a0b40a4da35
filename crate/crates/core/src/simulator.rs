//! Closed-loop Monte-Carlo evaluation.
//!
//! The plant is `x_i⁺ = A_{N_i} x_{N_i} + B_i u_i + (C_{N_i} x_{N_i} + D_i u_i) w_i`
//! with one scalar `w_i(k)` per subsystem and step. Run `r` draws its noise
//! from the ChaCha stream `r` of `base_seed`, in subsystem order, so records
//! do not depend on how runs are scheduled.
//!
//! Violation flags are taken on the realised states `x(1..=T)`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{Controller, ControllerOptions, StepDiagnostics};
use crate::error::SimulationError;
use crate::local_mpc::{MpcContext, Strategy};
use crate::model::NetworkModel;

/// Scalar multiplicative-noise sampler.
#[derive(Debug, Clone, Copy)]
pub enum NoiseModel {
    StandardNormal,
    /// `w ≡ 0`.
    Zero,
    Custom(fn(&mut ChaCha8Rng) -> f64),
}

impl NoiseModel {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseModel::StandardNormal => rng.sample(StandardNormal),
            NoiseModel::Zero => 0.0,
            NoiseModel::Custom(f) => f(rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub ctx: MpcContext,
    pub options: ControllerOptions,
    pub x0: Vec<DVector<f64>>,
    pub steps: usize,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub run: usize,
    pub seed: u64,
    pub stream: u64,
    pub eps_c: f64,
    /// `x[k][i]`, `k = 0..=T`.
    pub x: Vec<Vec<DVector<f64>>>,
    /// `u[k][i]`, `k = 0..T`.
    pub u: Vec<Vec<DVector<f64>>>,
    /// `w[k][i]`.
    pub w: Vec<Vec<f64>>,
    pub steps: Vec<StepDiagnostics>,
    /// `‖x(k)‖²_Q + ‖u(k)‖²_R` summed over subsystems.
    pub stage_costs: Vec<f64>,
    /// `violations[k − 1][i][row]`: `H x_i(k) > h` for `k = 1..=T`.
    pub violations: Vec<Vec<Vec<bool>>>,
}

impl SimulationRecord {
    pub fn cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    pub fn violation_count(&self) -> usize {
        self.violations.iter().flatten().flatten().filter(|&&v| v).count()
    }
}

/// True-plant step.
pub fn plant_step(net: &NetworkModel, x: &[DVector<f64>], u: &[DVector<f64>], w: &[f64]) -> Vec<DVector<f64>> {
    (0..net.count())
        .map(|i| {
            let s = &net.subsystems[i];
            let x_n = net.stack_neighborhood(i, x);
            let nominal = net.a_neighborhood(i) * &x_n + &s.b * &u[i];
            let mult = net.c_neighborhood(i) * &x_n + &s.d * &u[i];
            nominal + mult * w[i]
        })
        .collect()
}

/// Noise generator of run `run`: stream `run` of the ChaCha generator
/// seeded with `seed`.
pub fn noise_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn simulate_run(setup: &SimulationSetup, run: usize, seed: u64) -> Result<SimulationRecord, SimulationError> {
    let net = &setup.ctx.net;
    let stream = run as u64;
    let mut rng = noise_rng(seed, run);
    let mut ctrl = Controller::new(setup.ctx.clone(), setup.options);
    let mut x = setup.x0.clone();
    let mut rec = SimulationRecord {
        run,
        seed,
        stream,
        eps_c: setup.options.admm.eps_c,
        x: vec![x.clone()],
        u: Vec::with_capacity(setup.steps),
        w: Vec::with_capacity(setup.steps),
        steps: Vec::with_capacity(setup.steps),
        stage_costs: Vec::with_capacity(setup.steps),
        violations: Vec::with_capacity(setup.steps),
    };
    for _ in 0..setup.steps {
        let (u, diag) = ctrl.step(&x).map_err(|source| SimulationError { run, seed, stream, source })?;
        let w: Vec<f64> = (0..net.count()).map(|_| setup.noise.sample(&mut rng)).collect();
        let cost: f64 = net.subsystems.iter().enumerate().map(|(i, s)| quad(&s.q, &x[i]) + quad(&s.r, &u[i])).sum();
        x = plant_step(net, &x, &u, &w);
        let flags = net
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rows = s.state_rows.iter().map(|r| r.h_row.dot(&x[i]) > r.bound);
                rows.collect()
            })
            .collect();
        rec.stage_costs.push(cost);
        rec.violations.push(flags);
        rec.u.push(u);
        rec.w.push(w);
        rec.steps.push(diag);
        rec.x.push(x.clone());
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McMetrics {
    pub eps_c: f64,
    pub runs: usize,
    pub steps: usize,
    pub av_iter: f64,
    pub max_iter: usize,
    pub av_j: f64,
    /// Violation events over all runs, steps, subsystems and rows.
    pub cv: usize,
    /// Minimum over steps, subsystems and rows of the satisfaction rate across runs.
    pub min_cs: f64,
    /// Steps solved with the prediction strategy.
    pub prediction_steps: usize,
    pub feedback_fallbacks: usize,
    /// Not serialised, so that output files are reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Satisfaction rate per `(k, subsystem, row)` across runs.
pub fn satisfaction_rates(records: &[SimulationRecord]) -> Vec<Vec<Vec<f64>>> {
    let Some(first) = records.first() else { return Vec::new() };
    let k_runs = records.len() as f64;
    first
        .violations
        .iter()
        .enumerate()
        .map(|(k, per_sub)| {
            per_sub
                .iter()
                .enumerate()
                .map(|(i, rows)| {
                    (0..rows.len())
                        .map(|r| records.iter().filter(|rec| !rec.violations[k][i][r]).count() as f64 / k_runs)
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn aggregate(records: &[SimulationRecord], eps_c: f64, wall_seconds: f64) -> McMetrics {
    let iters: Vec<usize> = records.iter().flat_map(|r| r.steps.iter().map(|s| s.iterations)).collect();
    let n = records.len().max(1) as f64;
    let min_cs = satisfaction_rates(records).iter().flatten().flatten().copied().fold(1.0, f64::min);
    McMetrics {
        eps_c,
        runs: records.len(),
        steps: records.first().map_or(0, |r| r.steps.len()),
        av_iter: iters.iter().sum::<usize>() as f64 / iters.len().max(1) as f64,
        max_iter: iters.iter().copied().max().unwrap_or(0),
        av_j: records.iter().map(SimulationRecord::cost).sum::<f64>() / n,
        cv: records.iter().map(SimulationRecord::violation_count).sum(),
        min_cs,
        prediction_steps: records
            .iter()
            .flat_map(|r| &r.steps)
            .filter(|s| s.strategy == Strategy::Prediction)
            .count(),
        feedback_fallbacks: records.iter().flat_map(|r| &r.steps).filter(|s| s.feedback_fallback).count(),
        wall_seconds,
    }
}

/// Runs `0..runs` in parallel on the current rayon pool; the first failed
/// run aborts the campaign.
pub fn monte_carlo(
    setup: &SimulationSetup,
    runs: usize,
    base_seed: u64,
) -> Result<(McMetrics, Vec<SimulationRecord>), SimulationError> {
    let started = Instant::now();
    let records: Vec<SimulationRecord> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let rec = simulate_run(setup, r, base_seed);
            log::debug!("run {r} finished");
            rec
        })
        .collect::<Result<_, _>>()?;
    let metrics = aggregate(&records, setup.options.admm.eps_c, started.elapsed().as_secs_f64());
    Ok((metrics, records))
}

/// `eps_c,run,seed,stream,cost,violations,av_iter,max_iter,prediction_steps`
pub fn write_runs_csv<W: Write>(out: W, records: &[SimulationRecord]) -> Result<(), csv::Error> {
    #[derive(Serialize)]
    struct Row {
        eps_c: f64,
        run: usize,
        seed: u64,
        stream: u64,
        cost: f64,
        violations: usize,
        av_iter: f64,
        max_iter: usize,
        prediction_steps: usize,
    }
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let its: Vec<usize> = r.steps.iter().map(|s| s.iterations).collect();
        w.serialize(Row {
            eps_c: r.eps_c,
            run: r.run,
            seed: r.seed,
            stream: r.stream,
            cost: r.cost(),
            violations: r.violation_count(),
            av_iter: its.iter().sum::<usize>() as f64 / its.len().max(1) as f64,
            max_iter: its.iter().copied().max().unwrap_or(0),
            prediction_steps: r.steps.iter().filter(|s| s.strategy == Strategy::Prediction).count(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Long format `eps_c,run,k,subsystem,x1..xn,u1..um`, padded with empty cells to
/// the largest subsystem; the input cells are empty at `k = T`.
pub fn write_trajectories_csv<W: Write>(out: W, net: &NetworkModel, records: &[SimulationRecord]) -> Result<(), csv::Error> {
    let n_max = net.subsystems.iter().map(|s| s.n).max().unwrap_or(0);
    let m_max = net.subsystems.iter().map(|s| s.m).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["eps_c".to_string(), "run".into(), "k".into(), "subsystem".into()];
    header.extend((1..=n_max).map(|c| format!("x{c}")));
    header.extend((1..=m_max).map(|c| format!("u{c}")));
    w.write_record(&header)?;
    for r in records {
        for (k, xs) in r.x.iter().enumerate() {
            for (i, xi) in xs.iter().enumerate() {
                let mut row = vec![r.eps_c.to_string(), r.run.to_string(), k.to_string(), i.to_string()];
                row.extend((0..n_max).map(|c| xi.get(c).map_or(String::new(), |v| v.to_string())));
                let ui = r.u.get(k).map(|u| &u[i]);
                row.extend((0..m_max).map(|c| ui.and_then(|u| u.get(c)).map_or(String::new(), |v| v.to_string())));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per campaign, columns as the fields of [`McMetrics`].
pub fn write_metrics_csv<W: Write>(out: W, metrics: &[McMetrics]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
