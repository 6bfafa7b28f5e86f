//! Projected gradient descent over phases.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::ComplexMatrix;
use crate::optim::chain::PhaseChain;
use crate::optim::objective::{EnergyReadout, MatrixFit};
use crate::sim::wrap_phase;

/// A differentiable loss over a flat phase vector.
pub trait Problem: Sync {
    fn num_phases(&self) -> usize;

    /// Loss and its gradient with respect to every phase.
    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        self.evaluate(theta).map(|(l, _)| l)
    }
}

/// Matrix-fit loss on the output of a chain driven by a fixed input block.
#[derive(Debug, Clone)]
pub struct MatrixFitProblem {
    pub chain: PhaseChain,
    pub input: ComplexMatrix,
    pub fit: MatrixFit,
}

impl MatrixFitProblem {
    pub fn new(chain: PhaseChain, input: ComplexMatrix, fit: MatrixFit) -> Result<Self> {
        if input.nrows() != chain.input_rows() {
            return Err(Error::DimensionMismatch(format!(
                "chain expects {} input rows, got {}",
                chain.input_rows(),
                input.nrows()
            )));
        }
        let out = (chain.output_rows(), input.ncols());
        if out != fit.target().shape() {
            return Err(Error::DimensionMismatch(format!(
                "chain output is {out:?}, target is {:?}",
                fit.target().shape()
            )));
        }
        Ok(Self { chain, input, fit })
    }

    pub fn output(&self, theta: &[f64]) -> Result<ComplexMatrix> {
        self.chain.apply(theta, &self.input)
    }
}

impl Problem for MatrixFitProblem {
    fn num_phases(&self) -> usize {
        self.chain.num_phases()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let fwd = self.chain.forward(theta, &self.input)?;
        let (loss, seed) = self.fit.loss_and_seed(&fwd.output)?;
        let grad = self.chain.backward(theta, &fwd, &seed)?;
        Ok((loss, grad))
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        self.fit.loss(&self.output(theta)?)
    }
}

/// Mean cross-entropy of an energy readout over a batch of input fields
/// (one column per sample). Column chunks are evaluated in parallel and
/// reduced in chunk order.
#[derive(Debug, Clone)]
pub struct ClassificationProblem {
    pub chain: PhaseChain,
    pub inputs: ComplexMatrix,
    pub labels: Vec<usize>,
    pub readout: EnergyReadout,
    pub chunk: usize,
}

impl ClassificationProblem {
    pub fn new(chain: PhaseChain, inputs: ComplexMatrix, labels: Vec<usize>, readout: EnergyReadout) -> Result<Self> {
        if inputs.ncols() != labels.len() || labels.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} input columns for {} labels",
                inputs.ncols(),
                labels.len()
            )));
        }
        if inputs.nrows() != chain.input_rows() {
            return Err(Error::DimensionMismatch(format!(
                "chain expects {} input rows, got {}",
                chain.input_rows(),
                inputs.nrows()
            )));
        }
        if readout.class_antennas.iter().any(|&a| a >= chain.output_rows()) {
            return Err(Error::TooManyClasses {
                classes: readout.classes(),
                antennas: chain.output_rows(),
            });
        }
        Ok(Self {
            chain,
            inputs,
            labels,
            readout,
            chunk: 128,
        })
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        let n = self.labels.len();
        let step = self.chunk.max(1);
        (0..n).step_by(step).map(|s| (s, (s + step).min(n))).collect()
    }

    /// Received fields for every sample.
    pub fn outputs(&self, theta: &[f64]) -> Result<ComplexMatrix> {
        self.chain.apply(theta, &self.inputs)
    }
}

impl Problem for ClassificationProblem {
    fn num_phases(&self) -> usize {
        self.chain.num_phases()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let chunks = self.chunks();
        let parts = exec::map_slice(&chunks, |&(a, b)| -> Result<(f64, Vec<f64>)> {
            let x = self.inputs.columns(a, b - a).into_owned();
            let fwd = self.chain.forward(theta, &x)?;
            let (loss, seed) = self.readout.loss_sum_and_seed(&fwd.output, &self.labels[a..b])?;
            let grad = self.chain.backward(theta, &fwd, &seed)?;
            Ok((loss, grad))
        });
        let n = self.labels.len() as f64;
        let mut losses = Vec::with_capacity(parts.len());
        let mut grad = vec![0.0; self.num_phases()];
        for part in parts {
            let (l, g) = part?;
            losses.push(l);
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((exec::pairwise_sum(&losses) / n, grad))
    }
}

/// Step-size schedule and stopping rules.
///
/// Each step moves the phases by `rate * grad / max|grad|`, so `rate` is the
/// largest per-atom phase change in radians. After `decay_interval`
/// iterations without a new best loss the rate is multiplied by `decay`
/// and the iterate restarts from the best phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_rate: f64,
    pub decay: f64,
    pub decay_interval: usize,
    pub max_iters: usize,
    pub loss_tolerance: f64,
    pub gradient_tolerance: f64,
    pub min_rate: f64,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            initial_rate: 0.1,
            decay: 0.5,
            decay_interval: 50,
            max_iters: 10_000,
            loss_tolerance: 1e-12,
            gradient_tolerance: 1e-12,
            min_rate: 1e-8,
            divergence_factor: 1e6,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rate > 0.0 && self.initial_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidArgument("decay factor must lie in (0, 1)".into()));
        }
        if self.decay_interval == 0 {
            return Err(Error::InvalidArgument("decay interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mutable optimizer bookkeeping.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub schedule: Schedule,
    pub iteration: usize,
    pub rate: f64,
    pub best_phases: Vec<f64>,
    pub best_loss: f64,
}

impl OptimizerState {
    pub fn new(schedule: Schedule) -> Self {
        let rate = schedule.initial_rate;
        Self {
            schedule,
            iteration: 0,
            rate,
            best_phases: Vec::new(),
            best_loss: f64::INFINITY,
        }
    }

    /// Records a candidate; ties keep the earlier iterate.
    fn offer(&mut self, theta: &[f64], loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_phases.clear();
            self.best_phases.extend_from_slice(theta);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub best: f64,
    pub rate: f64,
    /// Seconds since the start of training; excluded from CSV output.
    #[serde(skip)]
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossTrace {
    pub entries: Vec<TraceEntry>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn final_best(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.best)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,loss,rate,best")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.iteration, e.loss, e.rate, e.best)?;
        }
        Ok(())
    }
}

/// Runs projected gradient descent from `initial` and returns the best
/// phases seen (wrapped into `[0, 2pi)`) with the loss trace.
pub fn train<P: Problem + ?Sized>(problem: &P, initial: &[f64], schedule: &Schedule) -> Result<(Vec<f64>, LossTrace)> {
    schedule.validate()?;
    if initial.len() != problem.num_phases() {
        return Err(Error::DimensionMismatch(format!(
            "problem has {} phases, initial guess has {}",
            problem.num_phases(),
            initial.len()
        )));
    }
    let start = Instant::now();
    let mut state = OptimizerState::new(schedule.clone());
    let mut theta: Vec<f64> = initial.iter().map(|&t| wrap_phase(t)).collect();
    let (mut loss, mut grad) = problem.evaluate(&theta)?;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            loss,
            limit: f64::INFINITY,
        });
    }
    let limit = schedule.divergence_factor * loss.max(f64::MIN_POSITIVE);
    state.offer(&theta, loss);
    let mut best_grad = grad.clone();
    let mut trace = LossTrace::default();
    let record = |state: &OptimizerState, loss: f64| TraceEntry {
        iteration: state.iteration,
        loss,
        best: state.best_loss,
        rate: state.rate,
        elapsed: start.elapsed().as_secs_f64(),
    };
    trace.entries.push(record(&state, loss));

    let mut stale = 0usize;
    while state.iteration < schedule.max_iters {
        if state.best_loss <= schedule.loss_tolerance || state.rate < schedule.min_rate {
            break;
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= schedule.gradient_tolerance {
            break;
        }
        let step = state.rate / gmax;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t = wrap_phase(*t - step * g);
        }
        state.iteration += 1;
        (loss, grad) = problem.evaluate(&theta)?;
        if !loss.is_finite() || loss > limit {
            return Err(Error::Diverged {
                iteration: state.iteration,
                loss,
                limit,
            });
        }
        if state.offer(&theta, loss) {
            best_grad.clone_from(&grad);
            stale = 0;
        } else {
            stale += 1;
        }
        trace.entries.push(record(&state, loss));
        if stale >= schedule.decay_interval {
            state.rate *= schedule.decay;
            theta.clone_from(&state.best_phases);
            grad.clone_from(&best_grad);
            stale = 0;
        }
    }
    Ok((state.best_phases, trace))
}

/// Uniform `[0, 2pi)` initial phases from `seed`.
pub fn random_phases(count: usize, seed: u64) -> Vec<f64> {
    crate::sim::PhaseConfig::random(1, count, seed).as_slice().to_vec()
}
