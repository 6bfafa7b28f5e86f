//! Diagonalizing a Rayleigh channel with a transmit and a receive stack.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channels::sample_iid_rayleigh;
use crate::error::{Error, Result};
use crate::experiments::{db, derive_seed};
use crate::linalg::ComplexMatrix;
use crate::optim::{train, LossTrace, MatrixFit, MatrixFitProblem, PhaseChain, Problem, ScaleMode, Schedule};
use crate::sim::{GeometrySpec, PhaseConfig, SimStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoConfig {
    /// Geometry of each side; `layers` is overridden by the sweep and the
    /// port counts by `streams`.
    pub geometry: GeometrySpec,
    pub layer_counts: Vec<usize>,
    pub streams: usize,
    pub scale_mode: ScaleMode,
    pub schedule: Schedule,
}

impl Default for MimoConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySpec::default(),
            layer_counts: vec![1, 2, 3, 4],
            streams: 4,
            scale_mode: ScaleMode::FreeScalar,
            schedule: Schedule::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerResult {
    pub layers: usize,
    pub terminal_loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    /// Per-stream interference-to-signal ratio, linear.
    pub isr: Vec<f64>,
    /// Mean of `isr` in dB.
    pub mean_isr_db: f64,
    #[serde(skip)]
    pub channel: ComplexMatrix,
    #[serde(skip)]
    pub trace: LossTrace,
    /// Trained phases, transmit stack then receive stack.
    #[serde(skip)]
    pub phases: Vec<f64>,
}

impl LayerResult {
    /// `|G|` for plotting.
    pub fn magnitude(&self) -> DMatrix<f64> {
        self.channel.map(|z| z.norm())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagonalizationReport {
    pub seed: u64,
    pub results: Vec<LayerResult>,
}

/// Off-diagonal row energy over diagonal energy, per row.
pub fn interference_to_signal(g: &ComplexMatrix) -> Result<Vec<f64>> {
    if g.nrows() > g.ncols() {
        return Err(Error::DimensionMismatch("need at least as many columns as streams".into()));
    }
    (0..g.nrows())
        .map(|r| {
            let signal = g[(r, r)].norm_sqr();
            let total: f64 = g.row(r).iter().map(|z| z.norm_sqr()).sum();
            if signal == 0.0 {
                return Err(Error::ZeroSignal("diagonal entry"));
            }
            Ok((total - signal).max(0.0) / signal)
        })
        .collect()
}

/// Trains both stacks jointly for each layer count against `I`. The channel
/// and all initial phases depend only on `seed`, so layer counts are
/// compared on the same channel.
pub fn run_mimo_diag(config: &MimoConfig, seed: u64) -> Result<DiagonalizationReport> {
    if config.streams == 0 || config.layer_counts.is_empty() {
        return Err(Error::InvalidArgument("need at least one stream and one layer count".into()));
    }
    let atoms = config.geometry.grid_nx * config.geometry.grid_ny;
    let h = sample_iid_rayleigh(atoms, atoms, derive_seed(seed, 1))?.matrix;
    let target = ComplexMatrix::identity(config.streams, config.streams);
    let mut results = Vec::with_capacity(config.layer_counts.len());
    for &layers in &config.layer_counts {
        let spec = GeometrySpec {
            layers,
            tx_ports: config.streams,
            rx_ports: config.streams,
            ..config.geometry.clone()
        };
        let geometry = spec.build()?;
        let tx = SimStack::new(geometry.clone(), PhaseConfig::zeros(layers, atoms))?;
        let rx = SimStack::new(geometry, PhaseConfig::zeros(layers, atoms))?;
        let chain = PhaseChain::from_stacks(&tx, &h, Some(&rx))?;
        let fit = MatrixFit::new(target.clone(), config.scale_mode)?;
        let problem = MatrixFitProblem::new(chain, target.clone(), fit)?;
        let mut init = PhaseConfig::random(layers, atoms, derive_seed(seed, 2)).as_slice().to_vec();
        init.extend_from_slice(PhaseConfig::random(layers, atoms, derive_seed(seed, 3)).as_slice());
        let (theta, trace) = train(&problem, &init, &config.schedule)?;
        let g = problem.output(&theta)?;
        let isr = interference_to_signal(&g)?;
        let mean = isr.iter().sum::<f64>() / isr.len() as f64;
        results.push(LayerResult {
            layers,
            terminal_loss: problem.loss(&theta)?,
            initial_loss: trace.entries[0].loss,
            iterations: trace.entries.last().map_or(0, |e| e.iteration),
            isr,
            mean_isr_db: db(mean),
            channel: g,
            trace,
            phases: theta,
        });
    }
    Ok(DiagonalizationReport { seed, results })
}
