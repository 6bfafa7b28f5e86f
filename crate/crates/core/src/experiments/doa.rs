//! Direction finding with a stack trained to act as a 2D DFT.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channels::{rng_for, steering_field, Direction};
use crate::error::{Error, Result};
use crate::experiments::{db, derive_seed};
use crate::linalg::{kron, ComplexMatrix, ComplexVector, C64, J};
use crate::optim::{train, LossTrace, MatrixFit, MatrixFitProblem, PhaseChain, Problem, ScaleMode, Schedule};
use crate::sim::{GeometrySpec, PhaseConfig, SimStack};

/// Unitary 1D DFT, `F[i, j] = exp(-j 2 pi i j / n) / sqrt(n)`.
pub fn dft(n: usize) -> ComplexMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    ComplexMatrix::from_fn(n, n, |i, j| {
        let k = (i * j) % n;
        (-J * (2.0 * PI * k as f64 / n as f64)).exp() * scale
    })
}

/// Unitary 2D DFT over a row-major `nx x ny` grid (index `iy * nx + ix`).
pub fn dft_2d(nx: usize, ny: usize) -> ComplexMatrix {
    kron(&dft(ny), &dft(nx))
}

fn wrap_bin(j: usize, n: usize) -> f64 {
    let f = j as f64 / n as f64;
    if f >= 0.5 {
        f - 1.0
    } else {
        f
    }
}

/// On-grid arrival direction whose steering field is DFT column
/// `(jx, jy)` up to a global phase.
pub fn direction_for_bin(jx: usize, jy: usize, nx: usize, ny: usize, spacing_wl: f64) -> Result<Direction> {
    if jx >= nx || jy >= ny {
        return Err(Error::InvalidArgument(format!("bin ({jx}, {jy}) outside {nx}x{ny}")));
    }
    Direction::from_direction_cosines(wrap_bin(jx, nx) / spacing_wl, wrap_bin(jy, ny) / spacing_wl)
}

/// Output bin of a DFT-like transform maps to direction bin `-b mod n`.
fn bin_for_output(b: usize, nx: usize, ny: usize) -> (usize, usize) {
    let (bx, by) = (b % nx, b / nx);
    ((nx - bx) % nx, (ny - by) % ny)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaConfig {
    pub geometry: GeometrySpec,
    pub schedule: Schedule,
    /// Receive SNR per output atom relative to the mean output power;
    /// `None` evaluates without noise.
    pub snr_db: Option<f64>,
}

impl Default for DoaConfig {
    /// 9x9 atoms, three layers. The wide atom pitch and long gaps make one
    /// inter-layer hop close to a chirp, which a phase mask can undo.
    fn default() -> Self {
        Self {
            geometry: GeometrySpec {
                layers: 3,
                grid_nx: 9,
                grid_ny: 9,
                atom_spacing_wl: 8.0,
                thickness_wl: 1152.0,
                tx_ports: 0,
                rx_ports: 0,
                ..GeometrySpec::default()
            },
            schedule: Schedule::default(),
            snr_db: Some(30.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DoaEstimate {
    pub true_bin: (usize, usize),
    pub estimated_bin: (usize, usize),
    pub true_direction: Direction,
    pub estimated_direction: Direction,
    /// Radians.
    pub angular_error: f64,
}

impl DoaEstimate {
    pub fn exact(&self) -> bool {
        self.true_bin == self.estimated_bin
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DoaReport {
    pub seed: u64,
    /// Normalized fit error of the trained transfer matrix to the DFT.
    pub nmse_db: f64,
    pub estimates: Vec<DoaEstimate>,
    pub bypass_estimates: Vec<DoaEstimate>,
    #[serde(skip)]
    pub transfer: ComplexMatrix,
    #[serde(skip)]
    pub trace: LossTrace,
    #[serde(skip)]
    pub phases: Vec<f64>,
}

impl DoaReport {
    pub fn exact_count(&self) -> usize {
        self.estimates.iter().filter(|e| e.exact()).count()
    }

    pub fn bypass_exact_count(&self) -> usize {
        self.bypass_estimates.iter().filter(|e| e.exact()).count()
    }
}

/// Injects every on-grid direction through `transfer` and reads the
/// strongest output atom.
pub fn estimate_all(
    transfer: &ComplexMatrix,
    positions: &[nalgebra::Point3<f64>],
    (nx, ny): (usize, usize),
    spacing_wl: f64,
    wavelength: f64,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<Vec<DoaEstimate>> {
    let mut rng = rng_for(seed, 0);
    let mut out = Vec::with_capacity(nx * ny);
    for jy in 0..ny {
        for jx in 0..nx {
            let truth = direction_for_bin(jx, jy, nx, ny, spacing_wl)?;
            let x = steering_field(&truth, positions, wavelength);
            let mut y: ComplexVector = transfer * x;
            if let Some(snr) = snr_db {
                let mean = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64;
                let sigma = (mean / 10f64.powf(snr / 10.0) / 2.0).sqrt();
                for z in y.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *z += C64::new(re, im) * sigma;
                }
            }
            let b = y
                .iter()
                .enumerate()
                .fold(0, |best, (i, z)| if z.norm_sqr() > y[best].norm_sqr() { i } else { best });
            let est = bin_for_output(b, nx, ny);
            let estimated = direction_for_bin(est.0, est.1, nx, ny, spacing_wl)?;
            out.push(DoaEstimate {
                true_bin: (jx, jy),
                estimated_bin: est,
                true_direction: truth,
                estimated_direction: estimated,
                angular_error: truth.angle_to(&estimated),
            });
        }
    }
    Ok(out)
}

pub fn run_doa(config: &DoaConfig, seed: u64) -> Result<DoaReport> {
    let spec = &config.geometry;
    let geometry = spec.build()?;
    let (nx, ny) = geometry.grid();
    let n = nx * ny;
    let stack = SimStack::new(geometry.clone(), PhaseConfig::zeros(spec.layers, n))?;
    let chain = PhaseChain::from_stack(&stack)?;
    let target = dft_2d(nx, ny);
    let fit = MatrixFit::new(target.clone(), ScaleMode::FreeScalar)?;
    let problem = MatrixFitProblem::new(chain, ComplexMatrix::identity(n, n), fit)?;
    let init = PhaseConfig::random(spec.layers, n, derive_seed(seed, 1));
    let (theta, trace) = train(&problem, init.as_slice(), &config.schedule)?;
    let transfer = problem.output(&theta)?;
    let nmse = problem.loss(&theta)?;
    let positions = geometry.layer_positions(0);
    let lambda = geometry.wavelength();
    let estimates = estimate_all(&transfer, &positions, (nx, ny), spec.atom_spacing_wl, lambda, config.snr_db, derive_seed(seed, 2))?;
    let bypass_estimates = estimate_all(&target, &positions, (nx, ny), spec.atom_spacing_wl, lambda, None, 0)?;
    Ok(DoaReport {
        seed,
        nmse_db: db(nmse),
        estimates,
        bypass_estimates,
        transfer,
        trace,
        phases: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius_error;

    #[test]
    fn dft_is_unitary_and_row_major() {
        let f = dft_2d(3, 2);
        let eye = ComplexMatrix::identity(6, 6);
        assert!(relative_frobenius_error(&(f.adjoint() * &f), &eye) < 1e-13);
        // Entry for (iy, ix) = (1, 2), (jy, jx) = (1, 1).
        let expected = (-J * 2.0 * PI * (1.0 / 2.0 + 2.0 / 3.0)).exp() / 6f64.sqrt();
        assert!((f[(5, 4)] - expected).norm() < 1e-14);
    }

    #[test]
    fn on_grid_steering_matches_dft_column() {
        let spec = GeometrySpec { layers: 1, grid_nx: 5, grid_ny: 4, atom_spacing_wl: 1.0, tx_ports: 0, rx_ports: 0, ..GeometrySpec::default() };
        let g = spec.build().unwrap();
        let f = dft_2d(5, 4);
        for (jx, jy) in [(0, 0), (1, 3), (4, 2)] {
            let d = direction_for_bin(jx, jy, 5, 4, 1.0).unwrap();
            let s = steering_field(&d, &g.layer_positions(0), g.wavelength());
            let col = f.column(jy * 5 + jx);
            let phase = s[0] / (col[0] * 20f64.sqrt());
            for i in 0..20 {
                assert!((s[i] - phase * col[i] * 20f64.sqrt()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn bins_outside_visible_region_are_rejected() {
        // Half-wavelength pitch: the corner bin of a 9x9 grid is evanescent.
        assert!(direction_for_bin(4, 4, 9, 9, 0.5).is_err());
        assert!(direction_for_bin(9, 0, 9, 9, 1.0).is_err());
    }

    #[test]
    fn ideal_dft_recovers_every_bin() {
        let spec = GeometrySpec { layers: 1, grid_nx: 9, grid_ny: 9, atom_spacing_wl: 1.0, tx_ports: 0, rx_ports: 0, ..GeometrySpec::default() };
        let g = spec.build().unwrap();
        let est = estimate_all(&dft_2d(9, 9), &g.layer_positions(0), (9, 9), 1.0, g.wavelength(), None, 0).unwrap();
        assert_eq!(est.len(), 81);
        assert!(est.iter().all(|e| e.exact() && e.angular_error < 1e-7));
    }
}
