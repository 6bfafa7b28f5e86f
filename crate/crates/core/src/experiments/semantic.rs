//! Image classification by received energy: the input layer carries the
//! image as transmission amplitude, the remaining layers are trained.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channels::{rng_for, sample_iid_rayleigh};
use crate::emnist::Dataset;
use crate::error::{Error, Result};
use crate::experiments::derive_seed;
use crate::linalg::{frobenius_sq, ComplexMatrix, DenseOperator, C64};
use crate::optim::{train, ClassificationProblem, EnergyReadout, LossTrace, PhaseChain, Problem, Schedule};
use crate::sim::{GeometrySpec, Link, PhaseConfig, SimStack};

/// Area-weighted resampling of a row-major `sh x sw` image to `dh x dw`.
pub fn area_resize(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let weights = |s: usize, d: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = s as f64 / d as f64;
        (0..d)
            .map(|o| {
                let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
                (a.floor() as usize..(b.ceil() as usize).min(s))
                    .filter_map(|i| {
                        let w = (b.min(i as f64 + 1.0) - a.max(i as f64)) / scale;
                        (w > 1e-12).then_some((i, w))
                    })
                    .collect()
            })
            .collect()
    };
    let (wx, wy) = (weights(sw, dw), weights(sh, dh));
    let mut out = vec![0.0; dw * dh];
    for (oy, ry) in wy.iter().enumerate() {
        for (ox, rx) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(iy, fy) in ry {
                for &(ix, fx) in rx {
                    acc += fy * fx * src[iy * sw + ix];
                }
            }
            out[oy * dw + ox] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub geometry: GeometrySpec,
    pub rx_antennas: usize,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    /// Large-scale loss between the last layer and the receive array.
    pub path_loss_db: f64,
    pub max_train_per_class: Option<usize>,
    pub test_fraction: f64,
    pub schedule: Schedule,
    /// Samples per parallel work item during training.
    pub chunk: usize,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySpec {
                layers: 4,
                grid_nx: 21,
                grid_ny: 21,
                thickness_wl: 10.0,
                tx_ports: 0,
                rx_ports: 0,
                ..GeometrySpec::default()
            },
            rx_antennas: 6,
            tx_power_dbm: 40.0,
            noise_dbm: -104.0,
            path_loss_db: 80.0,
            max_train_per_class: Some(400),
            test_fraction: 0.2,
            schedule: Schedule {
                max_iters: 1000,
                ..Schedule::default()
            },
            chunk: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// `confusion[true][predicted]` over the test set.
    pub confusion: Vec<Vec<usize>>,
    pub terminal_loss: f64,
    /// Mean receive SNR over the test set, dB.
    pub mean_snr_db: f64,
    /// Mean last-layer intensity per class (test set), `ny x nx`.
    #[serde(skip)]
    pub energy_maps: Vec<DMatrix<f64>>,
    /// Mean normalized class-antenna energy per true class, `classes x classes`.
    #[serde(skip)]
    pub receive_energy: DMatrix<f64>,
    #[serde(skip)]
    pub trace: LossTrace,
    /// Trained phases of layers 2..L.
    #[serde(skip)]
    pub phases: Vec<f64>,
}

/// Field on the input layer: the image resized to the atom grid.
pub fn encode(image: &[f64], width: usize, height: usize, nx: usize, ny: usize) -> Vec<C64> {
    area_resize(image, width, height, nx, ny)
        .into_iter()
        .map(|a| C64::new(a.clamp(0.0, 1.0), 0.0))
        .collect()
}

fn encode_batch(data: &Dataset, idx: &[usize], nx: usize, ny: usize) -> ComplexMatrix {
    let mut x = ComplexMatrix::zeros(nx * ny, idx.len());
    for (col, &i) in idx.iter().enumerate() {
        for (row, v) in encode(&data.images[i], data.width, data.height, nx, ny).into_iter().enumerate() {
            x[(row, col)] = v;
        }
    }
    x
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Trainable chain: layers 2..L of `stack` followed by `channel`.
pub fn semantic_chain(stack: &SimStack, channel: &ComplexMatrix) -> Result<PhaseChain> {
    if stack.num_layers() < 2 {
        return Err(Error::InvalidArgument("need an input layer and at least one trainable layer".into()));
    }
    let mut chain = PhaseChain::new();
    for l in 1..stack.num_layers() {
        chain = chain.push_stage(Some(stack.link(Link::Layer(l))?.clone()), stack.atoms())?;
    }
    chain.with_output(Arc::new(DenseOperator::new(channel.clone())))
}

pub fn run_semantic(config: &SemanticConfig, data: &Dataset, seed: u64) -> Result<ClassificationReport> {
    let classes = data.num_classes();
    let readout = EnergyReadout::new(classes, config.rx_antennas)?;
    let geometry = config.geometry.build()?;
    let (nx, ny) = geometry.grid();
    let atoms = nx * ny;
    let stack = SimStack::new(geometry, PhaseConfig::zeros(config.geometry.layers, atoms))?;
    let h = sample_iid_rayleigh(config.rx_antennas, atoms, derive_seed(seed, 1))?.matrix;
    let chain = semantic_chain(&stack, &h)?;

    let train_idx = data.train_subset(config.max_train_per_class);
    let x_train = encode_batch(data, &train_idx, nx, ny);
    let y_train: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let mut problem = ClassificationProblem::new(chain.clone(), x_train.clone(), y_train.clone(), readout.clone())?;
    problem.chunk = config.chunk.max(1);
    let init = PhaseConfig::random(config.geometry.layers - 1, atoms, derive_seed(seed, 2));
    let (theta, trace) = train(&problem, init.as_slice(), &config.schedule)?;
    let terminal_loss = problem.loss(&theta)?;

    let amplitude = (dbm_to_watts(config.tx_power_dbm) * 10f64.powf(-config.path_loss_db / 10.0)).sqrt();
    let noise = dbm_to_watts(config.noise_dbm);
    let evaluate = |x: &ComplexMatrix, labels: &[usize], stream: u64| -> Result<(f64, Vec<Vec<usize>>, DMatrix<f64>, f64)> {
        let mut y = chain.apply(&theta, x)?;
        let mut rng = rng_for(derive_seed(seed, 3), stream);
        let sigma = (noise / 2.0).sqrt();
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut energy = DMatrix::zeros(classes, classes);
        let mut counts = vec![0usize; classes];
        let mut snr_sum = 0.0;
        for (col, &label) in labels.iter().enumerate() {
            let norm = frobenius_sq(&x.columns(col, 1).into_owned()).sqrt();
            let gain = if norm > 0.0 { amplitude / norm } else { 0.0 };
            let mut signal = 0.0;
            for r in 0..y.nrows() {
                y[(r, col)] *= gain;
                signal += y[(r, col)].norm_sqr();
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                y[(r, col)] += C64::new(re, im) * sigma;
            }
            snr_sum += signal / y.nrows() as f64 / noise;
            let predicted = readout.predict(&y, col);
            confusion[label][predicted] += 1;
            counts[label] += 1;
            for (k, s) in readout.scores(&y, col).into_iter().enumerate() {
                energy[(label, k)] += s;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                energy.row_mut(c).scale_mut(1.0 / n as f64);
            }
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let acc = if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 };
        let snr = if labels.is_empty() { 0.0 } else { snr_sum / labels.len() as f64 };
        Ok((acc, confusion, energy, snr))
    };
    let (train_accuracy, _, _, _) = evaluate(&x_train, &y_train, 0)?;
    let x_test = encode_batch(data, &data.test, nx, ny);
    let y_test: Vec<usize> = data.test.iter().map(|&i| data.labels[i]).collect();
    let (test_accuracy, confusion, receive_energy, snr) = evaluate(&x_test, &y_test, 1)?;

    // Intensity on the last layer, averaged per class.
    let mut field_chain = PhaseChain::new();
    for l in 1..stack.num_layers() {
        field_chain = field_chain.push_stage(Some(stack.link(Link::Layer(l))?.clone()), atoms)?;
    }
    let fields = field_chain.apply(&theta, &x_test)?;
    let mut energy_maps = vec![DMatrix::zeros(ny, nx); classes];
    let mut counts = vec![0usize; classes];
    for (col, &label) in y_test.iter().enumerate() {
        counts[label] += 1;
        for n in 0..atoms {
            energy_maps[label][(n / nx, n % nx)] += fields[(n, col)].norm_sqr();
        }
    }
    for (map, &n) in energy_maps.iter_mut().zip(&counts) {
        if n > 0 {
            *map /= n as f64;
        }
    }

    Ok(ClassificationReport {
        seed,
        train_accuracy,
        test_accuracy,
        train_samples: y_train.len(),
        test_samples: y_test.len(),
        confusion,
        terminal_loss,
        mean_snr_db: 10.0 * snr.log10(),
        energy_maps,
        receive_energy,
        trace,
        phases: theta,
    })
}
