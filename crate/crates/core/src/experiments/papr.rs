//! Peak-to-average power ratio of stacked-surface transmission versus
//! conventional digital precoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{rng_for, sample_iid_rayleigh};
use crate::error::{Error, Result};
use crate::experiments::{db, derive_seed};
use crate::linalg::{ComplexMatrix, C64};

/// Worst-antenna `10 log10(max |x|^2 / mean |x|^2)`; rows are antennas,
/// columns are time samples.
pub fn compute_papr(samples: &ComplexMatrix) -> Result<f64> {
    papr_percentile(samples, 1.0)
}

/// As [`compute_papr`] but with the peak replaced by the `q`-quantile of the
/// instantaneous power (nearest rank). `q = 1` is the maximum.
pub fn papr_percentile(samples: &ComplexMatrix, q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1]")));
    }
    let mut worst = f64::NEG_INFINITY;
    for row in samples.row_iter() {
        let mut power: Vec<f64> = row.iter().map(|z| z.norm_sqr()).collect();
        let mean = power.iter().sum::<f64>() / power.len() as f64;
        if mean == 0.0 {
            continue;
        }
        power.sort_by(f64::total_cmp);
        let rank = ((q * power.len() as f64).ceil() as usize).clamp(1, power.len());
        worst = worst.max(db(power[rank - 1] / mean));
    }
    if worst == f64::NEG_INFINITY {
        return Err(Error::ZeroSignal("all antennas silent"));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaprConfig {
    pub stream_counts: Vec<usize>,
    pub antennas: usize,
    pub symbols: usize,
    /// Quantile of the instantaneous power used as the peak.
    pub percentile: f64,
}

impl Default for PaprConfig {
    fn default() -> Self {
        Self {
            stream_counts: vec![1, 2, 4, 8, 16],
            antennas: 16,
            symbols: 20_000,
            percentile: 0.999,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PaprCurve {
    pub seed: u64,
    pub stream_counts: Vec<usize>,
    pub sim_db: Vec<f64>,
    pub conventional_db: Vec<f64>,
}

fn bpsk(streams: usize, symbols: usize, seed: u64) -> ComplexMatrix {
    let mut rng = rng_for(seed, 0);
    let mut s = ComplexMatrix::zeros(streams, symbols);
    for t in 0..symbols {
        for k in 0..streams {
            s[(k, t)] = C64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0);
        }
    }
    s
}

/// For each stream count: the stacked surface drives one BPSK stream per
/// antenna, while the conventional transmitter forms `H^H s` from a fresh
/// Rayleigh channel (maximum-ratio precoding).
pub fn run_papr_sweep(config: &PaprConfig, seed: u64) -> Result<PaprCurve> {
    let mut sim_db = Vec::with_capacity(config.stream_counts.len());
    let mut conventional_db = Vec::with_capacity(config.stream_counts.len());
    for (i, &k) in config.stream_counts.iter().enumerate() {
        if k == 0 || k > config.antennas {
            return Err(Error::InvalidArgument(format!(
                "stream count {k} must lie in [1, {}]",
                config.antennas
            )));
        }
        let s = bpsk(k, config.symbols, derive_seed(seed, 2 * i as u64));
        sim_db.push(papr_percentile(&s, config.percentile)?);
        let h = sample_iid_rayleigh(k, config.antennas, derive_seed(seed, 2 * i as u64 + 1))?.matrix;
        let x = h.adjoint() * &s;
        conventional_db.push(papr_percentile(&x, config.percentile)?);
    }
    Ok(PaprCurve {
        seed,
        stream_counts: config.stream_counts.clone(),
        sim_db,
        conventional_db,
    })
}
