//! Scalar losses on the end-to-end matrix and their Wirtinger gradients
//! `df/d conj(G)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, inner, ComplexMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// A complex scalar absorbs the overall gain and phase of `G`.
    FreeScalar,
    Fixed,
}

/// Normalized matrix fit `min_b ||b G - T||_F^2 / ||T||_F^2` (free scalar)
/// or `||G - T||_F^2 / ||T||_F^2` (fixed).
///
/// In free-scalar mode the optimum is `b = <G, T> / ||G||^2` and the loss
/// reduces to `1 - |<T, G>|^2 / (||G||^2 ||T||^2)`, which is invariant to
/// any rescaling of `G`.
#[derive(Debug, Clone)]
pub struct MatrixFit {
    target: ComplexMatrix,
    mode: ScaleMode,
    target_norm_sq: f64,
}

impl MatrixFit {
    pub fn new(target: ComplexMatrix, mode: ScaleMode) -> Result<Self> {
        let target_norm_sq = frobenius_sq(&target);
        if target_norm_sq == 0.0 {
            return Err(Error::ZeroTarget);
        }
        Ok(Self {
            target,
            mode,
            target_norm_sq,
        })
    }

    pub fn target(&self) -> &ComplexMatrix {
        &self.target
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    fn check(&self, g: &ComplexMatrix) -> Result<()> {
        if g.shape() != self.target.shape() {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {:?}, target is {:?}",
                g.shape(),
                self.target.shape()
            )));
        }
        Ok(())
    }

    /// Scalar applied to `G` before comparing with the target.
    pub fn scale(&self, g: &ComplexMatrix) -> C64 {
        match self.mode {
            ScaleMode::Fixed => C64::new(1.0, 0.0),
            ScaleMode::FreeScalar => {
                let gg = frobenius_sq(g);
                if gg == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    inner(g, &self.target) / gg
                }
            }
        }
    }

    /// Loss for an explicit scalar, for checking the closed form.
    pub fn loss_with_scale(&self, g: &ComplexMatrix, b: C64) -> Result<f64> {
        self.check(g)?;
        let r: f64 = g
            .iter()
            .zip(self.target.iter())
            .map(|(x, t)| (b * x - t).norm_sqr())
            .sum();
        Ok(r / self.target_norm_sq)
    }

    pub fn loss(&self, g: &ComplexMatrix) -> Result<f64> {
        self.loss_and_seed(g).map(|(l, _)| l)
    }

    /// Loss and `df/d conj(G)`.
    pub fn loss_and_seed(&self, g: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
        self.check(g)?;
        let t = self.target_norm_sq;
        match self.mode {
            ScaleMode::Fixed => {
                let diff = g - &self.target;
                Ok((frobenius_sq(&diff) / t, diff / C64::new(t, 0.0)))
            }
            ScaleMode::FreeScalar => {
                let gg = frobenius_sq(g);
                if gg == 0.0 {
                    return Ok((1.0, ComplexMatrix::zeros(g.nrows(), g.ncols())));
                }
                let c = inner(&self.target, g);
                let c2 = c.norm_sqr();
                let loss = (1.0 - c2 / (gg * t)).max(0.0);
                let seed = (g * C64::new(c2 / gg, 0.0) - &self.target * c) / C64::new(gg * t, 0.0);
                Ok((loss, seed))
            }
        }
    }
}

/// `softmax(scores / temperature)`, computed stably.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln softmax(scores / temperature)[label]`.
pub fn softmax_cross_entropy(scores: &[f64], label: usize, temperature: f64) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = scores.iter().map(|s| ((s - max) / temperature).exp()).sum::<f64>().ln();
    lse - (scores[label] - max) / temperature
}

/// Classification by received energy: class `c` is read from receive
/// antenna `class_antennas[c]`. Energies are divided by their mean over the
/// class antennas of the same sample before the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReadout {
    pub class_antennas: Vec<usize>,
    pub temperature: f64,
}

impl EnergyReadout {
    /// Class `c` on antenna `c`.
    pub fn new(classes: usize, antennas: usize) -> Result<Self> {
        Self::with_assignment((0..classes).collect(), antennas)
    }

    pub fn with_assignment(class_antennas: Vec<usize>, antennas: usize) -> Result<Self> {
        if class_antennas.len() > antennas {
            return Err(Error::TooManyClasses {
                classes: class_antennas.len(),
                antennas,
            });
        }
        if class_antennas.iter().any(|&a| a >= antennas) {
            return Err(Error::InvalidArgument("class antenna index out of range".into()));
        }
        Ok(Self {
            class_antennas,
            temperature: 1.0,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_antennas.len()
    }

    /// Energies `|y_a|^2` on the class antennas for column `col` of `y`.
    pub fn energies(&self, y: &ComplexMatrix, col: usize) -> Vec<f64> {
        self.class_antennas.iter().map(|&a| y[(a, col)].norm_sqr()).collect()
    }

    /// Mean-normalized energies; all ones for a silent sample.
    pub fn scores(&self, y: &ComplexMatrix, col: usize) -> Vec<f64> {
        let e = self.energies(y, col);
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        if mean > 0.0 {
            e.into_iter().map(|x| x / mean).collect()
        } else {
            vec![1.0; e.len()]
        }
    }

    /// Index of the class antenna with the most energy (first on ties).
    pub fn predict(&self, y: &ComplexMatrix, col: usize) -> usize {
        let e = self.energies(y, col);
        let mut best = 0;
        for (c, &v) in e.iter().enumerate() {
            if v > e[best] {
                best = c;
            }
        }
        best
    }

    fn check(&self, y: &ComplexMatrix, labels: &[usize]) -> Result<()> {
        if y.ncols() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} received columns for {} labels",
                y.ncols(),
                labels.len()
            )));
        }
        if let Some(&a) = self.class_antennas.iter().find(|&&a| a >= y.nrows()) {
            return Err(Error::DimensionMismatch(format!("class antenna {a} beyond {} rows", y.nrows())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {})", self.classes())));
        }
        Ok(())
    }

    /// Sum (not mean) of per-sample cross-entropies and the matching
    /// `d/d conj(Y)`; the caller divides by the batch size.
    pub fn loss_sum_and_seed(&self, y: &ComplexMatrix, labels: &[usize]) -> Result<(f64, ComplexMatrix)> {
        self.check(y, labels)?;
        let c = self.classes() as f64;
        let mut total = 0.0;
        let mut seed = ComplexMatrix::zeros(y.nrows(), y.ncols());
        for (b, &label) in labels.iter().enumerate() {
            let e = self.energies(y, b);
            let mean = e.iter().sum::<f64>() / c;
            let scores: Vec<f64> = if mean > 0.0 {
                e.iter().map(|x| x / mean).collect()
            } else {
                vec![1.0; e.len()]
            };
            total += softmax_cross_entropy(&scores, label, self.temperature);
            if mean == 0.0 {
                continue;
            }
            let p = softmax(&scores, self.temperature);
            let ds: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, pk)| (pk - if k == label { 1.0 } else { 0.0 }) / self.temperature)
                .collect();
            let coupled: f64 = ds.iter().zip(&e).map(|(d, x)| d * x).sum::<f64>() / (c * mean * mean);
            for (k, &a) in self.class_antennas.iter().enumerate() {
                let de = ds[k] / mean - coupled;
                seed[(a, b)] = y[(a, b)] * de;
            }
        }
        Ok((total, seed))
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, y: &ComplexMatrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(self.loss_sum_and_seed(y, labels)?.0 / labels.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::sample_iid_rayleigh;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn perfect_fit_is_zero() {
        let t = sample_iid_rayleigh(3, 3, 1).unwrap().matrix;
        let fixed = MatrixFit::new(t.clone(), ScaleMode::Fixed).unwrap();
        assert_eq!(fixed.loss(&t).unwrap(), 0.0);
        let free = MatrixFit::new(t.clone(), ScaleMode::FreeScalar).unwrap();
        assert!(free.loss(&(&t * c(2.0))).unwrap() < 1e-15);
        assert!(free.loss(&(&t * C64::new(-0.3, 1.7))).unwrap() < 1e-15);
    }

    #[test]
    fn half_diagonal_hand_value() {
        let g = ComplexMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
        let fit = MatrixFit::new(ComplexMatrix::identity(2, 2), ScaleMode::Fixed).unwrap();
        assert!((fit.loss(&g).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(matches!(
            MatrixFit::new(ComplexMatrix::zeros(2, 2), ScaleMode::FreeScalar),
            Err(Error::ZeroTarget)
        ));
    }

    #[test]
    fn closed_form_scale_beats_grid() {
        let t = ComplexMatrix::identity(3, 3);
        let g = sample_iid_rayleigh(3, 3, 8).unwrap().matrix;
        let fit = MatrixFit::new(t, ScaleMode::FreeScalar).unwrap();
        let best = fit.loss(&g).unwrap();
        let b = fit.scale(&g);
        assert!((fit.loss_with_scale(&g, b).unwrap() - best).abs() < 1e-12);
        // 1000 points on a polar grid around the optimum
        for i in 0..1000 {
            let r = b.norm() * (0.2 + 1.8 * (i % 40) as f64 / 39.0);
            let phase = b.arg() + (i / 40) as f64 * 0.25 - 3.0;
            let alt = C64::from_polar(r, phase);
            assert!(fit.loss_with_scale(&g, alt).unwrap() >= best - 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_and_hand_values() {
        assert!((softmax_cross_entropy(&[1.0; 6], 3, 1.0) - 6f64.ln()).abs() < 1e-15);
        let scores = [1.0, 1.0, 2.0, 1.0, 1.0, 1.0];
        let e = std::f64::consts::E;
        let expected = -(e * e / (e * e + 5.0 * e)).ln();
        assert!((softmax_cross_entropy(&scores, 2, 1.0) - expected).abs() < 1e-14);
        let sharp = softmax_cross_entropy(&[0.0, 1e3, 0.0], 1, 1.0);
        assert!(sharp < 1e-12);
    }

    #[test]
    fn readout_validation() {
        assert!(matches!(EnergyReadout::new(7, 6), Err(Error::TooManyClasses { .. })));
        let r = EnergyReadout::new(3, 3).unwrap();
        let y = ComplexMatrix::zeros(3, 2);
        assert!(r.loss(&y, &[0, 3]).is_err());
        assert!(r.loss(&y, &[0]).is_err());
        // silent samples give ln C
        assert!((r.loss(&y, &[0, 2]).unwrap() - 3f64.ln()).abs() < 1e-15);
    }
}
