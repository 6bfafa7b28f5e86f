//! Ordered product of fixed propagation matrices and trainable phase
//! diagonals, with reverse accumulation of phase gradients.
//!
//! A chain maps an input block `X` to
//! `G = B_out Phi_M W_M ... Phi_2 W_2 Phi_1 W_1 X`, where any `W_m` may be
//! absent (identity) and `B_out` is optional. Two stacks joined by a channel
//! are one chain: the channel is just another fixed stage.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{scale_rows, ComplexMatrix, DenseOperator, C64, J};
use crate::sim::{Link, SimStack};

#[derive(Debug, Clone)]
struct Stage {
    propagate: Option<Arc<DenseOperator>>,
    width: usize,
    offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PhaseChain {
    stages: Vec<Stage>,
    output: Option<Arc<DenseOperator>>,
    num_phases: usize,
}

/// Intermediate fields kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Field entering each phase layer (after its propagation).
    pre_phase: Vec<ComplexMatrix>,
    pub output: ComplexMatrix,
}

impl PhaseChain {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `Phi W` (or just `Phi` when `propagate` is `None`).
    pub fn push_stage(mut self, propagate: Option<Arc<DenseOperator>>, width: usize) -> Result<Self> {
        if let Some(w) = &propagate {
            if w.nrows() != width {
                return Err(Error::DimensionMismatch(format!(
                    "stage propagation has {} rows, phase layer has {width}",
                    w.nrows()
                )));
            }
            if let Some(prev) = self.stages.last() {
                if w.ncols() != prev.width {
                    return Err(Error::DimensionMismatch(format!(
                        "stage propagation has {} columns, previous layer has {}",
                        w.ncols(),
                        prev.width
                    )));
                }
            }
        } else if let Some(prev) = self.stages.last() {
            if prev.width != width {
                return Err(Error::DimensionMismatch("identity stage must keep the width".into()));
            }
        }
        let offset = self.num_phases;
        self.num_phases += width;
        self.stages.push(Stage { propagate, width, offset });
        Ok(self)
    }

    /// Appends every layer of `stack`. With `from_ports` the stack's input
    /// port matrix feeds its first layer; otherwise `first` (for instance a
    /// channel into the stack) does, or nothing at all.
    pub fn push_stack(mut self, stack: &SimStack, first: Option<Arc<DenseOperator>>, from_ports: bool) -> Result<Self> {
        let entry = if from_ports {
            Some(stack.link(Link::Input)?.clone())
        } else {
            first
        };
        self = self.push_stage(entry, stack.atoms())?;
        for l in 1..stack.num_layers() {
            self = self.push_stage(Some(stack.link(Link::Layer(l))?.clone()), stack.atoms())?;
        }
        Ok(self)
    }

    pub fn with_output(mut self, output: Arc<DenseOperator>) -> Result<Self> {
        if let Some(last) = self.stages.last() {
            if output.ncols() != last.width {
                return Err(Error::DimensionMismatch(format!(
                    "output matrix has {} columns, last layer has {}",
                    output.ncols(),
                    last.width
                )));
            }
        }
        self.output = Some(output);
        Ok(self)
    }

    /// Transmit stack from its ports, through `channel`, and optionally a
    /// receive stack to its ports. Phase order: tx layers then rx layers.
    pub fn from_stacks(tx: &SimStack, channel: &ComplexMatrix, rx: Option<&SimStack>) -> Result<Self> {
        let h = Arc::new(DenseOperator::new(channel.clone()));
        let chain = Self::new().push_stack(tx, None, true)?;
        match rx {
            Some(rx) => chain
                .push_stack(rx, Some(h), false)?
                .with_output(rx.link(Link::Output)?.clone()),
            None => chain.with_output(h),
        }
    }

    /// The stack alone: `S` acting on whatever input is supplied.
    pub fn from_stack(stack: &SimStack) -> Result<Self> {
        Self::new().push_stack(stack, None, false)
    }

    pub fn num_phases(&self) -> usize {
        self.num_phases
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Width of the input block the chain expects.
    pub fn input_rows(&self) -> usize {
        match self.stages.first() {
            Some(Stage { propagate: Some(w), .. }) => w.ncols(),
            Some(s) => s.width,
            None => 0,
        }
    }

    pub fn output_rows(&self) -> usize {
        match (&self.output, self.stages.last()) {
            (Some(o), _) => o.nrows(),
            (None, Some(s)) => s.width,
            (None, None) => 0,
        }
    }

    fn check(&self, theta: &[f64], input: &ComplexMatrix) -> Result<()> {
        if theta.len() != self.num_phases {
            return Err(Error::DimensionMismatch(format!(
                "chain has {} phases, got {}",
                self.num_phases,
                theta.len()
            )));
        }
        if input.nrows() != self.input_rows() {
            return Err(Error::DimensionMismatch(format!(
                "chain expects {} input rows, got {}",
                self.input_rows(),
                input.nrows()
            )));
        }
        Ok(())
    }

    fn transmission(theta: &[f64]) -> Vec<C64> {
        theta.iter().map(|&t| (J * t).exp()).collect()
    }

    /// Output only; skips storing intermediates.
    pub fn apply(&self, theta: &[f64], input: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check(theta, input)?;
        let mut x = input.clone();
        for s in &self.stages {
            if let Some(w) = &s.propagate {
                x = w.apply(&x);
            }
            scale_rows(&mut x, &Self::transmission(&theta[s.offset..s.offset + s.width]));
        }
        Ok(match &self.output {
            Some(o) => o.apply(&x),
            None => x,
        })
    }

    pub fn forward(&self, theta: &[f64], input: &ComplexMatrix) -> Result<Forward> {
        self.check(theta, input)?;
        let mut pre_phase = Vec::with_capacity(self.stages.len());
        let mut x = input.clone();
        for s in &self.stages {
            if let Some(w) = &s.propagate {
                x = w.apply(&x);
            }
            pre_phase.push(x.clone());
            scale_rows(&mut x, &Self::transmission(&theta[s.offset..s.offset + s.width]));
        }
        let output = match &self.output {
            Some(o) => o.apply(&x),
            None => x,
        };
        Ok(Forward { pre_phase, output })
    }

    /// Gradient of a real loss `f(G)` with respect to every phase, given
    /// `dg = df/d conj(G)` (so that `df = 2 Re tr(dg^H dG)`).
    ///
    /// For a diagonal entry `phi_n = exp(j theta_n)` fed by `Y` and read out
    /// through the adjoint field `Lambda`,
    /// `df/dtheta_n = -2 Im(phi_n * sum_k conj(Lambda[n,k]) Y[n,k])`.
    pub fn backward(&self, theta: &[f64], fwd: &Forward, dg: &ComplexMatrix) -> Result<Vec<f64>> {
        if dg.shape() != fwd.output.shape() {
            return Err(Error::DimensionMismatch("gradient seed must match the chain output".into()));
        }
        let mut grad = vec![0.0; self.num_phases];
        let mut adj = match &self.output {
            Some(o) => o.apply_adjoint(dg),
            None => dg.clone(),
        };
        for (s, y) in self.stages.iter().zip(&fwd.pre_phase).rev() {
            let phi = Self::transmission(&theta[s.offset..s.offset + s.width]);
            let g = &mut grad[s.offset..s.offset + s.width];
            for (n, gn) in g.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..y.ncols() {
                    acc += adj[(n, k)].conj() * y[(n, k)];
                }
                *gn = -2.0 * (phi[n] * acc).im;
            }
            let conj_phi: Vec<C64> = phi.iter().map(|p| p.conj()).collect();
            scale_rows(&mut adj, &conj_phi);
            if let Some(w) = &s.propagate {
                adj = w.apply_adjoint(&adj);
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius_error;
    use crate::sim::{end_to_end_channel, sim_transfer, GeometrySpec};

    fn stack(layers: usize, nx: usize, ports: usize, seed: u64) -> SimStack {
        let g = GeometrySpec {
            wavelength_m: 1.0,
            layers,
            grid_nx: nx,
            grid_ny: nx,
            thickness_wl: 1.5 * (layers.max(2) - 1) as f64,
            tx_ports: ports,
            rx_ports: ports,
            ..Default::default()
        }
        .build()
        .unwrap();
        SimStack::random(g, seed).unwrap()
    }

    #[test]
    fn chain_of_stack_reproduces_transfer() {
        let s = stack(3, 3, 0, 4);
        let chain = PhaseChain::from_stack(&s).unwrap();
        let out = chain.apply(s.phases().as_slice(), &ComplexMatrix::identity(9, 9)).unwrap();
        assert!(relative_frobenius_error(&out, &sim_transfer(&s)) < 1e-13);
    }

    #[test]
    fn chain_of_two_stacks_reproduces_end_to_end() {
        let tx = stack(2, 2, 3, 1);
        let rx = stack(3, 2, 3, 2);
        let h = crate::channels::sample_iid_rayleigh(4, 4, 5).unwrap().matrix;
        let chain = PhaseChain::from_stacks(&tx, &h, Some(&rx)).unwrap();
        let theta: Vec<f64> = tx.phases().as_slice().iter().chain(rx.phases().as_slice()).copied().collect();
        let out = chain.apply(&theta, &ComplexMatrix::identity(3, 3)).unwrap();
        let expected = end_to_end_channel(&tx, &h, Some(&rx)).unwrap();
        assert!(relative_frobenius_error(&out, &expected) < 1e-13);
        assert_eq!(chain.num_phases(), 4 * 5);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let s = stack(2, 2, 0, 1);
        let chain = PhaseChain::from_stack(&s).unwrap();
        assert!(chain.apply(&[0.0; 3], &ComplexMatrix::identity(4, 4)).is_err());
        assert!(chain.apply(&[0.0; 8], &ComplexMatrix::identity(3, 3)).is_err());
        let w = Arc::new(DenseOperator::new(ComplexMatrix::zeros(5, 5)));
        assert!(PhaseChain::new().push_stage(Some(w), 4).is_err());
    }
}
