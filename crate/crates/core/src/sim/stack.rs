//! Trainable phase configuration and the stack transfer function
//! `S = Phi^L W^L ... Phi^2 W^2 Phi^1`.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{scale_rows, ComplexMatrix, DenseOperator, C64, J};
use crate::sim::geometry::SimGeometry;
use crate::sim::propagation::{build_propagation_matrix, Link};

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Per-atom phases, `layers x atoms_per_layer`, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    layers: usize,
    atoms: usize,
    theta: Vec<f64>,
}

impl PhaseConfig {
    pub fn zeros(layers: usize, atoms: usize) -> Self {
        Self {
            layers,
            atoms,
            theta: vec![0.0; layers * atoms],
        }
    }

    /// I.i.d. uniform phases on `[0, 2pi)`.
    pub fn random(layers: usize, atoms: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..layers * atoms).map(|_| rng.random_range(0.0..TAU)).collect();
        Self { layers, atoms, theta }
    }

    /// Builds from raw values, wrapping each into `[0, 2pi)`.
    pub fn from_vec(layers: usize, atoms: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layers * atoms {
            return Err(Error::DimensionMismatch(format!(
                "expected {} phases, got {}",
                layers * atoms,
                theta.len()
            )));
        }
        if let Some(bad) = theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite phase {bad}")));
        }
        Ok(Self {
            layers,
            atoms,
            theta: theta.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }
    pub fn atoms(&self) -> usize {
        self.atoms
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.theta[l * self.atoms..(l + 1) * self.atoms]
    }
    pub fn get(&self, l: usize, n: usize) -> f64 {
        self.theta[l * self.atoms + n]
    }

    pub fn set(&mut self, l: usize, n: usize, value: f64) {
        self.theta[l * self.atoms + n] = wrap_phase(value);
    }

    /// Replaces all phases; values are wrapped.
    pub fn assign(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.theta.len());
        for (dst, &src) in self.theta.iter_mut().zip(theta) {
            *dst = wrap_phase(src);
        }
    }

    /// Unit-modulus transmission coefficients `exp(j theta)` of layer `l`.
    pub fn transmission(&self, l: usize) -> Vec<C64> {
        self.layer(l).iter().map(|&t| (J * t).exp()).collect()
    }

    /// Text form: a header with the geometry fingerprint, then one line of
    /// phases per layer. Values use Rust's round-trip float formatting.
    pub fn write_text<W: Write>(&self, geometry_hash: &str, mut out: W) -> Result<()> {
        writeln!(out, "# wavestack phases v1")?;
        writeln!(out, "geometry_hash = {geometry_hash}")?;
        writeln!(out, "layers = {}", self.layers)?;
        writeln!(out, "atoms_per_layer = {}", self.atoms)?;
        for l in 0..self.layers {
            let line: Vec<String> = self.layer(l).iter().map(|t| t.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Parses [`PhaseConfig::write_text`] output; rejects files trained on a
    /// different geometry when `expected_hash` is given.
    pub fn read_text<R: BufRead>(input: R, expected_hash: Option<&str>) -> Result<Self> {
        let mut hash = None;
        let mut layers = None;
        let mut atoms = None;
        let mut theta = Vec::new();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                let v = v.trim();
                let parse = |v: &str| {
                    v.parse::<usize>()
                        .map_err(|_| Error::PhaseFile(format!("bad integer `{v}`")))
                };
                match k.trim() {
                    "geometry_hash" => hash = Some(v.to_string()),
                    "layers" => layers = Some(parse(v)?),
                    "atoms_per_layer" => atoms = Some(parse(v)?),
                    other => return Err(Error::PhaseFile(format!("unknown key `{other}`"))),
                }
                continue;
            }
            for tok in line.split_whitespace() {
                theta.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::PhaseFile(format!("bad phase `{tok}`")))?,
                );
            }
        }
        let (layers, atoms) = match (layers, atoms) {
            (Some(l), Some(a)) => (l, a),
            _ => return Err(Error::PhaseFile("missing layers/atoms_per_layer header".into())),
        };
        if let Some(expected) = expected_hash {
            match hash.as_deref() {
                Some(h) if h == expected => {}
                _ => return Err(Error::PhaseFile("geometry hash mismatch".into())),
            }
        }
        Self::from_vec(layers, atoms, theta)
    }
}

/// A SIM: geometry, phases and the propagation matrices derived from the
/// geometry.
#[derive(Debug, Clone)]
pub struct SimStack {
    geometry: SimGeometry,
    phases: PhaseConfig,
    input: Option<Arc<DenseOperator>>,
    between: Vec<Arc<DenseOperator>>,
    output: Option<Arc<DenseOperator>>,
}

impl SimStack {
    pub fn new(geometry: SimGeometry, phases: PhaseConfig) -> Result<Self> {
        if phases.layers() != geometry.num_layers() || phases.atoms() != geometry.atoms_per_layer() {
            return Err(Error::DimensionMismatch(format!(
                "phases are {}x{}, geometry needs {}x{}",
                phases.layers(),
                phases.atoms(),
                geometry.num_layers(),
                geometry.atoms_per_layer()
            )));
        }
        let mut stack = Self {
            geometry,
            phases,
            input: None,
            between: Vec::new(),
            output: None,
        };
        stack.rebuild_cache()?;
        Ok(stack)
    }

    /// Stack with i.i.d. uniform phases drawn from `seed`.
    pub fn random(geometry: SimGeometry, seed: u64) -> Result<Self> {
        let phases = PhaseConfig::random(geometry.num_layers(), geometry.atoms_per_layer(), seed);
        Self::new(geometry, phases)
    }

    /// Recomputes every propagation matrix from the geometry.
    pub fn rebuild_cache(&mut self) -> Result<()> {
        let g = &self.geometry;
        self.input = if g.input_ports().is_empty() {
            None
        } else {
            Some(Arc::new(DenseOperator::new(build_propagation_matrix(g, Link::Input)?)))
        };
        self.between = (1..g.num_layers())
            .map(|l| build_propagation_matrix(g, Link::Layer(l)).map(|m| Arc::new(DenseOperator::new(m))))
            .collect::<Result<_>>()?;
        self.output = if g.output_ports().is_empty() {
            None
        } else {
            Some(Arc::new(DenseOperator::new(build_propagation_matrix(g, Link::Output)?)))
        };
        Ok(())
    }

    pub fn geometry(&self) -> &SimGeometry {
        &self.geometry
    }
    pub fn phases(&self) -> &PhaseConfig {
        &self.phases
    }
    pub fn phases_mut(&mut self) -> &mut PhaseConfig {
        &mut self.phases
    }
    pub fn num_layers(&self) -> usize {
        self.geometry.num_layers()
    }
    pub fn atoms(&self) -> usize {
        self.geometry.atoms_per_layer()
    }

    /// Cached matrix for `link`.
    pub fn link(&self, link: Link) -> Result<&Arc<DenseOperator>> {
        let layers = self.num_layers();
        match link {
            Link::Input => self
                .input
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("stack has no input ports".into())),
            Link::Output => self
                .output
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("stack has no output ports".into())),
            Link::Layer(l) if l >= 1 && l < layers => Ok(&self.between[l - 1]),
            Link::Layer(l) => Err(Error::LayerOutOfRange { index: l, layers }),
        }
    }

    pub fn input_matrix(&self) -> Option<&ComplexMatrix> {
        self.input.as_deref().map(DenseOperator::matrix)
    }
    pub fn output_matrix(&self) -> Option<&ComplexMatrix> {
        self.output.as_deref().map(DenseOperator::matrix)
    }

    /// Applies `S` to the columns of `x` (fields on layer 0, before its phases).
    pub fn propagate(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut field = x.clone();
        scale_rows(&mut field, &self.phases.transmission(0));
        for l in 1..self.num_layers() {
            field = self.between[l - 1].apply(&field);
            scale_rows(&mut field, &self.phases.transmission(l));
        }
        field
    }
}

/// The `N x N` transfer matrix of the stack.
pub fn sim_transfer(stack: &SimStack) -> ComplexMatrix {
    stack.propagate(&ComplexMatrix::identity(stack.atoms(), stack.atoms()))
}

/// End-to-end matrix `P_rx S_rx H S_tx P_tx`, or `H S_tx P_tx` without a
/// receive stack. `channel` maps the last tx layer to the first rx layer
/// (or to the receive antennas when `rx` is `None`).
pub fn end_to_end_channel(
    tx: &SimStack,
    channel: &ComplexMatrix,
    rx: Option<&SimStack>,
) -> Result<ComplexMatrix> {
    let p_tx = tx.link(Link::Input)?;
    if channel.ncols() != tx.atoms() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} columns, tx stack has {} atoms",
            channel.ncols(),
            tx.atoms()
        )));
    }
    let sent = tx.propagate(p_tx.matrix());
    let arrived = channel * sent;
    match rx {
        None => Ok(arrived),
        Some(rx) => {
            if channel.nrows() != rx.atoms() {
                return Err(Error::DimensionMismatch(format!(
                    "channel has {} rows, rx stack has {} atoms",
                    channel.nrows(),
                    rx.atoms()
                )));
            }
            let p_rx = rx.link(Link::Output)?;
            Ok(p_rx.apply(&rx.propagate(&arrived)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diagonal, relative_frobenius_error};
    use crate::sim::geometry::GeometrySpec;

    fn geometry(layers: usize, nx: usize) -> SimGeometry {
        GeometrySpec {
            layers,
            grid_nx: nx,
            grid_ny: nx,
            thickness_wl: 2.0 * (layers.max(2) - 1) as f64,
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn wrap_phase_range() {
        for t in [-1e-300, -TAU, -0.5, 0.0, 3.0, TAU, 7.0 * TAU + 0.1, -1e-17] {
            let w = wrap_phase(t);
            assert!((0.0..TAU).contains(&w), "{t} -> {w}");
        }
    }

    #[test]
    fn single_layer_transfer_is_phase_diagonal() {
        let stack = SimStack::random(geometry(1, 3), 11).unwrap();
        let s = sim_transfer(&stack);
        assert_eq!(s, diagonal(&stack.phases().transmission(0)));
        assert!(s.diagonal().iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_phases_give_bare_propagation_product() {
        let g = geometry(3, 2);
        let stack = SimStack::new(g.clone(), PhaseConfig::zeros(3, 4)).unwrap();
        let w2 = build_propagation_matrix(&g, Link::Layer(1)).unwrap();
        let w3 = build_propagation_matrix(&g, Link::Layer(2)).unwrap();
        assert!(relative_frobenius_error(&sim_transfer(&stack), &(&w3 * &w2)) < 1e-14);
    }

    #[test]
    fn transfer_invariant_under_full_turns() {
        let mut stack = SimStack::random(geometry(2, 2), 3).unwrap();
        let before = sim_transfer(&stack);
        let shifted: Vec<f64> = stack.phases().as_slice().iter().map(|t| t + 2.0 * TAU).collect();
        stack.phases_mut().assign(&shifted);
        assert!(relative_frobenius_error(&sim_transfer(&stack), &before) < 1e-13);
    }

    #[test]
    fn cache_rebuild_is_bit_exact() {
        let mut stack = SimStack::random(geometry(3, 3), 5).unwrap();
        let before: Vec<ComplexMatrix> = (1..3).map(|l| stack.link(Link::Layer(l)).unwrap().matrix().clone()).collect();
        let p_before = stack.input_matrix().unwrap().clone();
        stack.rebuild_cache().unwrap();
        for l in 1..3 {
            assert_eq!(stack.link(Link::Layer(l)).unwrap().matrix(), &before[l - 1]);
        }
        assert_eq!(stack.input_matrix().unwrap(), &p_before);
    }

    #[test]
    fn end_to_end_identity_channel_zero_phases() {
        let g = geometry(1, 3);
        let tx = SimStack::new(g.clone(), PhaseConfig::zeros(1, 9)).unwrap();
        let rx = SimStack::new(g.clone(), PhaseConfig::zeros(1, 9)).unwrap();
        let h = ComplexMatrix::identity(9, 9);
        let got = end_to_end_channel(&tx, &h, Some(&rx)).unwrap();
        let expected = rx.output_matrix().unwrap() * &h * tx.input_matrix().unwrap();
        assert_eq!(got.shape(), (4, 4));
        assert!(relative_frobenius_error(&got, &expected) < 1e-14);
        let zero = end_to_end_channel(&tx, &ComplexMatrix::zeros(9, 9), Some(&rx)).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn end_to_end_dimension_checks() {
        let tx = SimStack::random(geometry(2, 2), 1).unwrap();
        let rx = SimStack::random(geometry(2, 3), 2).unwrap();
        assert!(end_to_end_channel(&tx, &ComplexMatrix::zeros(4, 5), None).is_err());
        assert!(end_to_end_channel(&tx, &ComplexMatrix::zeros(4, 4), Some(&rx)).is_err());
        assert_eq!(end_to_end_channel(&tx, &ComplexMatrix::zeros(9, 4), Some(&rx)).unwrap().shape(), (4, 4));
        assert_eq!(end_to_end_channel(&tx, &ComplexMatrix::zeros(3, 4), None).unwrap().shape(), (3, 4));
    }

    #[test]
    fn phase_text_round_trip_and_hash_check() {
        let stack = SimStack::random(geometry(2, 2), 9).unwrap();
        let hash = stack.geometry().fingerprint();
        let mut buf = Vec::new();
        stack.phases().write_text(&hash, &mut buf).unwrap();
        let back = PhaseConfig::read_text(buf.as_slice(), Some(&hash)).unwrap();
        assert_eq!(&back, stack.phases());
        assert!(PhaseConfig::read_text(buf.as_slice(), Some("deadbeef")).is_err());
    }
}
