//! Seeded channel generators: i.i.d. and spatially correlated Rayleigh
//! fading, scatterer multipath with spherical wavefronts, and plane-wave
//! steering fields.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Point3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector, C64, J};

/// Deterministic generator for `(seed, stream)`. Streams give independent
/// substreams for trials, seeds or channel roles.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Circularly symmetric complex Gaussian with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    IidRayleigh,
    CorrelatedField,
    ScattererMultipath,
    PlaneWave,
}

/// Positions that generated a realization, when the model is geometric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelSnapshot {
    pub tx_positions: Vec<Point3<f64>>,
    pub rx_positions: Vec<Point3<f64>>,
    pub scatterers: Vec<Point3<f64>>,
}

/// One draw of a channel, `rx x tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub matrix: ComplexMatrix,
    pub model: ChannelModel,
    pub seed: u64,
    pub snapshot: ChannelSnapshot,
}

pub fn sample_iid_rayleigh(rx: usize, tx: usize, seed: u64) -> Result<ChannelRealization> {
    if rx == 0 || tx == 0 {
        return Err(Error::InvalidArgument("channel dimensions must be at least 1".into()));
    }
    let mut rng = rng_for(seed, 0);
    // filled column by column so the draw order is fixed
    let mut matrix = ComplexMatrix::zeros(rx, tx);
    for j in 0..tx {
        for i in 0..rx {
            matrix[(i, j)] = complex_gaussian(&mut rng);
        }
    }
    Ok(ChannelRealization {
        matrix,
        model: ChannelModel::IidRayleigh,
        seed,
        snapshot: ChannelSnapshot::default(),
    })
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Isotropic-scattering correlation between two positions:
/// `sinc(2 |p - q| / lambda)`.
pub fn spatial_correlation(p: &Point3<f64>, q: &Point3<f64>, wavelength: f64) -> f64 {
    sinc(2.0 * (p - q).norm() / wavelength)
}

/// Zero-mean complex Gaussian field over a fixed set of positions with the
/// sinc covariance. The coloring factor comes from an eigendecomposition of
/// the covariance with non-positive (and numerically negligible) modes
/// dropped.
#[derive(Debug, Clone)]
pub struct CorrelatedField {
    factor: DMatrix<f64>,
}

impl CorrelatedField {
    pub fn new(positions: &[Point3<f64>], wavelength: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("correlated field needs at least one position".into()));
        }
        if !(wavelength > 0.0) {
            return Err(Error::InvalidArgument(format!("wavelength must be positive, got {wavelength}")));
        }
        let n = positions.len();
        let cov = DMatrix::from_fn(n, n, |i, j| spatial_correlation(&positions[i], &positions[j], wavelength));
        Ok(Self::from_covariance(cov))
    }

    /// Builds the coloring from an arbitrary symmetric covariance.
    pub fn from_covariance(cov: DMatrix<f64>) -> Self {
        let n = cov.nrows();
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let keep: Vec<usize> = (0..n)
            .filter(|&k| eig.eigenvalues[k] > 1e-13 * max)
            .collect();
        let factor = DMatrix::from_fn(n, keep.len(), |i, c| {
            let k = keep[c];
            eig.eigenvectors[(i, k)] * eig.eigenvalues[k].sqrt()
        });
        Self { factor }
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.nrows() == 0
    }

    /// Number of retained modes.
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexVector {
        let z: Vec<C64> = (0..self.rank()).map(|_| complex_gaussian(rng)).collect();
        let mut out = ComplexVector::zeros(self.len());
        for (k, zk) in z.iter().enumerate() {
            for i in 0..self.len() {
                out[i] += zk * self.factor[(i, k)];
            }
        }
        out
    }
}

pub fn sample_correlated_field(positions: &[Point3<f64>], wavelength: f64, seed: u64) -> Result<ComplexVector> {
    let field = CorrelatedField::new(positions, wavelength)?;
    Ok(field.sample(&mut rng_for(seed, 0)))
}

/// Point scatterers with per-path complex gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererSet {
    pub positions: Vec<Point3<f64>>,
    pub gains: Vec<C64>,
    /// Power path-loss exponent per segment; 2 gives amplitude `1/d`.
    pub path_loss_exponent: f64,
    /// Amplitude at 1 m.
    pub reference_gain: f64,
    pub seed: u64,
}

impl ScattererSet {
    pub fn new(positions: Vec<Point3<f64>>, gains: Vec<C64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("at least one scatterer is required".into()));
        }
        if positions.len() != gains.len() {
            return Err(Error::DimensionMismatch("one gain per scatterer".into()));
        }
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::InvalidArgument("scatterer gains must be finite".into()));
        }
        Ok(Self {
            positions,
            gains,
            path_loss_exponent: 2.0,
            reference_gain: 1.0,
            seed: 0,
        })
    }

    /// `count` scatterers uniform in the box `[lo, hi]` with CN(0, 1) gains.
    pub fn random(count: usize, lo: Point3<f64>, hi: Point3<f64>, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, 1);
        let positions: Vec<Point3<f64>> = (0..count)
            .map(|_| {
                Point3::new(
                    rng.random_range(lo.x..=hi.x),
                    rng.random_range(lo.y..=hi.y),
                    rng.random_range(lo.z..=hi.z),
                )
            })
            .collect();
        let gains = (0..count).map(|_| complex_gaussian(&mut rng)).collect();
        let mut set = Self::new(positions, gains)?;
        set.seed = seed;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Spherical-wave response of one segment of length `d`.
    pub fn segment(&self, d: f64, wavelength: f64) -> C64 {
        self.reference_gain * (J * (2.0 * PI * d / wavelength)).exp() / d.powf(self.path_loss_exponent / 2.0)
    }

    /// Response matrix `A[i, k]` from element `i` to scatterer `k`.
    pub fn response(&self, elements: &[Point3<f64>], wavelength: f64) -> Result<ComplexMatrix> {
        let mut a = ComplexMatrix::zeros(elements.len(), self.len());
        for (i, e) in elements.iter().enumerate() {
            for (k, s) in self.positions.iter().enumerate() {
                a[(i, k)] = self.response_entry(e, s, wavelength)?;
            }
        }
        Ok(a)
    }

    pub(crate) fn response_entry(&self, element: &Point3<f64>, scatterer: &Point3<f64>, wavelength: f64) -> Result<C64> {
        let d = (element - scatterer).norm();
        if d <= f64::EPSILON * wavelength {
            return Err(Error::DegenerateGeometry(format!(
                "scatterer at {scatterer} coincides with array element"
            )));
        }
        Ok(self.segment(d, wavelength))
    }
}

/// `H = sum_k g_k a_rx(k) a_tx(k)^T`, i.e. `A_rx diag(g) A_tx^T`.
pub fn sample_scatterer_channel(
    tx_positions: &[Point3<f64>],
    rx_positions: &[Point3<f64>],
    scatterers: &ScattererSet,
    wavelength: f64,
) -> Result<ChannelRealization> {
    if tx_positions.is_empty() || rx_positions.is_empty() {
        return Err(Error::InvalidArgument("array position lists must be nonempty".into()));
    }
    let a_tx = scatterers.response(tx_positions, wavelength)?;
    let mut a_rx = scatterers.response(rx_positions, wavelength)?;
    for (k, g) in scatterers.gains.iter().enumerate() {
        for i in 0..a_rx.nrows() {
            a_rx[(i, k)] *= g;
        }
    }
    Ok(ChannelRealization {
        matrix: a_rx * a_tx.transpose(),
        model: ChannelModel::ScattererMultipath,
        seed: scatterers.seed,
        snapshot: ChannelSnapshot {
            tx_positions: tx_positions.to_vec(),
            rx_positions: rx_positions.to_vec(),
            scatterers: scatterers.positions.clone(),
        },
    })
}

/// Arrival direction. `elevation` is measured from the array normal (+z),
/// `azimuth` from +x in the array plane, both in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub const BORESIGHT: Direction = Direction { azimuth: 0.0, elevation: 0.0 };

    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !(azimuth.is_finite() && (0.0..=PI / 2.0).contains(&elevation)) {
            return Err(Error::InvalidArgument(format!(
                "direction out of range: azimuth {azimuth}, elevation {elevation}"
            )));
        }
        Ok(Self { azimuth, elevation })
    }

    /// Direction with the given in-plane direction cosines `(u, v)`,
    /// `u^2 + v^2 <= 1`.
    pub fn from_direction_cosines(u: f64, v: f64) -> Result<Self> {
        let s = (u * u + v * v).sqrt();
        if s > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!("direction cosines ({u}, {v}) outside the unit disc")));
        }
        Ok(Self {
            azimuth: v.atan2(u),
            elevation: s.min(1.0).asin(),
        })
    }

    pub fn unit_vector(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(se * ca, se * sa, ce)
    }

    /// Great-circle angle to `other`, radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        self.unit_vector().dot(&other.unit_vector()).clamp(-1.0, 1.0).acos()
    }
}

/// Plane-wave phase profile `exp(-j 2 pi <k, p> / lambda)` over `positions`.
pub fn steering_field(direction: &Direction, positions: &[Point3<f64>], wavelength: f64) -> ComplexVector {
    let k = direction.unit_vector();
    ComplexVector::from_iterator(
        positions.len(),
        positions
            .iter()
            .map(|p| (-J * (2.0 * PI * k.dot(&p.coords) / wavelength)).exp()),
    )
}
