//! Physical layout of a stacked metasurface: layer planes, atom grids and
//! the transmit/receive antennas that face the first and last layer.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wavelength at 28 GHz.
pub const WAVELENGTH_28GHZ: f64 = SPEED_OF_LIGHT / 28.0e9;

/// Declarative geometry, expressed in wavelengths where that is natural.
/// This is what the config file carries; [`SimGeometry`] is built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub wavelength_m: f64,
    pub layers: usize,
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub atom_spacing_wl: f64,
    /// Distance between the first and last layer. For a single layer this
    /// is used as the port standoff only.
    pub thickness_wl: f64,
    pub tx_ports: usize,
    pub rx_ports: usize,
    pub port_spacing_wl: f64,
    /// Distance from the port array to the adjacent layer; `None` means one
    /// layer spacing.
    pub port_standoff_wl: Option<f64>,
}

impl Default for GeometrySpec {
    /// One side of the MIMO diagonalization setup: 10x10 atoms at half
    /// wavelength, four layers, 10 wavelengths thick, four ports.
    fn default() -> Self {
        Self {
            wavelength_m: WAVELENGTH_28GHZ,
            layers: 4,
            grid_nx: 10,
            grid_ny: 10,
            atom_spacing_wl: 0.5,
            thickness_wl: 10.0,
            tx_ports: 4,
            rx_ports: 4,
            port_spacing_wl: 0.5,
            port_standoff_wl: None,
        }
    }
}

impl GeometrySpec {
    pub fn layer_spacing_wl(&self) -> f64 {
        if self.layers > 1 {
            self.thickness_wl / (self.layers - 1) as f64
        } else {
            self.thickness_wl
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidGeometry(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("wavelength_m", self.wavelength_m)?;
        positive("atom_spacing_wl", self.atom_spacing_wl)?;
        positive("thickness_wl", self.thickness_wl)?;
        positive("port_spacing_wl", self.port_spacing_wl)?;
        if let Some(s) = self.port_standoff_wl {
            positive("port_standoff_wl", s)?;
        }
        if self.layers == 0 {
            return Err(Error::InvalidGeometry("layers must be at least 1".into()));
        }
        if self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(Error::InvalidGeometry("grid dimensions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SimGeometry> {
        self.validate()?;
        let lambda = self.wavelength_m;
        let layer_spacing = self.layer_spacing_wl() * lambda;
        let standoff = self.port_standoff_wl.map_or(layer_spacing, |s| s * lambda);
        let last_z = (self.layers - 1) as f64 * layer_spacing;
        let spacing = self.port_spacing_wl * lambda;
        SimGeometry::new(
            lambda,
            self.layers,
            self.grid_nx,
            self.grid_ny,
            self.atom_spacing_wl * lambda,
            layer_spacing,
            linear_ports(self.tx_ports, spacing, -standoff),
            linear_ports(self.rx_ports, spacing, last_z + standoff),
        )
    }
}

/// `count` points on a line along x, centered on the stack axis, at height `z`.
pub fn linear_ports(count: usize, spacing: f64, z: f64) -> Vec<Point3<f64>> {
    let center = (count as f64 - 1.0) / 2.0;
    (0..count)
        .map(|i| Point3::new((i as f64 - center) * spacing, 0.0, z))
        .collect()
}

/// Physical SIM geometry. Layer `l` (0-based) lies in the plane
/// `z = l * layer_spacing`; all planes face +z. Atoms form a square-pitch
/// `nx x ny` grid centered on the z axis, indexed row-major (`n = iy*nx + ix`).
#[derive(Debug, Clone, PartialEq)]
pub struct SimGeometry {
    wavelength: f64,
    num_layers: usize,
    grid_nx: usize,
    grid_ny: usize,
    atom_spacing: f64,
    layer_spacing: f64,
    atom_area: f64,
    input_ports: Vec<Point3<f64>>,
    output_ports: Vec<Point3<f64>>,
}

impl SimGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        wavelength: f64,
        num_layers: usize,
        grid_nx: usize,
        grid_ny: usize,
        atom_spacing: f64,
        layer_spacing: f64,
        input_ports: Vec<Point3<f64>>,
        output_ports: Vec<Point3<f64>>,
    ) -> Result<Self> {
        let g = Self {
            wavelength,
            num_layers,
            grid_nx,
            grid_ny,
            atom_spacing,
            layer_spacing,
            atom_area: atom_spacing * atom_spacing,
            input_ports,
            output_ports,
        };
        g.validate()?;
        Ok(g)
    }

    /// Overrides the default atom area (`atom_spacing^2`).
    pub fn with_atom_area(mut self, area: f64) -> Result<Self> {
        self.atom_area = area;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("atom_spacing", self.atom_spacing),
            ("layer_spacing", self.layer_spacing),
            ("atom_area", self.atom_area),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGeometry(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.num_layers == 0 || self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(Error::InvalidGeometry("layer and grid counts must be at least 1".into()));
        }
        let ports_ok = self
            .input_ports
            .iter()
            .chain(&self.output_ports)
            .all(|p| p.coords.iter().all(|c| c.is_finite()));
        if !ports_ok {
            return Err(Error::InvalidGeometry("port coordinates must be finite".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }
    pub fn grid(&self) -> (usize, usize) {
        (self.grid_nx, self.grid_ny)
    }
    pub fn atoms_per_layer(&self) -> usize {
        self.grid_nx * self.grid_ny
    }
    pub fn atom_spacing(&self) -> f64 {
        self.atom_spacing
    }
    pub fn layer_spacing(&self) -> f64 {
        self.layer_spacing
    }
    pub fn atom_area(&self) -> f64 {
        self.atom_area
    }
    pub fn input_ports(&self) -> &[Point3<f64>] {
        &self.input_ports
    }
    pub fn output_ports(&self) -> &[Point3<f64>] {
        &self.output_ports
    }

    /// Distance from the first to the last layer plane.
    pub fn thickness(&self) -> f64 {
        (self.num_layers - 1) as f64 * self.layer_spacing
    }

    /// Unit normal shared by every layer plane.
    pub fn layer_normal(&self) -> Vector3<f64> {
        Vector3::z()
    }

    pub fn layer_z(&self, layer: usize) -> f64 {
        layer as f64 * self.layer_spacing
    }

    /// In-plane offset of atom `n` from the stack axis.
    pub fn atom_offset(&self, n: usize) -> (f64, f64) {
        let (ix, iy) = (n % self.grid_nx, n / self.grid_nx);
        let cx = (self.grid_nx as f64 - 1.0) / 2.0;
        let cy = (self.grid_ny as f64 - 1.0) / 2.0;
        ((ix as f64 - cx) * self.atom_spacing, (iy as f64 - cy) * self.atom_spacing)
    }

    pub fn atom_position(&self, layer: usize, n: usize) -> Point3<f64> {
        let (x, y) = self.atom_offset(n);
        Point3::new(x, y, self.layer_z(layer))
    }

    pub fn layer_positions(&self, layer: usize) -> Vec<Point3<f64>> {
        (0..self.atoms_per_layer())
            .map(|n| self.atom_position(layer, n))
            .collect()
    }

    /// Stable hex digest of every field, used to tie phase files to the
    /// geometry they were trained on.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        put(self.wavelength);
        put(self.num_layers as f64);
        put(self.grid_nx as f64);
        put(self.grid_ny as f64);
        put(self.atom_spacing);
        put(self.layer_spacing);
        put(self.atom_area);
        put(self.input_ports.len() as f64);
        for p in &self.input_ports {
            p.coords.iter().for_each(|&c| put(c));
        }
        put(self.output_ports.len() as f64);
        for p in &self.output_ports {
            p.coords.iter().for_each(|&c| put(c));
        }
        hex::encode(h.finalize())
    }
}
