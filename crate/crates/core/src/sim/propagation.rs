//! Rayleigh-Sommerfeld coupling between point sources on parallel planes.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{ComplexMatrix, C64, J};
use crate::sim::geometry::SimGeometry;

/// Selects one of the cached propagation matrices of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Input ports to layer 0; shape `N x tx_ports`.
    Input,
    /// Layer `l - 1` to layer `l` (0-based, `1 <= l < L`); shape `N x N`.
    Layer(usize),
    /// Last layer to output ports; shape `rx_ports x N`.
    Output,
}

/// Diffraction weight of a secondary source of area `area` at `from`,
/// observed at `to`:
///
/// `w = (A cos(chi) / r) (1/(2 pi r) - j/lambda) exp(j 2 pi r / lambda)`
///
/// `chi` is the angle between `to - from` and `normal`. Points behind the
/// source plane receive nothing.
pub fn rayleigh_sommerfeld(
    area: f64,
    wavelength: f64,
    from: &Point3<f64>,
    to: &Point3<f64>,
    normal: &Vector3<f64>,
) -> Result<C64> {
    if (normal.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "source plane normal must have unit norm, got {}",
            normal.norm()
        )));
    }
    let d = to - from;
    let r = d.norm();
    if r <= f64::EPSILON * wavelength {
        return Err(Error::DegenerateGeometry(format!(
            "coincident points {from} and {to}"
        )));
    }
    let cos_chi = (d.dot(normal) / r).clamp(0.0, 1.0);
    if cos_chi == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let amplitude = area * cos_chi / r;
    let radial = C64::new(1.0 / (2.0 * PI * r), -1.0 / wavelength);
    Ok(amplitude * radial * (J * (2.0 * PI * r / wavelength)).exp())
}

/// [`rayleigh_sommerfeld`] with the atom area and wavelength of `geometry`.
pub fn propagation_coefficient(
    geometry: &SimGeometry,
    from: &Point3<f64>,
    to: &Point3<f64>,
    source_plane_normal: &Vector3<f64>,
) -> Result<C64> {
    rayleigh_sommerfeld(
        geometry.atom_area(),
        geometry.wavelength(),
        from,
        to,
        source_plane_normal,
    )
}

/// Coupling matrix from `sources` (columns) to `targets` (rows).
pub fn coupling_matrix(
    geometry: &SimGeometry,
    sources: &[Point3<f64>],
    targets: &[Point3<f64>],
    normal: &Vector3<f64>,
) -> Result<ComplexMatrix> {
    let rows = exec::map_range(targets.len(), |i| {
        sources
            .iter()
            .map(|s| propagation_coefficient(geometry, s, &targets[i], normal))
            .collect::<Result<Vec<_>>>()
    });
    let mut m = ComplexMatrix::zeros(targets.len(), sources.len());
    for (i, row) in rows.into_iter().enumerate() {
        for (j, w) in row?.into_iter().enumerate() {
            m[(i, j)] = w;
        }
    }
    Ok(m)
}

/// Builds the propagation matrix for `link`. Entry `(n, n')` couples source
/// `n'` (atom of the previous layer, or input port) to target `n` (atom of
/// the next layer, or output port).
pub fn build_propagation_matrix(geometry: &SimGeometry, link: Link) -> Result<ComplexMatrix> {
    let normal = geometry.layer_normal();
    let layers = geometry.num_layers();
    match link {
        Link::Input => {
            if geometry.input_ports().is_empty() {
                return Err(Error::InvalidArgument("geometry has no input ports".into()));
            }
            coupling_matrix(geometry, geometry.input_ports(), &geometry.layer_positions(0), &normal)
        }
        Link::Layer(l) => {
            if l == 0 || l >= layers {
                return Err(Error::LayerOutOfRange { index: l, layers });
            }
            coupling_matrix(
                geometry,
                &geometry.layer_positions(l - 1),
                &geometry.layer_positions(l),
                &normal,
            )
        }
        Link::Output => {
            if geometry.output_ports().is_empty() {
                return Err(Error::InvalidArgument("geometry has no output ports".into()));
            }
            coupling_matrix(
                geometry,
                &geometry.layer_positions(layers - 1),
                geometry.output_ports(),
                &normal,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::GeometrySpec;

    fn unit_geometry(layers: usize, nx: usize, gap_wl: f64) -> SimGeometry {
        GeometrySpec {
            wavelength_m: 1.0,
            layers,
            grid_nx: nx,
            grid_ny: nx,
            atom_spacing_wl: 0.5,
            thickness_wl: gap_wl * (layers.max(2) - 1) as f64,
            tx_ports: 0,
            rx_ports: 0,
            ..GeometrySpec::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn on_axis_unit_distance_value() {
        // r = lambda, A = (lambda/2)^2, cos = 1: w = 1/(8 pi) - j/4.
        let w = rayleigh_sommerfeld(
            0.25,
            1.0,
            &Point3::origin(),
            &Point3::new(0.0, 0.0, 1.0),
            &Vector3::z(),
        )
        .unwrap();
        assert!((w.re - 1.0 / (8.0 * PI)).abs() < 1e-14, "{w}");
        assert!((w.im + 0.25).abs() < 1e-14, "{w}");
    }

    #[test]
    fn in_plane_and_behind_are_zero() {
        let o = Point3::origin();
        let n = Vector3::z();
        assert_eq!(rayleigh_sommerfeld(1.0, 1.0, &o, &Point3::new(1.0, 0.0, 0.0), &n).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(rayleigh_sommerfeld(1.0, 1.0, &o, &Point3::new(0.2, 0.0, -1.0), &n).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn coincident_points_are_an_error() {
        let p = Point3::new(0.1, 0.2, 0.3);
        assert!(matches!(
            rayleigh_sommerfeld(1.0, 1.0, &p, &p, &Vector3::z()),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            rayleigh_sommerfeld(1.0, 1.0, &p, &Point3::origin(), &Vector3::new(0.0, 0.0, 2.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn magnitude_decays_with_distance() {
        let dir = Vector3::new(0.3, -0.2, 1.0).normalize();
        for r in [0.3, 1.0, 2.7, 10.0] {
            let near = rayleigh_sommerfeld(0.25, 1.0, &Point3::origin(), &Point3::from(dir * r), &Vector3::z()).unwrap();
            let far = rayleigh_sommerfeld(0.25, 1.0, &Point3::origin(), &Point3::from(dir * 2.0 * r), &Vector3::z()).unwrap();
            assert!(far.norm() < near.norm());
        }
    }

    #[test]
    fn reciprocity_when_normals_follow_displacement() {
        let a = Point3::new(0.1, -0.4, 0.0);
        let b = Point3::new(0.7, 0.2, 1.3);
        let d = (b - a).normalize();
        let ab = rayleigh_sommerfeld(0.25, 1.0, &a, &b, &d).unwrap();
        let ba = rayleigh_sommerfeld(0.25, 1.0, &b, &a, &(-d)).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn single_atom_link_matches_coefficient() {
        let g = unit_geometry(2, 1, 1.0);
        let w = build_propagation_matrix(&g, Link::Layer(1)).unwrap();
        assert_eq!(w.shape(), (1, 1));
        assert!((w[(0, 0)] - C64::new(1.0 / (8.0 * PI), -0.25)).norm() < 1e-14);
    }

    #[test]
    fn two_by_two_grid_groups_by_distance() {
        let g = unit_geometry(2, 2, 1.0);
        let w = build_propagation_matrix(&g, Link::Layer(1)).unwrap();
        for n in 1..4 {
            assert_eq!(w[(n, n)], w[(0, 0)]);
        }
        // Neighbours along x or y share one distance, diagonal pairs another.
        let side = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 3), (3, 1), (2, 3), (3, 2)];
        for &(i, j) in &side {
            assert!((w[(i, j)] - w[(0, 1)]).norm() < 1e-15);
        }
        for &(i, j) in &[(0, 3), (3, 0), (1, 2), (2, 1)] {
            assert!((w[(i, j)] - w[(0, 3)]).norm() < 1e-15);
        }
        assert!(w[(0, 1)].norm() > w[(0, 3)].norm());
    }

    #[test]
    fn mirror_symmetry_of_square_grid() {
        let g = unit_geometry(2, 3, 0.8);
        let w = build_propagation_matrix(&g, Link::Layer(1)).unwrap();
        let nx = 3;
        let mirror = |n: usize| (n / nx) * nx + (nx - 1 - n % nx);
        for i in 0..9 {
            for j in 0..9 {
                assert!((w[(i, j)] - w[(mirror(i), mirror(j))]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn link_index_validation() {
        let g = unit_geometry(3, 2, 1.0);
        assert!(matches!(build_propagation_matrix(&g, Link::Layer(0)), Err(Error::LayerOutOfRange { .. })));
        assert!(matches!(build_propagation_matrix(&g, Link::Layer(3)), Err(Error::LayerOutOfRange { .. })));
        assert!(build_propagation_matrix(&g, Link::Layer(2)).is_ok());
        assert!(build_propagation_matrix(&g, Link::Input).is_err());
    }

    #[test]
    fn port_matrices_have_port_dimensions() {
        let g = GeometrySpec { layers: 2, grid_nx: 3, grid_ny: 3, ..Default::default() }.build().unwrap();
        assert_eq!(build_propagation_matrix(&g, Link::Input).unwrap().shape(), (9, 4));
        assert_eq!(build_propagation_matrix(&g, Link::Output).unwrap().shape(), (4, 9));
    }
}
