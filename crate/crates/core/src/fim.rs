//! Flexible surfaces: per-element displacement along the surface normal,
//! single-user diversity and multi-antenna capacity by block coordinate
//! descent.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::channels::{rng_for, CorrelatedField, ScattererSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::experiments::{db, derive_seed};
use crate::linalg::{singular_values_desc, ComplexMatrix, C64};

/// Element array whose elements may move along `normal` by at most
/// `range_wl` wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimArray {
    pub base: Vec<Point3<f64>>,
    pub normal: Vector3<f64>,
    pub wavelength: f64,
    pub range_wl: f64,
    displacement_wl: Vec<f64>,
}

impl FimArray {
    pub fn new(base: Vec<Point3<f64>>, normal: Vector3<f64>, wavelength: f64, range_wl: f64) -> Result<Self> {
        if !(range_wl >= 0.0 && range_wl.is_finite()) {
            return Err(Error::InvalidArgument(format!("morphing range must be non-negative, got {range_wl}")));
        }
        if !(wavelength > 0.0) || (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGeometry("need a positive wavelength and a unit normal".into()));
        }
        let n = base.len();
        Ok(Self {
            base,
            normal,
            wavelength,
            range_wl,
            displacement_wl: vec![0.0; n],
        })
    }

    /// `nx x ny` grid in the plane `z = z0` (row-major, centered on the
    /// z axis) with normal `+z` or `-z`.
    pub fn planar(nx: usize, ny: usize, spacing_wl: f64, wavelength: f64, z0: f64, facing_up: bool, range_wl: f64) -> Result<Self> {
        let d = spacing_wl * wavelength;
        let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
        let base = (0..nx * ny)
            .map(|n| Point3::new((n % nx) as f64 - cx, (n / nx) as f64 - cy, 0.0))
            .map(|p| Point3::new(p.x * d, p.y * d, z0))
            .collect();
        let normal = if facing_up { Vector3::z() } else { -Vector3::z() };
        Self::new(base, normal, wavelength, range_wl)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn displacements(&self) -> &[f64] {
        &self.displacement_wl
    }

    pub fn set_displacement(&mut self, i: usize, d_wl: f64) -> Result<()> {
        if d_wl.abs() > self.range_wl {
            return Err(Error::InvalidArgument(format!(
                "displacement {d_wl} exceeds morphing range {}",
                self.range_wl
            )));
        }
        self.displacement_wl[i] = d_wl;
        Ok(())
    }

    /// Widens (or narrows) the range; displacements beyond it are clamped.
    pub fn with_range(mut self, range_wl: f64) -> Result<Self> {
        if !(range_wl >= 0.0 && range_wl.is_finite()) {
            return Err(Error::InvalidArgument(format!("morphing range must be non-negative, got {range_wl}")));
        }
        self.range_wl = range_wl;
        for d in &mut self.displacement_wl {
            *d = d.clamp(-range_wl, range_wl);
        }
        Ok(self)
    }

    pub fn position_with(&self, i: usize, d_wl: f64) -> Point3<f64> {
        self.base[i] + self.normal * (d_wl * self.wavelength)
    }

    pub fn position(&self, i: usize) -> Point3<f64> {
        self.position_with(i, self.displacement_wl[i])
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }
}

/// Candidate displacements `k * step` within `[-range, range]`, ordered by
/// increasing magnitude (negative before positive). The outermost
/// candidates never exceed the range.
pub fn displacement_grid(range_wl: f64, step_wl: f64) -> Result<Vec<f64>> {
    if !(range_wl >= 0.0 && range_wl.is_finite()) || !(step_wl > 0.0) {
        return Err(Error::InvalidArgument(format!("bad grid: range {range_wl}, step {step_wl}")));
    }
    let k = (range_wl / step_wl + 1e-9).floor() as usize;
    let mut out = vec![0.0];
    for i in 1..=k {
        let d = (i as f64 * step_wl).min(range_wl);
        out.push(-d);
        out.push(d);
    }
    Ok(out)
}

/// Moves each element independently to the candidate displacement with the
/// largest `|field|^2`; the smallest displacement wins ties.
pub fn morph_single_user<F>(field: F, array: &FimArray, step_wl: f64) -> Result<FimArray>
where
    F: Fn(&Point3<f64>) -> C64,
{
    let grid = displacement_grid(array.range_wl, step_wl)?;
    let mut out = array.clone();
    for i in 0..array.len() {
        let mut best = (grid[0], field(&array.position_with(i, grid[0])).norm_sqr());
        for &d in &grid[1..] {
            let p = field(&array.position_with(i, d)).norm_sqr();
            if p > best.1 {
                best = (d, p);
            }
        }
        out.set_displacement(i, best.0)?;
    }
    Ok(out)
}

/// `E[max |h|^2] / E[|h(0)|^2]` in dB for each range, from field samples on
/// the symmetric grid `offsets` (one row per trial). Ranges share samples.
pub fn diversity_from_samples(samples: &[Vec<C64>], offsets_wl: &[f64], ranges_wl: &[f64]) -> Result<Vec<f64>> {
    let center = offsets_wl
        .iter()
        .position(|&d| d == 0.0)
        .ok_or_else(|| Error::InvalidArgument("sample grid must contain the origin".into()))?;
    let per_trial: Vec<Vec<f64>> = exec::map_slice(samples, |h| {
        let mut row = Vec::with_capacity(ranges_wl.len() + 1);
        row.push(h[center].norm_sqr());
        for &r in ranges_wl {
            let m = h
                .iter()
                .zip(offsets_wl)
                .filter(|(_, &d)| d.abs() <= r + 1e-12)
                .fold(0.0f64, |m, (z, _)| m.max(z.norm_sqr()));
            row.push(m);
        }
        row
    });
    let column = |j: usize| exec::pairwise_sum(&per_trial.iter().map(|r| r[j]).collect::<Vec<_>>());
    let fixed = column(0);
    if fixed == 0.0 {
        return Err(Error::ZeroSignal("field at the reference position"));
    }
    Ok((1..=ranges_wl.len()).map(|j| db(column(j) / fixed)).collect())
}

/// Diversity gain of a single moving element over a 1D correlated Rayleigh
/// field, for several ranges on common random numbers.
pub fn diversity_gain_curve(ranges_wl: &[f64], wavelength: f64, trials: usize, step_wl: f64, seed: u64) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    if let Some(r) = ranges_wl.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument(format!("morphing range must be non-negative, got {r}")));
    }
    let max_range = ranges_wl.iter().copied().fold(0.0, f64::max);
    let k = (max_range / step_wl + 1e-9).floor() as i64;
    let mut offsets: Vec<f64> = (-k..=k).map(|i| i as f64 * step_wl).collect();
    for o in &mut offsets {
        *o = o.clamp(-max_range, max_range);
    }
    let positions: Vec<Point3<f64>> = offsets.iter().map(|d| Point3::new(0.0, 0.0, d * wavelength)).collect();
    let field = CorrelatedField::new(&positions, wavelength)?;
    let samples: Vec<Vec<C64>> = exec::map_range(trials, |t| {
        let mut rng = rng_for(seed, t as u64);
        field.sample(&mut rng).iter().copied().collect()
    });
    diversity_from_samples(&samples, &offsets, ranges_wl)
}

pub fn diversity_gain(range_wl: f64, wavelength: f64, trials: usize, seed: u64) -> Result<f64> {
    Ok(diversity_gain_curve(&[range_wl], wavelength, trials, 0.01, seed)?[0])
}

/// Water-filling over channel power gains: `p_i = max(0, mu - noise/g_i)`
/// with `sum p_i = power`. Returns the allocation and
/// `sum log2(1 + p_i g_i / noise)`.
pub fn water_filling(gains: &[f64], noise: f64, power: f64) -> Result<(Vec<f64>, f64)> {
    if !(power > 0.0) || !(noise > 0.0) {
        return Err(Error::InvalidArgument("power and noise must be positive".into()));
    }
    if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument("gains must be finite and non-negative".into()));
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::ZeroSignal("all eigenvalues are zero"));
    }
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    let mut active = order.len();
    let mut mu;
    loop {
        let floor: f64 = order[..active].iter().map(|&i| noise / gains[i]).sum();
        mu = (power + floor) / active as f64;
        if mu > noise / gains[order[active - 1]] || active == 1 {
            break;
        }
        active -= 1;
    }
    let mut alloc = vec![0.0; gains.len()];
    for &i in &order[..active] {
        alloc[i] = (mu - noise / gains[i]).max(0.0);
    }
    let capacity = alloc
        .iter()
        .zip(gains)
        .map(|(p, g)| (1.0 + p * g / noise).log2())
        .sum();
    Ok((alloc, capacity))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenchannelSpectrum {
    /// Descending; `min(rx, tx)` values.
    pub singular_values: Vec<f64>,
    /// `20 log10(sigma)`.
    pub gains_db: Vec<f64>,
    pub allocation: Vec<f64>,
    /// Bits per channel use.
    pub capacity: f64,
}

impl EigenchannelSpectrum {
    pub fn from_singular_values(singular_values: Vec<f64>, noise: f64, power: f64) -> Result<Self> {
        let gains: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
        let (allocation, capacity) = water_filling(&gains, noise, power)?;
        Ok(Self {
            gains_db: singular_values.iter().map(|s| 20.0 * s.log10()).collect(),
            singular_values,
            allocation,
            capacity,
        })
    }

    pub fn from_matrix(h: &ComplexMatrix, noise: f64, power: f64) -> Result<Self> {
        Self::from_singular_values(singular_values_desc(h), noise, power)
    }
}

/// Channel `A_rx diag(g) A_tx^T` as a function of element positions,
/// evaluated through the small core `R_rx diag(g) R_tx^T` of the two
/// thin QR factorizations.
#[derive(Debug, Clone)]
pub struct ScattererModel {
    pub scatterers: ScattererSet,
    pub wavelength: f64,
}

impl ScattererModel {
    fn response_row(&self, p: &Point3<f64>) -> Result<Vec<C64>> {
        self.scatterers
            .positions
            .iter()
            .map(|s| self.scatterers.response_entry(p, s, self.wavelength))
            .collect()
    }

    pub fn response(&self, array: &FimArray) -> Result<ComplexMatrix> {
        self.scatterers.response(&array.positions(), self.wavelength)
    }

    /// Full `rx x tx` channel.
    pub fn channel(&self, tx: &FimArray, rx: &FimArray) -> Result<ComplexMatrix> {
        let mut a_rx = self.response(rx)?;
        for (k, g) in self.scatterers.gains.iter().enumerate() {
            for i in 0..a_rx.nrows() {
                a_rx[(i, k)] *= g;
            }
        }
        Ok(a_rx * self.response(tx)?.transpose())
    }

    /// Singular values of the channel, padded with zeros to `min(rx, tx)`.
    pub fn singular_values(&self, a_tx: &ComplexMatrix, a_rx: &ComplexMatrix) -> Vec<f64> {
        let count = a_tx.nrows().min(a_rx.nrows());
        let r = |a: &ComplexMatrix| -> ComplexMatrix {
            if a.nrows() >= a.ncols() {
                a.clone().qr().r()
            } else {
                a.clone()
            }
        };
        let mut core = r(a_rx);
        for (k, g) in self.scatterers.gains.iter().enumerate() {
            for i in 0..core.nrows() {
                core[(i, k)] *= g;
            }
        }
        let core = core * r(a_tx).transpose();
        let mut s = singular_values_desc(&core);
        s.resize(count, 0.0);
        s.truncate(count);
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BcdResult {
    pub rigid: EigenchannelSpectrum,
    pub morphed: EigenchannelSpectrum,
    /// Capacity before the first sweep and after each sweep.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub tx: FimArray,
    pub rx: FimArray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcdOptions {
    pub power: f64,
    pub noise: f64,
    pub step_wl: f64,
    /// Stop when a sweep gains less than this (bits per channel use).
    pub tolerance: f64,
    pub max_sweeps: usize,
}

/// Alternates element-wise displacement updates (tx elements then rx, row
/// major) with water-filling. Each element takes the candidate with the
/// highest capacity if that beats its current position.
///
/// `rigid` is evaluated with every displacement at zero; the search starts
/// from the arrays as given.
pub fn fim_capacity_bcd(model: &ScattererModel, tx: FimArray, rx: FimArray, options: &BcdOptions) -> Result<BcdResult> {
    let rigid_tx = tx.clone().with_range(0.0)?;
    let rigid_rx = rx.clone().with_range(0.0)?;
    let rigid = EigenchannelSpectrum::from_singular_values(
        model.singular_values(&model.response(&rigid_tx)?, &model.response(&rigid_rx)?),
        options.noise,
        options.power,
    )?;
    let (mut tx, mut rx) = (tx, rx);
    let mut a_tx = model.response(&tx)?;
    let mut a_rx = model.response(&rx)?;
    let capacity = |a_tx: &ComplexMatrix, a_rx: &ComplexMatrix| -> Result<f64> {
        let gains: Vec<f64> = model.singular_values(a_tx, a_rx).iter().map(|s| s * s).collect();
        Ok(water_filling(&gains, options.noise, options.power)?.1)
    };
    let mut current = capacity(&a_tx, &a_rx)?;
    let mut trace = vec![current];
    let tx_grid = displacement_grid(tx.range_wl, options.step_wl)?;
    let rx_grid = displacement_grid(rx.range_wl, options.step_wl)?;
    let mut sweeps = 0;
    if tx_grid.len() > 1 || rx_grid.len() > 1 {
        while sweeps < options.max_sweeps {
            let start = current;
            for side in 0..2 {
                let (array, grid) = if side == 0 { (&mut tx, &tx_grid) } else { (&mut rx, &rx_grid) };
                for i in 0..array.len() {
                    let rows = grid
                        .iter()
                        .map(|&d| model.response_row(&array.position_with(i, d)))
                        .collect::<Result<Vec<_>>>()?;
                    let caps = exec::map_slice(&rows, |row| {
                        let (mut t, mut r) = (a_tx.clone(), a_rx.clone());
                        let a = if side == 0 { &mut t } else { &mut r };
                        for (k, v) in row.iter().enumerate() {
                            a[(i, k)] = *v;
                        }
                        capacity(&t, &r)
                    });
                    let mut best: Option<(usize, f64)> = None;
                    for (j, c) in caps.into_iter().enumerate() {
                        let c = c?;
                        if c > best.map_or(current, |b| b.1) {
                            best = Some((j, c));
                        }
                    }
                    if let Some((j, c)) = best {
                        array.set_displacement(i, grid[j])?;
                        let a = if side == 0 { &mut a_tx } else { &mut a_rx };
                        for (k, v) in rows[j].iter().enumerate() {
                            a[(i, k)] = *v;
                        }
                        current = c;
                    }
                }
            }
            sweeps += 1;
            trace.push(current);
            if current - start < options.tolerance {
                break;
            }
        }
    }
    let morphed = EigenchannelSpectrum::from_singular_values(model.singular_values(&a_tx, &a_rx), options.noise, options.power)?;
    Ok(BcdResult {
        rigid,
        morphed,
        trace,
        sweeps,
        tx,
        rx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityConfig {
    pub wavelength_m: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub spacing_wl: f64,
    /// Distance between the two array planes.
    pub separation_wl: f64,
    pub scatterers: usize,
    /// Scatterers lie in `|x|, |y| <= half_width`, `z` in `[z_lo, z_hi]`
    /// (fractions of the separation for z).
    pub box_half_width_wl: f64,
    pub box_z_lo: f64,
    pub box_z_hi: f64,
    pub ranges_wl: Vec<f64>,
    pub bcd: BcdOptions,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            wavelength_m: crate::sim::geometry::WAVELENGTH_28GHZ,
            grid_nx: 7,
            grid_ny: 7,
            spacing_wl: 0.5,
            separation_wl: 100.0,
            scatterers: 8,
            box_half_width_wl: 50.0,
            box_z_lo: 0.2,
            box_z_hi: 0.8,
            ranges_wl: vec![0.1, 0.5],
            bcd: BcdOptions {
                power: 1.0,
                noise: 1.0,
                step_wl: 0.01,
                tolerance: 1e-9,
                max_sweeps: 50,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityReport {
    pub seed: u64,
    pub rank: usize,
    pub rigid: EigenchannelSpectrum,
    pub ranges_wl: Vec<f64>,
    pub results: Vec<BcdResult>,
}

pub fn build_scatterer_model(config: &CapacityConfig, seed: u64) -> Result<ScattererModel> {
    let lambda = config.wavelength_m;
    let (w, d) = (config.box_half_width_wl * lambda, config.separation_wl * lambda);
    let scatterers = ScattererSet::random(
        config.scatterers,
        Point3::new(-w, -w, config.box_z_lo * d),
        Point3::new(w, w, config.box_z_hi * d),
        derive_seed(seed, 1),
    )?;
    Ok(ScattererModel {
        scatterers,
        wavelength: lambda,
    })
}

/// Runs BCD for each range in turn. When ranges increase, each run starts
/// from the previous run's shape, so capacity cannot drop with range.
pub fn run_fim_capacity(config: &CapacityConfig, seed: u64) -> Result<CapacityReport> {
    let model = build_scatterer_model(config, seed)?;
    let lambda = config.wavelength_m;
    let tx0 = FimArray::planar(config.grid_nx, config.grid_ny, config.spacing_wl, lambda, 0.0, true, 0.0)?;
    let rx0 = FimArray::planar(config.grid_nx, config.grid_ny, config.spacing_wl, lambda, config.separation_wl * lambda, false, 0.0)?;
    let h = model.channel(&tx0, &rx0)?;
    let rank = crate::linalg::numerical_rank(&h, 1e-10);
    let rigid = EigenchannelSpectrum::from_matrix(&h, config.bcd.noise, config.bcd.power)?;
    let mut results: Vec<BcdResult> = Vec::with_capacity(config.ranges_wl.len());
    let mut prev_range = f64::NEG_INFINITY;
    for &r in &config.ranges_wl {
        let (tx, rx) = match results.last() {
            Some(last) if r >= prev_range => (last.tx.clone().with_range(r)?, last.rx.clone().with_range(r)?),
            _ => (tx0.clone().with_range(r)?, rx0.clone().with_range(r)?),
        };
        results.push(fim_capacity_bcd(&model, tx, rx, &config.bcd)?);
        prev_range = r;
    }
    Ok(CapacityReport {
        seed,
        rank,
        rigid,
        ranges_wl: config.ranges_wl.clone(),
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub wavelength_m: f64,
    pub ranges_wl: Vec<f64>,
    pub trials: usize,
    pub step_wl: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            wavelength_m: crate::sim::geometry::WAVELENGTH_28GHZ,
            ranges_wl: vec![0.0, 0.2, 0.4, 0.8, 1.6, 3.2, 7.2],
            trials: 10_000,
            step_wl: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    pub seed: u64,
    pub ranges_wl: Vec<f64>,
    pub gains_db: Vec<f64>,
}

pub fn run_fim_diversity(config: &DiversityConfig, seed: u64) -> Result<DiversityReport> {
    Ok(DiversityReport {
        seed,
        ranges_wl: config.ranges_wl.clone(),
        gains_db: diversity_gain_curve(&config.ranges_wl, config.wavelength_m, config.trials, config.step_wl, seed)?,
    })
}
