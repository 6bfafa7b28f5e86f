//! Runs a configured experiment over its seeds and writes the results.
//!
//! Output layout under the run directory:
//! `report.json`, `config.txt` (effective config), `trace.csv`,
//! `matrices/*.csv` and, for trained stacks, `phases/*.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind, Params, SemanticRun};
use crate::emnist::{letter_label, read_idx, select_classes, Dataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::experiments::{run_doa, run_mimo_diag, run_papr_sweep, run_semantic};
use crate::fim::{run_fim_capacity, run_fim_diversity};
use crate::linalg::write_real_grid_csv;
use crate::optim::LossTrace;
use crate::sim::{GeometrySpec, PhaseConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// One labelled loss curve.
#[derive(Debug, Clone)]
pub struct TraceRun {
    pub label: String,
    pub trace: LossTrace,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutput {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub detail: Value,
    pub traces: Vec<TraceRun>,
    /// File stem to real matrix.
    pub matrices: Vec<(String, DMatrix<f64>)>,
    /// File stem to (geometry hash, phases).
    pub phases: Vec<(String, String, PhaseConfig)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub tool_version: String,
    pub kind: Kind,
    pub config_hash: String,
    pub timestamp: u64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedRecord>,
    pub aggregate: BTreeMap<String, Stat>,
    pub artifacts: Vec<String>,
}

impl ResultRecord {
    /// The report with the timestamp zeroed, for comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self {
            timestamp: 0,
            ..self.clone()
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = exec::pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    Stat {
        mean,
        std: (exec::pairwise_sum(&dev) / n).sqrt(),
    }
}

fn magnitude(m: &crate::linalg::ComplexMatrix) -> DMatrix<f64> {
    m.map(|z| z.norm())
}

fn geometry_hash(spec: &GeometrySpec) -> Result<String> {
    Ok(spec.build()?.fingerprint())
}

fn run_seed(config: &ExperimentConfig, data: Option<&LoadedData>, seed: u64) -> Result<SeedOutput> {
    let mut out = SeedOutput {
        seed,
        metrics: BTreeMap::new(),
        detail: Value::Null,
        traces: Vec::new(),
        matrices: Vec::new(),
        phases: Vec::new(),
    };
    match &config.params {
        Params::MimoDiag(c) => {
            let report = run_mimo_diag(c, seed)?;
            for r in &report.results {
                out.metrics.insert(format!("loss_L{}", r.layers), r.terminal_loss);
                out.metrics.insert(format!("isr_db_L{}", r.layers), r.mean_isr_db);
                out.traces.push(TraceRun {
                    label: format!("L{}", r.layers),
                    trace: r.trace.clone(),
                });
                out.matrices.push((format!("seed{seed}_abs_G_L{}", r.layers), r.magnitude()));
                let spec = GeometrySpec {
                    layers: r.layers,
                    tx_ports: c.streams,
                    rx_ports: c.streams,
                    ..c.geometry.clone()
                };
                let hash = geometry_hash(&spec)?;
                let atoms = spec.grid_nx * spec.grid_ny;
                let half = r.layers * atoms;
                for (side, slice) in [("tx", &r.phases[..half]), ("rx", &r.phases[half..])] {
                    let phases = PhaseConfig::from_vec(r.layers, atoms, slice.to_vec())?;
                    out.phases.push((format!("seed{seed}_{side}_L{}", r.layers), hash.clone(), phases));
                }
            }
            out.detail = serde_json::to_value(&report)?;
        }
        Params::Papr(c) => {
            let curve = run_papr_sweep(c, seed)?;
            for (i, k) in curve.stream_counts.iter().enumerate() {
                out.metrics.insert(format!("sim_db_K{k}"), curve.sim_db[i]);
                out.metrics.insert(format!("conventional_db_K{k}"), curve.conventional_db[i]);
            }
            let rows = curve.stream_counts.len();
            out.matrices.push((
                format!("seed{seed}_papr"),
                DMatrix::from_fn(rows, 3, |r, col| match col {
                    0 => curve.stream_counts[r] as f64,
                    1 => curve.sim_db[r],
                    _ => curve.conventional_db[r],
                }),
            ));
            out.detail = serde_json::to_value(&curve)?;
        }
        Params::Doa(c) => {
            let report = run_doa(c, seed)?;
            let n = report.estimates.len() as f64;
            out.metrics.insert("nmse_db".into(), report.nmse_db);
            out.metrics.insert("exact_fraction".into(), report.exact_count() as f64 / n);
            out.metrics.insert("bypass_exact_fraction".into(), report.bypass_exact_count() as f64 / n);
            let errs: Vec<f64> = report.estimates.iter().map(|e| e.angular_error.to_degrees()).collect();
            out.metrics.insert("mean_angular_error_deg".into(), exec::pairwise_sum(&errs) / n);
            out.traces.push(TraceRun {
                label: "dft-fit".into(),
                trace: report.trace.clone(),
            });
            out.matrices.push((format!("seed{seed}_abs_S"), magnitude(&report.transfer)));
            let spec = &c.geometry;
            let phases = PhaseConfig::from_vec(spec.layers, spec.grid_nx * spec.grid_ny, report.phases.clone())?;
            out.phases.push((format!("seed{seed}_doa"), geometry_hash(spec)?, phases));
            out.detail = serde_json::to_value(&report)?;
        }
        Params::Semantic(run) => {
            let data = data.ok_or_else(|| Error::Dataset("dataset not loaded".into()))?;
            let dataset = data.dataset(run, seed)?;
            let report = run_semantic(&run.params, &dataset, seed)?;
            out.metrics.insert("test_accuracy".into(), report.test_accuracy);
            out.metrics.insert("train_accuracy".into(), report.train_accuracy);
            out.metrics.insert("terminal_loss".into(), report.terminal_loss);
            out.metrics.insert("mean_snr_db".into(), report.mean_snr_db);
            out.traces.push(TraceRun {
                label: "cross-entropy".into(),
                trace: report.trace.clone(),
            });
            for (c, map) in report.energy_maps.iter().enumerate() {
                out.matrices.push((format!("seed{seed}_energy_{}", dataset.classes[c]), map.clone()));
            }
            out.matrices.push((format!("seed{seed}_receive_energy"), report.receive_energy.clone()));
            let k = report.confusion.len();
            out.matrices.push((
                format!("seed{seed}_confusion"),
                DMatrix::from_fn(k, k, |r, c| report.confusion[r][c] as f64),
            ));
            let spec = &run.params.geometry;
            let phases = PhaseConfig::from_vec(spec.layers - 1, spec.grid_nx * spec.grid_ny, report.phases.clone())?;
            out.phases.push((format!("seed{seed}_semantic"), geometry_hash(spec)?, phases));
            out.detail = serde_json::to_value(&report)?;
        }
        Params::FimDiversity(c) => {
            let report = run_fim_diversity(c, seed)?;
            for (r, g) in report.ranges_wl.iter().zip(&report.gains_db) {
                out.metrics.insert(format!("gain_db_R{r}"), *g);
            }
            out.matrices.push((
                format!("seed{seed}_diversity"),
                DMatrix::from_fn(report.ranges_wl.len(), 2, |r, col| {
                    if col == 0 {
                        report.ranges_wl[r]
                    } else {
                        report.gains_db[r]
                    }
                }),
            ));
            out.detail = serde_json::to_value(&report)?;
        }
        Params::FimCapacity(c) => {
            let report = run_fim_capacity(c, seed)?;
            out.metrics.insert("rank".into(), report.rank as f64);
            out.metrics.insert("rigid_capacity".into(), report.rigid.capacity);
            let count = report.rigid.singular_values.len();
            let mut spectra = DMatrix::zeros(count, report.results.len() + 1);
            for i in 0..count {
                spectra[(i, 0)] = report.rigid.gains_db[i];
            }
            for (j, (r, res)) in report.ranges_wl.iter().zip(&report.results).enumerate() {
                out.metrics.insert(format!("capacity_R{r}"), res.morphed.capacity);
                out.metrics.insert(format!("sweeps_R{r}"), res.sweeps as f64);
                for i in 0..count {
                    spectra[(i, j + 1)] = res.morphed.gains_db[i];
                }
                out.matrices.push((
                    format!("seed{seed}_capacity_trace_R{r}"),
                    DMatrix::from_column_slice(res.trace.len(), 1, &res.trace),
                ));
                out.matrices.push((
                    format!("seed{seed}_displacements_R{r}"),
                    DMatrix::from_fn(res.tx.len(), 2, |i, side| {
                        if side == 0 {
                            res.tx.displacements()[i]
                        } else {
                            res.rx.displacements()[i]
                        }
                    }),
                ));
            }
            out.matrices.push((format!("seed{seed}_spectra_db"), spectra));
            out.detail = serde_json::to_value(&report)?;
        }
    }
    Ok(out)
}

/// Raw class-filtered images, split per seed.
pub struct LoadedData {
    width: usize,
    height: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl LoadedData {
    pub fn load(run: &SemanticRun) -> Result<Self> {
        let filter = run.letters.iter().map(|&c| letter_label(c)).collect::<Result<Vec<u8>>>()?;
        let images = read_idx(&run.images).map_err(|e| match e {
            Error::Io(io) => Error::Dataset(format!("{}: {io}", run.images.display())),
            other => other,
        })?;
        let labels = read_idx(&run.labels).map_err(|e| match e {
            Error::Io(io) => Error::Dataset(format!("{}: {io}", run.labels.display())),
            other => other,
        })?;
        let (width, height, images, labels) = select_classes(&images, &labels, &filter)?;
        Ok(Self {
            width,
            height,
            images,
            labels,
        })
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            width: d.width,
            height: d.height,
            images: d.images.clone(),
            labels: d.labels.clone(),
        }
    }

    fn dataset(&self, run: &SemanticRun, seed: u64) -> Result<Dataset> {
        let names = run.letters.iter().map(|c| c.to_string()).collect();
        Dataset::new(
            self.width,
            self.height,
            self.images.clone(),
            self.labels.clone(),
            names,
            run.params.test_fraction,
            seed,
        )
    }
}

/// Runs every seed (in parallel over at most `parallelism` threads; 0 uses
/// the default pool) and aggregates in seed order.
pub fn execute(config: &ExperimentConfig, data: Option<&LoadedData>, parallelism: usize) -> Result<Vec<SeedOutput>> {
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        return Err(Error::config("seeds", "no seeds given"));
    }
    let results = exec::with_threads(parallelism, || {
        exec::map_slice(&seeds, |&seed| {
            run_seed(config, data, seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })
        })
    });
    results.into_iter().collect()
}

pub fn aggregate(outputs: &[SeedOutput]) -> BTreeMap<String, Stat> {
    let mut keys: Vec<&String> = outputs.iter().flat_map(|o| o.metrics.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let values: Vec<f64> = outputs.iter().filter_map(|o| o.metrics.get(k).copied()).collect();
            (k.clone(), mean_std(&values))
        })
        .collect()
}

fn write_outputs(dir: &Path, config: &ExperimentConfig, outputs: &[SeedOutput]) -> Result<Vec<String>> {
    fs::create_dir_all(dir.join("matrices"))?;
    let mut artifacts = vec!["report.json".to_string(), "config.txt".to_string()];
    fs::write(dir.join("config.txt"), config.to_text())?;

    let mut trace = BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
    writeln!(trace, "seed,run,iteration,loss,rate,best")?;
    for o in outputs {
        for t in &o.traces {
            for e in &t.trace.entries {
                writeln!(trace, "{},{},{},{},{},{}", o.seed, t.label, e.iteration, e.loss, e.rate, e.best)?;
            }
        }
    }
    trace.flush()?;
    artifacts.push("trace.csv".into());

    for o in outputs {
        for (name, m) in &o.matrices {
            let rel = format!("matrices/{name}.csv");
            write_real_grid_csv(m, BufWriter::new(fs::File::create(dir.join(&rel))?))?;
            artifacts.push(rel);
        }
        for (name, hash, phases) in &o.phases {
            fs::create_dir_all(dir.join("phases"))?;
            let rel = format!("phases/{name}.txt");
            phases.write_text(hash, BufWriter::new(fs::File::create(dir.join(&rel))?))?;
            artifacts.push(rel);
        }
    }
    Ok(artifacts)
}

/// Loads data if needed, runs all seeds, writes artifacts and returns the
/// record that was written to `report.json`.
pub fn run(config: &ExperimentConfig, parallelism: usize) -> Result<ResultRecord> {
    let data = match &config.params {
        Params::Semantic(r) => Some(LoadedData::load(r)?),
        _ => None,
    };
    run_with_data(config, data.as_ref(), parallelism)
}

pub fn run_with_data(config: &ExperimentConfig, data: Option<&LoadedData>, parallelism: usize) -> Result<ResultRecord> {
    let outputs = execute(config, data, parallelism)?;
    let dir: PathBuf = config.out_dir.clone();
    let artifacts = write_outputs(&dir, config, &outputs)?;
    let record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: config.kind(),
        config_hash: config.hash(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        seeds: outputs.iter().map(|o| o.seed).collect(),
        aggregate: aggregate(&outputs),
        per_seed: outputs
            .into_iter()
            .map(|o| SeedRecord {
                seed: o.seed,
                metrics: o.metrics,
                detail: o.detail,
            })
            .collect(),
        artifacts,
    };
    let text = serde_json::to_string_pretty(&record)?;
    fs::write(dir.join("report.json"), text + "\n")?;
    Ok(record)
}

/// `report.json` text with the timestamp field blanked.
pub fn strip_timestamp(report: &str) -> Result<String> {
    let mut v: Value = serde_json::from_str(report)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("timestamp".into(), json!(0));
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_values() {
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.0, 0.0, 0.0]), Stat { mean: 0.0, std: 0.0 });
    }

    #[test]
    fn zero_range_diversity_aggregates_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::parse_str("kind = fim-diversity\nseeds = 1,2,3\nfim.ranges_wl = 0\nfim.trials = 50\n").unwrap();
        config.out_dir = dir.path().to_path_buf();
        let record = run(&config, 1).unwrap();
        let stat = record.aggregate["gain_db_R0"];
        assert_eq!((stat.mean, stat.std), (0.0, 0.0));
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("matrices/seed2_diversity.csv").exists());
    }

    #[test]
    fn failing_seed_is_identified() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::parse_str("kind = semantic\nsemantic.images = /nonexistent/images\n").unwrap();
        config.out_dir = dir.path().to_path_buf();
        assert!(matches!(run(&config, 1), Err(Error::Dataset(_))));
        // A per-seed failure: too few samples for a class after the split.
        let d = Dataset::new(2, 2, vec![vec![0.0; 4]; 2], vec![0, 1], vec!["A".into(), "B".into()], 0.2, 0).unwrap();
        let data = LoadedData::from_dataset(&d);
        let text = "kind = semantic\nseeds = 4\nsemantic.letters = AB\ngeometry.grid_nx = 2\ngeometry.grid_ny = 2\ngeometry.layers = 1\n";
        assert!(ExperimentConfig::parse_str(text).is_err());
        let text = "kind = semantic\nseeds = 4\nsemantic.letters = AB\ngeometry.grid_nx = 2\ngeometry.grid_ny = 2\nchannel.rx_antennas = 1\n";
        assert!(ExperimentConfig::parse_str(text).is_err());
        let text = "kind = semantic\nseeds = 4,5\nsemantic.letters = ABC\ngeometry.grid_nx = 2\ngeometry.grid_ny = 2\n";
        let mut config = ExperimentConfig::parse_str(text).unwrap();
        config.out_dir = dir.path().to_path_buf();
        match run_with_data(&config, Some(&data), 1) {
            Err(Error::Seed { seed, .. }) => assert_eq!(seed, 4),
            other => panic!("{other:?}"),
        }
    }
}
