//! Experiment configuration: flat `key = value` lines, dotted keys for
//! sections, `#` comments. Every key has a default; unknown and repeated
//! keys are errors.
//!
//! ```text
//! kind = mimo-diag
//! seeds = 1,2,3
//! geometry.thickness_wl = 10
//! optimizer.max_iters = 2000
//! mimo.layer_counts = 1,2,3,4
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::emnist::SEMANTIC_LETTERS;
use crate::error::{Error, Result};
use crate::experiments::{DoaConfig, MimoConfig, PaprConfig, SemanticConfig};
use crate::fim::{CapacityConfig, DiversityConfig};
use crate::optim::{ScaleMode, Schedule};
use crate::sim::GeometrySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    MimoDiag,
    Papr,
    Doa,
    Semantic,
    FimDiversity,
    FimCapacity,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::MimoDiag,
        Kind::Papr,
        Kind::Doa,
        Kind::Semantic,
        Kind::FimDiversity,
        Kind::FimCapacity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::MimoDiag => "mimo-diag",
            Kind::Papr => "papr",
            Kind::Doa => "doa",
            Kind::Semantic => "semantic",
            Kind::FimDiversity => "fim-diversity",
            Kind::FimCapacity => "fim-capacity",
        }
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("kind", format!("unknown experiment kind `{s}`")))
    }
}

impl Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Semantic run parameters plus where to find the data.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticRun {
    pub params: SemanticConfig,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub letters: Vec<char>,
}

impl Default for SemanticRun {
    fn default() -> Self {
        Self {
            params: SemanticConfig::default(),
            images: PathBuf::from("data/emnist/emnist-letters-train-images-idx3-ubyte"),
            labels: PathBuf::from("data/emnist/emnist-letters-train-labels-idx1-ubyte"),
            letters: SEMANTIC_LETTERS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    MimoDiag(MimoConfig),
    Papr(PaprConfig),
    Doa(DoaConfig),
    Semantic(SemanticRun),
    FimDiversity(DiversityConfig),
    FimCapacity(CapacityConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub params: Params,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Err(Error::config(key, "list must not be empty"));
    }
    v.split(',').map(|item| parse(key, item.trim())).collect()
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: Display>(x: &Option<T>) -> String {
    x.as_ref().map_or("none".into(), |v| v.to_string())
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be positive, got {x}")))
    }
}

fn non_negative(key: &str, x: f64) -> Result<f64> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be non-negative, got {x}")))
    }
}

fn finite(key: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::config(key, "must be finite"))
    }
}

fn at_least(key: &str, n: usize, min: usize) -> Result<usize> {
    if n >= min {
        Ok(n)
    } else {
        Err(Error::config(key, format!("must be at least {min}, got {n}")))
    }
}

fn scale_mode(key: &str, v: &str) -> Result<ScaleMode> {
    match v {
        "free-scalar" => Ok(ScaleMode::FreeScalar),
        "fixed" => Ok(ScaleMode::Fixed),
        _ => Err(Error::config(key, format!("expected free-scalar or fixed, got `{v}`"))),
    }
}

fn scale_mode_str(m: ScaleMode) -> &'static str {
    match m {
        ScaleMode::FreeScalar => "free-scalar",
        ScaleMode::Fixed => "fixed",
    }
}

type Entries = Vec<(String, String)>;

fn push(out: &mut Entries, key: &str, value: impl Display) {
    out.push((key.to_string(), value.to_string()));
}

/// Geometry keys that apply to a kind; the rest are set by the experiment.
fn geometry_keys(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::MimoDiag => &[
            "wavelength_m",
            "grid_nx",
            "grid_ny",
            "atom_spacing_wl",
            "thickness_wl",
            "port_spacing_wl",
            "port_standoff_wl",
        ],
        Kind::Doa | Kind::Semantic => &["wavelength_m", "layers", "grid_nx", "grid_ny", "atom_spacing_wl", "thickness_wl"],
        _ => &[],
    }
}

fn geometry_entries(g: &GeometrySpec, kind: Kind, out: &mut Entries) {
    for &k in geometry_keys(kind) {
        let v = match k {
            "wavelength_m" => g.wavelength_m.to_string(),
            "layers" => g.layers.to_string(),
            "grid_nx" => g.grid_nx.to_string(),
            "grid_ny" => g.grid_ny.to_string(),
            "atom_spacing_wl" => g.atom_spacing_wl.to_string(),
            "thickness_wl" => g.thickness_wl.to_string(),
            "port_spacing_wl" => g.port_spacing_wl.to_string(),
            "port_standoff_wl" => opt(&g.port_standoff_wl),
            _ => unreachable!(),
        };
        out.push((format!("geometry.{k}"), v));
    }
}

fn set_geometry(g: &mut GeometrySpec, kind: Kind, field: &str, key: &str, v: &str) -> Result<bool> {
    if !geometry_keys(kind).contains(&field) {
        return Ok(false);
    }
    match field {
        "wavelength_m" => g.wavelength_m = positive(key, parse(key, v)?)?,
        "layers" => g.layers = at_least(key, parse(key, v)?, 1)?,
        "grid_nx" => g.grid_nx = at_least(key, parse(key, v)?, 1)?,
        "grid_ny" => g.grid_ny = at_least(key, parse(key, v)?, 1)?,
        "atom_spacing_wl" => g.atom_spacing_wl = positive(key, parse(key, v)?)?,
        "thickness_wl" => g.thickness_wl = positive(key, parse(key, v)?)?,
        "port_spacing_wl" => g.port_spacing_wl = positive(key, parse(key, v)?)?,
        "port_standoff_wl" => {
            g.port_standoff_wl = match parse_opt::<f64>(key, v)? {
                Some(x) => Some(positive(key, x)?),
                None => None,
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn schedule_entries(s: &Schedule, out: &mut Entries) {
    push(out, "optimizer.initial_rate", s.initial_rate);
    push(out, "optimizer.decay", s.decay);
    push(out, "optimizer.decay_interval", s.decay_interval);
    push(out, "optimizer.max_iters", s.max_iters);
    push(out, "optimizer.loss_tolerance", s.loss_tolerance);
    push(out, "optimizer.gradient_tolerance", s.gradient_tolerance);
    push(out, "optimizer.min_rate", s.min_rate);
    push(out, "optimizer.divergence_factor", s.divergence_factor);
}

fn set_schedule(s: &mut Schedule, field: &str, key: &str, v: &str) -> Result<bool> {
    match field {
        "initial_rate" => s.initial_rate = positive(key, parse(key, v)?)?,
        "decay" => {
            let d: f64 = parse(key, v)?;
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::config(key, format!("must lie in (0, 1), got {d}")));
            }
            s.decay = d;
        }
        "decay_interval" => s.decay_interval = at_least(key, parse(key, v)?, 1)?,
        "max_iters" => s.max_iters = parse(key, v)?,
        "loss_tolerance" => s.loss_tolerance = non_negative(key, parse(key, v)?)?,
        "gradient_tolerance" => s.gradient_tolerance = non_negative(key, parse(key, v)?)?,
        "min_rate" => s.min_rate = non_negative(key, parse(key, v)?)?,
        "divergence_factor" => s.divergence_factor = positive(key, parse(key, v)?)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl Params {
    pub fn defaults(kind: Kind) -> Self {
        match kind {
            Kind::MimoDiag => Params::MimoDiag(MimoConfig::default()),
            Kind::Papr => Params::Papr(PaprConfig::default()),
            Kind::Doa => Params::Doa(DoaConfig::default()),
            Kind::Semantic => Params::Semantic(SemanticRun::default()),
            Kind::FimDiversity => Params::FimDiversity(DiversityConfig::default()),
            Kind::FimCapacity => Params::FimCapacity(CapacityConfig::default()),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Params::MimoDiag(_) => Kind::MimoDiag,
            Params::Papr(_) => Kind::Papr,
            Params::Doa(_) => Kind::Doa,
            Params::Semantic(_) => Kind::Semantic,
            Params::FimDiversity(_) => Kind::FimDiversity,
            Params::FimCapacity(_) => Kind::FimCapacity,
        }
    }

    fn entries(&self) -> Entries {
        let kind = self.kind();
        let mut out = Vec::new();
        match self {
            Params::MimoDiag(c) => {
                geometry_entries(&c.geometry, kind, &mut out);
                schedule_entries(&c.schedule, &mut out);
                push(&mut out, "mimo.layer_counts", join(&c.layer_counts));
                push(&mut out, "mimo.streams", c.streams);
                push(&mut out, "mimo.scale_mode", scale_mode_str(c.scale_mode));
            }
            Params::Papr(c) => {
                push(&mut out, "papr.stream_counts", join(&c.stream_counts));
                push(&mut out, "papr.antennas", c.antennas);
                push(&mut out, "papr.symbols", c.symbols);
                push(&mut out, "papr.percentile", c.percentile);
            }
            Params::Doa(c) => {
                geometry_entries(&c.geometry, kind, &mut out);
                schedule_entries(&c.schedule, &mut out);
                push(&mut out, "channel.snr_db", opt(&c.snr_db));
            }
            Params::Semantic(r) => {
                let c = &r.params;
                geometry_entries(&c.geometry, kind, &mut out);
                schedule_entries(&c.schedule, &mut out);
                push(&mut out, "channel.rx_antennas", c.rx_antennas);
                push(&mut out, "channel.tx_power_dbm", c.tx_power_dbm);
                push(&mut out, "channel.noise_dbm", c.noise_dbm);
                push(&mut out, "channel.path_loss_db", c.path_loss_db);
                push(&mut out, "semantic.images", r.images.display());
                push(&mut out, "semantic.labels", r.labels.display());
                push(&mut out, "semantic.letters", r.letters.iter().collect::<String>());
                push(&mut out, "semantic.max_train_per_class", opt(&c.max_train_per_class));
                push(&mut out, "semantic.test_fraction", c.test_fraction);
                push(&mut out, "semantic.chunk", c.chunk);
            }
            Params::FimDiversity(c) => {
                push(&mut out, "fim.wavelength_m", c.wavelength_m);
                push(&mut out, "fim.ranges_wl", join(&c.ranges_wl));
                push(&mut out, "fim.trials", c.trials);
                push(&mut out, "fim.step_wl", c.step_wl);
            }
            Params::FimCapacity(c) => {
                push(&mut out, "fim.wavelength_m", c.wavelength_m);
                push(&mut out, "fim.grid_nx", c.grid_nx);
                push(&mut out, "fim.grid_ny", c.grid_ny);
                push(&mut out, "fim.spacing_wl", c.spacing_wl);
                push(&mut out, "fim.ranges_wl", join(&c.ranges_wl));
                push(&mut out, "fim.step_wl", c.bcd.step_wl);
                push(&mut out, "fim.power_w", c.bcd.power);
                push(&mut out, "fim.noise_w", c.bcd.noise);
                push(&mut out, "fim.tolerance", c.bcd.tolerance);
                push(&mut out, "fim.max_sweeps", c.bcd.max_sweeps);
                push(&mut out, "channel.scatterers", c.scatterers);
                push(&mut out, "channel.separation_wl", c.separation_wl);
                push(&mut out, "channel.box_half_width_wl", c.box_half_width_wl);
                push(&mut out, "channel.box_z_lo", c.box_z_lo);
                push(&mut out, "channel.box_z_hi", c.box_z_hi);
            }
        }
        out
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let kind = self.kind();
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        let known = match (self, section) {
            (Params::MimoDiag(c), "geometry") => set_geometry(&mut c.geometry, kind, field, key, v)?,
            (Params::Doa(c), "geometry") => set_geometry(&mut c.geometry, kind, field, key, v)?,
            (Params::Semantic(r), "geometry") => set_geometry(&mut r.params.geometry, kind, field, key, v)?,
            (Params::MimoDiag(c), "optimizer") => set_schedule(&mut c.schedule, field, key, v)?,
            (Params::Doa(c), "optimizer") => set_schedule(&mut c.schedule, field, key, v)?,
            (Params::Semantic(r), "optimizer") => set_schedule(&mut r.params.schedule, field, key, v)?,
            (Params::MimoDiag(c), "mimo") => {
                match field {
                    "layer_counts" => {
                        let counts: Vec<usize> = parse_list(key, v)?;
                        if counts.contains(&0) {
                            return Err(Error::config(key, "layer counts must be at least 1"));
                        }
                        c.layer_counts = counts;
                    }
                    "streams" => c.streams = at_least(key, parse(key, v)?, 1)?,
                    "scale_mode" => c.scale_mode = scale_mode(key, v)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            (Params::Papr(c), "papr") => {
                match field {
                    "stream_counts" => {
                        let counts: Vec<usize> = parse_list(key, v)?;
                        if counts.contains(&0) {
                            return Err(Error::config(key, "stream counts must be at least 1"));
                        }
                        c.stream_counts = counts;
                    }
                    "antennas" => c.antennas = at_least(key, parse(key, v)?, 1)?,
                    "symbols" => c.symbols = at_least(key, parse(key, v)?, 1)?,
                    "percentile" => {
                        let q: f64 = parse(key, v)?;
                        if !(q > 0.0 && q <= 1.0) {
                            return Err(Error::config(key, format!("must lie in (0, 1], got {q}")));
                        }
                        c.percentile = q;
                    }
                    _ => return Err(unknown(key)),
                }
                true
            }
            (Params::Doa(c), "channel") if field == "snr_db" => {
                c.snr_db = match parse_opt::<f64>(key, v)? {
                    Some(x) => Some(finite(key, x)?),
                    None => None,
                };
                true
            }
            (Params::Semantic(r), "channel") => {
                let c = &mut r.params;
                match field {
                    "rx_antennas" => c.rx_antennas = at_least(key, parse(key, v)?, 1)?,
                    "tx_power_dbm" => c.tx_power_dbm = finite(key, parse(key, v)?)?,
                    "noise_dbm" => c.noise_dbm = finite(key, parse(key, v)?)?,
                    "path_loss_db" => c.path_loss_db = finite(key, parse(key, v)?)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            (Params::Semantic(r), "semantic") => {
                match field {
                    "images" => r.images = PathBuf::from(v),
                    "labels" => r.labels = PathBuf::from(v),
                    "letters" => {
                        if v.is_empty() || !v.chars().all(|c| c.is_ascii_alphabetic()) {
                            return Err(Error::config(key, "expected one or more letters, e.g. SIMNTU"));
                        }
                        r.letters = v.chars().map(|c| c.to_ascii_uppercase()).collect();
                    }
                    "max_train_per_class" => {
                        r.params.max_train_per_class = match parse_opt::<usize>(key, v)? {
                            Some(n) => Some(at_least(key, n, 1)?),
                            None => None,
                        }
                    }
                    "test_fraction" => {
                        let f: f64 = parse(key, v)?;
                        if !(f > 0.0 && f < 1.0) {
                            return Err(Error::config(key, format!("must lie in (0, 1), got {f}")));
                        }
                        r.params.test_fraction = f;
                    }
                    "chunk" => r.params.chunk = at_least(key, parse(key, v)?, 1)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            (Params::FimDiversity(c), "fim") => {
                match field {
                    "wavelength_m" => c.wavelength_m = positive(key, parse(key, v)?)?,
                    "ranges_wl" => c.ranges_wl = ranges(key, v)?,
                    "trials" => c.trials = at_least(key, parse(key, v)?, 1)?,
                    "step_wl" => c.step_wl = positive(key, parse(key, v)?)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            (Params::FimCapacity(c), "fim") => {
                match field {
                    "wavelength_m" => c.wavelength_m = positive(key, parse(key, v)?)?,
                    "grid_nx" => c.grid_nx = at_least(key, parse(key, v)?, 1)?,
                    "grid_ny" => c.grid_ny = at_least(key, parse(key, v)?, 1)?,
                    "spacing_wl" => c.spacing_wl = positive(key, parse(key, v)?)?,
                    "ranges_wl" => c.ranges_wl = ranges(key, v)?,
                    "step_wl" => c.bcd.step_wl = positive(key, parse(key, v)?)?,
                    "power_w" => c.bcd.power = positive(key, parse(key, v)?)?,
                    "noise_w" => c.bcd.noise = positive(key, parse(key, v)?)?,
                    "tolerance" => c.bcd.tolerance = non_negative(key, parse(key, v)?)?,
                    "max_sweeps" => c.bcd.max_sweeps = parse(key, v)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            (Params::FimCapacity(c), "channel") => {
                match field {
                    "scatterers" => c.scatterers = at_least(key, parse(key, v)?, 1)?,
                    "separation_wl" => c.separation_wl = positive(key, parse(key, v)?)?,
                    "box_half_width_wl" => c.box_half_width_wl = non_negative(key, parse(key, v)?)?,
                    "box_z_lo" => c.box_z_lo = finite(key, parse(key, v)?)?,
                    "box_z_hi" => c.box_z_hi = finite(key, parse(key, v)?)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(unknown(key))
        }
    }

    /// Checks that span several keys.
    fn validate(&self) -> Result<()> {
        match self {
            Params::Papr(c) => {
                if let Some(&k) = c.stream_counts.iter().find(|&&k| k > c.antennas) {
                    return Err(Error::config(
                        "papr.stream_counts",
                        format!("{k} streams exceed {} antennas", c.antennas),
                    ));
                }
            }
            Params::Semantic(r) => {
                if r.params.geometry.layers < 2 {
                    return Err(Error::config("geometry.layers", "need at least 2 layers (input plus trainable)"));
                }
                if r.letters.len() > r.params.rx_antennas {
                    return Err(Error::config(
                        "semantic.letters",
                        format!("{} classes exceed {} receive antennas", r.letters.len(), r.params.rx_antennas),
                    ));
                }
            }
            Params::FimCapacity(c) => {
                if c.box_z_lo > c.box_z_hi {
                    return Err(Error::config("channel.box_z_lo", "must not exceed channel.box_z_hi"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn ranges(key: &str, v: &str) -> Result<Vec<f64>> {
    let r: Vec<f64> = parse_list(key, v)?;
    for &x in &r {
        non_negative(key, x)?;
    }
    Ok(r)
}

fn unknown(key: &str) -> Error {
    Error::config(key, "unknown key for this experiment kind")
}

/// Splits text into `(line, key, value)` triples; rejects malformed lines
/// and repeated keys.
fn tokenize(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::ConfigSyntax {
                line,
                message: format!("invalid key `{k}`"),
            });
        }
        if let Some(first) = seen.insert(k.to_string(), line) {
            return Err(Error::ConfigSyntax {
                line,
                message: format!("duplicate key `{k}` (first set on line {first})"),
            });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn defaults(kind: Kind) -> Self {
        Self {
            seeds: vec![1],
            out_dir: PathBuf::from("results"),
            params: Params::defaults(kind),
        }
    }

    pub fn kind(&self) -> Kind {
        self.params.kind()
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let tokens = tokenize(text)?;
        let kind: Kind = tokens
            .iter()
            .find(|(_, k, _)| k == "kind")
            .ok_or_else(|| Error::config("kind", "missing required key"))?
            .2
            .parse()?;
        let mut config = Self::defaults(kind);
        for (_, key, value) in &tokens {
            match key.as_str() {
                "kind" => {}
                "seeds" => config.seeds = parse_seeds(value)?,
                "out_dir" => config.out_dir = PathBuf::from(value),
                _ => config.params.set(key, value)?,
            }
        }
        config.params.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Every effective key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = format!("kind = {}\nseeds = {}\nout_dir = {}\n", self.kind(), join(&self.seeds), self.out_dir.display());
        for (k, v) in self.params.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 of the effective configuration text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Comma-separated seeds; duplicates are rejected and the result sorted.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut seeds: Vec<u64> = parse_list("seeds", v)?;
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("seeds", "duplicate seed"));
    }
    Ok(seeds)
}
