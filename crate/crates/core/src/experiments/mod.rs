//! Seeded pipelines for the SIM case studies.

pub mod doa;
pub mod mimo;
pub mod papr;
pub mod semantic;

pub use doa::{dft_2d, run_doa, DoaConfig, DoaEstimate, DoaReport};
pub use mimo::{interference_to_signal, run_mimo_diag, DiagonalizationReport, LayerResult, MimoConfig};
pub use papr::{compute_papr, papr_percentile, run_papr_sweep, PaprConfig, PaprCurve};
pub use semantic::{run_semantic, ClassificationReport, SemanticConfig};

/// Derives an independent sub-seed for one purpose within a run
/// (splitmix64 finalizer over the pair).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `10 log10(x)`.
pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}
