//! Selective inference for terminal-region means.

pub mod levels;
pub mod orthant;
pub mod pivot;

pub use levels::{
    choose_conditioning, gains_along_path, path_levels, Conditioning, GainPoly, LevelData,
};
pub use orthant::{
    level_prob_cc, level_prob_conditioned, level_prob_full, level_prob_threshold,
    log_level_prob_cc, log_level_prob_conditioned, log_level_prob_full, log_level_prob_threshold,
};
pub use pivot::{
    estimate_sigma, PivotEvaluator, QuadratureDiagnostics, QuadratureSettings, Variant, VariantKind,
};
