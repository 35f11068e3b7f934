//! Paraproducts, rough symbols and their quantization on the torus.

mod garding;
mod manifest;
mod paraproduct;
mod parametrix;
mod symbol;

pub use garding::{garding_margin, GardingReport, Subcase};
pub use manifest::{load_symbol, parse_multiplier, save_symbol, SymbolManifest};
pub use paraproduct::{bony_remainder, paraproduct, paraproduct_from_blocks};
pub use parametrix::{elliptic_parametrix_apply, parametrix_residual, Cone, Parametrix};
pub use symbol::{
    band_cutoff, quantize, regularize_symbol, Multiplier, Regularity, SymbolGrid, SymbolTerm,
};
