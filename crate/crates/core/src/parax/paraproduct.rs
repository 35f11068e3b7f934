use crate::error::Result;
use crate::field::PeriodicField;
use crate::spectral::{lp_decompose, require_scalar, DyadicBlocks};

/// `T_a b = Σ_{k>=0} (S_{k-1} a) Δ_k b`.
pub fn paraproduct(a: &PeriodicField, b: &PeriodicField) -> Result<PeriodicField> {
    require_scalar(a, "paraproduct factor")?;
    require_scalar(b, "paraproduct factor")?;
    a.check_grid(b)?;
    Ok(paraproduct_from_blocks(&lp_decompose(a), &lp_decompose(b)))
}

/// Paraproduct from precomputed decompositions.
pub fn paraproduct_from_blocks(a: &DyadicBlocks, b: &DyadicBlocks) -> PeriodicField {
    let low = a.block(-1);
    let mut acc = PeriodicField::zeros(low.grid(), low.shape(), low.dtype());
    // S_{-1} a = Δ_{-1} a
    let mut partial = low.clone();
    for k in 0..=b.top_band() {
        let term = partial.mul(b.block(k)).expect("same grid");
        acc = acc.add(&term).expect("same grid");
        partial = partial.add(a.block(k)).expect("same grid");
    }
    acc
}

/// Bony remainder `R(a, b) = ab - T_a b - T_b a`. The two paraproducts are
/// summed before subtraction, so the result is bitwise symmetric in `a, b`.
pub fn bony_remainder(a: &PeriodicField, b: &PeriodicField) -> Result<PeriodicField> {
    require_scalar(a, "remainder factor")?;
    require_scalar(b, "remainder factor")?;
    a.check_grid(b)?;
    let da = lp_decompose(a);
    let db = lp_decompose(b);
    let tab = paraproduct_from_blocks(&da, &db);
    let tba = paraproduct_from_blocks(&db, &da);
    a.mul(b)?.sub(&tab.add(&tba)?)
}
