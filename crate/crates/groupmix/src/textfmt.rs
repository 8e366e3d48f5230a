//! Deterministic text formatting shared by the file formats.

/// Fixed-decimal rendering with `sig` significant digits. The decimal count
/// adapts to the magnitude so small values keep their precision.
pub(crate) fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", sig.saturating_sub(1), 0.0);
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Fixed 6-decimal rendering used in CSV outputs.
pub(crate) fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}
