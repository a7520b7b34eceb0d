//! Number formatting shared by the CSV writers.

/// Fixed-point rendering with `sig` significant digits.
pub fn fixed_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", sig.saturating_sub(1), x);
    }
    let exp = x.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// Scientific rendering with 15 significant digits.
pub fn sci15(x: f64) -> String {
    format!("{:.14e}", x)
}
