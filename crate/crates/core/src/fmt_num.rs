//! Fixed-width number formatting for byte-stable reports.

/// Formats `x` with `digits` significant digits in positional notation.
///
/// ```
/// use zoo_ood::fmt_num::sig;
/// assert_eq!(sig(0.6983372, 6), "0.698337");
/// assert_eq!(sig(95.0, 6), "95.0000");
/// assert_eq!(sig(0.0, 6), "0");
/// ```
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1) as i32;
    // round first so that e.g. 9.999999 → 10.0000 gets the right exponent
    let exp = x.abs().log10().floor() as i32;
    let decimals = (digits - 1 - exp).max(0);
    let rounded: f64 = format!("{x:.*}", decimals as usize).parse().unwrap_or(x);
    let exp = if rounded == 0.0 { exp } else { rounded.abs().log10().floor() as i32 };
    let decimals = (digits - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// [`sig`] with six digits, the report format.
pub fn sig6(x: f64) -> String {
    sig(x, 6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_across_decades() {
        assert_eq!(sig(9.9999999, 6), "10.0000");
        assert_eq!(sig(123456.7, 6), "123457");
        assert_eq!(sig(1.0e-7 * 1.28, 6), "0.000000128000");
        assert_eq!(sig(-3.8340001, 6), "-3.83400");
        assert_eq!(sig(100.0, 6), "100.000");
        assert_eq!(sig(-0.0, 6), "0");
    }
}
