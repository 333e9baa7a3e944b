//! Number formatting shared by every tabular output.

/// Six significant digits. Plain notation for magnitudes in `[1e-4, 1e6)`,
/// scientific notation otherwise; trailing zeros are kept so every value
/// carries the same precision.
pub fn fmt_sig(x: f64) -> String {
    fmt_sig_n(x, 6)
}

pub fn fmt_sig_n(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // Rust's exponent formatting rounds correctly, including carries such as 9.999995 -> 1.00000e1.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    } else {
        format!("{mantissa}e{exp}")
    }
}

/// Optional value; missing renders as an empty cell.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

/// Map coordinates, millimetre resolution.
pub fn fmt_coord(x: f64) -> String {
    format!("{x:.3}")
}

/// Two-decimal threshold label used in file names and table headers.
pub fn threshold_label(t: f64) -> String {
    format!("{t:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.07), "0.0700000");
        assert_eq!(fmt_sig(-0.039123456), "-0.0391235");
        assert_eq!(fmt_sig(1114.0), "1114.00");
        assert_eq!(fmt_sig(123456.7), "123457");
        assert_eq!(fmt_sig(8_294_400.0), "8.29440e6");
        assert_eq!(fmt_sig(1.5e-7), "1.50000e-7");
        assert_eq!(fmt_sig(9.9999995), "10.0000");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1.00000");
    }

    #[test]
    fn coordinates_and_missing() {
        assert_eq!(fmt_coord(500000.125), "500000.125");
        assert_eq!(fmt_opt(None), "");
    }
}
