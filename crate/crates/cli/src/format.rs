/// Formats `x` with six significant digits, like C's `%g`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    // rounding can carry into the next decade, so decide on the rounded value
    let sci = format!("{x:.5e}");
    let (mantissa, e) = sci.split_once('e').expect("exponent present");
    let e: i32 = e.parse().expect("integer exponent");
    if (-4..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        let sign = if e < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), e.abs())
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// `sig6` for optional values, `-` when absent.
pub fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), sig6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e+06");
        assert_eq!(sig6(0.0001), "0.0001");
        assert_eq!(sig6(0.00001234), "1.234e-05");
        assert_eq!(sig6(-2.5), "-2.5");
        assert_eq!(sig6(999999.5), "1e+06");
        assert_eq!(sig6(9.9999996), "10");
    }
}
