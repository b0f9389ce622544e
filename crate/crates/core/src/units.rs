/// Vacuum permittivity (F/m), CODATA 2018.
pub const EPS0: f64 = 8.854_187_812_8e-12;

/// Renders `value * 10^shift` as a plain decimal string without going through
/// floating-point multiplication.
///
/// The shortest round-trip digits of `value` are moved by `shift` decimal
/// places, so `parse_shifted(&shift_decimal(v, k), -k) == v` bit for bit.
pub(crate) fn shift_decimal(value: f64, shift: i32) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let sci = format!("{value:e}");
    let (mantissa, exp) = sci
        .split_once('e')
        .expect("LowerExp always has an exponent");
    let exp: i32 = exp.parse().expect("LowerExp exponent is an integer");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    // value = 0.d1d2d3... * 10^(exp + 1)
    let point = exp + shift + 1;
    let n = digits.len() as i32;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point >= n {
        format!("{}{}", digits, "0".repeat((point - n) as usize))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    format!("{sign}{body}")
}

/// Parses a decimal string and scales it by `10^shift` with a single rounding.
pub(crate) fn parse_shifted(text: &str, shift: i32) -> Option<f64> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    // Validate as a plain float first so garbage like "1e5e3" is rejected.
    text.parse::<f64>().ok()?;
    if text.contains(['e', 'E']) {
        let (m, e) = text.split_once(['e', 'E'])?;
        let e: i32 = e.parse().ok()?;
        return format!("{m}e{}", e + shift).parse().ok();
    }
    format!("{text}e{shift}").parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shift_examples() {
        assert_eq!(shift_decimal(1.0e-4, 6), "100");
        assert_eq!(shift_decimal(9.5e-5, 6), "95");
        assert_eq!(shift_decimal(1.2345e-4, 6), "123.45");
        assert_eq!(shift_decimal(5.0e9, -9), "5");
        assert_eq!(shift_decimal(4.875e9, -9), "4.875");
        assert_eq!(shift_decimal(-2.5, -3), "-0.0025");
        assert_eq!(parse_shifted("100", -6), Some(1.0e-4));
        assert_eq!(parse_shifted("1.5e2", -6), Some(1.5e-4));
        assert_eq!(parse_shifted("abc", -6), None);
    }

    proptest! {
        #[test]
        fn shift_round_trips_exactly(v in 1e-9f64..1e12, k in -12i32..12) {
            let s = shift_decimal(v, k);
            prop_assert_eq!(parse_shifted(&s, -k), Some(v));
        }
    }
}
