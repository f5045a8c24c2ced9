//! Number formatting for emitted tables.

/// `x` rounded to 10 significant digits, printed in the shortest form that
/// reads back to the rounded value. Missing and non-finite values print as
/// an empty field; negative zero prints as `0`.
pub fn sig10(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    let rounded: f64 = format!("{x:.9e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".to_string();
    }
    format!("{rounded}")
}

pub fn sig10_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, sig10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_ten_digits() {
        assert_eq!(sig10(0.123456789012345), "0.123456789");
        assert_eq!(sig10(-0.059), "-0.059");
        assert_eq!(sig10(3912.4567891234), "3912.456789");
        assert_eq!(sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(sig10(-0.0), "0");
        assert_eq!(sig10(f64::NAN), "");
        assert_eq!(sig10(2.0e-12), "0.000000000002");
    }
}
