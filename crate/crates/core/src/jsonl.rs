//! Line-oriented JSON writing with floats at 17 significant digits.

use crate::error::{Error, Result};

/// `x` in scientific notation with 17 significant digits; round-trips exactly.
pub fn format_float(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::Numerical(format!("cannot serialize non-finite value {x}")));
    }
    Ok(format!("{x:.16e}"))
}

pub fn push_key(line: &mut String, key: &str) {
    line.push_str(&serde_json::to_string(key).expect("string serialization"));
    line.push(':');
}

pub fn push_string_field(line: &mut String, key: &str, value: &str) {
    push_key(line, key);
    line.push_str(&serde_json::to_string(value).expect("string serialization"));
}

pub fn push_float_field(line: &mut String, key: &str, value: f64) -> Result<()> {
    push_key(line, key);
    line.push_str(&format_float(value)?);
    Ok(())
}

pub fn push_array_field(line: &mut String, key: &str, values: &[f64]) -> Result<()> {
    push_key(line, key);
    line.push('[');
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&format_float(v)?);
    }
    line.push(']');
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_float(0.1).unwrap(), "1.0000000000000001e-1");
        assert_eq!(format_float(-2.0).unwrap(), "-2.0000000000000000e0");
        assert!(format_float(f64::NAN).is_err());
    }

    #[test]
    fn escapes_keys_and_strings() {
        let mut s = String::new();
        push_string_field(&mut s, "id", "a\"b");
        assert_eq!(s, r#""id":"a\"b""#);
    }

    proptest! {
        #[test]
        fn floats_round_trip_through_json(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = format_float(x).unwrap();
            let back: f64 = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
