//! JSON output with floats written at 17 significant digits.
//!
//! serde_json's default writer emits the shortest round-trip form; artifacts
//! here use `%.17g`-style formatting instead so every float carries the same
//! precision regardless of value.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};

use crate::error::Result;

/// Formats `v` like C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // {:.16e} yields exactly 17 significant digits, e.g. "1.2345678901234567e-3".
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if !(-5..17).contains(&exp) {
        let mut m = String::new();
        m.push_str(&digits[..1]);
        let frac = digits[1..].trim_end_matches('0');
        if !frac.is_empty() {
            m.push('.');
            m.push_str(frac);
        }
        let esign = if exp < 0 { "-" } else { "+" };
        return format!("{sign}{m}e{esign}{:02}", exp.abs());
    }
    let s = if exp >= 0 {
        let int_len = exp as usize + 1;
        let (int_part, frac) = digits.split_at(int_len);
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            int_part.to_string()
        } else {
            format!("{int_part}.{frac}")
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("0.{zeros}{}", digits.trim_end_matches('0'))
    };
    format!("{sign}{s}")
}

#[derive(Default)]
struct G17Formatter(CompactFormatter);

impl Formatter for G17Formatter {
    // serde_json routes non-finite values to `null` before reaching here.
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact single-line JSON with 17-significant-digit floats.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, G17Formatter::default());
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(0.5), "0.5");
        assert_eq!(format_g17(1000.0), "1000");
        assert_eq!(format_g17(-2.5e-7), "-2.4999999999999999e-07");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(0.0001), "0.0001");
        assert_eq!(format_g17(std::f64::consts::LN_2), "0.69314718055994529");
    }

    #[test]
    fn g17_round_trips() {
        for v in [0.1, 1.0 / 3.0, -123456.789, 6.02214076e23, 1e-300, f64::MAX] {
            let parsed: f64 = format_g17(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn object_output_is_compact() {
        #[derive(Serialize)]
        struct Row {
            a: f64,
            b: Vec<f64>,
        }
        let s = to_string(&Row { a: 0.1, b: vec![1.0, -0.5] }).unwrap();
        assert_eq!(s, r#"{"a":0.10000000000000001,"b":[1,-0.5]}"#);
    }
}
