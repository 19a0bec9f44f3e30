//! Exact rational helpers shared by the model, the grid and the file formats.
//!
//! File formats accept numbers either as JSON numbers or as strings. Strings may
//! be decimals (`"2.25"`, `"1e-3"`) or fractions (`"7/3"`). Everything is parsed
//! into an exact [`Rational`]; floats are never the source of truth.

use std::fmt;

use num::bigint::BigInt;
use num::{BigRational, Integer, One, Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Rational = BigRational;

pub fn int(value: i64) -> Rational {
    Rational::from_integer(BigInt::from(value))
}

pub fn ratio(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn half() -> Rational {
    ratio(1, 2)
}

pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"12"`, `"-0.5"`, `"2.5e3"` or `"7/3"` exactly.
pub fn parse_rational(text: &str) -> Result<Rational, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty number".into());
    }
    if let Some((numer, denom)) = text.split_once('/') {
        let numer: BigInt = numer
            .trim()
            .parse()
            .map_err(|_| format!("invalid numerator in {text:?}"))?;
        let denom: BigInt = denom
            .trim()
            .parse()
            .map_err(|_| format!("invalid denominator in {text:?}"))?;
        if denom.is_zero() {
            return Err(format!("zero denominator in {text:?}"));
        }
        return Ok(Rational::new(numer, denom));
    }

    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = text[pos + 1..]
                .parse()
                .map_err(|_| format!("invalid exponent in {text:?}"))?;
            (&text[..pos], exp)
        }
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(format!("invalid number {text:?}"));
    }
    if !whole
        .chars()
        .chain(frac.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(format!("invalid number {text:?}"));
    }
    let digits = format!("{whole}{frac}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits
            .parse()
            .map_err(|_| format!("invalid number {text:?}"))?
    };
    let scale = exponent - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut value = Rational::from_integer(numer);
    if scale >= 0 {
        value *= Rational::from_integer(num::pow(ten, scale as usize));
    } else {
        value /= Rational::from_integer(num::pow(ten, (-scale) as usize));
    }
    Ok(if negative { -value } else { value })
}

/// Decimal text when the value has a terminating expansion, `p/q` otherwise.
pub fn format_rational(value: &Rational) -> String {
    if value.is_integer() {
        return value.numer().to_string();
    }
    let mut denom = value.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let (mut twos, mut fives) = (0usize, 0usize);
    while denom.is_multiple_of(&two) {
        denom /= &two;
        twos += 1;
    }
    while denom.is_multiple_of(&five) {
        denom /= &five;
        fives += 1;
    }
    if !denom.is_one() {
        return format!("{}/{}", value.numer(), value.denom());
    }
    let places = twos.max(fives);
    let scaled = value * Rational::from_integer(num::pow(BigInt::from(10), places));
    let scaled = scaled.to_integer();
    let sign = if scaled.is_negative() { "-" } else { "" };
    let digits = scaled.abs().to_string();
    let digits = format!("{digits:0>width$}", width = places + 1);
    let (whole, frac) = digits.split_at(digits.len() - places);
    format!("{sign}{whole}.{frac}")
}

/// Serde wrapper: a number in a file, read from a JSON number or a string and
/// written back as a JSON integer when integral, as a string otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Number(pub Rational);

impl Number {
    pub fn from_int(value: i64) -> Self {
        Number(int(value))
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl Serialize for Number {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_integer() {
            if let Some(v) = self.0.numer().to_i64() {
                return serializer.serialize_i64(v);
            }
        }
        serializer.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Number {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct NumberVisitor;

        impl Visitor<'_> for NumberVisitor {
            type Value = Number;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a decimal/fraction string")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Number, E> {
                Ok(Number(int(v)))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Number, E> {
                Ok(Number(Rational::from_integer(BigInt::from(v))))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Number, E> {
                if !v.is_finite() {
                    return Err(E::custom("non-finite number"));
                }
                // shortest round-trip text, then exact decimal parse
                parse_rational(&format!("{v:?}"))
                    .map(Number)
                    .map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Number, E> {
                parse_rational(v).map(Number).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(NumberVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_and_fraction_forms() {
        assert_eq!(parse_rational("2.5").unwrap(), ratio(5, 2));
        assert_eq!(parse_rational("-0.125").unwrap(), ratio(-1, 8));
        assert_eq!(parse_rational("7/3").unwrap(), ratio(7, 3));
        assert_eq!(parse_rational("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(parse_rational("12").unwrap(), int(12));
        assert_eq!(parse_rational(".5").unwrap(), half());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn formats_terminating_decimals() {
        assert_eq!(format_rational(&ratio(9, 4)), "2.25");
        assert_eq!(format_rational(&ratio(-1, 20)), "-0.05");
        assert_eq!(format_rational(&ratio(1, 3)), "1/3");
        assert_eq!(format_rational(&int(-7)), "-7");
        for text in ["2.25", "-0.05", "1/3", "0.001", "7"] {
            let value = parse_rational(text).unwrap();
            assert_eq!(parse_rational(&format_rational(&value)).unwrap(), value);
        }
    }

    #[test]
    fn json_float_is_read_exactly() {
        let n: Number = serde_json::from_str("0.1").unwrap();
        assert_eq!(n.0, ratio(1, 10));
        let n: Number = serde_json::from_str("\"3/7\"").unwrap();
        assert_eq!(n.0, ratio(3, 7));
        assert_eq!(serde_json::to_string(&Number::from_int(4)).unwrap(), "4");
        assert_eq!(
            serde_json::to_string(&Number(ratio(3, 2))).unwrap(),
            "\"1.5\""
        );
    }
}
