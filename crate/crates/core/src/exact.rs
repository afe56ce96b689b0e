//! Exact rational time arithmetic.
//!
//! Sampling periods, transition durations, interval bounds and clock values
//! are all kept as `Ratio<i64>` so that guards and time stamps compare
//! exactly. Decimal literals such as `11.3` are converted digit by digit,
//! never through a binary float.

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RationalParseError {
    #[error("empty rational literal")]
    Empty,
    #[error("malformed rational literal `{0}`")]
    Malformed(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("rational literal `{0}` overflows 64-bit range")]
    Overflow(String),
}

/// Parses `p/q`, an integer, or a plain decimal (`-11.375`) exactly.
pub fn parse_rational(text: &str) -> Result<Rational, RationalParseError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(RationalParseError::Empty);
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: i64 = num
            .trim()
            .parse()
            .map_err(|_| RationalParseError::Malformed(s.to_string()))?;
        let den: i64 = den
            .trim()
            .parse()
            .map_err(|_| RationalParseError::Malformed(s.to_string()))?;
        if den == 0 {
            return Err(RationalParseError::ZeroDenominator(s.to_string()));
        }
        return Ok(Rational::new(num, den));
    }
    parse_decimal(s)
}

fn parse_decimal(s: &str) -> Result<Rational, RationalParseError> {
    let malformed = || RationalParseError::Malformed(s.to_string());
    let overflow = || RationalParseError::Overflow(s.to_string());
    let (negative, body) = match s.as_bytes()[0] {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(malformed());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    let mut num: i64 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        num = num
            .checked_mul(10)
            .and_then(|n| n.checked_add(i64::from(b - b'0')))
            .ok_or_else(overflow)?;
    }
    let exp = u32::try_from(frac_part.len()).map_err(|_| overflow())?;
    let den = 10_i64.checked_pow(exp).ok_or_else(overflow)?;
    let value = Rational::new(num, den);
    Ok(if negative { -value } else { value })
}

/// Exact rational for the shortest decimal that round-trips to `x`.
///
/// `0.1_f64` becomes exactly `1/10`, which is what a user writing `0.1` in a
/// scenario file means.
pub fn rational_from_decimal_f64(x: f64) -> Result<Rational, RationalParseError> {
    if !x.is_finite() {
        return Err(RationalParseError::Malformed(x.to_string()));
    }
    parse_decimal(&format!("{x}"))
}

pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Formats as a decimal when the denominator is a power of ten-compatible
/// value, otherwise as `p/q`.
pub fn display_rational(q: &Rational) -> String {
    if q.denom() == &1 {
        return q.numer().to_string();
    }
    let mut den = *q.denom();
    let mut twos = 0u32;
    let mut fives = 0u32;
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}/{}", q.numer(), q.denom());
    }
    let digits = twos.max(fives);
    let scale = 10_i64.pow(digits);
    let scaled = *q * Rational::from_integer(scale);
    let n = scaled.to_integer();
    let sign = if n < 0 { "-" } else { "" };
    let n = n.unsigned_abs();
    let scale = scale as u64;
    format!(
        "{sign}{}.{:0width$}",
        n / scale,
        n % scale,
        width = digits as usize
    )
}

pub fn is_positive(q: &Rational) -> bool {
    *q > Rational::zero()
}
