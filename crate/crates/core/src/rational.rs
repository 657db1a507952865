//! Exact rational arithmetic helpers.
//!
//! All cost arithmetic in this crate is exact: shapes like `12.30` transfers
//! per window are parsed into rationals, carried through the formulas without
//! rounding, and only floored to integer gas at the reporting boundary.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use thiserror::Error;

/// The rational number type used throughout the crate.
pub type Rat = Ratio<i128>;

/// Shorthand for an integer rational.
pub fn rat(n: i128) -> Rat {
    Ratio::from_integer(n)
}

/// Shorthand for `n / d`.
pub fn ratio(n: i128, d: i128) -> Rat {
    Ratio::new(n, d)
}

/// Floor to integer gas. Used only when a report is rendered.
pub fn floor_gas(r: &Rat) -> i128 {
    r.floor().to_integer()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecimalError {
    #[error("empty decimal literal")]
    Empty,
    #[error("invalid decimal literal {0:?}")]
    Invalid(String),
    #[error("decimal literal {0:?} has too many digits")]
    TooLong(String),
}

/// Parses a decimal string such as `"12.30"` into an exact rational.
///
/// Scientific notation is not accepted; the cost path never touches binary
/// floating point.
pub fn parse_decimal(s: &str) -> Result<Rat, DecimalError> {
    let t = s.trim();
    if t.is_empty() {
        return Err(DecimalError::Empty);
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(DecimalError::Invalid(s.to_string()));
    }
    if int_part.len() + frac_part.len() > 30 {
        return Err(DecimalError::TooLong(s.to_string()));
    }
    let digits_ok = |d: &str| d.chars().all(|c| c.is_ascii_digit());
    if !digits_ok(int_part) || !digits_ok(frac_part) {
        return Err(DecimalError::Invalid(s.to_string()));
    }
    let mut numer: i128 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        numer = numer * 10 + i128::from(c as u8 - b'0');
    }
    let denom = 10i128.pow(frac_part.len() as u32);
    let r = Ratio::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Formats a rational with a fixed number of decimal places, rounding
/// half away from zero. Output is locale-free and byte-stable.
pub fn format_fixed(r: &Rat, places: u32) -> String {
    let scale = 10i128.pow(places);
    let scaled = r * rat(scale);
    let half = ratio(1, 2);
    let rounded = if scaled.is_negative() {
        -floor_gas(&(-scaled + half))
    } else {
        floor_gas(&(scaled + half))
    };
    let sign = if rounded < 0 { "-" } else { "" };
    let abs = rounded.unsigned_abs();
    let unit = scale.unsigned_abs();
    if places == 0 {
        format!("{sign}{abs}")
    } else {
        format!(
            "{sign}{}.{:0width$}",
            abs / unit,
            abs % unit,
            width = places as usize
        )
    }
}

/// True if `r` is an integer.
pub fn is_integer(r: &Rat) -> bool {
    r.fract().is_zero()
}
