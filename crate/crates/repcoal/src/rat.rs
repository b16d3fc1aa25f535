//! Exact rational scalars and parsing/formatting helpers.

use crate::error::{Error, Result};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn qi(n: i64) -> Q {
    BigRational::from_integer(BigInt::from(n))
}

pub fn q(num: i64, den: i64) -> Q {
    assert!(den != 0, "zero denominator");
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// x^k for natural k. gcd(n,d)=1 implies gcd(n^k,d^k)=1, so no renormalization.
pub fn q_pow(x: &Q, k: u32) -> Q {
    if k == 0 {
        return Q::one();
    }
    let n = num::pow::pow(x.numer().clone(), k as usize);
    let d = num::pow::pow(x.denom().clone(), k as usize);
    BigRational::new_raw(n, d)
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational from an f64 (dyadic); None for non-finite inputs.
pub fn from_f64(x: f64) -> Option<Q> {
    BigRational::from_float(x)
}

/// Accepts "p/q", integers, and decimal strings ("0.97", "-1.25", "2.5e-1").
pub fn parse_q(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::InvalidInput(format!("cannot parse rational from {s:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| bad())?;
        let d: BigInt = den.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(Error::InvalidInput(format!("zero denominator in {s:?}")));
        }
        return Ok(BigRational::new(n, d));
    }
    // Decimal / scientific form: mantissa [. fraction] [e exponent].
    let (mant, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match mant.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mant, ""),
    };
    let negative = int_part.starts_with('-');
    let int_digits = int_part.trim_start_matches(['-', '+']);
    if (int_digits.is_empty() && frac_part.is_empty())
        || !int_digits.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int_digits}{frac_part}");
    let mut n: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| bad())? };
    if negative {
        n = -n;
    }
    let scale = frac_part.len() as i32 - exp;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(n);
    if scale > 0 {
        value /= BigRational::from_integer(num::pow::pow(ten, scale as usize));
    } else if scale < 0 {
        value *= BigRational::from_integer(num::pow::pow(ten, (-scale) as usize));
    }
    Ok(value)
}

/// Canonical "p/q" (or bare integer) form used by reports.
pub fn fmt_q(x: &Q) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn parse_vec(s: &str) -> Result<Vec<Q>> {
    s.split(',').map(parse_q).collect()
}

pub fn fmt_vec(xs: &[Q]) -> String {
    xs.iter().map(fmt_q).collect::<Vec<_>>().join(",")
}

/// Serde adapter: a rational as its canonical "p/q" string.
pub mod qserde {
    use super::{fmt_q, parse_q, Q};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_q(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Q, D::Error> {
        let raw = String::deserialize(d)?;
        parse_q(&raw).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter: an optional rational as an optional "p/q" string.
pub mod qoptserde {
    use super::{fmt_q, parse_q, Q};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<Q>, s: S) -> std::result::Result<S::Ok, S::Error> {
        x.as_ref().map(fmt_q).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Q>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        raw.map(|s| parse_q(&s).map_err(serde::de::Error::custom)).transpose()
    }
}

/// Serde adapter: a rational vector as a list of "p/q" strings.
pub mod qvecserde {
    use super::{fmt_q, parse_q, Q};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(xs: &[Q], s: S) -> std::result::Result<S::Ok, S::Error> {
        xs.iter().map(fmt_q).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Q>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter().map(|s| parse_q(s).map_err(serde::de::Error::custom)).collect()
    }
}

/// Serde adapter: (index, rational) pairs with "p/q" strings.
pub mod qpairserde {
    use super::{fmt_q, parse_q, Q};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(xs: &[(usize, Q)], s: S) -> std::result::Result<S::Ok, S::Error> {
        xs.iter().map(|(i, x)| (*i, fmt_q(x))).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<(usize, Q)>, D::Error> {
        let raw = Vec::<(usize, String)>::deserialize(d)?;
        raw.into_iter()
            .map(|(i, s)| parse_q(&s).map(|x| (i, x)).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Serde adapter: (index, index, rational) triples with "p/q" strings.
pub mod qtripserde {
    use super::{fmt_q, parse_q, Q};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[allow(clippy::type_complexity)]
    pub fn serialize<S: Serializer>(
        xs: &[(usize, usize, Q)],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        xs.iter().map(|(i, j, x)| (*i, *j, fmt_q(x))).collect::<Vec<_>>().serialize(s)
    }

    #[allow(clippy::type_complexity)]
    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<(usize, usize, Q)>, D::Error> {
        let raw = Vec::<(usize, usize, String)>::deserialize(d)?;
        raw.into_iter()
            .map(|(i, j, s)| parse_q(&s).map(|x| (i, j, x)).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub fn sum(xs: &[Q]) -> Q {
    xs.iter().fold(Q::zero(), |acc, x| acc + x)
}

pub fn linf_dist(a: &[Q], b: &[Q]) -> Q {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .max()
        .unwrap_or_else(Q::zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fraction_integer_decimal() {
        assert_eq!(parse_q("3/4").unwrap(), q(3, 4));
        assert_eq!(parse_q("-7").unwrap(), qi(-7));
        assert_eq!(parse_q("0.97").unwrap(), q(97, 100));
        assert_eq!(parse_q("-1.25").unwrap(), q(-5, 4));
        assert_eq!(parse_q("2.5e-1").unwrap(), q(1, 4));
        assert_eq!(parse_q("25e2").unwrap(), qi(2500));
        assert_eq!(parse_q(".5").unwrap(), q(1, 2));
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("abc").is_err());
        assert!(parse_q("").is_err());
    }

    #[test]
    fn round_trips_formatting() {
        for s in ["3/4", "-7", "0", "22/7"] {
            let v = parse_q(s).unwrap();
            assert_eq!(parse_q(&fmt_q(&v)).unwrap(), v);
        }
    }

    #[test]
    fn exact_powers() {
        let x = q(97, 100);
        assert_eq!(q_pow(&x, 3), q(912673, 1000000));
        assert_eq!(q_pow(&x, 0), qi(1));
    }

    #[test]
    fn f64_round_trip_is_exact_for_dyadics() {
        let v = from_f64(0.5).unwrap();
        assert_eq!(v, q(1, 2));
        assert_eq!(to_f64(&q(1, 4)), 0.25);
    }
}
