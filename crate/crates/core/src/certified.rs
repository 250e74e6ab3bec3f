//! Directed-rounding helpers: certified bounds on `log2`, dyadic truncation,
//! and exact-rational formatting.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Fractional bits carried by [`Log2Bounds`].
pub const LOG2_FRAC_BITS: u32 = 56;

// Fixed-point format of the squaring loop: values in [1, 4) with 62
// fractional bits, so a product of two fits in a u128.
const FIX: u32 = 62;

/// `lo / 2^56 <= log2(x) <= hi / 2^56`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Log2Bounds {
    pub lo: u128,
    pub hi: u128,
}

impl Log2Bounds {
    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    pub fn lo_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.lo), BigInt::one() << LOG2_FRAC_BITS)
    }

    pub fn hi_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.hi), BigInt::one() << LOG2_FRAC_BITS)
    }
}

/// Certified bracket on `log2(x)` for `x >= 1`.
///
/// Bits of `log2(m)`, `m = x / 2^e in [1, 2)`, are produced by repeated
/// squaring. The lower path rounds every square down and the upper path
/// rounds up, so each yields a one-sided bound independently of the other.
pub fn log2_bounds(x: u64) -> Log2Bounds {
    assert!(x >= 1, "log2 of zero");
    let e = 63 - x.leading_zeros();
    let int_part = (e as u128) << LOG2_FRAC_BITS;
    if x.is_power_of_two() {
        return Log2Bounds {
            lo: int_part,
            hi: int_part,
        };
    }
    // m = x / 2^e scaled by 2^FIX
    let (m_lo, m_hi) = if e <= FIX {
        let v = (x as u128) << (FIX - e);
        (v, v)
    } else {
        let sh = e - FIX;
        let v = (x as u128) >> sh;
        let exact = (v << sh) == x as u128;
        (v, if exact { v } else { v + 1 })
    };
    let lo = int_part + frac_bits_of_log2(m_lo, false);
    let hi = if m_hi >= 2u128 << FIX {
        ((e + 1) as u128) << LOG2_FRAC_BITS
    } else {
        int_part + frac_bits_of_log2(m_hi, true) + 1
    };
    Log2Bounds { lo, hi }
}

fn frac_bits_of_log2(mut z: u128, round_up: bool) -> u128 {
    let one = 1u128 << FIX;
    let two = 2u128 << FIX;
    let mut bits = 0u128;
    for _ in 0..LOG2_FRAC_BITS {
        let sq = z * z;
        z = sq >> FIX;
        if round_up && (z << FIX) != sq {
            z += 1;
        }
        bits <<= 1;
        if z >= two {
            bits |= 1;
            let odd = z & 1;
            z >>= 1;
            if round_up {
                z += odd;
            }
        }
        debug_assert!(z >= one);
    }
    bits
}

/// Bracket on `log2(n)` for an arbitrary positive integer, as exact rationals.
pub fn log2_bounds_big(n: &BigUint) -> (BigRational, BigRational) {
    assert!(!n.is_zero(), "log2 of zero");
    if let Some(small) = n.to_u64() {
        let b = log2_bounds(small);
        return (b.lo_rational(), b.hi_rational());
    }
    let bits = n.bits();
    if n.trailing_zeros() == Some(bits - 1) {
        let v = BigRational::from_integer(BigInt::from(bits - 1));
        return (v.clone(), v);
    }
    // keep the top 63 bits: t * 2^s <= n < (t + 1) * 2^s
    let shift = bits - 63;
    let top = (n >> shift).to_u64().expect("63-bit prefix");
    let s = BigRational::from_integer(BigInt::from(shift));
    let lo = log2_bounds(top).lo_rational() + &s;
    let hi = log2_bounds(top + 1).hi_rational() + s;
    (lo, hi)
}

/// Bracket on `log2(r)` for a positive rational; exact when `r` is a power of two.
pub fn log2_bounds_rational(r: &BigRational) -> (BigRational, BigRational) {
    assert!(r.is_positive(), "log2 of non-positive rational");
    if let Some(k) = exact_log2_rational(r) {
        let v = BigRational::from_integer(BigInt::from(k));
        return (v.clone(), v);
    }
    let num = r.numer().magnitude();
    let den = r.denom().magnitude();
    let (n_lo, n_hi) = log2_bounds_big(num);
    let (d_lo, d_hi) = log2_bounds_big(den);
    (n_lo - d_hi, n_hi - d_lo)
}

/// `Some(k)` when `r == 2^k` exactly.
pub fn exact_log2_rational(r: &BigRational) -> Option<i64> {
    let num = r.numer().magnitude();
    let den = r.denom().magnitude();
    if !r.is_positive() {
        return None;
    }
    let pow = |v: &BigUint| -> Option<i64> {
        let b = v.bits();
        (v.trailing_zeros() == Some(b - 1)).then_some(b as i64 - 1)
    };
    Some(pow(num)? - pow(den)?)
}

/// `floor(log2(r))` for a positive rational, exact.
pub fn floor_log2_rational(r: &BigRational) -> i64 {
    assert!(r.is_positive());
    let num = r.numer().magnitude();
    let den = r.denom().magnitude();
    let mut k = num.bits() as i64 - den.bits() as i64;
    // 2^k <= num/den < 2^(k+1) holds for k or k - 1
    let fits = |k: i64| -> bool {
        if k >= 0 {
            *num >= den << (k as u64)
        } else {
            num << ((-k) as u64) >= *den
        }
    };
    if !fits(k) {
        k -= 1;
    }
    k
}

/// Keep the top `keep` significant bits of `m`, rounding toward zero.
/// Returns `(mantissa, dropped)` with `mantissa * 2^dropped <= m`.
pub fn truncate_bits(m: u128, keep: u32) -> (u128, u32) {
    let len = 128 - m.leading_zeros();
    if len <= keep {
        (m, 0)
    } else {
        let drop = len - keep;
        (m >> drop, drop)
    }
}

/// `2^k` as a rational, for any sign of `k`.
pub fn pow2_rational(k: i64) -> BigRational {
    if k >= 0 {
        BigRational::from_integer(BigInt::one() << (k as u64))
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << ((-k) as u64))
    }
}

pub fn floor_rational(r: &BigRational) -> BigInt {
    r.numer().div_floor(r.denom())
}

pub fn ceil_rational(r: &BigRational) -> BigInt {
    -((-r.numer()).div_floor(r.denom()))
}

/// Serialize exact rationals as `"num/den"` (integers as `"n/1"`).
pub fn rational_to_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn rational_from_str(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                None
            } else {
                Some(BigRational::new(n, d))
            }
        }
        None => s.parse::<BigInt>().ok().map(BigRational::from_integer),
    }
}

/// serde adapter for `BigRational` fields.
pub mod rational_serde {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_to_string(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        rational_from_str(&s).ok_or_else(|| D::Error::custom(format!("bad rational {s:?}")))
    }
}

/// serde adapter for `Option<BigRational>` fields.
pub mod opt_rational_serde {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&rational_to_string(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigRational>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        s.map(|s| rational_from_str(&s).ok_or_else(|| D::Error::custom(format!("bad rational {s:?}"))))
            .transpose()
    }
}
