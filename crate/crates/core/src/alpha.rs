//! Exact arithmetic for a fixed real quadratic irrational `alpha` in (0, 1):
//! continued fractions, convergents, `||alpha q||`, and a certified badness
//! constant.

use crate::certified::{rational_serde, truncate_bits};
use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

/// Sign of `u + v * sqrt(d)` for integers `u, v` and a non-square `d`.
pub fn surd_sign(u: &BigInt, v: &BigInt, d: &BigInt) -> Ordering {
    let su = u.sign();
    let sv = v.sign();
    match (su, sv) {
        (_, Sign::NoSign) => u.cmp(&BigInt::zero()),
        (Sign::NoSign, _) => v.cmp(&BigInt::zero()),
        (Sign::Plus, Sign::Plus) => Ordering::Greater,
        (Sign::Minus, Sign::Minus) => Ordering::Less,
        (Sign::Plus, Sign::Minus) => (u * u).cmp(&(v * v * d)),
        (Sign::Minus, Sign::Plus) => (v * v * d).cmp(&(u * u)),
    }
}

/// `floor((u + v * sqrt(d)) / w)` for `w > 0` and non-square `d`.
pub fn floor_surd(u: &BigInt, v: &BigInt, d: &BigInt, w: &BigInt) -> BigInt {
    debug_assert!(w.is_positive());
    let s = if v.is_zero() {
        BigInt::zero()
    } else {
        let root = BigInt::from((v * v * d).magnitude().sqrt());
        // v*sqrt(d) is irrational, so it lies strictly between root and root+1
        if v.is_positive() {
            root
        } else {
            -root - 1
        }
    };
    (u + s).div_floor(w)
}

fn is_squarefree(d: u64) -> bool {
    let mut p = 2u64;
    while let Some(pp) = p.checked_mul(p) {
        if pp > d {
            break;
        }
        if d % pp == 0 {
            return false;
        }
        p += 1;
    }
    true
}

/// `a + b * sqrt(d)` with `d` squarefree and `b != 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadraticReal {
    d: u64,
    a: BigRational,
    b: BigRational,
}

impl QuadraticReal {
    /// Validated constructor: the value must be irrational and lie in (0, 1).
    pub fn new(d: u64, a: BigRational, b: BigRational) -> Result<Self> {
        if d < 2 {
            return Err(Error::BadRadicand(d));
        }
        if !is_squarefree(d) {
            return Err(Error::NotSquarefree(d));
        }
        if b.is_zero() {
            return Err(Error::Rational);
        }
        let q = Self { d, a, b };
        if q.signum() != Ordering::Greater || q.cmp_rational(&BigRational::one()) != Ordering::Less {
            return Err(Error::OutOfRange(q.to_string()));
        }
        Ok(q)
    }

    fn raw(d: u64, a: BigRational, b: BigRational) -> Self {
        Self { d, a, b }
    }

    /// `(sqrt(5) - 1) / 2`.
    pub fn golden() -> Self {
        let half = BigRational::new(1.into(), 2.into());
        Self::raw(5, -half.clone(), half)
    }

    /// `sqrt(2) - 1`.
    pub fn sqrt2_minus_one() -> Self {
        Self::raw(2, -BigRational::one(), BigRational::one())
    }

    /// `(sqrt(3) - 1) / 2`.
    pub fn sqrt3_half() -> Self {
        let half = BigRational::new(1.into(), 2.into());
        Self::raw(3, -half.clone(), half)
    }

    pub fn d(&self) -> u64 {
        self.d
    }

    pub fn a(&self) -> &BigRational {
        &self.a
    }

    pub fn b(&self) -> &BigRational {
        &self.b
    }

    /// `(u, v, w)` with `value = (u + v sqrt(d)) / w` and `w > 0`.
    pub fn integer_form(&self) -> (BigInt, BigInt, BigInt) {
        let w = self.a.denom().lcm(self.b.denom());
        let u = self.a.numer() * (&w / self.a.denom());
        let v = self.b.numer() * (&w / self.b.denom());
        (u, v, w)
    }

    pub fn signum(&self) -> Ordering {
        let (u, v, _) = self.integer_form();
        surd_sign(&u, &v, &BigInt::from(self.d))
    }

    /// Exact comparison against a rational.
    pub fn cmp_rational(&self, r: &BigRational) -> Ordering {
        let shifted = Self::raw(self.d, &self.a - r, self.b.clone());
        shifted.signum()
    }

    /// `floor(value * 2^k)`.
    pub fn floor_scaled(&self, k: u32) -> BigInt {
        let (u, v, w) = self.integer_form();
        floor_surd(&(u << k), &(v << k), &BigInt::from(self.d), &w)
    }

    /// `floor(value)`.
    pub fn floor(&self) -> BigInt {
        self.floor_scaled(0)
    }

    pub fn mul_int(&self, q: &BigInt) -> Self {
        let q = BigRational::from_integer(q.clone());
        Self::raw(self.d, &self.a * &q, &self.b * q)
    }

    /// Approximate value for display; exact work never goes through this.
    pub fn to_f64(&self) -> f64 {
        let k = 80;
        let f = self.floor_scaled(k);
        f.to_f64().unwrap_or(f64::NAN) / 2f64.powi(k as i32)
    }

    /// Continued fraction `[0; a_1, a_2, ...]` with period detection.
    pub fn cf_expand(&self, n: usize) -> Result<CfExpansion> {
        let (u, v, w) = self.integer_form();
        // (P + sqrt(D)) / Q with Q | D - P^2
        let mut big_d = &v * &v * BigInt::from(self.d);
        let (mut p, mut q) = if v.is_positive() { (u, w) } else { (-u, -w) };
        if !(&big_d - &p * &p).is_multiple_of(&q) {
            let qa = q.abs();
            p *= &qa;
            big_d *= &q * &q;
            q *= qa;
        }
        let root = BigInt::from(big_d.magnitude().sqrt());
        let floor_step = |p: &BigInt, q: &BigInt| -> BigInt {
            if q.is_positive() {
                (p + &root).div_floor(q)
            } else {
                let t: BigInt = -(p + &root + BigInt::one());
                let nq: BigInt = -q;
                t.div_floor(&nq)
            }
        };
        // leading term a_0 = 0 for alpha in (0, 1)
        let a0 = floor_step(&p, &q);
        debug_assert!(a0.is_zero());
        p = &a0 * &q - p;
        q = (&big_d - &p * &p) / q;

        const MAX_STEPS: usize = 1 << 20;
        let mut seen: HashMap<(BigInt, BigInt), usize> = HashMap::new();
        let mut quotients: Vec<u64> = Vec::new();
        loop {
            if let Some(&start) = seen.get(&(p.clone(), q.clone())) {
                let preperiod = quotients[..start].to_vec();
                let period = quotients[start..].to_vec();
                return Ok(CfExpansion::new(preperiod, period, n));
            }
            if quotients.len() >= MAX_STEPS {
                return Err(Error::PeriodNotFound(MAX_STEPS));
            }
            seen.insert((p.clone(), q.clone()), quotients.len());
            let a = floor_step(&p, &q);
            quotients.push(a.to_u64().ok_or_else(|| Error::OutOfRange(a.to_string()))?);
            p = &a * &q - p;
            q = (&big_d - &p * &p) / q;
        }
    }
}

impl fmt::Display for QuadraticReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}*sqrt({})", self.a, self.b, self.d)
    }
}

impl FromStr for QuadraticReal {
    type Err = Error;

    /// `golden`, `sqrt2`, `sqrt3`, or `d:a:b` with rationals `a`, `b`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "golden" => return Ok(Self::golden()),
            "sqrt2" => return Ok(Self::sqrt2_minus_one()),
            "sqrt3" => return Ok(Self::sqrt3_half()),
            _ => {}
        }
        let bad = || Error::AlphaSpec(s.to_string());
        let mut parts = s.split(':');
        let d: u64 = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        let a = parts.next().and_then(crate::certified::rational_from_str).ok_or_else(bad)?;
        let b = parts.next().and_then(crate::certified::rational_from_str).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Self::new(d, a, b)
    }
}

/// Wire form of alpha in certificates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub d: u64,
    pub a_num: String,
    pub a_den: String,
    pub b_num: String,
    pub b_den: String,
}

impl From<&QuadraticReal> for AlphaRecord {
    fn from(q: &QuadraticReal) -> Self {
        Self {
            d: q.d,
            a_num: q.a.numer().to_string(),
            a_den: q.a.denom().to_string(),
            b_num: q.b.numer().to_string(),
            b_den: q.b.denom().to_string(),
        }
    }
}

impl TryFrom<&AlphaRecord> for QuadraticReal {
    type Error = Error;

    fn try_from(r: &AlphaRecord) -> Result<Self> {
        let int = |s: &str| s.parse::<BigInt>().map_err(|_| Error::AlphaSpec(s.to_string()));
        let ratio = |n: &str, d: &str| -> Result<BigRational> {
            let d = int(d)?;
            if d.is_zero() {
                return Err(Error::AlphaSpec("zero denominator".into()));
            }
            Ok(BigRational::new(int(n)?, d))
        };
        QuadraticReal::new(r.d, ratio(&r.a_num, &r.a_den)?, ratio(&r.b_num, &r.b_den)?)
    }
}

/// Partial quotients `a_1, a_2, ...` of `[0; a_1, a_2, ...]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfExpansion {
    pub preperiod: Vec<u64>,
    pub period: Vec<u64>,
    terms: Vec<u64>,
}

impl CfExpansion {
    fn new(preperiod: Vec<u64>, period: Vec<u64>, n: usize) -> Self {
        let mut out = CfExpansion {
            preperiod,
            period,
            terms: Vec::new(),
        };
        out.terms = (0..n).map(|i| out.term(i + 1)).collect();
        out
    }

    /// The requested prefix `a_1..a_n`.
    pub fn terms(&self) -> &[u64] {
        &self.terms
    }

    pub fn period_len(&self) -> usize {
        self.period.len()
    }

    /// `a_i` for `i >= 1`.
    pub fn term(&self, i: usize) -> u64 {
        assert!(i >= 1);
        let j = i - 1;
        if j < self.preperiod.len() {
            self.preperiod[j]
        } else {
            self.period[(j - self.preperiod.len()) % self.period.len()]
        }
    }

    pub fn a_max(&self) -> u64 {
        self.preperiod.iter().chain(&self.period).copied().max().unwrap_or(0)
    }
}

/// `p_n / q_n`, the n-th convergent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Convergent {
    pub n: usize,
    pub p: BigInt,
    pub q: BigInt,
}

/// Bracket on `||alpha x|| * 2^128`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormBounds {
    pub lo: u128,
    pub hi: u128,
}

/// A dyadic number `mantissa / 2^shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dyadic {
    pub mantissa: u128,
    pub shift: u32,
}

impl Dyadic {
    pub fn to_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.mantissa), BigInt::one() << self.shift)
    }
}

/// `alpha` together with its precomputed integer form, fixed-point image and
/// continued fraction.
#[derive(Clone, Debug)]
pub struct AlphaField {
    alpha: QuadraticReal,
    u: BigInt,
    v: BigInt,
    w: BigInt,
    d: BigInt,
    fixed: u128,
    cf: CfExpansion,
}

const HALF: u128 = 1 << 127;

impl AlphaField {
    pub fn new(alpha: QuadraticReal) -> Result<Self> {
        let (u, v, w) = alpha.integer_form();
        let fixed = alpha
            .floor_scaled(128)
            .to_u128()
            .ok_or_else(|| Error::OutOfRange(alpha.to_string()))?;
        let cf = alpha.cf_expand(0)?;
        Ok(Self {
            d: BigInt::from(alpha.d),
            alpha,
            u,
            v,
            w,
            fixed,
            cf,
        })
    }

    pub fn alpha(&self) -> &QuadraticReal {
        &self.alpha
    }

    pub fn cf(&self) -> &CfExpansion {
        &self.cf
    }

    /// Nearest integer to `alpha x`, decided by an exact sign test.
    pub fn nearest_integer(&self, x: u64) -> BigInt {
        let x = BigInt::from(x);
        let two_w = &self.w * 2;
        floor_surd(&(&self.u * &x * 2 + &self.w), &(&self.v * &x * 2), &self.d, &two_w)
    }

    /// `alpha x - n` as `(U + V sqrt(d)) / w`, with `n` the nearest integer.
    fn signed_offset(&self, x: u64) -> (BigInt, BigInt) {
        let n = self.nearest_integer(x);
        let xb = BigInt::from(x);
        (&self.u * &xb - n * &self.w, &self.v * xb)
    }

    /// `||alpha q||` exactly.
    pub fn unit_distance(&self, q: u64) -> Result<QuadraticReal> {
        if q == 0 {
            return Err(Error::ZeroIndex);
        }
        let (uu, vv) = self.signed_offset(q);
        let (uu, vv) = if surd_sign(&uu, &vv, &self.d) == Ordering::Less {
            (-uu, -vv)
        } else {
            (uu, vv)
        };
        let w = &self.w;
        Ok(QuadraticReal::raw(
            self.alpha.d,
            BigRational::new(uu, w.clone()),
            BigRational::new(vv, w.clone()),
        ))
    }

    /// `floor(||alpha x|| * 2^k)`, exact.
    pub fn norm_floor(&self, x: u64, k: u32) -> BigUint {
        let (uu, vv) = self.signed_offset(x);
        let (uu, vv) = if surd_sign(&uu, &vv, &self.d) == Ordering::Less {
            (-uu, -vv)
        } else {
            (uu, vv)
        };
        floor_surd(&(uu << k), &(vv << k), &self.d, &self.w)
            .to_biguint()
            .expect("norm is positive")
    }

    /// Bracket on `||alpha x|| * 2^128` from the fixed-point image of alpha,
    /// falling back to exact arithmetic when the bracket wraps.
    pub fn norm_bounds(&self, x: u64) -> NormBounds {
        let x128 = x as u128;
        let f = x128.wrapping_mul(self.fixed);
        // true fractional part of alpha x, scaled, lies in [f, f + x)
        match f.checked_add(x128) {
            Some(top) if f > 0 => {
                if top <= HALF {
                    NormBounds { lo: f, hi: top }
                } else if f >= HALF {
                    NormBounds {
                        lo: (u128::MAX - top) + 1,
                        hi: (u128::MAX - f) + 1,
                    }
                } else {
                    NormBounds {
                        lo: f.min((u128::MAX - top) + 1),
                        hi: HALF,
                    }
                }
            }
            _ => self.norm_bounds_exact(x),
        }
    }

    pub fn norm_bounds_exact(&self, x: u64) -> NormBounds {
        let lo = self.norm_floor(x, 128).to_u128().expect("norm below 1/2");
        NormBounds { lo, hi: lo + 1 }
    }

    /// Dyadic `D <= ||alpha x||` with relative error below `2^-precision`.
    pub fn norm_lower(&self, x: u64, precision: u32) -> Dyadic {
        self.norm_dyadic(x, precision, false)
    }

    /// Dyadic `D >= ||alpha x||` with relative error below `2^-precision`.
    pub fn norm_upper(&self, x: u64, precision: u32) -> Dyadic {
        self.norm_dyadic(x, precision, true)
    }

    fn norm_dyadic(&self, x: u64, precision: u32, upper: bool) -> Dyadic {
        assert!(precision <= 120);
        let keep = precision + 2;
        let b = self.norm_bounds(x);
        if b.lo > 0 && (b.hi - b.lo).checked_shl(keep).is_some_and(|w| w >> keep == b.hi - b.lo && w <= b.lo) {
            return round_dyadic(if upper { b.hi } else { b.lo }, 128, keep, upper);
        }
        let mut k = 128u32;
        loop {
            let f = self.norm_floor(x, k);
            let bits = f.bits() as u32;
            if bits >= keep + 1 {
                // trim to 127 bits so the mantissa fits before rounding
                let drop = bits.saturating_sub(127);
                let lo = (&f >> drop).to_u128().unwrap();
                let hi = if upper { lo + 1 } else { lo };
                return round_dyadic(hi, k - drop, keep, upper);
            }
            k += keep + 1 - bits + 1;
        }
    }

    /// `||alpha x|| < 2^-mu`, exact.
    pub fn norm_below_pow2(&self, x: u64, mu: u32) -> bool {
        if mu < 128 {
            let t = 1u128 << (128 - mu);
            let b = self.norm_bounds(x);
            if b.hi < t {
                return true;
            }
            if b.lo >= t {
                return false;
            }
        }
        self.norm_floor(x, mu).is_zero()
    }

    /// The unique `mu >= 1` with `2^(-mu-1) < ||alpha x|| <= 2^(-mu)`.
    pub fn mu_index(&self, x: u64) -> u32 {
        let b = self.norm_bounds(x);
        let (bl, bh) = (128 - b.lo.leading_zeros(), 128 - b.hi.leading_zeros());
        if b.lo > 0 && bl == bh {
            return 128 - bl;
        }
        let mut k = 128u32;
        loop {
            let f = self.norm_floor(x, k);
            if !f.is_zero() {
                return k + 1 - f.bits() as u32;
            }
            k += 64;
        }
    }

    /// Convergents `p_n / q_n` with `q_n <= max_q`, starting at `n = 0`.
    pub fn convergents(&self, max_q: &BigInt) -> Vec<Convergent> {
        let mut out = vec![Convergent {
            n: 0,
            p: BigInt::zero(),
            q: BigInt::one(),
        }];
        let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
        let (mut p, mut q) = (BigInt::zero(), BigInt::one());
        let mut n = 0;
        loop {
            n += 1;
            let a = BigInt::from(self.cf.term(n));
            let p_next = &a * &p + &p_prev;
            let q_next = &a * &q + &q_prev;
            if &q_next > max_q {
                return out;
            }
            p_prev = std::mem::replace(&mut p, p_next);
            q_prev = std::mem::replace(&mut q, q_next);
            out.push(Convergent {
                n,
                p: p.clone(),
                q: q.clone(),
            });
        }
    }

    /// Certified `delta <= q ||alpha q||` for every `q >= 1`.
    pub fn badness_delta(&self, scan_limit: u64) -> Result<BadnessCertificate> {
        if scan_limit == 0 {
            return Err(Error::ZeroIndex);
        }
        let mut best: Option<(BigUint, u64)> = None;
        for q in 1..=scan_limit {
            let lo = BigUint::from(self.norm_bounds(q).lo) * q;
            if best.as_ref().is_none_or(|(b, _)| lo < *b) {
                best = Some((lo, q));
            }
        }
        let (scan_num, argmin) = best.expect("scan_limit >= 1");
        let scan_min_lo = BigRational::new(BigInt::from(scan_num), BigInt::one() << 128u32);
        let a_max = self.cf.a_max();
        let tail_bound = BigRational::new(BigInt::one(), BigInt::from(a_max + 2));
        let delta = scan_min_lo.clone().min(tail_bound.clone());
        Ok(BadnessCertificate {
            delta,
            scan_limit,
            scan_min_lo,
            scan_argmin: argmin,
            tail_bound,
            a_max,
        })
    }
}

fn round_dyadic(m: u128, shift: u32, keep: u32, upper: bool) -> Dyadic {
    let (t, drop) = truncate_bits(m, keep);
    let t = if upper && (t << drop) != m { t + 1 } else { t };
    Dyadic {
        mantissa: t,
        shift: shift - drop,
    }
}

/// `delta` is valid for every `q >= 1`: the scan covers `q <= scan_limit` and
/// the continued-fraction tail inequality `q ||alpha q|| > 1 / (a_max + 2)`
/// covers the rest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadnessCertificate {
    #[serde(with = "rational_serde")]
    pub delta: BigRational,
    pub scan_limit: u64,
    #[serde(with = "rational_serde")]
    pub scan_min_lo: BigRational,
    pub scan_argmin: u64,
    #[serde(with = "rational_serde")]
    pub tail_bound: BigRational,
    pub a_max: u64,
}
