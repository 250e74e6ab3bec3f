//! Dangerous sets: for each `x`, the intervals of radius
//! `eps / (||alpha x|| x^2 log2(x)^2)` around every `y / x`, the level `l_x`,
//! and the minimal level-`l_x` dyadic cover `A(x)`.
//!
//! `||alpha x||` and `log2(x)^2` enter only through dyadic lower bounds, so the
//! radius actually used is never smaller than the ideal one.

use crate::alpha::AlphaField;
use crate::certified::{log2_bounds, pow2_rational, truncate_bits};
use crate::dyadic::{cover_range, DyadicInterval, RatInterval};
use crate::error::{Error, Result};
use crate::index::DyadicIndex;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::sync::Arc;

pub const DEFAULT_LOG_PRECISION_BITS: u32 = 32;

#[derive(Clone, Debug)]
pub struct DangerParams {
    alpha: Arc<AlphaField>,
    epsilon_log2: i32,
    q0: u64,
    log_precision_bits: u32,
}

impl DangerParams {
    pub fn new(alpha: Arc<AlphaField>, epsilon_log2: i32, q0: u64, log_precision_bits: u32) -> Result<Self> {
        if epsilon_log2 >= 0 {
            return Err(Error::BadEpsilon(epsilon_log2));
        }
        if q0 < 2 {
            return Err(Error::IndexBelowTwo(q0));
        }
        if !(8..=100).contains(&log_precision_bits) {
            return Err(Error::Config(format!(
                "log precision must be within 8..=100 bits, got {log_precision_bits}"
            )));
        }
        Ok(Self {
            alpha,
            epsilon_log2,
            q0,
            log_precision_bits,
        })
    }

    pub fn alpha(&self) -> &AlphaField {
        &self.alpha
    }

    pub fn alpha_arc(&self) -> &Arc<AlphaField> {
        &self.alpha
    }

    pub fn epsilon_log2(&self) -> i32 {
        self.epsilon_log2
    }

    pub fn epsilon(&self) -> BigRational {
        pow2_rational(self.epsilon_log2 as i64)
    }

    pub fn q0(&self) -> u64 {
        self.q0
    }

    pub fn log_precision_bits(&self) -> u32 {
        self.log_precision_bits
    }
}

/// `r = 2^exp / denom`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct RadiusForm {
    exp: i64,
    denom: BigUint,
}

impl RadiusForm {
    fn compute(params: &DangerParams, x: u64) -> Self {
        let p = params.log_precision_bits;
        let d = params.alpha.norm_lower(x, p);
        let log_lo = log2_bounds(x).lo;
        let (l_mant, l_drop) = truncate_bits(log_lo * log_lo, p + 2);
        let l_shift = 2 * crate::certified::LOG2_FRAC_BITS - l_drop;
        let x2 = BigUint::from(x) * x;
        let denom = BigUint::from(d.mantissa) * l_mant * x2;
        let exp = params.epsilon_log2 as i64 + d.shift as i64 + l_shift as i64;
        Self { exp, denom }
    }

    fn to_rational(&self) -> BigRational {
        pow2_rational(self.exp) / BigRational::from_integer(BigInt::from(self.denom.clone()))
    }

    /// `floor(log2(1 / (2 r)))`, clamped at zero.
    fn level(&self) -> u32 {
        let l = self.denom.bits() as i64 - 1 - (self.exp + 1);
        l.max(0) as u32
    }
}

/// Radius actually used for `x`; at least the ideal radius and within a
/// relative `2^(2 - log_precision_bits)` of it.
pub fn radius(params: &DangerParams, x: u64) -> Result<BigRational> {
    if x < 2 {
        return Err(Error::IndexBelowTwo(x));
    }
    Ok(RadiusForm::compute(params, x).to_rational())
}

/// `l_x`, with `2^-l_x >= 2 r(x)`; `l_0 = 0`.
pub fn level(params: &DangerParams, x: u64) -> Result<u32> {
    match x {
        0 => Ok(0),
        1 => Err(Error::IndexBelowTwo(1)),
        _ => Ok(RadiusForm::compute(params, x).level()),
    }
}

/// One `x`: radius, level and cover `A(x)`.
#[derive(Clone, Debug)]
pub struct DangerSet<A> {
    x: u64,
    level: u32,
    radius: RadiusForm,
    cover: Vec<DyadicInterval<A>>,
}

impl<A: DyadicIndex> DangerSet<A> {
    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn radius(&self) -> BigRational {
        self.radius.to_rational()
    }

    /// Deduplicated level-`l_x` intervals, sorted.
    pub fn cover(&self) -> &[DyadicInterval<A>] {
        &self.cover
    }

    pub fn into_cover(self) -> Vec<DyadicInterval<A>> {
        self.cover
    }

    pub fn cover_measure(&self) -> BigRational {
        BigRational::new(BigInt::from(self.cover.len()), BigInt::one() << self.level)
    }

    /// `E(x, y) ∩ [0, 1]`.
    pub fn segment(&self, y: u64) -> RatInterval {
        let c = BigRational::new(BigInt::from(y), BigInt::from(self.x));
        let r = self.radius();
        RatInterval {
            lo: &c - &r,
            hi: c + r,
        }
        .clip_unit()
    }

    pub fn segments(&self) -> impl Iterator<Item = RatInterval> + '_ {
        (0..=self.x).map(|y| self.segment(y))
    }

    /// Number of level-`l_x` closed segments making up `[0, 1] \ A(x)`.
    pub fn complement_count(&self) -> BigUint {
        (BigUint::one() << self.level) - BigUint::from(self.cover.len())
    }
}

/// Builds `A(x)` for every `y = 0..=x`.
pub fn build<A: DyadicIndex>(params: &DangerParams, x: u64) -> Result<DangerSet<A>> {
    build_range(params, x, 0, x)
}

/// Builds the part of `A(x)` coming from segments that can meet `window`.
pub fn build_window<A: DyadicIndex>(
    params: &DangerParams,
    x: u64,
    window: &DyadicInterval<A>,
) -> Result<DangerSet<A>> {
    if x < 2 {
        return Err(Error::IndexBelowTwo(x));
    }
    let form = RadiusForm::compute(params, x);
    let r = form.to_rational();
    let xr = BigRational::from_integer(BigInt::from(x));
    let lo = crate::certified::floor_rational(&((window.lo() - &r) * &xr));
    let hi = crate::certified::ceil_rational(&((window.hi() + &r) * &xr));
    let y_lo = lo.max(BigInt::zero()).to_u64().unwrap_or(0);
    let y_hi = hi.min(BigInt::from(x)).to_u64().unwrap_or(x);
    if y_lo > y_hi {
        return Ok(DangerSet {
            x,
            level: form.level(),
            radius: form,
            cover: Vec::new(),
        });
    }
    build_range(params, x, y_lo, y_hi)
}

fn build_range<A: DyadicIndex>(params: &DangerParams, x: u64, y_lo: u64, y_hi: u64) -> Result<DangerSet<A>> {
    if x < 2 {
        return Err(Error::IndexBelowTwo(x));
    }
    let form = RadiusForm::compute(params, x);
    let l = form.level();
    if l > A::MAX_LEVEL {
        return Err(Error::LevelOverflow {
            level: l,
            max: A::MAX_LEVEL,
        });
    }
    let mut cover: Vec<DyadicInterval<A>> = Vec::with_capacity(2 * (y_hi - y_lo + 1) as usize);
    let mut last: Option<BigUint> = None;
    let fast = FastCover::new(&form, x, l);
    for y in y_lo..=y_hi {
        let (first, end) = match fast.as_ref().and_then(|f| f.range(y)) {
            Some((a, b)) => (BigUint::from(a), BigUint::from(b)),
            None => exact_range(&form, x, y, l),
        };
        let mut a = first;
        if let Some(prev) = &last {
            if &a <= prev {
                a = prev + 1u32;
            }
        }
        while a <= end {
            let idx = A::from_biguint(&a).ok_or(Error::LevelOverflow {
                level: l,
                max: A::MAX_LEVEL,
            })?;
            cover.push(DyadicInterval::new(idx, l)?);
            a += 1u32;
        }
        if last.as_ref().is_none_or(|p| &end > p) {
            last = Some(end);
        }
    }
    Ok(DangerSet {
        x,
        level: l,
        radius: form,
        cover,
    })
}

fn exact_range(form: &RadiusForm, x: u64, y: u64, l: u32) -> (BigUint, BigUint) {
    let r = form.to_rational();
    let c = BigRational::new(BigInt::from(y), BigInt::from(x));
    let seg = RatInterval {
        lo: &c - &r,
        hi: c + r,
    }
    .clip_unit();
    let (a, b) = cover_range(&seg.lo, &seg.hi, l);
    (a.to_biguint().unwrap(), b.to_biguint().unwrap())
}

/// u128 evaluation of the cover endpoints, used when everything fits.
struct FastCover {
    x: u128,
    l: u32,
    denom: u128,
    /// `2^(exp + l) * x` when `exp + l >= 0`
    rhs_num: u128,
    /// `2^-(exp + l)` multiplier for the left side otherwise
    lhs_scale: u32,
    x_denom: u128,
}

impl FastCover {
    fn new(form: &RadiusForm, x: u64, l: u32) -> Option<Self> {
        if l >= 120 {
            return None;
        }
        let denom = form.denom.to_u128()?;
        let s = form.exp + l as i64;
        let x = x as u128;
        let (rhs_num, lhs_scale) = if s >= 0 {
            let s = u32::try_from(s).ok()?;
            if s >= 127 {
                return None;
            }
            (x.checked_mul(1u128 << s)?, 0)
        } else {
            let t = u32::try_from(-s).ok()?;
            if t >= 127 {
                return None;
            }
            (x, t)
        };
        Some(Self {
            x,
            l,
            denom,
            rhs_num,
            lhs_scale,
            x_denom: x.checked_mul(denom)?,
        })
    }

    /// `(first, last)` cell indices for `y`, or `None` on overflow.
    fn range(&self, y: u64) -> Option<(u128, u128)> {
        let y = y as u128;
        let scaled = y.checked_mul(1u128 << self.l)?;
        let (k, rem) = (scaled / self.x, scaled % self.x);
        // compare rem / x against r 2^l = 2^(exp + l) / denom
        let lhs = rem.checked_mul(self.denom)?.checked_mul(1u128 << self.lhs_scale)?;
        let rhs = if self.lhs_scale == 0 {
            self.rhs_num
        } else {
            self.x
        };
        let top = (1u128 << self.l) - 1;
        let first = if y == 0 {
            0
        } else if lhs >= rhs {
            k
        } else {
            k.saturating_sub(1)
        };
        let last = if y == self.x {
            top
        } else {
            // t = rem/x + r 2^l <= 1  <=>  lhs + rhs <= x * denom (scaled alike)
            let bound = self.x_denom.checked_mul(1u128 << self.lhs_scale)?;
            if lhs.checked_add(rhs)? <= bound {
                k
            } else {
                k + 1
            }
        };
        Some((first.min(top), last.min(top)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::QuadraticReal;
    use crate::dyadic::dyadic_cover;
    use std::cmp::Ordering;

    fn golden_params(eps_log2: i32, q0: u64) -> DangerParams {
        let f = Arc::new(AlphaField::new(QuadraticReal::golden()).unwrap());
        DangerParams::new(f, eps_log2, q0, 32).unwrap()
    }

    /// Reference cover through exact rational segments.
    fn reference_cover(set: &DangerSet<u64>) -> Vec<DyadicInterval<u64>> {
        let mut cells: Vec<DyadicInterval<u64>> = set
            .segments()
            .flat_map(|s| dyadic_cover::<u64>(&s, set.level()).unwrap())
            .collect();
        cells.sort();
        cells.dedup();
        cells
    }

    /// ||16 alpha|| and the radius from a 200-digit decimal evaluation.
    #[test]
    fn radius_at_sixteen_matches_decimal_oracle() {
        let params = golden_params(-6, 16);
        let r = radius(&params, 16).unwrap();
        // 16 alpha = 8 sqrt5 - 8; nearest integer 10; ||.|| = 10 - (8 sqrt5 - 8) = 18 - 8 sqrt 5
        let digits = 200u32;
        let ten = BigInt::from(10u32).pow(digits);
        let s = BigInt::from((BigInt::from(5u32 * 64) * &ten * &ten).magnitude().sqrt()); // 8 sqrt5 * 10^200
        let norm_hi = &ten * 18 - &s; // upper bound (s rounds down)
        let norm = BigRational::new(norm_hi, ten.clone());
        assert!((norm.to_f64().unwrap() - 0.111456).abs() < 1e-6);
        // ideal radius <= r <= ideal (1 + 2^-30); ideal = 2^-6 / (norm * 256 * 16)
        let ideal = pow2_rational(-6) / (norm * BigRational::from_integer(4096.into()));
        assert!(r >= ideal.clone() * (BigRational::one() - pow2_rational(-150)));
        assert!(r <= ideal.clone() * (BigRational::one() + pow2_rational(-30)));
        assert!((r.to_f64().unwrap() - 3.42e-5).abs() < 0.01e-5);
        assert_eq!(level(&params, 16).unwrap(), 13);
    }

    #[test]
    fn radius_never_below_ideal() {
        let params = golden_params(-6, 2);
        let f = params.alpha();
        for x in 2..400u64 {
            let r = radius(&params, x).unwrap();
            // ||alpha x|| >= eps / (r x^2 lo^2) with lo <= log2(x) implies r >= ideal
            let lo = log2_bounds(x).lo_rational();
            let need = params.epsilon() / (&r * BigRational::from_integer(BigInt::from(x * x)) * &lo * &lo);
            let norm = f.unit_distance(x).unwrap();
            assert_ne!(norm.cmp_rational(&need), Ordering::Less, "x={x}");
            let ideal = params.epsilon().to_f64().unwrap()
                / (norm.to_f64() * (x * x) as f64 * (x as f64).log2().powi(2));
            let rel = r.to_f64().unwrap() / ideal - 1.0;
            assert!(rel > -1e-12 && rel < 1e-8, "x={x} rel={rel}");
        }
    }

    #[test]
    fn power_of_two_logs_are_exact_and_linear_in_eps() {
        let p6 = golden_params(-6, 2);
        let p7 = golden_params(-7, 2);
        for x in [4u64, 16, 64, 1024, 1000, 777] {
            let r6 = radius(&p6, x).unwrap();
            let r7 = radius(&p7, x).unwrap();
            assert_eq!(r6, r7 * BigRational::from_integer(2.into()));
            assert_eq!(level(&p6, x).unwrap() + 1, level(&p7, x).unwrap());
        }
        assert_eq!(level(&p6, 0).unwrap(), 0);
        assert!(matches!(level(&p6, 1), Err(Error::IndexBelowTwo(1))));
        assert!(matches!(radius(&p6, 1), Err(Error::IndexBelowTwo(1))));
    }

    #[test]
    fn level_separates_segments() {
        let params = golden_params(-6, 2);
        for x in 2..2000u64 {
            let l = level(&params, x).unwrap();
            let r = radius(&params, x).unwrap();
            // 2^-l >= 2 r and 2^-(l+1) < 2 r unless clamped
            assert!(pow2_rational(-(l as i64)) >= &r * BigRational::from_integer(2.into()));
            if l > 0 {
                assert!(pow2_rational(-(l as i64) - 1) < &r * BigRational::from_integer(2.into()));
            }
        }
    }

    #[test]
    fn fast_cover_matches_reference() {
        for eps in [-3, -6, -10] {
            let params = golden_params(eps, 2);
            for x in (2..300u64).chain([1000, 4095, 4096]) {
                let set = build::<u64>(&params, x).unwrap();
                assert_eq!(set.cover(), &reference_cover(&set)[..], "x={x} eps=2^{eps}");
            }
        }
    }

    #[test]
    fn cover_at_sixteen() {
        let params = golden_params(-6, 16);
        let set = build::<u64>(&params, 16).unwrap();
        assert_eq!(set.level(), 13);
        let n = set.cover().len();
        assert!((17..=34).contains(&n));
        // frozen from the reference construction
        assert_eq!(n, reference_cover(&set).len());
        assert_eq!(set.complement_count(), BigUint::from((1u64 << 13) - n as u64));
        // clipping at both ends
        assert_eq!(set.segment(0).lo, BigRational::zero());
        assert_eq!(set.segment(16).hi, BigRational::one());
        assert_eq!(set.segment(0).hi, set.radius());
    }

    #[test]
    fn cover_invariants() {
        let params = golden_params(-6, 2);
        for x in [2u64, 3, 10, 57, 300, 1234] {
            let set = build::<u64>(&params, x).unwrap();
            let r = set.radius();
            let cell = pow2_rational(-(set.level() as i64));
            for y in 0..=x {
                let seg = set.segment(y);
                assert!(seg.length() <= &cell * BigRational::from_integer(2.into()));
                let members = dyadic_cover::<u64>(&seg, set.level()).unwrap();
                assert!(members.len() <= 2);
                for m in &members {
                    assert!(set.cover().binary_search(m).is_ok());
                }
                // y/x is interior to its cover
                let c = BigRational::new(BigInt::from(y), BigInt::from(x));
                assert!(members[0].lo() <= &c - &r || y == 0);
                assert!(members.last().unwrap().hi() >= &c + &r || y == x);
            }
            // measure(cover) <= (x + 1) * 2 * 2^-l
            let bound = BigRational::from_integer(BigInt::from(2 * (x + 1))) * &cell;
            assert!(set.cover_measure() <= bound);
        }
    }

    #[test]
    fn window_cover_is_a_subset_matching_full_cover_inside() {
        let params = golden_params(-6, 2);
        let full = build::<u64>(&params, 500).unwrap();
        let win = DyadicInterval::new(5u64, 4).unwrap();
        let part = build_window::<u64>(&params, 500, &win).unwrap();
        let inside = |c: &DyadicInterval<u64>| {
            let (s, e) = c.span(40);
            let (ws, we) = win.span(40);
            s < we && e > ws
        };
        let a: Vec<_> = full.cover().iter().filter(|c| inside(c)).cloned().collect();
        let b: Vec<_> = part.cover().iter().filter(|c| inside(c)).cloned().collect();
        assert_eq!(a, b);
        assert!(part.cover().len() < full.cover().len());
    }

    #[test]
    fn params_validation() {
        let f = Arc::new(AlphaField::new(QuadraticReal::golden()).unwrap());
        assert!(matches!(DangerParams::new(f.clone(), 0, 16, 32), Err(Error::BadEpsilon(0))));
        assert!(matches!(DangerParams::new(f.clone(), -6, 1, 32), Err(Error::IndexBelowTwo(1))));
        assert!(DangerParams::new(f, -6, 2, 4).is_err());
    }
}
