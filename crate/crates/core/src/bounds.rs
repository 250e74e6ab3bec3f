//! The counting side: the sum `sigma(alpha; q, Q)`, the sets `A_{mu,nu}`,
//! lattice points of the strip `Omega`, and the bounds relating them.

use crate::alpha::AlphaField;
use crate::certified::{log2_bounds, log2_bounds_rational, pow2_rational, rational_serde, truncate_bits};
use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_integer::Roots;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed-point grid for summing terms.
const SUM_FRAC_BITS: u32 = 90;
const TERM_PRECISION: u32 = 40;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SumBoundReport {
    pub q: u64,
    #[serde(rename = "Q")]
    pub q_max: u64,
    #[serde(with = "rational_serde")]
    pub sigma_lo: BigRational,
    #[serde(with = "rational_serde")]
    pub sigma_hi: BigRational,
    /// Upper evaluation of the closed-form bound.
    #[serde(with = "rational_serde")]
    pub bound: BigRational,
    /// Lower evaluation; `holds` compares against this one.
    #[serde(with = "rational_serde")]
    pub bound_lo: BigRational,
    pub ratio: f64,
    pub holds: bool,
}

/// Bracket on `sum_{x=q}^{Q-1} 1 / (||alpha x|| x log2(x)^2)`.
pub fn sigma(alpha: &AlphaField, q: u64, q_max: u64) -> Result<(BigRational, BigRational)> {
    if q < 2 {
        return Err(Error::IndexBelowTwo(q));
    }
    if q_max < q {
        return Err(Error::BadRange { q0: q, q_max });
    }
    const CHUNK: u64 = 4096;
    let chunks: Vec<u64> = (q..q_max).step_by(CHUNK as usize).collect();
    let (lo, hi) = chunks
        .into_par_iter()
        .map(|start| {
            let mut lo = BigUint::zero();
            let mut hi = BigUint::zero();
            for x in start..(start + CHUNK).min(q_max) {
                let (a, b) = sigma_term(alpha, x);
                lo += a;
                hi += b;
            }
            (lo, hi)
        })
        .reduce(|| (BigUint::zero(), BigUint::zero()), |a, b| (a.0 + b.0, a.1 + b.1));
    let den = BigInt::one() << SUM_FRAC_BITS;
    Ok((
        BigRational::new(BigInt::from(lo), den.clone()),
        BigRational::new(BigInt::from(hi), den),
    ))
}

/// One term over `2^SUM_FRAC_BITS`, rounded down and up.
fn sigma_term(alpha: &AlphaField, x: u64) -> (BigUint, BigUint) {
    let d_lo = alpha.norm_lower(x, TERM_PRECISION);
    let d_hi = alpha.norm_upper(x, TERM_PRECISION);
    let b = log2_bounds(x);
    let (l_lo, drop_lo) = truncate_bits(b.lo * b.lo, TERM_PRECISION);
    let (l_hi, drop_hi) = truncate_bits(b.hi * b.hi, TERM_PRECISION);
    let l_hi = if drop_hi > 0 { l_hi + 1 } else { l_hi };
    let two_f = 2 * crate::certified::LOG2_FRAC_BITS;
    // 1 / (D x L) = 2^(shift + 2f - drop) / (mantissa x m)
    let term = |mant: u128, shift: u32, lm: u128, drop: u32, up: bool| -> BigUint {
        let num = BigUint::one() << (SUM_FRAC_BITS + shift + two_f - drop);
        let den = BigUint::from(mant) * x * BigUint::from(lm);
        let (q, r) = (&num / &den, &num % &den);
        if up && !r.is_zero() {
            q + 1u32
        } else {
            q
        }
    };
    (
        term(d_hi.mantissa, d_hi.shift, l_hi, drop_hi, false),
        term(d_lo.mantissa, d_lo.shift, l_lo, drop_lo, true),
    )
}

/// `(base, exp)` with `n = base^exp` and `exp` maximal.
fn perfect_power(n: u64) -> (u64, u32) {
    for e in (2..=63u32).rev() {
        let r = n.nth_root(e);
        if r >= 2 && r.checked_pow(e) == Some(n) {
            return (r, e);
        }
    }
    (n, 1)
}

/// Bracket on `log2(log2(Q) / log2(q))`; exact when both are powers of one base
/// and the exponent ratio is a power of two.
fn log_log_ratio(q: u64, q_max: u64) -> (BigRational, BigRational) {
    let (bq, eq) = perfect_power(q);
    let (bm, em) = perfect_power(q_max);
    if bq == bm {
        let r = BigRational::new(BigInt::from(em), BigInt::from(eq));
        return log2_bounds_rational(&r);
    }
    let lq = log2_bounds(q);
    let lm = log2_bounds(q_max);
    let r_lo = lm.lo_rational() / lq.hi_rational();
    let r_hi = lm.hi_rational() / lq.lo_rational();
    let lo = if r_lo > BigRational::one() {
        log2_bounds_rational(&r_lo).0
    } else {
        BigRational::zero()
    };
    (lo, log2_bounds_rational(&r_hi).1)
}

/// Bracket on `2^8 / delta * (log2(log2 Q / log2 q) + log2(1 / delta))`.
pub fn sigma_bound_bracket(delta: &BigRational, q: u64, q_max: u64) -> Result<(BigRational, BigRational)> {
    if !delta.is_positive() || *delta >= BigRational::one() {
        return Err(Error::BadDelta(crate::certified::rational_to_string(delta)));
    }
    if q < 2 || q_max <= q {
        return Err(Error::BadRange { q0: q, q_max });
    }
    let (ll_lo, ll_hi) = log_log_ratio(q, q_max);
    let (ld_lo, ld_hi) = log2_bounds_rational(&delta.recip());
    let scale = BigRational::from_integer(BigInt::from(256)) / delta;
    Ok((&scale * (ll_lo + ld_lo), scale * (ll_hi + ld_hi)))
}

/// Upper evaluation of the closed-form bound on `sigma`.
pub fn sigma_bound(delta: &BigRational, q: u64, q_max: u64) -> Result<BigRational> {
    Ok(sigma_bound_bracket(delta, q, q_max)?.1)
}

pub fn sum_report(alpha: &AlphaField, delta: &BigRational, q: u64, q_max: u64) -> Result<SumBoundReport> {
    let (sigma_lo, sigma_hi) = sigma(alpha, q, q_max)?;
    let (bound_lo, bound) = sigma_bound_bracket(delta, q, q_max)?;
    Ok(SumBoundReport {
        q,
        q_max,
        ratio: (&sigma_hi / &bound).to_f64().unwrap_or(f64::NAN),
        holds: sigma_hi <= bound_lo,
        sigma_lo,
        sigma_hi,
        bound,
        bound_lo,
    })
}

/// `mu_index(x)` for `x` in `[1, 2^(nu_max + 1))`; entry 0 is unused.
#[derive(Clone, Debug)]
pub struct MuTable {
    nu_max: u32,
    mu: Vec<u32>,
}

impl MuTable {
    pub fn new(alpha: &AlphaField, nu_max: u32) -> Result<Self> {
        if nu_max > 30 {
            return Err(Error::Config(format!("nu = {nu_max} is beyond the counting range")));
        }
        let n = 1u64 << (nu_max + 1);
        let mut mu: Vec<u32> = (0..n).into_par_iter().map(|x| if x == 0 { 0 } else { alpha.mu_index(x) }).collect();
        mu[0] = u32::MAX;
        Ok(Self { nu_max, mu })
    }

    pub fn nu_max(&self) -> u32 {
        self.nu_max
    }

    /// `card A_{mu,nu}`.
    pub fn count_a(&self, mu: u32, nu: u32) -> u64 {
        let (s, e) = (1usize << nu, 1usize << (nu + 1));
        self.mu[s..e].iter().filter(|&&m| m == mu).count() as u64
    }

    /// Integer points of `Omega_{mu,nu}`, the origin included.
    pub fn count_i(&self, mu: u32, nu: u32) -> u64 {
        let e = 1usize << (nu + 1);
        self.mu[..e].iter().filter(|&&m| m >= mu).count() as u64
    }
}

/// `card A_{mu,nu}` by direct scan.
pub fn count_a(alpha: &AlphaField, mu: u32, nu: u32) -> u64 {
    ((1u64 << nu)..(1u64 << (nu + 1)))
        .into_par_iter()
        .filter(|&x| alpha.mu_index(x) == mu)
        .count() as u64
}

/// Integer points `(x, y)` with `0 <= x < 2^(nu+1)` and `|x alpha - y| <= 2^-mu`.
pub fn count_i(alpha: &AlphaField, mu: u32, nu: u32) -> u64 {
    1 + (1..(1u64 << (nu + 1)))
        .into_par_iter()
        .filter(|&x| alpha.mu_index(x) >= mu)
        .count() as u64
}

/// `ceil(log2(1 / delta))`.
pub fn ceil_log2_inv(delta: &BigRational) -> u32 {
    let inv = delta.recip();
    let f = crate::certified::floor_log2_rational(&inv);
    let c = if crate::certified::exact_log2_rational(&inv).is_some() { f } else { f + 1 };
    c.max(0) as u32
}

/// Largest `mu` for which `A_{mu,nu}` can be nonempty.
pub fn mu_max(delta: &BigRational, nu: u32) -> u32 {
    nu + 1 + ceil_log2_inv(delta)
}

/// `2^(nu - mu + 4) / delta`.
pub fn count_bound(delta: &BigRational, mu: u32, nu: u32) -> BigRational {
    pow2_rational(nu as i64 - mu as i64 + 4) / delta
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountReport {
    pub mu: u32,
    pub nu: u32,
    pub card_a: u64,
    pub count_i: u64,
    #[serde(with = "rational_serde")]
    pub bound: BigRational,
    pub ok: bool,
}

/// Rows for every `nu <= nu_max` and `1 <= mu <= mu_max(delta, nu)`.
pub fn count_table(table: &MuTable, delta: &BigRational, nu_max: u32) -> Vec<CountReport> {
    let mut out = Vec::new();
    for nu in 0..=nu_max.min(table.nu_max()) {
        for mu in 1..=mu_max(delta, nu) {
            let card_a = table.count_a(mu, nu);
            let count_i = table.count_i(mu, nu);
            let bound = count_bound(delta, mu, nu);
            let ok = card_a <= count_i && BigRational::from_integer(BigInt::from(count_i)) <= bound;
            out.push(CountReport {
                mu,
                nu,
                card_a,
                count_i,
                bound,
                ok,
            });
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionReport {
    pub nu: u32,
    pub mu_max: u32,
    /// `x` values in no `A_{mu,nu}` with `mu <= mu_max`.
    pub uncovered: Vec<u64>,
    /// `x` values in more than one.
    pub repeated: Vec<u64>,
    pub sizes: Vec<u64>,
}

impl PartitionReport {
    pub fn ok(&self) -> bool {
        self.uncovered.is_empty() && self.repeated.is_empty()
    }
}

/// Checks membership of each `x` in `[2^nu, 2^(nu+1))` against every
/// `A_{mu,nu}` by two exact comparisons per `mu`.
pub fn partition_check(alpha: &AlphaField, delta: &BigRational, nu: u32) -> PartitionReport {
    let top = mu_max(delta, nu);
    let hits: Vec<(u64, Vec<u32>)> = ((1u64 << nu)..(1u64 << (nu + 1)))
        .into_par_iter()
        .map(|x| {
            let ms = (1..=top)
                .filter(|&mu| !alpha.norm_below_pow2(x, mu + 1) && alpha.norm_below_pow2(x, mu))
                .collect();
            (x, ms)
        })
        .collect();
    let mut sizes = vec![0u64; top as usize];
    let mut uncovered = Vec::new();
    let mut repeated = Vec::new();
    for (x, ms) in hits {
        match ms.len() {
            0 => uncovered.push(x),
            1 => sizes[ms[0] as usize - 1] += 1,
            _ => repeated.push(x),
        }
    }
    PartitionReport {
        nu,
        mu_max: top,
        uncovered,
        repeated,
        sizes,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatticeCase {
    /// Only the origin.
    Empty,
    /// All points on one line through the origin, generated by `(p0, a0)`.
    Collinear { p0: u64, a0: i64 },
    /// Nondegenerate hull; `area2` is twice its area.
    Polygon { area2: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeRegion {
    pub mu: u32,
    pub nu: u32,
    pub points: Vec<(u64, i64)>,
    pub hull: Vec<(u64, i64)>,
    pub case: LatticeCase,
    #[serde(with = "rational_serde")]
    pub mes_omega: BigRational,
    #[serde(with = "rational_serde")]
    pub bound: BigRational,
    /// Bound of the collinear case, `2^(nu - mu + 2) / delta`.
    #[serde(with = "rational_serde")]
    pub collinear_bound: BigRational,
    /// `I / mes Pi` when the hull is nondegenerate.
    pub pick_ratio: Option<f64>,
    /// Smallest positive abscissa, checked against `delta 2^mu`.
    pub min_p0: Option<u64>,
    pub min_p0_ok: bool,
    pub ok: bool,
}

impl LatticeRegion {
    pub fn count(&self) -> u64 {
        self.points.len() as u64
    }
}

/// `mes Omega` from the shoelace formula on its four corners; `alpha` cancels.
pub fn omega_measure(alpha_approx: &BigRational, mu: u32, nu: u32) -> BigRational {
    let x = BigRational::from_integer(BigInt::one() << (nu + 1));
    let h = pow2_rational(-(mu as i64));
    let corners = [
        (BigRational::zero(), -h.clone()),
        (x.clone(), &x * alpha_approx - &h),
        (x.clone(), &x * alpha_approx + &h),
        (BigRational::zero(), h),
    ];
    let mut twice = BigRational::zero();
    for i in 0..4 {
        let (a, b) = (&corners[i], &corners[(i + 1) % 4]);
        twice += &a.0 * &b.1 - &b.0 * &a.1;
    }
    twice.abs() / BigRational::from_integer(BigInt::from(2))
}

fn cross(o: (u64, i64), a: (u64, i64), b: (u64, i64)) -> i128 {
    let (ox, oy) = (o.0 as i128, o.1 as i128);
    (a.0 as i128 - ox) * (b.1 as i128 - oy) - (a.1 as i128 - oy) * (b.0 as i128 - ox)
}

/// Convex hull by monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[(u64, i64)]) -> Vec<(u64, i64)> {
    let mut pts = points.to_vec();
    pts.sort();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(u64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(u64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Twice the area of a simple polygon.
pub fn shoelace2(poly: &[(u64, i64)]) -> u64 {
    let n = poly.len();
    if n < 3 {
        return 0;
    }
    let mut s: i128 = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.0 as i128 * b.1 as i128 - b.0 as i128 * a.1 as i128;
    }
    s.unsigned_abs() as u64
}

/// Enumerates the integer points of `Omega`, classifies the hull, and checks
/// the count against `2^(nu - mu + 4) / delta`.
pub fn pick_check(alpha: &AlphaField, delta: &BigRational, mu: u32, nu: u32) -> Result<LatticeRegion> {
    if mu == 0 || nu > 24 {
        return Err(Error::Config(format!("pick check needs mu >= 1 and nu <= 24, got mu = {mu}, nu = {nu}")));
    }
    let mut points: Vec<(u64, i64)> = vec![(0, 0)];
    let xs: Vec<u64> = (1..(1u64 << (nu + 1)))
        .into_par_iter()
        .filter(|&x| alpha.norm_below_pow2(x, mu))
        .collect();
    for x in xs {
        let y = alpha.nearest_integer(x).to_i64().expect("y fits");
        points.push((x, y));
    }
    let hull = convex_hull(&points);
    let area2 = shoelace2(&hull);
    let case = if points.len() == 1 {
        LatticeCase::Empty
    } else if area2 == 0 {
        let (p0, a0) = points[1];
        let g = num_integer::gcd(p0, a0.unsigned_abs());
        LatticeCase::Collinear {
            p0: p0 / g,
            a0: a0 / g as i64,
        }
    } else {
        LatticeCase::Polygon { area2 }
    };
    let count = points.len() as u64;
    let bound = count_bound(delta, mu, nu);
    let collinear_bound = pow2_rational(nu as i64 - mu as i64 + 2) / delta;
    let n = BigRational::from_integer(BigInt::from(count));
    let ok = match &case {
        LatticeCase::Empty => true,
        LatticeCase::Collinear { .. } => n <= collinear_bound && n <= bound,
        LatticeCase::Polygon { .. } => n <= bound,
    };
    let pick_ratio = (area2 > 0).then(|| 2.0 * count as f64 / area2 as f64);
    let min_p0 = points.get(1).map(|p| p.0);
    let min_p0_ok = min_p0.is_none_or(|p| {
        BigRational::from_integer(BigInt::from(p)) >= delta * BigRational::from_integer(BigInt::one() << mu)
    });
    Ok(LatticeRegion {
        mu,
        nu,
        points,
        hull,
        case,
        mes_omega: pow2_rational(nu as i64 - mu as i64 + 2),
        bound,
        collinear_bound,
        pick_ratio,
        min_p0,
        min_p0_ok,
        ok,
    })
}
