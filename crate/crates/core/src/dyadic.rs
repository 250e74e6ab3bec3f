//! Exact set algebra on finite unions of closed dyadic intervals.
//!
//! A [`DyadicUnion`] stores maximal runs `[u, v]` whose endpoints are
//! numerators over `2^res`; the canonical decomposition into maximal dyadic
//! intervals is produced on demand. Removing a closed cover keeps the closure
//! of what is left, so boundary points shared with a removed interval are
//! treated as removed.

use crate::certified::{ceil_rational, floor_rational, rational_serde};
use crate::error::{Error, Result};
use crate::index::DyadicIndex;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ops::Bound;

/// `[a / 2^l, (a + 1) / 2^l]` with `0 <= a < 2^l`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DyadicInterval<A> {
    a: A,
    l: u32,
}

impl<A: DyadicIndex> DyadicInterval<A> {
    pub fn new(a: A, l: u32) -> Result<Self> {
        if l > A::MAX_LEVEL {
            return Err(Error::LevelOverflow {
                level: l,
                max: A::MAX_LEVEL,
            });
        }
        if a >= A::pow2(l) {
            return Err(Error::InvalidInterval {
                lo: format!("{a}/2^{l}"),
                hi: format!("({a}+1)/2^{l}"),
            });
        }
        Ok(Self { a, l })
    }

    pub fn unit() -> Self {
        Self { a: A::zero(), l: 0 }
    }

    pub fn a(&self) -> &A {
        &self.a
    }

    pub fn level(&self) -> u32 {
        self.l
    }

    pub fn measure(&self) -> BigRational {
        BigRational::new(BigInt::one(), BigInt::one() << self.l)
    }

    pub fn lo(&self) -> BigRational {
        BigRational::new(BigInt::from(self.a.to_biguint()), BigInt::one() << self.l)
    }

    pub fn hi(&self) -> BigRational {
        BigRational::new(BigInt::from(self.a.to_biguint()) + 1, BigInt::one() << self.l)
    }

    pub fn left_child(&self) -> Self {
        Self {
            a: self.a.clone() << 1,
            l: self.l + 1,
        }
    }

    pub fn right_child(&self) -> Self {
        Self {
            a: (self.a.clone() << 1) + A::one(),
            l: self.l + 1,
        }
    }

    /// Numerator endpoints over `2^res`; requires `l <= res`.
    pub fn span(&self, res: u32) -> (A, A) {
        debug_assert!(self.l <= res);
        let sh = res - self.l;
        (self.a.clone() << sh, (self.a.clone() + A::one()) << sh)
    }

    pub fn contains(&self, other: &Self) -> bool {
        other.l >= self.l && (other.a.clone() >> (other.l - self.l)) == self.a
    }
}

impl<A: DyadicIndex> PartialOrd for DyadicInterval<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ordered by left endpoint, coarser first on ties.
impl<A: DyadicIndex> Ord for DyadicInterval<A> {
    fn cmp(&self, other: &Self) -> Ordering {
        let top = self.l.max(other.l);
        let x = self.a.to_biguint() << (top - self.l);
        let y = other.a.to_biguint() << (top - other.l);
        x.cmp(&y).then(self.l.cmp(&other.l))
    }
}

#[derive(Serialize, Deserialize)]
struct IntervalRecord {
    a: String,
    l: u32,
}

impl<A: DyadicIndex> Serialize for DyadicInterval<A> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        IntervalRecord {
            a: self.a.to_string(),
            l: self.l,
        }
        .serialize(s)
    }
}

impl<'de, A: DyadicIndex> Deserialize<'de> for DyadicInterval<A> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = IntervalRecord::deserialize(d)?;
        let a: A = r.a.parse().map_err(|_| D::Error::custom(format!("bad numerator {:?}", r.a)))?;
        DyadicInterval::new(a, r.l).map_err(D::Error::custom)
    }
}

/// Closed interval with exact rational endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatInterval {
    #[serde(with = "rational_serde")]
    pub lo: BigRational,
    #[serde(with = "rational_serde")]
    pub hi: BigRational,
}

impl RatInterval {
    pub fn new(lo: BigRational, hi: BigRational) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidInterval {
                lo: lo.to_string(),
                hi: hi.to_string(),
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn length(&self) -> BigRational {
        &self.hi - &self.lo
    }

    pub fn clip_unit(&self) -> Self {
        let zero = BigRational::zero();
        let one = BigRational::one();
        Self {
            lo: self.lo.clone().max(zero.clone()).min(one.clone()),
            hi: self.hi.clone().min(one).max(zero),
        }
    }
}

/// Level-`l` index range `[first, last]` of the minimal closed cover of `[lo, hi]`.
pub(crate) fn cover_range(lo: &BigRational, hi: &BigRational, l: u32) -> (BigInt, BigInt) {
    let scale = BigRational::from_integer(BigInt::one() << l);
    let first = floor_rational(&(lo * &scale));
    let last = ceil_rational(&(hi * &scale)) - BigInt::one();
    let top = (BigInt::one() << l) - BigInt::one();
    let first = first.min(top.clone());
    let last = last.max(first.clone()).min(top);
    (first, last)
}

/// Minimal set of level-`l` dyadic intervals whose union contains `interval`.
pub fn dyadic_cover<A: DyadicIndex>(interval: &RatInterval, l: u32) -> Result<Vec<DyadicInterval<A>>> {
    if interval.lo.is_negative() || interval.hi > BigRational::one() {
        return Err(Error::InvalidInterval {
            lo: interval.lo.to_string(),
            hi: interval.hi.to_string(),
        });
    }
    if l > A::MAX_LEVEL {
        return Err(Error::LevelOverflow {
            level: l,
            max: A::MAX_LEVEL,
        });
    }
    let (first, last) = cover_range(&interval.lo, &interval.hi, l);
    let mut out = Vec::new();
    let mut a = first;
    while a <= last {
        let idx = A::from_biguint(a.magnitude()).expect("index below 2^l");
        out.push(DyadicInterval { a: idx, l });
        a += 1;
    }
    Ok(out)
}

/// Sorted, disjoint union of closed dyadic intervals.
#[derive(Clone, Debug)]
pub struct DyadicUnion<A> {
    res: u32,
    runs: BTreeMap<A, A>,
    total: A,
    pieces: u64,
}

fn piece_count<A: DyadicIndex>(u: &A, v: &A, res: u32) -> u64 {
    let mut n = 0;
    for_each_piece(u, v, res, |_, _| n += 1);
    n
}

/// Canonical left-to-right decomposition of `[u, v]` into maximal dyadic pieces.
fn for_each_piece<A: DyadicIndex>(u: &A, v: &A, res: u32, mut f: impl FnMut(A, u32)) {
    let mut u = u.clone();
    while &u < v {
        let tz = u.trailing_zeros().unwrap_or(res).min(res);
        let len = v.clone() - u.clone();
        let k = tz.min(len.bit_length() - 1);
        f(u.clone() >> k, res - k);
        u = u + A::pow2(k);
    }
}

impl<A: DyadicIndex> DyadicUnion<A> {
    pub fn empty(res: u32) -> Result<Self> {
        if res > A::MAX_LEVEL {
            return Err(Error::LevelOverflow {
                level: res,
                max: A::MAX_LEVEL,
            });
        }
        Ok(Self {
            res,
            runs: BTreeMap::new(),
            total: A::zero(),
            pieces: 0,
        })
    }

    /// `[0, 1]`.
    pub fn unit(res: u32) -> Result<Self> {
        let mut u = Self::empty(res)?;
        u.insert_run(A::zero(), A::pow2(res));
        Ok(u)
    }

    pub fn from_intervals<I>(res: u32, intervals: I) -> Result<Self>
    where
        I: IntoIterator<Item = DyadicInterval<A>>,
    {
        let mut spans = Vec::new();
        let mut res = res;
        let ivs: Vec<_> = intervals.into_iter().collect();
        for iv in &ivs {
            res = res.max(iv.l);
        }
        let mut u = Self::empty(res)?;
        for iv in &ivs {
            spans.push(iv.span(res));
        }
        for (s, e) in merge_spans(spans) {
            u.insert_run(s, e);
        }
        Ok(u)
    }

    pub fn resolution(&self) -> u32 {
        self.res
    }

    /// Same set at a finer resolution.
    pub fn refined(&self, res: u32) -> Result<Self> {
        if res < self.res {
            return Err(Error::Config(format!(
                "cannot coarsen resolution {} to {res}",
                self.res
            )));
        }
        let mut out = Self::empty(res)?;
        let sh = res - self.res;
        for (s, e) in &self.runs {
            out.insert_run(s.clone() << sh, e.clone() << sh);
        }
        Ok(out)
    }

    fn insert_run(&mut self, s: A, e: A) {
        debug_assert!(s < e);
        self.pieces += piece_count(&s, &e, self.res);
        self.total = self.total.clone() + (e.clone() - s.clone());
        self.runs.insert(s, e);
    }

    fn remove_run(&mut self, s: &A) -> A {
        let e = self.runs.remove(s).expect("run present");
        self.pieces -= piece_count(s, &e, self.res);
        self.total = self.total.clone() - (e.clone() - s.clone());
        e
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Exact Lebesgue measure.
    pub fn measure(&self) -> BigRational {
        BigRational::new(BigInt::from(self.total.to_biguint()), BigInt::one() << self.res)
    }

    /// Measure numerator over `2^resolution()`.
    pub fn measure_numerator(&self) -> &A {
        &self.total
    }

    /// Number of maximal dyadic intervals in the canonical decomposition.
    pub fn interval_count(&self) -> u64 {
        self.pieces
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Maximal runs as numerator pairs over `2^resolution()`.
    pub fn runs(&self) -> impl Iterator<Item = (&A, &A)> {
        self.runs.iter()
    }

    /// Canonical decomposition, sorted by left endpoint.
    pub fn intervals(&self) -> Vec<DyadicInterval<A>> {
        let mut out = Vec::new();
        for (s, e) in &self.runs {
            for_each_piece(s, e, self.res, |a, l| out.push(DyadicInterval { a, l }));
        }
        out
    }

    pub fn leftmost(&self) -> Result<DyadicInterval<A>> {
        let (s, e) = self.runs.iter().next().ok_or(Error::EmptyUnion)?;
        let mut first = None;
        for_each_piece(s, e, self.res, |a, l| {
            if first.is_none() {
                first = Some(DyadicInterval { a, l });
            }
        });
        Ok(first.expect("runs have positive length"))
    }

    fn ensure_resolution(&mut self, level: u32) -> Result<()> {
        if level > self.res {
            *self = self.refined(level)?;
        }
        Ok(())
    }

    fn cover_spans(&mut self, cover: &[DyadicInterval<A>]) -> Result<Vec<(A, A)>> {
        let top = cover.iter().map(|c| c.l).max().unwrap_or(0);
        self.ensure_resolution(top)?;
        let res = self.res;
        Ok(merge_spans(cover.iter().map(|c| c.span(res)).collect()))
    }

    /// Removes `cover` in place and returns the removed measure numerator.
    pub fn subtract_in_place(&mut self, cover: &[DyadicInterval<A>]) -> Result<A> {
        let spans = self.cover_spans(cover)?;
        let mut removed = A::zero();
        for (cs, ce) in spans {
            removed = removed + self.remove_span(&cs, &ce);
        }
        Ok(removed)
    }

    /// Runs with positive-length overlap with `[cs, ce]`, in ascending order.
    fn overlapping(&self, cs: &A, ce: &A) -> Vec<(A, A)> {
        let mut hits = Vec::new();
        for (s, e) in self.runs.range((Bound::Unbounded, Bound::Excluded(ce.clone()))).rev() {
            if e <= cs {
                break;
            }
            hits.push((s.clone(), e.clone()));
        }
        hits.reverse();
        hits
    }

    fn remove_span(&mut self, cs: &A, ce: &A) -> A {
        let mut removed = A::zero();
        for (s, e) in self.overlapping(cs, ce) {
            self.remove_run(&s);
            let lo = if &s > cs { s.clone() } else { cs.clone() };
            let hi = if &e < ce { e.clone() } else { ce.clone() };
            removed = removed + (hi - lo);
            if &s < cs {
                self.insert_run(s, cs.clone());
            }
            if ce < &e {
                self.insert_run(ce.clone(), e);
            }
        }
        removed
    }

    /// Set difference `self \ (union of cover)`.
    pub fn subtract(&self, cover: &[DyadicInterval<A>]) -> Result<Self> {
        let mut out = self.clone();
        out.subtract_in_place(cover)?;
        Ok(out)
    }

    /// `measure(self ∩ union of cover)`, leaving `self` untouched.
    pub fn intersection_measure(&self, cover: &[DyadicInterval<A>]) -> Result<BigRational> {
        let top = cover.iter().map(|c| c.l).max().unwrap_or(0).max(self.res);
        let sh = top - self.res;
        let spans = merge_spans(cover.iter().map(|c| c.span(top)).collect());
        let mut acc = BigUint::zero();
        for (cs, ce) in spans {
            // compare at the finer resolution
            let (cs_c, ce_c) = (cs.clone() >> sh, ce.clone() >> sh);
            let ce_probe = if (ce_c.clone() << sh) == ce { ce_c } else { ce_c + A::one() };
            for (s, e) in self.overlapping(&cs_c, &ce_probe) {
                let (s, e) = (s << sh, e << sh);
                let lo = if s > cs { s } else { cs.clone() };
                let hi = if e < ce { e } else { ce.clone() };
                if lo < hi {
                    acc += (hi - lo).to_biguint();
                }
            }
        }
        Ok(BigRational::new(BigInt::from(acc), BigInt::one() << top))
    }

    /// `self ∩ interval` as a new union.
    pub fn restrict(&self, interval: &DyadicInterval<A>) -> Result<Self> {
        let res = self.res.max(interval.l);
        let me = if res > self.res { self.refined(res)? } else { self.clone() };
        let (cs, ce) = interval.span(res);
        let mut out = Self::empty(res)?;
        for (s, e) in me.overlapping(&cs, &ce) {
            let lo = if s > cs { s } else { cs.clone() };
            let hi = if e < ce { e } else { ce.clone() };
            out.insert_run(lo, hi);
        }
        Ok(out)
    }

    /// Whether `interval` lies inside the union.
    pub fn contains(&self, interval: &DyadicInterval<A>) -> bool {
        let top = self.res.max(interval.l);
        let (cs, ce) = interval.span(top);
        let sh = top - self.res;
        let key = cs.clone() >> sh;
        match self.runs.range(..=key).next_back() {
            Some((s, e)) => (s.clone() << sh) <= cs && ce <= (e.clone() << sh),
            None => false,
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.intervals().iter().all(|iv| other.contains(iv))
    }
}

/// Sort spans and merge those that overlap or touch.
fn merge_spans<A: DyadicIndex>(mut spans: Vec<(A, A)>) -> Vec<(A, A)> {
    spans.sort();
    let mut out: Vec<(A, A)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match out.last_mut() {
            Some(last) if s <= last.1 => {
                if e > last.1 {
                    last.1 = e;
                }
            }
            _ => out.push((s, e)),
        }
    }
    out
}

impl<A: DyadicIndex> PartialEq for DyadicUnion<A> {
    fn eq(&self, other: &Self) -> bool {
        self.intervals() == other.intervals()
    }
}

impl<A: DyadicIndex> Eq for DyadicUnion<A> {}
