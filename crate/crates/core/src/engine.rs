//! Survivor sets `B_q`: the removal fold over `x = q0..=Q`, the measure
//! ledger, the epoch ladder and the extraction of `beta`.

use crate::certified::{
    exact_log2_rational, floor_log2_rational, log2_bounds, log2_bounds_rational, opt_rational_serde,
    rational_serde, LOG2_FRAC_BITS,
};
use crate::danger::{self, DangerParams, DangerSet};
use crate::dyadic::{DyadicInterval, DyadicUnion};
use crate::error::{Error, Result};
use crate::index::DyadicIndex;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ledger,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Leftmost,
    MaxMargin,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ledger" => Ok(Mode::Ledger),
            "greedy" => Ok(Mode::Greedy),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leftmost" => Ok(Strategy::Leftmost),
            "max-margin" => Ok(Strategy::MaxMargin),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ledger => "ledger",
            Mode::Greedy => "greedy",
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Leftmost => "leftmost",
            Strategy::MaxMargin => "max-margin",
        })
    }
}

/// Largest `k` with `2^14 * 2^k * log2(3 / delta) <= 1/2`, using an upper
/// bound on the logarithm. Returns `k`, so `eps = 2^k`.
pub fn choose_epsilon(delta: &BigRational) -> Result<i32> {
    if !delta.is_positive() || *delta >= BigRational::one() {
        return Err(Error::BadDelta(crate::certified::rational_to_string(delta)));
    }
    let arg = BigRational::from_integer(BigInt::from(3)) / delta;
    let (_, hi) = log2_bounds_rational(&arg);
    // k + 15 + log2(hi) <= 0
    let ceil_log = match exact_log2_rational(&hi) {
        Some(j) => j,
        None => floor_log2_rational(&hi) + 1,
    };
    Ok((-15 - ceil_log) as i32)
}

/// `l(q) = floor(log2(q^2 log2(q)^2 / eps))`, or `None` when the 56-bit
/// logarithm bracket straddles an integer.
pub fn paper_level(eps_log2: i32, q: u64) -> Option<i64> {
    if q < 2 {
        return None;
    }
    let b = log2_bounds(q);
    let q2 = BigUint::from(q) * q;
    let fl = |m: u128| -> i64 {
        let v = &q2 * BigUint::from(m) * BigUint::from(m);
        v.bits() as i64 - 1 - 2 * LOG2_FRAC_BITS as i64
    };
    let (lo, hi) = (fl(b.lo), fl(b.hi));
    (lo == hi).then_some(lo - eps_log2 as i64)
}

/// `q^3 > 2^(l(q) + 1)`.
pub fn q0_condition(eps_log2: i32, q: u64) -> Result<bool> {
    let l = paper_level(eps_log2, q).ok_or_else(|| Error::Config(format!("level of q = {q} is not resolved")))?;
    let cube = BigUint::from(q).pow(3);
    Ok(l + 1 < 0 || cube > BigUint::one() << (l + 1) as u64)
}

/// Smallest `q >= 2` satisfying [`q0_condition`]. The condition is not monotone
/// in `q` because of the floor, so the search walks the levels in order.
pub fn choose_q0(eps_log2: i32) -> Result<u64> {
    if eps_log2 >= 0 {
        return Err(Error::BadEpsilon(eps_log2));
    }
    let lvl = |q: u64| paper_level(eps_log2, q).ok_or_else(|| Error::Config(format!("level of q = {q} is not resolved")));
    const LIMIT: u64 = 1 << 62;
    let mut start = 2u64;
    let mut l = lvl(start)?;
    loop {
        // last q with level l
        let (mut lo, mut hi) = (start, LIMIT);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if lvl(mid)? <= l {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let end = lo;
        // smallest q with q^3 > 2^(l+1)
        let c = if l + 1 < 0 {
            2
        } else {
            (BigUint::one() << (l + 1) as u64).cbrt().to_u64().unwrap_or(u64::MAX).saturating_add(1)
        };
        let cand = c.max(start);
        if cand <= end {
            return Ok(cand);
        }
        if end >= LIMIT {
            return Err(Error::Config("no q0 below 2^62".into()));
        }
        start = end + 1;
        l = lvl(start)?;
    }
}

/// One row of the measure trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub x: u64,
    #[serde(with = "rational_serde")]
    pub measure: BigRational,
    pub intervals: u64,
}

/// Per-step check of `removed <= 16 x r(x) mes(B before)`, applied when
/// `x > 2^(l+1)` for the running maximum level `l`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PpStats {
    pub eligible: u64,
    pub violations: Vec<u64>,
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpSample {
    pub x: u64,
    pub hypothesis: bool,
    #[serde(with = "rational_serde")]
    pub removed: BigRational,
    #[serde(with = "rational_serde")]
    pub bound: BigRational,
}

impl PpSample {
    pub fn holds(&self) -> bool {
        self.removed <= self.bound
    }

    pub fn ratio(&self) -> f64 {
        if self.bound.is_zero() {
            return 0.0;
        }
        (&self.removed / &self.bound).to_f64().unwrap_or(f64::NAN)
    }
}

/// Measure of `B ∩ A(x)` against `16 eps mes B / (||alpha x|| x log2(x)^2)`, without modifying `B`.
pub fn pp_sample<A: DyadicIndex>(params: &DangerParams, b: &DyadicUnion<A>, max_level: u32, x: u64) -> Result<PpSample> {
    let set = danger::build::<A>(params, x)?;
    let removed = b.intersection_measure(set.cover())?;
    Ok(pp_from_parts(params, x, max_level, removed, &b.measure()))
}

/// The bound is rounded down: `||alpha x||` and `log2 x` are replaced by upper brackets.
fn pp_from_parts(params: &DangerParams, x: u64, max_level: u32, removed: BigRational, before: &BigRational) -> PpSample {
    let hypothesis = max_level + 1 < 64 && x > 1u64 << (max_level + 1);
    let norm = params.alpha().norm_upper(x, 64).to_rational();
    let log = log2_bounds(x).hi_rational();
    let denom = norm * BigRational::from_integer(BigInt::from(x)) * &log * &log;
    let bound = BigRational::from_integer(BigInt::from(16u64)) * params.epsilon() * before / denom;
    PpSample {
        x,
        hypothesis,
        removed,
        bound,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub q1: u64,
    pub q2: u64,
    pub q3: Option<u64>,
    #[serde(with = "rational_serde")]
    pub measure_q1: BigRational,
    #[serde(with = "rational_serde")]
    pub measure_q2: BigRational,
    #[serde(with = "opt_rational_serde")]
    pub measure_q3: Option<BigRational>,
    #[serde(with = "rational_serde")]
    pub ratio_21: BigRational,
    #[serde(with = "opt_rational_serde")]
    pub ratio_32: Option<BigRational>,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetaWitness {
    pub chain: Vec<DyadicInterval<BigUint>>,
    #[serde(with = "rational_serde")]
    pub beta_lo: BigRational,
    #[serde(with = "rational_serde")]
    pub beta_hi: BigRational,
    pub bits: u32,
    /// First level chosen by convention rather than forced by the survivors.
    pub unconstrained_from: Option<u32>,
}

impl BetaWitness {
    /// `beta_lo = a / 2^bits`.
    pub fn numerator(&self) -> BigUint {
        self.chain.last().map(|c| c.a().clone()).unwrap_or_default()
    }
}

fn witness_from<A: DyadicIndex>(piece: &DyadicInterval<A>, bits: u32) -> Result<BetaWitness> {
    let lp = piece.level();
    if bits < lp {
        return Err(Error::InsufficientBits {
            requested: bits,
            level: lp,
        });
    }
    let mut cur = DyadicInterval::new(piece.a().to_biguint(), lp)?;
    let mut chain = vec![cur.clone()];
    while cur.level() < bits {
        cur = cur.left_child();
        chain.push(cur.clone());
    }
    Ok(BetaWitness {
        beta_lo: cur.lo(),
        beta_hi: cur.hi(),
        chain,
        bits,
        unconstrained_from: (bits > lp).then_some(lp + 1),
    })
}

/// Danger sets prefetched per batch.
const PREFETCH: usize = 32;

/// State of the removal fold after processing `q0..=x`.
#[derive(Clone, Debug)]
pub struct Survivor<A> {
    params: DangerParams,
    mode: Mode,
    strategy: Strategy,
    x: u64,
    b: DyadicUnion<A>,
    tracked: DyadicInterval<A>,
    chain: Vec<DyadicInterval<A>>,
    max_level: u32,
    trace: Vec<TraceRow>,
    pp: PpStats,
}

impl<A: DyadicIndex> Survivor<A> {
    /// `B_{q0} = [0, 1] \ A(q0)`.
    pub fn init(params: DangerParams, mode: Mode, strategy: Strategy) -> Result<Self> {
        let mut s = Self::new(params, mode, strategy)?;
        s.step()?;
        Ok(s)
    }

    /// `[0, 1]` before any removal; the first step processes `q0`.
    pub fn new(params: DangerParams, mode: Mode, strategy: Strategy) -> Result<Self> {
        let q0 = params.q0();
        Ok(Self {
            params,
            mode,
            strategy,
            x: q0 - 1,
            b: DyadicUnion::unit(0)?,
            tracked: DyadicInterval::unit(),
            chain: vec![DyadicInterval::unit()],
            max_level: 0,
            trace: Vec::new(),
            pp: PpStats::default(),
        })
    }

    pub fn params(&self) -> &DangerParams {
        &self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Last processed `x`.
    pub fn x(&self) -> u64 {
        self.x
    }

    /// `B_x` (ledger mode); in greedy mode only the tracked interval.
    pub fn survivors(&self) -> &DyadicUnion<A> {
        &self.b
    }

    pub fn tracked(&self) -> &DyadicInterval<A> {
        &self.tracked
    }

    /// Greedy chain of tracked intervals, coarsest first.
    pub fn chain(&self) -> &[DyadicInterval<A>] {
        &self.chain
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn pp_stats(&self) -> &PpStats {
        &self.pp
    }

    pub fn measure(&self) -> BigRational {
        match self.mode {
            Mode::Ledger => self.b.measure(),
            Mode::Greedy => self.tracked.measure(),
        }
    }

    pub fn measure_at(&self, q: u64) -> Option<&BigRational> {
        let i = q.checked_sub(self.params.q0())? as usize;
        self.trace.get(i).map(|r| &r.measure)
    }

    pub fn step(&mut self) -> Result<()> {
        let x = self.x + 1;
        let set = match self.mode {
            Mode::Ledger => danger::build::<A>(&self.params, x)?,
            Mode::Greedy => danger::build_window::<A>(&self.params, x, &self.tracked)?,
        };
        self.apply(set)
    }

    /// Processes every `x` up to `q`, building danger sets in parallel batches.
    pub fn run_to(&mut self, q: u64) -> Result<()> {
        while self.x < q {
            if self.mode == Mode::Greedy {
                self.step()?;
                continue;
            }
            let hi = q.min(self.x + PREFETCH as u64);
            let sets: Vec<Result<DangerSet<A>>> = ((self.x + 1)..=hi)
                .into_par_iter()
                .map(|x| danger::build::<A>(&self.params, x))
                .collect();
            for set in sets {
                self.apply(set?)?;
            }
        }
        Ok(())
    }

    fn apply(&mut self, set: DangerSet<A>) -> Result<()> {
        let x = set.x();
        debug_assert_eq!(x, self.x + 1);
        match self.mode {
            Mode::Ledger => self.apply_ledger(set)?,
            Mode::Greedy => self.apply_greedy(set)?,
        }
        self.x = x;
        let intervals = match self.mode {
            Mode::Ledger => self.b.interval_count(),
            Mode::Greedy => u64::from(!self.b.is_empty()),
        };
        self.trace.push(TraceRow {
            x,
            measure: self.measure(),
            intervals,
        });
        if self.b.is_empty() {
            return Err(Error::Extinct { x });
        }
        Ok(())
    }

    fn apply_ledger(&mut self, set: DangerSet<A>) -> Result<()> {
        let before = self.b.measure();
        let removed = self.b.subtract_in_place(set.cover())?;
        let removed = BigRational::new(
            BigInt::from(removed.to_biguint()),
            BigInt::one() << self.b.resolution(),
        );
        let s = pp_from_parts(&self.params, set.x(), self.max_level, removed, &before);
        if s.hypothesis {
            self.pp.eligible += 1;
            self.pp.worst_ratio = self.pp.worst_ratio.max(s.ratio());
            if !s.holds() {
                self.pp.violations.push(s.x);
            }
        }
        self.max_level = self.max_level.max(set.level());
        Ok(())
    }

    fn apply_greedy(&mut self, set: DangerSet<A>) -> Result<()> {
        self.max_level = self.max_level.max(set.level());
        let j = self.tracked.clone();
        let mut here = DyadicUnion::from_intervals(j.level(), [j.clone()])?;
        let removed = here.subtract_in_place(set.cover())?;
        if removed.is_zero() {
            return Ok(());
        }
        if here.is_empty() {
            self.b = here;
            return Ok(());
        }
        let pick = match self.strategy {
            Strategy::Leftmost => largest_leftmost(&here),
            Strategy::MaxMargin => max_margin(&here, &j, set.cover()),
        };
        self.b = DyadicUnion::from_intervals(pick.level(), [pick.clone()])?;
        self.chain.push(pick.clone());
        self.tracked = pick;
        Ok(())
    }

    /// Certifies the ladder `q1 -> q1^3 (-> q1^9)` on the recorded measures.
    pub fn ladder_check(&self, q1: u64) -> Result<EpochReport> {
        let q2 = q1.checked_pow(3).ok_or(Error::NotReached(u64::MAX))?;
        let m1 = self.measure_at(q1).ok_or(Error::NotReached(q1))?.clone();
        let m2 = self.measure_at(q2).ok_or(Error::NotReached(q2))?.clone();
        let q3 = q2.checked_pow(3).filter(|&q| q <= self.x);
        let m3 = q3.and_then(|q| self.measure_at(q)).cloned();
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let ratio = |a: &BigRational, b: &BigRational| {
            if b.is_zero() {
                BigRational::zero()
            } else {
                a / b
            }
        };
        let r21 = ratio(&m2, &m1);
        let r32 = m3.as_ref().map(|m| ratio(m, &m2));
        let certified = r21 >= half && r32.as_ref().is_none_or(|r| *r >= half);
        Ok(EpochReport {
            q1,
            q2,
            q3,
            measure_q1: m1,
            measure_q2: m2,
            measure_q3: m3,
            ratio_21: r21,
            ratio_32: r32,
            certified,
        })
    }

    /// Leftmost point of the survivors, widened to a `2^-bits` interval.
    pub fn extract_beta(&self, bits: u32) -> Result<BetaWitness> {
        let piece = self.b.leftmost()?;
        witness_from(&piece, bits)
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        write_trace_csv(&self.trace, w)
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "measure_num", "measure_den", "intervals_in_B"])?;
    for r in rows {
        out.write_record([
            r.x.to_string(),
            r.measure.numer().to_string(),
            r.measure.denom().to_string(),
            r.intervals.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn largest_leftmost<A: DyadicIndex>(u: &DyadicUnion<A>) -> DyadicInterval<A> {
    let pieces = u.intervals();
    let top = pieces.iter().map(|p| p.level()).min().expect("nonempty");
    pieces.into_iter().find(|p| p.level() == top).expect("nonempty")
}

/// Piece whose midpoint is farthest from the removed cells and the edges of `j`.
fn max_margin<A: DyadicIndex>(u: &DyadicUnion<A>, j: &DyadicInterval<A>, cover: &[DyadicInterval<A>]) -> DyadicInterval<A> {
    let res = u.resolution();
    let (js, je) = j.span(res);
    let mut walls: Vec<(BigUint, BigUint)> = vec![
        (js.to_biguint(), js.to_biguint()),
        (je.to_biguint(), je.to_biguint()),
    ];
    for c in cover {
        let (s, e) = if c.level() <= res {
            c.span(res)
        } else {
            (c.a().clone() >> (c.level() - res), (c.a().clone() >> (c.level() - res)) + A::one())
        };
        walls.push((s.to_biguint(), e.to_biguint()));
    }
    let mut best: Option<(BigUint, DyadicInterval<A>)> = None;
    for p in u.intervals() {
        let (s, e) = p.span(res);
        let mid2 = s.to_biguint() + e.to_biguint();
        let margin = walls
            .iter()
            .map(|(ws, we)| {
                let (ws, we) = (ws << 1u32, we << 1u32);
                if mid2 < ws {
                    &ws - &mid2
                } else if mid2 > we {
                    &mid2 - &we
                } else {
                    BigUint::zero()
                }
            })
            .min()
            .expect("walls nonempty");
        if best.as_ref().is_none_or(|(m, _)| margin > *m) {
            best = Some((margin, p));
        }
    }
    best.expect("nonempty").1
}
