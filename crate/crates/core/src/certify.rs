//! Run configuration, the end-to-end pipeline, certificates, and the
//! verifier for `q log2(q)^2 ||alpha q|| ||beta q||`.
//!
//! [`verify_pair`] works from `alpha`, `beta` and the range only; it does not
//! look at survivor sets or danger covers.

use crate::alpha::{AlphaField, AlphaRecord, BadnessCertificate, QuadraticReal};
use crate::certified::{log2_bounds, pow2_rational, rational_serde, LOG2_FRAC_BITS};
use crate::danger::{DangerParams, DEFAULT_LOG_PRECISION_BITS};
use crate::engine::{choose_epsilon, choose_q0, BetaWitness, EpochReport, Mode, PpStats, Strategy, Survivor, TraceRow};
use crate::error::{Error, Result};
use crate::index::DyadicIndex;
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

pub const SCHEMA_VERSION: u32 = 1;
const NORM_PRECISION: u32 = 60;

fn default_log_precision() -> u32 {
    DEFAULT_LOG_PRECISION_BITS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: AlphaRecord,
    pub epsilon_log2: i32,
    pub q0: u64,
    #[serde(rename = "Q")]
    pub q_max: u64,
    pub mode: Mode,
    pub strategy: Strategy,
    pub bits: u32,
    pub scan_limit: u64,
    pub paper_constants: bool,
    #[serde(default = "default_log_precision")]
    pub log_precision_bits: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: AlphaRecord::from(&QuadraticReal::golden()),
            epsilon_log2: -6,
            q0: 16,
            q_max: 4096,
            mode: Mode::Ledger,
            strategy: Strategy::Leftmost,
            bits: 64,
            scan_limit: 1000,
            paper_constants: false,
            log_precision_bits: DEFAULT_LOG_PRECISION_BITS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q0 < 2 || self.q_max < self.q0 {
            return Err(Error::BadRange {
                q0: self.q0,
                q_max: self.q_max,
            });
        }
        if self.bits < 16 {
            return Err(Error::Config(format!("bits must be at least 16, got {}", self.bits)));
        }
        if self.epsilon_log2 >= 0 {
            return Err(Error::BadEpsilon(self.epsilon_log2));
        }
        if self.scan_limit == 0 {
            return Err(Error::ZeroIndex);
        }
        QuadraticReal::try_from(&self.alpha)?;
        Ok(())
    }

    pub fn alpha(&self) -> Result<QuadraticReal> {
        QuadraticReal::try_from(&self.alpha)
    }

    /// `eps (1 - 2^-16)`, the acceptance threshold for `verified_min`.
    pub fn threshold(&self) -> BigRational {
        pow2_rational(self.epsilon_log2 as i64) * (BigRational::one() - pow2_rational(-16))
    }

    /// Upper estimate of the largest cover level over `x <= Q`.
    pub fn level_estimate(&self) -> u32 {
        let q = self.q_max.max(2) as f64;
        let l = (q * q * q.log2().powi(2)).log2() - self.epsilon_log2 as f64;
        l.ceil() as u32 + 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    #[serde(with = "rational_serde")]
    pub min: BigRational,
    pub argmin: u64,
}

/// Certified lower bound on `min_{q0 <= q <= Q} q log2(q)^2 ||alpha q|| ||beta q||`
/// over every `beta` in `[n / 2^bits, (n + 1) / 2^bits]`.
pub fn verify_pair(alpha: &AlphaField, beta_num: &BigUint, bits: u32, q0: u64, q_max: u64) -> Result<VerifyReport> {
    if q0 < 2 || q_max < q0 {
        return Err(Error::BadRange { q0, q_max });
    }
    let w = BigUint::one() << bits;
    if *beta_num >= w {
        return Err(Error::OutOfRange(format!("{beta_num}/2^{bits}")));
    }
    let lower = |q: u64| -> Result<BigRational> {
        // q beta ranges over [qn, qn + q] / 2^bits
        let lo = beta_num * q;
        let (k, r) = lo.div_mod_floor(&w);
        let right = (&k + 1u32) * &w;
        let hi = &lo + q;
        if r.is_zero() || hi >= right {
            return Err(Error::BetaHitsRational { q });
        }
        let gap = r.min(right - hi);
        let d = alpha.norm_lower(q, NORM_PRECISION);
        let lb = log2_bounds(q).lo;
        let num = BigUint::from(q) * BigUint::from(lb) * BigUint::from(lb) * BigUint::from(d.mantissa) * gap;
        let den_bits = 2 * LOG2_FRAC_BITS + d.shift + bits;
        Ok(BigRational::new(BigInt::from(num), BigInt::one() << den_bits))
    };
    let best = (q0..=q_max)
        .into_par_iter()
        .map(|q| lower(q).map(|v| (v, q)))
        .try_reduce_with(|a, b| Ok(if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }));
    match best {
        Some(Ok((min, argmin))) => Ok(VerifyReport { min, argmin }),
        Some(Err(Error::BetaHitsRational { .. })) | None => {
            // report the smallest offending q deterministically
            let q = (q0..=q_max).find(|&q| lower(q).is_err()).unwrap_or(q0);
            Err(Error::BetaHitsRational { q })
        }
        Some(Err(e)) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rows: u64,
    pub first: TraceRow,
    pub last: TraceRow,
    pub non_increasing: bool,
    pub max_intervals: u64,
}

impl TraceSummary {
    pub fn of(rows: &[TraceRow]) -> Option<Self> {
        Some(Self {
            rows: rows.len() as u64,
            first: rows.first()?.clone(),
            last: rows.last()?.clone(),
            non_increasing: rows.windows(2).all(|w| w[1].measure <= w[0].measure),
            max_intervals: rows.iter().map(|r| r.intervals).max()?,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub delta: BadnessCertificate,
    pub trace: TraceSummary,
    pub pp: PpStats,
    pub epochs: Vec<EpochReport>,
    pub beta: BetaWitness,
    #[serde(with = "rational_serde")]
    pub verified_min: BigRational,
    pub min_q: u64,
    pub certified: bool,
    pub created_unix: u64,
    pub content_hash: String,
}

impl Certificate {
    /// SHA-256 of the JSON body with `created_unix` and `content_hash` blanked.
    pub fn compute_hash(&self) -> Result<String> {
        let mut body = self.clone();
        body.created_unix = 0;
        body.content_hash = String::new();
        let bytes = serde_json::to_vec(&body)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn seal(&mut self) -> Result<()> {
        self.content_hash = self.compute_hash()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PaperConstants {
    #[serde(with = "rational_serde")]
    pub delta: BigRational,
    pub epsilon_log2: i32,
    pub q0: u64,
    #[serde(rename = "Q")]
    pub q_max: u64,
    pub feasible: bool,
}

pub fn paper_constants(delta: &BigRational, q_max: u64) -> Result<PaperConstants> {
    let epsilon_log2 = choose_epsilon(delta)?;
    let q0 = choose_q0(epsilon_log2)?;
    Ok(PaperConstants {
        delta: delta.clone(),
        epsilon_log2,
        q0,
        q_max,
        feasible: q0 <= q_max,
    })
}

#[derive(Debug)]
pub enum Construction {
    Done { certificate: Box<Certificate>, trace: Vec<TraceRow> },
    Extinct { x: u64, trace: Vec<TraceRow> },
    Infeasible(PaperConstants),
}

/// Runs the whole pipeline for `cfg`.
pub fn construct(cfg: &RunConfig) -> Result<Construction> {
    cfg.validate()?;
    let field = Arc::new(AlphaField::new(cfg.alpha()?)?);
    let delta = field.badness_delta(cfg.scan_limit)?;
    let mut cfg = cfg.clone();
    if cfg.paper_constants {
        let pc = paper_constants(&delta.delta, cfg.q_max)?;
        if !pc.feasible {
            return Ok(Construction::Infeasible(pc));
        }
        cfg.epsilon_log2 = pc.epsilon_log2;
        cfg.q0 = pc.q0;
    }
    let level = cfg.level_estimate();
    if level <= u64::MAX_LEVEL {
        run::<u64>(&cfg, field, delta)
    } else if level <= u128::MAX_LEVEL {
        run::<u128>(&cfg, field, delta)
    } else {
        run::<BigUint>(&cfg, field, delta)
    }
}

fn run<A: DyadicIndex>(cfg: &RunConfig, field: Arc<AlphaField>, delta: BadnessCertificate) -> Result<Construction> {
    let params = DangerParams::new(field.clone(), cfg.epsilon_log2, cfg.q0, cfg.log_precision_bits)?;
    let mut s = Survivor::<A>::new(params, cfg.mode, cfg.strategy)?;
    match s.run_to(cfg.q_max) {
        Ok(()) => {}
        Err(Error::Extinct { x }) => {
            return Ok(Construction::Extinct {
                x,
                trace: s.trace().to_vec(),
            })
        }
        Err(e) => return Err(e),
    }
    let mut epochs = Vec::new();
    if cfg.mode == Mode::Ledger {
        if let Some(q2) = cfg.q0.checked_pow(3).filter(|&q| q <= cfg.q_max) {
            debug_assert!(q2 <= s.x());
            epochs.push(s.ladder_check(cfg.q0)?);
        }
    }
    let beta = match cfg.mode {
        Mode::Ledger => s.extract_beta(cfg.bits)?,
        Mode::Greedy => greedy_beta(&s, cfg.bits)?,
    };
    let report = verify_pair(&field, &beta.numerator(), cfg.bits, cfg.q0, cfg.q_max)?;
    let trace = s.trace().to_vec();
    let mut certificate = Certificate {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        delta,
        trace: TraceSummary::of(&trace).expect("init records a row"),
        pp: s.pp_stats().clone(),
        epochs,
        beta,
        certified: report.min >= cfg.threshold(),
        verified_min: report.min,
        min_q: report.argmin,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        content_hash: String::new(),
    };
    certificate.seal()?;
    Ok(Construction::Done {
        certificate: Box::new(certificate),
        trace,
    })
}

fn greedy_beta<A: DyadicIndex>(s: &Survivor<A>, bits: u32) -> Result<BetaWitness> {
    let mut w = s.extract_beta(bits)?;
    // prepend the greedy chain above the tracked interval
    let mut chain: Vec<_> = s
        .chain()
        .iter()
        .take(s.chain().len().saturating_sub(1))
        .map(|c| crate::dyadic::DyadicInterval::new(c.a().to_biguint(), c.level()))
        .collect::<Result<_>>()?;
    chain.append(&mut w.chain);
    w.chain = chain;
    Ok(w)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyCheck {
    pub hash_ok: bool,
    #[serde(with = "crate::certified::opt_rational_serde")]
    pub recomputed_min: Option<BigRational>,
    pub min_matches: bool,
    /// `q` at which the bound drops below the threshold.
    pub violation: Option<u64>,
    pub passed: bool,
}

/// Re-checks a certificate from `alpha`, `beta_lo`, `bits` and the range.
pub fn verify_certificate(cert: &Certificate) -> Result<VerifyCheck> {
    let cfg = &cert.config;
    let field = AlphaField::new(cfg.alpha()?)?;
    let bits = cert.beta.bits;
    let scaled = &cert.beta.beta_lo * BigRational::from_integer(BigInt::one() << bits);
    if !scaled.is_integer() || scaled.is_negative() {
        return Err(Error::Config(format!("beta_lo is not a multiple of 2^-{bits}")));
    }
    let num = scaled.to_integer().to_biguint().expect("non-negative");
    let hash_ok = cert.compute_hash()? == cert.content_hash;
    let (recomputed_min, violation) = match verify_pair(&field, &num, bits, cfg.q0, cfg.q_max) {
        Ok(r) => {
            let bad = (r.min < cfg.threshold()).then_some(r.argmin);
            (Some(r.min), bad)
        }
        Err(Error::BetaHitsRational { q }) => (Some(BigRational::zero()), Some(q)),
        Err(e) => return Err(e),
    };
    let min_matches = recomputed_min.as_ref() == Some(&cert.verified_min);
    Ok(VerifyCheck {
        passed: hash_ok && min_matches && violation.is_none(),
        hash_ok,
        recomputed_min,
        min_matches,
        violation,
    })
}
