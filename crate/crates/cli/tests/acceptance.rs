//! Acceptance suite: one PASS/FAIL line per criterion.

use badapprox::alpha::{AlphaField, QuadraticReal};
use badapprox::bounds::{self, LatticeCase, MuTable};
use badapprox::certified::{pow2_rational, rational_from_str, rational_to_string};
use badapprox::certify::Certificate;
use badapprox::danger::DangerParams;
use badapprox::dyadic::{dyadic_cover, DyadicInterval, DyadicUnion, RatInterval};
use badapprox::engine::{choose_epsilon, choose_q0, pp_sample, Mode, Strategy, Survivor};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_badapprox");

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn field(a: QuadraticReal) -> AlphaField {
    AlphaField::new(a).unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn badapprox")
}

struct Flagship {
    dir: PathBuf,
    cert: PathBuf,
    trace: PathBuf,
    elapsed: Duration,
    code: Option<i32>,
}

fn flagship(dir: &Path) -> Flagship {
    let cert = dir.join("flagship.json");
    let trace = dir.join("flagship.csv");
    let t = Instant::now();
    let out = run(&[
        "construct",
        "--alpha",
        "golden",
        "--epsilon-log2",
        "-6",
        "--q0",
        "16",
        "--Q",
        "4096",
        "--bits",
        "64",
        "--mode",
        "ledger",
        "--out",
        cert.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    Flagship {
        dir: dir.to_path_buf(),
        cert,
        trace,
        elapsed: t.elapsed(),
        code: out.status.code(),
    }
}

fn criterion_1() -> String {
    let t = Instant::now();
    let mut pairs = 0u64;
    let mut worst = 0f64;
    let mut cases = [0u64; 3];
    for alpha in [QuadraticReal::golden(), QuadraticReal::sqrt2_minus_one()] {
        let f = field(alpha.clone());
        let delta = f.badness_delta(1000).unwrap().delta;
        let table = MuTable::new(&f, 16).unwrap();
        for nu in 0..=16u32 {
            for mu in 1..=bounds::mu_max(&delta, nu) {
                let r = bounds::pick_check(&f, &delta, mu, nu).unwrap();
                assert_eq!(r.count(), table.count_i(mu, nu), "alpha={alpha} mu={mu} nu={nu}");
                assert!(table.count_a(mu, nu) <= r.count());
                assert!(r.ok && r.min_p0_ok, "alpha={alpha} mu={mu} nu={nu}: I={}", r.count());
                let i = BigRational::from_integer(BigInt::from(r.count()));
                worst = worst.max((i / &r.bound).to_f64().unwrap());
                cases[match r.case {
                    LatticeCase::Empty => 0,
                    LatticeCase::Collinear { .. } => 1,
                    LatticeCase::Polygon { .. } => 2,
                }] += 1;
                pairs += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 120.0, "took {secs:.1}s");
    format!(
        "{pairs} (mu, nu) pairs, 0 failures, max I/bound {worst:.3}, cases empty/collinear/polygon {}/{}/{}, {secs:.1}s",
        cases[0], cases[1], cases[2]
    )
}

fn criterion_2() -> String {
    let t = Instant::now();
    let f = field(QuadraticReal::golden());
    let delta = f.badness_delta(1000).unwrap().delta;
    let mut parts = Vec::new();
    for (q, qm) in [(10u64, 1000u64), (100, 10_000), (10, 1_000_000), (2, 1024)] {
        let r = bounds::sum_report(&f, &delta, q, qm).unwrap();
        assert!(r.holds, "sigma({q},{qm}) = {} exceeds {}", r.sigma_hi.to_f64().unwrap(), r.bound_lo.to_f64().unwrap());
        let width = ((&r.sigma_hi - &r.sigma_lo) / &r.sigma_hi).to_f64().unwrap();
        assert!(width <= 2f64.powi(-32));
        parts.push(format!("({q},{qm}) ratio {:.2e}", r.ratio));
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 120.0, "took {secs:.1}s");
    format!("{}; {secs:.1}s", parts.join(", "))
}

fn criterion_3() -> String {
    let mut n = 0;
    for alpha in [QuadraticReal::golden(), QuadraticReal::sqrt2_minus_one()] {
        let f = field(alpha.clone());
        let delta = f.badness_delta(1000).unwrap().delta;
        for nu in 0..=12u32 {
            let p = bounds::partition_check(&f, &delta, nu);
            assert!(p.ok(), "alpha={alpha} nu={nu}: uncovered {:?} repeated {:?}", p.uncovered, p.repeated);
            assert_eq!(p.sizes.iter().sum::<u64>(), 1 << nu);
            n += 1;
        }
    }
    format!("{n} partitions exact (two alphas, nu <= 12)")
}

/// Cell-set model at level `l`: closed dyadic intervals as sets of level-`l` cells.
struct Bitmap {
    l: u32,
    cells: Vec<bool>,
}

impl Bitmap {
    fn new(l: u32) -> Self {
        Self {
            l,
            cells: vec![false; 1 << l],
        }
    }

    fn range(&self, iv: &DyadicInterval<u64>) -> std::ops::Range<usize> {
        let sh = self.l - iv.level();
        let s = (*iv.a() << sh) as usize;
        s..s + (1usize << sh)
    }

    fn set(&mut self, iv: &DyadicInterval<u64>, v: bool) {
        for i in self.range(iv) {
            self.cells[i] = v;
        }
    }

    fn measure(&self) -> BigRational {
        BigRational::new(BigInt::from(self.cells.iter().filter(|&&b| b).count()), BigInt::one() << self.l)
    }

    fn of(u: &DyadicUnion<u64>, l: u32) -> Self {
        let mut b = Self::new(l);
        for iv in u.intervals() {
            b.set(&iv, true);
        }
        b
    }
}

fn random_intervals(rng: &mut ChaCha8Rng, l: u32, n: usize) -> Vec<DyadicInterval<u64>> {
    (0..n)
        .map(|_| {
            let lv = rng.gen_range(0..=l);
            DyadicInterval::new(rng.gen_range(0..1u64 << lv), lv).unwrap()
        })
        .collect()
}

fn criterion_4() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut counts = [0u32; 3];
    for _ in 0..10_000 {
        let l = rng.gen_range(1..=16u32);
        match rng.gen_range(0..3) {
            0 => {
                let k = rng.gen_range(1..12);
                let u = DyadicUnion::from_intervals(0, random_intervals(&mut rng, l, k)).unwrap();
                let n = rng.gen_range(0..12);
                let c = random_intervals(&mut rng, l, n);
                let mut model = Bitmap::of(&u, l);
                let inter = u.intersection_measure(&c).unwrap();
                let diff = u.subtract(&c).unwrap();
                for iv in &c {
                    model.set(iv, false);
                }
                assert_eq!(Bitmap::of(&diff, l).cells, model.cells);
                assert_eq!(diff.measure(), model.measure());
                assert_eq!(&diff.measure() + &inter, u.measure());
                assert_eq!(diff.subtract(&c).unwrap(), diff);
                assert!(diff.is_subset_of(&u));
                counts[0] += 1;
            }
            1 => {
                let k = rng.gen_range(0..16);
                let ivs = random_intervals(&mut rng, l, k);
                let u = DyadicUnion::from_intervals(0, ivs.clone()).unwrap();
                let mut model = Bitmap::new(l);
                for iv in &ivs {
                    model.set(iv, true);
                }
                assert_eq!(u.measure(), model.measure());
                assert_eq!(u.is_empty(), model.measure().is_zero());
                if let Ok(left) = u.leftmost() {
                    let first = model.cells.iter().position(|&b| b).unwrap();
                    assert_eq!(Bitmap::new(l).range(&left).start, first);
                }
                counts[1] += 1;
            }
            _ => {
                let den = rng.gen_range(1..5000i64);
                let a = rng.gen_range(0..=den);
                let b = rng.gen_range(a..=den.min(a + den / 8 + 1));
                let iv = RatInterval::new(rat(a, den), rat(b, den)).unwrap();
                let cover = dyadic_cover::<u64>(&iv, l).unwrap();
                // contiguous, contains the interval, and neither end cell can be dropped
                let cell = pow2_rational(-(l as i64));
                let first = cover.first().unwrap();
                let last = cover.last().unwrap();
                assert!(first.lo() <= iv.lo && last.hi() >= iv.hi);
                for w in cover.windows(2) {
                    assert_eq!(*w[0].a() + 1, *w[1].a());
                }
                if cover.len() > 1 {
                    assert!(first.hi() > iv.lo && last.lo() < iv.hi);
                }
                let bound = iv.length() + &cell * BigRational::from_integer(2.into());
                assert!(BigRational::from_integer(BigInt::from(cover.len())) * &cell <= bound);
                counts[2] += 1;
            }
        }
    }
    format!(
        "10000 operations (subtract {}, measure {}, cover {}) agree with the cell model",
        counts[0], counts[1], counts[2]
    )
}

fn read_trace(p: &Path) -> Vec<(u64, BigRational, u64)> {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,measure_num,measure_den,intervals_in_B"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let m = BigRational::new(f[1].parse().unwrap(), f[2].parse().unwrap());
            (f[0].parse().unwrap(), m, f[3].parse().unwrap())
        })
        .collect()
}

fn criterion_5(fl: &Flagship) -> String {
    assert_eq!(fl.code, Some(0), "construct exit code");
    let rows = read_trace(&fl.trace);
    assert_eq!(rows.len(), 4096 - 16 + 1);
    assert_eq!(rows.last().unwrap().0, 4096);
    assert!(rows.last().unwrap().1 > BigRational::zero(), "B_Q empty");
    assert!(rows.windows(2).all(|w| w[1].1 <= w[0].1), "trace increases");
    let t = Instant::now();
    let out = run(&["verify", fl.cert.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let total = fl.elapsed + t.elapsed();
    let cert = Certificate::from_json(&std::fs::read_to_string(&fl.cert).unwrap()).unwrap();
    let threshold = pow2_rational(-6) * (BigRational::one() - pow2_rational(-16));
    assert!(cert.verified_min >= threshold);
    assert!(cert.certified);
    assert_eq!(cert.beta.bits, 64);
    assert!(total < Duration::from_secs(600));
    // the same configuration with a huge eps must end with exit code 1, not silently
    let dead = run(&["construct", "--epsilon-log2", "-1", "--q0", "2", "--Q", "100", "--out", fl.dir.join("dead.json").to_str().unwrap()]);
    assert_eq!(dead.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&dead.stderr).contains("extinct"));
    format!(
        "mes B_4096 = {:.6}, verified_min = {:.6} >= 2^-6 (at q = {}), construct+verify {:.1}s",
        rows.last().unwrap().1.to_f64().unwrap(),
        cert.verified_min.to_f64().unwrap(),
        cert.min_q,
        total.as_secs_f64()
    )
}

fn criterion_6(fl: &Flagship) -> String {
    let cert = Certificate::from_json(&std::fs::read_to_string(&fl.cert).unwrap()).unwrap();
    let e = cert.epochs.first().expect("epoch report");
    assert_eq!((e.q1, e.q2), (16, 4096));
    let rows = read_trace(&fl.trace);
    assert_eq!(e.measure_q1, rows[0].1);
    assert_eq!(e.measure_q2, rows.last().unwrap().1);
    assert!(e.ratio_21 >= rat(1, 2));
    assert!(e.certified);
    format!("mes B_4096 / mes B_16 = {} (~{:.6})", rational_to_string(&e.ratio_21), e.ratio_21.to_f64().unwrap())
}

/// f64 scan over all `q < q0` for the rule `q^3 > 2^(l+1)`.
fn q0_scan(eps_log2: i32, limit: u64) -> Option<u64> {
    (2..limit).find(|&q| {
        let qf = q as f64;
        let l = (2.0 * qf.log2() + 2.0 * qf.log2().log2()).floor() - eps_log2 as f64;
        3.0 * qf.log2() > l + 1.0
    })
}

fn criterion_7(dir: &Path) -> String {
    let f = field(QuadraticReal::golden());
    let delta = f.badness_delta(1000).unwrap().delta;
    assert_eq!(delta, rat(1, 3));
    let eps = choose_epsilon(&delta).unwrap();
    assert_eq!(eps, -17);
    assert_eq!(choose_epsilon(&rat(1, 2)).unwrap(), -17);
    let q0 = choose_q0(eps).unwrap();
    let scanned = q0_scan(eps, q0 + 1);
    assert_eq!(scanned, Some(q0), "formula path and scan disagree");
    let out = run(&["construct", "--paper-constants", "--Q", "4096", "--out", dir.join("pc.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["q0"].as_u64(), Some(q0));
    assert_eq!(report["epsilon_log2"].as_i64(), Some(-17));
    assert_eq!(report["feasible"].as_bool(), Some(false));
    format!(
        "eps = 2^{eps}, q0 = {q0} (2^{:.2}; matches a full scan of q < q0), CLI exit 2 with report",
        (q0 as f64).log2()
    )
}

fn criterion_8() -> String {
    let f = Arc::new(field(QuadraticReal::golden()));
    let params = DangerParams::new(f, -5, 16, 32).unwrap();
    let mut ledger = Survivor::<u64>::init(params.clone(), Mode::Ledger, Strategy::Leftmost).unwrap();
    ledger.run_to(512).unwrap();
    let mut parts = Vec::new();
    for strategy in [Strategy::Leftmost, Strategy::MaxMargin] {
        let mut g = Survivor::<u64>::init(params.clone(), Mode::Greedy, strategy).unwrap();
        g.run_to(512).unwrap();
        assert!(ledger.survivors().contains(g.tracked()), "{strategy}");
        parts.push(format!("{strategy}: level {}", g.tracked().level()));
    }
    format!("greedy intervals inside ledger B_512 ({})", parts.join(", "))
}

fn criterion_9(fl: &Flagship) -> String {
    let text = std::fs::read_to_string(&fl.cert).unwrap();
    let ok = run(&["verify", fl.cert.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let bits = doc["beta"]["bits"].as_u64().unwrap() as u32;
    let lo = rational_from_str(doc["beta"]["beta_lo"].as_str().unwrap()).unwrap();
    let n = (lo * BigRational::from_integer(BigInt::one() << bits)).to_integer().to_biguint().unwrap();
    let mut hit = None;
    for k in 1..=bits {
        // flip the bit worth 2^-k
        let m = &n ^ (BigUint::one() << (bits - k));
        let mut t = doc.clone();
        t["beta"]["beta_lo"] = rational_to_string(&BigRational::new(BigInt::from(m), BigInt::one() << bits)).into();
        let p = fl.dir.join(format!("tampered_{k}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&t).unwrap()).unwrap();
        let out = run(&["verify", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "bit {k}");
        let err = String::from_utf8_lossy(&out.stderr).to_string();
        if hit.is_none() {
            if let Some(q) = err.lines().find_map(|l| l.strip_prefix("violation at q = ")) {
                hit = Some((k, q.trim().to_string()));
            }
        }
    }
    let (k, q) = hit.expect("no single-bit flip produced a violating q");
    format!("all {bits} single-bit flips exit 1; flipping the 2^-{k} bit is caught at q = {q}")
}

fn criterion_10(fl: &Flagship) -> String {
    let cert = Certificate::from_json(&std::fs::read_to_string(&fl.cert).unwrap()).unwrap();
    assert!(cert.pp.violations.is_empty(), "violations at {:?}", cert.pp.violations);
    // a range where x > 2^(l+1) holds for B_16
    let f = Arc::new(field(QuadraticReal::golden()));
    let params = DangerParams::new(f, -6, 16, 32).unwrap();
    let s = Survivor::<u64>::init(params, Mode::Ledger, Strategy::Leftmost).unwrap();
    let l = s.max_level();
    let start = (1u64 << (l + 1)) + 1;
    let mut worst = 0f64;
    for x in start..start + 1000 {
        let p = pp_sample(s.params(), s.survivors(), l, x).unwrap();
        assert!(p.hypothesis);
        assert!(p.holds(), "x={x} ratio {}", p.ratio());
        worst = worst.max(p.ratio());
    }
    format!(
        "flagship: {} eligible steps, 0 violations (worst ratio {:.3}); B_16 (l = {l}) vs x in [{start}, {}]: 1000 steps, 0 violations (worst ratio {worst:.3})",
        cert.pp.eligible,
        cert.pp.worst_ratio,
        start + 999
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let fl = flagship(dir.path());
    let checks: Vec<(u32, &str, Box<dyn Fn() -> String>)> = vec![
        (1, "count bound, exhaustive nu <= 16", Box::new(criterion_1)),
        (2, "sum bound", Box::new(criterion_2)),
        (3, "partition, nu <= 12", Box::new(criterion_3)),
        (4, "set algebra vs cell model", Box::new(criterion_4)),
        (5, "flagship construction", Box::new(|| criterion_5(&fl))),
        (6, "ladder ratio", Box::new(|| criterion_6(&fl))),
        (7, "derived constants", Box::new(|| criterion_7(dir.path()))),
        (8, "greedy inside ledger", Box::new(criterion_8)),
        (9, "verifier soundness", Box::new(|| criterion_9(&fl))),
        (10, "per-step removal bound", Box::new(|| criterion_10(&fl))),
    ];
    let mut failed = 0;
    for (n, name, check) in checks {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {n:>2} FAIL  {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
