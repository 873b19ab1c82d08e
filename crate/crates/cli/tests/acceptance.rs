//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kantab::commands::{self, BenchConfig};
use kantab::ChainFile;
use kantab_core::control::{ControlledSystem, StudyConfig};
use kantab_core::dynsys::benchmark_system;
use kantab_core::oracle::{
    check_lemma_blockflow, check_lemma_diagonal, enumerate_distribution, exact_kantorovich, telescoping_increment,
};
use kantab_core::refine::{behavior_equivalence_check, refine, RefinementConfig, StopReason};
use kantab_core::{kant_metric, Alphabet, LabeledMarkovChain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0x5eed;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Random chain; about a third of the transitions are zero so some words are unreachable.
fn random_chain(rng: &mut ChaCha8Rng, states: usize, k: usize) -> LabeledMarkovChain {
    let dist = |rng: &mut ChaCha8Rng| {
        let mut w: Vec<f64> = (0..states)
            .map(|_| if rng.gen_bool(0.35) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        let i = rng.gen_range(0..states);
        w[i] += 0.1;
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let initial = dist(rng);
    let rows = (0..states).map(|_| dist(rng)).collect();
    let labels = (0..states).map(|_| rng.gen_range(0..k)).collect();
    LabeledMarkovChain::new_validated(rows, initial, labels, Alphabet::numeric(k)).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng, max_states: usize, k: usize) -> (LabeledMarkovChain, LabeledMarkovChain) {
    let s1 = rng.gen_range(1..=max_states);
    let s2 = rng.gen_range(1..=max_states);
    (random_chain(rng, s1, k), random_chain(rng, s2, k))
}

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn fig2() -> Outcome {
    let start = Instant::now();
    let left = ChainFile::load(&fixture("fig2_left.json")).map_err(|e| e.to_string())?;
    let right = ChainFile::load(&fixture("fig2_right.json")).map_err(|e| e.to_string())?;
    let value = kant_metric(&left, &right, 2).map_err(|e| e.to_string())?.value;
    let p = enumerate_distribution(&left, 2).unwrap();
    let q = enumerate_distribution(&right, 2).unwrap();
    let (exact, _) = exact_kantorovich(&p, &q).unwrap();
    within(start.elapsed(), Duration::from_secs(1))?;
    check(
        value == 0.125 && (exact - 0.125).abs() <= 1e-12,
        format!("K = {value}, oracle = {exact}"),
        format!("K = {value}, oracle = {exact}, expected 0.125"),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let pairs = 120;
    for i in 0..pairs {
        let k = 1 + i % 3;
        let n = 1 + (i / 3) % 5;
        let (a, b) = random_pair(&mut rng, 4, k);
        let fast = kant_metric(&a, &b, n).unwrap().value;
        let p = enumerate_distribution(&a, n).unwrap();
        let q = enumerate_distribution(&b, n).unwrap();
        let (exact, _) = exact_kantorovich(&p, &q).unwrap();
        worst = worst.max((fast - exact).abs());
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    check(
        worst <= 1e-9,
        format!("{pairs} pairs, max gap {worst:.2e}"),
        format!("max gap {worst:.2e} exceeds 1e-9"),
    )
}

fn sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let pairs = 50;
    for i in 0..pairs {
        let (a, b) = random_pair(&mut rng, 3, 2);
        let k: Vec<f64> = (1..=11).map(|n| kant_metric(&a, &b, n).unwrap().value).collect();
        for n in 1..=10 {
            let step = k[n] - k[n - 1];
            let cap = 0.5f64.powi(n as i32 + 1);
            if step < -1e-12 || step > cap + 1e-12 {
                return Err(format!("pair {i}, n = {n}: K_(n+1) - K_n = {step:e}, cap {cap:e}"));
            }
        }
        let k20 = kant_metric(&a, &b, 20).unwrap().value;
        if k[9] + 0.5f64.powi(10) < k20 - 1e-12 {
            return Err(format!("pair {i}: K_10 + 2^-10 = {} < K_20 = {k20}", k[9] + 0.5f64.powi(10)));
        }
    }
    Ok(format!("{pairs} pairs, n = 1..10, bracket holds at n = 20"))
}

fn lemmas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut couplings = 0;
    let mut violations = 0;
    while couplings < 60 {
        let k = 2 + couplings % 2;
        let n = 1 + couplings % if k == 2 { 6 } else { 4 };
        let (a, b) = random_pair(&mut rng, 4, k);
        let (p, q) = (enumerate_distribution(&a, n).unwrap(), enumerate_distribution(&b, n).unwrap());
        let (pn, qn) = (enumerate_distribution(&a, n + 1).unwrap(), enumerate_distribution(&b, n + 1).unwrap());
        let (_, coupling) = exact_kantorovich(&pn, &qn).unwrap();
        violations += check_lemma_diagonal(&coupling).violations.len();
        violations += check_lemma_blockflow(&coupling, &p, &q).unwrap().violations.len();
        couplings += 1;
    }
    check(
        violations == 0,
        format!("{couplings} optimal couplings, no violations at 1e-8"),
        format!("{violations} violations over {couplings} couplings"),
    )
}

fn increment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let instances = 36;
    let mut worst = 0.0f64;
    for i in 0..instances {
        let k = 2 + i % 2;
        let n = 1 + i % if k == 2 { 6 } else { 4 };
        let (a, b) = random_pair(&mut rng, 4, k);
        let (p, q) = (enumerate_distribution(&a, n).unwrap(), enumerate_distribution(&b, n).unwrap());
        let (pn, qn) = (enumerate_distribution(&a, n + 1).unwrap(), enumerate_distribution(&b, n + 1).unwrap());
        let (lo, _) = exact_kantorovich(&p, &q).unwrap();
        let (hi, _) = exact_kantorovich(&pn, &qn).unwrap();
        let term = telescoping_increment(&p, &q, &pn, &qn).unwrap();
        worst = worst.max((hi - lo - term).abs());
    }
    check(
        worst <= 1e-8,
        format!("{instances} instances, max deviation {worst:.2e}"),
        format!("max deviation {worst:.2e} exceeds 1e-8"),
    )
}

fn table1() -> Outcome {
    let start = Instant::now();
    let (_, trace) = refine(&benchmark_system(), &RefinementConfig::default()).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(30))?;
    let seq: Vec<String> = trace
        .iterations
        .iter()
        .map(|r| format!("{{{}}}", r.partition.join(",")))
        .collect();
    let expected = ["{0,1}", "{0,10,11}", "{0,10,110,111}", "{0,10,110,1110,1111}"];
    check(
        seq == expected && trace.stop == StopReason::Deterministic && trace.stop_iteration() == 3,
        format!("{}, deterministic at iteration 3", seq.join(" -> ")),
        format!("{}, stop {:?} at {}", seq.join(" -> "), trace.stop, trace.stop_iteration()),
    )
}

fn behavior() -> Outcome {
    let sys = benchmark_system();
    let (abs, _) = refine(&sys, &RefinementConfig::default()).map_err(|e| e.to_string())?;
    let report = behavior_equivalence_check(&sys, &abs, 10, 100_000, SEED).map_err(|e| e.to_string())?;
    check(
        report.is_clean(),
        format!(
            "horizon 10, 1e5 samples, {} observed words, {} supported, 0 failures",
            report.distinct_observed, report.support_size
        ),
        format!("{} failures: {:?} {:?}", report.failures(), report.unsupported, report.unobserved),
    )
}

fn table3() -> Outcome {
    let start = Instant::now();
    let mut config = StudyConfig::default();
    config.evaluation.seed = SEED;
    let study = commands::control(&ControlledSystem::benchmark(), &config).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(600))?;
    let column: Vec<String> = study
        .rows
        .iter()
        .map(|r| format!("{:.3}±{:.3}", r.reward.mean, r.reward.std_error))
        .collect();
    check(
        study.monotone && study.rows.len() == 4,
        format!("rewards {}", column.join(", ")),
        format!("not non-decreasing within 2 pooled SE: {}", column.join(", ")),
    )
}

fn scaling() -> Outcome {
    let report = commands::bench(&BenchConfig {
        max_horizon: 12,
        sizes: vec![2, 3],
        seed: SEED,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for f in &report.fits {
        if f.slope.is_nan() || f.slope > f.limit {
            return Err(format!("|A|={}: slope {:.4} > {:.4}", f.alphabet_size, f.slope, f.limit));
        }
        notes.push(format!("|A|={} slope {:.4} <= {:.4}", f.alphabet_size, f.slope, f.limit));
    }
    let binary = report.fits.iter().find(|f| f.alphabet_size == 2).unwrap();
    check(
        binary.oracle_guard_from.is_some_and(|n| n <= 8),
        format!("{}; oracle guarded from n = 8 at |A| = 2", notes.join(", ")),
        format!("oracle guard for |A| = 2 first hit at {:?}", binary.oracle_guard_from),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("two-step fixture distance", fig2),
        ("recursion vs exact transport", oracle_equivalence),
        ("horizon sandwich", sandwich),
        ("coupling structure", lemmas),
        ("telescoping increment", increment),
        ("refinement sequence", table1),
        ("behavior audit", behavior),
        ("closed-loop reward monotonicity", table3),
        ("work scaling", scaling),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("[PASS] #{} {name}: {msg} ({secs:.2}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] #{} {name}: {msg} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
