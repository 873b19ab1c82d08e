use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kantab_core::control::{control_study, ControlStudy, ControlledSystem, StudyConfig};
use kantab_core::dynsys::PiecewiseAffineSystem;
use kantab_core::kantor::horizon_for_accuracy;
use kantab_core::oracle::{enumerate_distribution, exact_kantorovich};
use kantab_core::refine::{refine, RefinementConfig, RefinementTrace, StopReason};
use kantab_core::{kant_metric, Alphabet, Error, LabeledMarkovChain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, EXIT_BUDGET, EXIT_OK};
use crate::files::{ChainFile, SystemFile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonSpec {
    Epsilon(f64),
    Steps(usize),
}

impl HorizonSpec {
    pub fn resolve(self) -> Result<usize, CliError> {
        match self {
            Self::Epsilon(e) => Ok(horizon_for_accuracy(e)?),
            Self::Steps(0) => Err(Error::InvalidHorizon.into()),
            Self::Steps(n) => Ok(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub exact: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizon: usize,
    pub value: f64,
    /// `[value, value + 2^-n]`, the interval holding the chain metric.
    pub bracket: (f64, f64),
    pub nodes_expanded: usize,
    pub levels: Vec<f64>,
    pub oracle: Option<OracleCheck>,
}

impl MetricReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "horizon          {}", self.horizon).unwrap();
        writeln!(out, "K(p1^n, p2^n)    {}", self.value).unwrap();
        writeln!(out, "bracket          [{}, {}]", self.bracket.0, self.bracket.1).unwrap();
        writeln!(out, "nodes expanded   {}", self.nodes_expanded).unwrap();
        if let Some(o) = &self.oracle {
            writeln!(out, "exact transport  {}", o.exact).unwrap();
            writeln!(out, "absolute gap     {:e}", o.gap).unwrap();
        }
        out
    }
}

pub fn metric(
    c1: &LabeledMarkovChain,
    c2: &LabeledMarkovChain,
    horizon: HorizonSpec,
    with_oracle: bool,
) -> Result<MetricReport, CliError> {
    let n = horizon.resolve()?;
    let r = kant_metric(c1, c2, n)?;
    let oracle = if with_oracle {
        let (p, q) = (enumerate_distribution(c1, n)?, enumerate_distribution(c2, n)?);
        let (exact, _) = exact_kantorovich(&p, &q)?;
        Some(OracleCheck {
            exact,
            gap: (exact - r.value).abs(),
        })
    } else {
        None
    };
    Ok(MetricReport {
        horizon: n,
        value: r.value,
        bracket: (r.value, r.upper_bound),
        nodes_expanded: r.nodes_expanded,
        levels: r.levels,
        oracle,
    })
}

pub fn metric_files(a: &Path, b: &Path, horizon: HorizonSpec, with_oracle: bool) -> Result<MetricReport, CliError> {
    metric(&ChainFile::load(a)?, &ChainFile::load(b)?, horizon, with_oracle)
}

/// The compiled-in benchmark unless a system file is given.
pub fn load_controlled(system: Option<&Path>) -> Result<ControlledSystem<PiecewiseAffineSystem>, CliError> {
    match system {
        None => Ok(ControlledSystem::benchmark()),
        Some(p) => SystemFile::read(p)?.to_controlled().map_err(|e| e.in_file(p)),
    }
}

pub fn load_system(system: Option<&Path>) -> Result<PiecewiseAffineSystem, CliError> {
    match system {
        None => Ok(kantab_core::dynsys::benchmark_system()),
        Some(p) => SystemFile::read(p)?.to_system().map_err(|e| e.in_file(p)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub trace: RefinementTrace,
    /// Final abstraction, states named by their words.
    pub chain: ChainFile,
}

impl RefineOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.trace.stop {
            StopReason::Deterministic => EXIT_OK,
            StopReason::BudgetExhausted => EXIT_BUDGET,
        }
    }
}

pub fn refine_system(sys: &PiecewiseAffineSystem, config: &RefinementConfig) -> Result<RefineOutcome, CliError> {
    let (abs, trace) = refine(sys, config)?;
    let chain = ChainFile::from_chain(&abs.chain, Some(abs.state_names()));
    Ok(RefineOutcome { trace, chain })
}

pub fn control(
    csys: &ControlledSystem<PiecewiseAffineSystem>,
    config: &StudyConfig,
) -> Result<ControlStudy, CliError> {
    Ok(control_study(csys, config)?)
}

/// Random chain with strictly positive transitions and every symbol used.
pub fn random_chain<R: Rng>(rng: &mut R, states: usize, alphabet_size: usize) -> LabeledMarkovChain {
    assert!(states >= alphabet_size, "every symbol needs a state");
    let row = |rng: &mut R| {
        let w: Vec<f64> = (0..states).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let initial = row(rng);
    let rows = (0..states).map(|_| row(rng)).collect();
    let labels = (0..states).map(|i| i % alphabet_size).collect();
    LabeledMarkovChain::new(rows, initial, labels, Alphabet::numeric(alphabet_size)).expect("valid shapes")
}

/// `s0 -> s1 -> .. -> s0` with labels `i mod |A|`; one supported word per start state.
pub fn cyclic_chain(states: usize, alphabet_size: usize) -> LabeledMarkovChain {
    let rows = (0..states)
        .map(|i| {
            let mut r = vec![0.0; states];
            r[(i + 1) % states] = 1.0;
            r
        })
        .collect();
    let initial = vec![1.0 / states as f64; states];
    let labels = (0..states).map(|i| i % alphabet_size).collect();
    LabeledMarkovChain::new(rows, initial, labels, Alphabet::numeric(alphabet_size)).expect("valid shapes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub max_horizon: usize,
    pub sizes: Vec<usize>,
    pub states: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            max_horizon: 12,
            sizes: vec![2, 3],
            states: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum OracleCell {
    Solved { value: f64, gap: f64, millis: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub alphabet_size: usize,
    pub horizon: usize,
    pub nodes_expanded: usize,
    pub millis: f64,
    pub oracle: OracleCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub alphabet_size: usize,
    /// Least-squares slope of `ln(nodes_expanded)` against `n`.
    pub slope: f64,
    pub limit: f64,
    /// First horizon at which the oracle refused to run.
    pub oracle_guard_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningRow {
    pub alphabet_size: usize,
    pub horizon: usize,
    pub support: usize,
    pub nodes_expanded: usize,
    pub full_tree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub fits: Vec<SlopeFit>,
    pub pruning: Vec<PruningRow>,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn bench(config: &BenchConfig) -> Result<BenchReport, CliError> {
    if config.max_horizon == 0 || config.sizes.is_empty() {
        return Err(CliError::Validation("bench needs a positive horizon and at least one size".into()));
    }
    if let Some(&k) = config.sizes.iter().find(|&&k| k < 2 || k > config.states) {
        return Err(CliError::Validation(format!(
            "alphabet size {k} must lie in 2..={}",
            config.states
        )));
    }
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut pruning = Vec::new();
    for &k in &config.sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);
        let c1 = random_chain(&mut rng, config.states, k);
        let c2 = random_chain(&mut rng, config.states, k);
        let mut guard_from = None;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for n in 1..=config.max_horizon {
            let start = Instant::now();
            let r = kant_metric(&c1, &c2, n)?;
            let ms = millis(start);
            let start = Instant::now();
            let solved = enumerate_distribution(&c1, n)
                .and_then(|p| Ok((p, enumerate_distribution(&c2, n)?)))
                .and_then(|(p, q)| exact_kantorovich(&p, &q));
            let oracle = match solved {
                Ok((value, _)) => OracleCell::Solved {
                    value,
                    gap: (value - r.value).abs(),
                    millis: millis(start),
                },
                Err(e @ Error::SizeGuard { .. }) => {
                    guard_from.get_or_insert(n);
                    OracleCell::Skipped { reason: e.to_string() }
                }
                Err(e) => return Err(e.into()),
            };
            xs.push(n as f64);
            ys.push((r.nodes_expanded as f64).ln());
            rows.push(BenchRow {
                alphabet_size: k,
                horizon: n,
                nodes_expanded: r.nodes_expanded,
                millis: ms,
                oracle,
            });
        }
        fits.push(SlopeFit {
            alphabet_size: k,
            slope: if xs.len() > 1 { ls_slope(&xs, &ys) } else { f64::NAN },
            limit: (k as f64).ln() + 0.05,
            oracle_guard_from: guard_from,
        });

        let cyc = cyclic_chain(config.states, k);
        for n in 1..=config.max_horizon {
            let r = kant_metric(&cyc, &cyc, n)?;
            pruning.push(PruningRow {
                alphabet_size: k,
                horizon: n,
                support: config.states,
                nodes_expanded: r.nodes_expanded,
                full_tree: (0..n).map(|d| k.pow(d as u32)).sum(),
            });
        }
    }
    Ok(BenchReport {
        config: config.clone(),
        rows,
        fits,
        pruning,
    })
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "|A|  n   nodes      kant_ms    oracle").unwrap();
        for r in &self.rows {
            let oracle = match &r.oracle {
                OracleCell::Solved { gap, millis, .. } => format!("{millis:.3} ms, gap {gap:.1e}"),
                OracleCell::Skipped { .. } => "skipped (size guard)".into(),
            };
            writeln!(
                out,
                "{:<3}  {:<2}  {:<9}  {:<9.3}  {oracle}",
                r.alphabet_size, r.horizon, r.nodes_expanded, r.millis
            )
            .unwrap();
        }
        for f in &self.fits {
            writeln!(
                out,
                "|A|={}: slope of ln(nodes) vs n = {:.4} (limit {:.4}), oracle guarded from n = {}",
                f.alphabet_size,
                f.slope,
                f.limit,
                f.oracle_guard_from.map_or("-".into(), |n| n.to_string())
            )
            .unwrap();
        }
        writeln!(out, "identical cyclic chains:").unwrap();
        for p in &self.pruning {
            writeln!(
                out,
                "|A|={} n={:<2} nodes {:<4} full tree {}",
                p.alphabet_size, p.horizon, p.nodes_expanded, p.full_tree
            )
            .unwrap();
        }
        out
    }
}

pub fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
