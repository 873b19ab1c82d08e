//! Greedy adaptive refinement: split the word whose refinement moves the
//! abstraction furthest under the chain metric, until every transition is
//! deterministic or the budget runs out.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Alphabet, Word};
use crate::dynsys::{
    build_abstraction, Abstraction, AdaptivePartition, DynamicalSystem, ExactOracle, MeasureOracle,
    PiecewiseAffineSystem, Provenance, SampledOracle,
};
use crate::error::{Error, Result};
use crate::kantor::{chain_metric, horizon_for_accuracy};

/// Entries this close to 0 or 1 count as deterministic under exact measures.
pub const DETERMINISM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeasureMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    /// `None` runs until the abstraction is deterministic.
    pub max_iterations: Option<usize>,
    pub epsilon: f64,
    pub mode: MeasureMode,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            max_iterations: None,
            epsilon: 1e-3,
            mode: MeasureMode::Exact,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        horizon_for_accuracy(self.epsilon)?;
        if let MeasureMode::Sampled { samples: 0, .. } = self.mode {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Deterministic,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Word that was split.
    pub split: String,
    pub partition: Vec<String>,
    pub distance: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub partition: Vec<String>,
    pub deterministic: bool,
    /// Empty when the loop stopped at this iteration.
    pub candidates: Vec<CandidateRecord>,
    pub chosen: Option<usize>,
}

impl IterationRecord {
    pub fn chosen_distance(&self) -> Option<f64> {
        self.chosen.map(|j| self.candidates[j].distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub config: RefinementConfig,
    pub horizon: usize,
    pub provenance: Provenance,
    /// Deterministic-entry tolerance used by the stopping test.
    pub band: String,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl RefinementTrace {
    pub fn final_partition(&self) -> &[String] {
        &self.iterations.last().expect("trace has at least one row").partition
    }

    pub fn stop_iteration(&self) -> usize {
        self.iterations.len() - 1
    }

    /// Line-oriented report: iteration, partition, chosen split and its distance, stop flag.
    pub fn render_table(&self) -> String {
        let rows: Vec<[String; 5]> = self
            .iterations
            .iter()
            .map(|r| {
                let chosen = r.chosen.map(|j| &r.candidates[j]);
                [
                    r.iteration.to_string(),
                    format!("{{{}}}", r.partition.join(", ")),
                    chosen.map_or("-".into(), |c| c.split.clone()),
                    chosen.map_or("-".into(), |c| format!("{:.6}", c.distance)),
                    if r.deterministic { "yes" } else { "no" }.into(),
                ]
            })
            .collect();
        let header = ["iter", "partition", "split", "d", "deterministic"];
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
        };
        line(&header);
        for row in &rows {
            line(&row.each_ref().map(String::as_str));
        }
        writeln!(
            out,
            "stop: {} at iteration {} (horizon {}, band {})",
            match self.stop {
                StopReason::Deterministic => "deterministic",
                StopReason::BudgetExhausted => "budget exhausted",
            },
            self.stop_iteration(),
            self.horizon,
            self.band
        )
        .unwrap();
        out
    }
}

/// Per-row tolerance of the determinism test: fixed for exact measures,
/// three worst-case binomial standard errors for sampled ones.
pub fn determinism_band(abs: &Abstraction) -> Vec<f64> {
    match abs.sample_hits() {
        None => vec![DETERMINISM_TOLERANCE; abs.words().len()],
        Some(hits) => hits.iter().map(|&n| 3.0 * (0.25 / n.max(1.0)).sqrt()).collect(),
    }
}

pub fn is_deterministic(abs: &Abstraction) -> bool {
    let band = determinism_band(abs);
    (0..abs.chain.n_states()).all(|i| {
        abs.chain
            .row(i)
            .iter()
            .all(|&p| p <= band[i] || p >= 1.0 - band[i])
    })
}

fn band_description(provenance: Provenance) -> String {
    match provenance {
        Provenance::Exact => format!("{DETERMINISM_TOLERANCE:e}"),
        Provenance::Sampled { .. } => "3*sqrt(0.25/row_hits)".into(),
    }
}

/// Refinement with the oracle chosen by `config.mode`.
pub fn refine(sys: &PiecewiseAffineSystem, config: &RefinementConfig) -> Result<(Abstraction, RefinementTrace)> {
    config.validate()?;
    match config.mode {
        MeasureMode::Exact => refine_with_oracle(sys, &ExactOracle::new(sys)?, config),
        MeasureMode::Sampled { samples, seed } => {
            refine_with_oracle(sys, &SampledOracle::new(sys, samples, seed)?, config)
        }
    }
}

pub fn refine_with_oracle<S: DynamicalSystem + ?Sized>(
    sys: &S,
    oracle: &dyn MeasureOracle,
    config: &RefinementConfig,
) -> Result<(Abstraction, RefinementTrace)> {
    config.validate()?;
    let alphabet = sys.alphabet();
    let at = |iteration: usize| {
        move |e: Error| Error::Refinement {
            iteration,
            source: Box::new(e),
        }
    };

    let mut current =
        build_abstraction(sys, &AdaptivePartition::initial(alphabet), oracle).map_err(at(0))?;
    let mut iterations = Vec::new();
    let stop = loop {
        let k = iterations.len();
        let deterministic = is_deterministic(&current);
        let mut record = IterationRecord {
            iteration: k,
            partition: current.partition.render(alphabet),
            deterministic,
            candidates: Vec::new(),
            chosen: None,
        };
        if deterministic {
            iterations.push(record);
            break StopReason::Deterministic;
        }
        if config.max_iterations.is_some_and(|n| k >= n) {
            iterations.push(record);
            break StopReason::BudgetExhausted;
        }

        let candidates: Vec<(Abstraction, CandidateRecord)> = (0..current.partition.len())
            .into_par_iter()
            .map(|i| {
                let split = current.partition.split(i, alphabet.len());
                let next = build_abstraction(sys, &split, oracle)?;
                let metric = chain_metric(&current.chain, &next.chain, config.epsilon)?;
                let rec = CandidateRecord {
                    split: alphabet.render(&current.words()[i]),
                    partition: next.partition.render(alphabet),
                    distance: metric.value,
                    upper_bound: metric.upper_bound,
                };
                Ok((next, rec))
            })
            .collect::<Result<_>>()
            .map_err(at(k))?;

        let mut best = 0;
        for (i, (_, c)) in candidates.iter().enumerate() {
            if c.distance > candidates[best].1.distance {
                best = i;
            }
        }
        let (mut adopted, mut records): (Vec<_>, Vec<_>) = candidates.into_iter().unzip();
        record.candidates = std::mem::take(&mut records);
        record.chosen = Some(best);
        iterations.push(record);
        current = adopted.swap_remove(best);
    };

    let trace = RefinementTrace {
        config: *config,
        horizon: horizon_for_accuracy(config.epsilon)?,
        provenance: oracle.provenance(),
        band: band_description(oracle.provenance()),
        iterations,
        stop,
    };
    Ok((current, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub horizon: usize,
    pub samples: usize,
    pub distinct_observed: usize,
    pub support_size: usize,
    /// Simulated words the abstraction cannot emit, with hit counts.
    pub unsupported: Vec<(String, u64)>,
    /// Words the abstraction emits with expected count at least
    /// [`MIN_EXPECTED_HITS`] that no sample produced, with their probability.
    pub unobserved: Vec<(String, f64)>,
}

/// Support words rarer than this many expected hits are not required to be observed.
pub const MIN_EXPECTED_HITS: f64 = 10.0;

/// Cap on the number of positive-probability words enumerated from the abstraction.
pub const SUPPORT_LIMIT: usize = 1_000_000;

impl BehaviorReport {
    pub fn failures(&self) -> usize {
        self.unsupported.len() + self.unobserved.len()
    }

    pub fn is_clean(&self) -> bool {
        self.failures() == 0
    }
}

/// Compares the length-`horizon` output words of sampled trajectories with
/// the support of the abstraction's word distribution, in both directions.
pub fn behavior_equivalence_check<S: DynamicalSystem + ?Sized>(
    sys: &S,
    abs: &Abstraction,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<BehaviorReport> {
    if horizon == 0 {
        return Err(Error::InvalidHorizon);
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let alphabet = abs.chain.alphabet();
    let cloud = crate::dynsys::SampleCloud::uniform(sys.space(), samples, seed);
    let words: Vec<Word> = (0..samples)
        .into_par_iter()
        .map(|i| sys.output_word(cloud.point(i), horizon))
        .collect::<Result<_>>()?;
    let mut observed: HashMap<Word, u64> = HashMap::new();
    for w in words {
        *observed.entry(w).or_default() += 1;
    }

    let support = support_words(abs, horizon)?;
    let mut unsupported: Vec<(Word, u64)> = observed
        .iter()
        .filter(|(w, _)| !support.contains_key(*w))
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    unsupported.sort();
    let mut unobserved: Vec<(Word, f64)> = support
        .iter()
        .filter(|(w, &p)| p * samples as f64 >= MIN_EXPECTED_HITS && !observed.contains_key(*w))
        .map(|(w, &p)| (w.clone(), p))
        .collect();
    unobserved.sort_by(|a, b| a.0.cmp(&b.0));

    Ok(BehaviorReport {
        horizon,
        samples,
        distinct_observed: observed.len(),
        support_size: support.len(),
        unsupported: render_all(alphabet, unsupported),
        unobserved: render_all(alphabet, unobserved),
    })
}

fn render_all<T>(alphabet: &Alphabet, items: Vec<(Word, T)>) -> Vec<(String, T)> {
    items.into_iter().map(|(w, x)| (alphabet.render(&w), x)).collect()
}

fn support_words(abs: &Abstraction, horizon: usize) -> Result<HashMap<Word, f64>> {
    let chain = &abs.chain;
    let mut out = HashMap::new();
    let mut stack: Vec<(Word, crate::chain::ForwardState)> = chain
        .roots()
        .into_iter()
        .enumerate()
        .rev()
        .filter(|(_, f)| f.prefix_prob > 0.0)
        .map(|(a, f)| (Word::new(vec![a]), f))
        .collect();
    while let Some((w, f)) = stack.pop() {
        if w.len() == horizon {
            out.insert(w, f.prefix_prob);
            if out.len() > SUPPORT_LIMIT {
                return Err(Error::SizeGuard {
                    what: "abstraction support",
                    size: out.len(),
                    limit: SUPPORT_LIMIT,
                });
            }
            continue;
        }
        for (a, g) in chain.successors(&f).into_iter().enumerate().rev() {
            if g.prefix_prob > 0.0 {
                stack.push((w.pushed(a), g));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{benchmark_system, AffineMap, Rect, Region};

    fn exact(max_iterations: Option<usize>) -> (Abstraction, RefinementTrace) {
        let config = RefinementConfig {
            max_iterations,
            ..Default::default()
        };
        refine(&benchmark_system(), &config).unwrap()
    }

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn benchmark_sequence() {
        let (abs, trace) = exact(None);
        let seq: Vec<_> = trace.iterations.iter().map(|r| r.partition.clone()).collect();
        assert_eq!(
            seq,
            vec![
                words(&["0", "1"]),
                words(&["0", "10", "11"]),
                words(&["0", "10", "110", "111"]),
                words(&["0", "10", "110", "1110", "1111"]),
            ]
        );
        assert_eq!(trace.stop, StopReason::Deterministic);
        assert_eq!(trace.stop_iteration(), 3);
        assert_eq!(trace.horizon, 10);
        assert!(is_deterministic(&abs));
        assert_eq!(abs.state_names(), words(&["0", "10", "110", "1110", "1111"]));
        let d: Vec<f64> = trace.iterations.iter().filter_map(|r| r.chosen_distance()).collect();
        assert!(d.iter().all(|&x| x > 0.0), "{d:?}");
    }

    #[test]
    fn vacuous_splits_score_zero_and_are_never_chosen() {
        let (_, trace) = exact(None);
        for r in &trace.iterations {
            for c in &r.candidates {
                if c.split == "0" || c.split == "10" {
                    assert!(c.distance.abs() <= 1e-12, "split {} at {}: {}", c.split, r.iteration, c.distance);
                    assert_eq!(c.partition.len(), r.partition.len());
                }
            }
            if let Some(j) = r.chosen {
                assert!(!["0", "10"].contains(&r.candidates[j].split.as_str()));
                let top = r.candidates.iter().map(|c| c.distance).fold(0.0, f64::max);
                assert_eq!(r.candidates[j].distance, top);
                assert!(r.candidates[..j].iter().all(|c| c.distance < top));
            }
        }
    }

    #[test]
    fn partitions_are_nested_refinements() {
        let (_, trace) = exact(None);
        let alphabet = Alphabet::numeric(2);
        for pair in trace.iterations.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let split = &prev.candidates[prev.chosen.unwrap()].split;
            let parent = alphabet.parse_word(split).unwrap();
            let kept: Vec<_> = prev.partition.iter().filter(|w| *w != split).cloned().collect();
            let added: Vec<_> = next.partition.iter().filter(|w| !prev.partition.contains(w)).collect();
            assert!(kept.iter().all(|w| next.partition.contains(w)));
            for w in &added {
                let child = alphabet.parse_word(w).unwrap();
                assert_eq!(child.len(), parent.len() + 1);
                assert!(parent.is_prefix_of(&child));
            }
            assert!(next.partition.len() < prev.partition.len() + alphabet.len());
        }
        let k = trace.stop_iteration();
        // no pruning along the adopted path here, so the count is exact
        assert_eq!(trace.final_partition().len(), 2 + k);
    }

    #[test]
    fn budget_one() {
        let (abs, trace) = exact(Some(1));
        assert_eq!(trace.stop, StopReason::BudgetExhausted);
        assert_eq!(trace.iterations.len(), 2);
        assert_eq!(trace.final_partition(), words(&["0", "10", "11"]).as_slice());
        assert!(!is_deterministic(&abs));
    }

    #[test]
    fn budget_zero() {
        let (abs, trace) = exact(Some(0));
        assert_eq!(trace.stop, StopReason::BudgetExhausted);
        assert_eq!(trace.iterations.len(), 1);
        assert!(trace.iterations[0].candidates.is_empty());
        assert_eq!(abs.chain.transition_rows(), vec![vec![1.0, 0.0], vec![0.25, 0.75]]);
    }

    #[test]
    fn one_region_system_is_already_deterministic() {
        let space = Rect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let sys = PiecewiseAffineSystem::new(
            space.clone(),
            Alphabet::numeric(1),
            vec![Region {
                name: "X".into(),
                rect: space,
                label: 0,
                map: AffineMap::identity(2),
            }],
            None,
        )
        .unwrap();
        let (abs, trace) = refine(&sys, &RefinementConfig::default()).unwrap();
        assert_eq!(trace.stop, StopReason::Deterministic);
        assert_eq!(trace.stop_iteration(), 0);
        assert_eq!(abs.chain.n_states(), 1);
    }

    #[test]
    fn trace_is_reproducible() {
        let config = RefinementConfig {
            mode: MeasureMode::Sampled {
                samples: 100_000,
                seed: 9,
            },
            ..Default::default()
        };
        let sys = benchmark_system();
        let (_, a) = refine(&sys, &config).unwrap();
        let (_, b) = refine(&sys, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.render_table(), b.render_table());
        assert_eq!(a.final_partition(), words(&["0", "10", "110", "1110", "1111"]).as_slice());
        assert_eq!(a.stop, StopReason::Deterministic);
    }

    #[test]
    fn table_rendering() {
        let (_, trace) = exact(None);
        let table = trace.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("iter"));
        assert!(lines[4].contains("{0, 10, 110, 1110, 1111}"));
        assert!(lines[4].ends_with("yes"));
        assert!(lines[5].starts_with("stop: deterministic at iteration 3"));
    }

    #[test]
    fn determinism_flags() {
        let (initial, _) = exact(Some(0));
        assert!(!is_deterministic(&initial));
        let (last, _) = exact(None);
        assert!(is_deterministic(&last));
    }

    #[test]
    fn behavior_audit_on_final_abstraction() {
        let sys = benchmark_system();
        let (abs, _) = exact(None);
        let report = behavior_equivalence_check(&sys, &abs, 10, 100_000, 1).unwrap();
        assert!(report.is_clean(), "{report:?}");
        assert_eq!(report.support_size, report.distinct_observed);
    }

    #[test]
    fn behavior_audit_horizon_one() {
        let sys = benchmark_system();
        let (abs, _) = exact(Some(0));
        let report = behavior_equivalence_check(&sys, &abs, 1, 10_000, 1).unwrap();
        assert!(report.is_clean());
        assert_eq!(report.support_size, 2);
    }

    #[test]
    fn corrupted_label_is_caught() {
        let sys = benchmark_system();
        let (mut abs, _) = exact(None);
        let last = abs.chain.n_states() - 1;
        abs.chain = abs.chain.with_label(last, 0);
        let report = behavior_equivalence_check(&sys, &abs, 10, 100_000, 1).unwrap();
        // the flipped state now emits 0^n, which the system also produces
        assert!(report.unobserved.is_empty());
        assert!(report.unsupported.iter().any(|(w, _)| w == "1111111111"));
        assert!(!report.is_clean());

        let (mut abs, _) = exact(None);
        abs.chain = abs.chain.with_label(0, 1);
        let report = behavior_equivalence_check(&sys, &abs, 10, 100_000, 1).unwrap();
        assert!(report.unobserved.is_empty());
        assert!(report.unsupported.iter().any(|(w, _)| w == "0000000000"));
    }

    #[test]
    fn invalid_config() {
        let sys = benchmark_system();
        for epsilon in [0.0, 1.0, -0.5] {
            let config = RefinementConfig {
                epsilon,
                ..Default::default()
            };
            assert!(matches!(refine(&sys, &config), Err(Error::InvalidAccuracy(_))));
        }
    }
}
