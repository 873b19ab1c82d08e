use std::collections::HashMap;

use kantab_core::dynsys::{
    benchmark_system, build_abstraction, check_closure, AdaptivePartition, DynamicalSystem, ExactOracle,
    MeasureOracle, SampleCloud, SampledOracle,
};
use kantab_core::refine::{refine, RefinementConfig};
use kantab_core::{validate_chain, Word};

#[test]
fn final_abstraction_reproduces_simulated_word_frequencies() {
    let sys = benchmark_system();
    let (abs, _) = refine(&sys, &RefinementConfig::default()).unwrap();
    let samples = 100_000;
    let cloud = SampleCloud::uniform(sys.space(), samples, 2024);
    for n in 1..=6 {
        let mut counts: HashMap<Word, usize> = HashMap::new();
        for x in cloud.points() {
            *counts.entry(sys.output_word(x, n).unwrap()).or_default() += 1;
        }
        let mut all: Vec<Word> = counts.keys().cloned().collect();
        // also every word the abstraction can emit
        let mut frontier = vec![Word::empty()];
        for _ in 0..n {
            frontier = frontier
                .iter()
                .flat_map(|w| (0..2).map(move |a| w.pushed(a)))
                .filter(|w| abs.chain.word_probability(w).unwrap() > 0.0)
                .collect();
        }
        all.extend(frontier);
        all.sort();
        all.dedup();
        for w in all {
            let p = abs.chain.word_probability(&w).unwrap();
            let hat = *counts.get(&w).unwrap_or(&0) as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            assert!((hat - p).abs() <= 3.0 * se, "n={n} word {w}: simulated {hat}, chain {p}");
        }
    }
}

#[test]
fn every_refinement_partition_gives_a_valid_chain() {
    let sys = benchmark_system();
    let oracle = ExactOracle::new(&sys).unwrap();
    let (_, trace) = refine(&sys, &RefinementConfig::default()).unwrap();
    let alphabet = sys.alphabet();
    for record in &trace.iterations {
        let mut partitions = vec![record.partition.clone()];
        partitions.extend(record.candidates.iter().map(|c| c.partition.clone()));
        for words in partitions {
            let words = words.iter().map(|w| alphabet.parse_word(w).unwrap()).collect();
            let abs = build_abstraction(&sys, &AdaptivePartition::new(words).unwrap(), &oracle).unwrap();
            assert!(validate_chain(&abs.chain).is_empty());
            for (w, &l) in abs.words().iter().zip(abs.chain.labels()) {
                assert_eq!(w.first(), Some(l));
            }
        }
    }
}

#[test]
fn zero_volume_classes_are_empty_under_sampling() {
    let sys = benchmark_system();
    let exact = ExactOracle::new(&sys).unwrap();
    let (_, trace) = refine(&sys, &RefinementConfig::default()).unwrap();
    let alphabet = sys.alphabet();
    let mut empty = Vec::new();
    for record in &trace.iterations {
        for c in &record.candidates {
            let parent = alphabet.parse_word(&c.split).unwrap();
            for a in 0..alphabet.len() {
                let child = parent.pushed(a);
                if exact.measure(&child).unwrap() == 0.0 {
                    empty.push(child);
                }
            }
        }
    }
    empty.sort();
    empty.dedup();
    assert!(!empty.is_empty());
    let sampled = SampledOracle::new(&sys, 10_000_000, 77).unwrap();
    for w in &empty {
        assert_eq!(sampled.hits(w).unwrap(), 0, "{w}");
    }
}

#[test]
fn benchmark_closure_statistical() {
    let report = check_closure(&benchmark_system(), 1_000_000, 5);
    assert_eq!(report.escapes, 0);
    assert_eq!(report.uncovered, 0);
}
