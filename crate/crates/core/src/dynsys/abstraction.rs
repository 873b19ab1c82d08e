use serde::{Deserialize, Serialize};

use super::{DynamicalSystem, MeasureOracle, Provenance};
use crate::chain::{Alphabet, LabeledMarkovChain, Word};
use crate::error::{Error, Result};

/// `x ∈ [w]`: the next `|w|` outputs from `x` spell `w`. Always true for the empty word.
pub fn class_membership<S: DynamicalSystem + ?Sized>(sys: &S, x: &[f64], w: &Word) -> Result<bool> {
    if w.is_empty() {
        return Ok(true);
    }
    let seq = sys.output_word(x, w.len())?;
    Ok(&seq == w)
}

/// Prefix-free set of nonempty words, kept in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdaptivePartition {
    words: Vec<Word>,
}

impl AdaptivePartition {
    pub fn new(mut words: Vec<Word>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidPartition("partition has no words".into()));
        }
        if words.iter().any(Word::is_empty) {
            return Err(Error::InvalidPartition("empty word in partition".into()));
        }
        words.sort();
        // In sorted order a word's extensions follow it immediately.
        for pair in words.windows(2) {
            if pair[0].is_prefix_of(&pair[1]) {
                return Err(Error::InvalidPartition(format!(
                    "{} is a prefix of {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { words })
    }

    /// `{(a) : a ∈ A}`.
    pub fn initial(alphabet: &Alphabet) -> Self {
        Self {
            words: (0..alphabet.len()).map(|a| Word::new(vec![a])).collect(),
        }
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.words.iter().map(Word::len).max().unwrap_or(0)
    }

    /// Replaces word `index` by its one-symbol extensions.
    pub fn split(&self, index: usize, alphabet_size: usize) -> Self {
        let parent = &self.words[index];
        let mut words: Vec<Word> = self
            .words
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, w)| w.clone())
            .collect();
        words.extend((0..alphabet_size).map(|a| parent.pushed(a)));
        words.sort();
        Self { words }
    }

    /// Drops words of zero measure.
    pub fn pruned(&self, oracle: &dyn MeasureOracle) -> Result<Self> {
        let mut words = Vec::with_capacity(self.words.len());
        for w in &self.words {
            if oracle.measure(w)? > 0.0 {
                words.push(w.clone());
            }
        }
        if words.is_empty() {
            return Err(Error::InvalidPartition("every word has zero measure".into()));
        }
        Ok(Self { words })
    }

    /// Index of the word that prefixes `sequence`.
    pub fn locate_sequence(&self, sequence: &[usize]) -> Option<usize> {
        self.words.iter().position(|w| w.is_prefix_of_slice(sequence))
    }

    /// Index of the word whose class contains `x`.
    pub fn locate<S: DynamicalSystem + ?Sized>(&self, sys: &S, x: &[f64], buf: &mut Vec<usize>) -> Result<usize> {
        sys.output_sequence(x, self.max_len(), buf)?;
        self.locate_sequence(buf).ok_or_else(|| Error::Covering {
            point: x.to_vec(),
            reason: format!("output sequence {} matches no partition word", Word::from(&buf[..])),
        })
    }

    pub fn render(&self, alphabet: &Alphabet) -> Vec<String> {
        self.words.iter().map(|w| alphabet.render(w)).collect()
    }
}

/// Markov chain whose states are the partition words.
#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    pub partition: AdaptivePartition,
    pub chain: LabeledMarkovChain,
    pub provenance: Provenance,
    /// `λ([w])` per state, in partition order.
    pub measures: Vec<f64>,
}

impl Abstraction {
    pub fn words(&self) -> &[Word] {
        self.partition.words()
    }

    pub fn state_names(&self) -> Vec<String> {
        self.partition.render(self.chain.alphabet())
    }

    /// Sample hits per state when the measures came from sampling.
    pub fn sample_hits(&self) -> Option<Vec<f64>> {
        match self.provenance {
            Provenance::Exact => None,
            Provenance::Sampled { count, .. } => {
                Some(self.measures.iter().map(|m| m * count as f64).collect())
            }
        }
    }
}

/// The longer of `w1` and `a1 w2` when one prefixes the other.
fn transition_class(w1: &Word, w2: &Word) -> Option<Word> {
    let target = w2.prepended(w1.first()?);
    if target.len() >= w1.len() {
        w1.is_prefix_of(&target).then_some(target)
    } else {
        target.is_prefix_of(w1).then(|| w1.clone())
    }
}

/// Builds the abstraction chain of `partition`: `μ_w = λ([w])`, labels are
/// first symbols, and `P(w1, w2)` is the share of `[w1]` that lands in `[w2]`
/// after one step, i.e. `λ([w1] ∩ [a1 w2]) / λ([w1])`, zero unless `w1` without
/// its first symbol and `w2` agree on their common length.
///
/// Words of zero measure are dropped first.
pub fn build_abstraction<S: DynamicalSystem + ?Sized>(
    sys: &S,
    partition: &AdaptivePartition,
    oracle: &dyn MeasureOracle,
) -> Result<Abstraction> {
    let alphabet = sys.alphabet();
    for w in partition.words() {
        w.validate(alphabet)?;
    }
    let partition = partition.pruned(oracle)?;
    let words = partition.words();
    let measures: Vec<f64> = words.iter().map(|w| oracle.measure(w)).collect::<Result<_>>()?;
    let tolerance = oracle.row_tolerance();

    let total: f64 = measures.iter().sum();
    if (total - 1.0).abs() > tolerance {
        return Err(Error::InvalidPartition(format!(
            "partition classes cover measure {total}, not 1"
        )));
    }

    let mut rows = Vec::with_capacity(words.len());
    for (w1, &m1) in words.iter().zip(&measures) {
        let mut row = Vec::with_capacity(words.len());
        for w2 in words {
            let p = match transition_class(w1, w2) {
                Some(class) => oracle.measure(&class)? / m1,
                None => 0.0,
            };
            row.push(p);
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::NonStochasticRow {
                word: alphabet.render(w1),
                sum,
                tolerance,
            });
        }
        for p in &mut row {
            *p /= sum;
        }
        rows.push(row);
    }
    let initial = measures.iter().map(|m| m / total).collect();
    let labels = words.iter().map(|w| w.first().expect("nonempty word")).collect();
    let chain = LabeledMarkovChain::new_validated(rows, initial, labels, alphabet.clone())?;
    Ok(Abstraction {
        partition,
        chain,
        provenance: oracle.provenance(),
        measures,
    })
}
