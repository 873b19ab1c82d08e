//! Labeled Markov chains and the forward engine for word probabilities.
//!
//! A chain emits the label of every state it visits. The probability of a
//! word `w = a1..an` is obtained by carrying a forward vector `alpha` where
//! `alpha[s]` is the joint probability of having emitted the prefix read so far
//! and currently sitting in `s`. Each extension costs `O(|S|^2)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating stochastic rows and the initial measure.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Ordered set of distinct output symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("alphabet must not be empty".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// Alphabet `{"0", "1", .., "k-1"}`.
    pub fn numeric(size: usize) -> Self {
        Self::new((0..size).map(|i| i.to_string())).expect("numeric alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == name)
    }

    pub fn name(&self, symbol: usize) -> Option<&str> {
        self.symbols.get(symbol).map(String::as_str)
    }

    pub fn check(&self, symbol: usize) -> Result<()> {
        if symbol < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidSymbol {
                symbol,
                size: self.len(),
            })
        }
    }

    /// Renders a word by concatenating symbol names, or comma-separated when
    /// some name is longer than one character.
    pub fn render(&self, word: &Word) -> String {
        let single = self.symbols.iter().all(|s| s.chars().count() == 1);
        let names = word
            .symbols()
            .iter()
            .map(|&a| self.name(a).unwrap_or("?"));
        if single {
            names.collect()
        } else {
            names.collect::<Vec<_>>().join(",")
        }
    }

    /// Inverse of [`Alphabet::render`].
    pub fn parse_word(&self, text: &str) -> Result<Word> {
        let single = self.symbols.iter().all(|s| s.chars().count() == 1);
        let parts: Vec<String> = if text.is_empty() {
            Vec::new()
        } else if single {
            text.chars().map(|c| c.to_string()).collect()
        } else {
            text.split(',').map(str::to_string).collect()
        };
        parts
            .iter()
            .map(|p| {
                self.index_of(p)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown symbol {p:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word::new)
    }
}

/// Finite sequence of symbol indices. The empty word is the concatenation identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(symbols: Vec<usize>) -> Self {
        Self(symbols)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn pushed(&self, symbol: usize) -> Word {
        let mut v = self.0.clone();
        v.push(symbol);
        Word(v)
    }

    pub fn prepended(&self, symbol: usize) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(symbol);
        v.extend_from_slice(&self.0);
        Word(v)
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn is_prefix_of_slice(&self, other: &[usize]) -> bool {
        other.starts_with(&self.0)
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        self.0.iter().try_for_each(|&a| alphabet.check(a))
    }
}

impl From<Vec<usize>> for Word {
    fn from(v: Vec<usize>) -> Self {
        Word(v)
    }
}

impl From<&[usize]> for Word {
    fn from(v: &[usize]) -> Self {
        Word(v.to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "Λ");
        }
        let sep = if self.0.iter().all(|&a| a < 10) { "" } else { "," };
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "{}", parts.join(sep))
    }
}

/// One problem found by [`validate_chain`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { row: usize, residual: f64 },
    NegativeTransition { row: usize, col: usize, value: f64 },
    InitialSum { residual: f64 },
    NegativeInitial { state: usize, value: f64 },
    InvalidLabel { state: usize, label: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { row, residual } => {
                write!(f, "transition row {row} sum off by {residual:e}")
            }
            Violation::NegativeTransition { row, col, value } => {
                write!(f, "transition[{row}][{col}] = {value} is negative")
            }
            Violation::InitialSum { residual } => {
                write!(f, "initial measure sum off by {residual:e}")
            }
            Violation::NegativeInitial { state, value } => {
                write!(f, "initial[{state}] = {value} is negative")
            }
            Violation::InvalidLabel { state, label } => {
                write!(f, "state {state} has invalid label index {label}")
            }
        }
    }
}

/// Finite-state chain `(S, A, P, mu, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMarkovChain {
    n_states: usize,
    transition: Vec<f64>,
    initial: Vec<f64>,
    labels: Vec<usize>,
    alphabet: Alphabet,
}

impl LabeledMarkovChain {
    /// Builds a chain, checking only shapes. Use [`validate_chain`] (or
    /// [`LabeledMarkovChain::new_validated`]) for stochasticity.
    pub fn new(
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
        labels: Vec<usize>,
        alphabet: Alphabet,
    ) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(Error::Shape("chain needs at least one state".into()));
        }
        if transition.len() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "{} transition rows and {} labels for {n} states",
                transition.len(),
                labels.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in transition.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            flat.extend(row);
        }
        Ok(Self {
            n_states: n,
            transition: flat,
            initial,
            labels,
            alphabet,
        })
    }

    pub fn new_validated(
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
        labels: Vec<usize>,
        alphabet: Alphabet,
    ) -> Result<Self> {
        let chain = Self::new(transition, initial, labels, alphabet)?;
        let report = validate_chain(&chain);
        if let Some(v) = report.first() {
            return Err(Error::InvalidChain(v.to_string()));
        }
        Ok(chain)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.transition[s * self.n_states..(s + 1) * self.n_states]
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.n_states + to]
    }

    pub fn transition_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }

    /// Copy of this chain with state `state` relabeled.
    pub fn with_label(&self, state: usize, label: usize) -> Self {
        let mut c = self.clone();
        c.labels[state] = label;
        c
    }

    /// `p^1((a))` restriction of the initial measure to the class `[a]`.
    pub fn initial_forward(&self, a: usize) -> Result<ForwardState> {
        self.alphabet.check(a)?;
        let alpha: Vec<f64> = self
            .initial
            .iter()
            .zip(&self.labels)
            .map(|(&mu, &l)| if l == a { mu } else { 0.0 })
            .collect();
        Ok(ForwardState::from_alpha(alpha))
    }

    /// Appends symbol `a` to the prefix represented by `fs`.
    pub fn extend_prefix(&self, fs: &ForwardState, a: usize) -> Result<ForwardState> {
        self.alphabet.check(a)?;
        let n = self.n_states;
        let mut alpha = vec![0.0; n];
        for (s, &mass) in fs.alpha.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (t, &p) in self.row(s).iter().enumerate() {
                if self.labels[t] == a {
                    alpha[t] += mass * p;
                }
            }
        }
        Ok(ForwardState::from_alpha(alpha))
    }

    /// Forward states of `w a` for every symbol `a`, in alphabet order. Shares
    /// the `alpha * P` product across symbols.
    pub fn successors(&self, fs: &ForwardState) -> Vec<ForwardState> {
        let n = self.n_states;
        let mut pushed = vec![0.0; n];
        for (s, &mass) in fs.alpha.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (acc, &p) in pushed.iter_mut().zip(self.row(s)) {
                *acc += mass * p;
            }
        }
        (0..self.alphabet.len())
            .map(|a| {
                let alpha = pushed
                    .iter()
                    .zip(&self.labels)
                    .map(|(&v, &l)| if l == a { v } else { 0.0 })
                    .collect();
                ForwardState::from_alpha(alpha)
            })
            .collect()
    }

    /// Forward states of the one-symbol words, in alphabet order.
    pub fn roots(&self) -> Vec<ForwardState> {
        (0..self.alphabet.len())
            .map(|a| self.initial_forward(a).expect("symbol in range"))
            .collect()
    }

    pub fn forward(&self, w: &Word) -> Result<ForwardState> {
        let (&first, rest) = w.symbols().split_first().ok_or(Error::EmptyWord)?;
        let mut fs = self.initial_forward(first)?;
        for &a in rest {
            fs = self.extend_prefix(&fs, a)?;
        }
        Ok(fs)
    }

    /// `p^n(w)` for a nonempty word.
    pub fn word_probability(&self, w: &Word) -> Result<f64> {
        Ok(self.forward(w)?.prefix_prob)
    }
}

/// Joint probability of the current prefix and the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub alpha: Vec<f64>,
    pub prefix_prob: f64,
}

impl ForwardState {
    pub fn from_alpha(alpha: Vec<f64>) -> Self {
        let prefix_prob = alpha.iter().sum();
        Self { alpha, prefix_prob }
    }
}

/// Lists every violated chain invariant. An empty report means the chain is valid.
pub fn validate_chain(chain: &LabeledMarkovChain) -> Vec<Violation> {
    let mut report = Vec::new();
    for s in 0..chain.n_states {
        let row = chain.row(s);
        for (t, &p) in row.iter().enumerate() {
            if p < 0.0 || p.is_nan() {
                report.push(Violation::NegativeTransition {
                    row: s,
                    col: t,
                    value: p,
                });
            }
        }
        let residual = 1.0 - row.iter().sum::<f64>();
        if residual.abs() > STOCHASTIC_TOLERANCE || residual.is_nan() {
            report.push(Violation::RowSum { row: s, residual });
        }
    }
    for (s, &mu) in chain.initial.iter().enumerate() {
        if mu < 0.0 || mu.is_nan() {
            report.push(Violation::NegativeInitial { state: s, value: mu });
        }
    }
    let residual = 1.0 - chain.initial.iter().sum::<f64>();
    if residual.abs() > STOCHASTIC_TOLERANCE || residual.is_nan() {
        report.push(Violation::InitialSum { residual });
    }
    for (s, &l) in chain.labels.iter().enumerate() {
        if l >= chain.alphabet.len() {
            report.push(Violation::InvalidLabel { state: s, label: l });
        }
    }
    report
}
