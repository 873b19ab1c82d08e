//! Kantorovich distance between word distributions of two labeled chains under
//! the Cantor ultrametric.
//!
//! Two words at Cantor distance `base^l` agree on their first `l - 1` symbols.
//! An optimal coupling keeps as much mass as possible on common prefixes, so
//! the distance reduces to a walk over the prefix tree: a node `w` at depth `k`
//! holding matched mass `r(w) = min(p1(w), p2(w))` releases
//! `r(w) - sum_a r(wa)` of mass that first diverges at depth `k + 1` and costs
//! `base^(k+1)`. Children with zero matched mass are not expanded.

use serde::{Deserialize, Serialize};

use crate::chain::{ForwardState, LabeledMarkovChain, Word};
use crate::error::{Error, Result};

/// Matched masses at or below this value are treated as zero.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantorParams {
    pub base: f64,
}

impl Default for CantorParams {
    fn default() -> Self {
        Self { base: 0.5 }
    }
}

impl CantorParams {
    pub fn new(base: f64) -> Result<Self> {
        if base > 0.0 && base < 1.0 {
            Ok(Self { base })
        } else {
            Err(Error::InvalidArgument(format!("Cantor base must lie in (0,1), got {base}")))
        }
    }

    /// Distance between two words whose first mismatch is at 1-based position `l`.
    pub fn weight(&self, l: usize) -> f64 {
        self.base.powi(l as i32)
    }

    pub fn distance(&self, w1: &[usize], w2: &[usize]) -> Result<f64> {
        if w1.len() != w2.len() {
            return Err(Error::LengthMismatch(w1.len(), w2.len()));
        }
        Ok(match w1.iter().zip(w2).position(|(a, b)| a != b) {
            Some(i) => self.weight(i + 1),
            None => 0.0,
        })
    }
}

/// Cantor distance `2^-l` with `l` the 1-based index of the first mismatch; 0 for equal words.
pub fn cantor_distance(w1: &Word, w2: &Word) -> Result<f64> {
    if w1.is_empty() || w2.is_empty() {
        return Err(Error::EmptyWord);
    }
    CantorParams::default().distance(w1.symbols(), w2.symbols())
}

/// Node of the prefix tree walked by [`kant_metric`].
#[derive(Debug, Clone)]
pub struct KantNode {
    pub word: Word,
    pub depth: usize,
    pub mass: f64,
    pub fwd1: ForwardState,
    pub fwd2: ForwardState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    /// `K(p1^n, p2^n)`.
    pub value: f64,
    pub horizon: usize,
    /// `value + 2^-n`; the chain metric lies in `[value, upper_bound]`.
    pub upper_bound: f64,
    pub nodes_expanded: usize,
    /// Contribution of each depth `1..=n`; sums to `value` in order.
    pub levels: Vec<f64>,
}

impl MetricResult {
    pub fn bracket_width(&self) -> f64 {
        0.5f64.powi(self.horizon as i32)
    }
}

fn check_pair(c1: &LabeledMarkovChain, c2: &LabeledMarkovChain, n: usize) -> Result<()> {
    if c1.alphabet() != c2.alphabet() {
        return Err(Error::AlphabetMismatch);
    }
    if n < 1 {
        return Err(Error::InvalidHorizon);
    }
    Ok(())
}

/// Exact `K(p1^n, p2^n)` by the prefix-tree recursion with the default base 1/2.
pub fn kant_metric(c1: &LabeledMarkovChain, c2: &LabeledMarkovChain, n: usize) -> Result<MetricResult> {
    kant_metric_with(CantorParams::default(), c1, c2, n)
}

pub fn kant_metric_with(
    params: CantorParams,
    c1: &LabeledMarkovChain,
    c2: &LabeledMarkovChain,
    n: usize,
) -> Result<MetricResult> {
    check_pair(c1, c2, n)?;
    let mut levels = vec![0.0; n];
    let mut nodes_expanded = 0usize;

    // Depth-first worklist. Children are pushed in reverse so they pop in
    // alphabet order, which fixes the summation order of every level.
    let mut stack: Vec<KantNode> = Vec::new();
    let mut pending_root = Some((c1.roots(), c2.roots()));

    loop {
        let (depth, mass, kids1, kids2, word) = if let Some((k1, k2)) = pending_root.take() {
            (0usize, 1.0f64, k1, k2, Word::empty())
        } else if let Some(node) = stack.pop() {
            let k1 = c1.successors(&node.fwd1);
            let k2 = c2.successors(&node.fwd2);
            (node.depth, node.mass, k1, k2, node.word)
        } else {
            break;
        };
        nodes_expanded += 1;

        let child_mass: Vec<f64> = kids1
            .iter()
            .zip(&kids2)
            .map(|(f1, f2)| f1.prefix_prob.min(f2.prefix_prob))
            .collect();
        let released = mass - child_mass.iter().sum::<f64>();
        levels[depth] += params.weight(depth + 1) * released;

        if depth + 1 == n {
            continue;
        }
        for (a, (f1, f2)) in kids1.into_iter().zip(kids2).enumerate().rev() {
            let m = child_mass[a];
            if m > PRUNE_THRESHOLD {
                stack.push(KantNode {
                    word: word.pushed(a),
                    depth: depth + 1,
                    mass: m,
                    fwd1: f1,
                    fwd2: f2,
                });
            }
        }
    }

    let value: f64 = levels.iter().sum();
    Ok(MetricResult {
        value,
        horizon: n,
        upper_bound: value + params.base.powi(n as i32),
        nodes_expanded,
        levels,
    })
}

/// Smallest `n` with `2^-n <= epsilon`, i.e. `ceil(log2(1/epsilon))`, computed
/// on exact powers of two.
pub fn horizon_for_accuracy(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidAccuracy(epsilon));
    }
    let mut n = 1usize;
    let mut step = 0.5f64;
    while step > epsilon {
        n += 1;
        step *= 0.5;
    }
    Ok(n)
}

/// Lower estimate of the chain metric within `epsilon`.
pub fn chain_metric(c1: &LabeledMarkovChain, c2: &LabeledMarkovChain, epsilon: f64) -> Result<MetricResult> {
    let n = horizon_for_accuracy(epsilon)?;
    kant_metric(c1, c2, n)
}

/// Per-depth contributions `dK_1..dK_n` of the recursion.
pub fn level_increments(c1: &LabeledMarkovChain, c2: &LabeledMarkovChain, n: usize) -> Result<Vec<f64>> {
    Ok(kant_metric(c1, c2, n)?.levels)
}
