//! Exact Kantorovich distance by explicit optimal transport over enumerated
//! word distributions.
//!
//! This module is deliberately independent of the prefix-tree recursion in
//! [`crate::kantor`]: distributions are enumerated densely, the full Cantor cost
//! matrix is formed, and a balanced transport problem is solved by successive
//! shortest augmenting paths with Dijkstra on reduced costs. Its cost is
//! exponential in the horizon; it exists to cross-check the fast path.

use crate::chain::{LabeledMarkovChain, Word};
use crate::kantor::CantorParams;
use crate::error::{Error, Result};

/// Largest number of words `enumerate_distribution` will materialize.
pub const ENUMERATION_LIMIT: usize = 100_000;
/// The transport cost matrix must have strictly fewer entries than this.
pub const TRANSPORT_LIMIT: usize = 1 << 16;
/// Tolerance on coupling feasibility and structural identities of optimal couplings.
pub const COUPLING_TOLERANCE: f64 = 1e-8;

/// Dense distribution over all `|A|^n` words in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    horizon: usize,
    alphabet_size: usize,
    probs: Vec<f64>,
}

impl WordDistribution {
    pub fn new(horizon: usize, alphabet_size: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = checked_words(alphabet_size, horizon)?;
        if probs.len() != expected {
            return Err(Error::Shape(format!(
                "{} probabilities for {expected} words",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| p < 0.0 || p.is_nan()) {
            return Err(Error::InvalidArgument("negative word probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::MassMismatch(total - 1.0));
        }
        Ok(Self {
            horizon,
            alphabet_size,
            probs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, w: &Word) -> f64 {
        self.probs[self.index_of(w)]
    }

    pub fn index_of(&self, w: &Word) -> usize {
        w.symbols()
            .iter()
            .fold(0, |acc, &a| acc * self.alphabet_size + a)
    }

    pub fn word_at(&self, mut index: usize) -> Word {
        let mut symbols = vec![0; self.horizon];
        for slot in symbols.iter_mut().rev() {
            *slot = index % self.alphabet_size;
            index /= self.alphabet_size;
        }
        Word::new(symbols)
    }

    /// Distribution of the length `n - 1` prefixes.
    pub fn marginalize(&self) -> Result<WordDistribution> {
        if self.horizon < 2 {
            return Err(Error::InvalidHorizon);
        }
        let k = self.alphabet_size;
        let probs = self.probs.chunks(k).map(|c| c.iter().sum()).collect();
        Ok(WordDistribution {
            horizon: self.horizon - 1,
            alphabet_size: k,
            probs,
        })
    }
}

fn checked_words(alphabet_size: usize, n: usize) -> Result<usize> {
    let mut size = 1usize;
    for _ in 0..n {
        size = size
            .checked_mul(alphabet_size)
            .filter(|&s| s <= ENUMERATION_LIMIT)
            .ok_or(Error::SizeGuard {
                what: "word enumeration",
                size: usize::MAX,
                limit: ENUMERATION_LIMIT,
            })?;
    }
    Ok(size)
}

/// All `p^n(w)` in lexicographic word order, zero-mass words included.
pub fn enumerate_distribution(chain: &LabeledMarkovChain, n: usize) -> Result<WordDistribution> {
    if n < 1 {
        return Err(Error::InvalidHorizon);
    }
    let k = chain.alphabet().len();
    let size = k.checked_pow(n as u32).unwrap_or(usize::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard {
            what: "word enumeration",
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut probs = vec![0.0; size];
    // Lexicographic DFS: index of `wa` is `index(w) * k + a`.
    let mut stack: Vec<(usize, usize, crate::chain::ForwardState)> = chain
        .roots()
        .into_iter()
        .enumerate()
        .rev()
        .map(|(a, fs)| (1, a, fs))
        .collect();
    while let Some((depth, index, fs)) = stack.pop() {
        if depth == n {
            probs[index] = fs.prefix_prob;
            continue;
        }
        if fs.prefix_prob == 0.0 {
            continue;
        }
        for (a, child) in chain.successors(&fs).into_iter().enumerate().rev() {
            stack.push((depth + 1, index * k + a, child));
        }
    }
    Ok(WordDistribution {
        horizon: n,
        alphabet_size: k,
        probs,
    })
}

/// Joint distribution over word pairs with prescribed marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    size: usize,
    horizon: usize,
    alphabet_size: usize,
    plan: Vec<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl Coupling {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.size + j]
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    /// Largest violation of nonnegativity and the marginal constraints.
    pub fn feasibility_residual(&self) -> f64 {
        let m = self.size;
        let mut worst = 0.0f64;
        for i in 0..m {
            let row: f64 = (0..m).map(|j| self.get(i, j)).sum();
            worst = worst.max((row - self.row_marginal[i]).abs());
        }
        for j in 0..m {
            let col: f64 = (0..m).map(|i| self.get(i, j)).sum();
            worst = worst.max((col - self.col_marginal[j]).abs());
        }
        for &v in &self.plan {
            worst = worst.max(-v);
        }
        worst
    }

    pub fn cost(&self, params: CantorParams) -> f64 {
        let m = self.size;
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let v = self.get(i, j);
                if v != 0.0 {
                    total += v * index_distance(params, i, j, self.alphabet_size, self.horizon);
                }
            }
        }
        total
    }
}

/// Cantor distance between the words at lexicographic indices `i` and `j`.
fn index_distance(params: CantorParams, i: usize, j: usize, k: usize, n: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    // 1-based position of the most significant differing base-k digit.
    let (mut a, mut b) = (i, j);
    let mut first_mismatch = 0usize;
    let mut pos = n;
    while a != b {
        if a % k != b % k {
            first_mismatch = pos;
        }
        a /= k;
        b /= k;
        pos -= 1;
    }
    params.weight(first_mismatch)
}

/// Minimum-cost coupling of `p` and `q` under the Cantor distance, solved exactly.
pub fn exact_kantorovich(p: &WordDistribution, q: &WordDistribution) -> Result<(f64, Coupling)> {
    exact_kantorovich_with(CantorParams::default(), p, q)
}

pub fn exact_kantorovich_with(
    params: CantorParams,
    p: &WordDistribution,
    q: &WordDistribution,
) -> Result<(f64, Coupling)> {
    if p.horizon != q.horizon || p.alphabet_size != q.alphabet_size {
        return Err(Error::Shape("distributions over different word sets".into()));
    }
    let m = p.len();
    let entries = m.saturating_mul(m);
    if entries >= TRANSPORT_LIMIT {
        return Err(Error::SizeGuard {
            what: "transport cost matrix",
            size: entries,
            limit: TRANSPORT_LIMIT,
        });
    }
    let gap = p.probs.iter().sum::<f64>() - q.probs.iter().sum::<f64>();
    if gap.abs() > COUPLING_TOLERANCE {
        return Err(Error::MassMismatch(gap));
    }
    let (k, n) = (p.alphabet_size, p.horizon);
    let cost: Vec<f64> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| index_distance(params, i, j, k, n))
        .collect();
    let plan = successive_shortest_paths(&p.probs, &q.probs, &cost);
    let coupling = Coupling {
        size: m,
        horizon: n,
        alphabet_size: k,
        plan,
        row_marginal: p.probs.clone(),
        col_marginal: q.probs.clone(),
    };
    let value = coupling.cost(params);
    Ok((value, coupling))
}

const FLOW_EPS: f64 = 1e-15;

/// Balanced transportation by successive shortest paths.
///
/// Nodes `0..m` are sources, `m..2m` sinks. Source-to-sink arcs are
/// uncapacitated; sink-to-source residual arcs exist where flow is positive.
/// Node potentials keep reduced costs nonnegative so Dijkstra applies.
fn successive_shortest_paths(supply: &[f64], demand: &[f64], cost: &[f64]) -> Vec<f64> {
    let m = supply.len();
    let mut supply = supply.to_vec();
    let mut demand = demand.to_vec();
    let mut plan = vec![0.0; m * m];
    let mut potential = vec![0.0; 2 * m];
    let mut dist = vec![f64::INFINITY; 2 * m];
    let mut prev = vec![usize::MAX; 2 * m];
    let mut done = vec![false; 2 * m];

    loop {
        if supply.iter().all(|&s| s <= FLOW_EPS) || demand.iter().all(|&d| d <= FLOW_EPS) {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for i in 0..m {
            if supply[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..2 * m {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < m {
                let i = u;
                for j in 0..m {
                    let v = m + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[i * m + j] + potential[i] - potential[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if done[i] || plan[i * m + j] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (-cost[i * m + j] + potential[u] - potential[i]).max(0.0);
                    if dist[u] + rc < dist[i] {
                        dist[i] = dist[u] + rc;
                        prev[i] = u;
                    }
                }
            }
        }

        let target = (0..m)
            .filter(|&j| demand[j] > FLOW_EPS && dist[m + j].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(tj) = target else { break };
        let t = m + tj;
        let cap = dist[t];
        for v in 0..2 * m {
            potential[v] += dist[v].min(cap);
        }

        // Bottleneck along the path back to a source.
        let mut amount = demand[tj];
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= m {
                // backward arc sink u -> source v cancels flow on (v, u - m)
                amount = amount.min(plan[v * m + (u - m)]);
            }
            v = u;
        }
        let source = v;
        amount = amount.min(supply[source]);

        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < m {
                plan[u * m + (v - m)] += amount;
            } else {
                let cell = &mut plan[v * m + (u - m)];
                *cell -= amount;
                if *cell <= FLOW_EPS {
                    *cell = 0.0;
                }
            }
            v = u;
        }
        supply[source] -= amount;
        demand[tj] -= amount;
        if supply[source] <= FLOW_EPS {
            supply[source] = 0.0;
        }
        if demand[tj] <= FLOW_EPS {
            demand[tj] = 0.0;
        }
    }
    plan
}

/// Violations found by a coupling check; empty means the property holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LemmaReport {
    pub violations: Vec<LemmaViolation>,
}

impl LemmaReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaViolation {
    pub word: Word,
    pub expected: f64,
    pub observed: f64,
    pub what: &'static str,
}

/// Checks that the optimal coupling keeps `min(p(w), q(w))` on every diagonal cell.
pub fn check_lemma_diagonal(coupling: &Coupling) -> LemmaReport {
    let mut report = LemmaReport::default();
    for i in 0..coupling.size {
        let expected = coupling.row_marginal[i].min(coupling.col_marginal[i]);
        let observed = coupling.get(i, i);
        if (expected - observed).abs() > COUPLING_TOLERANCE {
            report.violations.push(LemmaViolation {
                word: word_of(i, coupling.alphabet_size, coupling.horizon),
                expected,
                observed,
                what: "diagonal",
            });
        }
    }
    report
}

fn word_of(mut index: usize, k: usize, n: usize) -> Word {
    let mut symbols = vec![0; n];
    for slot in symbols.iter_mut().rev() {
        *slot = index % k;
        index /= k;
    }
    Word::new(symbols)
}

/// Mass leaving and entering the block of words extending `w`, excluding the
/// block-diagonal part, for every length-n prefix `w`.
pub fn cross_block_flows(coupling: &Coupling) -> Result<Vec<(f64, f64)>> {
    if coupling.horizon < 2 {
        return Err(Error::InvalidHorizon);
    }
    let k = coupling.alphabet_size;
    let blocks = coupling.size / k;
    let mut flows = vec![(0.0, 0.0); blocks];
    for i in 0..coupling.size {
        for j in 0..coupling.size {
            let v = coupling.get(i, j);
            if v == 0.0 || i / k == j / k {
                continue;
            }
            flows[i / k].0 += v;
            flows[j / k].1 += v;
        }
    }
    Ok(flows)
}

/// Checks the cross-block flow identities of an optimal coupling at horizon
/// `n + 1` against its length-n marginals: a prefix with surplus only sends
/// mass out of its block (exactly the surplus) and receives none, and
/// symmetrically for a prefix with deficit.
pub fn check_lemma_blockflow(
    coupling: &Coupling,
    p_n: &WordDistribution,
    q_n: &WordDistribution,
) -> Result<LemmaReport> {
    if p_n.horizon + 1 != coupling.horizon
        || q_n.horizon != p_n.horizon
        || p_n.alphabet_size != coupling.alphabet_size
    {
        return Err(Error::Shape(format!(
            "coupling at horizon {} needs marginals at horizon {}",
            coupling.horizon,
            coupling.horizon.saturating_sub(1)
        )));
    }
    let flows = cross_block_flows(coupling)?;
    let mut report = LemmaReport::default();
    for (b, &(out, inc)) in flows.iter().enumerate() {
        let (p, q) = (p_n.probs[b], q_n.probs[b]);
        let (want_out, want_in) = if p > q { (p - q, 0.0) } else { (0.0, q - p) };
        let word = p_n.word_at(b);
        if (out - want_out).abs() > COUPLING_TOLERANCE {
            report.violations.push(LemmaViolation {
                word: word.clone(),
                expected: want_out,
                observed: out,
                what: "outgoing cross-block mass",
            });
        }
        if (inc - want_in).abs() > COUPLING_TOLERANCE {
            report.violations.push(LemmaViolation {
                word,
                expected: want_in,
                observed: inc,
                what: "incoming cross-block mass",
            });
        }
    }
    Ok(report)
}

/// `2^-(n+1) * sum_w [r(w) - sum_a r(wa)]` from explicit distributions at
/// horizons `n` and `n + 1`.
pub fn telescoping_increment(
    p_n: &WordDistribution,
    q_n: &WordDistribution,
    p_next: &WordDistribution,
    q_next: &WordDistribution,
) -> Result<f64> {
    let k = p_n.alphabet_size;
    if p_next.horizon != p_n.horizon + 1 || q_next.horizon != p_next.horizon || q_n.horizon != p_n.horizon {
        return Err(Error::InvalidHorizon);
    }
    let mut total = 0.0;
    for w in 0..p_n.len() {
        let r = p_n.probs[w].min(q_n.probs[w]);
        let children: f64 = (0..k)
            .map(|a| p_next.probs[w * k + a].min(q_next.probs[w * k + a]))
            .sum();
        total += r - children;
    }
    Ok(0.5f64.powi(p_next.horizon as i32) * total)
}
