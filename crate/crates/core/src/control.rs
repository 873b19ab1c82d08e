//! Controlled systems `x_{k+1} = F(actuate(x_k, u_k))`, per-action abstractions
//! on a fixed partition, value iteration, and Monte Carlo evaluation of the
//! resulting feedback controller on the concrete system.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Word, STOCHASTIC_TOLERANCE};
use crate::dynsys::{benchmark_system, AdaptivePartition, DynamicalSystem, PiecewiseAffineSystem, SampleCloud};
use crate::error::{Error, Result};
use crate::refine::{refine, RefinementConfig, RefinementTrace};

/// Label whose states earn reward 1.
pub const REWARD_LABEL: usize = 0;
pub const VALUE_TOLERANCE: f64 = 1e-8;

/// A base system with additive actuation `x̃ = clamp(x + direction * u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledSystem<S> {
    base: S,
    actions: Vec<f64>,
    direction: Vec<f64>,
}

impl ControlledSystem<PiecewiseAffineSystem> {
    /// The benchmark with inputs `{0, 1/4, 1/2}` acting on the second coordinate.
    pub fn benchmark() -> Self {
        Self::new(benchmark_system(), vec![0.0, 0.25, 0.5], vec![0.0, 1.0]).expect("valid benchmark")
    }
}

impl<S: DynamicalSystem> ControlledSystem<S> {
    pub fn new(base: S, actions: Vec<f64>, direction: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("at least one action is required".into()));
        }
        if actions.iter().chain(&direction).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("actions and direction must be finite".into()));
        }
        if direction.len() != base.space().dim() {
            return Err(Error::Shape(format!(
                "actuation direction has dimension {}, state space {}",
                direction.len(),
                base.space().dim()
            )));
        }
        Ok(Self { base, actions, direction })
    }

    pub fn base(&self) -> &S {
        &self.base
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// `x + direction * u`, clamped into the state space.
    pub fn actuate(&self, x: &[f64], u: f64, out: &mut [f64]) {
        for ((o, xi), d) in out.iter_mut().zip(x).zip(&self.direction) {
            *o = xi + d * u;
        }
        self.base.space().clamp(out);
    }

    /// `F(actuate(x, u))`.
    pub fn step(&self, x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        let mut tilde = vec![0.0; x.len()];
        self.actuate(x, u, &mut tilde);
        self.base.step(&tilde, out)
    }

    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.base.output(x)? == REWARD_LABEL { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractMdp {
    words: Vec<Word>,
    actions: Vec<f64>,
    /// `transitions[a][i][j]`.
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<f64>,
    gamma: f64,
}

impl AbstractMdp {
    pub fn new(
        words: Vec<Word>,
        actions: Vec<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount must lie in [0,1), got {gamma}")));
        }
        let n = words.len();
        if n == 0 || actions.is_empty() {
            return Err(Error::Shape("MDP needs at least one state and one action".into()));
        }
        if transitions.len() != actions.len() || rewards.len() != n {
            return Err(Error::Shape("MDP tables disagree with state or action count".into()));
        }
        for (a, matrix) in transitions.iter().enumerate() {
            if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                return Err(Error::Shape(format!("transition matrix of action {a} is not {n}x{n}")));
            }
            for (i, row) in matrix.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                    return Err(Error::InvalidChain(format!(
                        "action {a}, state {i}: row sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self {
            words,
            actions,
            transitions,
            rewards,
            gamma,
        })
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn transitions(&self, action: usize) -> &[Vec<f64>] {
        &self.transitions[action]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.words.len()
    }

    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(
            self.words.clone(),
            self.actions.clone(),
            self.transitions.clone(),
            rewards,
            self.gamma,
        )
    }

    /// `r(i) + γ Σ_j P_a(i, j) V(j)`.
    pub fn q_value(&self, values: &[f64], state: usize, action: usize) -> f64 {
        let row = &self.transitions[action][state];
        let future: f64 = row.iter().zip(values).map(|(p, v)| p * v).sum();
        self.rewards[state] + self.gamma * future
    }
}

/// Per-action abstractions of `csys` on `partition`, estimated on a seeded
/// uniform cloud: `P_u(w1, w2)` is the fraction of cloud points in `[w1]`
/// whose actuated successor lies in `[w2]`. Words no point falls in are dropped.
pub fn build_mdp<S: DynamicalSystem>(
    csys: &ControlledSystem<S>,
    partition: &AdaptivePartition,
    samples: usize,
    seed: u64,
    gamma: f64,
) -> Result<AbstractMdp> {
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let sys = csys.base();
    let cloud = SampleCloud::uniform(sys.space(), samples, seed);
    let n_actions = csys.actions().len();
    let located: Vec<(usize, Vec<usize>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let x = cloud.point(i);
            let mut buf = Vec::new();
            let mut next = vec![0.0; x.len()];
            let from = partition.locate(sys, x, &mut buf)?;
            let to = csys
                .actions()
                .iter()
                .map(|&u| {
                    csys.step(x, u, &mut next)?;
                    partition.locate(sys, &next, &mut buf)
                })
                .collect::<Result<_>>()?;
            Ok((from, to))
        })
        .collect::<Result<_>>()?;

    let m = partition.len();
    let mut counts = vec![vec![vec![0u64; m]; m]; n_actions];
    let mut hits = vec![0u64; m];
    for (from, to) in &located {
        hits[*from] += 1;
        for (a, &j) in to.iter().enumerate() {
            counts[a][*from][j] += 1;
        }
    }

    let kept: Vec<usize> = (0..m).filter(|&i| hits[i] > 0).collect();
    let mut index = vec![None; m];
    for (k, &i) in kept.iter().enumerate() {
        index[i] = Some(k);
    }
    let mut transitions = vec![vec![vec![0.0; kept.len()]; kept.len()]; n_actions];
    for a in 0..n_actions {
        for (k, &i) in kept.iter().enumerate() {
            for j in 0..m {
                let c = counts[a][i][j];
                if c == 0 {
                    continue;
                }
                let Some(l) = index[j] else {
                    return Err(Error::Covering {
                        point: Vec::new(),
                        reason: format!(
                            "action {} sends mass into {}, which holds no sample",
                            csys.actions()[a],
                            partition.words()[j]
                        ),
                    });
                };
                transitions[a][k][l] = c as f64 / hits[i] as f64;
            }
        }
    }
    let words: Vec<Word> = kept.iter().map(|&i| partition.words()[i].clone()).collect();
    let rewards = words
        .iter()
        .map(|w| if w.first() == Some(REWARD_LABEL) { 1.0 } else { 0.0 })
        .collect();
    AbstractMdp::new(words, csys.actions().to_vec(), transitions, rewards, gamma)
}

/// Greedy feedback law on partition words, stored as action indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    words: Vec<Word>,
    actions: Vec<f64>,
    choice: Vec<usize>,
}

impl Policy {
    pub fn new(words: Vec<Word>, actions: Vec<f64>, choice: Vec<usize>) -> Result<Self> {
        if words.len() != choice.len() || choice.iter().any(|&a| a >= actions.len()) {
            return Err(Error::Shape("policy must pick one valid action per word".into()));
        }
        let partition = AdaptivePartition::new(words.clone())?;
        if partition.words() != words.as_slice() {
            return Err(Error::InvalidPartition("policy words must be sorted".into()));
        }
        Ok(Self { words, actions, choice })
    }

    pub fn constant(words: Vec<Word>, actions: Vec<f64>, action: usize) -> Result<Self> {
        let choice = vec![action; words.len()];
        Self::new(words, actions, choice)
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn choice(&self) -> &[usize] {
        &self.choice
    }

    pub fn action_index(&self, state: usize) -> usize {
        self.choice[state]
    }

    pub fn action(&self, state: usize) -> f64 {
        self.actions[self.choice[state]]
    }

    pub fn partition(&self) -> AdaptivePartition {
        AdaptivePartition::new(self.words.clone()).expect("validated on construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    pub policy: Policy,
    pub sweeps: usize,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
}

/// Bellman sweeps until the sup-norm change drops below `tol`, then the greedy
/// policy with ties going to the lowest action index.
pub fn value_iteration(mdp: &AbstractMdp, tol: f64) -> Result<ValueSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.n_states();
    let mut values = vec![0.0; n];
    let mut sweeps = 0;
    let residual = loop {
        let next: Vec<f64> = (0..n)
            .map(|i| {
                (0..mdp.actions.len())
                    .map(|a| mdp.q_value(&values, i, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        sweeps += 1;
        if change < tol {
            break change;
        }
    };
    let choice = (0..n).map(|i| greedy_action(mdp, &values, i)).collect();
    let policy = Policy::new(mdp.words.clone(), mdp.actions.clone(), choice)?;
    Ok(ValueSolution {
        values,
        policy,
        sweeps,
        residual,
    })
}

fn greedy_action(mdp: &AbstractMdp, values: &[f64], state: usize) -> usize {
    let q: Vec<f64> = (0..mdp.actions.len()).map(|a| mdp.q_value(values, state, a)).collect();
    let mut best = 0;
    for a in 1..q.len() {
        if q[a] > q[best] + 1e-12 * q[best].abs().max(1.0) {
            best = a;
        }
    }
    best
}

/// Exponent of the discount on the first sampled state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountOrigin {
    /// `Σ_{k=1}^{L} γ^k r(x_k)`.
    #[default]
    One,
    /// `Σ_{k=1}^{L} γ^(k-1) r(x_k)`.
    Zero,
}

impl DiscountOrigin {
    pub fn describe(self) -> &'static str {
        match self {
            Self::One => "sum_{k=1}^{L} gamma^k r(x_k)",
            Self::Zero => "sum_{k=1}^{L} gamma^(k-1) r(x_k)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub gamma: f64,
    pub trajectories: usize,
    pub length: usize,
    pub seed: u64,
    pub origin: DiscountOrigin,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            trajectories: 5000,
            length: 1000,
            seed: 0,
            origin: DiscountOrigin::One,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trajectories: usize,
    pub length: usize,
    pub convention: String,
}

/// Closed-loop Monte Carlo estimate of the discounted reward of `policy`
/// from uniformly sampled initial states.
pub fn evaluate_policy<S: DynamicalSystem>(
    csys: &ControlledSystem<S>,
    policy: &Policy,
    config: &EvaluationConfig,
) -> Result<RewardEstimate> {
    if !(0.0..1.0).contains(&config.gamma) {
        return Err(Error::InvalidArgument(format!("discount must lie in [0,1), got {}", config.gamma)));
    }
    if config.trajectories < 2 {
        return Err(Error::InvalidArgument("at least two trajectories are required".into()));
    }
    if policy.actions.len() != csys.actions().len() {
        return Err(Error::Shape("policy and system disagree on the action set".into()));
    }
    let partition = policy.partition();
    let space = csys.base().space();

    let returns: Vec<f64> = (0..config.trajectories)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut x: Vec<f64> = space
                .lower
                .iter()
                .zip(&space.upper)
                .map(|(&l, &u)| rng.gen_range(l..u))
                .collect();
            let mut next = vec![0.0; x.len()];
            let mut buf = Vec::new();
            let mut weight = match config.origin {
                DiscountOrigin::One => config.gamma,
                DiscountOrigin::Zero => 1.0,
            };
            let mut total = 0.0;
            for _ in 0..config.length {
                total += weight * csys.reward(&x)?;
                let state = partition.locate(csys.base(), &x, &mut buf)?;
                csys.step(&x, policy.action(state), &mut next)?;
                std::mem::swap(&mut x, &mut next);
                weight *= config.gamma;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;

    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RewardEstimate {
        mean,
        std_error: (var / n).sqrt(),
        trajectories: config.trajectories,
        length: config.length,
        convention: config.origin.describe().into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub refinement: RefinementConfig,
    pub evaluation: EvaluationConfig,
    /// Cloud size for the per-action transition estimates.
    pub mdp_samples: usize,
    pub tolerance: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            refinement: RefinementConfig::default(),
            evaluation: EvaluationConfig::default(),
            mdp_samples: 1_000_000,
            tolerance: VALUE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub iteration: usize,
    pub partition: Vec<String>,
    /// `(word, action)` pairs.
    pub policy: Vec<(String, f64)>,
    pub values: Vec<f64>,
    pub reward: RewardEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlStudy {
    pub config: StudyConfig,
    pub trace: RefinementTrace,
    pub rows: Vec<StudyRow>,
    pub monotone: bool,
}

/// `later` is no worse than `earlier` up to two pooled standard errors.
pub fn non_decreasing_within(earlier: &RewardEstimate, later: &RewardEstimate, z: f64) -> bool {
    let pooled = (earlier.std_error.powi(2) + later.std_error.powi(2)).sqrt();
    later.mean >= earlier.mean - z * pooled
}

/// Refines the base system, then synthesizes and evaluates a controller on
/// the partition of every iteration.
pub fn control_study(
    csys: &ControlledSystem<PiecewiseAffineSystem>,
    config: &StudyConfig,
) -> Result<ControlStudy> {
    let (_, trace) = refine(csys.base(), &config.refinement)?;
    let alphabet = csys.base().alphabet();
    let mut rows = Vec::with_capacity(trace.iterations.len());
    for record in &trace.iterations {
        let words = record
            .partition
            .iter()
            .map(|w| alphabet.parse_word(w))
            .collect::<Result<Vec<_>>>()?;
        let partition = AdaptivePartition::new(words)?;
        let seed = config.evaluation.seed.wrapping_add(record.iteration as u64);
        let mdp = build_mdp(csys, &partition, config.mdp_samples, seed, config.evaluation.gamma)?;
        let solution = value_iteration(&mdp, config.tolerance)?;
        let reward = evaluate_policy(csys, &solution.policy, &config.evaluation)?;
        let policy = (0..mdp.n_states())
            .map(|i| (alphabet.render(&mdp.words()[i]), solution.policy.action(i)))
            .collect();
        rows.push(StudyRow {
            iteration: record.iteration,
            partition: record.partition.clone(),
            policy,
            values: solution.values,
            reward,
        });
    }
    let monotone = rows
        .windows(2)
        .all(|p| non_decreasing_within(&p[0].reward, &p[1].reward, 2.0));
    Ok(ControlStudy {
        config: *config,
        trace,
        rows,
        monotone,
    })
}

impl ControlStudy {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "iter  reward     std_err   policy").unwrap();
        for row in &self.rows {
            let policy: Vec<String> = row.policy.iter().map(|(w, u)| format!("{w}:{u}")).collect();
            writeln!(
                out,
                "{:<4}  {:<9.4}  {:<8.4}  {}",
                row.iteration,
                row.reward.mean,
                row.reward.std_error,
                policy.join(" ")
            )
            .unwrap();
        }
        let e = &self.config.evaluation;
        writeln!(
            out,
            "reward = {}, gamma = {}, {} trajectories x {} steps, seed {}",
            e.origin.describe(),
            e.gamma,
            e.trajectories,
            e.length,
            e.seed
        )
        .unwrap();
        writeln!(
            out,
            "non-decreasing within 2 pooled standard errors: {}",
            if self.monotone { "yes" } else { "no" }
        )
        .unwrap();
        out
    }
}
