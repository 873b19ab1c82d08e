use kantab_core::oracle::{enumerate_distribution, exact_kantorovich};
use kantab_core::{cantor_distance, kant_metric, Alphabet, LabeledMarkovChain, Word};
use proptest::prelude::*;

fn normalize(weights: Vec<u32>, bump: usize) -> Vec<f64> {
    let mut w = weights;
    let len = w.len();
    w[bump % len] += 1;
    let s: u32 = w.iter().sum();
    w.into_iter().map(|x| x as f64 / s as f64).collect()
}

/// Chain with small-integer weights, so zero transitions and unreachable words occur.
fn chain(states: usize, k: usize) -> impl Strategy<Value = LabeledMarkovChain> {
    let row = (prop::collection::vec(0u32..4, states), any::<usize>()).prop_map(|(w, b)| normalize(w, b));
    (
        row.clone(),
        prop::collection::vec(row, states),
        prop::collection::vec(0..k, states),
    )
        .prop_map(move |(initial, rows, labels)| {
            LabeledMarkovChain::new_validated(rows, initial, labels, Alphabet::numeric(k)).unwrap()
        })
}

fn pair(max_states: usize, max_k: usize) -> impl Strategy<Value = (LabeledMarkovChain, LabeledMarkovChain)> {
    (1..=max_states, 1..=max_states, 1..=max_k)
        .prop_flat_map(|(s1, s2, k)| (chain(s1, k), chain(s2, k)))
}

fn triple() -> impl Strategy<Value = [LabeledMarkovChain; 3]> {
    (1..=3usize, 1..=3usize, 1..=3usize, 2..=3usize)
        .prop_flat_map(|(a, b, c, k)| (chain(a, k), chain(b, k), chain(c, k)))
        .prop_map(|(x, y, z)| [x, y, z])
}

fn words(len: usize) -> impl Strategy<Value = (Word, Word, Word)> {
    let w = move || prop::collection::vec(0..3usize, len).prop_map(Word::new);
    (w(), w(), w())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cantor_is_an_ultrametric((u, v, w) in (1..8usize).prop_flat_map(words)) {
        let d = |a: &Word, b: &Word| cantor_distance(a, b).unwrap();
        prop_assert!(d(&u, &w) <= d(&u, &v).max(d(&v, &w)));
        prop_assert_eq!(d(&u, &v), d(&v, &u));
        prop_assert_eq!(d(&u, &u), 0.0);
        prop_assert_eq!(d(&u, &v) == 0.0, u == v);
    }

    #[test]
    fn kant_metric_axioms(cs in triple(), n in 1..5usize) {
        let k = |a: &LabeledMarkovChain, b: &LabeledMarkovChain| kant_metric(a, b, n).unwrap().value;
        let [a, b, c] = &cs;
        prop_assert!(k(a, a).abs() <= 1e-15);
        prop_assert!(k(a, b) >= -1e-15);
        prop_assert!((k(a, b) - k(b, a)).abs() <= 1e-12);
        prop_assert!(k(a, c) <= k(a, b) + k(b, c) + 1e-12);
        prop_assert!(k(a, b) <= 0.5 + 1e-15);
    }

    #[test]
    fn horizon_sandwich((a, b) in pair(4, 3), n in 1..7usize) {
        let lo = kant_metric(&a, &b, n).unwrap();
        let hi = kant_metric(&a, &b, n + 1).unwrap();
        let step = hi.value - lo.value;
        prop_assert!(step >= -1e-12, "{step}");
        prop_assert!(step <= 0.5f64.powi(n as i32 + 1) + 1e-12, "{step}");
        prop_assert!(hi.value <= lo.upper_bound + 1e-12);
        prop_assert_eq!(&hi.levels[..n], &lo.levels[..]);
    }

    #[test]
    fn levels_sum_to_value((a, b) in pair(4, 3), n in 1..7usize) {
        let r = kant_metric(&a, &b, n).unwrap();
        prop_assert_eq!(r.levels.len(), n);
        prop_assert!(r.levels.iter().all(|&l| l >= -1e-15));
        prop_assert_eq!(r.levels.iter().sum::<f64>(), r.value);
    }

    #[test]
    fn recursion_matches_transport((a, b) in pair(3, 3), n in 1..4usize) {
        let fast = kant_metric(&a, &b, n).unwrap().value;
        let p = enumerate_distribution(&a, n).unwrap();
        let q = enumerate_distribution(&b, n).unwrap();
        let (exact, coupling) = exact_kantorovich(&p, &q).unwrap();
        prop_assert!((fast - exact).abs() <= 1e-9, "{fast} vs {exact}");
        prop_assert!(coupling.feasibility_residual() <= 1e-9);
    }

    #[test]
    fn word_probabilities_telescope(c in (1..=4usize, 1..=3usize).prop_flat_map(|(s, k)| chain(s, k)),
                                    prefix in prop::collection::vec(0..3usize, 0..5)) {
        let k = c.alphabet().len();
        let w = Word::new(prefix.into_iter().map(|a| a % k).collect());
        let parent = if w.is_empty() { 1.0 } else { c.word_probability(&w).unwrap() };
        let children: f64 = (0..k).map(|a| c.word_probability(&w.pushed(a)).unwrap()).sum();
        prop_assert!((parent - children).abs() <= 1e-12);
    }
}
