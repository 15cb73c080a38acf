use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbpp_core::scenario::{
    build_complete_tree, nonanticipativity_pairs, prefix_agreement, realize_next, Indistinguishability, MarkovSelector,
    ProbRule, ScenarioTree,
};

fn bases_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, usize)> {
    (1usize..=3, 1usize..=5, 1usize..=3).prop_flat_map(|(n, horizon, period)| {
        let base = prop::collection::vec((0u8..3).prop_map(f64::from), horizon);
        (prop::collection::vec(base, n), Just(horizon), Just(period))
    })
}

fn markov_rule(n: usize, stay: f64, previous: Option<usize>) -> ProbRule {
    let switch = if n == 1 { 0.0 } else { (1.0 - stay) / (n as f64 - 1.0) };
    ProbRule::Markov { stay, switch, previous: previous.map(|p| p % n) }
}

/// Leaves that agree on `0..=h`, grouped by linking every pair directly.
fn all_pairs_classes(tree: &ScenarioTree, h: usize) -> Vec<usize> {
    let n = tree.num_leaves();
    (0..n).map(|a| (0..=a).find(|&b| tree.leaves[a].dg_bound[..=h] == tree.leaves[b].dg_bound[..=h]).unwrap()).collect()
}

/// The same classes from the chained links, closed by repeated relaxation.
fn chained_classes(tree: &ScenarioTree, h: usize) -> Vec<usize> {
    let mut label: Vec<usize> = (0..tree.num_leaves()).collect();
    let links: Vec<_> = nonanticipativity_pairs(tree).into_iter().filter(|p| p.h_max >= h).collect();
    loop {
        let mut changed = false;
        for p in &links {
            let m = label[p.a].min(label[p.b]);
            if label[p.a] != m || label[p.b] != m {
                label[p.a] = m;
                label[p.b] = m;
                changed = true;
            }
        }
        if !changed {
            return label;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_sum_to_one((bases, horizon, period) in bases_strategy(), stay in 0.0f64..=1.0, prev in prop::option::of(0usize..3)) {
        let n = bases.len();
        for rule in [ProbRule::Uniform, markov_rule(n, stay, prev)] {
            let tree = build_complete_tree(bases.clone(), period, horizon, rule).unwrap();
            let total: f64 = tree.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(tree.probabilities.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn leaves_are_stagewise_concatenations((bases, horizon, period) in bases_strategy()) {
        let tree = build_complete_tree(bases.clone(), period, horizon, ProbRule::Uniform).unwrap();
        let depth = horizon.div_ceil(period);
        prop_assert_eq!(tree.num_leaves(), bases.len().pow(depth as u32));
        for leaf in &tree.leaves {
            prop_assert_eq!(leaf.stage_choices.len(), depth);
            for h in 0..horizon {
                prop_assert_eq!(leaf.dg_bound[h], bases[leaf.stage_choices[h / period]][h]);
            }
        }
    }

    #[test]
    fn chained_links_match_all_pairs((bases, horizon, period) in bases_strategy()) {
        let tree = build_complete_tree(bases, period, horizon, ProbRule::Uniform).unwrap();
        let pairs = nonanticipativity_pairs(&tree);
        prop_assert!(pairs.len() < tree.num_leaves().max(1));
        for h in 0..horizon {
            let direct = all_pairs_classes(&tree, h);
            let chained = chained_classes(&tree, h);
            for a in 0..tree.num_leaves() {
                for b in 0..tree.num_leaves() {
                    prop_assert_eq!(direct[a] == direct[b], chained[a] == chained[b]);
                }
            }
        }
    }

    #[test]
    fn prefix_agreement_is_symmetric(a in prop::collection::vec(0u8..2, 1..6), b in prop::collection::vec(0u8..2, 1..6)) {
        let n = a.len().min(b.len());
        let a: Vec<f64> = a[..n].iter().map(|&v| f64::from(v)).collect();
        let b: Vec<f64> = b[..n].iter().map(|&v| f64::from(v)).collect();
        let ab = prefix_agreement(&a, &b);
        prop_assert_eq!(ab, prefix_agreement(&b, &a));
        let shared = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
        let expected = match shared {
            s if s == n => Indistinguishability::Identical,
            0 => Indistinguishability::Never,
            s => Indistinguishability::UpTo(s - 1),
        };
        prop_assert_eq!(ab, expected);
    }
}

#[test]
fn markov_leaf_probability_staying_twice() {
    let bases = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
    let tree = build_complete_tree(bases, 1, 2, ProbRule::Markov { stay: 0.4, switch: 0.3, previous: None }).unwrap();
    assert_eq!(tree.num_leaves(), 9);
    let stay_first = tree.leaves.iter().position(|l| l.stage_choices == [0, 0]).unwrap();
    assert!((tree.probabilities[stay_first] - 0.4 / 3.0).abs() < 1e-15);
    let switch = tree.leaves.iter().position(|l| l.stage_choices == [0, 2]).unwrap();
    assert!((tree.probabilities[switch] - 0.3 / 3.0).abs() < 1e-15);
}

#[test]
fn empty_bases_are_rejected() {
    assert!(build_complete_tree(Vec::new(), 1, 2, ProbRule::Uniform).is_err());
    assert!(build_complete_tree(vec![vec![1.0, -1.0]], 1, 2, ProbRule::Uniform).is_err());
}

#[test]
fn realized_frequencies_follow_the_chain() {
    let sel = MarkovSelector { stay_prob: 0.4, switch_prob: 0.3 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 60_000;
    let stays = (0..draws).filter(|_| realize_next(&sel, Some(1), 3, &mut rng) == 1).count();
    let freq = stays as f64 / draws as f64;
    // Binomial standard deviation is about 0.002.
    assert!((freq - 0.4).abs() < 0.01, "stay frequency {freq}");
}

#[test]
fn tree_json_round_trip() {
    let tree = build_complete_tree(
        vec![vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]],
        2,
        3,
        ProbRule::Markov { stay: 0.6, switch: 0.4, previous: Some(1) },
    )
    .unwrap();
    let text = serde_json::to_string(&tree).unwrap();
    let back: ScenarioTree = serde_json::from_str(&text).unwrap();
    assert_eq!(back, tree);
}
