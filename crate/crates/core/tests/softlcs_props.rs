mod common;

use common::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use trajprog::softlcs::classic_lcs_len;
use trajprog::{Action, Matcher};

fn seqs(max: usize) -> impl Strategy<Value = (Vec<Action>, Vec<Action>)> {
    (
        prop::collection::vec(any_action(), 0..=max),
        prop::collection::vec(any_action(), 0..=max),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_optimum((a, b) in seqs(7)) {
        let m = Matcher::default();
        let fast = m.soft_lcs(&a, &b);
        let slow = brute_force_soft_lcs(&a, &b);
        prop_assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn soft_match_agrees_with_reference(a in any_action(), b in any_action()) {
        let m = Matcher::default();
        prop_assert!((m.soft_match(&a, &b) - match_value(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn discrete_sequences_reduce_to_classic_lcs(
        a in prop::collection::vec(discrete_action(), 0..30),
        b in prop::collection::vec(discrete_action(), 0..30),
    ) {
        let m = Matcher::default();
        let expected = reference_lcs(&a, &b);
        prop_assert_eq!(classic_lcs_len(&a, &b), expected);
        prop_assert_eq!(m.soft_lcs(&a, &b), expected as f64);
    }

    #[test]
    fn symmetric_and_bounded((a, b) in seqs(10)) {
        let m = Matcher::default();
        let ab = m.soft_lcs(&a, &b);
        prop_assert!((ab - m.soft_lcs(&b, &a)).abs() < 1e-9);
        prop_assert!(ab >= 0.0 && ab <= a.len().min(b.len()) as f64 + 1e-12);
        let s = m.sequence_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn appending_never_lowers_the_score((a, b) in seqs(10), extra in any_action()) {
        let m = Matcher::default();
        let mut longer = a.clone();
        longer.push(extra.clone());
        prop_assert!(m.soft_lcs(&longer, &b) >= m.soft_lcs(&a, &b) - 1e-12);
        let mut front = vec![extra];
        front.extend(a.iter().cloned());
        prop_assert!(m.soft_lcs(&front, &b) >= m.soft_lcs(&a, &b) - 1e-12);
    }

    #[test]
    fn alignment_is_consistent((a, b) in seqs(12)) {
        let m = Matcher::default();
        let al = m.align(&a, &b);
        prop_assert!((al.score - m.soft_lcs(&a, &b)).abs() < 1e-9);
        for w in al.pairs.windows(2) {
            prop_assert!(w[0].i < w[1].i && w[0].j < w[1].j);
        }
        for p in &al.pairs {
            prop_assert!(p.contribution > 0.0);
            prop_assert_eq!(p.contribution, m.soft_match(&a[p.i], &b[p.j]));
        }
    }

    #[test]
    fn self_similarity_is_one(a in prop::collection::vec(discrete_action(), 1..15)) {
        let m = Matcher::default();
        prop_assert_eq!(m.sequence_similarity(&a, &a), 1.0);
    }

    #[test]
    fn fold_result_is_a_subsequence_of_the_first(
        seqs in prop::collection::vec(prop::collection::vec(discrete_action(), 1..12), 1..5)
    ) {
        let m = Matcher::default();
        let folded = m.fold_lcs(&seqs);
        prop_assert_eq!(classic_lcs_len(&folded, &seqs[0]), folded.len());
        for s in &seqs {
            prop_assert!(folded.len() <= s.len());
        }
    }
}

#[test]
fn planted_core_is_recovered_exactly() {
    let core: Vec<Action> = (100..106).map(Action::click).collect();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let gap_sizes = prop::collection::vec(0usize..3, core.len() + 1);
    let noise_kind = prop::collection::vec(0u8..3, 3 * (core.len() + 1));
    for n_seqs in [3, 4] {
        for _ in 0..50 {
            let mut seqs = Vec::new();
            for s_idx in 0..n_seqs {
                let gaps = gap_sizes.new_tree(&mut runner).unwrap().current();
                let kinds = noise_kind.new_tree(&mut runner).unwrap().current();
                let mut fresh = (s_idx as u64 + 1) * 1000;
                let mut s = Vec::new();
                let mut kinds = kinds.into_iter();
                for (k, g) in gaps.into_iter().enumerate() {
                    for _ in 0..g {
                        fresh += 1;
                        // Noise never occurs in another sequence.
                        s.push(match kinds.next().unwrap_or(0) {
                            0 => Action::click(fresh),
                            1 => Action::long_click(fresh),
                            _ => Action::input(fresh, format!("w{fresh}")),
                        });
                    }
                    if k < core.len() {
                        s.push(core[k].clone());
                    }
                }
                seqs.push(s);
            }
            assert_eq!(Matcher::default().fold_lcs(&seqs), core);
        }
    }
}
