//! Independent oracles for the metric and scoring code.

mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use psychoprobe_core::inventory::{Inventory, Item, ResponseScale};
use psychoprobe_core::metrics::{dimension_f1, edit_distance, normalized_aed, option_score_mae, target_score_mae};

/// Levenshtein distance by plain exhaustive recursion.
fn ed_exhaustive(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((ha, ta)), Some((hb, tb))) => {
            let sub = ed_exhaustive(ta, tb) + usize::from(ha != hb);
            let del = ed_exhaustive(ta, b) + 1;
            let ins = ed_exhaustive(a, tb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Same recursion, memoized, for strings too long to enumerate.
fn ed_memo(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = (go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]))
            .min(go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

#[test]
fn kitten_sitting_by_exhaustive_recursion() {
    let oracle = ed_exhaustive(&chars("kitten"), &chars("sitting"));
    assert_eq!(oracle, 3);
    assert_eq!(edit_distance("kitten", "sitting"), oracle);
}

#[test]
fn every_pair_up_to_length_four_over_two_symbols() {
    let mut words = vec![String::new()];
    for len in 1..=4 {
        let mut next = Vec::new();
        for w in words.iter().filter(|w| w.len() == len - 1) {
            next.push(format!("{w}a"));
            next.push(format!("{w}b"));
        }
        words.extend(next);
    }
    for a in &words {
        for b in &words {
            assert_eq!(
                edit_distance(a, b),
                ed_exhaustive(&chars(a), &chars(b)),
                "{a:?} vs {b:?}"
            );
        }
    }
}

fn short() -> impl Strategy<Value = String> {
    "[abcd]{0,8}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_exhaustive_oracle(a in short(), b in short()) {
        prop_assert_eq!(edit_distance(&a, &b), ed_exhaustive(&chars(&a), &chars(&b)));
    }

    #[test]
    fn is_a_metric(a in short(), b in short(), c in short()) {
        let ab = edit_distance(&a, &b);
        prop_assert_eq!(ab, edit_distance(&b, &a));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
    }

    #[test]
    fn unicode_matches_memo_oracle(a in "[aé日\u{1F600}]{0,12}", b in "[aé日\u{1F600}]{0,12}") {
        prop_assert_eq!(edit_distance(&a, &b), ed_memo(&chars(&a), &chars(&b)));
    }

    #[test]
    fn aed_invariant_under_joint_permutation(
        pairs in prop::collection::vec(("[a-e]{1,10}", "[a-e]{0,10}"), 1..8),
        seed in any::<u64>(),
    ) {
        let items: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let outs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        let base = normalized_aed(&items, &outs).unwrap();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let items_p: Vec<&str> = order.iter().map(|&i| items[i]).collect();
        let outs_p: Vec<&str> = order.iter().map(|&i| outs[i]).collect();
        let permuted = normalized_aed(&items_p, &outs_p).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_matches_confusion_matrix_scorer(
        rows in prop::collection::vec((0usize..3, prop::option::of(0usize..3)), 1..30),
    ) {
        let dims: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let golds: Vec<&str> = rows.iter().map(|r| dims[r.0].as_str()).collect();
        let preds: Vec<Option<&str>> = rows.iter().map(|r| r.1.map(|p| dims[p].as_str())).collect();
        let f1 = dimension_f1(&golds, &preds, &dims).unwrap();
        // Confusion matrix with an extra column for "no prediction".
        let mut cm = [[0usize; 4]; 3];
        for (g, p) in &rows {
            cm[*g][p.unwrap_or(3)] += 1;
        }
        let mut total = 0.0;
        for (d, row) in cm.iter().enumerate() {
            let tp = row[d] as f64;
            let fp = cm.iter().enumerate().filter(|&(g, _)| g != d).map(|(_, r)| r[d]).sum::<usize>() as f64;
            let fn_ = row.iter().enumerate().filter(|&(p, _)| p != d).map(|(_, n)| n).sum::<usize>() as f64;
            total += if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        }
        prop_assert!((f1 - total / 3.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn maes_are_zero_iff_predictions_equal_gold(
        gold in prop::collection::vec(prop::collection::vec(1i64..6, 5), 1..6),
        noise in prop::collection::vec(prop::collection::vec(-2i64..3, 5), 6),
    ) {
        let preds: Vec<Vec<i64>> = gold.iter().zip(&noise).map(|(g, n)| g.iter().zip(n).map(|(a, b)| a + b).collect()).collect();
        let refs: Vec<Option<&[i64]>> = preds.iter().map(|p| Some(p.as_slice())).collect();
        let m = option_score_mae(&gold, &refs).unwrap().value.unwrap();
        prop_assert_eq!(m == 0.0, preds == gold);

        let targets: Vec<i64> = gold.iter().map(|g| g[0]).collect();
        let achieved: Vec<Option<i64>> = preds.iter().map(|p| Some(p[0])).collect();
        let t = target_score_mae(&targets, &achieved).unwrap().value.unwrap();
        prop_assert_eq!(t == 0.0, targets.iter().zip(&achieved).all(|(t, a)| Some(*t) == *a));
    }
}

#[test]
fn thousand_random_pairs_match_oracle_quickly() {
    // Deterministic xorshift so the sample is reproducible.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let word = |next: &mut dyn FnMut() -> u64| {
        let len = (next() % 9) as usize;
        (0..len)
            .map(|_| ['a', 'b', 'c', 'd'][(next() % 4) as usize])
            .collect::<String>()
    };
    let start = std::time::Instant::now();
    for _ in 0..1000 {
        let a = word(&mut next);
        let b = word(&mut next);
        assert_eq!(
            edit_distance(&a, &b),
            ed_exhaustive(&chars(&a), &chars(&b)),
            "{a:?} vs {b:?}"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn aed_hand_fixtures() {
    // ED("abcd", "abcf") = 1 by the oracle, mean length 4.
    assert_eq!(ed_exhaustive(&chars("abcd"), &chars("abcf")), 1);
    assert!((normalized_aed(&["abcd"], &["abcf"]).unwrap() - 0.25).abs() < 1e-12);
    // ED(x, "") = |x|; lengths 2 and 6, mean length 4.
    assert!((normalized_aed(&["ab", "abcdef"], &["", ""]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn f1_equals_accuracy_for_balanced_relabel_free_errors() {
    // Two dimensions with equal support; one swap in each direction.
    let dims: Vec<String> = ["A", "B"].map(String::from).to_vec();
    let golds = ["A", "A", "A", "A", "B", "B", "B", "B"];
    let preds = [
        Some("A"),
        Some("A"),
        Some("A"),
        Some("B"),
        Some("B"),
        Some("B"),
        Some("B"),
        Some("A"),
    ];
    let f1 = dimension_f1(&golds, &preds, &dims).unwrap();
    let accuracy = 6.0 / 8.0;
    assert!((f1 - accuracy).abs() < 1e-12);
}

fn scale(min: i64, max: i64) -> ResponseScale {
    ResponseScale {
        id: "s".into(),
        options: (min..=max).map(|i| format!("option {i}")).collect(),
        min_score: min,
        max_score: max,
    }
}

fn bare_item(reverse: bool) -> Item {
    Item {
        index: 1,
        text: "x".into(),
        dimension: Some("D".into()),
        reverse_coded: reverse,
        scale_id: "s".into(),
        keyword: None,
        attention_check: false,
    }
}

proptest! {
    #[test]
    fn option_scores_are_a_permutation_of_the_range(min in 1i64..4, width in 1i64..9, reverse in any::<bool>()) {
        let s = scale(min, min + width - 1);
        let mut row = bare_item(reverse).score_row(&s);
        row.sort_unstable();
        prop_assert_eq!(row, (min..min + width).collect::<Vec<_>>());
    }

    #[test]
    fn reversal_applied_twice_is_identity(min in 1i64..4, width in 1i64..9) {
        let s = scale(min, min + width - 1);
        let rev = bare_item(true);
        let fwd = bare_item(false);
        for rank in 1..=s.option_count() {
            let score = rev.option_score(&s, rank).unwrap();
            // Rank whose forward score equals the reversed score, reversed again.
            let back = fwd.rank_for_score(&s, score).unwrap();
            prop_assert_eq!(rev.option_score(&s, back).unwrap(), fwd.option_score(&s, rank).unwrap());
        }
    }

    #[test]
    fn unmasking_restores_text(prefix in "[a-z ]{0,20}", keyword in "[A-Z][a-z]{1,8}", suffix in "[a-z .]{0,20}") {
        let mut item = bare_item(false);
        item.text = format!("{prefix}{keyword}{suffix}");
        item.keyword = Some(keyword.clone());
        let masked = item.masked_text().unwrap();
        prop_assert_eq!(masked.replacen("[MASK]", &keyword, 1), item.text);
    }
}

#[test]
fn load_serialize_reload_is_idempotent() {
    for inv in [common::toy(), common::mfq_shaped()] {
        let again = Inventory::from_json(inv.to_json_pretty().as_bytes()).unwrap();
        assert_eq!(*inv, again);
    }
}

/// Brute-force expectation for a reverse-coding-blind model on the toy
/// inventory, computed straight from the JSON file by enumerating every
/// option of every item.
#[test]
fn scale_naive_expectations_by_enumeration() {
    let raw: serde_json::Value =
        serde_json::from_slice(&std::fs::read(common::fixture("toy_inventory.json")).unwrap()).unwrap();
    let scale = &raw["scales"][0];
    let (lo, hi) = (
        scale["min_score"].as_i64().unwrap(),
        scale["max_score"].as_i64().unwrap(),
    );
    let n_options = scale["options"].as_array().unwrap().len() as i64;
    let mut option_abs = 0i64;
    let mut option_cells = 0i64;
    let mut target_abs = 0i64;
    let mut target_probes = 0i64;
    for item in raw["items"].as_array().unwrap() {
        let reverse = item["reverse_coded"].as_bool().unwrap();
        let truth = |r: i64| if reverse { hi - (r - 1) } else { lo + (r - 1) };
        let naive = |r: i64| lo + (r - 1);
        for r in 1..=n_options {
            option_abs += (truth(r) - naive(r)).abs();
            option_cells += 1;
        }
        let mean = if (lo + hi) % 2 == 0 {
            (lo + hi) / 2
        } else {
            (lo + hi) / 2 + 1
        };
        for target in [lo, mean, hi] {
            let chosen = (1..=n_options).find(|&r| naive(r) == target).unwrap();
            target_abs += (target - truth(chosen)).abs();
            target_probes += 1;
        }
    }
    let option_mae = option_abs as f64 / option_cells as f64;
    let target_mae = target_abs as f64 / target_probes as f64;
    assert_eq!((option_abs, option_cells), (24, 20));
    assert_eq!((target_abs, target_probes), (16, 12));
    assert!((option_mae - 1.2).abs() < 1e-9);
    assert!((target_mae - 4.0 / 3.0).abs() < 1e-9);
}

#[test]
fn refusal_distance_via_memo_oracle() {
    let inv = common::toy();
    let refusal = chars("I can't reproduce that content.");
    let total: usize = inv.items.iter().map(|i| ed_memo(&chars(&i.text), &refusal)).sum();
    let dp_total: usize = inv
        .items
        .iter()
        .map(|i| edit_distance(&i.text, "I can't reproduce that content."))
        .sum();
    assert_eq!(total, dp_total);
}
