//! Randomized invariants: things that must hold for *every* valid input,
//! checked over generated datasets, policies, and rewards.

use proptest::prelude::*;

use rlft_core::checkpoint::{self, ModelCheckpoint};
use rlft_core::domain::{
    load_demo_set, load_pref_set, save_demo_set, save_pref_set, Continuation, DemoPair, DemoSet,
    PrefSet, PrefTriple, Prompt, Vocab,
};
use rlft_core::evaluation::log_prob_gap;
use rlft_core::numerics::{log_softmax, logsumexp, softmax};
use rlft_core::policy::{PolicyModel, TabularPolicy};
use rlft_core::reward::{induced_policy, implicit_reward, Beta, TabularReward};
use rlft_core::tabular::single_token_index;
use rlft_core::{ParamVector, Rng};

fn small_index(
    vocab_size: usize,
    n_prompts: usize,
) -> std::sync::Arc<rlft_core::tabular::TabularIndex> {
    single_token_index(Vocab::with_size(vocab_size).unwrap(), n_prompts).unwrap()
}

/// (vocab_size, n_prompts, per-item (prompt, continuation) token picks).
/// Single-token prompts must be distinct, so `n_prompts <= vocab_size`.
fn dataset_shape() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize)>)> {
    (2usize..=5)
        .prop_flat_map(|v| (Just(v), 1..=v.min(3)))
        .prop_flat_map(|(v, p)| {
            let items = prop::collection::vec((0..p, 0..v), 1..20);
            (Just(v), Just(p), items)
        })
}

fn demo_set_from(v: usize, p: usize, picks: &[(usize, usize)]) -> DemoSet {
    let index = small_index(v, p);
    let items = picks
        .iter()
        .map(|&(pi, ci)| DemoPair {
            prompt: index.prompts()[pi].clone(),
            continuation: index.row(pi)[ci].clone(),
        })
        .collect();
    DemoSet::new(index.vocab().clone(), items).unwrap()
}

proptest! {
    #[test]
    fn demo_sets_round_trip_through_jsonl((v, p, picks) in dataset_shape()) {
        let demos = demo_set_from(v, p, &picks);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demo_set(&demos, &path).unwrap();
        let back = load_demo_set(&path).unwrap();
        prop_assert_eq!(back.items(), demos.items());
        prop_assert_eq!(back.vocab(), demos.vocab());
    }

    #[test]
    fn pref_sets_round_trip_through_jsonl(
        (v, p, picks) in dataset_shape(),
        offsets in prop::collection::vec(0usize..4, 1..20),
    ) {
        // Rejected = chosen shifted by an offset in 1..v, so pairs stay distinct.
        let index = small_index(v, p);
        let items: Vec<PrefTriple> = picks
            .iter()
            .zip(offsets.iter().cycle())
            .map(|(&(pi, ci), &o)| PrefTriple {
                prompt: index.prompts()[pi].clone(),
                chosen: index.row(pi)[ci].clone(),
                rejected: index.row(pi)[(ci + 1 + o % (v - 1)) % v].clone(),
            })
            .collect();
        let prefs = PrefSet::new(index.vocab().clone(), items).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        save_pref_set(&prefs, &path).unwrap();
        let back = load_pref_set(&path).unwrap();
        prop_assert_eq!(back.items(), prefs.items());
    }

    #[test]
    fn gap_is_exactly_antisymmetric_under_pair_swap(
        logits in prop::collection::vec(-3.0f64..3.0, 6),
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..12),
    ) {
        let index = small_index(3, 2);
        let policy =
            TabularPolicy::from_params(index.clone(), ParamVector::new(logits).unwrap()).unwrap();
        let make = |swap: bool| {
            let items = pairs
                .iter()
                .filter(|(a, b)| a != b)
                .map(|&(a, b)| {
                    let (c, r) = if swap { (b, a) } else { (a, b) };
                    PrefTriple {
                        prompt: index.prompts()[0].clone(),
                        chosen: index.row(0)[c].clone(),
                        rejected: index.row(0)[r].clone(),
                    }
                })
                .collect::<Vec<_>>();
            items
        };
        let forward = make(false);
        prop_assume!(!forward.is_empty());
        let forward = PrefSet::new(index.vocab().clone(), forward).unwrap();
        let swapped = PrefSet::new(index.vocab().clone(), make(true)).unwrap();
        let a = log_prob_gap(&policy, &forward).unwrap();
        let b = log_prob_gap(&policy, &swapped).unwrap();
        for (x, y) in a.gaps.iter().zip(&b.gaps) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn induced_policy_rows_stay_normalized_and_score_identity_holds(
        cells in prop::collection::vec(-4.0f64..4.0, 8),
        beta in 0.2f64..4.0,
    ) {
        let index = small_index(4, 2);
        let reference = TabularPolicy::uniform(index.clone());
        let reward = TabularReward::from_params(
            index.clone(),
            ParamVector::new(cells).unwrap(),
            None,
        )
        .unwrap();
        let beta = Beta::new(beta).unwrap();
        let induced = induced_policy(&reward, &reference, beta).unwrap();
        for i in 0..index.n_prompts() {
            let total: f64 = induced.row_probs(i).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            // Implicit-reward differences recover explicit-reward differences
            // within each prompt (the per-prompt constant cancels).
            let prompt = &index.prompts()[i];
            let row = index.row(i);
            let base_implicit = implicit_reward(&induced, &reference, beta, prompt, &row[0]).unwrap();
            let base_explicit = rlft_core::reward::RewardModel::value(&reward, prompt, &row[0]).unwrap();
            for y in row {
                let imp = implicit_reward(&induced, &reference, beta, prompt, y).unwrap();
                let exp = rlft_core::reward::RewardModel::value(&reward, prompt, y).unwrap();
                prop_assert!(((imp - base_implicit) - (exp - base_explicit)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn logsumexp_is_shift_invariant_and_softmax_normalizes(
        xs in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let a = logsumexp(&xs);
        let b = logsumexp(&shifted);
        prop_assert!((b - (a + shift)).abs() < 1e-9, "{b} vs {}", a + shift);
        let probs = softmax(&xs);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let logs = log_softmax(&xs);
        for (p, l) in probs.iter().zip(&logs) {
            prop_assert!((p.ln() - l).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoints_round_trip_any_tabular_policy(
        logits in prop::collection::vec(-6.0f64..6.0, 6),
    ) {
        let index = small_index(3, 2);
        let policy =
            TabularPolicy::from_params(index, ParamVector::new(logits).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        checkpoint::save_to_path(&ModelCheckpoint::TabularPolicy(policy.clone()), &path).unwrap();
        let back = checkpoint::load_from_path(&path).unwrap();
        match back {
            ModelCheckpoint::TabularPolicy(q) => {
                prop_assert_eq!(q.params(), policy.params());
                prop_assert_eq!(q.index(), policy.index());
            }
            other => prop_assert!(false, "wrong family {}", other.family()),
        }
    }

    #[test]
    fn child_streams_never_collide(seed in any::<u64>(), a in 0u64..64, b in 0u64..64) {
        prop_assume!(a != b);
        let root = Rng::seed(seed);
        let mut left = root.child(a);
        let mut right = root.child(b);
        let l: Vec<f64> = (0..4).map(|_| left.next_f64()).collect();
        let r: Vec<f64> = (0..4).map(|_| right.next_f64()).collect();
        prop_assert_ne!(l, r);
    }
}

#[test]
fn datasets_with_unusual_labels_survive_the_trip() {
    let vocab = Vocab::new(vec![
        "comma,label".to_string(),
        "space label".to_string(),
        "γράμμα".to_string(),
    ])
    .unwrap();
    let items = vec![DemoPair {
        prompt: Prompt::empty(),
        continuation: Continuation::new(vec![2]).unwrap(),
    }];
    let demos = DemoSet::new(vocab, items).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.jsonl");
    save_demo_set(&demos, &path).unwrap();
    let back = load_demo_set(&path).unwrap();
    assert_eq!(back.vocab(), demos.vocab());
    assert_eq!(back.items(), demos.items());
}
