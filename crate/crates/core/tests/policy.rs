mod common;

use common::*;
use fogas::policy::{policy_update_step, softmax_from_logit_param};
use fogas::{ActionDistribution, DMatrix, DVector, FeatureMap, LinearMdp, SoftmaxPolicy};
use proptest::prelude::*;

#[test]
fn ten_cumulative_steps_match_multiplicative_updates() {
    let mut r = rng(21);
    let mdp = LinearMdp::generate(6, 4, 3, 0.9, 2).unwrap();
    let fm = mdp.features();
    let alpha = 0.3;
    let mut cumulative = SoftmaxPolicy::uniform(3);
    let mut table = DMatrix::from_element(6, 4, 0.25);
    for _ in 0..10 {
        let theta = random_vec(&mut r, 3, 2.0);
        cumulative = policy_update_step(&cumulative, &theta, alpha);
        for x in 0..6 {
            let mut row: Vec<f64> = (0..4).map(|a| table[(x, a)] * (alpha * fm.dot(x, a, &theta)).exp()).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
            for a in 0..4 {
                table[(x, a)] = row[a];
            }
        }
    }
    let got = cumulative.materialize(fm);
    assert!((got.probs() - &table).amax() < 1e-12);
}

#[test]
fn two_actions_log_two_gives_two_thirds() {
    let fm = FeatureMap::new(1, 2, DMatrix::identity(2, 2)).unwrap();
    let p = softmax_from_logit_param(&fm, DVector::from_vec(vec![2f64.ln(), 0.0])).unwrap();
    let t = p.materialize(&fm);
    assert!((t.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
    assert!((t.prob(0, 1) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn non_finite_or_misshaped_param_rejected() {
    let fm = FeatureMap::new(1, 2, DMatrix::identity(2, 2)).unwrap();
    assert!(softmax_from_logit_param(&fm, DVector::from_vec(vec![f64::NAN, 0.0])).is_err());
    assert!(softmax_from_logit_param(&fm, DVector::from_vec(vec![0.0])).is_err());
}

proptest! {
    #[test]
    fn rows_are_distributions(seed in 0u64..1000, w in prop::collection::vec(-50.0f64..50.0, 3)) {
        let mdp = LinearMdp::generate(4, 3, 3, 0.9, seed).unwrap();
        let pi = SoftmaxPolicy::new(DVector::from_vec(w)).unwrap();
        let view = pi.view(mdp.features());
        let mut p = [0.0; 3];
        for x in 0..4 {
            view.fill_probs(x, &mut p);
            prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_feature_component_does_not_move_policy(
        base in prop::collection::vec(-1.0f64..1.0, 6),
        w in prop::collection::vec(-3.0f64..3.0, 2),
        c in -20.0f64..20.0,
    ) {
        // third feature is 1 for every pair, so its weight shifts all logits of a state equally
        let phi = DMatrix::from_fn(6, 3, |i, j| if j == 2 { 1.0 } else { base[2 * (i / 2) + j] * (1.0 + (i % 2) as f64) });
        let fm = FeatureMap::new(3, 2, phi).unwrap();
        let a = SoftmaxPolicy::new(DVector::from_vec(vec![w[0], w[1], 0.0])).unwrap().materialize(&fm);
        let b = SoftmaxPolicy::new(DVector::from_vec(vec![w[0], w[1], c])).unwrap().materialize(&fm);
        prop_assert!((a.probs() - b.probs()).amax() < 1e-12);
    }

    #[test]
    fn zero_step_leaves_policy_unchanged(w in prop::collection::vec(-5.0f64..5.0, 3), alpha in 0.0f64..2.0) {
        let pi = SoftmaxPolicy::new(DVector::from_vec(w)).unwrap();
        prop_assert_eq!(policy_update_step(&pi, &DVector::zeros(3), alpha), pi);
    }
}
